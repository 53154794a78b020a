#!/usr/bin/env python3
"""Builds the toy ONNX graphs used by the C++ tests.

Every model exposes its tappable layers as graph outputs named tap/<index>/<name>.
For each valid model this also writes a manifest sidecar and a reference activation
blob computed with onnxruntime on a pinned input.

Usage: make_toy_graphs.py [output_dir]
"""

import json
import struct
import sys
from pathlib import Path

import numpy as np
import onnx
import onnxruntime as ort
from onnx import TensorProto, helper, numpy_helper

OPSET = 13


def const(name, array):
    return numpy_helper.from_array(np.asarray(array), name)


def weights(rng, *shape):
    return (rng.standard_normal(shape) * 0.3).astype(np.float32)


def build(name, nodes, inits, input_shape, taps, meta, input_name="image"):
    """taps: list of (value_name, shape_without_batch)."""
    inp = helper.make_tensor_value_info(input_name, TensorProto.FLOAT, ["N", *input_shape])
    outs = [helper.make_tensor_value_info(v, TensorProto.FLOAT, ["N", *s]) for v, s in taps]
    graph = helper.make_graph(nodes, name, [inp], outs, initializer=inits)
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", OPSET)],
                              producer_name="make_toy_graphs")
    model.ir_version = 8
    for k, v in meta.items():
        entry = model.metadata_props.add()
        entry.key, entry.value = k, str(v)
    onnx.checker.check_model(model)
    return model


def toy4(rng):
    inits = [
        const("w1", weights(rng, 4, 3, 3, 3)), const("b1", weights(rng, 4)),
        const("w2", weights(rng, 16, 4 * 16 * 16) * 0.1), const("b2", weights(rng, 16)),
    ]
    nodes = [
        helper.make_node("Conv", ["image", "w1", "b1"], ["tap/1/conv1"], pads=[1, 1, 1, 1], kernel_shape=[3, 3]),
        helper.make_node("Relu", ["tap/1/conv1"], ["tap/2/relu1"]),
        helper.make_node("MaxPool", ["tap/2/relu1"], ["tap/3/pool1"], kernel_shape=[2, 2], strides=[2, 2]),
        helper.make_node("Flatten", ["tap/3/pool1"], ["flat"], axis=1),
        helper.make_node("Gemm", ["flat", "w2", "b2"], ["tap/4/dense"], transB=1),
    ]
    taps = [("tap/1/conv1", [4, 32, 32]), ("tap/2/relu1", [4, 32, 32]),
            ("tap/3/pool1", [4, 16, 16]), ("tap/4/dense", [16])]
    meta = {"model_id": "toy4", "input_layout": "NCHW", "input_scale": 1 / 255, "input_offset": 0.0}
    return build("toy4", nodes, inits, [3, 32, 32], taps, meta), taps, meta, [3, 32, 32]


def mini_resnet(rng):
    inits = [
        const("stem_w", weights(rng, 8, 3, 3, 3)), const("stem_b", weights(rng, 8)),
        const("bn_scale", (1.0 + 0.2 * rng.standard_normal(8)).astype(np.float32)),
        const("bn_bias", weights(rng, 8)),
        const("bn_mean", weights(rng, 8)),
        const("bn_var", (0.5 + rng.random(8)).astype(np.float32)),
        const("clip_min", np.array(0.0, np.float32)), const("clip_max", np.array(6.0, np.float32)),
        const("dw_w", weights(rng, 8, 1, 3, 3)), const("dw_b", weights(rng, 8)),
        const("pw_w", weights(rng, 8, 8, 1, 1)),
        const("dil_w", weights(rng, 4, 8, 3, 3)), const("dil_b", weights(rng, 4)),
        const("fc_w", weights(rng, 12, 6)), const("fc_b", weights(rng, 6)),
    ]
    nodes = [
        helper.make_node("Conv", ["image", "stem_w", "stem_b"], ["tap/1/stem_conv"],
                         kernel_shape=[3, 3], strides=[2, 2], pads=[1, 1, 1, 1]),
        helper.make_node("BatchNormalization", ["tap/1/stem_conv", "bn_scale", "bn_bias", "bn_mean", "bn_var"],
                         ["tap/2/stem_bn"], epsilon=1e-3),
        helper.make_node("Clip", ["tap/2/stem_bn", "clip_min", "clip_max"], ["tap/3/stem_relu6"]),
        helper.make_node("Conv", ["tap/3/stem_relu6", "dw_w", "dw_b"], ["tap/4/dw_conv"],
                         kernel_shape=[3, 3], pads=[1, 1, 1, 1], group=8),
        helper.make_node("LeakyRelu", ["tap/4/dw_conv"], ["tap/5/dw_act"], alpha=0.1),
        helper.make_node("Conv", ["tap/5/dw_act", "pw_w"], ["tap/6/pw_conv"], kernel_shape=[1, 1]),
        helper.make_node("Add", ["tap/6/pw_conv", "tap/3/stem_relu6"], ["tap/7/add"]),
        helper.make_node("AveragePool", ["tap/7/add"], ["tap/8/avgpool"], kernel_shape=[3, 3], strides=[2, 2],
                         pads=[1, 1, 1, 1], count_include_pad=0),
        helper.make_node("Conv", ["tap/8/avgpool", "dil_w", "dil_b"], ["tap/9/dil_conv"],
                         kernel_shape=[3, 3], pads=[2, 2, 2, 2], dilations=[2, 2]),
        helper.make_node("Concat", ["tap/8/avgpool", "tap/9/dil_conv"], ["tap/10/concat"], axis=1),
        helper.make_node("Sigmoid", ["tap/10/concat"], ["tap/11/sigmoid"]),
        helper.make_node("GlobalAveragePool", ["tap/11/sigmoid"], ["tap/12/gap"]),
        helper.make_node("Flatten", ["tap/12/gap"], ["gap_flat"], axis=1),
        helper.make_node("MatMul", ["gap_flat", "fc_w"], ["fc_mm"]),
        helper.make_node("Add", ["fc_mm", "fc_b"], ["tap/13/fc"]),
        helper.make_node("Softmax", ["tap/13/fc"], ["tap/14/softmax"], axis=-1),
    ]
    taps = [
        ("tap/1/stem_conv", [8, 24, 24]), ("tap/2/stem_bn", [8, 24, 24]), ("tap/3/stem_relu6", [8, 24, 24]),
        ("tap/4/dw_conv", [8, 24, 24]), ("tap/5/dw_act", [8, 24, 24]), ("tap/6/pw_conv", [8, 24, 24]),
        ("tap/7/add", [8, 24, 24]), ("tap/8/avgpool", [8, 12, 12]), ("tap/9/dil_conv", [4, 12, 12]),
        ("tap/10/concat", [12, 12, 12]), ("tap/11/sigmoid", [12, 12, 12]), ("tap/12/gap", [12, 1, 1]),
        ("tap/13/fc", [6]), ("tap/14/softmax", [6]),
    ]
    meta = {"model_id": "mini_resnet", "input_layout": "NCHW", "input_scale": 1 / 127.5, "input_offset": -1.0}
    return build("mini_resnet", nodes, inits, [3, 48, 48], taps, meta), taps, meta, [3, 48, 48]


def nhwc_tiny(rng):
    inits = [
        const("w", weights(rng, 2, 3, 3, 3)), const("b", weights(rng, 2)),
        const("shape", np.array([-1, 2], np.int64)),
    ]
    nodes = [
        helper.make_node("Transpose", ["image"], ["nchw"], perm=[0, 3, 1, 2]),
        helper.make_node("Conv", ["nchw", "w", "b"], ["tap/1/conv"], kernel_shape=[3, 3], auto_pad="SAME_UPPER"),
        helper.make_node("Tanh", ["tap/1/conv"], ["tap/2/tanh"]),
        helper.make_node("GlobalMaxPool", ["tap/2/tanh"], ["tap/3/gmp"]),
        helper.make_node("Reshape", ["tap/3/gmp", "shape"], ["tap/4/vec"]),
    ]
    taps = [("tap/1/conv", [2, 16, 16]), ("tap/2/tanh", [2, 16, 16]), ("tap/3/gmp", [2, 1, 1]), ("tap/4/vec", [2])]
    meta = {"model_id": "nhwc_tiny", "input_layout": "NHWC", "input_scale": 1 / 255, "input_offset": 0.0}
    return build("nhwc_tiny", nodes, inits, [16, 16, 3], taps, meta), taps, meta, [16, 16, 3]


def manifest(meta, input_shape, taps):
    if meta["input_layout"] == "NCHW":
        c, h, w = input_shape
    else:
        h, w, c = input_shape
    layers = []
    for value, shape in taps:
        _, index, name = value.split("/", 2)
        layers.append({"index": int(index), "name": name, "output_shape": shape})
    return {
        "model_id": meta["model_id"], "input_shape": [h, w, c], "input_layout": meta["input_layout"],
        "input_scale": meta["input_scale"], "input_offset": meta["input_offset"],
        "total_layers": len(layers), "layers": layers,
    }


def write_reference(path, model, taps, input_shape, rng):
    """Blob: b"PSCACTV1", u64 header length, JSON header, then little-endian f32 arrays."""
    x = (rng.integers(0, 256, size=(2, *input_shape)).astype(np.float32) / 255.0 - 0.3).astype(np.float32)
    session = ort.InferenceSession(model.SerializeToString(), providers=["CPUExecutionProvider"])
    values = session.run([v for v, _ in taps], {"image": x})
    arrays = [("input", x)] + [(v, np.ascontiguousarray(a, np.float32)) for (v, _), a in zip(taps, values)]
    header, offset = {"entries": []}, 0
    for name, a in arrays:
        header["entries"].append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
    text = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(b"PSCACTV1")
        f.write(struct.pack("<Q", len(text)))
        f.write(text)
        for _, a in arrays:
            f.write(a.astype("<f4").tobytes())


def broken_models(out, rng):
    def save(name, nodes, inits, outputs):
        inp = helper.make_tensor_value_info("image", TensorProto.FLOAT, ["N", 3, 8, 8])
        outs = [helper.make_tensor_value_info(v, TensorProto.FLOAT, None) for v in outputs]
        model = helper.make_model(helper.make_graph(nodes, name, [inp], outs, initializer=inits),
                                  opset_imports=[helper.make_opsetid("", OPSET)])
        model.ir_version = 8
        onnx.save(model, out / f"{name}.onnx")

    w = const("w", weights(rng, 2, 3, 3, 3))
    save("gap_taps", [
        helper.make_node("Conv", ["image", "w"], ["tap/1/conv"], kernel_shape=[3, 3]),
        helper.make_node("Relu", ["tap/1/conv"], ["tap/3/relu"]),
    ], [w], ["tap/1/conv", "tap/3/relu"])
    save("no_taps", [helper.make_node("Relu", ["image"], ["y"])], [], ["y"])
    save("unsupported_op", [
        helper.make_node("Relu", ["image"], ["tap/1/relu"]),
        helper.make_node("LRN", ["tap/1/relu"], ["tap/2/lrn"], size=3),
    ], [], ["tap/1/relu", "tap/2/lrn"])


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent
    out.mkdir(parents=True, exist_ok=True)
    for seed, builder in enumerate([toy4, mini_resnet, nhwc_tiny]):
        rng = np.random.default_rng(1000 + seed)
        model, taps, meta, input_shape = builder(rng)
        model_id = meta["model_id"]
        onnx.save(model, out / f"{model_id}.onnx")
        with open(out / f"{model_id}.manifest.json", "w") as f:
            json.dump(manifest(meta, input_shape, taps), f, indent=1)
            f.write("\n")
        write_reference(out / f"{model_id}.ref.bin", model, taps, input_shape, rng)
    broken_models(out, np.random.default_rng(7))


if __name__ == "__main__":
    main()
