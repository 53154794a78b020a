#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include <Eigen/Core>

#include "graph.hpp"
#include "periscope/error.hpp"

namespace periscope::detail {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

[[noreturn]] void bad_node(const Node& node, const std::string& what) {
  fail(ErrorCode::shape_mismatch, node.describe() + ": " + what);
}

[[noreturn]] void unsupported(const Node& node, const std::string& what) {
  fail(ErrorCode::unsupported_operator, node.describe() + ": " + what);
}

std::int64_t normalize_axis(const Node& node, std::int64_t axis, std::int64_t rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) bad_node(node, "axis out of range");
  return axis;
}

const Shape& require(const Node& node, std::span<const Shape> inputs, std::size_t i) {
  if (i >= inputs.size() || node.inputs[i].empty()) bad_node(node, "missing input " + std::to_string(i));
  return inputs[i];
}

const Tensor& require(const Node& node, std::span<const Tensor* const> inputs, std::size_t i) {
  if (i >= inputs.size() || inputs[i] == nullptr) bad_node(node, "missing input " + std::to_string(i));
  return *inputs[i];
}

bool present(const Node& node, std::size_t i) { return i < node.inputs.size() && !node.inputs[i].empty(); }

/// Integer-valued input that must be a graph constant (shape, axes, pads).
std::vector<std::int64_t> constant_ints(const Node& node, std::size_t i, const Graph& graph) {
  const auto it = graph.int_constants.find(node.inputs[i]);
  if (it != graph.int_constants.end()) return it->second;
  const auto ft = graph.constants.find(node.inputs[i]);
  if (ft != graph.constants.end()) {
    std::vector<std::int64_t> out;
    for (float v : ft->second.data) out.push_back(static_cast<std::int64_t>(v));
    return out;
  }
  unsupported(node, "input '" + node.inputs[i] + "' must be a constant");
}

std::vector<std::int64_t> axes_of(const Node& node, const Graph& graph) {
  if (node.has("axes")) return node.attr_ints("axes");
  if (present(node, 1)) return constant_ints(node, 1, graph);
  return {};
}

// ---------------------------------------------------------------------------
// Broadcasting

Shape broadcast_shape(const Node& node, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      bad_node(node, "cannot broadcast " + shape_to_string(a) + " with " + shape_to_string(b));
    out[i] = da == 1 ? db : da;
  }
  return out;
}

std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::int64_t> strides(out.size(), 0);
  std::int64_t stride = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t i = in.size() - 1 - k;
    const std::size_t o = out.size() - 1 - k;
    strides[o] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  return strides;
}

template <typename Op>
Tensor broadcast_binary(const Node& node, const Tensor& a, const Tensor& b, Op op) {
  if (a.shape == b.shape) {
    Tensor out(a.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = op(a.data[i], b.data[i]);
    return out;
  }
  Tensor out(broadcast_shape(node, a.shape, b.shape));
  if (out.data.empty()) return out;
  const auto sa = broadcast_strides(a.shape, out.shape);
  const auto sb = broadcast_strides(b.shape, out.shape);
  const std::size_t rank = out.shape.size();
  if (rank == 0) {
    out.data[0] = op(a.data[0], b.data[0]);
    return out;
  }
  std::vector<std::int64_t> idx(rank, 0);
  const std::int64_t inner = out.shape.back();
  const std::int64_t ia_step = sa.back(), ib_step = sb.back();
  std::int64_t oa = 0, ob = 0;
  float* dst = out.data.data();
  const std::int64_t outer = out.size() / inner;
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t k = 0; k < inner; ++k) dst[k] = op(a.data[oa + k * ia_step], b.data[ob + k * ib_step]);
    dst += inner;
    // Advance the outer multi-index.
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out.shape[d]) break;
      oa -= sa[d] * idx[d];
      ob -= sb[d] * idx[d];
      idx[d] = 0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spatial geometry shared by convolution and pooling

struct Window2d {
  std::int64_t kernel_h, kernel_w;
  std::int64_t stride_h, stride_w;
  std::int64_t dilation_h, dilation_w;
  std::int64_t pad_top, pad_left, pad_bottom, pad_right;
  std::int64_t out_h, out_w;
};

Window2d window_geometry(const Node& node, const Shape& x, std::int64_t kernel_h, std::int64_t kernel_w,
                         bool ceil_mode) {
  if (x.size() != 4) unsupported(node, "only 2-D spatial inputs (rank 4) are supported");
  Window2d g{};
  g.kernel_h = kernel_h;
  g.kernel_w = kernel_w;
  const auto strides = node.attr_ints("strides", {1, 1});
  const auto dilations = node.attr_ints("dilations", {1, 1});
  if (strides.size() != 2 || dilations.size() != 2) unsupported(node, "expected 2-D strides/dilations");
  g.stride_h = strides[0];
  g.stride_w = strides[1];
  g.dilation_h = dilations[0];
  g.dilation_w = dilations[1];
  if (g.stride_h < 1 || g.stride_w < 1 || g.dilation_h < 1 || g.dilation_w < 1) bad_node(node, "bad stride/dilation");

  const std::int64_t h = x[2], w = x[3];
  const std::int64_t eff_h = (kernel_h - 1) * g.dilation_h + 1;
  const std::int64_t eff_w = (kernel_w - 1) * g.dilation_w + 1;
  const std::string auto_pad = node.attr_string("auto_pad", "NOTSET");
  if (auto_pad == "SAME_UPPER" || auto_pad == "SAME_LOWER") {
    const std::int64_t oh = (h + g.stride_h - 1) / g.stride_h, ow = (w + g.stride_w - 1) / g.stride_w;
    const std::int64_t th = std::max<std::int64_t>(0, (oh - 1) * g.stride_h + eff_h - h);
    const std::int64_t tw = std::max<std::int64_t>(0, (ow - 1) * g.stride_w + eff_w - w);
    const bool upper = auto_pad == "SAME_UPPER";
    g.pad_top = upper ? th / 2 : th - th / 2;
    g.pad_bottom = th - g.pad_top;
    g.pad_left = upper ? tw / 2 : tw - tw / 2;
    g.pad_right = tw - g.pad_left;
  } else if (auto_pad == "VALID") {
    g.pad_top = g.pad_left = g.pad_bottom = g.pad_right = 0;
  } else if (auto_pad == "NOTSET") {
    const auto pads = node.attr_ints("pads", {0, 0, 0, 0});
    if (pads.size() != 4) unsupported(node, "expected 4 pads");
    g.pad_top = pads[0];
    g.pad_left = pads[1];
    g.pad_bottom = pads[2];
    g.pad_right = pads[3];
  } else {
    unsupported(node, "auto_pad " + auto_pad);
  }

  auto out_dim = [&](std::int64_t in, std::int64_t pad_a, std::int64_t pad_b, std::int64_t eff, std::int64_t stride) {
    const std::int64_t span = in + pad_a + pad_b - eff;
    if (span < 0) bad_node(node, "window larger than padded input");
    std::int64_t out = (ceil_mode ? (span + stride - 1) / stride : span / stride) + 1;
    // A window must start inside the input or its leading pad.
    if (ceil_mode && (out - 1) * stride >= in + pad_a) --out;
    return out;
  };
  g.out_h = out_dim(h, g.pad_top, g.pad_bottom, eff_h, g.stride_h);
  g.out_w = out_dim(w, g.pad_left, g.pad_right, eff_w, g.stride_w);
  return g;
}

Window2d conv_geometry(const Node& node, const Shape& x, const Shape& weight) {
  if (weight.size() != 4) unsupported(node, "only 2-D convolution kernels are supported");
  const auto ks = node.attr_ints("kernel_shape", {weight[2], weight[3]});
  if (ks.size() != 2 || ks[0] != weight[2] || ks[1] != weight[3]) bad_node(node, "kernel_shape disagrees with weights");
  return window_geometry(node, x, weight[2], weight[3], false);
}

Window2d pool_geometry(const Node& node, const Shape& x) {
  const auto ks = node.attr_ints("kernel_shape");
  if (ks.size() != 2) unsupported(node, "only 2-D pooling is supported");
  return window_geometry(node, x, ks[0], ks[1], node.attr_int("ceil_mode", 0) != 0);
}

// ---------------------------------------------------------------------------
// Kernels

Tensor conv(const Node& node, const Tensor& x, const Tensor& w, const Tensor* bias) {
  const auto g = conv_geometry(node, x.shape, w.shape);
  const std::int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3];
  const std::int64_t m = w.shape[0];
  const std::int64_t groups = node.attr_int("group", 1);
  if (groups < 1 || c % groups != 0 || m % groups != 0 || w.shape[1] != c / groups)
    bad_node(node, "channel/group mismatch: input " + shape_to_string(x.shape) + ", weights " + shape_to_string(w.shape));
  if (bias && bias->size() != m) bad_node(node, "bias length mismatch");

  const std::int64_t cg = c / groups, mg = m / groups;
  const std::int64_t plane = g.out_h * g.out_w;
  const std::int64_t k = cg * g.kernel_h * g.kernel_w;
  Tensor out({n, m, g.out_h, g.out_w});

  const bool pointwise = g.kernel_h == 1 && g.kernel_w == 1 && g.stride_h == 1 && g.stride_w == 1 &&
                         g.pad_top == 0 && g.pad_left == 0 && g.pad_bottom == 0 && g.pad_right == 0;
  std::vector<float> cols(pointwise ? 0 : static_cast<std::size_t>(k * plane));

  for (std::int64_t s = 0; s < n; ++s) {
    for (std::int64_t grp = 0; grp < groups; ++grp) {
      const float* src = x.data.data() + (s * c + grp * cg) * h * wd;
      const float* col_ptr = src;
      if (!pointwise) {
        for (std::int64_t ch = 0; ch < cg; ++ch) {
          for (std::int64_t ki = 0; ki < g.kernel_h; ++ki) {
            for (std::int64_t kj = 0; kj < g.kernel_w; ++kj) {
              float* row = cols.data() + ((ch * g.kernel_h + ki) * g.kernel_w + kj) * plane;
              for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
                const std::int64_t iy = oy * g.stride_h - g.pad_top + ki * g.dilation_h;
                for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
                  const std::int64_t ix = ox * g.stride_w - g.pad_left + kj * g.dilation_w;
                  row[oy * g.out_w + ox] =
                      (iy < 0 || iy >= h || ix < 0 || ix >= wd) ? 0.f : src[(ch * h + iy) * wd + ix];
                }
              }
            }
          }
        }
        col_ptr = cols.data();
      }
      ConstRowMap weights(w.data.data() + grp * mg * k, mg, k);
      ConstRowMap columns(col_ptr, k, plane);
      RowMap dst(out.data.data() + (s * m + grp * mg) * plane, mg, plane);
      dst.noalias() = weights * columns;
    }
    if (bias) {
      for (std::int64_t oc = 0; oc < m; ++oc) {
        float* p = out.data.data() + (s * m + oc) * plane;
        const float b = bias->data[oc];
        for (std::int64_t i = 0; i < plane; ++i) p[i] += b;
      }
    }
  }
  return out;
}

Tensor max_pool(const Node& node, const Tensor& x) {
  const auto g = pool_geometry(node, x.shape);
  const std::int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  Tensor out({n, c, g.out_h, g.out_w});
  float* dst = out.data.data();
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const float* src = x.data.data() + plane * h * w;
    for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
      for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
        float best = -std::numeric_limits<float>::infinity();
        for (std::int64_t ki = 0; ki < g.kernel_h; ++ki) {
          const std::int64_t iy = oy * g.stride_h - g.pad_top + ki * g.dilation_h;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t kj = 0; kj < g.kernel_w; ++kj) {
            const std::int64_t ix = ox * g.stride_w - g.pad_left + kj * g.dilation_w;
            if (ix < 0 || ix >= w) continue;
            best = std::max(best, src[iy * w + ix]);
          }
        }
        *dst++ = best;
      }
    }
  }
  return out;
}

Tensor average_pool(const Node& node, const Tensor& x) {
  const auto g = pool_geometry(node, x.shape);
  const bool include_pad = node.attr_int("count_include_pad", 0) != 0;
  const std::int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  Tensor out({n, c, g.out_h, g.out_w});
  float* dst = out.data.data();
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const float* src = x.data.data() + plane * h * w;
    for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
      const std::int64_t y0 = oy * g.stride_h - g.pad_top;
      const std::int64_t y1 = std::min(y0 + g.kernel_h, h + g.pad_bottom);
      for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
        const std::int64_t x0 = ox * g.stride_w - g.pad_left;
        const std::int64_t x1 = std::min(x0 + g.kernel_w, w + g.pad_right);
        float sum = 0.f;
        std::int64_t count = 0;
        for (std::int64_t iy = std::max<std::int64_t>(y0, 0); iy < std::min(y1, h); ++iy)
          for (std::int64_t ix = std::max<std::int64_t>(x0, 0); ix < std::min(x1, w); ++ix) {
            sum += src[iy * w + ix];
            ++count;
          }
        const std::int64_t divisor = include_pad ? (y1 - y0) * (x1 - x0) : count;
        *dst++ = divisor > 0 ? sum / static_cast<float>(divisor) : 0.f;
      }
    }
  }
  return out;
}

Tensor global_pool(const Tensor& x, bool average) {
  const std::int64_t n = x.shape[0], c = x.shape[1];
  const std::int64_t plane = x.size() / std::max<std::int64_t>(n * c, 1);
  Shape shape{n, c};
  for (std::size_t i = 2; i < x.shape.size(); ++i) shape.push_back(1);
  Tensor out(shape);
  for (std::int64_t p = 0; p < n * c; ++p) {
    const float* src = x.data.data() + p * plane;
    if (average) {
      float sum = 0.f;
      for (std::int64_t i = 0; i < plane; ++i) sum += src[i];
      out.data[p] = sum / static_cast<float>(plane);
    } else {
      out.data[p] = *std::max_element(src, src + plane);
    }
  }
  return out;
}

Tensor batch_norm(const Node& node, const Tensor& x, const Tensor& scale, const Tensor& shift, const Tensor& mean,
                  const Tensor& var) {
  if (x.rank() < 2) bad_node(node, "input rank < 2");
  const std::int64_t n = x.shape[0], c = x.shape[1];
  if (scale.size() != c || shift.size() != c || mean.size() != c || var.size() != c)
    bad_node(node, "parameter length mismatch");
  const float eps = node.attr_float("epsilon", 1e-5f);
  const std::int64_t plane = x.size() / std::max<std::int64_t>(n * c, 1);
  Tensor out(x.shape);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const float a = scale.data[ch] / std::sqrt(var.data[ch] + eps);
    const float b = shift.data[ch] - mean.data[ch] * a;
    for (std::int64_t s = 0; s < n; ++s) {
      const float* src = x.data.data() + (s * c + ch) * plane;
      float* dst = out.data.data() + (s * c + ch) * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] * a + b;
    }
  }
  return out;
}

Tensor gemm(const Node& node, const Tensor& a, const Tensor& b, const Tensor* c) {
  if (a.rank() != 2 || b.rank() != 2) bad_node(node, "Gemm expects rank-2 operands");
  const bool ta = node.attr_int("transA", 0) != 0, tb = node.attr_int("transB", 0) != 0;
  const float alpha = node.attr_float("alpha", 1.f), beta = node.attr_float("beta", 1.f);
  const std::int64_t rows = ta ? a.shape[1] : a.shape[0];
  const std::int64_t inner = ta ? a.shape[0] : a.shape[1];
  const std::int64_t cols = tb ? b.shape[0] : b.shape[1];
  if ((tb ? b.shape[1] : b.shape[0]) != inner) bad_node(node, "inner dimensions differ");

  ConstRowMap bm(b.data.data(), b.shape[0], b.shape[1]);
  RowMatrix bt;
  if (tb) bt = bm.transpose();
  const RowMatrix& rhs_store = bt;
  ConstRowMap rhs(tb ? rhs_store.data() : b.data.data(), inner, cols);

  Tensor out({rows, cols});
  Tensor bias;
  if (c) {
    bias = broadcast_binary(node, Tensor(Shape{rows, cols}), *c, [](float, float v) { return v; });
  }
  // Row at a time so each sample's result does not depend on the batch size.
  Eigen::Matrix<float, 1, Eigen::Dynamic> row(inner);
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t k = 0; k < inner; ++k) row[k] = ta ? a.data[k * rows + r] : a.data[r * inner + k];
    Eigen::Map<Eigen::Matrix<float, 1, Eigen::Dynamic>> dst(out.data.data() + r * cols, cols);
    dst.noalias() = row * rhs;
    if (alpha != 1.f) dst *= alpha;
    if (c) {
      for (std::int64_t j = 0; j < cols; ++j) dst[j] += beta * bias.data[r * cols + j];
    }
  }
  return out;
}

Tensor matmul(const Node& node, const Tensor& a, const Tensor& b) {
  if (b.rank() != 2 || a.rank() < 2) unsupported(node, "MatMul supports (..., K) x (K, M) only");
  const std::int64_t inner = a.shape.back();
  if (b.shape[0] != inner) bad_node(node, "inner dimensions differ");
  const std::int64_t cols = b.shape[1];
  const std::int64_t rows = a.size() / std::max<std::int64_t>(inner, 1);
  Shape shape = a.shape;
  shape.back() = cols;
  Tensor out(shape);
  ConstRowMap rhs(b.data.data(), inner, cols);
  for (std::int64_t r = 0; r < rows; ++r) {
    Eigen::Map<const Eigen::Matrix<float, 1, Eigen::Dynamic>> lhs(a.data.data() + r * inner, inner);
    Eigen::Map<Eigen::Matrix<float, 1, Eigen::Dynamic>> dst(out.data.data() + r * cols, cols);
    dst.noalias() = lhs * rhs;
  }
  return out;
}

Tensor concat(const Node& node, std::span<const Tensor* const> inputs) {
  if (inputs.empty()) bad_node(node, "no inputs");
  const Tensor& first = require(node, inputs, 0);
  const std::int64_t axis = normalize_axis(node, node.attr_int("axis", 1), first.rank());
  Shape shape = first.shape;
  shape[axis] = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& t = require(node, inputs, i);
    if (t.rank() != first.rank()) bad_node(node, "rank mismatch");
    for (std::int64_t d = 0; d < t.rank(); ++d)
      if (d != axis && t.shape[d] != first.shape[d]) bad_node(node, "non-axis dims differ");
    shape[axis] += t.shape[axis];
  }
  Tensor out(shape);
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= shape[d];
  for (std::int64_t d = axis + 1; d < first.rank(); ++d) inner *= shape[d];
  float* dst = out.data.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (const Tensor* t : inputs) {
      const std::int64_t chunk = t->shape[axis] * inner;
      std::copy_n(t->data.data() + o * chunk, chunk, dst);
      dst += chunk;
    }
  }
  return out;
}

Tensor transpose(const Node& node, const Tensor& x) {
  const std::int64_t rank = x.rank();
  std::vector<std::int64_t> perm = node.attr_ints("perm");
  if (perm.empty()) {
    perm.resize(rank);
    for (std::int64_t i = 0; i < rank; ++i) perm[i] = rank - 1 - i;
  }
  if (static_cast<std::int64_t>(perm.size()) != rank) bad_node(node, "perm length mismatch");
  Shape shape(rank);
  std::vector<std::int64_t> in_strides(rank, 1);
  for (std::int64_t d = rank - 2; d >= 0; --d) in_strides[d] = in_strides[d + 1] * x.shape[d + 1];
  std::vector<std::int64_t> strides(rank);
  for (std::int64_t d = 0; d < rank; ++d) {
    shape[d] = x.shape[normalize_axis(node, perm[d], rank)];
    strides[d] = in_strides[perm[d]];
  }
  Tensor out(shape);
  std::vector<std::int64_t> idx(rank, 0);
  for (std::int64_t i = 0; i < out.size(); ++i) {
    std::int64_t offset = 0;
    for (std::int64_t d = 0; d < rank; ++d) offset += idx[d] * strides[d];
    out.data[i] = x.data[offset];
    for (std::int64_t d = rank - 1; d >= 0; --d) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  return out;
}

Tensor pad(const Node& node, const Tensor& x, const Graph& graph) {
  const std::string mode = node.attr_string("mode", "constant");
  if (mode != "constant") unsupported(node, "pad mode " + mode);
  const std::vector<std::int64_t> pads = node.has("pads") ? node.attr_ints("pads") : constant_ints(node, 1, graph);
  float value = node.attr_float("value", 0.f);
  if (present(node, 2)) value = graph.constants.at(node.inputs[2]).data.at(0);
  const std::int64_t rank = x.rank();
  if (static_cast<std::int64_t>(pads.size()) != 2 * rank) bad_node(node, "pads length mismatch");
  Shape shape(rank);
  for (std::int64_t d = 0; d < rank; ++d) {
    if (pads[d] < 0 || pads[d + rank] < 0) unsupported(node, "negative pads");
    shape[d] = x.shape[d] + pads[d] + pads[d + rank];
  }
  Tensor out(shape, std::vector<float>(static_cast<std::size_t>(element_count(shape)), value));
  std::vector<std::int64_t> idx(rank, 0);
  std::vector<std::int64_t> out_strides(rank, 1);
  for (std::int64_t d = rank - 2; d >= 0; --d) out_strides[d] = out_strides[d + 1] * shape[d + 1];
  for (std::int64_t i = 0; i < x.size(); ++i) {
    std::int64_t offset = 0;
    for (std::int64_t d = 0; d < rank; ++d) offset += (idx[d] + pads[d]) * out_strides[d];
    out.data[offset] = x.data[i];
    for (std::int64_t d = rank - 1; d >= 0; --d) {
      if (++idx[d] < x.shape[d]) break;
      idx[d] = 0;
    }
  }
  return out;
}

Tensor softmax(const Node& node, const Tensor& x) {
  const std::int64_t rank = x.rank();
  const std::int64_t axis = normalize_axis(node, node.attr_int("axis", node.opset >= 13 ? -1 : 1), rank);
  std::int64_t outer = 1, len = 1, inner = 1;
  if (node.opset >= 13) {
    for (std::int64_t d = 0; d < axis; ++d) outer *= x.shape[d];
    len = x.shape[axis];
    for (std::int64_t d = axis + 1; d < rank; ++d) inner *= x.shape[d];
  } else {
    // Older opsets coerce to 2-D at `axis`.
    for (std::int64_t d = 0; d < axis; ++d) outer *= x.shape[d];
    for (std::int64_t d = axis; d < rank; ++d) len *= x.shape[d];
  }
  Tensor out(x.shape);
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const float* src = x.data.data() + o * len * inner + in;
      float* dst = out.data.data() + o * len * inner + in;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::int64_t k = 0; k < len; ++k) mx = std::max(mx, src[k * inner]);
      float sum = 0.f;
      for (std::int64_t k = 0; k < len; ++k) sum += (dst[k * inner] = std::exp(src[k * inner] - mx));
      for (std::int64_t k = 0; k < len; ++k) dst[k * inner] /= sum;
    }
  }
  return out;
}

Shape reduce_shape(const Node& node, const Shape& x, const std::vector<std::int64_t>& axes_in, bool keepdims,
                   std::vector<bool>& reduced) {
  const std::int64_t rank = static_cast<std::int64_t>(x.size());
  reduced.assign(rank, axes_in.empty());
  for (auto a : axes_in) reduced[normalize_axis(node, a, rank)] = true;
  Shape out;
  for (std::int64_t d = 0; d < rank; ++d) {
    if (!reduced[d]) out.push_back(x[d]);
    else if (keepdims) out.push_back(1);
  }
  return out;
}

Tensor reduce_mean(const Node& node, const Tensor& x, const Graph& graph) {
  std::vector<bool> reduced;
  const bool keepdims = node.attr_int("keepdims", 1) != 0;
  const Shape shape = reduce_shape(node, x.shape, axes_of(node, graph), keepdims, reduced);
  Tensor out(shape);
  const std::int64_t rank = x.rank();
  std::vector<std::int64_t> out_strides(rank, 0);
  std::int64_t stride = 1;
  for (std::int64_t d = rank - 1; d >= 0; --d) {
    if (!reduced[d]) {
      out_strides[d] = stride;
      stride *= x.shape[d];
    }
  }
  std::int64_t count = 1;
  for (std::int64_t d = 0; d < rank; ++d)
    if (reduced[d]) count *= x.shape[d];
  std::vector<std::int64_t> idx(rank, 0);
  for (std::int64_t i = 0; i < x.size(); ++i) {
    std::int64_t offset = 0;
    for (std::int64_t d = 0; d < rank; ++d) offset += idx[d] * out_strides[d];
    out.data[offset] += x.data[i];
    for (std::int64_t d = rank - 1; d >= 0; --d) {
      if (++idx[d] < x.shape[d]) break;
      idx[d] = 0;
    }
  }
  for (auto& v : out.data) v /= static_cast<float>(count);
  return out;
}

Shape reshape_shape(const Node& node, const Shape& x, const Graph& graph) {
  std::vector<std::int64_t> target = constant_ints(node, 1, graph);
  const bool allow_zero = node.attr_int("allowzero", 0) != 0;
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t d = 0; d < target.size(); ++d) {
    if (target[d] == 0 && !allow_zero) {
      if (d >= x.size()) bad_node(node, "zero dim beyond input rank");
      target[d] = x[d];
    }
    if (target[d] == -1) {
      if (infer >= 0) bad_node(node, "more than one -1 in shape");
      infer = static_cast<int>(d);
    } else {
      known *= target[d];
    }
  }
  const std::int64_t total = element_count(x);
  if (infer >= 0) {
    if (known == 0 || total % known != 0) bad_node(node, "cannot infer -1 dimension");
    target[infer] = total / known;
  }
  if (element_count(target) != total)
    bad_node(node, "cannot reshape " + shape_to_string(x) + " to " + shape_to_string(target));
  return target;
}

Shape squeeze_shape(const Node& node, const Shape& x, const Graph& graph) {
  const auto axes_in = axes_of(node, graph);
  const std::int64_t rank = static_cast<std::int64_t>(x.size());
  std::vector<bool> drop(rank, false);
  if (axes_in.empty()) {
    for (std::int64_t d = 0; d < rank; ++d) drop[d] = x[d] == 1;
  } else {
    for (auto a : axes_in) {
      const auto d = normalize_axis(node, a, rank);
      if (x[d] != 1) bad_node(node, "cannot squeeze a non-unit dimension");
      drop[d] = true;
    }
  }
  Shape out;
  for (std::int64_t d = 0; d < rank; ++d)
    if (!drop[d]) out.push_back(x[d]);
  return out;
}

Shape unsqueeze_shape(const Node& node, const Shape& x, const Graph& graph) {
  const auto axes_in = axes_of(node, graph);
  const std::int64_t rank = static_cast<std::int64_t>(x.size() + axes_in.size());
  std::vector<bool> inserted(rank, false);
  for (auto a : axes_in) inserted[normalize_axis(node, a, rank)] = true;
  Shape out;
  std::size_t src = 0;
  for (std::int64_t d = 0; d < rank; ++d) out.push_back(inserted[d] ? 1 : x.at(src++));
  return out;
}

Shape flatten_shape(const Node& node, const Shape& x) {
  const std::int64_t rank = static_cast<std::int64_t>(x.size());
  std::int64_t axis = node.attr_int("axis", 1);
  if (axis < 0) axis += rank;
  if (axis < 0 || axis > rank) bad_node(node, "axis out of range");
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= x[d];
  for (std::int64_t d = axis; d < rank; ++d) inner *= x[d];
  return {outer, inner};
}

std::pair<float, float> clip_bounds(const Node& node, std::span<const Tensor* const> inputs) {
  float lo = -std::numeric_limits<float>::infinity(), hi = std::numeric_limits<float>::infinity();
  if (node.opset < 11) {
    lo = node.attr_float("min", lo);
    hi = node.attr_float("max", hi);
  } else {
    if (inputs.size() > 1 && inputs[1]) lo = inputs[1]->data.at(0);
    if (inputs.size() > 2 && inputs[2]) hi = inputs[2]->data.at(0);
  }
  return {lo, hi};
}

template <typename Fn>
Tensor unary(const Tensor& x, Fn fn) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = fn(x.data[i]);
  return out;
}

bool is_unary_passthrough(const std::string& op) {
  return op == "Relu" || op == "LeakyRelu" || op == "Sigmoid" || op == "Tanh" || op == "Clip" || op == "Identity" ||
         op == "Dropout" || op == "BatchNormalization" || op == "Softmax";
}

bool is_binary(const std::string& op) { return op == "Add" || op == "Sub" || op == "Mul" || op == "Div"; }

}  // namespace

std::vector<Shape> infer_shapes(const Node& node, std::span<const Shape> inputs, const Graph& graph) {
  const std::string& op = node.op_type;
  if (is_unary_passthrough(op)) return {require(node, inputs, 0)};
  if (is_binary(op)) return {broadcast_shape(node, require(node, inputs, 0), require(node, inputs, 1))};
  if (op == "Conv") {
    const Shape& x = require(node, inputs, 0);
    const Shape& w = require(node, inputs, 1);
    const auto g = conv_geometry(node, x, w);
    const std::int64_t groups = node.attr_int("group", 1);
    if (groups < 1 || x[1] % groups != 0 || w[0] % groups != 0 || w[1] != x[1] / groups)
      bad_node(node, "channel/group mismatch: input " + shape_to_string(x) + ", weights " + shape_to_string(w));
    return {{x[0], w[0], g.out_h, g.out_w}};
  }
  if (op == "MaxPool" || op == "AveragePool") {
    const Shape& x = require(node, inputs, 0);
    const auto g = pool_geometry(node, x);
    return {{x[0], x[1], g.out_h, g.out_w}};
  }
  if (op == "GlobalAveragePool" || op == "GlobalMaxPool") {
    Shape s = require(node, inputs, 0);
    if (s.size() < 3) bad_node(node, "expected spatial input");
    for (std::size_t i = 2; i < s.size(); ++i) s[i] = 1;
    return {s};
  }
  if (op == "Gemm") {
    const Shape& a = require(node, inputs, 0);
    const Shape& b = require(node, inputs, 1);
    if (a.size() != 2 || b.size() != 2) bad_node(node, "Gemm expects rank-2 operands");
    const bool ta = node.attr_int("transA", 0) != 0, tb = node.attr_int("transB", 0) != 0;
    if ((ta ? a[0] : a[1]) != (tb ? b[1] : b[0])) bad_node(node, "inner dimensions differ");
    return {{ta ? a[1] : a[0], tb ? b[0] : b[1]}};
  }
  if (op == "MatMul") {
    const Shape& a = require(node, inputs, 0);
    const Shape& b = require(node, inputs, 1);
    if (b.size() != 2 || a.size() < 2) unsupported(node, "MatMul supports (..., K) x (K, M) only");
    if (a.back() != b[0]) bad_node(node, "inner dimensions differ");
    Shape s = a;
    s.back() = b[1];
    return {s};
  }
  if (op == "Concat") {
    const Shape& first = require(node, inputs, 0);
    const std::int64_t axis = normalize_axis(node, node.attr_int("axis", 1), static_cast<std::int64_t>(first.size()));
    Shape s = first;
    s[axis] = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const Shape& t = require(node, inputs, i);
      if (t.size() != first.size()) bad_node(node, "rank mismatch");
      for (std::size_t d = 0; d < t.size(); ++d)
        if (static_cast<std::int64_t>(d) != axis && t[d] != first[d]) bad_node(node, "non-axis dims differ");
      s[axis] += t[axis];
    }
    return {s};
  }
  if (op == "Flatten") return {flatten_shape(node, require(node, inputs, 0))};
  if (op == "Reshape") return {reshape_shape(node, require(node, inputs, 0), graph)};
  if (op == "Squeeze") return {squeeze_shape(node, require(node, inputs, 0), graph)};
  if (op == "Unsqueeze") return {unsqueeze_shape(node, require(node, inputs, 0), graph)};
  if (op == "Transpose") {
    const Shape& x = require(node, inputs, 0);
    const std::int64_t rank = static_cast<std::int64_t>(x.size());
    auto perm = node.attr_ints("perm");
    if (perm.empty())
      for (std::int64_t i = 0; i < rank; ++i) perm.push_back(rank - 1 - i);
    if (static_cast<std::int64_t>(perm.size()) != rank) bad_node(node, "perm length mismatch");
    Shape s(rank);
    for (std::int64_t d = 0; d < rank; ++d) s[d] = x[normalize_axis(node, perm[d], rank)];
    return {s};
  }
  if (op == "Pad") {
    const Shape& x = require(node, inputs, 0);
    const auto pads = node.has("pads") ? node.attr_ints("pads") : constant_ints(node, 1, graph);
    if (pads.size() != 2 * x.size()) bad_node(node, "pads length mismatch");
    Shape s = x;
    for (std::size_t d = 0; d < x.size(); ++d) s[d] += pads[d] + pads[d + x.size()];
    return {s};
  }
  if (op == "ReduceMean") {
    std::vector<bool> reduced;
    return {reduce_shape(node, require(node, inputs, 0), axes_of(node, graph), node.attr_int("keepdims", 1) != 0,
                         reduced)};
  }
  unsupported(node, "operator not supported");
}

std::vector<Tensor> run_node(const Node& node, std::span<const Tensor* const> inputs, const Graph& graph) {
  const std::string& op = node.op_type;
  auto in = [&](std::size_t i) -> const Tensor& { return require(node, inputs, i); };

  if (op == "Conv") return {conv(node, in(0), in(1), inputs.size() > 2 ? inputs[2] : nullptr)};
  if (op == "Relu") return {unary(in(0), [](float v) { return v > 0.f ? v : 0.f; })};
  if (op == "LeakyRelu") {
    const float alpha = node.attr_float("alpha", 0.01f);
    return {unary(in(0), [alpha](float v) { return v >= 0.f ? v : alpha * v; })};
  }
  if (op == "Sigmoid") return {unary(in(0), [](float v) { return 1.f / (1.f + std::exp(-v)); })};
  if (op == "Tanh") return {unary(in(0), [](float v) { return std::tanh(v); })};
  if (op == "Clip") {
    const auto [lo, hi] = clip_bounds(node, inputs);
    return {unary(in(0), [lo = lo, hi = hi](float v) { return std::min(std::max(v, lo), hi); })};
  }
  if (op == "Identity" || op == "Dropout") return {in(0)};
  if (op == "Add") return {broadcast_binary(node, in(0), in(1), std::plus<float>())};
  if (op == "Sub") return {broadcast_binary(node, in(0), in(1), std::minus<float>())};
  if (op == "Mul") return {broadcast_binary(node, in(0), in(1), std::multiplies<float>())};
  if (op == "Div") return {broadcast_binary(node, in(0), in(1), std::divides<float>())};
  if (op == "MaxPool") return {max_pool(node, in(0))};
  if (op == "AveragePool") return {average_pool(node, in(0))};
  if (op == "GlobalAveragePool") return {global_pool(in(0), true)};
  if (op == "GlobalMaxPool") return {global_pool(in(0), false)};
  if (op == "BatchNormalization") return {batch_norm(node, in(0), in(1), in(2), in(3), in(4))};
  if (op == "Gemm") return {gemm(node, in(0), in(1), inputs.size() > 2 ? inputs[2] : nullptr)};
  if (op == "MatMul") return {matmul(node, in(0), in(1))};
  if (op == "Concat") return {concat(node, inputs)};
  if (op == "Transpose") return {transpose(node, in(0))};
  if (op == "Pad") return {pad(node, in(0), graph)};
  if (op == "Softmax") return {softmax(node, in(0))};
  if (op == "ReduceMean") return {reduce_mean(node, in(0), graph)};
  if (op == "Flatten" || op == "Reshape" || op == "Squeeze" || op == "Unsqueeze") {
    std::vector<Shape> shapes;
    for (const Tensor* t : inputs) shapes.push_back(t ? t->shape : Shape{});
    Tensor out = in(0);
    out.shape = infer_shapes(node, shapes, graph).front();
    return {std::move(out)};
  }
  unsupported(node, "operator not supported");
}

}  // namespace periscope::detail
