#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "periscope/deepfeat.hpp"
#include "periscope/error.hpp"
#include "support.hpp"

using namespace periscope;
using testing_support::fixture;

namespace {

float max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  EXPECT_EQ(a.size(), b.size());
  float m = 0.f;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<NormalizedImage> images_for(const LayerManifest& m, std::size_t n, std::uint64_t seed) {
  std::vector<NormalizedImage> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({"img" + std::to_string(i), testing_support::noise_image(m.input_height, m.input_width, seed + i), {}});
  return out;
}

ErrorCode load_error(const std::filesystem::path& path) {
  try {
    load_graph(path);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << path << " loaded";
  return ErrorCode::io_error;
}

}  // namespace

TEST(LoadGraph, ToyManifest) {
  const auto g = load_graph(fixture("toy4.onnx"));
  const auto& m = g.manifest;
  EXPECT_EQ(m.model_id, "toy4");
  ASSERT_EQ(m.total_layers(), 4u);
  EXPECT_EQ(m.layers[0], (LayerInfo{1, "conv1", {4, 32, 32}}));
  EXPECT_EQ(m.layers[2], (LayerInfo{3, "pool1", {4, 16, 16}}));
  EXPECT_EQ(m.layers[3], (LayerInfo{4, "dense", {16}}));
  EXPECT_EQ(m.input_height, 32);
  EXPECT_EQ(m.input_channels, 3);
  EXPECT_DOUBLE_EQ(m.input_scale, 1.0 / 255.0);
  EXPECT_EQ(m.layer("relu1").index, 2);
  EXPECT_THROW(m.layer(5), Error);
  EXPECT_THROW(m.layer("nope"), Error);
  EXPECT_EQ(manifest_of(g.handle), m);
}

TEST(LoadGraph, SidecarMatchesDerivedManifest) {
  for (const char* name : {"toy4", "mini_resnet", "nhwc_tiny"}) {
    const auto g = load_graph(fixture(std::string(name) + ".onnx"));
    EXPECT_EQ(LayerManifest::load(fixture(std::string(name) + ".manifest.json")), g.manifest) << name;
    EXPECT_EQ(LayerManifest::from_json(g.manifest.to_json()), g.manifest) << name;
  }
}

TEST(LoadGraph, DisagreeingSidecarIsRejected) {
  testing_support::TempDir dir;
  std::filesystem::copy_file(fixture("toy4.onnx"), dir / "toy4.onnx");
  auto m = load_graph(fixture("toy4.onnx")).manifest;
  m.layers[1].name = "renamed";
  m.save(dir / "toy4.manifest.json");
  EXPECT_EQ(load_error(dir / "toy4.onnx"), ErrorCode::malformed_graph);
}

TEST(LoadGraph, BrokenFiles) {
  testing_support::TempDir dir;
  {
    std::ofstream out(dir / "garbage.onnx", std::ios::binary);
    out << "this is not a protobuf \xff\xff\xff\xff";
  }
  EXPECT_EQ(load_error(dir / "garbage.onnx"), ErrorCode::malformed_graph);
  EXPECT_EQ(load_error(fixture("gap_taps.onnx")), ErrorCode::malformed_graph);
  EXPECT_EQ(load_error(fixture("no_taps.onnx")), ErrorCode::malformed_graph);
  EXPECT_EQ(load_error(fixture("unsupported_op.onnx")), ErrorCode::unsupported_operator);
  EXPECT_EQ(load_error(dir / "absent.onnx"), ErrorCode::missing_file);
}

// Activations of every tap agree with onnxruntime on the inputs stored next to each fixture.
TEST(Forward, MatchesReferenceRuntime) {
  for (const char* name : {"toy4", "mini_resnet", "nhwc_tiny"}) {
    const auto g = load_graph(fixture(std::string(name) + ".onnx"));
    const auto ref = testing_support::read_reference(fixture(std::string(name) + ".ref.bin"));
    const auto all = forward_all(g.handle, ref.at("input"));
    for (const auto& layer : g.manifest.layers) {
      const std::string key = "tap/" + std::to_string(layer.index) + "/" + layer.name;
      const auto& expected = ref.at(key);
      const auto& got = all.at(layer.index);
      EXPECT_EQ(got.shape, expected.shape) << name << " " << key;
      EXPECT_LE(max_abs_diff(got.data, expected.data), 1e-4f) << name << " " << key;
    }
  }
}

TEST(Forward, TruncatedExecutionEqualsInstrumentedFullPass) {
  for (const char* name : {"toy4", "mini_resnet", "nhwc_tiny"}) {
    const auto g = load_graph(fixture(std::string(name) + ".onnx"));
    const auto images = images_for(g.manifest, 3, 77);
    const Tensor input = make_input(g.handle, images);
    const auto all = forward_all(g.handle, input);
    for (const auto& layer : g.manifest.layers) {
      const Tensor t = forward_to(g.handle, input, layer.index);
      EXPECT_LE(max_abs_diff(t.data, all.at(layer.index).data), 1e-5f) << name << " layer " << layer.index;
      EXPECT_EQ(t.shape.size(), layer.output_shape.size() + 1);
    }
  }
}

TEST(ExtractTap, FlattenedLengthsAndFinalLayer) {
  const auto g = load_graph(fixture("mini_resnet.onnx"));
  const auto images = images_for(g.manifest, 2, 5);
  for (const auto& layer : g.manifest.layers) {
    const auto v = extract_tap(g.handle, {layer.index, images});
    ASSERT_EQ(v.size(), 2u);
    EXPECT_EQ(static_cast<std::int64_t>(v[0].values.size()), element_count(layer.output_shape));
    EXPECT_EQ(v[1].sample_id, "img1");
    EXPECT_EQ(v[0].source, "tap:" + std::to_string(layer.index));
  }
  const auto last = static_cast<int>(g.manifest.total_layers());
  const auto full = forward_all(g.handle, make_input(g.handle, images)).at(last);
  const auto tap = extract_tap(g.handle, {std::string("softmax"), images});
  EXPECT_EQ(tap[1].values, flatten_sample(full, 1));
}

TEST(ExtractTap, BatchCompositionDoesNotMatter) {
  for (const char* name : {"toy4", "mini_resnet"}) {
    const auto g = load_graph(fixture(std::string(name) + ".onnx"));
    const auto images = images_for(g.manifest, 7, 100);
    for (const auto& layer : g.manifest.layers) {
      const auto together = extract_tap(g.handle, {layer.index, images});
      const auto batched = extract_tap_batched(g.handle, layer.index, images, 3);
      for (std::size_t s = 0; s < images.size(); ++s) {
        const auto alone = extract_tap(g.handle, {layer.index, std::span(&images[s], 1)});
        EXPECT_LE(max_abs_diff(alone[0].values, together[s].values), 1e-5f) << name << " " << layer.index;
        EXPECT_LE(max_abs_diff(batched[s].values, together[s].values), 1e-5f) << name << " " << layer.index;
      }
    }
  }
}

TEST(ExtractTap, InputIsReplicatedAndScaled) {
  const auto g = load_graph(fixture("nhwc_tiny.onnx"));
  cv::Mat px(16, 16, CV_8UC1, cv::Scalar(51));
  const std::vector<NormalizedImage> one = {{"a", px, {}}};
  const Tensor in = make_input(g.handle, one);
  EXPECT_EQ(in.shape, (Shape{1, 16, 16, 3}));
  for (const float v : in.data) EXPECT_FLOAT_EQ(v, 51.f / 255.f);
}

TEST(ExtractTap, Errors) {
  const auto g = load_graph(fixture("toy4.onnx"));
  const auto images = images_for(g.manifest, 1, 1);
  try {
    extract_tap(g.handle, {9, images});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::layer_not_found);
  }
  EXPECT_THROW(extract_tap(g.handle, {std::string("missing"), images}), Error);
  const std::vector<NormalizedImage> wrong = {{"w", cv::Mat(20, 20, CV_8UC1, cv::Scalar(0)), {}}};
  try {
    extract_tap(g.handle, {1, wrong});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::shape_mismatch);
  }
}

TEST(Tensor, FlattenAndInverse) {
  Tensor t(Shape{2, 4, 4, 3});
  for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = static_cast<float>(i);
  const auto v0 = flatten_sample(t, 0), v1 = flatten_sample(t, 1);
  EXPECT_EQ(v0.size(), 48u);
  EXPECT_EQ(v1.front(), 48.f);
  const Tensor back = unflatten(v1, Shape{4, 4, 3});
  EXPECT_EQ(back.shape, (Shape{1, 4, 4, 3}));
  EXPECT_EQ(back.data, v1);
  EXPECT_THROW(unflatten(v1, Shape{4, 4, 4}), Error);
}

TEST(RelativeDepth, Examples) {
  LayerManifest m;
  for (int i = 1; i <= 379; ++i) m.layers.push_back({i, "l" + std::to_string(i), {1}});
  EXPECT_NEAR(relative_depth(195, m), 0.5145, 5e-5);
  EXPECT_EQ(relative_depth(379, m), 1.0);
  m.layers.resize(26);
  EXPECT_NEAR(relative_depth(1, m), 0.0385, 5e-5);
  EXPECT_THROW(relative_depth(27, m), Error);
}

TEST(Randomize, ContractOnEveryFixture) {
  testing_support::TempDir dir;
  for (const char* name : {"toy4", "mini_resnet", "nhwc_tiny"}) {
    const auto src = fixture(std::string(name) + ".onnx");
    const auto original = load_graph(src);
    const auto a = dir / (std::string(name) + "_a.onnx"), b = dir / (std::string(name) + "_b.onnx"),
               c = dir / (std::string(name) + "_c.onnx");
    const auto manifest = randomize_weights(src, a, 1234);
    randomize_weights(src, b, 1234);
    randomize_weights(src, c, 99);
    EXPECT_EQ(manifest, original.manifest) << name;
    EXPECT_EQ(load_graph(a).manifest, original.manifest) << name;
    EXPECT_EQ(testing_support::slurp(a), testing_support::slurp(b)) << name;
    EXPECT_NE(testing_support::slurp(a), testing_support::slurp(c)) << name;

    const auto randomized = load_graph(a);
    const auto images = images_for(original.manifest, 1, 3);
    const auto before = extract_tap(original.handle, {1, images});
    const auto after = extract_tap(randomized.handle, {1, images});
    EXPECT_GT(max_abs_diff(before[0].values, after[0].values), 0.f) << name;
  }
}

TEST(Randomize, BiasesAreZeroedAndKernelsBounded) {
  testing_support::TempDir dir;
  randomize_weights(fixture("toy4.onnx"), dir / "r.onnx", 5);
  const auto g = load_graph(dir / "r.onnx");
  // With zero biases and a zero input, every pre-activation is exactly zero.
  const std::vector<NormalizedImage> black = {{"z", cv::Mat(32, 32, CV_8UC1, cv::Scalar(0)), {}}};
  for (const auto& layer : g.manifest.layers) {
    const auto v = extract_tap(g.handle, {layer.index, black});
    for (const float x : v[0].values) EXPECT_EQ(x, 0.f) << layer.name;
  }
}
