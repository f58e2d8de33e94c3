#include <gtest/gtest.h>

#include <filesystem>
#include <unistd.h>

#include "tfrd/tfrd.hpp"

using namespace tfrd;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config(std::size_t stacks = 2) {
  ModelConfig c;
  c.channels = 16;
  c.stacks = stacks;
  c.heads = 2;
  c.input_size = 32;
  c.widths = {8, 12, 16};
  c.seed = 3;
  return c;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> random_input(std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  return {Tensor<T>::from({3, size, size}, rng.uniform_vector<T>(3 * size * size, 0, 1)),
          Tensor<T>::from({1, size, size}, rng.uniform_vector<T>(size * size, 0, 1))};
}

std::vector<float> all_values(const SaliencyModel<float>& m) {
  std::vector<float> out;
  for (const auto& [name, t] : m.params().entries()) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

std::size_t conv_count(std::size_t cin, std::size_t cout, std::size_t k) { return cin * cout * k * k + cout; }

// Closed-form parameter count; see README.
std::size_t analytic_parameter_count(const ModelConfig& m) {
  const std::size_t c = m.channels;
  auto backbone = [&](std::size_t cin) {
    std::size_t total = 0;
    for (std::size_t w : m.widths) {
      total += conv_count(cin, w, 3) + conv_count(w, w, 3);
      cin = w;
    }
    return total;
  };
  std::size_t projection = 0;
  for (std::size_t w : m.widths) projection += conv_count(w, c, 1);
  const std::size_t block = 12 * c * c + 17 * c;
  const std::size_t te = m.baseline_msmmf ? 0 : 2 * 3 * block;
  return backbone(3) + backbone(1) + 2 * projection + te + m.stacks * block + 2 * (c + 1);
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("tfrd_model_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Backbone, StridesFourEightSixteen) {
  Rng rng(1);
  ParamStore<float> store;
  auto bb = make_backbone<float>(store, "bb", 3, {4, 4, 4}, rng);
  for (std::size_t size : {64u, 256u}) {
    auto maps = backbone_forward(Tensor<float>::zeros({3, size, size}), bb);
    EXPECT_EQ(maps[0].shape(), (Shape{4, size / 4, size / 4}));
    EXPECT_EQ(maps[1].shape(), (Shape{4, size / 8, size / 8}));
    EXPECT_EQ(maps[2].shape(), (Shape{4, size / 16, size / 16}));
  }
}

TEST(Backbone, ZeroInputAndBiasGiveZeroMaps) {
  Rng rng(2);
  ParamStore<float> store;
  auto bb = make_backbone<float>(store, "bb", 1, {4, 6, 8}, rng);
  for (const auto& m : backbone_forward(Tensor<float>::zeros({1, 32, 32}), bb))
    for (float v : m.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Backbone, IndivisibleInputIsConfigError) {
  Rng rng(3);
  ParamStore<float> store;
  auto bb = make_backbone<float>(store, "bb", 1, {4, 4, 4}, rng);
  EXPECT_THROW(backbone_forward(Tensor<float>::zeros({1, 40, 40}), bb), ConfigError);
}

TEST(ModelConfig, Validation) {
  auto c = tiny_config();
  c.input_size = 40;
  EXPECT_THROW(SaliencyModel<float>{c}, ConfigError);
  c = tiny_config();
  c.heads = 3;
  EXPECT_THROW(SaliencyModel<float>{c}, ConfigError);
  c = tiny_config();
  c.channels = 18;
  EXPECT_THROW(SaliencyModel<float>{c}, ConfigError);
  c = tiny_config(2);
  c.baseline_msmmf = true;
  EXPECT_THROW(SaliencyModel<float>{c}, ConfigError);
}

TEST(Model, ForwardContract) {
  SaliencyModel<float> model(tiny_config(2));
  auto [rgb, depth] = random_input<float>(32, 4);
  auto out = model.forward(rgb, depth);
  EXPECT_EQ(out.map_count(), 3u);
  EXPECT_EQ(out.memory_length, 2u * (64 + 16 + 4));
  ASSERT_EQ(out.fused_features.size(), 3u);
  for (const auto& f : out.fused_features) EXPECT_EQ(f.shape(), (Shape{64, 16}));
  std::vector<const Tensor<float>*> maps{&out.p_init};
  for (const auto& p : out.p_fused) maps.push_back(&p);
  for (const auto* m : maps) {
    EXPECT_EQ(m->shape(), (Shape{1, 32, 32}));
    for (float v : m->data()) {
      EXPECT_GT(v, 0.0f);
      EXPECT_LT(v, 1.0f);
    }
  }
  EXPECT_EQ(out.final_map().node(), out.p_fused.back().node());
}

TEST(Model, DeskShapes) {
  ModelConfig c;  // desk defaults: c=64, T=4, input 64
  SaliencyModel<float> model(c);
  auto [rgb, depth] = random_input<float>(64, 5);
  NoGradGuard guard;
  auto out = model.forward(rgb, depth);
  EXPECT_EQ(out.memory_length, 672u);
  EXPECT_EQ(out.map_count(), 5u);
  for (const auto& f : out.fused_features) EXPECT_EQ(f.shape(), (Shape{256, 64}));
}

TEST(Model, ForwardIsDeterministicAndPure) {
  SaliencyModel<float> model(tiny_config(2));
  auto [rgb, depth] = random_input<float>(32, 6);
  const auto before = all_values(model);
  auto a = model.forward(rgb, depth);
  auto b = model.forward(rgb, depth);
  EXPECT_EQ(a.final_map().values(), b.final_map().values());
  EXPECT_EQ(a.p_init.values(), b.p_init.values());
  EXPECT_EQ(before, all_values(model));
}

TEST(Model, SameSeedSameParameters) {
  SaliencyModel<float> a(tiny_config(2)), b(tiny_config(2));
  EXPECT_EQ(all_values(a), all_values(b));
  auto c = tiny_config(2);
  c.seed = 4;
  EXPECT_NE(all_values(a), all_values(SaliencyModel<float>(c)));
}

TEST(Model, ZeroStacksUsesInitialMap) {
  SaliencyModel<float> model(tiny_config(0));
  auto [rgb, depth] = random_input<float>(32, 7);
  auto out = model.forward(rgb, depth);
  EXPECT_EQ(out.map_count(), 1u);
  EXPECT_EQ(out.final_map().node(), out.p_init.node());
  auto gt = Tensor<float>::zeros({1, 32, 32});
  auto l = model.losses(out, gt);
  EXPECT_EQ(l.final.item(), 0.0f);
  EXPECT_EQ(l.total.item(), l.init.item());
}

TEST(Model, BaselineSkipsEnhancement) {
  auto c = tiny_config(0);
  c.baseline_msmmf = true;
  SaliencyModel<float> model(c);
  for (const auto& [name, t] : model.params().entries()) EXPECT_EQ(name.find(".te."), std::string::npos) << name;
  auto [rgb, depth] = random_input<float>(32, 8);
  EXPECT_EQ(model.forward(rgb, depth).map_count(), 1u);
}

TEST(Model, DepthStreamIsLive) {
  SaliencyModel<float> model(tiny_config(2));
  auto [rgb, depth] = random_input<float>(32, 9);
  auto a = model.forward(rgb, depth).final_map();
  auto b = model.forward(rgb, Tensor<float>::zeros({1, 32, 32})).final_map();
  double diff = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) diff = std::max(diff, double(std::abs(a.data()[i] - b.data()[i])));
  EXPECT_GT(diff, 0.0);
}

TEST(Model, WrongInputShapeIsShapeError) {
  SaliencyModel<float> model(tiny_config(2));
  EXPECT_THROW(model.forward(Tensor<float>::zeros({3, 64, 64}), Tensor<float>::zeros({1, 64, 64})), ShapeError);
  EXPECT_THROW(model.forward(Tensor<float>::zeros({3, 32, 32}), Tensor<float>::zeros({3, 32, 32})), ShapeError);
}

TEST(Model, EveryParameterReceivesGradient) {
  SaliencyModel<double> model(tiny_config(2));
  model.params().zero_grad();
  for (std::uint64_t s = 0; s < 2; ++s) {
    auto sample = generate_sample(100 + s, 32);
    auto t = to_tensors<double>(sample);
    auto out = model.forward(t.rgb, t.depth);
    backward(model.losses(out, t.gt).total);
  }
  for (const auto& [name, t] : model.params().entries()) {
    double norm = 0;
    for (double g : t.grad()) norm += std::abs(g);
    EXPECT_GT(norm, 0.0) << name;
  }
}

TEST(Model, ClassifierSharedAcrossStacks) {
  SaliencyModel<float> model(tiny_config(4));
  std::size_t classifiers = 0;
  for (const auto& [name, t] : model.params().entries())
    if (name.find("classifier") != std::string::npos && name.ends_with(".w")) ++classifiers;
  EXPECT_EQ(classifiers, 2u);  // P_init head and the shared fusion head
  EXPECT_EQ(model.tffm().blocks.size(), 4u);
}

TEST(Model, ParameterNamesAreDotted) {
  SaliencyModel<float> model(tiny_config(2));
  EXPECT_TRUE(model.params().contains("rgb.backbone.stage2.conv1.w"));
  EXPECT_TRUE(model.params().contains("depth.te.s5.self_attn.q.w"));
  EXPECT_TRUE(model.params().contains("tffm.block2.norm_ff.gain"));
}

TEST(Model, ParameterCountMatchesFormula) {
  for (auto c : {ModelConfig{}, tiny_config(0), tiny_config(5)}) {
    SaliencyModel<float> model(c);
    EXPECT_EQ(model.params().scalar_count(), analytic_parameter_count(c));
  }
  auto base = tiny_config(0);
  base.baseline_msmmf = true;
  EXPECT_EQ(SaliencyModel<float>(base).params().scalar_count(), analytic_parameter_count(base));
  EXPECT_EQ(analytic_parameter_count(ModelConfig{}), 1105026u);
}

// ---- checkpoints ----

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  TempDir dir;
  SaliencyModel<float> a(tiny_config(2));
  save_checkpoint(a, (dir.path / "a.tfrd").string());
  auto c = tiny_config(2);
  c.seed = 99;
  SaliencyModel<float> b(c);
  load_checkpoint(b, (dir.path / "a.tfrd").string());
  EXPECT_EQ(all_values(a), all_values(b));
  save_checkpoint(b, (dir.path / "b.tfrd").string());
  EXPECT_EQ(read_file((dir.path / "a.tfrd").string()), read_file((dir.path / "b.tfrd").string()));
}

TEST(Checkpoint, HeaderLayout) {
  SaliencyModel<float> m(tiny_config(2));
  auto bytes = encode_checkpoint(snapshot(m));
  ASSERT_GE(bytes.size(), 36u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "TFRD");
  auto u32 = [&](std::size_t at) {
    return std::uint32_t(bytes[at]) | std::uint32_t(bytes[at + 1]) << 8 | std::uint32_t(bytes[at + 2]) << 16 |
           std::uint32_t(bytes[at + 3]) << 24;
  };
  EXPECT_EQ(u32(4), 1u);
  EXPECT_EQ(u32(8), 16u);
  EXPECT_EQ(u32(12), 2u);
  EXPECT_EQ(u32(16), 2u);
  EXPECT_EQ(u32(20), 32u);
  EXPECT_EQ(u32(24), 32u);
  EXPECT_EQ(u32(28), m.params().size());
  EXPECT_EQ(u32(32), 0u);
  // Records contribute header bytes plus four bytes per scalar, no padding.
  std::size_t expect = 36;
  for (const auto& [name, t] : m.params().entries()) expect += 2 + name.size() + 1 + 4 * t.rank() + 4 * t.numel();
  EXPECT_EQ(bytes.size(), expect);
}

TEST(Checkpoint, CrossConfigLoadIsVersionError) {
  TempDir dir;
  const auto path = (dir.path / "t2.tfrd").string();
  save_checkpoint(SaliencyModel<float>(tiny_config(2)), path);
  SaliencyModel<float> other(tiny_config(4));
  const auto before = all_values(other);
  EXPECT_THROW(load_checkpoint(other, path), VersionError);
  EXPECT_EQ(before, all_values(other));
}

TEST(Checkpoint, CorruptMagicLeavesModelUntouched) {
  SaliencyModel<float> src(tiny_config(2));
  auto bytes = encode_checkpoint(snapshot(src));
  bytes[0] = 'X';
  auto c = tiny_config(2);
  c.seed = 8;
  SaliencyModel<float> dst(c);
  const auto before = all_values(dst);
  EXPECT_THROW(apply_checkpoint(dst, decode_checkpoint(bytes)), IoError);
  EXPECT_EQ(before, all_values(dst));
}

TEST(Checkpoint, TruncationAndTrailingBytesRejected) {
  auto bytes = encode_checkpoint(snapshot(SaliencyModel<float>(tiny_config(2))));
  auto cut = bytes;
  cut.resize(bytes.size() - 3);
  EXPECT_THROW(decode_checkpoint(cut), IoError);
  auto longer = bytes;
  longer.push_back(0);
  EXPECT_THROW(decode_checkpoint(longer), IoError);
  auto bumped = bytes;
  bumped[4] = 2;
  EXPECT_THROW(decode_checkpoint(bumped), VersionError);
}

TEST(Checkpoint, DuplicateNamesRejected) {
  auto ckpt = snapshot(SaliencyModel<float>(tiny_config(2)));
  ckpt.records.push_back(ckpt.records.front());
  EXPECT_THROW(decode_checkpoint(encode_checkpoint(ckpt)), IoError);
}

TEST(Checkpoint, MissingFileIsIoError) {
  SaliencyModel<float> m(tiny_config(2));
  EXPECT_THROW(load_checkpoint(m, "/nonexistent/dir/model.tfrd"), IoError);
}
