#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "tfrd/tfrd.hpp"

namespace fs = std::filesystem;
using namespace tfrd;

namespace {

enum Exit { kOk = 0, kUsage = 1, kNumeric = 2, kIo = 3 };

// Flags shared by the subcommands that build a model.
struct CommonFlags {
  std::string config;
  std::string profile;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> stacks;
  std::optional<std::size_t> channels;
  std::optional<std::size_t> heads;
  std::optional<std::size_t> input_size;
  std::optional<std::size_t> iters;
  std::optional<std::size_t> batch;
  std::optional<double> lr;
  std::optional<std::size_t> train_size;
  std::optional<std::size_t> test_size;
  std::string out;
  std::string data;
  bool non_progressive = false;
  bool baseline = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "key=value config file");
    app->add_option("--profile", profile, "preset: desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    app->add_option("--seed", seed, "run seed");
    app->add_option("--t", stacks, "number of fusion blocks T");
    app->add_option("--channels", channels, "channel width c");
    app->add_option("--heads", heads, "attention heads");
    app->add_option("--input-size", input_size, "square input side");
    app->add_option("--iters", iters, "training iterations");
    app->add_option("--batch", batch, "samples per iteration");
    app->add_option("--lr", lr, "Adam learning rate");
    app->add_option("--train-size", train_size, "synthetic training samples");
    app->add_option("--test-size", test_size, "synthetic test samples");
    app->add_option("--out", out, "output directory");
    app->add_option("--data", data, "dataset root holding train/ and test/ (generated in memory when absent)");
    app->add_flag("--non-progressive", non_progressive, "feed raw f3/f4/f5 to every TE block");
    app->add_flag("--baseline-msmmf", baseline, "multi-scale multi-modal fusion baseline (implies T=0)");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config.empty()) load_config_file(cfg, config);
    if (!profile.empty()) apply_profile(cfg, profile);
    if (seed) {
      cfg.seed = *seed;
      cfg.model.seed = *seed;
    }
    if (stacks) cfg.model.stacks = *stacks;
    if (channels) cfg.model.channels = *channels;
    if (heads) cfg.model.heads = *heads;
    if (input_size) cfg.model.input_size = *input_size;
    if (iters) cfg.iters = *iters;
    if (batch) cfg.batch = *batch;
    if (lr) cfg.lr = *lr;
    if (train_size) cfg.train_size = *train_size;
    if (test_size) cfg.test_size = *test_size;
    if (!out.empty()) cfg.out_dir = out;
    if (!data.empty()) cfg.data_dir = data;
    if (non_progressive) cfg.model.progressive = false;
    if (baseline) {
      cfg.model.baseline_msmmf = true;
      cfg.model.stacks = 0;
    }
    cfg.validate();
    return cfg;
  }

  bool has_data() const { return !data.empty(); }
};

std::vector<SyntheticSample> dataset_split(const RunConfig& cfg, bool use_disk, const std::string& split) {
  if (use_disk) return read_dataset(fs::path(cfg.data_dir) / split);
  const bool train = split == "train";
  const auto seed = train ? cfg.seed : test_split_seed(cfg.seed);
  return generate_dataset(train ? cfg.train_size : cfg.test_size, cfg.model.input_size, seed);
}

// The checkpoint header fixes c, T, heads and input size; the baseline is
// recognisable by its missing TE blocks.
ModelConfig config_for_checkpoint(const std::string& path, const RunConfig& cfg) {
  const auto header = peek_checkpoint_config(path);
  ModelConfig m = cfg.model;
  m.channels = header.channels;
  m.stacks = header.stacks;
  m.heads = header.heads;
  m.input_size = header.height;
  const auto ckpt = decode_checkpoint(read_file(path));
  m.baseline_msmmf = std::none_of(ckpt.records.begin(), ckpt.records.end(),
                                  [](const CheckpointRecord& r) { return r.name.rfind("rgb.te.", 0) == 0; });
  return m;
}

int cmd_gen_data(const CommonFlags& flags) {
  auto cfg = flags.resolve();
  const fs::path root = flags.out.empty() ? fs::path(cfg.data_dir) : fs::path(flags.out);
  const auto train = generate_dataset(cfg.train_size, cfg.model.input_size, cfg.seed);
  const auto test = generate_dataset(cfg.test_size, cfg.model.input_size, test_split_seed(cfg.seed));
  write_dataset(root / "train", train);
  write_dataset(root / "test", test);
  std::cout << "wrote " << train.size() << " training and " << test.size() << " test samples (" << cfg.model.input_size
            << "x" << cfg.model.input_size << ") to " << root.string() << "\n";
  return kOk;
}

int cmd_train(const CommonFlags& flags) {
  auto cfg = flags.resolve();
  auto train = to_tensors<float>(dataset_split(cfg, flags.has_data(), "train"), cfg.model.input_size);
  SaliencyModel<float> model(cfg.model);
  std::cout << "model: c=" << cfg.model.channels << " T=" << cfg.model.stacks << " heads=" << cfg.model.heads
            << " input=" << cfg.model.input_size << " params=" << model.params().scalar_count() << "\n";
  TrainOptions opts;
  opts.progress = &std::cout;
  auto result = train_model(model, train, cfg, opts);
  std::cout << "trained " << cfg.iters << " iterations in " << result.seconds << " s; checkpoint " << result.checkpoint
            << "\n";
  return kOk;
}

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint, const std::string& split, const std::string& dump,
             const std::string& csv) {
  auto cfg = flags.resolve();
  cfg.model = config_for_checkpoint(checkpoint, cfg);
  SaliencyModel<float> model(cfg.model);
  load_checkpoint(model, checkpoint);
  auto data = to_tensors<float>(dataset_split(cfg, flags.has_data(), split), cfg.model.input_size);
  auto report = evaluate_model(model, data, split, dump);
  std::cout << render_table({report});
  if (!csv.empty()) {
    std::ofstream out(csv);
    if (!out) throw IoError("cannot write " + csv);
    out << render_csv({report});
  }
  return kOk;
}

int cmd_infer(const CommonFlags& flags, const std::string& checkpoint, const std::string& rgb_path,
              const std::string& depth_path, const std::string& out_path) {
  auto cfg = flags.resolve();
  cfg.model = config_for_checkpoint(checkpoint, cfg);
  SaliencyModel<float> model(cfg.model);
  load_checkpoint(model, checkpoint);
  const auto rgb = read_pnm(rgb_path);
  const auto depth = read_pnm(depth_path);
  const std::size_t s = cfg.model.input_size;
  if (rgb.channels != 3 || depth.channels != 1) throw IoError("infer expects a P6 colour image and a P5 depth map");
  if (rgb.width != s || rgb.height != s || depth.width != s || depth.height != s) {
    throw ConfigError("inputs must be " + std::to_string(s) + "x" + std::to_string(s) + " to match the checkpoint");
  }
  auto map = predict(model, Tensor<float>::from({3, s, s}, planar_from_image<float>(rgb)),
                     Tensor<float>::from({1, s, s}, planar_from_image<float>(depth)));
  write_pnm(out_path, image_from_planar<double>(map, 1, s, s));
  std::cout << "wrote " << out_path << "\n";
  return kOk;
}

int cmd_ablate(const CommonFlags& flags) {
  auto cfg = flags.resolve();
  auto train = to_tensors<float>(dataset_split(cfg, flags.has_data(), "train"), cfg.model.input_size);
  auto test = to_tensors<float>(dataset_split(cfg, flags.has_data(), "test"), cfg.model.input_size);
  auto rows = run_ablation<float>(cfg, train, test, &std::cerr);
  std::cout << render_ablation(rows);
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  std::vector<MetricReport> reports;
  for (const auto& r : rows) reports.push_back(r.report);
  const auto path = (fs::path(cfg.out_dir) / "ablation.csv").string();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << render_csv(reports);
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& fault) {
  GradcheckOptions opts;
  opts.seed = seed;
  opts.inject_fault = fault;
  if (!fault.empty()) std::cout << "injecting a sign error into the backward rule of '" << fault << "'\n";
  auto report = run_gradcheck(opts, &std::cout);
  std::cout << report.units.size() << " units checked, " << report.failures().size() << " failed\n";
  for (const auto& name : report.failures()) std::cout << "FAILED: " << name << "\n";
  return report.passed() ? kOk : kNumeric;
}

int cmd_bench(std::size_t channels, const std::string& out) {
  AttentionBenchOptions opts;
  opts.channels = channels;
  auto csv = render_bench_csv(bench_attention(opts));
  std::cout << csv;
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw IoError("cannot write " + out);
    f << csv;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer RGB-D saliency: data generation, training, evaluation and checks"};
  app.require_subcommand(1);

  CommonFlags gen_flags, train_flags, eval_flags, infer_flags, ablate_flags;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic RGB-D dataset as PPM/PGM files");
  gen_flags.attach(gen);

  auto* train = app.add_subcommand("train", "train a model and write loss.csv and model.tfrd");
  train_flags.attach(train);

  std::string checkpoint, split = "test", dump, csv;
  auto* eval = app.add_subcommand("eval", "report MAE, F_m, S_m, E_m of a checkpoint");
  eval_flags.attach(eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
  eval->add_option("--dump", dump, "directory for predicted maps (PGM)");
  eval->add_option("--csv", csv, "also write the report as CSV");

  std::string rgb_path, depth_path, map_path = "pred.pgm";
  auto* infer = app.add_subcommand("infer", "predict a saliency map for one RGB-D pair");
  infer_flags.attach(infer);
  infer->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  infer->add_option("--rgb", rgb_path, "colour image (P6)")->required();
  infer->add_option("--depth", depth_path, "depth map (P5)")->required();
  infer->add_option("--map", map_path, "output map (P5)");

  auto* ablate = app.add_subcommand("ablate", "train and evaluate the T / TWFEM / baseline grid");
  ablate_flags.attach(ablate);

  std::uint64_t grad_seed = 11;
  std::string fault;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every op and block");
  grad->add_option("--seed", grad_seed, "sampling seed");
  grad->add_option("--inject-fault", fault, "negate the backward rule of this op (e.g. softmax)");

  std::size_t bench_channels = 32;
  std::string bench_out;
  auto* bench = app.add_subcommand("bench-attn", "time efficient vs dot-product attention");
  bench->add_option("--channels", bench_channels, "channel width");
  bench->add_option("--out", bench_out, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(gen_flags);
    if (*train) return cmd_train(train_flags);
    if (*eval) return cmd_eval(eval_flags, checkpoint, split, dump, csv);
    if (*infer) return cmd_infer(infer_flags, checkpoint, rgb_path, depth_path, map_path);
    if (*ablate) return cmd_ablate(ablate_flags);
    if (*grad) return cmd_gradcheck(grad_seed, fault);
    if (*bench) return cmd_bench(bench_channels, bench_out);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
