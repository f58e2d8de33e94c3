#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "tfrd/adam.hpp"
#include "tfrd/checkpoint.hpp"
#include "tfrd/config.hpp"
#include "tfrd/metrics.hpp"
#include "tfrd/synthetic.hpp"

namespace tfrd {

template <typename T>
struct SampleTensors {
  Tensor<T> rgb;
  Tensor<T> depth;
  Tensor<T> gt;
};

template <typename T>
SampleTensors<T> to_tensors(const SyntheticSample& s) {
  auto convert = [](const std::vector<float>& v) { return std::vector<T>(v.begin(), v.end()); };
  return {Tensor<T>::from({3, s.size, s.size}, convert(s.rgb)), Tensor<T>::from({1, s.size, s.size}, convert(s.depth)),
          Tensor<T>::from({1, s.size, s.size}, convert(s.gt))};
}

template <typename T>
std::vector<SampleTensors<T>> to_tensors(const std::vector<SyntheticSample>& samples, std::size_t input_size) {
  std::vector<SampleTensors<T>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.size != input_size) {
      throw ConfigError("sample side " + std::to_string(s.size) + " does not match input size " +
                        std::to_string(input_size));
    }
    out.push_back(to_tensors<T>(s));
  }
  return out;
}

struct LossRecord {
  std::size_t iter = 0;
  double l_init = 0;
  double l_final = 0;
  double total = 0;
};

inline std::string loss_csv_header() { return "iter,l_init,l_final,total"; }

inline std::string loss_csv_row(const LossRecord& r) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g", r.iter, r.l_init, r.l_final, r.total);
  return buf;
}

inline std::string render_loss_csv(const std::vector<LossRecord>& log) {
  std::string out = loss_csv_header() + "\n";
  for (const auto& r : log) out += loss_csv_row(r) + "\n";
  return out;
}

/// Mean total loss over the first (or last) `window` records.
inline double window_mean(const std::vector<LossRecord>& log, std::size_t window, bool tail) {
  if (log.empty()) return 0;
  window = std::min(window, log.size());
  double sum = 0;
  for (std::size_t i = 0; i < window; ++i) sum += log[tail ? log.size() - 1 - i : i].total;
  return sum / static_cast<double>(window);
}

/// Seeded epoch shuffling: each pass over the data is a fresh permutation.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(detail::splitmix64(seed ^ 0x5A3C9E1Dull)) {
    reshuffle();
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    out.reserve(batch);
    while (out.size() < batch) {
      if (cursor_ == order_.size()) reshuffle();
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.index(i)]);
    cursor_ = 0;
  }

  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t cursor_ = 0;
};

struct TrainOptions {
  bool write_files = true;
  std::ostream* progress = nullptr;
  std::size_t progress_every = 100;
};

struct TrainResult {
  std::vector<LossRecord> log;
  std::string checkpoint;  // empty when files are not written
  double seconds = 0;
};

namespace detail {

template <typename T>
bool all_finite(std::span<const T> values) {
  for (T v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace detail

/// Minimizes L_init + L_final. Every iteration draws `batch` samples, runs a
/// forward/backward per sample with loss scaled by 1/batch, then takes one
/// Adam step. Logs batch-mean losses for every iteration.
template <typename T>
TrainResult train_model(SaliencyModel<T>& model, const std::vector<SampleTensors<T>>& data, const RunConfig& cfg,
                        const TrainOptions& opts = {}) {
  if (data.empty()) throw UsageError("training set is empty");
  const auto start = std::chrono::steady_clock::now();
  namespace fs = std::filesystem;
  const fs::path out_dir(cfg.out_dir);
  if (opts.write_files) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());
  }
  std::ofstream log_file;
  if (opts.write_files) {
    log_file.open(out_dir / "loss.csv", std::ios::trunc);
    if (!log_file) throw IoError("cannot write " + (out_dir / "loss.csv").string());
    log_file << loss_csv_header() << "\n";
  }

  AdamOptions adam_opts;
  adam_opts.lr = cfg.lr;
  Adam<T> adam(model.params().tensors(), adam_opts);
  BatchSampler sampler(data.size(), cfg.seed);
  TrainResult result;
  const T inv_batch = T(1) / static_cast<T>(cfg.batch);

  for (std::size_t iter = 0; iter < cfg.iters; ++iter) {
    model.params().zero_grad();
    LossRecord rec;
    rec.iter = iter;
    for (std::size_t idx : sampler.next(cfg.batch)) {
      const auto& s = data[idx];
      auto fwd = model.forward(s.rgb, s.depth);
      auto losses = model.losses(fwd, s.gt);
      const double li = static_cast<double>(losses.init.item());
      const double lf = fwd.p_fused.empty() ? 0.0 : static_cast<double>(losses.final.item());
      if (!std::isfinite(li) || !std::isfinite(lf)) {
        throw NumericError("non-finite loss at iteration " + std::to_string(iter) + " (L_init=" + std::to_string(li) +
                           ", L_final=" + std::to_string(lf) + ")");
      }
      rec.l_init += li / static_cast<double>(cfg.batch);
      rec.l_final += lf / static_cast<double>(cfg.batch);
      backward(scale(losses.total, inv_batch));
    }
    rec.total = rec.l_init + rec.l_final;
    for (const auto& [name, p] : model.params().entries()) {
      if (p.has_grad() && !detail::all_finite<T>(p.grad())) {
        throw NumericError("non-finite gradient in " + name + " at iteration " + std::to_string(iter));
      }
    }
    adam.step();
    result.log.push_back(rec);
    if (opts.write_files && iter % cfg.log_every == 0) log_file << loss_csv_row(rec) << "\n";
    if (opts.progress && (iter % opts.progress_every == 0 || iter + 1 == cfg.iters)) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "iter %5zu  l_init %.4f  l_final %.4f  total %.4f\n", iter, rec.l_init,
                    rec.l_final, rec.total);
      *opts.progress << buf << std::flush;
    }
    if (opts.write_files && cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 &&
        iter + 1 != cfg.iters) {
      save_checkpoint(model, (out_dir / ("checkpoint_" + std::to_string(iter + 1) + ".tfrd")).string());
    }
  }
  if (opts.write_files) {
    log_file.flush();
    if (!log_file) throw IoError("failed writing loss log");
    result.checkpoint = (out_dir / "model.tfrd").string();
    save_checkpoint(model, result.checkpoint);
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

/// Final-map inference for one sample: P_o^T, or P_init when T = 0.
template <typename T>
std::vector<double> predict(const SaliencyModel<T>& model, const Tensor<T>& rgb, const Tensor<T>& depth) {
  NoGradGuard guard;
  auto fwd = model.forward(rgb, depth);
  const auto& m = fwd.final_map();
  return {m.data().begin(), m.data().end()};
}

/// Metrics of the final map over a dataset. When `dump_dir` is non-empty the
/// maps are written there as NNNN_pred.pgm.
template <typename T>
MetricReport evaluate_model(const SaliencyModel<T>& model, const std::vector<SampleTensors<T>>& data,
                            const std::string& name = "dataset", const std::string& dump_dir = "") {
  std::vector<EvalPair> pairs;
  pairs.reserve(data.size());
  const std::size_t size = model.config().input_size;
  if (!dump_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(dump_dir, ec);
    if (ec) throw IoError("cannot create " + dump_dir + ": " + ec.message());
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    EvalPair p;
    p.pred = predict(model, data[i].rgb, data[i].depth);
    p.gt.assign(data[i].gt.data().begin(), data[i].gt.data().end());
    p.height = size;
    p.width = size;
    if (!dump_dir.empty()) {
      write_pnm((std::filesystem::path(dump_dir) / (sample_stem(i) + "_pred.pgm")).string(),
                image_from_planar<double>(p.pred, 1, size, size));
    }
    pairs.push_back(std::move(p));
  }
  return evaluate_dataset(pairs, name);
}

struct AblationVariant {
  std::string name;
  std::size_t stacks = 0;
  bool progressive = true;
  bool baseline = false;
};

struct AblationRow {
  AblationVariant variant;
  MetricReport report;
  double final_loss = 0;
};

/// T in {0, 2, 4, 5} for progressive then non-progressive TWFEM, then the
/// multi-scale multi-modal fusion baseline without TE or fusion blocks.
inline std::vector<AblationVariant> ablation_grid() {
  std::vector<AblationVariant> grid;
  for (bool progressive : {true, false}) {
    for (std::size_t t : {0, 2, 4, 5}) {
      grid.push_back({"T=" + std::to_string(t) + (progressive ? " progressive" : " non-progressive"), t, progressive,
                      false});
    }
  }
  grid.push_back({"MSMMF baseline", 0, true, true});
  return grid;
}

inline ModelConfig variant_config(const ModelConfig& base, const AblationVariant& v) {
  ModelConfig m = base;
  m.stacks = v.stacks;
  m.progressive = v.progressive;
  m.baseline_msmmf = v.baseline;
  return m;
}

/// Trains and evaluates one variant without touching the filesystem.
template <typename T>
AblationRow run_variant(const RunConfig& cfg, const AblationVariant& v, const std::vector<SampleTensors<T>>& train,
                        const std::vector<SampleTensors<T>>& test, std::ostream* progress = nullptr) {
  RunConfig run = cfg;
  run.model = variant_config(cfg.model, v);
  SaliencyModel<T> model(run.model);
  TrainOptions opts;
  opts.write_files = false;
  opts.progress = progress;
  opts.progress_every = std::max<std::size_t>(1, cfg.iters / 4);
  auto result = train_model(model, train, run, opts);
  AblationRow row{v, evaluate_model(model, test, v.name), window_mean(result.log, 50, true)};
  return row;
}

template <typename T>
std::vector<AblationRow> run_ablation(const RunConfig& cfg, const std::vector<SampleTensors<T>>& train,
                                      const std::vector<SampleTensors<T>>& test, std::ostream* progress = nullptr) {
  std::vector<AblationRow> rows;
  for (const auto& v : ablation_grid()) {
    if (progress) *progress << "== " << v.name << "\n";
    rows.push_back(run_variant<T>(cfg, v, train, test, progress));
  }
  return rows;
}

inline std::string render_ablation(const std::vector<AblationRow>& rows) {
  std::vector<MetricReport> reports;
  for (const auto& r : rows) reports.push_back(r.report);
  return render_table(reports);
}

}  // namespace tfrd
