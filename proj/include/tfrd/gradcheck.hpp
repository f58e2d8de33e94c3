#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tfrd/model.hpp"

namespace tfrd {

struct GradcheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  std::size_t max_samples = 200;
  std::uint64_t seed = 11;
  std::string inject_fault;  // op whose backward is negated, empty for none
};

/// A scalar function of some leaf tensors.
struct GradProblem {
  std::vector<Tensor<double>> params;
  std::function<Tensor<double>()> loss;
};

struct GradUnit {
  std::string name;
  std::function<GradProblem(Rng&)> build;
};

struct GradUnitResult {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // redrawn: estimates at h and h/4 disagreed
  double max_rel = 0;
  double max_abs = 0;
  bool passed = false;
  double seconds = 0;
};

struct GradcheckReport {
  std::vector<GradUnitResult> units;
  std::string injected;

  bool passed() const {
    return !units.empty() && std::all_of(units.begin(), units.end(), [](const auto& u) { return u.passed; });
  }
  std::vector<std::string> failures() const {
    std::vector<std::string> out;
    for (const auto& u : units)
      if (!u.passed) out.push_back(u.name);
    return out;
  }
};

/// |a - n| / max(|a|, |n|, 1e-6).
inline double gradcheck_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

namespace detail {

inline Tensor<double> random_leaf(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  auto n = shape_numel(shape);
  return Tensor<double>::from(std::move(shape), rng.uniform_vector<double>(n, lo, hi), true);
}

inline Tensor<double> random_const(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  auto n = shape_numel(shape);
  return Tensor<double>::from(std::move(shape), rng.uniform_vector<double>(n, lo, hi), false);
}

inline Tensor<double> random_mask(Rng& rng, Shape shape) {
  auto n = shape_numel(shape);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform() < 0.3 ? 1.0 : 0.0;
  return Tensor<double>::from(std::move(shape), std::move(v), false);
}

// Scalar probe: sum(out * r) with a fixed random r, so every output element
// carries a distinct weight.
inline std::function<Tensor<double>()> projected(std::function<Tensor<double>()> f, Rng& rng) {
  auto out = f();
  auto r = random_const(rng, out.shape());
  return [f = std::move(f), r] { return sum(mul(f(), r)); };
}

inline GradProblem op_problem(Rng& rng, std::vector<Tensor<double>> params, std::function<Tensor<double>()> f) {
  return {std::move(params), projected(std::move(f), rng)};
}

// Values of distinct magnitude, spaced far beyond the finite-difference step,
// so that max selections never flip.
inline Tensor<double> spaced_leaf(Rng& rng, Shape shape) {
  auto n = shape_numel(shape);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n);
  for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
  return Tensor<double>::from(std::move(shape), std::move(v), true);
}

inline ModelConfig tiny_model_config() {
  ModelConfig m;
  m.channels = 16;
  m.stacks = 2;
  m.heads = 2;
  m.input_size = 32;
  m.widths = {8, 12, 16};
  m.seed = 5;
  // A larger head gain keeps gradients through the sigmoid well above the
  // finite-difference noise floor.
  m.classifier_gain = 1.0;
  return m;
}

}  // namespace detail

/// Every unit the gradcheck command runs, primitives first.
inline std::vector<GradUnit> gradcheck_units() {
  using detail::op_problem;
  using detail::random_const;
  using detail::random_leaf;
  using D = double;
  std::vector<GradUnit> units;

  units.push_back({"matmul", [](Rng& rng) {
                     auto a = random_leaf(rng, {3, 4});
                     auto b = random_leaf(rng, {4, 5});
                     return op_problem(rng, {a, b}, [=] { return matmul(a, b); });
                   }});
  units.push_back({"transpose", [](Rng& rng) {
                     auto a = random_leaf(rng, {3, 5});
                     return op_problem(rng, {a}, [=] { return transpose(a); });
                   }});
  units.push_back({"add", [](Rng& rng) {
                     auto a = random_leaf(rng, {4, 3});
                     auto b = random_leaf(rng, {4, 3});
                     auto bias = random_leaf(rng, {3});
                     return op_problem(rng, {a, b, bias}, [=] { return add(add(a, b), bias); });
                   }});
  units.push_back({"mul", [](Rng& rng) {
                     auto a = random_leaf(rng, {3, 4});
                     auto b = random_leaf(rng, {3, 4});
                     return op_problem(rng, {a, b}, [=] { return mul(a, b); });
                   }});
  units.push_back({"scale", [](Rng& rng) {
                     auto a = random_leaf(rng, {2, 5});
                     return op_problem(rng, {a}, [=] { return scale(a, D(-1.7)); });
                   }});
  units.push_back({"relu", [](Rng& rng) {
                     // Magnitudes in [0.1, 1] keep every input away from the kink.
                     std::vector<D> v(12);
                     for (auto& x : v) x = (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(0.1, 1.0);
                     auto a = Tensor<D>::from({3, 4}, v, true);
                     return op_problem(rng, {a}, [=] { return relu(a); });
                   }});
  units.push_back({"sigmoid", [](Rng& rng) {
                     auto a = random_leaf(rng, {3, 4}, -3, 3);
                     return op_problem(rng, {a}, [=] { return sigmoid(a); });
                   }});
  units.push_back({"sum_mean", [](Rng& rng) {
                     auto a = random_leaf(rng, {3, 4});
                     auto b = random_leaf(rng, {5});
                     return GradProblem{{a, b}, [=] { return add(scale(sum(mul(a, a)), D(0.5)), mean(mul(b, b))); }};
                   }});
  units.push_back({"softmax_row", [](Rng& rng) {
                     auto a = random_leaf(rng, {4, 5}, -2, 2);
                     return op_problem(rng, {a}, [=] { return softmax(a, Axis::Row); });
                   }});
  units.push_back({"softmax_col", [](Rng& rng) {
                     auto a = random_leaf(rng, {5, 4}, -2, 2);
                     return op_problem(rng, {a}, [=] { return softmax(a, Axis::Column); });
                   }});
  units.push_back({"layer_norm", [](Rng& rng) {
                     auto x = random_leaf(rng, {4, 6}, -2, 2);
                     auto g = random_leaf(rng, {6}, 0.5, 1.5);
                     auto b = random_leaf(rng, {6});
                     return op_problem(rng, {x, g, b}, [=] { return layer_norm(x, g, b); });
                   }});
  units.push_back({"conv2d", [](Rng& rng) {
                     auto x = random_leaf(rng, {2, 5, 5});
                     auto w = random_leaf(rng, {3, 2, 3, 3});
                     auto b = random_leaf(rng, {3});
                     auto w2 = random_leaf(rng, {2, 3, 1, 1});
                     auto b2 = random_leaf(rng, {2});
                     // Padded stride-1 3x3 followed by an unpadded stride-2 1x1.
                     return op_problem(rng, {x, w, b, w2, b2},
                                       [=] { return conv2d(conv2d(x, w, b, 1, 1), w2, b2, 2, 0); });
                   }});
  units.push_back({"max_pool2", [](Rng& rng) {
                     auto x = detail::spaced_leaf(rng, {2, 4, 6});
                     return op_problem(rng, {x}, [=] { return max_pool2(x); });
                   }});
  units.push_back({"bilinear_upsample", [](Rng& rng) {
                     auto a = random_leaf(rng, {2, 3, 3});
                     auto b = random_leaf(rng, {1, 2, 3});
                     auto r2 = random_const(rng, {2, 6, 6});
                     auto r4 = random_const(rng, {1, 8, 12});
                     return GradProblem{{a, b}, [=] {
                                          return add(sum(mul(bilinear_upsample(a, 2), r2)),
                                                     sum(mul(bilinear_upsample(b, 4), r4)));
                                        }};
                   }});
  units.push_back({"layout", [](Rng& rng) {
                     auto map = random_leaf(rng, {3, 2, 2});
                     auto extra = random_leaf(rng, {2, 3});
                     auto wide = random_leaf(rng, {6, 2});
                     return op_problem(rng, {map, extra, wide}, [=] {
                       auto tokens = concat_rows<D>({map_to_tokens(map), extra});
                       auto mixed = concat_cols<D>({tokens, slice_cols(wide, 1, 1)});
                       return reshape(tokens_to_map(slice_cols(mixed, 0, 3), 2, 3), {3, 6});
                     });
                   }});
  units.push_back({"bce", [](Rng& rng) {
                     auto p = random_leaf(rng, {1, 4, 4}, 0.05, 0.95);
                     auto s = detail::random_mask(rng, {1, 4, 4});
                     return GradProblem{{p}, [=] { return bce(p, s); }};
                   }});
  units.push_back({"dot_product_attention", [](Rng& rng) {
                     auto q = random_leaf(rng, {5, 4});
                     auto k = random_leaf(rng, {7, 4});
                     auto v = random_leaf(rng, {7, 4});
                     return op_problem(rng, {q, k, v}, [=] { return dot_product_attention(q, k, v); });
                   }});
  units.push_back({"efficient_attention", [](Rng& rng) {
                     auto q = random_leaf(rng, {5, 4});
                     auto k = random_leaf(rng, {7, 4});
                     auto v = random_leaf(rng, {7, 4});
                     return op_problem(rng, {q, k, v}, [=] { return efficient_attention(q, k, v); });
                   }});
  units.push_back({"multi_head", [](Rng& rng) {
                     ParamStore<D> store;
                     auto w = make_attention(store, "mh", 8, rng);
                     auto q = random_leaf(rng, {5, 8});
                     auto kv = random_leaf(rng, {6, 8});
                     auto params = store.tensors();
                     params.push_back(q);
                     params.push_back(kv);
                     return op_problem(rng, params, [=] { return multi_head(q, kv, kv, 2, w); });
                   }});
  units.push_back({"td_block", [](Rng& rng) {
                     ParamStore<D> store;
                     auto p = make_decoder_block(store, "td", 8, 2, rng);
                     auto x = random_leaf(rng, {6, 8});
                     auto y = random_leaf(rng, {9, 8});
                     auto px = random_const(rng, {6, 8});
                     auto py = random_const(rng, {9, 8});
                     auto params = store.tensors();
                     params.push_back(x);
                     params.push_back(y);
                     return op_problem(rng, params, [=] { return td_block(x, y, px, py, p); });
                   }});
  units.push_back({"te_initial_prediction", [](Rng& rng) {
                     // Both modality streams of the enhancement module, initial
                     // fusion and the initial BCE loss at a 16x16 input.
                     ParamStore<D> store;
                     const std::size_t c = 8;
                     const std::array<std::size_t, kScales> widths{3, 4, 5};
                     auto rgb_p = make_twfem(store, "rgb", widths, c, 2, rng);
                     auto depth_p = make_twfem(store, "depth", widths, c, 2, rng);
                     auto head = make_conv(store, "init_classifier", c, 1, 1, rng);
                     const std::array<Grid, kScales> grids{Grid{4, 4}, Grid{2, 2}, Grid{1, 1}};
                     auto enc = ScaleEncodings<D>::build(grids, c);
                     std::array<Tensor<D>, kScales> rgb_raw, depth_raw;
                     for (std::size_t i = 0; i < kScales; ++i) {
                       rgb_raw[i] = random_const(rng, {widths[i], grids[i].h, grids[i].w});
                       depth_raw[i] = random_const(rng, {widths[i], grids[i].h, grids[i].w});
                     }
                     auto gt = detail::random_mask(rng, {1, 16, 16});
                     return GradProblem{store.tensors(), [=] {
                                          auto r = enhance_modality(project(Modality::Rgb, rgb_raw, rgb_p.projection),
                                                                    rgb_p, enc, true);
                                          auto d = enhance_modality(
                                              project(Modality::Depth, depth_raw, depth_p.projection), depth_p, enc, true);
                                          auto p = initial_prediction(initial_fusion(r, d), grids[0], head);
                                          return initial_loss(p, gt);
                                        }};
                   }});
  units.push_back({"tf_stack_t2", [](Rng& rng) {
                     ParamStore<D> store;
                     const std::size_t c = 8;
                     auto tffm = make_tffm(store, "tffm", c, 2, 2, rng, 1.0);
                     const std::array<Grid, kScales> grids{Grid{4, 4}, Grid{2, 2}, Grid{1, 1}};
                     auto enc = ScaleEncodings<D>::build(grids, c);
                     EnhancedPyramid<D> rgb, depth;
                     rgb.modality = Modality::Rgb;
                     depth.modality = Modality::Depth;
                     auto params = store.tensors();
                     for (std::size_t i = 0; i < kScales; ++i) {
                       rgb.tokens[i] = random_leaf(rng, {grids[i].positions(), c});
                       depth.tokens[i] = random_leaf(rng, {grids[i].positions(), c});
                       rgb.grids[i] = depth.grids[i] = grids[i];
                       params.push_back(rgb.tokens[i]);
                       params.push_back(depth.tokens[i]);
                     }
                     auto gt = detail::random_mask(rng, {1, 16, 16});
                     return GradProblem{params, [=] {
                                          auto mem = build_memory(rgb, depth, enc);
                                          auto state = fuse(initial_fusion(rgb, depth), mem, enc.pos[0], grids[0], tffm);
                                          return final_loss(state.predictions, gt);
                                        }};
                   }});
  units.push_back({"full_model_tiny", [](Rng& rng) {
                     auto model = std::make_shared<SaliencyModel<D>>(detail::tiny_model_config());
                     const std::size_t s = model->config().input_size;
                     auto rgb = random_const(rng, {3, s, s}, 0, 1);
                     auto depth = random_const(rng, {1, s, s}, 0, 1);
                     auto gt = detail::random_mask(rng, {1, s, s});
                     return GradProblem{model->params().tensors(), [=] {
                                          auto f = model->forward(rgb, depth);
                                          return model->losses(f, gt).total;
                                        }};
                   }});
  return units;
}

/// Central-difference check of one unit on up to `max_samples` scalars drawn
/// uniformly across all of its parameters. A sample is redrawn when its
/// estimate at step h and at h/4 disagree.
inline GradUnitResult check_unit(const GradUnit& unit, const GradcheckOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(detail::splitmix64(opts.seed ^ std::hash<std::string>{}(unit.name)));
  auto problem = unit.build(rng);
  std::size_t total = 0;
  for (const auto& p : problem.params) total += p.numel();

  for (auto& p : problem.params) p.zero_grad();
  {
    std::optional<FaultInjection> fault;
    if (!opts.inject_fault.empty()) fault.emplace(opts.inject_fault);
    backward(problem.loss());
  }

  auto locate = [&](std::size_t flat) {
    for (std::size_t k = 0; k < problem.params.size(); ++k) {
      if (flat < problem.params[k].numel()) return std::make_pair(k, flat);
      flat -= problem.params[k].numel();
    }
    return std::make_pair(std::size_t{0}, std::size_t{0});
  };
  NoGradGuard no_grad;
  auto central = [&](Tensor<double>& p, std::size_t i, double h) {
    const double original = p.data()[i];
    p.data()[i] = original + h;
    const double up = problem.loss().item();
    p.data()[i] = original - h;
    const double down = problem.loss().item();
    p.data()[i] = original;
    return (up - down) / (2 * h);
  };

  GradUnitResult r;
  r.name = unit.name;
  const bool exhaustive = total <= opts.max_samples;
  const std::size_t wanted = exhaustive ? total : opts.max_samples;
  const std::size_t max_draws = exhaustive ? total : 4 * opts.max_samples;
  for (std::size_t draw = 0; draw < max_draws && r.checked < wanted; ++draw) {
    auto [k, i] = locate(exhaustive ? draw : rng.index(total));
    auto& p = problem.params[k];
    const double analytic = p.has_grad() ? p.grad()[i] : 0.0;
    const double numeric = central(p, i, opts.step);
    // A ReLU or max-pool kink inside the stencil makes the estimate depend on
    // the step; such points carry no information about the backward rule.
    if (gradcheck_relative_error(numeric, central(p, i, opts.step / 4)) > opts.tolerance / 10) {
      ++r.skipped;
      continue;
    }
    r.max_rel = std::max(r.max_rel, gradcheck_relative_error(analytic, numeric));
    r.max_abs = std::max(r.max_abs, std::abs(analytic - numeric));
    ++r.checked;
  }
  r.passed = r.checked > 0 && r.max_rel < opts.tolerance;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

inline GradcheckReport run_gradcheck(const GradcheckOptions& opts = {}, std::ostream* progress = nullptr) {
  GradcheckReport report;
  report.injected = opts.inject_fault;
  for (const auto& unit : gradcheck_units()) {
    report.units.push_back(check_unit(unit, opts));
    if (progress) {
      const auto& u = report.units.back();
      char buf[200];
      std::snprintf(buf, sizeof(buf), "%-4s %-24s checked %3zu  redrawn %2zu  max_rel %.3e  max_abs %.3e  (%.2fs)\n",
                    u.passed ? "ok" : "FAIL", u.name.c_str(), u.checked, u.skipped, u.max_rel, u.max_abs, u.seconds);
      *progress << buf << std::flush;
    }
  }
  return report;
}

}  // namespace tfrd
