#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tfrd/attention.hpp"

namespace tfrd {

namespace detail {

// Seed mixer used to derive independent sub-streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Uniform doubles from a 64-bit Mersenne Twister. The distribution is
/// computed here rather than with <random> distributions so that the stream
/// is identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }
  std::uint64_t next() { return engine_(); }

  template <typename T>
  std::vector<T> uniform_vector(std::size_t n, double lo, double hi) {
    std::vector<T> out(n);
    for (auto& v : out) v = static_cast<T>(uniform(lo, hi));
    return out;
  }

 private:
  std::mt19937_64 engine_;
};

/// Named parameter registry. Names are unique and insertion order is the
/// canonical order for optimizers and checkpoints.
template <typename T>
class ParamStore {
 public:
  Tensor<T> add(const std::string& name, Shape shape, std::vector<T> values) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    auto t = Tensor<T>::from(std::move(shape), std::move(values), true);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, t);
    return t;
  }

  /// He-uniform: U(-sqrt(6/fan_in), sqrt(6/fan_in)) scaled by gain.
  Tensor<T> he_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng, double gain = 1.0) {
    const double bound = gain * std::sqrt(6.0 / static_cast<double>(fan_in));
    auto n = shape_numel(shape);
    return add(name, std::move(shape), rng.uniform_vector<T>(n, -bound, bound));
  }

  Tensor<T> constant(const std::string& name, Shape shape, T fill) {
    auto n = shape_numel(shape);
    return add(name, std::move(shape), std::vector<T>(n, fill));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second].second;
  }

  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t total = 0;
    for (const auto& [name, t] : entries_) total += t.numel();
    return total;
  }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for (const auto& [name, t] : entries_) out.push_back(t);
    return out;
  }

  void zero_grad() {
    for (auto& [name, t] : entries_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
Linear<T> make_linear(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  auto w = store.he_uniform(prefix + ".w", {in, out}, in, rng);
  auto b = store.constant(prefix + ".b", {out}, T(0));
  return {w, b};
}

template <typename T>
AttentionWeights<T> make_attention(ParamStore<T>& store, const std::string& prefix, std::size_t c, Rng& rng) {
  return {make_linear(store, prefix + ".q", c, c, rng), make_linear(store, prefix + ".k", c, c, rng),
          make_linear(store, prefix + ".v", c, c, rng), make_linear(store, prefix + ".o", c, c, rng)};
}

/// Convolution weights w[cout x cin x k x k] with bias.
template <typename T>
struct ConvParams {
  Tensor<T> weight;
  Tensor<T> bias;
  std::size_t pad = 0;

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, 1, pad); }
  std::size_t out_channels() const { return weight.dim(0); }
};

template <typename T>
ConvParams<T> make_conv(ParamStore<T>& store, const std::string& prefix, std::size_t cin, std::size_t cout,
                        std::size_t kernel, Rng& rng, double gain = 1.0) {
  auto w = store.he_uniform(prefix + ".w", {cout, cin, kernel, kernel}, cin * kernel * kernel, rng, gain);
  auto b = store.constant(prefix + ".b", {cout}, T(0));
  return {w, b, kernel / 2};
}

}  // namespace tfrd
