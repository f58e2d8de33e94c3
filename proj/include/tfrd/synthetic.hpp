#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "tfrd/image_io.hpp"
#include "tfrd/params.hpp"

namespace tfrd {

/// One RGB-D scene: planar rgb[3 x S x S], depth[S x S] and the binary
/// mask of the salient object, all in [0, 1].
struct SyntheticSample {
  std::size_t size = 0;
  std::vector<float> rgb;
  std::vector<float> depth;
  std::vector<float> gt;
  std::uint64_t seed = 0;

  double foreground_ratio() const {
    double s = 0;
    for (float v : gt) s += v;
    return s / static_cast<double>(gt.size());
  }
};

namespace detail {

struct Shape2d {
  bool ellipse = true;
  double cx = 0, cy = 0, rx = 0, ry = 0;

  bool contains(double x, double y) const {
    const double dx = (x - cx) / rx;
    const double dy = (y - cy) / ry;
    if (ellipse) return dx * dx + dy * dy <= 1.0;
    return std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
  }
};

inline Shape2d random_shape(Rng& rng, double size) {
  Shape2d s;
  s.ellipse = rng.uniform() < 0.5;
  // Extents are 15-40% of the side.
  const double w = rng.uniform(0.15, 0.40) * size;
  const double h = rng.uniform(0.15, 0.40) * size;
  s.rx = w / 2;
  s.ry = h / 2;
  s.cx = rng.uniform(s.rx, size - s.rx);
  s.cy = rng.uniform(s.ry, size - s.ry);
  return s;
}

inline std::array<double, 3> random_colour(Rng& rng) {
  return {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
}

inline double colour_distance(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double d = 0;
  for (int i = 0; i < 3; ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(d);
}

inline float unit_quantize(double v) { return static_cast<float>(quantize_unit(v)) / 255.0f; }

inline bool try_generate(Rng& rng, std::size_t size, SyntheticSample& out) {
  const double s = static_cast<double>(size);
  const std::size_t n = size * size;
  const auto object = random_shape(rng, s);
  const auto object_colour = random_colour(rng);
  auto background = random_colour(rng);
  for (int tries = 0; tries < 32 && colour_distance(background, object_colour) < 0.35; ++tries) {
    background = random_colour(rng);
  }

  const std::size_t distractor_count = 1 + rng.index(3);
  std::vector<Shape2d> distractors;
  std::vector<std::array<double, 3>> distractor_colours;
  std::vector<double> distractor_depth;
  for (std::size_t d = 0; d < distractor_count; ++d) {
    Shape2d shape = random_shape(rng, s);
    // The first distractor copies the object colour; keep it clear of the object
    // so that only depth tells them apart.
    if (d == 0) {
      for (int tries = 0; tries < 64; ++tries) {
        const double gap = std::hypot(shape.cx - object.cx, shape.cy - object.cy);
        if (gap > std::max(object.rx, object.ry) + std::max(shape.rx, shape.ry)) break;
        shape = random_shape(rng, s);
      }
    }
    distractors.push_back(shape);
    if (d == 0) {
      distractor_colours.push_back(object_colour);
    } else {
      distractor_colours.push_back(random_colour(rng));
    }
    distractor_depth.push_back(rng.uniform(0.35, 0.55));
  }
  const double object_depth = rng.uniform(0.75, 0.95);
  const double plane_a = rng.uniform(-0.1, 0.1);
  const double plane_b = rng.uniform(-0.1, 0.1);
  const double plane_c = rng.uniform(0.2, 0.3);
  const double texture = rng.uniform(0.03, 0.08);

  out.size = size;
  out.rgb.assign(3 * n, 0.0f);
  out.depth.assign(n, 0.0f);
  out.gt.assign(n, 0.0f);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) + 0.5;
      const double py = static_cast<double>(y) + 0.5;
      const std::size_t i = y * size + x;
      std::array<double, 3> colour = background;
      double depth = plane_c + plane_a * (px / s - 0.5) + plane_b * (py / s - 0.5);
      depth = std::clamp(depth, 0.15, 0.4) + rng.uniform(-0.02, 0.02);
      // Later distractors are painted over earlier ones; the object goes on top.
      for (std::size_t d = 0; d < distractors.size(); ++d) {
        if (distractors[d].contains(px, py)) {
          colour = distractor_colours[d];
          depth = distractor_depth[d] + rng.uniform(-0.02, 0.02);
        }
      }
      if (object.contains(px, py)) {
        colour = object_colour;
        depth = object_depth + rng.uniform(-0.02, 0.02);
        out.gt[i] = 1.0f;
      }
      for (std::size_t c = 0; c < 3; ++c) {
        out.rgb[c * n + i] = unit_quantize(colour[c] + rng.uniform(-texture, texture));
      }
      out.depth[i] = unit_quantize(depth);
    }
  }
  const double ratio = out.foreground_ratio();
  return ratio >= 0.02 && ratio <= 0.5;
}

}  // namespace detail

/// Deterministic in (seed, size). Layouts whose foreground ratio falls
/// outside [0.02, 0.5] are redrawn from the same stream.
inline SyntheticSample generate_sample(std::uint64_t seed, std::size_t size) {
  if (size < 16) throw ConfigError("synthetic samples need a side of at least 16 pixels");
  Rng rng(seed);
  SyntheticSample s;
  s.seed = seed;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    if (detail::try_generate(rng, size, s)) return s;
  }
  throw NumericError("synthetic generator could not place an object for seed " + std::to_string(seed));
}

inline std::uint64_t sample_seed(std::uint64_t dataset_seed, std::size_t index) {
  return detail::splitmix64(dataset_seed ^ detail::splitmix64(static_cast<std::uint64_t>(index) + 1));
}

/// Seed of the held-out split belonging to a training seed.
inline std::uint64_t test_split_seed(std::uint64_t seed) { return detail::splitmix64(seed ^ 0x7E57D47Aull); }

inline std::vector<SyntheticSample> generate_dataset(std::size_t n, std::size_t size, std::uint64_t seed) {
  std::vector<SyntheticSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_sample(sample_seed(seed, i), size));
  return out;
}

inline std::string sample_stem(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04zu", index);
  return buf;
}

inline void write_sample(const std::filesystem::path& dir, std::size_t index, const SyntheticSample& s) {
  const auto stem = (dir / sample_stem(index)).string();
  write_pnm(stem + "_rgb.ppm", image_from_planar<float>(s.rgb, 3, s.size, s.size));
  write_pnm(stem + "_depth.pgm", image_from_planar<float>(s.depth, 1, s.size, s.size));
  write_pnm(stem + "_gt.pgm", image_from_planar<float>(s.gt, 1, s.size, s.size));
}

inline void write_dataset(const std::filesystem::path& dir, const std::vector<SyntheticSample>& samples) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  for (std::size_t i = 0; i < samples.size(); ++i) write_sample(dir, i, samples[i]);
}

inline SyntheticSample read_sample(const std::filesystem::path& dir, std::size_t index) {
  const auto stem = (dir / sample_stem(index)).string();
  const auto rgb = read_pnm(stem + "_rgb.ppm");
  const auto depth = read_pnm(stem + "_depth.pgm");
  const auto gt = read_pnm(stem + "_gt.pgm");
  if (rgb.channels != 3) throw IoError(stem + "_rgb.ppm: expected an RGB (P6) image");
  if (depth.channels != 1) throw IoError(stem + "_depth.pgm: expected a greyscale (P5) image");
  if (rgb.width != rgb.height || depth.width != rgb.width || depth.height != rgb.height || gt.width != rgb.width ||
      gt.height != rgb.height) {
    throw IoError("sample " + stem + " has mismatched or non-square extents");
  }
  SyntheticSample s;
  s.size = rgb.width;
  s.rgb = planar_from_image<float>(rgb);
  s.depth = planar_from_image<float>(depth);
  s.gt = mask_from_image<float>(gt);
  return s;
}

/// Reads NNNN_{rgb,depth,gt} triples starting at 0000 until the first gap.
inline std::vector<SyntheticSample> read_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  std::vector<SyntheticSample> out;
  while (std::filesystem::exists(dir / (sample_stem(out.size()) + "_rgb.ppm"))) {
    out.push_back(read_sample(dir, out.size()));
  }
  if (out.empty()) throw IoError("no samples (0000_rgb.ppm ...) in " + dir.string());
  return out;
}

}  // namespace tfrd
