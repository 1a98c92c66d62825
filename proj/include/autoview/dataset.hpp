#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "autoview/config.hpp"
#include "autoview/errors.hpp"
#include "autoview/rng.hpp"
#include "autoview/tensor.hpp"

namespace autoview {

template <typename S>
struct Dataset {
  std::vector<Tensor<S>> images;  // native size, (3,s,s), values in [0,1]
  std::vector<int> labels;
  std::vector<std::string> class_names;
  std::vector<int64_t> train_indices;
  std::vector<int64_t> eval_indices;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  int64_t size() const { return static_cast<int64_t>(images.size()); }
};

namespace shapes {

struct Rgb {
  double r, g, b;
};

inline double smoothstep_cov(double sdf, double aa) {
  // coverage of a pixel given a signed distance (negative = inside)
  const double t = std::clamp(0.5 - sdf / aa, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

// signed distances for the eight class geometries, unit radius
inline double class_sdf(int cls, double x, double y) {
  const double ax = std::abs(x), ay = std::abs(y);
  switch (cls) {
    case 0: return std::sqrt(x * x + y * y) - 1.0;                       // disc
    case 1: return std::max(ax, ay) - 1.0;                               // square
    case 2: {                                                            // triangle (up)
      const double d1 = y - 1.0;
      const double d2 = 0.866 * ax - 0.5 * y - 0.5;
      return std::max(d1, d2);
    }
    case 3: return (ax + ay) - 1.0;                                      // diamond
    case 4: {                                                            // plus
      const double bar1 = std::max(ax - 0.34, ay - 1.0);
      const double bar2 = std::max(ay - 0.34, ax - 1.0);
      return std::min(bar1, bar2);
    }
    case 5: {                                                            // ring
      const double d = std::sqrt(x * x + y * y);
      return std::max(d - 1.0, 0.55 - d);
    }
    case 6: {                                                            // two bars
      const double b1 = std::max(ax - 1.0, std::abs(y + 0.55) - 0.28);
      const double b2 = std::max(ax - 1.0, std::abs(y - 0.55) - 0.28);
      return std::min(b1, b2);
    }
    case 7: {                                                            // checker 2x2
      const bool q = (x >= 0.0) == (y >= 0.0);
      const double sq = std::max(ax, ay) - 1.0;
      return q ? sq : 1.0;  // only two opposite quadrants filled
    }
    default: return 1.0;
  }
}

}  // namespace shapes

/// Procedural colored shape on a textured background; a pure function of
/// (spec, seed, class, index). Class identity is carried by geometry alone,
/// so photometric augmentations keep it while destroying nuisance style.
template <typename S>
Tensor<S> synthetic_shape_image(const DatasetConfig& cfg, int cls, int index) {
  const int64_t n = cfg.image_size;
  auto rng = rng_stream(cfg.generator_seed, {static_cast<uint64_t>(cls),
                                             static_cast<uint64_t>(index)});
  Tensor<S> img(Shape{3, n, n});

  // background: directional two-color gradient + sinusoidal stripes + noise
  shapes::Rgb c0{uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9)};
  shapes::Rgb c1{uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9)};
  const double theta = uniform(rng, 0.0, 2.0 * M_PI);
  const double gx = std::cos(theta), gy = std::sin(theta);
  const double stripe_freq = uniform(rng, 1.5, 5.0);
  const double stripe_phase = uniform(rng, 0.0, 2.0 * M_PI);
  const double stripe_theta = uniform(rng, 0.0, 2.0 * M_PI);
  const double sx = std::cos(stripe_theta), sy = std::sin(stripe_theta);

  // shape placement and color, kept visibly distinct from the background mean
  const double cx = 0.5 + uniform(rng, -0.13, 0.13);
  const double cy = 0.5 + uniform(rng, -0.13, 0.13);
  const double radius = uniform(rng, 0.26, 0.38);
  shapes::Rgb bg_mean{0.5 * (c0.r + c1.r), 0.5 * (c0.g + c1.g), 0.5 * (c0.b + c1.b)};
  shapes::Rgb fg{};
  for (int attempt = 0; attempt < 50; ++attempt) {
    fg = {uniform(rng, 0.05, 0.95), uniform(rng, 0.05, 0.95), uniform(rng, 0.05, 0.95)};
    const double dist = std::abs(fg.r - bg_mean.r) + std::abs(fg.g - bg_mean.g) +
                        std::abs(fg.b - bg_mean.b);
    if (dist > 0.8) break;
  }

  const double aa = 1.5 / static_cast<double>(n);
  for (int64_t y = 0; y < n; ++y)
    for (int64_t x = 0; x < n; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(n);
      const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(n);
      const double t = std::clamp(0.5 + 0.5 * ((u - 0.5) * gx + (v - 0.5) * gy) * 2.0, 0.0, 1.0);
      const double stripes =
          0.06 * std::sin(2.0 * M_PI * stripe_freq * (u * sx + v * sy) + stripe_phase);
      const double noise = uniform(rng, -0.05, 0.05);
      shapes::Rgb px{c0.r + t * (c1.r - c0.r) + stripes + noise,
                     c0.g + t * (c1.g - c0.g) + stripes + noise,
                     c0.b + t * (c1.b - c0.b) + stripes + noise};
      const double sdf = shapes::class_sdf(cls, (u - cx) / radius, (v - cy) / radius);
      const double cov = shapes::smoothstep_cov(sdf * radius, aa);
      px.r += cov * (fg.r - px.r);
      px.g += cov * (fg.g - px.g);
      px.b += cov * (fg.b - px.b);
      img[(0 * n + y) * n + x] = static_cast<S>(std::clamp(px.r, 0.0, 1.0));
      img[(1 * n + y) * n + x] = static_cast<S>(std::clamp(px.g, 0.0, 1.0));
      img[(2 * n + y) * n + x] = static_cast<S>(std::clamp(px.b, 0.0, 1.0));
    }
  return img;
}

// --- PPM (P6, 8-bit) --------------------------------------------------------

template <typename S>
Tensor<S> read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("ppm: cannot open '" + path + "'");
  std::string magic;
  in >> magic;
  if (magic != "P6") throw ConfigError("ppm: '" + path + "' is not a binary P6 file");
  auto next_int = [&]() {
    // skips whitespace and '#' comments
    for (;;) {
      int ch = in.peek();
      if (ch == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(ch)) {
        in.get();
      } else {
        break;
      }
    }
    int64_t v;
    in >> v;
    return v;
  };
  const int64_t w = next_int(), h = next_int(), maxval = next_int();
  if (maxval != 255) throw ConfigError("ppm: '" + path + "' must be 8-bit (maxval 255)");
  in.get();  // single whitespace after header
  std::vector<unsigned char> raw(static_cast<size_t>(3 * w * h));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw IoError("ppm: truncated pixel data in '" + path + "'");
  Tensor<S> img(Shape{3, h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        img[(c * h + y) * w + x] =
            static_cast<S>(raw[static_cast<size_t>((y * w + x) * 3 + c)]) / S(255);
  return img;
}

template <typename S>
void write_ppm(const Tensor<S>& img, const std::string& path) {
  if (img.rank() != 3 || img.shape[0] != 3) throw ShapeError("ppm: expected (3,H,W)");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("ppm: cannot write '" + path + "'");
  const int64_t h = img.shape[1], w = img.shape[2];
  out << "P6\n" << w << " " << h << "\n255\n";
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(img[(c * h + y) * w + x]), 0.0, 1.0);
        out.put(static_cast<char>(std::lround(v * 255.0)));
      }
}

// --- dataset assembly --------------------------------------------------------

template <typename S>
Dataset<S> load_dataset(const DatasetConfig& cfg) {
  Dataset<S> ds;
  if (cfg.kind == "synthetic-shapes") {
    static const char* names[8] = {"disc", "square",  "triangle", "diamond",
                                   "plus", "ring",    "bars",     "checker"};
    for (int c = 0; c < cfg.num_classes; ++c) ds.class_names.push_back(names[c]);
    for (int c = 0; c < cfg.num_classes; ++c)
      for (int i = 0; i < cfg.samples_per_class; ++i) {
        ds.images.push_back(synthetic_shape_image<S>(cfg, c, i));
        ds.labels.push_back(c);
      }
  } else if (cfg.kind == "folder-of-images") {
    namespace fs = std::filesystem;
    if (!fs::is_directory(cfg.root))
      throw ConfigError("dataset.root: '" + cfg.root + "' is not a directory");
    std::vector<fs::path> class_dirs;
    for (const auto& e : fs::directory_iterator(cfg.root))
      if (e.is_directory()) class_dirs.push_back(e.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty())
      throw ConfigError("dataset.root: '" + cfg.root + "' contains no class directories");
    for (size_t c = 0; c < class_dirs.size(); ++c) {
      ds.class_names.push_back(class_dirs[c].filename().string());
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(class_dirs[c]))
        if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        ds.images.push_back(read_ppm<S>(f.string()));
        ds.labels.push_back(static_cast<int>(c));
      }
    }
    if (ds.images.empty()) throw ConfigError("dataset.root: no .ppm images found");
  } else {
    throw ConfigError("dataset.kind: unknown kind '" + cfg.kind + "'");
  }

  // deterministic per-class split: the trailing eval_fraction of each class
  std::vector<std::vector<int64_t>> by_class(ds.class_names.size());
  for (int64_t i = 0; i < ds.size(); ++i)
    by_class[static_cast<size_t>(ds.labels[static_cast<size_t>(i)])].push_back(i);
  for (auto& idxs : by_class) {
    const int64_t n_eval =
        std::max<int64_t>(1, static_cast<int64_t>(std::floor(cfg.eval_fraction *
                                                             static_cast<double>(idxs.size()))));
    const int64_t n_train = static_cast<int64_t>(idxs.size()) - n_eval;
    for (int64_t i = 0; i < n_train; ++i) ds.train_indices.push_back(idxs[static_cast<size_t>(i)]);
    for (int64_t i = n_train; i < static_cast<int64_t>(idxs.size()); ++i)
      ds.eval_indices.push_back(idxs[static_cast<size_t>(i)]);
  }
  return ds;
}

/// Deterministic batch order: a full shuffle of the train indices per epoch,
/// derived from (seed, epoch) alone so worker count cannot change it.
inline std::vector<int64_t> epoch_order(const std::vector<int64_t>& train_indices, uint64_t seed,
                                        int64_t epoch) {
  std::vector<int64_t> order = train_indices;
  auto rng = rng_stream(seed, {0x0b417c5ull, static_cast<uint64_t>(epoch)});
  for (size_t i = order.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(randint(rng, static_cast<int64_t>(i)));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

}  // namespace autoview
