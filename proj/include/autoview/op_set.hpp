#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "autoview/errors.hpp"

namespace autoview {

/// The curated photometric operation set. TranslateX/ShearY exist only for
/// the explicit re-insertion experiment and never enter the default set.
enum class AugKind {
  AutoContrast,
  Invert,
  Equalize,
  Solarize,
  Posterize,
  Contrast,
  Color,
  Brightness,
  Sharpness,
  Hue,
  Grayscale,
  GaussianBlur,
  TranslateX,
  ShearY,
};

inline const char* kind_name(AugKind k) {
  switch (k) {
    case AugKind::AutoContrast: return "AutoContrast";
    case AugKind::Invert: return "Invert";
    case AugKind::Equalize: return "Equalize";
    case AugKind::Solarize: return "Solarize";
    case AugKind::Posterize: return "Posterize";
    case AugKind::Contrast: return "Contrast";
    case AugKind::Color: return "Color";
    case AugKind::Brightness: return "Brightness";
    case AugKind::Sharpness: return "Sharpness";
    case AugKind::Hue: return "Hue";
    case AugKind::Grayscale: return "Grayscale";
    case AugKind::GaussianBlur: return "GaussianBlur";
    case AugKind::TranslateX: return "TranslateX";
    case AugKind::ShearY: return "ShearY";
  }
  return "?";
}

inline bool kind_from_name(const std::string& s, AugKind& out) {
  static const AugKind all[] = {
      AugKind::AutoContrast, AugKind::Invert,     AugKind::Equalize,  AugKind::Solarize,
      AugKind::Posterize,    AugKind::Contrast,   AugKind::Color,     AugKind::Brightness,
      AugKind::Sharpness,    AugKind::Hue,        AugKind::Grayscale, AugKind::GaussianBlur,
      AugKind::TranslateX,   AugKind::ShearY};
  for (AugKind k : all)
    if (s == kind_name(k)) {
      out = k;
      return true;
    }
  return false;
}

inline bool is_magnitude_free(AugKind k) {
  return k == AugKind::AutoContrast || k == AugKind::Invert || k == AugKind::Equalize ||
         k == AugKind::Grayscale;
}

inline bool is_geometric(AugKind k) {
  return k == AugKind::TranslateX || k == AugKind::ShearY;
}

/// One entry of the expanded operation set: a kind plus a fixed, discretized
/// magnitude. `level` is 0 for magnitude-free kinds, 1-based otherwise.
struct AugOpDescriptor {
  AugKind kind = AugKind::Invert;
  int level = 0;
  double magnitude = 0.0;

  bool has_magnitude() const { return !is_magnitude_free(kind); }

  std::string name() const {
    if (!has_magnitude()) return kind_name(kind);
    return std::string(kind_name(kind)) + "_L" + std::to_string(level);
  }

  bool operator==(const AugOpDescriptor& o) const {
    return kind == o.kind && level == o.level && magnitude == o.magnitude;
  }
};

struct ExplicitOp {
  AugKind kind;
  double magnitude = 0.0;  // ignored for magnitude-free kinds
};

struct OpSetSpec {
  int magnitude_levels = 3;
  bool include_geometric = false;
  // When non-empty, the expanded set is exactly this list (toy spaces,
  // single-op experiments) instead of the curated grid.
  std::vector<ExplicitOp> explicit_ops;
};

namespace detail {

// Per-kind (weakest, strongest) endpoints. The default three-level tables
// below are the pinned values; other level counts interpolate linearly.
struct MagnitudeRange {
  double weak, strong;
  std::vector<double> pinned3;
};

inline MagnitudeRange magnitude_range(AugKind k) {
  switch (k) {
    case AugKind::Solarize: return {0.85, 0.35, {0.85, 0.6, 0.35}};
    case AugKind::Posterize: return {7, 5, {7, 6, 5}};
    case AugKind::Contrast:
    case AugKind::Color:
    case AugKind::Brightness:
    case AugKind::Sharpness: return {0.7, 0.3, {0.7, 0.5, 0.3}};
    case AugKind::Hue: return {0.05, 0.2, {0.05, 0.1, 0.2}};
    case AugKind::GaussianBlur: return {0.3, 1.0, {0.3, 0.6, 1.0}};
    case AugKind::TranslateX:
    case AugKind::ShearY: return {0.1, 0.3, {0.1, 0.2, 0.3}};
    default: return {0, 0, {}};
  }
}

inline double magnitude_at(AugKind k, int level, int levels) {
  const MagnitudeRange r = magnitude_range(k);
  double m;
  if (levels == 3) {
    m = r.pinned3[static_cast<size_t>(level - 1)];
  } else if (levels == 1) {
    m = 0.5 * (r.weak + r.strong);
  } else {
    m = r.weak + (r.strong - r.weak) * static_cast<double>(level - 1) /
                     static_cast<double>(levels - 1);
  }
  if (k == AugKind::Posterize) m = std::round(m);
  return m;
}

}  // namespace detail

/// Expand the curated kinds into (kind, magnitude) descriptors: kinds in the
/// curated order, magnitude-bearing kinds fanned out over ascending levels.
inline std::vector<AugOpDescriptor> build_operation_set(const OpSetSpec& spec) {
  std::vector<AugOpDescriptor> out;

  if (!spec.explicit_ops.empty()) {
    std::vector<int> level_count(32, 0);
    for (const auto& e : spec.explicit_ops) {
      if (is_geometric(e.kind) && !spec.include_geometric)
        throw ConfigError(std::string("operation set: geometric kind '") + kind_name(e.kind) +
                          "' requires include_geometric");
      AugOpDescriptor d;
      d.kind = e.kind;
      if (d.has_magnitude()) {
        d.level = ++level_count[static_cast<size_t>(e.kind)];
        d.magnitude = e.magnitude;
      }
      out.push_back(d);
    }
  } else {
    if (spec.magnitude_levels < 1)
      throw ConfigError("operation set: magnitude_levels must be >= 1");
    std::vector<AugKind> kinds = {
        AugKind::AutoContrast, AugKind::Invert,     AugKind::Equalize,  AugKind::Solarize,
        AugKind::Posterize,    AugKind::Contrast,   AugKind::Color,     AugKind::Brightness,
        AugKind::Sharpness,    AugKind::Hue,        AugKind::Grayscale, AugKind::GaussianBlur};
    if (spec.include_geometric) {
      kinds.push_back(AugKind::TranslateX);
      kinds.push_back(AugKind::ShearY);
    }
    for (AugKind k : kinds) {
      if (is_magnitude_free(k)) {
        out.push_back({k, 0, 0.0});
      } else {
        for (int lvl = 1; lvl <= spec.magnitude_levels; ++lvl)
          out.push_back({k, lvl, detail::magnitude_at(k, lvl, spec.magnitude_levels)});
      }
    }
  }

  if (out.empty()) throw ConfigError("operation set: empty");
  for (size_t i = 0; i < out.size(); ++i)
    for (size_t j = i + 1; j < out.size(); ++j)
      if (out[i] == out[j])
        throw ConfigError("operation set: duplicate descriptor " + out[i].name());
  return out;
}

}  // namespace autoview
