#pragma once

// Attention-mask builders: scene masks (binary, scaled, normally distributed)
// from scene covers and the dependency baselines (parent-centred Gaussian and
// tree-distance Gaussian) from UD trees.

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "semtx/semgraph.hpp"

namespace semtx {

enum class MaskFamily { Binary, Scaled, NormalScene, Pascal, Udiscal };

std::string to_string(MaskFamily family);
MaskFamily parse_mask_family(std::string_view name);  // throws ConfigError

bool is_scene_family(MaskFamily family);

// Row-major matrix of attention multipliers in [0, 1].
class Mask {
 public:
  Mask() = default;
  Mask(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(static_cast<std::size_t>(rows) * cols, fill) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }

  double at(int i, int j) const { return values_[static_cast<std::size_t>(i) * cols_ + j]; }
  double& at(int i, int j) { return values_[static_cast<std::size_t>(i) * cols_ + j]; }

  const std::vector<double>& values() const { return values_; }

  bool symmetric(double tol = 0.0) const;

  static Mask ones(int n) { return Mask(n, n, 1.0); }

  bool operator==(const Mask&) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> values_;
};

struct MaskSpec {
  MaskFamily family = MaskFamily::Binary;
  // Scaled: off-scene value in (0,1). NormalScene: distance multiplier > 0.
  double c = 0.0;

  double sigma() const;
  void validate() const;  // throws ConfigError

  static MaskSpec binary() { return {MaskFamily::Binary, 0.0}; }
  static MaskSpec scaled(double c) { return {MaskFamily::Scaled, c}; }
  static MaskSpec normal_scene(double c) { return {MaskFamily::NormalScene, c}; }
  static MaskSpec pascal() { return {MaskFamily::Pascal, 0.0}; }
  static MaskSpec udiscal() { return {MaskFamily::Udiscal, 0.0}; }
};

// Word -> inclusive subword range [first, second].
struct Alignment {
  std::vector<std::pair<int, int>> ranges;

  int words() const { return static_cast<int>(ranges.size()); }
  int subwords() const { return ranges.empty() ? 0 : ranges.back().second + 1; }
  double midpoint(int word) const {
    return 0.5 * (ranges[word].first + ranges[word].second);
  }

  // Throws AlignmentError unless ranges are ordered, disjoint and gap-free.
  void validate() const;
  // Word owning each subword; validates first.
  std::vector<int> subword_owners() const;

  static Alignment identity(int words);
};

// Normal density with mean 0.
double f_norm(double x, double sigma);

inline constexpr double kSceneSigma = 0.3989422804014327;  // 1/sqrt(2*pi)

Mask binary_scene_mask(const SceneCover& cover);
Mask scaled_scene_mask(const SceneCover& cover, double c);
Mask normal_scene_mask(const SceneCover& cover, double c);
// Dispatches on a scene family and expands to subwords.
Mask scene_mask(const SceneCover& cover, const MaskSpec& spec, const Alignment& align);

Mask pascal_mask(const UdGraph& ud, const Alignment& align);
Mask udiscal_mask(const UdGraph& ud, const Alignment& align);

Mask expand_to_subwords(const Mask& word_mask, const Alignment& align);

// Mask file: "M <rows> <cols> <family>" followed by the rows.
std::string serialize_mask(const Mask& mask, MaskFamily family);
struct LabeledMask {
  Mask mask;
  MaskFamily family;
};
std::vector<LabeledMask> parse_masks(std::string_view text);

}  // namespace semtx
