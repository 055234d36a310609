#include "semtx/masks.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numbers>

#include "semtx/error.hpp"
#include "text_util.hpp"

namespace semtx {

namespace {

void check_alignment_size(const UdGraph& ud, const Alignment& align) {
  if (align.words() != ud.length())
    throw DimensionError("alignment has " + std::to_string(align.words()) +
                         " words but the tree has " + std::to_string(ud.length()));
}

// Same-scene indicator at word level; unassigned tokens see and are seen by
// everything.
std::vector<char> same_scene(const SceneCover& cover) {
  const int n = cover.length;
  std::vector<char> same(static_cast<std::size_t>(n) * n, 0);
  for (const auto& s : cover.scenes)
    for (int i : s.tokens)
      for (int j : s.tokens) same[static_cast<std::size_t>(i) * n + j] = 1;
  for (int u : cover.unassigned) {
    for (int j = 0; j < n; ++j) {
      same[static_cast<std::size_t>(u) * n + j] = 1;
      same[static_cast<std::size_t>(j) * n + u] = 1;
    }
  }
  return same;
}

}  // namespace

std::string to_string(MaskFamily family) {
  switch (family) {
    case MaskFamily::Binary: return "binary";
    case MaskFamily::Scaled: return "scaled";
    case MaskFamily::NormalScene: return "normal";
    case MaskFamily::Pascal: return "pascal";
    case MaskFamily::Udiscal: return "udiscal";
  }
  return "?";
}

MaskFamily parse_mask_family(std::string_view name) {
  for (auto f : {MaskFamily::Binary, MaskFamily::Scaled, MaskFamily::NormalScene,
                 MaskFamily::Pascal, MaskFamily::Udiscal})
    if (to_string(f) == name) return f;
  throw ConfigError("unknown mask family \"" + std::string(name) + "\"");
}

bool is_scene_family(MaskFamily family) {
  return family == MaskFamily::Binary || family == MaskFamily::Scaled ||
         family == MaskFamily::NormalScene;
}

bool Mask::symmetric(double tol) const {
  if (!square()) return false;
  for (int i = 0; i < rows_; ++i)
    for (int j = i + 1; j < cols_; ++j)
      if (std::abs(at(i, j) - at(j, i)) > tol) return false;
  return true;
}

double MaskSpec::sigma() const {
  return family == MaskFamily::NormalScene ? kSceneSigma : 1.0;
}

void MaskSpec::validate() const {
  if (family == MaskFamily::Scaled && !(c > 0.0 && c < 1.0))
    throw ConfigError("scaled mask needs C in (0,1), got " + std::to_string(c));
  if (family == MaskFamily::NormalScene && !(c > 0.0))
    throw ConfigError("normally distributed mask needs C > 0, got " + std::to_string(c));
}

void Alignment::validate() const {
  int next = 0;
  for (std::size_t w = 0; w < ranges.size(); ++w) {
    const auto [first, last] = ranges[w];
    if (first != next || last < first)
      throw AlignmentError("word " + std::to_string(w) + " maps to [" + std::to_string(first) +
                           "," + std::to_string(last) + "], expected to start at " +
                           std::to_string(next));
    next = last + 1;
  }
}

std::vector<int> Alignment::subword_owners() const {
  validate();
  std::vector<int> owner(subwords());
  for (int w = 0; w < words(); ++w)
    for (int s = ranges[w].first; s <= ranges[w].second; ++s) owner[s] = w;
  return owner;
}

Alignment Alignment::identity(int words) {
  Alignment a;
  for (int w = 0; w < words; ++w) a.ranges.push_back({w, w});
  return a;
}

double f_norm(double x, double sigma) {
  const double var = sigma * sigma;
  return std::exp(-x * x / (2.0 * var)) / std::sqrt(2.0 * std::numbers::pi * var);
}

Mask binary_scene_mask(const SceneCover& cover) {
  const int n = cover.length;
  const auto same = same_scene(cover);
  Mask m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m.at(i, j) = same[static_cast<std::size_t>(i) * n + j] ? 1.0 : 0.0;
  return m;
}

Mask scaled_scene_mask(const SceneCover& cover, double c) {
  MaskSpec::scaled(c).validate();
  Mask m = binary_scene_mask(cover);
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j)
      if (m.at(i, j) == 0.0) m.at(i, j) = c;
  return m;
}

Mask normal_scene_mask(const SceneCover& cover, double c) {
  MaskSpec::normal_scene(c).validate();
  const int n = cover.length;
  const DistanceMatrix dist = scene_distance(cover);
  Mask m(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (!cover.is_assigned(i) || !cover.is_assigned(j)) {
        m.at(i, j) = 1.0;
      } else if (dist.finite(i, j)) {
        // f_norm(0, 1/sqrt(2*pi)) may round a hair above 1.
        m.at(i, j) = std::min(1.0, f_norm(c * dist.at(i, j), kSceneSigma));
      }
    }
  }
  return m;
}

Mask scene_mask(const SceneCover& cover, const MaskSpec& spec, const Alignment& align) {
  if (align.words() != cover.length)
    throw DimensionError("alignment has " + std::to_string(align.words()) +
                         " words but the cover has " + std::to_string(cover.length));
  switch (spec.family) {
    case MaskFamily::Binary: return expand_to_subwords(binary_scene_mask(cover), align);
    case MaskFamily::Scaled: return expand_to_subwords(scaled_scene_mask(cover, spec.c), align);
    case MaskFamily::NormalScene:
      return expand_to_subwords(normal_scene_mask(cover, spec.c), align);
    default: break;
  }
  throw ConfigError(to_string(spec.family) + " is not a scene mask family");
}

Mask pascal_mask(const UdGraph& ud, const Alignment& align) {
  check_alignment_size(ud, align);
  const auto owner = align.subword_owners();
  const int n = align.subwords();
  Mask m(n, n);
  for (int t = 0; t < n; ++t) {
    const int word = owner[t];
    const int parent = ud.heads[word] == UdGraph::kRoot ? word : ud.heads[word];
    const double centre = align.midpoint(parent);
    for (int j = 0; j < n; ++j) m.at(t, j) = f_norm(j - centre, 1.0);
  }
  return m;
}

Mask udiscal_mask(const UdGraph& ud, const Alignment& align) {
  check_alignment_size(ud, align);
  const DistanceMatrix dist = ud_distance(ud);
  const int n = ud.length();
  Mask words(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) words.at(i, j) = f_norm(dist.at(i, j), 1.0);
  return expand_to_subwords(words, align);
}

Mask expand_to_subwords(const Mask& word_mask, const Alignment& align) {
  if (!word_mask.square() || word_mask.rows() != align.words())
    throw DimensionError("word mask is " + std::to_string(word_mask.rows()) + "x" +
                         std::to_string(word_mask.cols()) + " but alignment has " +
                         std::to_string(align.words()) + " words");
  const auto owner = align.subword_owners();
  const int n = align.subwords();
  Mask m(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) m.at(a, b) = word_mask.at(owner[a], owner[b]);
  return m;
}

std::string serialize_mask(const Mask& mask, MaskFamily family) {
  std::string out = "M " + std::to_string(mask.rows()) + ' ' + std::to_string(mask.cols()) +
                    ' ' + to_string(family) + '\n';
  char buf[32];
  for (int i = 0; i < mask.rows(); ++i) {
    for (int j = 0; j < mask.cols(); ++j) {
      const auto res = std::to_chars(buf, buf + sizeof buf, mask.at(i, j));
      if (j) out += ' ';
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  return out;
}

std::vector<LabeledMask> parse_masks(std::string_view text) {
  std::vector<LabeledMask> out;
  const auto lines = detail::split_lines(text);
  std::size_t k = 0;
  while (k < lines.size()) {
    if (detail::is_blank(lines[k])) {
      ++k;
      continue;
    }
    auto header = detail::split_ws(lines[k]);
    if (header.size() != 4 || header[0] != "M")
      throw ParseError("expected \"M <rows> <cols> <family>\"", k + 1);
    auto rows = detail::parse_int(header[1]);
    auto cols = detail::parse_int(header[2]);
    if (!rows || !cols || *rows < 0 || *cols < 0) throw ParseError("bad mask dimensions", k + 1);
    MaskFamily family;
    try {
      family = parse_mask_family(header[3]);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), k + 1);
    }
    Mask m(static_cast<int>(*rows), static_cast<int>(*cols));
    ++k;
    for (int i = 0; i < m.rows(); ++i, ++k) {
      if (k >= lines.size()) throw ParseError("mask ends early", k);
      auto fields = detail::split_ws(lines[k]);
      if (static_cast<int>(fields.size()) != m.cols())
        throw ParseError("expected " + std::to_string(m.cols()) + " values", k + 1);
      for (int j = 0; j < m.cols(); ++j) {
        std::string field(fields[j]);
        char* end = nullptr;
        double v = std::strtod(field.c_str(), &end);
        if (end != field.c_str() + field.size() || !(v >= 0.0 && v <= 1.0))
          throw ParseError("mask value \"" + field + "\" is not in [0,1]", k + 1);
        m.at(i, j) = v;
      }
    }
    out.push_back({std::move(m), family});
  }
  return out;
}

}  // namespace semtx
