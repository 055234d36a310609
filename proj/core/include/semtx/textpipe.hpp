#pragma once

// Corpus preparation: length/ratio filtering with pluggable hooks, byte-pair
// encoding, word/subword alignment and token vocabularies.

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "semtx/masks.hpp"

namespace semtx {

using Tokens = std::vector<std::string>;

struct ParallelPair {
  Tokens src;
  Tokens trg;
  std::string metadata;

  bool operator==(const ParallelPair&) const = default;
};

// Returns true to keep the pair (language id, alignment score, ...).
using PairPredicate = std::function<bool(const ParallelPair&)>;
// Rewrites a pair before filtering (HTML unescaping, truecasing, ...).
using PairTransform = std::function<ParallelPair(ParallelPair)>;

struct FilterConfig {
  std::size_t max_len = 100;
  double max_ratio = 1.5;
  std::vector<PairTransform> transforms;
  std::vector<PairPredicate> predicates;
};

// Length and ratio rules only; a pair exactly at a bound is kept.
bool passes_length_filters(const ParallelPair& pair, const FilterConfig& cfg);

// Applies transforms, drops empty / too long / too unbalanced pairs, then runs
// the injected predicates. Order of surviving pairs is preserved.
std::vector<ParallelPair> filter_corpus(std::vector<ParallelPair> pairs, const FilterConfig& cfg);

Tokens tokenize(std::string_view line);
std::string detokenize(const Tokens& tokens);

// Pairs two line-aligned corpora; throws ParseError on a line-count mismatch.
std::vector<ParallelPair> read_parallel(std::string_view src_text, std::string_view trg_text);

// --- BPE --------------------------------------------------------------------------

inline constexpr std::string_view kEndOfWord = "</w>";

class BpeModel {
 public:
  BpeModel() = default;
  explicit BpeModel(std::vector<std::pair<std::string, std::string>> merges);

  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
  // Symbols the merges can produce, in merge order.
  std::vector<std::string> vocabulary() const;

  Tokens apply(std::string_view word) const;
  Tokens apply_sentence(const Tokens& words) const;

  std::string serialize() const;  // "left right" per line
  static BpeModel parse(std::string_view text);

 private:
  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::pair<std::string, std::string>, std::size_t> rank_;
};

// Greedy most-frequent-pair merging; ties go to the lexicographically
// smallest pair. Stops early when no pair is left.
BpeModel train_bpe(const std::vector<Tokens>& corpus, int merges);

Tokens apply_bpe(const BpeModel& model, std::string_view word);

// Splits into UTF-8 code points.
std::vector<std::string> utf8_chars(std::string_view text);

// Removes end-of-word markers and glues subwords back into words.
Tokens join_subwords(const Tokens& subwords);
std::string strip_marker(std::string_view subword);

// Contiguous subword range per word. The marker-stripped subwords must
// concatenate to the words without any subword straddling a boundary.
Alignment word_subword_alignment(const Tokens& words, const Tokens& subwords);

// --- vocabulary ---------------------------------------------------------------------

struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  std::vector<std::string> tokens;  // index = id
  std::map<std::string, int, std::less<>> ids;

  int size() const { return static_cast<int>(tokens.size()); }
  int id(std::string_view token) const;
  std::vector<int> encode(const Tokens& sentence) const;
  // Stops at EOS; drops BOS and PAD.
  Tokens decode(std::span<const int> ids) const;

  std::string serialize() const;
  static Vocabulary parse(std::string_view text);
  // Specials first, then tokens by descending frequency, ties alphabetical.
  static Vocabulary build(const std::vector<Tokens>& corpus);
  static Vocabulary from_tokens(std::vector<std::string> tokens);
};

}  // namespace semtx
