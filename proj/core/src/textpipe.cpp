#include "semtx/textpipe.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

#include "semtx/error.hpp"
#include "text_util.hpp"

namespace semtx {

namespace {

bool ends_with_marker(std::string_view s) {
  return s.size() >= kEndOfWord.size() && s.substr(s.size() - kEndOfWord.size()) == kEndOfWord;
}

// Merges every left-to-right occurrence of (a, b) in place.
void merge_pair(std::vector<std::string>& symbols, const std::string& a, const std::string& b) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == a && symbols[i + 1] == b) {
      out.push_back(a + b);
      ++i;
    } else {
      out.push_back(std::move(symbols[i]));
    }
  }
  symbols = std::move(out);
}

std::vector<std::string> initial_symbols(std::string_view word) {
  auto chars = utf8_chars(word);
  if (!chars.empty()) chars.back() += kEndOfWord;
  return chars;
}

}  // namespace

bool passes_length_filters(const ParallelPair& pair, const FilterConfig& cfg) {
  const std::size_t s = pair.src.size(), t = pair.trg.size();
  if (s == 0 || t == 0) return false;
  if (s > cfg.max_len || t > cfg.max_len) return false;
  const double ratio = static_cast<double>(std::max(s, t)) / static_cast<double>(std::min(s, t));
  return ratio <= cfg.max_ratio;
}

std::vector<ParallelPair> filter_corpus(std::vector<ParallelPair> pairs, const FilterConfig& cfg) {
  std::vector<ParallelPair> kept;
  for (auto& pair : pairs) {
    for (const auto& transform : cfg.transforms) pair = transform(std::move(pair));
    if (!passes_length_filters(pair, cfg)) continue;
    if (!std::all_of(cfg.predicates.begin(), cfg.predicates.end(), [&](const auto& p) { return p(pair); }))
      continue;
    kept.push_back(std::move(pair));
  }
  return kept;
}

Tokens tokenize(std::string_view line) {
  Tokens out;
  for (auto t : detail::split_ws(line)) out.emplace_back(t);
  return out;
}

std::string detokenize(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::vector<ParallelPair> read_parallel(std::string_view src_text, std::string_view trg_text) {
  const auto src = detail::split_lines(src_text);
  const auto trg = detail::split_lines(trg_text);
  if (src.size() != trg.size())
    throw ParseError("source has " + std::to_string(src.size()) + " lines, target has " +
                         std::to_string(trg.size()),
                     std::min(src.size(), trg.size()) + 1);
  std::vector<ParallelPair> out;
  for (std::size_t i = 0; i < src.size(); ++i)
    out.push_back({tokenize(src[i]), tokenize(trg[i]), "line " + std::to_string(i + 1)});
  return out;
}

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = lead < 0x80 ? 1 : (lead >> 5) == 0x6 ? 2 : (lead >> 4) == 0xE ? 3 : (lead >> 3) == 0x1E ? 4 : 1;
    len = std::min(len, text.size() - i);
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

BpeModel::BpeModel(std::vector<std::pair<std::string, std::string>> merges) : merges_(std::move(merges)) {
  for (std::size_t i = 0; i < merges_.size(); ++i) rank_.emplace(merges_[i], i);
}

std::vector<std::string> BpeModel::vocabulary() const {
  std::vector<std::string> out;
  for (const auto& [a, b] : merges_) out.push_back(a + b);
  return out;
}

Tokens BpeModel::apply(std::string_view word) const {
  auto symbols = initial_symbols(word);
  while (symbols.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    const std::pair<std::string, std::string>* best = nullptr;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = rank_.find({symbols[i], symbols[i + 1]});
      if (it != rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        best = &it->first;
      }
    }
    if (!best) break;
    merge_pair(symbols, best->first, best->second);
  }
  return symbols;
}

Tokens BpeModel::apply_sentence(const Tokens& words) const {
  Tokens out;
  for (const auto& w : words) {
    auto pieces = apply(w);
    out.insert(out.end(), pieces.begin(), pieces.end());
  }
  return out;
}

std::string BpeModel::serialize() const {
  std::string out;
  for (const auto& [a, b] : merges_) out += a + ' ' + b + '\n';
  return out;
}

BpeModel BpeModel::parse(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> merges;
  std::size_t number = 0;
  for (auto line : detail::split_lines(text)) {
    ++number;
    if (detail::is_blank(line)) continue;
    auto f = detail::split_ws(line);
    if (f.size() != 2) throw ParseError("expected \"left right\"", number);
    merges.emplace_back(std::string(f[0]), std::string(f[1]));
  }
  return BpeModel(std::move(merges));
}

BpeModel train_bpe(const std::vector<Tokens>& corpus, int merges) {
  if (merges < 0) throw ConfigError("merge count must be >= 0");
  std::map<std::string, long long> freq;
  for (const auto& sentence : corpus)
    for (const auto& w : sentence) ++freq[w];
  std::vector<std::pair<std::vector<std::string>, long long>> words;
  for (const auto& [w, n] : freq) words.push_back({initial_symbols(w), n});

  std::vector<std::pair<std::string, std::string>> learned;
  for (int m = 0; m < merges; ++m) {
    std::map<std::pair<std::string, std::string>, long long> pairs;
    for (const auto& [symbols, n] : words)
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) pairs[{symbols[i], symbols[i + 1]}] += n;
    if (pairs.empty()) break;
    // std::map iterates in lexicographic order, so the first maximum wins ties.
    auto best = pairs.begin();
    for (auto it = pairs.begin(); it != pairs.end(); ++it)
      if (it->second > best->second) best = it;
    for (auto& [symbols, n] : words) merge_pair(symbols, best->first.first, best->first.second);
    learned.push_back(best->first);
  }
  return BpeModel(std::move(learned));
}

Tokens apply_bpe(const BpeModel& model, std::string_view word) { return model.apply(word); }

std::string strip_marker(std::string_view subword) {
  if (ends_with_marker(subword)) subword.remove_suffix(kEndOfWord.size());
  return std::string(subword);
}

Tokens join_subwords(const Tokens& subwords) {
  Tokens words;
  std::string current;
  bool open = false;
  for (const auto& s : subwords) {
    current += strip_marker(s);
    open = true;
    if (ends_with_marker(s)) {
      words.push_back(std::move(current));
      current.clear();
      open = false;
    }
  }
  if (open) words.push_back(std::move(current));
  return words;
}

Alignment word_subword_alignment(const Tokens& words, const Tokens& subwords) {
  Alignment align;
  std::size_t s = 0;
  for (std::size_t w = 0; w < words.size(); ++w) {
    const std::string& word = words[w];
    if (word.empty()) throw AlignmentError("word " + std::to_string(w) + " is empty");
    const std::size_t first = s;
    std::string built;
    while (built.size() < word.size()) {
      if (s == subwords.size())
        throw AlignmentError("subwords run out inside word " + std::to_string(w) + " \"" + word + "\"");
      std::string piece = strip_marker(subwords[s]);
      if (piece.empty()) throw AlignmentError("subword " + std::to_string(s) + " is empty");
      built += piece;
      ++s;
    }
    if (built != word)
      throw AlignmentError("subwords " + std::to_string(first) + ".." + std::to_string(s - 1) + " spell \"" +
                           built + "\", expected \"" + word + "\"");
    align.ranges.push_back({static_cast<int>(first), static_cast<int>(s - 1)});
  }
  if (s != subwords.size())
    throw AlignmentError(std::to_string(subwords.size() - s) + " subwords left after the last word");
  return align;
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids.find(token);
  return it == ids.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode(const Tokens& sentence) const {
  std::vector<int> out;
  out.reserve(sentence.size());
  for (const auto& t : sentence) out.push_back(id(t));
  return out;
}

Tokens Vocabulary::decode(std::span<const int> seq) const {
  Tokens out;
  for (int i : seq) {
    if (i == kEos) break;
    if (i == kBos || i == kPad) continue;
    out.push_back(i >= 0 && i < size() ? tokens[i] : tokens[kUnk]);
  }
  return out;
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (const auto& t : tokens) out += t + '\n';
  return out;
}

Vocabulary Vocabulary::parse(std::string_view text) {
  std::vector<std::string> tokens;
  for (auto line : detail::split_lines(text)) tokens.emplace_back(line);
  if (tokens.size() < 4 || tokens[kPad] != "<pad>" || tokens[kBos] != "<s>" || tokens[kEos] != "</s>" ||
      tokens[kUnk] != "<unk>")
    throw ParseError("vocabulary must start with <pad> <s> </s> <unk>", 1);
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::build(const std::vector<Tokens>& corpus) {
  std::map<std::string, long long> freq;
  for (const auto& s : corpus)
    for (const auto& t : s) ++freq[t];
  std::vector<std::pair<std::string, long long>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens{"<pad>", "<s>", "</s>", "<unk>"};
  for (auto& [t, n] : ranked)
    if (t != "<pad>" && t != "<s>" && t != "</s>" && t != "<unk>") tokens.push_back(t);
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  v.tokens = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens.size(); ++i)
    if (!v.ids.emplace(v.tokens[i], static_cast<int>(i)).second)
      throw ParseError("duplicate vocabulary entry \"" + v.tokens[i] + "\"", i + 1);
  return v;
}

}  // namespace semtx
