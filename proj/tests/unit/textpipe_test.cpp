#include <gtest/gtest.h>

#include <random>

#include "semtx/error.hpp"
#include "semtx/textpipe.hpp"

using namespace semtx;

namespace {

ParallelPair pair_of(int s, int t) {
  return {Tokens(static_cast<std::size_t>(s), "x"), Tokens(static_cast<std::size_t>(t), "y"), ""};
}

std::string random_word(std::mt19937_64& rng) {
  static const std::string alphabet = "abcdefg";
  std::string w;
  const int n = 1 + static_cast<int>(rng() % 7);
  for (int i = 0; i < n; ++i) w += alphabet[rng() % alphabet.size()];
  return w;
}

}  // namespace

TEST(Filter, Boundaries) {
  FilterConfig cfg;
  EXPECT_TRUE(passes_length_filters(pair_of(10, 10), cfg));
  EXPECT_TRUE(passes_length_filters(pair_of(9, 6), cfg));
  EXPECT_TRUE(passes_length_filters(pair_of(6, 9), cfg));
  EXPECT_FALSE(passes_length_filters(pair_of(10, 6), cfg));
  EXPECT_TRUE(passes_length_filters(pair_of(100, 100), cfg));
  EXPECT_FALSE(passes_length_filters(pair_of(101, 100), cfg));
  EXPECT_FALSE(passes_length_filters(pair_of(0, 3), cfg));
}

TEST(Filter, HooksRunInOrderAndKeepOrder) {
  FilterConfig cfg;
  cfg.transforms.push_back([](ParallelPair p) {
    if (!p.src.empty() && p.src[0] == "&amp;") p.src[0] = "&";
    return p;
  });
  cfg.predicates.push_back([](const ParallelPair& p) { return p.metadata != "reject"; });
  std::vector<ParallelPair> pairs{{{"&amp;", "b"}, {"c", "d"}, "1"},
                                  {{"a"}, {"b"}, "reject"},
                                  {{"a", "b", "c"}, {"x"}, "2"},
                                  {{"z"}, {"w"}, "3"}};
  const auto kept = filter_corpus(pairs, cfg);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].src[0], "&");
  EXPECT_EQ(kept[1].metadata, "3");
}

TEST(Filter, IdempotentAndEveryKeptPairPasses) {
  std::mt19937_64 rng(31);
  std::vector<ParallelPair> pairs;
  for (int i = 0; i < 300; ++i) pairs.push_back(pair_of(static_cast<int>(rng() % 120), static_cast<int>(rng() % 120)));
  FilterConfig cfg;
  const auto once = filter_corpus(pairs, cfg);
  EXPECT_EQ(filter_corpus(once, cfg), once);
  for (const auto& p : once) {
    EXPECT_LE(p.src.size(), 100u);
    EXPECT_LE(p.trg.size(), 100u);
    EXPECT_LE(static_cast<double>(std::max(p.src.size(), p.trg.size())) / std::min(p.src.size(), p.trg.size()), 1.5);
  }
}

TEST(Corpus, ReadParallel) {
  const auto pairs = read_parallel("a b\nc\n", "x\ny z\n");
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[1].trg, (Tokens{"y", "z"}));
  EXPECT_THROW(read_parallel("a\nb\n", "x\n"), ParseError);
  EXPECT_EQ(detokenize(tokenize("  a  b\tc ")), "a b c");
}

TEST(Bpe, ZeroMergesSplitsIntoCharacters) {
  const auto model = train_bpe({{"low", "low", "lower"}}, 0);
  EXPECT_TRUE(model.merges().empty());
  EXPECT_EQ(apply_bpe(model, "low"), (Tokens{"l", "o", "w</w>"}));
}

TEST(Bpe, HandSimulatedMerges) {
  const auto model = train_bpe({{"low", "low", "lower"}}, 3);
  using P = std::pair<std::string, std::string>;
  ASSERT_EQ(model.merges().size(), 3u);
  EXPECT_EQ(model.merges()[0], (P{"l", "o"}));
  EXPECT_EQ(model.merges()[1], (P{"lo", "w</w>"}));
  EXPECT_EQ(model.merges()[2], (P{"e", "r</w>"}));
  EXPECT_EQ(apply_bpe(model, "low"), Tokens{"low</w>"});
  EXPECT_EQ(apply_bpe(model, "lower"), (Tokens{"lo", "w", "er</w>"}));
}

TEST(Bpe, StopsWhenNothingIsLeftToMerge) {
  const auto model = train_bpe({{"ab"}}, 10);
  EXPECT_EQ(model.merges().size(), 1u);
  EXPECT_THROW(train_bpe({{"ab"}}, -1), ConfigError);
}

TEST(Bpe, ApplyThenJoinIsIdentity) {
  std::mt19937_64 rng(32);
  std::vector<Tokens> corpus;
  for (int s = 0; s < 30; ++s) {
    Tokens sent;
    for (int w = 0; w < 6; ++w) sent.push_back(random_word(rng));
    corpus.push_back(sent);
  }
  const auto model = train_bpe(corpus, 40);
  for (const auto& sent : corpus) {
    const auto pieces = model.apply_sentence(sent);
    EXPECT_EQ(join_subwords(pieces), sent);
    EXPECT_EQ(model.apply_sentence(sent), pieces);  // deterministic
  }
  // Unseen words and UTF-8 survive too.
  const Tokens odd{"zzz", "héllo", "日本"};
  EXPECT_EQ(join_subwords(model.apply_sentence(odd)), odd);
}

TEST(Bpe, FileRoundTrip) {
  const auto model = train_bpe({{"low", "low", "lower", "newest", "widest"}}, 8);
  const auto again = BpeModel::parse(model.serialize());
  EXPECT_EQ(again.merges(), model.merges());
  EXPECT_THROW(BpeModel::parse("a b c\n"), ParseError);
}

TEST(Alignment, IdentityAndSplitWord) {
  EXPECT_EQ(word_subword_alignment({"a", "b"}, {"a</w>", "b</w>"}).ranges,
            (std::vector<std::pair<int, int>>{{0, 0}, {1, 1}}));
  const auto a = word_subword_alignment({"the", "lower"}, {"the</w>", "low", "er</w>"});
  EXPECT_EQ(a.ranges, (std::vector<std::pair<int, int>>{{0, 0}, {1, 2}}));
}

TEST(Alignment, Mismatches) {
  EXPECT_THROW(word_subword_alignment({"ab"}, {"a", "c</w>"}), AlignmentError);
  EXPECT_THROW(word_subword_alignment({"ab"}, {"a"}), AlignmentError);
  EXPECT_THROW(word_subword_alignment({"ab"}, {"ab</w>", "c</w>"}), AlignmentError);
  EXPECT_THROW(word_subword_alignment({"a", "b"}, {"ab</w>"}), AlignmentError);
}

TEST(Alignment, FuzzRandomSplits) {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 300; ++trial) {
    Tokens words, subwords;
    const int n = 1 + static_cast<int>(rng() % 8);
    for (int w = 0; w < n; ++w) {
      words.push_back(random_word(rng));
      const auto& word = words.back();
      std::size_t start = 0;
      while (start < word.size()) {
        const std::size_t len = 1 + rng() % (word.size() - start);
        subwords.push_back(word.substr(start, len));
        start += len;
      }
      subwords.back() += "</w>";
    }
    const auto align = word_subword_alignment(words, subwords);
    EXPECT_NO_THROW(align.validate());
    EXPECT_EQ(align.words(), n);
    EXPECT_EQ(align.subwords(), static_cast<int>(subwords.size()));
    for (int w = 0; w < n; ++w) {
      std::string built;
      for (int s = align.ranges[w].first; s <= align.ranges[w].second; ++s) built += strip_marker(subwords[s]);
      EXPECT_EQ(built, words[w]);
    }
  }
}

TEST(Vocabulary, BuildEncodeDecode) {
  const auto vocab = Vocabulary::build({{"b", "a", "b"}, {"c", "a", "b"}});
  EXPECT_EQ(vocab.tokens, (std::vector<std::string>{"<pad>", "<s>", "</s>", "<unk>", "b", "a", "c"}));
  EXPECT_EQ(vocab.encode({"a", "zzz"}), (std::vector<int>{5, Vocabulary::kUnk}));
  const std::vector<int> ids{Vocabulary::kBos, 4, 6, Vocabulary::kEos, 5};
  EXPECT_EQ(vocab.decode(ids), (Tokens{"b", "c"}));
  EXPECT_EQ(Vocabulary::parse(vocab.serialize()).tokens, vocab.tokens);
  EXPECT_THROW(Vocabulary::parse("a\nb\n"), ParseError);
  EXPECT_THROW(Vocabulary::from_tokens({"<pad>", "<s>", "</s>", "<unk>", "x", "x"}), ParseError);
}
