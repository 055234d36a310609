#pragma once

// Desk-scale copy task: 200 pairs of 3..8 symbols drawn from 8 content ids,
// vocabulary of 12 with the four specials. Each source gets a two-scene cover
// that overlaps at the middle token.

#include <random>
#include <vector>

#include "semtx/masks.hpp"
#include "semtx/model.hpp"
#include "semtx/textpipe.hpp"

namespace semtx::testing {

inline constexpr int kCopyVocab = 12;
inline constexpr int kCopyPairs = 200;

struct CopyPair {
  std::vector<int> ids;
  SceneCover cover;
};

inline SceneCover copy_cover(int n) {
  const int mid = n / 2;
  Scene left, right;
  for (int i = 0; i <= mid; ++i) left.tokens.push_back(i);
  for (int i = mid; i < n; ++i) right.tokens.push_back(i);
  left.main_relation = {0};
  right.main_relation = {n - 1};
  return make_cover(n, {left, right});
}

inline std::vector<CopyPair> copy_corpus(std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  std::vector<CopyPair> out;
  for (int k = 0; k < kCopyPairs; ++k) {
    const int n = 3 + static_cast<int>(rng() % 6);
    CopyPair p;
    for (int i = 0; i < n; ++i) p.ids.push_back(4 + static_cast<int>(rng() % 8));
    p.cover = copy_cover(n);
    out.push_back(std::move(p));
  }
  return out;
}

inline ModelConfig copy_model_config() {
  ModelConfig cfg;
  cfg.d_model = 32;
  cfg.heads = 4;
  cfg.d_ff = 64;
  cfg.enc_layers = 4;
  cfg.dec_layers = 4;
  cfg.src_vocab = kCopyVocab;
  cfg.trg_vocab = kCopyVocab;
  cfg.max_len = 32;
  return cfg;
}

inline TrainConfig copy_train_config() {
  TrainConfig cfg;
  cfg.warmup = 400;
  cfg.lr_scale = 2.0;
  cfg.batch_size = 16;
  cfg.steps = 2000;
  cfg.seed = 3;
  return cfg;
}

inline std::vector<TrainingExample> copy_examples(const std::vector<CopyPair>& corpus,
                                                  const std::vector<HeadSpec>& specs) {
  std::vector<TrainingExample> out;
  for (const auto& p : corpus) {
    TrainingExample ex{p.ids, p.ids, {}};
    for (const auto& s : specs)
      ex.masks.push_back(scene_mask(p.cover, s.mask, Alignment::identity(static_cast<int>(p.ids.size()))));
    out.push_back(std::move(ex));
  }
  return out;
}

// Greedy token accuracy, the final EOS included.
inline double copy_accuracy(const Transformer& model, const std::vector<TrainingExample>& data) {
  long correct = 0, total = 0;
  for (const auto& ex : data) {
    TransformerScorer scorer(model, ex.src, ex.masks, Vocabulary::kBos, Vocabulary::kEos);
    const auto out = greedy_search(scorer, static_cast<int>(ex.trg.size()) + 5);
    std::vector<int> gold = ex.trg;
    gold.push_back(Vocabulary::kEos);
    for (std::size_t i = 0; i < gold.size(); ++i) {
      ++total;
      if (i < out.tokens.size() && out.tokens[i] == gold[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace semtx::testing
