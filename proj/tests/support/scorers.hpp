#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <vector>

#include "semtx/model.hpp"

namespace semtx::testing {

// Scripted next-token distributions over {EOS=0, 1, 2}.
//   []      -> 1: .6, 2: .4
//   [1]     -> 1: .45, 2: .55
//   [2]     -> 1: .9, 2: .1
//   [2,1]   -> EOS: .9, 1: .05, 2: .05
//   other length-2 prefixes -> uniform
//   length >= 3 -> EOS
// Greedy follows 1 -> 2 -> ...; the best sequence is [2, 1, EOS].
class ThreeStepScorer : public StepScorer {
 public:
  std::vector<double> next_log_probs(std::span<const int> prefix) override {
    ++calls;
    const std::vector<int> p(prefix.begin(), prefix.end());
    std::vector<double> probs;
    if (p.empty()) probs = {0.0, 0.6, 0.4};
    else if (p == std::vector<int>{1}) probs = {0.0, 0.45, 0.55};
    else if (p == std::vector<int>{2}) probs = {0.0, 0.9, 0.1};
    else if (p == std::vector<int>{2, 1}) probs = {0.9, 0.05, 0.05};
    else if (p.size() == 2) probs = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    else probs = {1.0, 0.0, 0.0};
    std::vector<double> lp;
    for (double q : probs) lp.push_back(q > 0 ? std::log(q) : -std::numeric_limits<double>::infinity());
    return lp;
  }
  int eos() const override { return 0; }
  int calls = 0;
};

// Every finished sequence up to max_len, scored as beam search scores them.
inline DecodeResult exhaustive_search(StepScorer& scorer, const DecodeConfig& cfg) {
  DecodeResult best;
  bool have = false;
  std::function<void(std::vector<int>&, double)> walk = [&](std::vector<int>& prefix, double lp) {
    if (static_cast<int>(prefix.size()) == cfg.max_len) return;
    const auto next = scorer.next_log_probs(prefix);
    for (std::size_t t = 0; t < next.size(); ++t) {
      if (std::isinf(next[t])) continue;
      prefix.push_back(static_cast<int>(t));
      const double total = lp + next[t];
      if (static_cast<int>(t) == scorer.eos()) {
        const double score = total / length_penalty(static_cast<int>(prefix.size()), cfg.alpha);
        if (!have || score > best.score || (score == best.score && prefix < best.tokens)) {
          best = DecodeResult{prefix, total, score, true};
          have = true;
        }
      } else {
        walk(prefix, total);
      }
      prefix.pop_back();
    }
  };
  std::vector<int> prefix;
  walk(prefix, 0.0);
  return best;
}

}  // namespace semtx::testing
