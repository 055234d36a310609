#pragma once

// Corpus-level BLEU and chrF+, and the exact one-sided sign test.

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace semtx {

struct ScoreReport {
  std::string metric;
  double score = 0.0;  // corpus level, 0..100
  std::vector<double> sentence_scores;

  std::size_t sentences() const { return sentence_scores.size(); }
};

// BLEU-4 over whitespace tokens with clipped counts and the brevity penalty.
// No smoothing: any zero precision gives 0. Orders for which the hypotheses
// hold no n-grams at all are left out of the geometric mean.
ScoreReport bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references);

// chrF with word n-grams (chrF+ for word_n = 1). Character n-grams ignore
// whitespace. An order is skipped only when neither side has any n-gram of
// it; otherwise an empty side scores 0. P and R are arithmetic means over the
// included orders.
ScoreReport chrf(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                 double beta = 3.0, int word_n = 1, int char_n = 6);

// One-sided exact sign test that B improves on A. Ties are discarded;
// throws UndefinedResultError when nothing is left.
double sign_test(std::span<const double> a, std::span<const double> b);

// "metric=<name> score=<%.2f> n=<sentences>"
std::string format_report(const ScoreReport& report);
std::string format_sentence_scores(const ScoreReport& report);  // "<index>\t<score>" per line

struct ReportLine {
  std::string metric;
  double score = 0.0;
  std::size_t sentences = 0;
};
std::vector<ReportLine> parse_reports(std::string_view text);

}  // namespace semtx
