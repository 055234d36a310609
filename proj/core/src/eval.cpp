#include "semtx/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "semtx/error.hpp"
#include "semtx/textpipe.hpp"
#include "text_util.hpp"

namespace semtx {

namespace {

using Counts = std::map<std::vector<std::string>, int>;

Counts ngrams(const std::vector<std::string>& units, int n) {
  Counts out;
  for (std::size_t i = 0; i + n <= units.size(); ++i)
    ++out[std::vector<std::string>(units.begin() + i, units.begin() + i + n)];
  return out;
}

struct OrderStats {
  long long matches = 0;
  long long hyp = 0;
  long long ref = 0;

  OrderStats& operator+=(const OrderStats& o) {
    matches += o.matches;
    hyp += o.hyp;
    ref += o.ref;
    return *this;
  }
};

OrderStats compare(const std::vector<std::string>& hyp, const std::vector<std::string>& ref, int n) {
  OrderStats s;
  const Counts h = ngrams(hyp, n), r = ngrams(ref, n);
  for (const auto& [g, c] : h) {
    s.hyp += c;
    if (auto it = r.find(g); it != r.end()) s.matches += std::min(c, it->second);
  }
  for (const auto& [g, c] : r) s.ref += c;
  return s;
}

void check_sizes(std::size_t hyps, std::size_t refs) {
  if (hyps != refs)
    throw ContractError(std::to_string(hyps) + " hypotheses for " + std::to_string(refs) + " references");
}

struct BleuStats {
  OrderStats orders[4];
  long long hyp_len = 0;
  long long ref_len = 0;
};

BleuStats bleu_stats(const std::string& hyp, const std::string& ref) {
  BleuStats s;
  const Tokens h = tokenize(hyp), r = tokenize(ref);
  s.hyp_len = static_cast<long long>(h.size());
  s.ref_len = static_cast<long long>(r.size());
  for (int n = 1; n <= 4; ++n) s.orders[n - 1] = compare(h, r, n);
  return s;
}

double bleu_from(const BleuStats& s) {
  if (s.hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  int used = 0;
  for (const auto& o : s.orders) {
    if (o.hyp == 0) continue;
    if (o.matches == 0) return 0.0;
    log_sum += std::log(static_cast<double>(o.matches) / static_cast<double>(o.hyp));
    ++used;
  }
  const double bp = std::exp(std::min(0.0, 1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len)));
  return 100.0 * bp * std::exp(log_sum / used);
}

std::vector<OrderStats> chrf_stats(const std::string& hyp, const std::string& ref, int word_n, int char_n) {
  auto chars = [](const std::string& s) {
    std::vector<std::string> out;
    for (auto& c : utf8_chars(s))
      if (c != " " && c != "\t" && c != "\n" && c != "\r") out.push_back(std::move(c));
    return out;
  };
  const auto hc = chars(hyp), rc = chars(ref);
  const Tokens hw = tokenize(hyp), rw = tokenize(ref);
  std::vector<OrderStats> out;
  for (int n = 1; n <= char_n; ++n) out.push_back(compare(hc, rc, n));
  for (int n = 1; n <= word_n; ++n) out.push_back(compare(hw, rw, n));
  return out;
}

double chrf_from(const std::vector<OrderStats>& orders, double beta) {
  double p = 0.0, r = 0.0;
  int used = 0;
  for (const auto& o : orders) {
    if (o.hyp == 0 && o.ref == 0) continue;
    p += o.hyp ? static_cast<double>(o.matches) / static_cast<double>(o.hyp) : 0.0;
    r += o.ref ? static_cast<double>(o.matches) / static_cast<double>(o.ref) : 0.0;
    ++used;
  }
  if (used == 0) return 0.0;
  p /= used;
  r /= used;
  const double b2 = beta * beta;
  if (b2 * p + r == 0.0) return 0.0;
  return 100.0 * (1.0 + b2) * p * r / (b2 * p + r);
}

}  // namespace

ScoreReport bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references) {
  check_sizes(hypotheses.size(), references.size());
  ScoreReport report{"bleu", 0.0, {}};
  BleuStats total;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const BleuStats s = bleu_stats(hypotheses[i], references[i]);
    report.sentence_scores.push_back(bleu_from(s));
    for (int n = 0; n < 4; ++n) total.orders[n] += s.orders[n];
    total.hyp_len += s.hyp_len;
    total.ref_len += s.ref_len;
  }
  report.score = bleu_from(total);
  return report;
}

ScoreReport chrf(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                 double beta, int word_n, int char_n) {
  check_sizes(hypotheses.size(), references.size());
  if (!(beta > 0.0) || word_n < 0 || char_n < 0 || word_n + char_n == 0)
    throw ConfigError("chrF needs beta > 0 and at least one n-gram order");
  ScoreReport report{word_n > 0 ? "chrf+" : "chrf", 0.0, {}};
  std::vector<OrderStats> total(static_cast<std::size_t>(char_n + word_n));
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto s = chrf_stats(hypotheses[i], references[i], word_n, char_n);
    report.sentence_scores.push_back(chrf_from(s, beta));
    for (std::size_t k = 0; k < s.size(); ++k) total[k] += s[k];
  }
  report.score = chrf_from(total, beta);
  return report;
}

double sign_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ContractError("sign test needs paired scores, got " + std::to_string(a.size()) + " and " +
                        std::to_string(b.size()));
  int n = 0, k = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) continue;
    ++n;
    if (b[i] > a[i]) ++k;
  }
  if (n == 0) throw UndefinedResultError("sign test undefined: every pair is tied");
  if (n <= 62) {
    // Exact integer tail, one rounding on the final scaling.
    unsigned __int128 binom = 1, tail = 0;
    for (int i = 0; i <= n; ++i) {
      if (i >= k) tail += binom;
      binom = binom * static_cast<unsigned>(n - i) / static_cast<unsigned>(i + 1);
    }
    return std::ldexp(static_cast<double>(tail), -n);
  }
  const double log_half_n = -n * std::log(2.0);
  double p = 0.0;
  for (int i = k; i <= n; ++i)
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) + log_half_n);
  return std::min(1.0, p);
}

std::string format_report(const ScoreReport& report) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "metric=%s score=%.2f n=%zu", report.metric.c_str(), report.score,
                report.sentences());
  return buf;
}

std::string format_sentence_scores(const ScoreReport& report) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < report.sentence_scores.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu\t%.4f\n", i + 1, report.sentence_scores[i]);
    out += buf;
  }
  return out;
}

std::vector<ReportLine> parse_reports(std::string_view text) {
  std::vector<ReportLine> out;
  std::size_t number = 0;
  for (auto line : detail::split_lines(text)) {
    ++number;
    if (detail::is_blank(line) || line.front() == '#') continue;
    ReportLine r;
    bool have_metric = false, have_score = false;
    for (auto field : detail::split_ws(line)) {
      const auto eq = field.find('=');
      if (eq == std::string_view::npos) throw ParseError("expected key=value", number);
      const auto key = field.substr(0, eq);
      const std::string value(field.substr(eq + 1));
      if (key == "metric") {
        r.metric = value;
        have_metric = true;
      } else if (key == "score") {
        char* end = nullptr;
        r.score = std::strtod(value.c_str(), &end);
        if (end != value.c_str() + value.size()) throw ParseError("bad score", number);
        have_score = true;
      } else if (key == "n") {
        auto v = detail::parse_int(value);
        if (!v || *v < 0) throw ParseError("bad sentence count", number);
        r.sentences = static_cast<std::size_t>(*v);
      }
    }
    if (!have_metric || !have_score) throw ParseError("report line needs metric= and score=", number);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace semtx
