#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpe/data_model.hpp"
#include "lpe/rng.hpp"
#include "lpe/tensor.hpp"

namespace lpe {

// ---------------------------------------------------------------------------
// Text normalization: lowercase, strip punctuation except apostrophes,
// collapse whitespace. Applied identically to reference and hypothesis.
// ---------------------------------------------------------------------------

inline std::string normalize_text(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '\'') {
      if (pending_space && !out.empty()) out.push_back(' ');
      pending_space = false;
      out.push_back(static_cast<char>(std::tolower(c)));
    } else {
      pending_space = true;
    }
  }
  return out;
}

inline std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> words;
  std::istringstream is(s);
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

// ---------------------------------------------------------------------------
// WER / CER
// ---------------------------------------------------------------------------

struct TranscriptPair {
  std::string reference;
  std::string hypothesis;
};

enum class EditUnit { word, character };

template <typename Seq>
std::size_t levenshtein(const Seq& ref, const Seq& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

// (S + I + D) / |reference units|. May exceed 1.
inline double edit_distance_rate(const TranscriptPair& pair, EditUnit unit) {
  std::string ref = normalize_text(pair.reference);
  std::string hyp = normalize_text(pair.hypothesis);
  if (unit == EditUnit::word) {
    auto r = split_words(ref), h = split_words(hyp);
    if (r.empty()) throw std::runtime_error("edit_distance_rate: empty reference");
    return static_cast<double>(levenshtein(r, h)) / static_cast<double>(r.size());
  }
  std::string r, h;
  for (char c : ref)
    if (c != ' ') r.push_back(c);
  for (char c : hyp)
    if (c != ' ') h.push_back(c);
  if (r.empty()) throw std::runtime_error("edit_distance_rate: empty reference");
  return static_cast<double>(levenshtein(r, h)) / static_cast<double>(r.size());
}

// ---------------------------------------------------------------------------
// Emotion label parsing: earliest case-insensitive occurrence of a vocabulary
// name or configured synonym wins.
// ---------------------------------------------------------------------------

inline std::optional<EmotionLabel> parse_emotion(const std::string& response,
                                                 const EmotionVocab& vocab) {
  std::string lower(response);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });

  std::size_t best_pos = std::string::npos;
  std::optional<EmotionLabel> best;
  auto consider = [&](const std::string& needle, const EmotionLabel& label) {
    std::string n(needle);
    std::transform(n.begin(), n.end(), n.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::size_t pos = lower.find(n);
    if (pos != std::string::npos && pos < best_pos) {
      best_pos = pos;
      best = label;
    }
  };
  for (const auto& name : vocab.names()) consider(name, vocab.label(name));
  for (const auto& [alias, canonical] : vocab.synonyms()) consider(alias, vocab.label(canonical));
  return best;
}

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

namespace detail {

inline std::map<std::string, std::size_t> ngram_counts(const std::vector<std::string>& words,
                                                       std::size_t n) {
  std::map<std::string, std::size_t> counts;
  if (words.size() < n) return counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    std::string key;
    for (std::size_t j = 0; j < n; ++j) {
      if (j) key.push_back('\x1f');
      key += words[i + j];
    }
    ++counts[key];
  }
  return counts;
}

struct BleuStats {
  std::vector<std::size_t> clipped, total;  // per n-gram order
  std::size_t hyp_len = 0, ref_len = 0;

  explicit BleuStats(std::size_t max_n) : clipped(max_n, 0), total(max_n, 0) {}

  void accumulate(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
    hyp_len += hyp.size();
    ref_len += ref.size();
    for (std::size_t n = 1; n <= clipped.size(); ++n) {
      auto hc = ngram_counts(hyp, n);
      auto rc = ngram_counts(ref, n);
      for (const auto& [gram, count] : hc) {
        auto it = rc.find(gram);
        std::size_t match = it == rc.end() ? 0 : std::min(count, it->second);
        clipped[n - 1] += match;
        total[n - 1] += count;
      }
    }
  }

  // Geometric mean of modified precisions times brevity penalty. Zero
  // higher-order numerators get add-epsilon smoothing (sentence-level BLEU-4
  // is otherwise frequently zero on short responses).
  double score(double smoothing_eps = 0.1) const {
    if (hyp_len == 0) return 0.0;
    double log_p = 0.0;
    for (std::size_t n = 0; n < clipped.size(); ++n) {
      if (total[n] == 0) return 0.0;
      double num = static_cast<double>(clipped[n]);
      if (num == 0.0) num = smoothing_eps;
      log_p += std::log(num / static_cast<double>(total[n]));
    }
    log_p /= static_cast<double>(clipped.size());
    double bp = 1.0;
    if (hyp_len < ref_len)
      bp = std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
    return bp * std::exp(log_p);
  }
};

}  // namespace detail

// Sentence-level BLEU-n in [0, 1].
inline double bleu(const std::string& hypothesis, const std::string& reference,
                   std::size_t max_n) {
  auto hyp = split_words(normalize_text(hypothesis));
  auto ref = split_words(normalize_text(reference));
  if (hyp.empty()) return 0.0;
  detail::BleuStats stats(max_n);
  stats.accumulate(hyp, ref);
  return stats.score();
}

// Corpus-level BLEU-n: counts pooled over all pairs before the geometric mean.
inline double corpus_bleu(const std::vector<std::pair<std::string, std::string>>& hyp_ref_pairs,
                          std::size_t max_n) {
  detail::BleuStats stats(max_n);
  for (const auto& [h, r] : hyp_ref_pairs)
    stats.accumulate(split_words(normalize_text(h)), split_words(normalize_text(r)));
  return stats.score();
}

// ---------------------------------------------------------------------------
// Embedding-similarity F1 (BERTScore-style greedy cosine matching)
// ---------------------------------------------------------------------------

using TokenEmbedder = std::function<std::vector<Vec>(const std::vector<std::string>& tokens)>;

// Deterministic hash-based token embedder used as the default handle.
inline TokenEmbedder hash_embedder(int dim = 16) {
  return [dim](const std::vector<std::string>& tokens) {
    std::vector<Vec> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) {
      Rng rng(fnv1a(t));
      Vec v(static_cast<std::size_t>(dim));
      double norm = 0.0;
      for (auto& x : v) {
        x = rng.normal();
        norm += x * x;
      }
      norm = std::sqrt(norm);
      for (auto& x : v) x /= norm;
      out.push_back(std::move(v));
    }
    return out;
  };
}

inline double cosine(const Vec& a, const Vec& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double similarity_f1(const std::string& hypothesis, const std::string& reference,
                            const TokenEmbedder& embedder) {
  auto hyp_tokens = split_words(normalize_text(hypothesis));
  auto ref_tokens = split_words(normalize_text(reference));
  if (hyp_tokens.empty() || ref_tokens.empty())
    throw std::runtime_error("similarity_f1: empty input");
  auto hyp_emb = embedder(hyp_tokens);
  auto ref_emb = embedder(ref_tokens);

  double precision = 0.0;
  for (const auto& h : hyp_emb) {
    double best = -1.0;
    for (const auto& r : ref_emb) best = std::max(best, cosine(h, r));
    precision += best;
  }
  precision /= static_cast<double>(hyp_emb.size());

  double recall = 0.0;
  for (const auto& r : ref_emb) {
    double best = -1.0;
    for (const auto& h : hyp_emb) best = std::max(best, cosine(r, h));
    recall += best;
  }
  recall /= static_cast<double>(ref_emb.size());

  if (precision + recall <= 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

// ---------------------------------------------------------------------------
// LLM-as-judge
// ---------------------------------------------------------------------------

struct JudgeScore {
  int content = 0, empathy = 0, clarity = 0;

  bool valid() const {
    auto ok = [](int v) { return v >= 1 && v <= 5; };
    return ok(content) && ok(empathy) && ok(clarity);
  }
};

enum class Verdict { a_wins, b_wins, tie };

// Judge handle: scoring and pairwise preference. The HTTP client and the
// deterministic stubs implement the same interface.
class Judge {
 public:
  virtual ~Judge() = default;
  virtual JudgeScore score(const std::string& question, const std::string& emotion,
                           const std::string& response) = 0;
  // Position-sensitive raw preference between first and second response.
  virtual Verdict prefer(const std::string& context, const std::string& first,
                         const std::string& second) = 0;
};

class FixedScoreJudge : public Judge {
 public:
  explicit FixedScoreJudge(JudgeScore s) : score_(s) {}
  JudgeScore score(const std::string&, const std::string&, const std::string&) override {
    return score_;
  }
  Verdict prefer(const std::string&, const std::string&, const std::string&) override {
    return Verdict::tie;
  }

 private:
  JudgeScore score_;
};

// Always prefers whichever response sits in the first position.
class PositionBiasedJudge : public Judge {
 public:
  JudgeScore score(const std::string&, const std::string&, const std::string&) override {
    return {3, 3, 3};
  }
  Verdict prefer(const std::string&, const std::string&, const std::string&) override {
    return Verdict::a_wins;
  }
};

// Prefers the longer response regardless of position.
class LengthBiasedJudge : public Judge {
 public:
  JudgeScore score(const std::string&, const std::string&, const std::string& response) override {
    int len = static_cast<int>(response.size());
    int s = std::clamp(1 + len / 16, 1, 5);
    return {s, s, s};
  }
  Verdict prefer(const std::string&, const std::string& first,
                 const std::string& second) override {
    if (first.size() > second.size()) return Verdict::a_wins;
    if (second.size() > first.size()) return Verdict::b_wins;
    return Verdict::tie;
  }
};

// Validated judge scoring with bounded retries on out-of-range replies.
inline JudgeScore judge_score(const std::string& question, const std::string& emotion,
                              const std::string& response, Judge& judge, int max_retries = 2) {
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    JudgeScore s = judge.score(question, emotion, response);
    if (s.valid()) return s;
  }
  throw std::runtime_error("judge returned out-of-range scores after retries");
}

struct WinRateResult {
  std::size_t wins_a = 0, wins_b = 0, ties = 0;

  std::size_t pairs() const { return wins_a + wins_b + ties; }
  double rate_a() const {
    return pairs() == 0 ? 0.0 : static_cast<double>(wins_a) / static_cast<double>(pairs());
  }
};

struct ComparisonItem {
  std::string response_a, response_b, context;
};

// Each pair is judged twice with positions swapped; a side wins only when it
// wins both orders, otherwise the pair counts as a tie.
inline WinRateResult win_rate(const std::vector<ComparisonItem>& pairs, Judge& judge,
                              std::vector<Verdict>* per_pair = nullptr) {
  if (pairs.empty()) throw std::runtime_error("win_rate: no pairs");
  WinRateResult r;
  for (const auto& p : pairs) {
    Verdict forward = judge.prefer(p.context, p.response_a, p.response_b);
    Verdict swapped = judge.prefer(p.context, p.response_b, p.response_a);
    Verdict v = Verdict::tie;
    if (forward == Verdict::a_wins && swapped == Verdict::b_wins) v = Verdict::a_wins;
    if (forward == Verdict::b_wins && swapped == Verdict::a_wins) v = Verdict::b_wins;
    switch (v) {
      case Verdict::a_wins: ++r.wins_a; break;
      case Verdict::b_wins: ++r.wins_b; break;
      case Verdict::tie: ++r.ties; break;
    }
    if (per_pair) per_pair->push_back(v);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct MetricRow {
  std::string id;
  std::map<std::string, double> values;
};

struct MetricAggregate {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
  std::size_t count = 0;
};

struct EvaluationReport {
  std::vector<MetricRow> rows;
  std::map<std::string, MetricAggregate> aggregates;
};

inline EvaluationReport aggregate(std::vector<MetricRow> rows) {
  if (rows.empty()) throw std::runtime_error("aggregate: no rows");
  EvaluationReport report;
  std::map<std::string, std::vector<double>> by_metric;
  for (const auto& row : rows)
    for (const auto& [name, value] : row.values) by_metric[name].push_back(value);
  for (const auto& [name, values] : by_metric) {
    MetricAggregate agg;
    agg.count = values.size();
    for (double v : values) agg.mean += v;
    agg.mean /= static_cast<double>(values.size());
    for (double v : values) agg.stddev += (v - agg.mean) * (v - agg.mean);
    agg.stddev = std::sqrt(agg.stddev / static_cast<double>(values.size()));
    report.aggregates[name] = agg;
  }
  report.rows = std::move(rows);
  return report;
}

inline void write_report(const EvaluationReport& report, const std::string& rows_path,
                         const std::string& aggregate_path) {
  std::ofstream rows_os(rows_path);
  if (!rows_os) throw std::runtime_error("cannot write report rows: " + rows_path);
  for (const auto& row : report.rows) {
    nlohmann::json j;
    j["id"] = row.id;
    for (const auto& [name, value] : row.values) j[name] = value;
    rows_os << j.dump() << "\n";
  }
  nlohmann::json agg;
  for (const auto& [name, a] : report.aggregates)
    agg[name] = {{"mean", a.mean}, {"stddev", a.stddev}, {"count", a.count}};
  std::ofstream agg_os(aggregate_path);
  if (!agg_os) throw std::runtime_error("cannot write report aggregate: " + aggregate_path);
  agg_os << agg.dump(2) << "\n";
}

}  // namespace lpe
