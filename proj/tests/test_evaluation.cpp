#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <thread>

#include <httplib.h>

#include "lpe/evaluation.hpp"
#include "lpe/judge_http.hpp"

namespace fs = std::filesystem;
using namespace lpe;

namespace {

// Independent oracle: plain recursive edit distance with memoization.
std::size_t oracle_edit(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::vector<int>> memo(a.size() + 1, std::vector<int>(b.size() + 1, -1));
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i,
                                                                std::size_t j) -> std::size_t {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    int& m = memo[i][j];
    if (m >= 0) return static_cast<std::size_t>(m);
    std::size_t best = go(i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
    best = std::min(best, go(i + 1, j) + 1);
    best = std::min(best, go(i, j + 1) + 1);
    m = static_cast<int>(best);
    return best;
  };
  return go(0, 0);
}

}  // namespace

TEST_CASE("text normalization") {
  CHECK(normalize_text("  Hello,   WORLD!! ") == "hello world");
  CHECK(normalize_text("don't-stop") == "don't stop");
  CHECK(normalize_text("") == "");
  CHECK(split_words("a  b   c") == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("edit distance matches the recursive oracle on short token strings") {
  // All strings of length <= 4 over a two-token alphabet.
  std::vector<std::vector<std::string>> all;
  all.push_back({});
  for (std::size_t len = 1; len <= 4; ++len) {
    std::size_t start = all.size();
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (all[i].size() != len - 1) continue;
      for (const char* tok : {"aa", "b"}) {
        auto s = all[i];
        s.push_back(tok);
        all.push_back(std::move(s));
      }
    }
    (void)start;
  }
  for (const auto& a : all)
    for (const auto& b : all)
      CHECK(levenshtein(a, b) == oracle_edit(a, b));
}

TEST_CASE("word and character error rates") {
  TranscriptPair p{"the quick brown fox", "the quack brown fox"};
  CHECK(edit_distance_rate(p, EditUnit::word) == doctest::Approx(0.25));

  TranscriptPair q{"abc", "abd"};
  CHECK(edit_distance_rate(q, EditUnit::character) == doctest::Approx(1.0 / 3.0));

  // Characters exclude spaces; normalization lowercases.
  TranscriptPair r{"A B", "a b"};
  CHECK(edit_distance_rate(r, EditUnit::word) == 0.0);
  CHECK(edit_distance_rate(r, EditUnit::character) == 0.0);

  // Error rates can exceed 1 when the hypothesis is much longer.
  TranscriptPair s{"hi", "one two three"};
  CHECK(edit_distance_rate(s, EditUnit::word) == doctest::Approx(3.0));

  CHECK_THROWS(edit_distance_rate(TranscriptPair{"", "something"}, EditUnit::word));
}

TEST_CASE("emotion parsing picks the earliest mention and knows synonyms") {
  EmotionVocab v = EmotionVocab::load("fixtures/emotions.json");
  auto got = parse_emotion("You seem sad, though earlier you were happy.", v);
  REQUIRE(got.has_value());
  CHECK(got->name == "sad");

  got = parse_emotion("Sounds like you are FURIOUS about this.", v);
  REQUIRE(got.has_value());
  CHECK(got->name == "angry");

  got = parse_emotion("I am glad for you.", v);
  REQUIRE(got.has_value());
  CHECK(got->name == "happy");

  CHECK_FALSE(parse_emotion("nothing to see here", v).has_value());
}

TEST_CASE("BLEU-1 is 1.0 on identical strings") {
  CHECK(bleu("warm evening ahead", "warm evening ahead", 1) == doctest::Approx(1.0));
  CHECK(bleu("a warm evening lies ahead", "a warm evening lies ahead", 4) ==
        doctest::Approx(1.0));
}

TEST_CASE("BLEU clips repeated n-grams like the hand oracle") {
  // Classic example: hypothesis of seven "the" against a reference containing
  // "the" twice. Modified unigram precision is 2/7; the hypothesis is longer
  // than the reference, so no brevity penalty applies.
  double b = bleu("the the the the the the the", "the cat is on the mat", 1);
  CHECK(b == doctest::Approx(2.0 / 7.0));
}

TEST_CASE("brevity penalty shortens overconfident hypotheses") {
  // Hypothesis "warm evening" vs reference "warm evening ahead": unigram
  // precision 1, BP = exp(1 - 3/2).
  double b = bleu("warm evening", "warm evening ahead", 1);
  CHECK(b == doctest::Approx(std::exp(1.0 - 1.5)));
}

TEST_CASE("corpus BLEU pools counts instead of averaging scores") {
  std::vector<std::pair<std::string, std::string>> pairs = {
      {"the the the the the the the", "the cat is on the mat"},
      {"a b c", "a b c"},
  };
  // Pooled clipped unigrams: 2 + 3 = 5 of 7 + 3 = 10; BP: len 10 vs 9 -> 1.
  CHECK(corpus_bleu(pairs, 1) == doctest::Approx(0.5));
}

TEST_CASE("similarity F1 is 1.0 on identical inputs under any embedder") {
  TokenEmbedder hashed = hash_embedder();
  CHECK(similarity_f1("good bright morning", "good bright morning", hashed) ==
        doctest::Approx(1.0));

  TokenEmbedder quirky = [](const std::vector<std::string>& words) {
    std::vector<Vec> out;
    for (const auto& w : words) {
      Vec v(3, 0.0);
      v[w.size() % 3] = 1.0;
      out.push_back(std::move(v));
    }
    return out;
  };
  CHECK(similarity_f1("x yy zzz", "x yy zzz", quirky) == doctest::Approx(1.0));
  CHECK(similarity_f1("aa bb", "cc", quirky) <= 1.0);
  CHECK_THROWS(similarity_f1("", "ref", hashed));
}

TEST_CASE("cosine similarity") {
  CHECK(cosine({1, 0}, {0, 1}) == doctest::Approx(0.0));
  CHECK(cosine({2, 0}, {5, 0}) == doctest::Approx(1.0));
  CHECK(cosine({1, 1}, {-1, -1}) == doctest::Approx(-1.0));
}

TEST_CASE("judge scores validate their range with retries") {
  FixedScoreJudge good(JudgeScore{4, 5, 3});
  JudgeScore s = judge_score("q", "sad", "resp", good);
  CHECK(s.content == 4);
  CHECK(s.empathy == 5);
  CHECK(s.clarity == 3);

  FixedScoreJudge bad(JudgeScore{0, 9, 3});
  CHECK_THROWS_WITH(judge_score("q", "sad", "resp", bad), doctest::Contains("out-of-range"));
}

TEST_CASE("position-swapped judging turns pure position bias into ties") {
  PositionBiasedJudge biased;
  std::vector<ComparisonItem> items(7, ComparisonItem{"alpha", "beta", "ctx"});
  std::vector<Verdict> verdicts;
  WinRateResult r = win_rate(items, biased, &verdicts);
  CHECK(r.wins_a == 0);
  CHECK(r.wins_b == 0);
  CHECK(r.ties == 7);
  for (Verdict v : verdicts) CHECK(v == Verdict::tie);
}

TEST_CASE("length-biased judging matches the count oracle") {
  LengthBiasedJudge longer_wins;
  std::vector<ComparisonItem> items = {
      {"a much longer response", "short", ""},  // a wins both orders
      {"tiny", "a considerably longer reply", ""},  // b wins both orders
      {"same size", "size same", ""},               // equal length, tie
      {"another long winner here", "no", ""},
  };
  WinRateResult r = win_rate(items, longer_wins);
  CHECK(r.wins_a == 2);
  CHECK(r.wins_b == 1);
  CHECK(r.ties == 1);
  CHECK(r.rate_a() == doctest::Approx(0.5));

  CHECK_THROWS(win_rate({}, longer_wins));
}

TEST_CASE("aggregation computes mean and population stddev per metric") {
  std::vector<MetricRow> rows(4);
  double vals[4] = {1.0, 2.0, 3.0, 4.0};
  for (int i = 0; i < 4; ++i) {
    rows[i].id = "r" + std::to_string(i);
    rows[i].values["wer"] = vals[i];
    if (i < 2) rows[i].values["acc"] = static_cast<double>(i);
  }
  EvaluationReport rep = aggregate(rows);
  CHECK(rep.aggregates.at("wer").mean == doctest::Approx(2.5));
  CHECK(rep.aggregates.at("wer").stddev == doctest::Approx(std::sqrt(1.25)));
  CHECK(rep.aggregates.at("wer").count == 4);
  CHECK(rep.aggregates.at("acc").count == 2);
  CHECK(rep.aggregates.at("acc").mean == doctest::Approx(0.5));

  fs::path dir = fs::temp_directory_path() / "lpe_test_eval";
  fs::create_directories(dir);
  write_report(rep, (dir / "rows.jsonl").string(), (dir / "agg.json").string());
  std::ifstream rows_in(dir / "rows.jsonl");
  std::string line;
  int n = 0;
  while (std::getline(rows_in, line))
    if (!line.empty()) {
      auto j = nlohmann::json::parse(line);
      CHECK(j.contains("id"));
      CHECK(j.contains("wer"));
      ++n;
    }
  CHECK(n == 4);
  std::ifstream agg_in(dir / "agg.json");
  auto agg = nlohmann::json::parse(agg_in);
  CHECK(agg.at("wer").at("mean").get<double>() == doctest::Approx(2.5));
}

TEST_CASE("http judge speaks the scoring and comparison protocol") {
  setenv("LPE_JUDGE_TOKEN", "sekrit", 1);

  httplib::Server server;
  std::atomic<int> score_calls{0};
  server.Post("/score", [&](const httplib::Request& req, httplib::Response& res) {
    CHECK(req.get_header_value("Authorization") == "Bearer sekrit");
    auto body = nlohmann::json::parse(req.body);
    CHECK(body.at("instruction") == HttpJudge::kScoreInstruction);
    CHECK(body.at("emotion") == "sad");
    ++score_calls;
    res.set_content(R"({"content":4,"empathy":5,"clarity":3})", "application/json");
  });
  server.Post("/compare", [&](const httplib::Request& req, httplib::Response& res) {
    auto body = nlohmann::json::parse(req.body);
    CHECK(body.at("instruction") == HttpJudge::kCompareInstruction);
    // Prefer whichever side holds the marker, regardless of position.
    std::string winner =
        body.at("first").get<std::string>().find("MARK") != std::string::npos ? "first"
                                                                              : "second";
    res.set_content(R"({"winner":")" + winner + R"("})", "application/json");
  });

  int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpJudge judge("127.0.0.1", port);
  JudgeScore s = judge.score("what was said", "sad", "a reply");
  CHECK(s.content == 4);
  CHECK(s.empathy == 5);
  CHECK(s.clarity == 3);
  CHECK(score_calls == 1);

  // Content-sensitive server verdicts survive the position swap.
  std::vector<ComparisonItem> items = {{"MARK response", "plain", "ctx"}};
  WinRateResult r = win_rate(items, judge);
  CHECK(r.wins_a == 1);

  server.stop();
  th.join();

  HttpJudge unreachable("127.0.0.1", port == 1 ? 2 : 1);
  CHECK_THROWS_WITH(unreachable.score("q", "e", "r"), doctest::Contains("unreachable"));
}
