#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "lpe/data_model.hpp"

namespace fs = std::filesystem;
using namespace lpe;

namespace {

fs::path tmp_dir() {
  fs::path p = fs::temp_directory_path() / "lpe_test_data_model";
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
}

}  // namespace

TEST_CASE("task kind string round trip") {
  for (TaskKind t : {TaskKind::ASR, TaskKind::SER, TaskKind::BOTH})
    CHECK(task_from_string(to_string(t)) == t);
  CHECK_THROWS(task_from_string("translation"));
}

TEST_CASE("split string round trip") {
  for (Split s : {Split::train, Split::dev, Split::test})
    CHECK(split_from_string(to_string(s)) == s);
  CHECK_THROWS(split_from_string("validation"));
}

TEST_CASE("emotion vocabulary loads labels and synonyms from config") {
  EmotionVocab v = EmotionVocab::load("fixtures/emotions.json");
  CHECK(v.size() == 4);
  CHECK(v.contains("happy"));
  CHECK(v.contains("neutral"));
  CHECK_FALSE(v.contains("joyful"));  // synonym, not a canonical label

  EmotionLabel happy = v.label("happy");
  CHECK(v.label(happy.index) == happy);
  CHECK(v.synonyms().at("joyful") == "happy");
  CHECK(v.synonyms().at("furious") == "angry");
  CHECK_THROWS_WITH(v.label("bored"), doctest::Contains("bored"));
}

TEST_CASE("vocabulary index is position in the label list") {
  EmotionVocab v({"a", "b", "c"});
  CHECK(v.label("a").index == 0);
  CHECK(v.label("c").index == 2);
}

TEST_CASE("manifest save/load round trip") {
  EmotionVocab v = EmotionVocab::load("fixtures/emotions.json");
  std::vector<ManifestRecord> recs = {
      {"u0", "u0.ftr", "good morning", std::nullopt, Split::train},
      {"u1", "u1.ftr", "cold river", v.label("sad"), Split::test},
      {"u2", "u2.ftr", "", v.label("angry"), Split::dev},
  };
  fs::path p = tmp_dir() / "roundtrip.jsonl";
  save_manifest(p.string(), recs);
  auto back = load_manifest(p.string(), v);
  CHECK(back == recs);
}

TEST_CASE("duplicate manifest ids are rejected with both line numbers") {
  EmotionVocab v({"happy"});
  fs::path p = tmp_dir() / "dup.jsonl";
  write_file(p,
             R"({"id":"x","features":"x.ftr","transcript":"a"})" "\n"
             R"({"id":"y","features":"y.ftr","transcript":"b"})" "\n"
             R"({"id":"x","features":"x2.ftr","transcript":"c"})" "\n");
  CHECK_THROWS_WITH(load_manifest(p.string(), v), doctest::Contains("duplicate id \"x\""));
  try {
    load_manifest(p.string(), v);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    CHECK(msg.find("1") != std::string::npos);
    CHECK(msg.find("3") != std::string::npos);
  }
}

TEST_CASE("unknown emotion names are rejected with the offending value and line") {
  EmotionVocab v({"happy"});
  fs::path p = tmp_dir() / "unknown_emotion.jsonl";
  write_file(p, R"({"id":"x","features":"x.ftr","transcript":"a","emotion":"confused"})" "\n");
  try {
    load_manifest(p.string(), v);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    std::string msg = e.what();
    CHECK(msg.find("confused") != std::string::npos);
    CHECK(msg.find(":1") != std::string::npos);
  }
}

TEST_CASE("malformed manifest lines report the line number") {
  EmotionVocab v({"happy"});
  fs::path p = tmp_dir() / "malformed.jsonl";
  write_file(p, R"({"id":"x","features":"x.ftr"})" "\n" "not json\n");
  CHECK_THROWS_WITH(load_manifest(p.string(), v), doctest::Contains(":2"));
}

TEST_CASE("template placeholder validation per task") {
  CHECK_NOTHROW(validate_template({TaskKind::ASR, "You said {transcript}."}));
  CHECK_NOTHROW(validate_template({TaskKind::SER, "You sound {emotion}."}));
  CHECK_NOTHROW(validate_template({TaskKind::BOTH, "{transcript} ({emotion})"}));
  CHECK_THROWS(validate_template({TaskKind::ASR, "You sound {emotion}."}));
  CHECK_THROWS(validate_template({TaskKind::SER, "You said {transcript}."}));
  CHECK_THROWS(validate_template({TaskKind::BOTH, "only {transcript}"}));
  CHECK_THROWS(validate_template({TaskKind::ASR, "no placeholders"}));
}

TEST_CASE("fill_template substitutes every occurrence and validates arguments") {
  EmotionVocab v({"sad"});
  ResponseTemplate t{TaskKind::BOTH, "{transcript} again {transcript}, {emotion}"};
  CHECK(fill_template(t, std::string("hi"), v.label("sad")) == "hi again hi, sad");
  CHECK_THROWS_WITH(fill_template(t, std::nullopt, v.label("sad")),
                    doctest::Contains("transcript"));
  CHECK_THROWS_WITH(fill_template(t, std::string("hi"), std::nullopt),
                    doctest::Contains("emotion"));
}

TEST_CASE("template store loads the fixture pools and samples deterministically") {
  TemplateStore store = TemplateStore::load("fixtures/templates.jsonl");
  CHECK(store.count(TaskKind::ASR) >= 1);
  CHECK(store.count(TaskKind::SER) >= 1);
  CHECK(store.count(TaskKind::BOTH) >= 1);

  Rng a(42), b(42);
  for (int i = 0; i < 20; ++i)
    CHECK(store.sample(TaskKind::BOTH, a).text == store.sample(TaskKind::BOTH, b).text);

  // Sampling eventually reaches every template in a pool.
  Rng r(7);
  std::set<std::string> seen;
  for (int i = 0; i < 200; ++i) seen.insert(store.sample(TaskKind::SER, r).text);
  CHECK(seen.size() == store.count(TaskKind::SER));
}
