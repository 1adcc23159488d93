#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpe/rng.hpp"

namespace lpe {

enum class TaskKind { ASR, SER, BOTH };

inline const char* to_string(TaskKind t) {
  switch (t) {
    case TaskKind::ASR: return "asr";
    case TaskKind::SER: return "ser";
    case TaskKind::BOTH: return "both";
  }
  return "?";
}

inline TaskKind task_from_string(const std::string& s) {
  if (s == "asr") return TaskKind::ASR;
  if (s == "ser") return TaskKind::SER;
  if (s == "both") return TaskKind::BOTH;
  throw std::runtime_error("unknown task kind: " + s);
}

struct EmotionLabel {
  std::string name;
  int index = -1;

  bool operator==(const EmotionLabel&) const = default;
};

// Closed emotion vocabulary with an optional synonym table for free-text
// parsing. Loaded from a JSON config, never hard-coded.
class EmotionVocab {
 public:
  EmotionVocab() = default;
  explicit EmotionVocab(std::vector<std::string> names) : names_(std::move(names)) {
    for (std::size_t i = 0; i < names_.size(); ++i) index_[names_[i]] = static_cast<int>(i);
  }

  static EmotionVocab load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open emotion vocabulary: " + path);
    nlohmann::json j = nlohmann::json::parse(is);
    EmotionVocab v(j.at("labels").get<std::vector<std::string>>());
    if (j.contains("synonyms"))
      for (auto& [k, val] : j.at("synonyms").items())
        v.synonyms_[k] = val.get<std::string>();
    return v;
  }

  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }
  const std::map<std::string, std::string>& synonyms() const { return synonyms_; }

  EmotionLabel label(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("unknown emotion name: " + name);
    return EmotionLabel{name, it->second};
  }

  EmotionLabel label(int index) const {
    return EmotionLabel{names_.at(static_cast<std::size_t>(index)), index};
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  void add_synonym(const std::string& alias, const std::string& canonical) {
    synonyms_[alias] = canonical;
  }

 private:
  std::vector<std::string> names_;
  std::map<std::string, int> index_;
  std::map<std::string, std::string> synonyms_;
};

enum class Split { train, dev, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  throw std::runtime_error("unknown split: " + s);
}

struct ManifestRecord {
  std::string id;
  std::string feature_ref;  // path relative to the manifest file
  std::string transcript;
  std::optional<EmotionLabel> emotion;
  Split split = Split::train;

  bool operator==(const ManifestRecord&) const = default;
};

// JSONL manifest, one record per line. Fields: id, features, transcript,
// emotion (optional), split.
inline std::vector<ManifestRecord> load_manifest(const std::string& path,
                                                 const EmotionVocab& vocab) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest: " + path);

  std::vector<ManifestRecord> records;
  std::map<std::string, int> seen;  // id -> line number
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": malformed manifest line: " + e.what());
    }
    ManifestRecord r;
    r.id = j.at("id").get<std::string>();
    r.feature_ref = j.at("features").get<std::string>();
    r.transcript = j.value("transcript", std::string());
    if (j.contains("emotion") && !j.at("emotion").is_null()) {
      const std::string name = j.at("emotion").get<std::string>();
      if (!vocab.contains(name))
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": unknown emotion name \"" + name + "\"");
      r.emotion = vocab.label(name);
    }
    r.split = split_from_string(j.value("split", std::string("train")));

    auto it = seen.find(r.id);
    if (it != seen.end())
      throw std::runtime_error(path + ": duplicate id \"" + r.id + "\" at lines " +
                               std::to_string(it->second) + " and " + std::to_string(lineno));
    seen[r.id] = lineno;
    records.push_back(std::move(r));
  }
  return records;
}

inline void save_manifest(const std::string& path,
                          const std::vector<ManifestRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest: " + path);
  for (const auto& r : records) {
    nlohmann::json j;
    j["id"] = r.id;
    j["features"] = r.feature_ref;
    j["transcript"] = r.transcript;
    if (r.emotion) j["emotion"] = r.emotion->name;
    j["split"] = to_string(r.split);
    os << j.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------
// Response templates
// ---------------------------------------------------------------------------

struct ResponseTemplate {
  TaskKind task = TaskKind::ASR;
  std::string text;
};

inline bool contains_placeholder(const std::string& text, const std::string& name) {
  return text.find("{" + name + "}") != std::string::npos;
}

inline void validate_template(const ResponseTemplate& t) {
  bool has_tr = contains_placeholder(t.text, "transcript");
  bool has_em = contains_placeholder(t.text, "emotion");
  bool ok = false;
  switch (t.task) {
    case TaskKind::ASR: ok = has_tr && !has_em; break;
    case TaskKind::SER: ok = has_em && !has_tr; break;
    case TaskKind::BOTH: ok = has_tr && has_em; break;
  }
  if (!ok)
    throw std::runtime_error(std::string("template placeholders do not match task ") +
                             to_string(t.task) + ": \"" + t.text + "\"");
}

inline std::string fill_template(const ResponseTemplate& t,
                                 const std::optional<std::string>& transcript,
                                 const std::optional<EmotionLabel>& emotion) {
  std::string out = t.text;
  auto substitute = [&out](const std::string& name, const std::string& value) {
    const std::string marker = "{" + name + "}";
    std::size_t pos;
    while ((pos = out.find(marker)) != std::string::npos)
      out.replace(pos, marker.size(), value);
  };
  if (contains_placeholder(out, "transcript")) {
    if (!transcript)
      throw std::runtime_error("template requires {transcript} but none was given: \"" + t.text + "\"");
    substitute("transcript", *transcript);
  }
  if (contains_placeholder(out, "emotion")) {
    if (!emotion)
      throw std::runtime_error("template requires {emotion} but none was given: \"" + t.text + "\"");
    substitute("emotion", emotion->name);
  }
  return out;
}

class TemplateStore {
 public:
  TemplateStore() = default;

  static TemplateStore load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open template store: " + path);
    TemplateStore store;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const std::exception& e) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": malformed template line: " + e.what());
      }
      ResponseTemplate t;
      t.task = task_from_string(j.at("task").get<std::string>());
      t.text = j.at("text").get<std::string>();
      validate_template(t);
      store.add(t);
    }
    return store;
  }

  void add(ResponseTemplate t) {
    validate_template(t);
    pool(t.task).push_back(std::move(t));
  }

  const ResponseTemplate& sample(TaskKind task, Rng& rng) const {
    const auto& p = pool(task);
    if (p.empty())
      throw std::runtime_error(std::string("no templates for task ") + to_string(task));
    return p[rng.index(p.size())];
  }

  std::size_t count(TaskKind task) const { return pool(task).size(); }

 private:
  std::vector<ResponseTemplate>& pool(TaskKind t) {
    return pools_[static_cast<int>(t)];
  }
  const std::vector<ResponseTemplate>& pool(TaskKind t) const {
    return pools_[static_cast<int>(t)];
  }

  std::vector<ResponseTemplate> pools_[3];
};

}  // namespace lpe
