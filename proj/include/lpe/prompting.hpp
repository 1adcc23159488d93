#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpe/data_model.hpp"
#include "lpe/rng.hpp"

namespace lpe {

enum class CoTVariant { none, zero_shot, zero_shot_steps, zero_shot_reasoning, few_shot };

inline const char* to_string(CoTVariant v) {
  switch (v) {
    case CoTVariant::none: return "none";
    case CoTVariant::zero_shot: return "zero_shot";
    case CoTVariant::zero_shot_steps: return "zero_shot_steps";
    case CoTVariant::zero_shot_reasoning: return "zero_shot_reasoning";
    case CoTVariant::few_shot: return "few_shot";
  }
  return "?";
}

inline CoTVariant cot_variant_from_string(const std::string& s) {
  for (CoTVariant v : {CoTVariant::none, CoTVariant::zero_shot, CoTVariant::zero_shot_steps,
                       CoTVariant::zero_shot_reasoning, CoTVariant::few_shot})
    if (s == to_string(v)) return v;
  throw std::runtime_error("unknown CoT variant: " + s);
}

inline constexpr std::array<CoTVariant, 5> kAllVariants = {
    CoTVariant::none, CoTVariant::zero_shot, CoTVariant::zero_shot_steps,
    CoTVariant::zero_shot_reasoning, CoTVariant::few_shot};

// A worked listen -> perceive -> express example for few-shot prompting.
struct Rationale {
  std::string question_transcript;
  EmotionLabel emotion;
  std::string steps_text;
  std::string final_response;
};

inline bool mentions_phases_in_order(const std::string& text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::size_t a = lower.find("listen");
  if (a == std::string::npos) return false;
  std::size_t b = lower.find("perceive", a);
  if (b == std::string::npos) return false;
  return lower.find("express", b) != std::string::npos;
}

inline void validate_rationale(const Rationale& r) {
  if (!mentions_phases_in_order(r.steps_text))
    throw std::runtime_error(
        "rationale steps must mention the listen, perceive, and express phases in order");
}

using RationaleBank = std::vector<Rationale>;

inline RationaleBank load_rationale_bank(const std::string& path, const EmotionVocab& vocab) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open rationale bank: " + path);
  RationaleBank bank;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    Rationale r;
    r.question_transcript = j.at("question_transcript").get<std::string>();
    r.emotion = vocab.label(j.at("emotion").get<std::string>());
    r.steps_text = j.at("steps_text").get<std::string>();
    r.final_response = j.at("final_response").get<std::string>();
    validate_rationale(r);
    bank.push_back(std::move(r));
  }
  return bank;
}

inline void save_rationale_bank(const std::string& path, const RationaleBank& bank) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write rationale bank: " + path);
  for (const auto& r : bank) {
    nlohmann::json j = {{"question_transcript", r.question_transcript},
                        {"emotion", r.emotion.name},
                        {"steps_text", r.steps_text},
                        {"final_response", r.final_response}};
    os << j.dump() << "\n";
  }
}

inline const Rationale& select_rationale(const RationaleBank& bank, Rng& rng) {
  if (bank.empty()) throw std::runtime_error("select_rationale: empty bank");
  return bank[rng.index(bank.size())];
}

inline std::string format_rationale(const Rationale& r) {
  std::ostringstream os;
  os << "Speech: " << r.question_transcript << "\n"
     << "Emotion: " << r.emotion.name << "\n"
     << r.steps_text << "\n"
     << "Response: " << r.final_response;
  return os.str();
}

struct PromptSpec {
  CoTVariant variant = CoTVariant::none;
  std::string resolved_text;
  std::optional<std::string> rationale_id;  // present iff variant == few_shot
};

// Canonical prompt texts, one UTF-8 file per variant. The few-shot file is a
// frame containing a single {rationale} placeholder.
class PromptLibrary {
 public:
  static PromptLibrary load(const std::string& dir) {
    PromptLibrary lib;
    for (CoTVariant v : kAllVariants) {
      std::filesystem::path p = std::filesystem::path(dir) / (std::string(to_string(v)) + ".txt");
      std::ifstream is(p, std::ios::binary);
      if (!is) throw std::runtime_error("missing prompt file: " + p.string());
      std::ostringstream os;
      os << is.rdbuf();
      lib.texts_[static_cast<int>(v)] = os.str();
    }
    return lib;
  }

  const std::string& text(CoTVariant v) const { return texts_[static_cast<int>(v)]; }

 private:
  std::string texts_[5];
};

inline PromptSpec build_prompt(const PromptLibrary& lib, CoTVariant variant,
                               const RationaleBank* bank = nullptr, Rng* rng = nullptr) {
  PromptSpec spec;
  spec.variant = variant;
  if (variant != CoTVariant::few_shot) {
    spec.resolved_text = lib.text(variant);
    return spec;
  }
  if (!bank || bank->empty())
    throw std::runtime_error("few_shot prompt requires a non-empty rationale bank");
  if (!rng) throw std::runtime_error("few_shot prompt requires a seeded random source");
  std::size_t idx = rng->index(bank->size());
  const Rationale& r = (*bank)[idx];
  std::string text = lib.text(CoTVariant::few_shot);
  const std::string marker = "{rationale}";
  std::size_t pos = text.find(marker);
  if (pos == std::string::npos)
    throw std::runtime_error("few_shot prompt file lacks the {rationale} placeholder");
  text.replace(pos, marker.size(), format_rationale(r));
  spec.resolved_text = std::move(text);
  spec.rationale_id = std::to_string(idx);
  return spec;
}

// Generates one rationale per (transcript, emotion) pair through a
// text-generation handle. Generations that violate the rationale invariant
// or lack a "Response:" line are dropped and reported.
using TextGenerator = std::function<std::string(const std::string& transcript,
                                                const EmotionLabel& emotion)>;

inline RationaleBank generate_rationale_bank(
    const std::vector<std::pair<std::string, EmotionLabel>>& pairs,
    const TextGenerator& generate, std::vector<std::string>* dropped_report = nullptr) {
  if (pairs.empty()) throw std::runtime_error("generate_rationale_bank: no pairs");
  RationaleBank bank;
  for (const auto& [transcript, emotion] : pairs) {
    std::string text = generate(transcript, emotion);
    Rationale r;
    r.question_transcript = transcript;
    r.emotion = emotion;
    std::size_t pos = text.rfind("Response:");
    if (pos == std::string::npos || !mentions_phases_in_order(text.substr(0, pos))) {
      if (dropped_report)
        dropped_report->push_back("dropped rationale for \"" + transcript +
                                  "\": missing phase steps or Response line");
      continue;
    }
    r.steps_text = text.substr(0, pos);
    while (!r.steps_text.empty() && (r.steps_text.back() == '\n' || r.steps_text.back() == ' '))
      r.steps_text.pop_back();
    r.final_response = text.substr(pos + 9);
    while (!r.final_response.empty() &&
           (r.final_response.front() == ' ' || r.final_response.front() == '\n'))
      r.final_response.erase(r.final_response.begin());
    bank.push_back(std::move(r));
  }
  if (bank.empty()) throw std::runtime_error("generate_rationale_bank: all generations invalid");
  return bank;
}

}  // namespace lpe
