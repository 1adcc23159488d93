#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "lpe/data_model.hpp"
#include "lpe/speech_frontend.hpp"
#include "lpe/training.hpp"

namespace lpe {

// Deterministic desk-scale corpus: short two-word transcripts, waveforms that
// carry the emotion as a tone at one filterbank frequency plus
// utterance-specific pseudo-noise. Emotion generalizes across utterances;
// content is utterance-specific.
namespace fixtures {

inline std::string transcript_for(int i) {
  static const char* first[] = {"good", "bright", "quiet", "long",
                                "warm", "cold",   "busy",  "slow"};
  static const char* second[] = {"morning", "evening", "day",    "night",
                                 "road",    "river",   "garden", "winter"};
  return std::string(first[i % 8]) + " " + second[(i / 8) % 8];
}

inline std::vector<double> make_waveform(const std::string& id, int emotion_index,
                                         std::size_t frames) {
  const std::size_t n = frames * SyntheticEncoder::kHop;
  std::vector<double> wave(n);
  Rng rng(fnv1a(id));
  double freq = emotion_index >= 0
                    ? SyntheticEncoder::band_frequency(emotion_index % SyntheticEncoder::kBands)
                    : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0.6 * (2.0 * rng.uniform() - 1.0);
    if (emotion_index >= 0)
      v += 0.8 * std::sin(2.0 * 3.14159265358979323846 * freq * static_cast<double>(i) /
                          SyntheticEncoder::kSampleRate);
    wave[i] = v;
  }
  return wave;
}

struct Corpus {
  std::vector<ManifestRecord> asr_train;
  std::vector<ManifestRecord> ser_train;
  std::vector<ManifestRecord> test_set;
  std::string dir;
};

inline ManifestRecord write_record(const std::string& dir, const std::string& id,
                                   const std::string& transcript,
                                   std::optional<EmotionLabel> emotion, Split split,
                                   std::size_t frames) {
  ManifestRecord r;
  r.id = id;
  r.feature_ref = id + ".ftr";
  r.transcript = transcript;
  r.emotion = emotion;
  r.split = split;
  int emo_idx = emotion ? emotion->index : -1;
  save_waveform((std::filesystem::path(dir) / r.feature_ref).string(),
                make_waveform(id, emo_idx, frames));
  return r;
}

inline Corpus build(const std::string& dir, const EmotionVocab& vocab, int n_asr, int n_ser,
                    int n_test) {
  std::filesystem::create_directories(dir);
  Corpus c;
  c.dir = dir;
  for (int i = 0; i < n_asr; ++i) {
    std::string id = "asr" + std::to_string(i);
    std::size_t frames = 40 + static_cast<std::size_t>(i % 3) * 8;
    c.asr_train.push_back(write_record(dir, id, transcript_for(i), std::nullopt, Split::train,
                                       frames));
  }
  for (int i = 0; i < n_ser; ++i) {
    std::string id = "ser" + std::to_string(i);
    std::size_t frames = 40 + static_cast<std::size_t>(i % 3) * 8;
    EmotionLabel e = vocab.label(i % vocab.size());
    c.ser_train.push_back(write_record(dir, id, transcript_for(i), e, Split::train, frames));
  }
  for (int i = 0; i < n_test; ++i) {
    std::string id = "test" + std::to_string(i);
    std::size_t frames = 40 + static_cast<std::size_t>(i % 3) * 8;
    EmotionLabel e = vocab.label(i % vocab.size());
    // Offset keeps test transcripts disjoint from the training phrases.
    c.test_set.push_back(write_record(dir, id, transcript_for(32 + i), e, Split::test, frames));
  }
  save_manifest((std::filesystem::path(dir) / "asr_train.jsonl").string(), c.asr_train);
  save_manifest((std::filesystem::path(dir) / "ser_train.jsonl").string(), c.ser_train);
  save_manifest((std::filesystem::path(dir) / "test.jsonl").string(), c.test_set);
  return c;
}

// Byte corpus for decoder pretraining. Besides plain transcripts, targets,
// and emotion names, the corpus carries tag-to-target lookup lines: every
// distinct transcript gets a one-byte content tag and every emotion a
// one-letter tag, and lines pair "task prompt + tags" with the completed
// target. A real pretrained decoder already knows how to complete text from
// short context cues; pretraining on these lines gives the frozen toy
// decoder the same ability, so the adapters only have to steer their prefix
// slots onto tag embeddings rather than teach the decoder new text.
inline std::vector<std::string> decoder_corpus(const Corpus& c, const TemplateStore& templates,
                                               const EmotionVocab& vocab) {
  std::set<std::string> transcripts;
  for (const auto& r : c.asr_train) transcripts.insert(r.transcript);
  for (const auto& r : c.ser_train) transcripts.insert(r.transcript);
  for (const auto& r : c.test_set) transcripts.insert(r.transcript);

  static const char kTagAlphabet[] =
      "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";
  std::map<std::string, std::string> tag;
  {
    std::size_t i = 0;
    for (const auto& t : transcripts)
      tag[t] = std::string(1, kTagAlphabet[i++ % (sizeof(kTagAlphabet) - 1)]);
  }
  auto emo_tag = [](const EmotionLabel& e) { return e.name.substr(0, 1); };

  std::set<std::string> lines(transcripts.begin(), transcripts.end());
  for (const auto& name : vocab.names()) lines.insert(name);

  // Lines mirror the assembled decoder input: prompt, a content region holding
  // the tag at a variable offset, one emotion-slot character, then the target.
  // Varying the padding and the slot filler makes the lookup robust to the
  // positions and the junk vectors the adapters feed at those slots.
  Rng rng(5);
  auto pad = [](std::size_t n) { return std::string(n, ' '); };
  // Slot fillers for transcription lines span many characters (including the
  // emotion letters) so that the arbitrary vector occupying the emotion slot
  // at stage-1 training time falls inside a pattern the decoder has seen.
  const std::string junk = "~#*=+@%&hsan";
  auto tagged = [&](TaskKind task, const ManifestRecord& r, char slot,
                    const std::string& target) {
    // No space between the slot character and the target: assembled inputs
    // place the first target token directly after the emotion slot.
    return task_prompt(task) + " " + pad(rng.index(3)) + tag[r.transcript] +
           pad(1 + rng.index(4)) + std::string(1, slot) + target;
  };
  auto add_asr = [&](const ManifestRecord& r) {
    for (int rep = 0; rep < 8; ++rep) {
      std::string target =
          rep % 2 == 0 ? r.transcript : build_target(TaskKind::ASR, r, templates, rng);
      lines.insert(tagged(TaskKind::ASR, r, junk[rng.index(junk.size())], target));
    }
  };
  auto add_emotional = [&](const ManifestRecord& r) {
    char el = emo_tag(*r.emotion)[0];
    for (int rep = 0; rep < 8; ++rep) {
      lines.insert(
          tagged(TaskKind::SER, r, el, build_target(TaskKind::SER, r, templates, rng)));
      lines.insert(
          tagged(TaskKind::BOTH, r, el, build_target(TaskKind::BOTH, r, templates, rng)));
    }
  };
  for (const auto& r : c.asr_train) add_asr(r);
  for (const auto& r : c.ser_train) {
    add_asr(r);
    add_emotional(r);
  }
  for (const auto& r : c.test_set) {
    add_asr(r);
    add_emotional(r);
  }
  return {lines.begin(), lines.end()};
}

}  // namespace fixtures
}  // namespace lpe
