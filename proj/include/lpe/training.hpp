#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpe/adapters.hpp"
#include "lpe/data_model.hpp"
#include "lpe/lm_bridge.hpp"
#include "lpe/speech_frontend.hpp"

namespace lpe {

// Fixed task prompts used during training (inference prompts live in the
// prompting module).
inline std::string task_prompt(TaskKind t) {
  switch (t) {
    case TaskKind::ASR: return "Transcribe:";
    case TaskKind::SER: return "Emotion:";
    case TaskKind::BOTH: return "Transcribe and emotion:";
  }
  return "";
}

struct ModelConfig {
  int enc_layers = 4;  // L
  int d_enc = 24;
  int d_lm = 32;
  int num_emotions = 4;
  bool include_layer0 = true;  // layer 0 participates in the multiscale sum
  std::uint64_t encoder_seed = 7;
  std::uint64_t adapter_seed = 13;
  DecoderSpec decoder;

  std::string hash() const {
    nlohmann::json j = {{"enc_layers", enc_layers}, {"d_enc", d_enc}, {"d_lm", d_lm},
                        {"num_emotions", num_emotions}, {"include_layer0", include_layer0},
                        {"encoder_seed", encoder_seed}, {"adapter_seed", adapter_seed},
                        {"decoder", decoder.hash()}};
    return to_hex(fnv1a(j.dump()));
  }
};

struct Model {
  ModelConfig config;
  SyntheticEncoder encoder;
  SubsamplerAdapter subsampler;
  MultiscaleAdapter multiscale;
  ToyDecoder decoder;
  ByteTokenizer tokenizer;

  explicit Model(ModelConfig cfg)
      : config(adjust(cfg)),
        encoder(EncoderSpec{cfg.enc_layers, cfg.d_enc, cfg.encoder_seed}),
        subsampler(cfg.d_enc, cfg.d_lm, cfg.adapter_seed),
        multiscale(cfg.include_layer0 ? cfg.enc_layers + 1 : cfg.enc_layers, cfg.d_enc,
                   cfg.d_lm, cfg.num_emotions, cfg.adapter_seed + 1),
        decoder(config.decoder) {}

  // Drops layer 0 when it is excluded from the multiscale weighted sum.
  LayeredFeatures multiscale_view(const LayeredFeatures& f) const {
    if (config.include_layer0) return f;
    LayeredFeatures out;
    out.frame_rate = f.frame_rate;
    out.layers.assign(f.layers.begin() + 1, f.layers.end());
    return out;
  }

 private:
  static ModelConfig adjust(ModelConfig cfg) {
    cfg.decoder.d_model = cfg.d_lm;
    return cfg;
  }
};

// Resolves and caches layered features per record; paths in the manifest are
// relative to the manifest's directory.
class FeatureProvider {
 public:
  FeatureProvider(const SyntheticEncoder& encoder, std::string base_dir)
      : encoder_(&encoder), base_dir_(std::move(base_dir)) {}

  const LayeredFeatures& get(const ManifestRecord& r) {
    auto it = cache_.find(r.id);
    if (it != cache_.end()) return it->second;
    std::filesystem::path p(r.feature_ref);
    if (p.is_relative()) p = std::filesystem::path(base_dir_) / p;
    return cache_.emplace(r.id, encoder_->load(p.string())).first->second;
  }

 private:
  const SyntheticEncoder* encoder_;
  std::string base_dir_;
  std::map<std::string, LayeredFeatures> cache_;
};

struct TrainingConfig {
  int stage = 1;
  double lr = 2e-4;  // stage-2 default is 5e-5, applied when loading configs
  int batch_size = 4;
  int grad_accum = 8;
  int epochs = 1;     // stage-2 default 10
  int max_steps = 0;  // overrides epochs when > 0
  double ratio_asr = 0.2, ratio_ser = 0.3, ratio_both = 0.5;
  double replay_fraction = 0.2;
  double lambda = 0.1;
  std::uint64_t seed = 1;
  bool freeze_subsampler = false;      // "w/o multitask" ablation
  bool placeholder_for_asr = false;    // stage-2 ASR batches get a placeholder slot

  void validate() const {
    if (stage != 1 && stage != 2) throw std::runtime_error("stage must be 1 or 2");
    double sum = ratio_asr + ratio_ser + ratio_both;
    if (std::abs(sum - 1.0) > 1e-9 || ratio_asr < 0 || ratio_ser < 0 || ratio_both < 0)
      throw std::runtime_error("task ratios must be nonnegative and sum to 1");
    if (replay_fraction < 0.0 || replay_fraction > 1.0)
      throw std::runtime_error("replay_fraction must lie in [0,1]");
    if (batch_size < 1 || grad_accum < 1) throw std::runtime_error("bad batch configuration");
  }
};

inline TaskKind sample_task(const TrainingConfig& cfg, Rng& rng) {
  double u = rng.uniform();
  if (u < cfg.ratio_asr) return TaskKind::ASR;
  if (u < cfg.ratio_asr + cfg.ratio_ser) return TaskKind::SER;
  return TaskKind::BOTH;
}

// Uniform sample without replacement of size floor(fraction * N).
inline std::vector<ManifestRecord> build_replay_pool(const std::vector<ManifestRecord>& stage1_asr,
                                                     double fraction, Rng& rng) {
  if (fraction < 0.0 || fraction > 1.0)
    throw std::runtime_error("replay fraction must lie in [0,1]");
  const std::size_t n = stage1_asr.size();
  const std::size_t k = static_cast<std::size_t>(fraction * static_cast<double>(n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k && i + 1 < n; ++i)
    std::swap(idx[i], idx[i + rng.index(n - i)]);
  std::vector<ManifestRecord> pool;
  pool.reserve(k);
  for (std::size_t i = 0; i < k; ++i) pool.push_back(stage1_asr[idx[i]]);
  return pool;
}

inline std::string build_target(TaskKind task, const ManifestRecord& record,
                                const TemplateStore& templates, Rng& rng) {
  std::optional<std::string> transcript;
  std::optional<EmotionLabel> emotion;
  if (task == TaskKind::ASR || task == TaskKind::BOTH) {
    if (record.transcript.empty())
      throw std::runtime_error("record " + record.id + " lacks a transcript for task " +
                               to_string(task));
    transcript = record.transcript;
  }
  if (task == TaskKind::SER || task == TaskKind::BOTH) {
    if (!record.emotion)
      throw std::runtime_error("record " + record.id + " lacks an emotion label for task " +
                               to_string(task));
    emotion = record.emotion;
  }
  return fill_template(templates.sample(task, rng), transcript, emotion);
}

struct LogRow {
  int step = 0;
  TaskKind task = TaskKind::ASR;
  LossBreakdown loss;
};

inline void write_log_row(std::ostream& os, const LogRow& row) {
  nlohmann::json j = {{"step", row.step}, {"task", to_string(row.task)},
                      {"decoder_loss", row.loss.decoder_loss},
                      {"emotion_loss", row.loss.emotion_loss}, {"total", row.loss.total}};
  os << j.dump() << "\n";
}

struct StageRunResult {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int steps = 0;
};

namespace detail {

// Forward/backward for one example; accumulates adapter gradients and
// returns the per-example loss terms. `emotion_target < 0` disables the
// emotion-classifier loss path.
struct ExampleResult {
  double decoder_loss = 0.0;
  double emotion_loss = 0.0;
};

inline ExampleResult train_example(Model& model, const LayeredFeatures& feats,
                                   const std::string& prompt_text,
                                   const std::string& target_text, const Vec* placeholder,
                                   bool update_subsampler, bool update_multiscale,
                                   int emotion_target, double lambda) {
  SubsamplerAdapter::Cache sub_cache;
  Matrix content_emb = model.subsampler.forward(content_layer(feats), &sub_cache);

  MultiscaleAdapter::Cache ms_cache;
  LayeredFeatures ms_view;
  Vec emotion_emb;
  Vec cls_logits;
  bool used_multiscale = false;
  if (placeholder) {
    emotion_emb = *placeholder;
  } else {
    ms_view = model.multiscale_view(feats);
    auto out = model.multiscale.forward(ms_view, &ms_cache);
    emotion_emb = std::move(out.embedding);
    cls_logits = std::move(out.logits);
    used_multiscale = true;
  }

  std::vector<int> prompt_ids = model.tokenizer.encode(prompt_text, /*add_bos=*/true);
  std::vector<int> target_ids = model.tokenizer.encode(target_text, false, /*add_eos=*/true);
  AssembledInput input = assemble(model.decoder, prompt_ids, content_emb, emotion_emb, target_ids);

  ToyDecoder::Cache dec_cache;
  Matrix logits = model.decoder.forward(input.embeddings, &dec_cache);
  Matrix d_logits;
  ExampleResult res;
  res.decoder_loss = masked_ce_loss(logits, input.token_ids, input.loss_mask, &d_logits);

  Matrix d_x = model.decoder.backward(dec_cache, d_logits, /*accumulate_param_grads=*/false);

  if (update_subsampler) {
    Matrix d_content(content_emb.rows(), content_emb.cols());
    for (std::size_t t = 0; t < content_emb.rows(); ++t)
      std::copy(d_x.row(input.content_begin() + t), d_x.row(input.content_begin() + t) + d_x.cols(),
                d_content.row(t));
    model.subsampler.backward(sub_cache, d_content);
  }

  Vec d_cls;
  if (emotion_target >= 0 && used_multiscale) {
    // CE on classifier logits.
    double mx = cls_logits[0];
    for (double v : cls_logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : cls_logits) sum += std::exp(v - mx);
    double logz = mx + std::log(sum);
    res.emotion_loss = logz - cls_logits[static_cast<std::size_t>(emotion_target)];
    if (lambda != 0.0 && update_multiscale) {
      d_cls.resize(cls_logits.size());
      for (std::size_t c = 0; c < cls_logits.size(); ++c)
        d_cls[c] = lambda * (std::exp(cls_logits[c] - logz) -
                             (c == static_cast<std::size_t>(emotion_target) ? 1.0 : 0.0));
    }
  }

  if (used_multiscale && update_multiscale) {
    Vec d_emotion(d_x.cols());
    std::copy(d_x.row(input.emotion_pos()), d_x.row(input.emotion_pos()) + d_x.cols(),
              d_emotion.begin());
    model.multiscale.backward(ms_cache, d_emotion, d_cls);
  }
  return res;
}

inline int resolve_steps(const TrainingConfig& cfg, std::size_t dataset_size) {
  if (cfg.max_steps > 0) return cfg.max_steps;
  const int per_step = cfg.batch_size * cfg.grad_accum;
  const int steps_per_epoch =
      static_cast<int>((dataset_size + static_cast<std::size_t>(per_step) - 1) /
                       static_cast<std::size_t>(per_step));
  return std::max(1, cfg.epochs * steps_per_epoch);
}

}  // namespace detail

// Stage 1: semantic alignment. Only the subsampler trains; the emotion slot
// is a fresh random placeholder per example; loss is masked CE on the
// transcription tokens.
inline StageRunResult run_stage1(const TrainingConfig& cfg,
                                 const std::vector<ManifestRecord>& asr_records, Model& model,
                                 FeatureProvider& features, std::ostream* log = nullptr) {
  cfg.validate();
  if (cfg.stage != 1) throw std::runtime_error("run_stage1: config stage != 1");
  if (asr_records.empty()) throw std::runtime_error("run_stage1: empty manifest");
  for (const auto& r : asr_records)
    if (r.transcript.empty())
      throw std::runtime_error("run_stage1: record " + r.id + " has no transcript");

  Rng base(cfg.seed);
  Rng data_rng = base.fork(1);
  Rng placeholder_rng = base.fork(3);

  Adam opt(cfg.lr);
  std::vector<Param*> trainable;
  for (auto& p : model.subsampler.params().all()) trainable.push_back(&p);

  const int steps = detail::resolve_steps(cfg, asr_records.size());
  const int examples_per_step = cfg.batch_size * cfg.grad_accum;
  StageRunResult result;
  result.steps = steps;

  for (int step = 0; step < steps; ++step) {
    model.subsampler.params().zero_grad();
    double loss_sum = 0.0;
    for (int e = 0; e < examples_per_step; ++e) {
      const ManifestRecord& rec = asr_records[data_rng.index(asr_records.size())];
      Vec placeholder = placeholder_emotion(placeholder_rng, model.config.d_lm);
      auto res = detail::train_example(model, features.get(rec), task_prompt(TaskKind::ASR),
                                       rec.transcript, &placeholder,
                                       /*update_subsampler=*/true, /*update_multiscale=*/false,
                                       /*emotion_target=*/-1, 0.0);
      loss_sum += res.decoder_loss;
    }
    double mean_loss = loss_sum / examples_per_step;
    if (!std::isfinite(mean_loss))
      throw std::runtime_error("run_stage1: non-finite loss at step " + std::to_string(step));
    model.subsampler.params().scale_grad(1.0 / examples_per_step);
    model.subsampler.params().check_finite_grads();
    opt.step(trainable);

    LossBreakdown b = combine_loss(mean_loss, 0.0, 0.0);
    if (step == 0) result.initial_loss = mean_loss;
    result.final_loss = mean_loss;
    if (log) write_log_row(*log, LogRow{step, TaskKind::ASR, b});
  }
  return result;
}

// Stage 2: emotion alignment with multitask batches and ASR replay. Both
// adapters train (subject to the ablation freeze flag); classifier outputs
// never enter the decoder input.
inline StageRunResult run_stage2(const TrainingConfig& cfg,
                                 const std::vector<ManifestRecord>& ser_records,
                                 const std::vector<ManifestRecord>& replay_pool,
                                 const TemplateStore& templates, Model& model,
                                 FeatureProvider& features, std::ostream* log = nullptr) {
  cfg.validate();
  if (cfg.stage != 2) throw std::runtime_error("run_stage2: config stage != 2");
  for (const auto& r : ser_records)
    if (!r.emotion)
      throw std::runtime_error("run_stage2: record " + r.id + " has no emotion label");

  std::vector<ManifestRecord> both_records;
  for (const auto& r : ser_records)
    if (!r.transcript.empty()) both_records.push_back(r);

  Rng base(cfg.seed);
  Rng data_rng = base.fork(1);
  Rng task_rng = base.fork(2);
  Rng placeholder_rng = base.fork(3);
  Rng template_rng = base.fork(4);

  Adam opt(cfg.lr);
  std::vector<Param*> trainable;
  if (!cfg.freeze_subsampler)
    for (auto& p : model.subsampler.params().all()) trainable.push_back(&p);
  for (auto& p : model.multiscale.params().all()) trainable.push_back(&p);

  std::size_t nominal = std::max(ser_records.size() + replay_pool.size(), std::size_t{1});
  const int steps = detail::resolve_steps(cfg, nominal);
  const int examples_per_step = cfg.batch_size * cfg.grad_accum;
  StageRunResult result;
  result.steps = steps;

  for (int step = 0; step < steps; ++step) {
    model.subsampler.params().zero_grad();
    model.multiscale.params().zero_grad();

    TaskKind task = sample_task(cfg, task_rng);
    const std::vector<ManifestRecord>* pool = nullptr;
    switch (task) {
      case TaskKind::ASR: pool = &replay_pool; break;
      case TaskKind::SER: pool = &ser_records; break;
      case TaskKind::BOTH: pool = &both_records; break;
    }
    if (pool->empty())
      throw std::runtime_error(std::string("run_stage2: empty pool for task ") + to_string(task));

    double dec_sum = 0.0, emo_sum = 0.0;
    for (int e = 0; e < examples_per_step; ++e) {
      const ManifestRecord& rec = (*pool)[data_rng.index(pool->size())];
      std::string target = build_target(task, rec, templates, template_rng);
      Vec placeholder;
      const Vec* placeholder_ptr = nullptr;
      if (task == TaskKind::ASR && cfg.placeholder_for_asr) {
        placeholder = placeholder_emotion(placeholder_rng, model.config.d_lm);
        placeholder_ptr = &placeholder;
      }
      int emotion_target = (task != TaskKind::ASR) ? rec.emotion->index : -1;
      auto res = detail::train_example(model, features.get(rec), task_prompt(task), target,
                                       placeholder_ptr, !cfg.freeze_subsampler,
                                       /*update_multiscale=*/true, emotion_target, cfg.lambda);
      dec_sum += res.decoder_loss;
      emo_sum += res.emotion_loss;
    }
    double dec_mean = dec_sum / examples_per_step;
    double emo_mean = emo_sum / examples_per_step;
    LossBreakdown b = combine_loss(dec_mean, emo_mean, cfg.lambda);
    if (!std::isfinite(b.total))
      throw std::runtime_error("run_stage2: non-finite loss at step " + std::to_string(step));

    model.subsampler.params().scale_grad(1.0 / examples_per_step);
    model.multiscale.params().scale_grad(1.0 / examples_per_step);
    model.subsampler.params().check_finite_grads();
    model.multiscale.params().check_finite_grads();
    opt.step(trainable);

    if (step == 0) result.initial_loss = b.total;
    result.final_loss = b.total;
    if (log) write_log_row(*log, LogRow{step, task, b});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Adapter checkpoints and diagnostics
// ---------------------------------------------------------------------------

inline void save_adapters(const std::string& path_prefix, const Model& model,
                          const std::string& stage_tag) {
  CheckpointMeta meta{stage_tag, model.config.hash()};
  save_checkpoint(path_prefix, meta,
                  {&model.subsampler.params(), &model.multiscale.params()},
                  {"subsampler", "multiscale"});
}

inline CheckpointMeta load_adapters(const std::string& path_prefix, Model& model,
                                    bool require_matching_config = true) {
  CheckpointMeta meta = load_checkpoint(
      path_prefix, {&model.subsampler.params(), &model.multiscale.params()},
      {"subsampler", "multiscale"});
  if (require_matching_config && meta.config_hash != model.config.hash())
    throw std::runtime_error("checkpoint config hash mismatch (stale checkpoint): " + path_prefix);
  return meta;
}

// Mean masked transcription CE without gradient computation; used for the
// catastrophic-forgetting guard.
inline double evaluate_asr_ce(Model& model, const std::vector<ManifestRecord>& records,
                              FeatureProvider& features, bool use_placeholder,
                              std::uint64_t seed = 99) {
  if (records.empty()) throw std::runtime_error("evaluate_asr_ce: no records");
  Rng rng(seed);
  double sum = 0.0;
  for (const auto& rec : records) {
    const LayeredFeatures& feats = features.get(rec);
    Matrix content_emb = model.subsampler.forward(content_layer(feats));
    Vec emotion_emb;
    if (use_placeholder) {
      emotion_emb = placeholder_emotion(rng, model.config.d_lm);
    } else {
      LayeredFeatures view = model.multiscale_view(feats);
      emotion_emb = model.multiscale.forward(view).embedding;
    }
    std::vector<int> prompt_ids = model.tokenizer.encode(task_prompt(TaskKind::ASR), true);
    std::vector<int> target_ids = model.tokenizer.encode(rec.transcript, false, true);
    AssembledInput input =
        assemble(model.decoder, prompt_ids, content_emb, emotion_emb, target_ids);
    Matrix logits = model.decoder.forward(input.embeddings);
    sum += masked_ce_loss(logits, input.token_ids, input.loss_mask);
  }
  return sum / static_cast<double>(records.size());
}

// Training-fixture accuracy of the emotion classifier.
inline double classifier_accuracy(Model& model, const std::vector<ManifestRecord>& records,
                                  FeatureProvider& features) {
  if (records.empty()) throw std::runtime_error("classifier_accuracy: no records");
  std::size_t correct = 0;
  for (const auto& rec : records) {
    if (!rec.emotion) continue;
    LayeredFeatures view = model.multiscale_view(features.get(rec));
    Vec logits = model.multiscale.forward(view).logits;
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.size(); ++c)
      if (logits[c] > logits[best]) best = c;
    if (static_cast<int>(best) == rec.emotion->index) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

}  // namespace lpe
