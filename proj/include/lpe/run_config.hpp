#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "lpe/lm_bridge.hpp"
#include "lpe/training.hpp"

namespace lpe {

// Merged view of model, training, sampling, and path configuration. Every
// command serializes its fully-resolved RunConfig next to its outputs so
// runs can be reproduced from that file alone.
struct RunConfig {
  ModelConfig model;
  TrainingConfig training;
  SamplingConfig sampling;
  std::string variant = "zero_shot_steps";
  std::map<std::string, std::string> paths;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["model"] = {{"enc_layers", model.enc_layers},
                  {"d_enc", model.d_enc},
                  {"d_lm", model.d_lm},
                  {"num_emotions", model.num_emotions},
                  {"include_layer0", model.include_layer0},
                  {"encoder_seed", model.encoder_seed},
                  {"adapter_seed", model.adapter_seed},
                  {"decoder", {{"d_model", model.decoder.d_model},
                               {"n_layers", model.decoder.n_layers},
                               {"n_heads", model.decoder.n_heads},
                               {"d_ff", model.decoder.d_ff},
                               {"max_seq", model.decoder.max_seq},
                               {"seed", model.decoder.seed}}}};
    j["training"] = {{"stage", training.stage},
                     {"lr", training.lr},
                     {"batch_size", training.batch_size},
                     {"grad_accum", training.grad_accum},
                     {"epochs", training.epochs},
                     {"max_steps", training.max_steps},
                     {"ratio_asr", training.ratio_asr},
                     {"ratio_ser", training.ratio_ser},
                     {"ratio_both", training.ratio_both},
                     {"replay_fraction", training.replay_fraction},
                     {"lambda", training.lambda},
                     {"seed", training.seed},
                     {"freeze_subsampler", training.freeze_subsampler},
                     {"placeholder_for_asr", training.placeholder_for_asr}};
    j["sampling"] = {{"temperature", sampling.temperature},
                     {"top_p", sampling.top_p},
                     {"max_new_tokens", sampling.max_new_tokens},
                     {"seed", sampling.seed}};
    j["variant"] = variant;
    j["paths"] = paths;
    return j;
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    if (j.contains("model")) {
      const auto& m = j.at("model");
      c.model.enc_layers = m.value("enc_layers", c.model.enc_layers);
      c.model.d_enc = m.value("d_enc", c.model.d_enc);
      c.model.d_lm = m.value("d_lm", c.model.d_lm);
      c.model.num_emotions = m.value("num_emotions", c.model.num_emotions);
      c.model.include_layer0 = m.value("include_layer0", c.model.include_layer0);
      c.model.encoder_seed = m.value("encoder_seed", c.model.encoder_seed);
      c.model.adapter_seed = m.value("adapter_seed", c.model.adapter_seed);
      if (m.contains("decoder")) {
        const auto& d = m.at("decoder");
        c.model.decoder.d_model = d.value("d_model", c.model.decoder.d_model);
        c.model.decoder.n_layers = d.value("n_layers", c.model.decoder.n_layers);
        c.model.decoder.n_heads = d.value("n_heads", c.model.decoder.n_heads);
        c.model.decoder.d_ff = d.value("d_ff", c.model.decoder.d_ff);
        c.model.decoder.max_seq = d.value("max_seq", c.model.decoder.max_seq);
        c.model.decoder.seed = d.value("seed", c.model.decoder.seed);
      }
    }
    c.model.decoder.d_model = c.model.d_lm;
    if (j.contains("training")) {
      const auto& t = j.at("training");
      c.training.stage = t.value("stage", c.training.stage);
      // Stage-dependent defaults: lr 2e-4 / 5e-5 and 1 / 10 epochs for stages 1 / 2.
      c.training.lr = c.training.stage == 2 ? 5e-5 : 2e-4;
      c.training.epochs = c.training.stage == 2 ? 10 : 1;
      c.training.lr = t.value("lr", c.training.lr);
      c.training.epochs = t.value("epochs", c.training.epochs);
      c.training.batch_size = t.value("batch_size", c.training.batch_size);
      c.training.grad_accum = t.value("grad_accum", c.training.grad_accum);
      c.training.max_steps = t.value("max_steps", c.training.max_steps);
      c.training.ratio_asr = t.value("ratio_asr", c.training.ratio_asr);
      c.training.ratio_ser = t.value("ratio_ser", c.training.ratio_ser);
      c.training.ratio_both = t.value("ratio_both", c.training.ratio_both);
      c.training.replay_fraction = t.value("replay_fraction", c.training.replay_fraction);
      c.training.lambda = t.value("lambda", c.training.lambda);
      c.training.seed = t.value("seed", c.training.seed);
      c.training.freeze_subsampler = t.value("freeze_subsampler", c.training.freeze_subsampler);
      c.training.placeholder_for_asr =
          t.value("placeholder_for_asr", c.training.placeholder_for_asr);
    }
    if (j.contains("sampling")) {
      const auto& s = j.at("sampling");
      c.sampling.temperature = s.value("temperature", c.sampling.temperature);
      c.sampling.top_p = s.value("top_p", c.sampling.top_p);
      c.sampling.max_new_tokens = s.value("max_new_tokens", c.sampling.max_new_tokens);
      c.sampling.seed = s.value("seed", c.sampling.seed);
    }
    c.variant = j.value("variant", c.variant);
    if (j.contains("paths"))
      for (auto& [k, v] : j.at("paths").items()) c.paths[k] = v.get<std::string>();
    return c;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    return from_json(nlohmann::json::parse(is));
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write config: " + path);
    os << to_json().dump(2) << "\n";
  }

  std::string path(const std::string& key) const {
    auto it = paths.find(key);
    if (it == paths.end()) throw std::runtime_error("config is missing path: " + key);
    return it->second;
  }

  bool has_path(const std::string& key) const { return paths.count(key) != 0; }
};

}  // namespace lpe
