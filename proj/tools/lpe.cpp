// lpe: train / infer / eval / compare / prep pipeline driver.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lpe/data_model.hpp"
#include "lpe/evaluation.hpp"
#include "lpe/fixtures.hpp"
#include "lpe/judge_http.hpp"
#include "lpe/lm_bridge.hpp"
#include "lpe/prompting.hpp"
#include "lpe/run_config.hpp"
#include "lpe/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct JudgeOptions {
  std::string kind = "stub";  // stub | length | position | http | none
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string fixed = "4,4,4";
};

std::unique_ptr<lpe::Judge> make_judge(const JudgeOptions& opt) {
  if (opt.kind == "none") return nullptr;
  if (opt.kind == "length") return std::make_unique<lpe::LengthBiasedJudge>();
  if (opt.kind == "position") return std::make_unique<lpe::PositionBiasedJudge>();
  if (opt.kind == "http") return std::make_unique<lpe::HttpJudge>(opt.host, opt.port);
  if (opt.kind == "stub") {
    lpe::JudgeScore s;
    if (std::sscanf(opt.fixed.c_str(), "%d,%d,%d", &s.content, &s.empathy, &s.clarity) != 3)
      throw std::runtime_error("bad --judge-fixed value: " + opt.fixed);
    return std::make_unique<lpe::FixedScoreJudge>(s);
  }
  throw std::runtime_error("unknown judge kind: " + opt.kind);
}

void write_run_config(const lpe::RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  cfg.save((fs::path(out_dir) / "run_config.json").string());
}

lpe::Model build_model(const lpe::RunConfig& cfg) {
  lpe::Model model(cfg.model);
  if (cfg.has_path("decoder")) lpe::load_decoder(cfg.path("decoder"), model.decoder);
  return model;
}

std::map<std::string, std::string> load_jsonl_by_id(const std::string& path,
                                                    const std::string& field) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    out[j.at("id").get<std::string>()] = j.at(field).get<std::string>();
  }
  return out;
}

void check_id_alignment(const std::map<std::string, std::string>& a, const std::string& a_name,
                        const std::map<std::string, std::string>& b, const std::string& b_name) {
  std::vector<std::string> missing;
  for (const auto& [id, _] : a)
    if (!b.count(id)) missing.push_back(id + " (present in " + a_name + ", missing in " + b_name + ")");
  for (const auto& [id, _] : b)
    if (!a.count(id)) missing.push_back(id + " (present in " + b_name + ", missing in " + a_name + ")");
  if (!missing.empty()) {
    std::string msg = "id mismatch:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw std::runtime_error(msg);
  }
}

// ---------------------------------------------------------------------------

int cmd_prep(const std::string& config_path, const std::string& out_dir, int n_asr, int n_ser,
             int n_test, int decoder_steps, double decoder_lr,
             std::optional<std::uint64_t> seed) {
  lpe::RunConfig cfg =
      config_path.empty() ? lpe::RunConfig{} : lpe::RunConfig::load(config_path);
  if (seed) cfg.model.decoder.seed = static_cast<std::uint32_t>(*seed);
  if (!cfg.has_path("emotions")) cfg.paths["emotions"] = "fixtures/emotions.json";
  if (!cfg.has_path("templates")) cfg.paths["templates"] = "fixtures/templates.jsonl";

  lpe::EmotionVocab vocab = lpe::EmotionVocab::load(cfg.path("emotions"));
  lpe::TemplateStore templates = lpe::TemplateStore::load(cfg.path("templates"));
  cfg.model.num_emotions = vocab.size();

  const std::string corpus_dir = (fs::path(out_dir) / "corpus").string();
  auto corpus = lpe::fixtures::build(corpus_dir, vocab, n_asr, n_ser, n_test);
  std::cout << "wrote corpus: " << corpus.asr_train.size() << " asr / " << corpus.ser_train.size()
            << " ser / " << corpus.test_set.size() << " test records\n";

  cfg.model.decoder.d_model = cfg.model.d_lm;
  lpe::ToyDecoder decoder(cfg.model.decoder);
  auto lines = lpe::fixtures::decoder_corpus(corpus, templates, vocab);
  double final_loss = 0.0;
  lpe::pretrain_decoder(decoder, lines, decoder_steps, decoder_lr, cfg.model.decoder.seed, 24,
                        &final_loss);
  const std::string decoder_prefix = (fs::path(out_dir) / "decoder").string();
  lpe::save_decoder(decoder_prefix, decoder);
  lpe::ByteTokenizer().save_vocab((fs::path(out_dir) / "vocab.json").string());
  std::cout << "pretrained decoder on " << lines.size() << " lines, " << decoder_steps
            << " steps, final CE " << final_loss << "\n";

  cfg.paths["decoder"] = decoder_prefix;
  cfg.paths["asr_manifest"] = (fs::path(corpus_dir) / "asr_train.jsonl").string();
  cfg.paths["ser_manifest"] = (fs::path(corpus_dir) / "ser_train.jsonl").string();
  cfg.paths["test_manifest"] = (fs::path(corpus_dir) / "test.jsonl").string();
  write_run_config(cfg, out_dir);
  return 0;
}

int cmd_train(int stage, const std::string& config_path, const std::string& out_dir,
              const std::string& init_prefix, std::optional<double> lambda_override,
              const std::string& ratios, bool freeze_subsampler, std::optional<int> max_steps,
              std::optional<std::uint64_t> seed) {
  lpe::RunConfig cfg = lpe::RunConfig::load(config_path);
  cfg.training.stage = stage;
  if (lambda_override) cfg.training.lambda = *lambda_override;
  if (freeze_subsampler) cfg.training.freeze_subsampler = true;
  if (max_steps) cfg.training.max_steps = *max_steps;
  if (seed) cfg.training.seed = *seed;
  if (!ratios.empty()) {
    if (std::sscanf(ratios.c_str(), "%lf,%lf,%lf", &cfg.training.ratio_asr,
                    &cfg.training.ratio_ser, &cfg.training.ratio_both) != 3)
      throw std::runtime_error("bad --ratios value: " + ratios);
  }
  cfg.training.validate();
  write_run_config(cfg, out_dir);

  lpe::EmotionVocab vocab = lpe::EmotionVocab::load(cfg.path("emotions"));
  cfg.model.num_emotions = vocab.size();
  lpe::Model model = build_model(cfg);

  std::ofstream log((fs::path(out_dir) / "train_log.jsonl").string());
  const std::string ckpt = (fs::path(out_dir) / "adapters").string();

  if (stage == 1) {
    auto records = lpe::load_manifest(cfg.path("asr_manifest"), vocab);
    lpe::FeatureProvider features(model.encoder,
                                  fs::path(cfg.path("asr_manifest")).parent_path().string());
    auto result = lpe::run_stage1(cfg.training, records, model, features, &log);
    lpe::save_adapters(ckpt, model, "stage1");
    std::cout << "stage1 done: " << result.steps << " steps, CE " << result.initial_loss
              << " -> " << result.final_loss << "\n";
  } else {
    if (init_prefix.empty())
      throw CLI::ValidationError("--init", "stage 2 requires a stage-1 checkpoint (--init)");
    auto meta = lpe::load_adapters(init_prefix, model);
    if (meta.stage != "stage1")
      throw std::runtime_error("--init checkpoint is not a stage-1 checkpoint");

    auto ser_records = lpe::load_manifest(cfg.path("ser_manifest"), vocab);
    auto asr_records = lpe::load_manifest(cfg.path("asr_manifest"), vocab);
    lpe::FeatureProvider features(model.encoder,
                                  fs::path(cfg.path("ser_manifest")).parent_path().string());
    lpe::Rng replay_rng = lpe::Rng(cfg.training.seed).fork(7);
    auto replay = lpe::build_replay_pool(asr_records, cfg.training.replay_fraction, replay_rng);
    lpe::TemplateStore templates = lpe::TemplateStore::load(cfg.path("templates"));
    auto result =
        lpe::run_stage2(cfg.training, ser_records, replay, templates, model, features, &log);
    lpe::save_adapters(ckpt, model, "stage2");
    std::cout << "stage2 done: " << result.steps << " steps, loss " << result.initial_loss
              << " -> " << result.final_loss << "\n";
  }
  std::cout << "checkpoint: " << ckpt << ".{bin,json}\n";
  return 0;
}

int cmd_infer(const std::string& config_path, const std::string& checkpoint,
              const std::string& manifest_path, const std::string& variant_name,
              const std::string& rationales_path, const std::string& out_dir,
              std::optional<double> temperature, std::optional<double> top_p,
              std::optional<std::uint64_t> seed) {
  lpe::RunConfig cfg = lpe::RunConfig::load(config_path);
  cfg.variant = variant_name;
  if (temperature) cfg.sampling.temperature = *temperature;
  if (top_p) cfg.sampling.top_p = *top_p;
  if (seed) cfg.sampling.seed = *seed;
  if (!manifest_path.empty()) cfg.paths["test_manifest"] = manifest_path;
  write_run_config(cfg, out_dir);

  lpe::EmotionVocab vocab = lpe::EmotionVocab::load(cfg.path("emotions"));
  cfg.model.num_emotions = vocab.size();
  lpe::Model model = build_model(cfg);
  lpe::load_adapters(checkpoint, model);

  lpe::CoTVariant variant = lpe::cot_variant_from_string(cfg.variant);
  std::string prompts_dir = cfg.has_path("prompts") ? cfg.path("prompts") : "fixtures/prompts";
  lpe::PromptLibrary prompts = lpe::PromptLibrary::load(prompts_dir);
  lpe::RationaleBank bank;
  if (variant == lpe::CoTVariant::few_shot) {
    if (rationales_path.empty() && !cfg.has_path("rationales"))
      throw CLI::ValidationError("--rationales", "few_shot requires a rationale bank");
    bank = lpe::load_rationale_bank(
        rationales_path.empty() ? cfg.path("rationales") : rationales_path, vocab);
  }

  auto records = lpe::load_manifest(cfg.path("test_manifest"), vocab);
  lpe::FeatureProvider features(model.encoder,
                                fs::path(cfg.path("test_manifest")).parent_path().string());

  std::ofstream out((fs::path(out_dir) / "responses.jsonl").string());
  lpe::Rng prompt_rng(cfg.sampling.seed);
  for (const auto& rec : records) {
    lpe::PromptSpec prompt = lpe::build_prompt(prompts, variant, &bank, &prompt_rng);
    const lpe::LayeredFeatures& feats = features.get(rec);
    lpe::Matrix content = model.subsampler.forward(lpe::content_layer(feats));
    lpe::LayeredFeatures view = model.multiscale_view(feats);
    lpe::Vec emotion = model.multiscale.forward(view).embedding;
    std::vector<int> prompt_ids = model.tokenizer.encode(prompt.resolved_text, true);
    lpe::AssembledInput input = lpe::assemble(model.decoder, prompt_ids, content, emotion);
    lpe::SamplingConfig sampling = cfg.sampling;
    sampling.seed = lpe::fnv1a(rec.id, cfg.sampling.seed ^ 0x5851F42D4C957F2DULL);
    std::string response = lpe::generate(model.decoder, input, sampling);
    json row = {{"id", rec.id},
                {"prompt_variant", lpe::to_string(variant)},
                {"response", response},
                {"seed", sampling.seed},
                {"prompt_hash", lpe::to_hex(lpe::fnv1a(prompt.resolved_text))}};
    out << row.dump() << "\n";
  }
  std::cout << "wrote " << records.size() << " responses to " << out_dir << "/responses.jsonl\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& responses_path,
             const std::string& references_path, const std::string& out_dir,
             const JudgeOptions& judge_opt, std::optional<std::uint64_t> seed) {
  lpe::RunConfig cfg = config_path.empty() ? lpe::RunConfig{} : lpe::RunConfig::load(config_path);
  if (!cfg.has_path("emotions")) cfg.paths["emotions"] = "fixtures/emotions.json";
  if (seed) cfg.sampling.seed = *seed;  // recorded for provenance; scoring is deterministic
  write_run_config(cfg, out_dir);
  lpe::EmotionVocab vocab = lpe::EmotionVocab::load(cfg.path("emotions"));

  auto responses = load_jsonl_by_id(responses_path, "response");
  auto references = load_jsonl_by_id(references_path, "reference");
  check_id_alignment(responses, "responses", references, "references");

  // Optional question/emotion context per reference row.
  std::map<std::string, std::string> questions, emotions;
  {
    std::ifstream is(references_path);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      std::string id = j.at("id").get<std::string>();
      if (j.contains("question")) questions[id] = j.at("question").get<std::string>();
      if (j.contains("emotion")) emotions[id] = j.at("emotion").get<std::string>();
    }
  }

  auto judge = make_judge(judge_opt);
  lpe::TokenEmbedder embedder = lpe::hash_embedder();

  std::vector<lpe::MetricRow> rows;
  std::vector<std::pair<std::string, std::string>> corpus_pairs;
  for (const auto& [id, response] : responses) {
    const std::string& reference = references.at(id);
    lpe::MetricRow row;
    row.id = id;
    lpe::TranscriptPair pair{reference, response};
    row.values["wer"] = lpe::edit_distance_rate(pair, lpe::EditUnit::word);
    row.values["cer"] = lpe::edit_distance_rate(pair, lpe::EditUnit::character);
    // An empty response earns zero overlap rather than aborting the whole report.
    bool empty_response = lpe::normalize_text(response).empty();
    row.values["bleu1"] = empty_response ? 0.0 : lpe::bleu(response, reference, 1);
    row.values["bleu4"] = empty_response ? 0.0 : lpe::bleu(response, reference, 4);
    row.values["similarity_f1"] =
        empty_response ? 0.0 : lpe::similarity_f1(response, reference, embedder);
    if (emotions.count(id)) {
      auto parsed = lpe::parse_emotion(response, vocab);
      row.values["emotion_correct"] = (parsed && parsed->name == emotions.at(id)) ? 1.0 : 0.0;
    }
    if (judge) {
      lpe::JudgeScore s = lpe::judge_score(questions.count(id) ? questions.at(id) : reference,
                                           emotions.count(id) ? emotions.at(id) : "",
                                           response, *judge);
      row.values["judge_content"] = s.content;
      row.values["judge_empathy"] = s.empathy;
      row.values["judge_clarity"] = s.clarity;
    }
    corpus_pairs.emplace_back(response, reference);
    rows.push_back(std::move(row));
  }

  lpe::EvaluationReport report = lpe::aggregate(std::move(rows));
  lpe::write_report(report, (fs::path(out_dir) / "rows.jsonl").string(),
                    (fs::path(out_dir) / "aggregate.json").string());

  // Table-style corpus BLEU alongside the per-sentence diagnostics.
  {
    std::ifstream agg_in((fs::path(out_dir) / "aggregate.json").string());
    json agg = json::parse(agg_in);
    agg["corpus_bleu1"] = lpe::corpus_bleu(corpus_pairs, 1);
    agg["corpus_bleu4"] = lpe::corpus_bleu(corpus_pairs, 4);
    std::ofstream agg_out((fs::path(out_dir) / "aggregate.json").string());
    agg_out << agg.dump(2) << "\n";
  }
  std::cout << "wrote evaluation report to " << out_dir << "\n";
  return 0;
}

int cmd_compare(const std::string& config_path, const std::string& a_path,
                const std::string& b_path, const std::string& context_path,
                const std::string& out_dir, const JudgeOptions& judge_opt,
                std::optional<std::uint64_t> seed) {
  lpe::RunConfig cfg = config_path.empty() ? lpe::RunConfig{} : lpe::RunConfig::load(config_path);
  if (seed) cfg.sampling.seed = *seed;  // recorded for provenance; scoring is deterministic
  write_run_config(cfg, out_dir);

  auto a = load_jsonl_by_id(a_path, "response");
  auto b = load_jsonl_by_id(b_path, "response");
  check_id_alignment(a, "responses_a", b, "responses_b");

  std::map<std::string, std::string> context;
  if (!context_path.empty()) {
    std::ifstream is(context_path);
    if (!is) throw std::runtime_error("cannot open context manifest: " + context_path);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      context[j.at("id").get<std::string>()] = j.value("transcript", std::string());
    }
    check_id_alignment(a, "responses_a", context, "context");
  }

  auto judge = make_judge(judge_opt);
  if (!judge) throw std::runtime_error("compare requires a judge (--judge)");

  std::vector<lpe::ComparisonItem> items;
  std::vector<std::string> ids;
  for (const auto& [id, resp_a] : a) {
    items.push_back({resp_a, b.at(id), context.count(id) ? context.at(id) : ""});
    ids.push_back(id);
  }
  std::vector<lpe::Verdict> verdicts;
  lpe::WinRateResult result = lpe::win_rate(items, *judge, &verdicts);

  json out = {{"wins_a", result.wins_a}, {"wins_b", result.wins_b}, {"ties", result.ties},
              {"rate_a", result.rate_a()}, {"pairs", result.pairs()}};
  std::ofstream os((fs::path(out_dir) / "win_rate.json").string());
  os << out.dump(2) << "\n";
  std::ofstream vs((fs::path(out_dir) / "verdicts.jsonl").string());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const char* v = verdicts[i] == lpe::Verdict::a_wins   ? "a"
                    : verdicts[i] == lpe::Verdict::b_wins ? "b"
                                                          : "tie";
    vs << json({{"id", ids[i]}, {"verdict", v}}).dump() << "\n";
  }
  std::cout << "win rate A: " << result.rate_a() << " (" << result.wins_a << "/" << result.wins_b
            << "/" << result.ties << " w/l/t)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LPE: two-stage speech-adapter training with CoT prompting and evaluation"};
  app.require_subcommand(1);

  // prep
  auto* prep = app.add_subcommand("prep", "generate the synthetic corpus and pretrain the toy decoder");
  std::string prep_config, prep_out = "out/prep";
  int n_asr = 32, n_ser = 16, n_test = 12, decoder_steps = 30000;
  double decoder_lr = 1e-3;
  prep->add_option("--config", prep_config, "base config JSON");
  prep->add_option("--out", prep_out, "output directory");
  prep->add_option("--asr", n_asr, "ASR training utterances");
  prep->add_option("--ser", n_ser, "SER training utterances");
  prep->add_option("--test", n_test, "test utterances");
  prep->add_option("--decoder-steps", decoder_steps, "decoder pretraining steps");
  prep->add_option("--decoder-lr", decoder_lr, "decoder pretraining learning rate");
  std::int64_t prep_seed_flag = -1;
  prep->add_option("--seed", prep_seed_flag, "decoder initialization seed override");

  // train
  auto* train = app.add_subcommand("train", "run stage-1 or stage-2 adapter training");
  int stage = 1;
  std::string train_config, train_out = "out/train", init_prefix, ratios;
  bool freeze_subsampler = false;
  double lambda_flag = -1.0;
  int max_steps_flag = -1;
  std::int64_t seed_flag = -1;
  train->add_option("--stage", stage, "1 or 2")->required()->check(CLI::Range(1, 2));
  train->add_option("--config", train_config, "config JSON")->required();
  train->add_option("--out", train_out, "output directory");
  train->add_option("--init", init_prefix, "stage-1 checkpoint prefix (stage 2 only)");
  train->add_option("--lambda", lambda_flag, "emotion loss weight override");
  train->add_option("--ratios", ratios, "task ratios asr,ser,both");
  train->add_flag("--freeze-subsampler", freeze_subsampler, "train multiscale adapter only");
  train->add_option("--max-steps", max_steps_flag, "step count override");
  train->add_option("--seed", seed_flag, "seed override");

  // infer
  auto* infer = app.add_subcommand("infer", "generate responses for a test manifest");
  std::string infer_config, infer_ckpt, infer_manifest, variant = "zero_shot_steps";
  std::string rationales_path, infer_out = "out/infer";
  double temperature_flag = -1.0, top_p_flag = -1.0;
  std::int64_t infer_seed_flag = -1;
  infer->add_option("--config", infer_config, "config JSON")->required();
  infer->add_option("--checkpoint", infer_ckpt, "adapter checkpoint prefix")->required();
  infer->add_option("--manifest", infer_manifest, "test manifest (defaults to config path)");
  infer->add_option("--variant", variant, "CoT variant");
  infer->add_option("--rationales", rationales_path, "rationale bank (few_shot)");
  infer->add_option("--out", infer_out, "output directory");
  infer->add_option("--temperature", temperature_flag, "sampling temperature (0 = greedy)");
  infer->add_option("--top-p", top_p_flag, "nucleus threshold");
  infer->add_option("--seed", infer_seed_flag, "sampling seed");

  // eval
  auto* eval = app.add_subcommand("eval", "score responses against references");
  std::string eval_config, eval_responses, eval_references, eval_out = "out/eval";
  JudgeOptions eval_judge;
  eval->add_option("--config", eval_config, "config JSON");
  eval->add_option("--responses", eval_responses, "responses JSONL")->required();
  eval->add_option("--references", eval_references, "references JSONL")->required();
  eval->add_option("--out", eval_out, "output directory");
  eval->add_option("--judge", eval_judge.kind, "stub|length|position|http|none");
  eval->add_option("--judge-host", eval_judge.host, "judge host");
  eval->add_option("--judge-port", eval_judge.port, "judge port");
  eval->add_option("--judge-fixed", eval_judge.fixed, "stub scores content,empathy,clarity");
  std::int64_t eval_seed_flag = -1;
  eval->add_option("--seed", eval_seed_flag, "seed recorded in the resolved run config");

  // compare
  auto* compare = app.add_subcommand("compare", "pairwise win-rate with position debiasing");
  std::string cmp_config, cmp_a, cmp_b, cmp_context, cmp_out = "out/compare";
  JudgeOptions cmp_judge;
  cmp_judge.kind = "length";
  compare->add_option("--config", cmp_config, "config JSON");
  compare->add_option("--a", cmp_a, "responses A JSONL")->required();
  compare->add_option("--b", cmp_b, "responses B JSONL")->required();
  compare->add_option("--context", cmp_context, "context manifest JSONL");
  compare->add_option("--out", cmp_out, "output directory");
  compare->add_option("--judge", cmp_judge.kind, "stub|length|position|http");
  compare->add_option("--judge-host", cmp_judge.host, "judge host");
  compare->add_option("--judge-port", cmp_judge.port, "judge port");
  std::int64_t cmp_seed_flag = -1;
  compare->add_option("--seed", cmp_seed_flag, "seed recorded in the resolved run config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;  // 2 = usage error
  }

  try {
    if (*prep)
      return cmd_prep(prep_config, prep_out, n_asr, n_ser, n_test, decoder_steps, decoder_lr,
                      prep_seed_flag >= 0 ? std::optional<std::uint64_t>(prep_seed_flag)
                                          : std::nullopt);
    if (*train)
      return cmd_train(stage, train_config, train_out, init_prefix,
                       lambda_flag >= 0 ? std::optional<double>(lambda_flag) : std::nullopt,
                       ratios, freeze_subsampler,
                       max_steps_flag >= 0 ? std::optional<int>(max_steps_flag) : std::nullopt,
                       seed_flag >= 0 ? std::optional<std::uint64_t>(seed_flag) : std::nullopt);
    if (*infer)
      return cmd_infer(infer_config, infer_ckpt, infer_manifest, variant, rationales_path,
                       infer_out,
                       temperature_flag >= 0 ? std::optional<double>(temperature_flag) : std::nullopt,
                       top_p_flag >= 0 ? std::optional<double>(top_p_flag) : std::nullopt,
                       infer_seed_flag >= 0 ? std::optional<std::uint64_t>(infer_seed_flag)
                                            : std::nullopt);
    if (*eval)
      return cmd_eval(eval_config, eval_responses, eval_references, eval_out, eval_judge,
                      eval_seed_flag >= 0 ? std::optional<std::uint64_t>(eval_seed_flag)
                                          : std::nullopt);
    if (*compare)
      return cmd_compare(cmp_config, cmp_a, cmp_b, cmp_context, cmp_out, cmp_judge,
                         cmp_seed_flag >= 0 ? std::optional<std::uint64_t>(cmp_seed_flag)
                                            : std::nullopt);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
