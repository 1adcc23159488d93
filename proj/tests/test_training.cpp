#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "lpe/fixtures.hpp"
#include "lpe/training.hpp"

namespace fs = std::filesystem;
using namespace lpe;

namespace {

fs::path tmp_dir(const std::string& leaf) {
  fs::path p = fs::temp_directory_path() / "lpe_test_training" / leaf;
  fs::create_directories(p);
  return p;
}

ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.enc_layers = 2;
  cfg.d_enc = 10;
  cfg.d_lm = 12;
  cfg.num_emotions = 4;
  cfg.decoder.d_model = 12;
  cfg.decoder.n_layers = 1;
  cfg.decoder.n_heads = 2;
  cfg.decoder.d_ff = 24;
  cfg.decoder.max_seq = 96;
  return cfg;
}

EmotionVocab fixture_vocab() { return EmotionVocab::load("fixtures/emotions.json"); }

}  // namespace

TEST_CASE("task prompts are distinct per task") {
  std::set<std::string> prompts = {task_prompt(TaskKind::ASR), task_prompt(TaskKind::SER),
                                   task_prompt(TaskKind::BOTH)};
  CHECK(prompts.size() == 3);
}

TEST_CASE("training config validation") {
  TrainingConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.ratio_asr = 0.5;
  CHECK_THROWS(cfg.validate());  // no longer sums to 1
  cfg = TrainingConfig{};
  cfg.replay_fraction = 1.5;
  CHECK_THROWS(cfg.validate());
  cfg = TrainingConfig{};
  cfg.stage = 3;
  CHECK_THROWS(cfg.validate());
  cfg = TrainingConfig{};
  cfg.ratio_asr = 0.0;
  cfg.ratio_ser = 1.0;
  cfg.ratio_both = 0.0;
  CHECK_NOTHROW(cfg.validate());  // single-task ablation is legal
}

TEST_CASE("task sampling frequencies match the ratios") {
  TrainingConfig cfg;
  Rng rng(2024);
  int counts[3] = {0, 0, 0};
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<int>(sample_task(cfg, rng))];
  CHECK(std::abs(counts[0] / static_cast<double>(n) - 0.2) < 0.02);
  CHECK(std::abs(counts[1] / static_cast<double>(n) - 0.3) < 0.02);
  CHECK(std::abs(counts[2] / static_cast<double>(n) - 0.5) < 0.02);
}

TEST_CASE("replay pool is an exact-size deterministic subset") {
  std::vector<ManifestRecord> recs;
  for (int i = 0; i < 100; ++i)
    recs.push_back({"id" + std::to_string(i), "f", "t", std::nullopt, Split::train});

  Rng a(5), b(5), c(6);
  auto p1 = build_replay_pool(recs, 0.2, a);
  auto p2 = build_replay_pool(recs, 0.2, b);
  auto p3 = build_replay_pool(recs, 0.2, c);
  CHECK(p1.size() == 20);
  CHECK(p1 == p2);
  CHECK(p1 != p3);  // different seed, different subset (overwhelmingly likely)

  std::set<std::string> ids;
  for (const auto& r : recs) ids.insert(r.id);
  std::set<std::string> picked;
  for (const auto& r : p1) {
    CHECK(ids.count(r.id) == 1);
    picked.insert(r.id);
  }
  CHECK(picked.size() == p1.size());  // no repeats

  Rng d(5);
  CHECK(build_replay_pool(recs, 0.0, d).empty());
  CHECK_THROWS(build_replay_pool(recs, 1.2, d));
}

TEST_CASE("build_target names the record and task on missing fields") {
  TemplateStore templates = TemplateStore::load("fixtures/templates.jsonl");
  Rng rng(1);
  ManifestRecord no_emotion{"u7", "f", "hello", std::nullopt, Split::train};
  try {
    build_target(TaskKind::SER, no_emotion, templates, rng);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    std::string msg = e.what();
    CHECK(msg.find("u7") != std::string::npos);
    CHECK(msg.find("ser") != std::string::npos);
  }
  ManifestRecord no_transcript{"u8", "f", "", fixture_vocab().label("sad"), Split::train};
  CHECK_THROWS_WITH(build_target(TaskKind::BOTH, no_transcript, templates, rng),
                    doctest::Contains("u8"));
  CHECK_NOTHROW(build_target(TaskKind::SER, no_transcript, templates, rng));
}

TEST_CASE("log rows serialize both loss terms") {
  std::ostringstream os;
  write_log_row(os, LogRow{7, TaskKind::SER, combine_loss(1.5, 0.4, 0.1)});
  auto j = nlohmann::json::parse(os.str());
  CHECK(j.at("step") == 7);
  CHECK(j.at("task") == "ser");
  CHECK(j.at("decoder_loss").get<double>() == doctest::Approx(1.5));
  CHECK(j.at("emotion_loss").get<double>() == doctest::Approx(0.4));
  CHECK(j.at("total").get<double>() == doctest::Approx(1.54));
}

TEST_CASE("stage 1 trains only the subsampler and is seed-deterministic") {
  auto vocab = fixture_vocab();
  auto corpus = fixtures::build(tmp_dir("stage1").string(), vocab, 6, 4, 2);

  TrainingConfig tcfg;
  tcfg.stage = 1;
  tcfg.batch_size = 2;
  tcfg.grad_accum = 2;
  tcfg.max_steps = 3;
  tcfg.lr = 1e-3;
  tcfg.seed = 9;

  auto run = [&](Model& model) {
    FeatureProvider features(model.encoder, corpus.dir);
    return run_stage1(tcfg, corpus.asr_train, model, features);
  };

  Model m1(tiny_model_config());
  Model m2(tiny_model_config());
  std::uint64_t dec_before = m1.decoder.param_hash();
  std::uint64_t ms_before = m1.multiscale.params().hash();

  auto r1 = run(m1);
  auto r2 = run(m2);
  CHECK(r1.steps == 3);
  CHECK(m1.decoder.param_hash() == dec_before);          // frozen decoder
  CHECK(m1.multiscale.params().hash() == ms_before);     // stage isolation
  CHECK(m1.subsampler.params().hash() == m2.subsampler.params().hash());
  CHECK(r1.final_loss == r2.final_loss);

  Model m3(tiny_model_config());
  TrainingConfig other = tcfg;
  other.seed = 10;
  FeatureProvider f3(m3.encoder, corpus.dir);
  run_stage1(other, corpus.asr_train, m3, f3);
  CHECK(m3.subsampler.params().hash() != m1.subsampler.params().hash());
}

TEST_CASE("gradient accumulation only regroups the same example stream") {
  auto vocab = fixture_vocab();
  auto corpus = fixtures::build(tmp_dir("accum").string(), vocab, 6, 4, 2);

  TrainingConfig a;
  a.stage = 1;
  a.batch_size = 2;
  a.grad_accum = 3;
  a.max_steps = 2;
  a.lr = 1e-3;
  a.seed = 4;
  TrainingConfig b = a;
  b.batch_size = 6;
  b.grad_accum = 1;

  Model ma(tiny_model_config()), mb(tiny_model_config());
  FeatureProvider fa(ma.encoder, corpus.dir), fb(mb.encoder, corpus.dir);
  run_stage1(a, corpus.asr_train, ma, fa);
  run_stage1(b, corpus.asr_train, mb, fb);
  CHECK(ma.subsampler.params().hash() == mb.subsampler.params().hash());
}

TEST_CASE("stage 2 respects the subsampler freeze and trains the multiscale adapter") {
  auto vocab = fixture_vocab();
  auto corpus = fixtures::build(tmp_dir("stage2").string(), vocab, 6, 4, 2);
  TemplateStore templates = TemplateStore::load("fixtures/templates.jsonl");

  TrainingConfig tcfg;
  tcfg.stage = 2;
  tcfg.batch_size = 1;
  tcfg.grad_accum = 2;
  tcfg.max_steps = 4;
  tcfg.lr = 1e-3;
  tcfg.seed = 11;
  tcfg.freeze_subsampler = true;

  Model model(tiny_model_config());
  FeatureProvider features(model.encoder, corpus.dir);
  Rng replay_rng = Rng(tcfg.seed).fork(7);
  auto replay = build_replay_pool(corpus.asr_train, tcfg.replay_fraction, replay_rng);

  std::uint64_t sub_before = model.subsampler.params().hash();
  std::uint64_t ms_before = model.multiscale.params().hash();
  std::uint64_t dec_before = model.decoder.param_hash();
  auto r = run_stage2(tcfg, corpus.ser_train, replay, templates, model, features);
  CHECK(r.steps == 4);
  CHECK(model.subsampler.params().hash() == sub_before);  // frozen by the ablation flag
  CHECK(model.multiscale.params().hash() != ms_before);
  CHECK(model.decoder.param_hash() == dec_before);
}

TEST_CASE("stage 2 refuses records without emotion labels") {
  auto vocab = fixture_vocab();
  auto corpus = fixtures::build(tmp_dir("stage2_bad").string(), vocab, 4, 2, 1);
  TemplateStore templates = TemplateStore::load("fixtures/templates.jsonl");
  TrainingConfig tcfg;
  tcfg.stage = 2;
  tcfg.max_steps = 1;

  Model model(tiny_model_config());
  FeatureProvider features(model.encoder, corpus.dir);
  // asr_train records carry no emotion labels.
  CHECK_THROWS_WITH(
      run_stage2(tcfg, corpus.asr_train, corpus.asr_train, templates, model, features),
      doctest::Contains("no emotion label"));
}

TEST_CASE("adapter checkpoints round trip and reject mismatched model configs") {
  auto vocab = fixture_vocab();
  Model model(tiny_model_config());
  fs::path prefix = tmp_dir("ckpt") / "adapters";
  save_adapters(prefix.string(), model, "stage1");

  Model back(tiny_model_config());
  back.subsampler.params().at("bottleneck.b").value[0] = 77.0;
  CheckpointMeta meta = load_adapters(prefix.string(), back);
  CHECK(meta.stage == "stage1");
  CHECK(back.subsampler.params().hash() == model.subsampler.params().hash());
  CHECK(back.multiscale.params().hash() == model.multiscale.params().hash());

  ModelConfig other = tiny_model_config();
  other.encoder_seed = 8;  // same shapes, different configuration hash
  Model wrong(other);
  CHECK_THROWS_WITH(load_adapters(prefix.string(), wrong), doctest::Contains("hash"));
}

TEST_CASE("diagnostics run on fixture corpora") {
  auto vocab = fixture_vocab();
  auto corpus = fixtures::build(tmp_dir("diag").string(), vocab, 4, 4, 2);
  Model model(tiny_model_config());
  FeatureProvider features(model.encoder, corpus.dir);

  double ce = evaluate_asr_ce(model, corpus.asr_train, features, /*use_placeholder=*/true);
  CHECK(std::isfinite(ce));
  CHECK(ce > 0.0);

  double acc = classifier_accuracy(model, corpus.ser_train, features);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
}

TEST_CASE("model drops layer 0 from the multiscale view when configured") {
  ModelConfig cfg = tiny_model_config();
  cfg.include_layer0 = false;
  Model model(cfg);
  CHECK(model.multiscale.num_layers_plus1() == cfg.enc_layers);

  SyntheticEncoder enc(EncoderSpec{cfg.enc_layers, cfg.d_enc, cfg.encoder_seed});
  LayeredFeatures f = enc.encode(std::vector<double>(SyntheticEncoder::kHop * 4, 0.3));
  LayeredFeatures view = model.multiscale_view(f);
  CHECK(view.layers.size() == f.layers.size() - 1);
  CHECK(view.layers[0].data() == f.layers[1].data());
  CHECK_NOTHROW(model.multiscale.forward(view));
}
