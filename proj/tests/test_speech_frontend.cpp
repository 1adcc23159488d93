#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "lpe/speech_frontend.hpp"

namespace fs = std::filesystem;
using namespace lpe;

namespace {

fs::path tmp_dir() {
  fs::path p = fs::temp_directory_path() / "lpe_test_frontend";
  fs::create_directories(p);
  return p;
}

std::vector<double> tone(double freq, std::size_t frames) {
  std::vector<double> w(frames * SyntheticEncoder::kHop);
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = 0.7 * std::sin(2.0 * 3.14159265358979323846 * freq * static_cast<double>(i) /
                          SyntheticEncoder::kSampleRate);
  return w;
}

}  // namespace

TEST_CASE("band frequencies are a 150 Hz ladder from 200 Hz") {
  CHECK(SyntheticEncoder::band_frequency(0) == doctest::Approx(200.0));
  CHECK(SyntheticEncoder::band_frequency(3) == doctest::Approx(650.0));
  CHECK(SyntheticEncoder::band_frequency(7) == doctest::Approx(1250.0));
}

TEST_CASE("encode yields L+1 layers of consistent shape and is deterministic") {
  SyntheticEncoder enc(EncoderSpec{4, 24, 7});
  auto wave = tone(500.0, 10);
  LayeredFeatures f1 = enc.encode(wave);
  LayeredFeatures f2 = enc.encode(wave);

  CHECK(f1.layers.size() == 5);
  CHECK(f1.frames() == 10);
  CHECK(f1.width() == 24);
  CHECK(f1.frame_rate == doctest::Approx(100.0));
  for (std::size_t l = 0; l < f1.layers.size(); ++l)
    CHECK(f1.layers[l].data() == f2.layers[l].data());
}

TEST_CASE("frame count is the hop-truncated length") {
  SyntheticEncoder enc(EncoderSpec{2, 8, 7});
  std::vector<double> wave(SyntheticEncoder::kHop * 3 + 57, 0.1);
  CHECK(enc.encode(wave).frames() == 3);
  CHECK_THROWS(enc.encode(std::vector<double>{}));
  CHECK_THROWS(enc.encode(std::vector<double>(10, 0.0)));  // shorter than one frame
}

TEST_CASE("content layer is the last one and carries no filterbank signal") {
  SyntheticEncoder enc(EncoderSpec{3, 16, 7});
  auto wave = tone(350.0, 8);
  LayeredFeatures f = enc.encode(wave);
  Matrix c = content_layer(f);
  CHECK(c.data() == f.layers.back().data());
}

TEST_CASE("different waveforms produce different content codes") {
  SyntheticEncoder enc(EncoderSpec{3, 16, 7});
  LayeredFeatures a = enc.encode(tone(350.0, 8));
  LayeredFeatures b = enc.encode(tone(351.0, 8));
  CHECK(a.layers.back().data() != b.layers.back().data());
}

TEST_CASE("waveform feature files reload to the same content layer") {
  SyntheticEncoder enc(EncoderSpec{4, 24, 7});
  auto wave = tone(500.0, 12);
  fs::path p = tmp_dir() / "w.ftr";
  save_waveform(p.string(), wave);

  LayeredFeatures direct = enc.encode(wave);
  LayeredFeatures loaded = enc.load(p.string());
  CHECK(loaded.frames() == direct.frames());
  // The content code hashes the f32 representation, so the content-only top
  // layer survives the f32 round trip bit-exactly.
  CHECK(loaded.layers.back().data() == direct.layers.back().data());
  // Filterbank-weighted layers only move by f32 rounding of the waveform.
  for (std::size_t l = 0; l + 1 < loaded.layers.size(); ++l)
    for (std::size_t j = 0; j < loaded.layers[l].data().size(); ++j)
      CHECK(loaded.layers[l].data()[j] ==
            doctest::Approx(direct.layers[l].data()[j]).epsilon(1e-4));
}

TEST_CASE("rank-3 feature files pass through unchanged up to f32 rounding") {
  SyntheticEncoder enc(EncoderSpec{2, 6, 7});
  LayeredFeatures f = enc.encode(tone(420.0, 5));

  Tensor t;
  t.dims = {3, 5, 6};
  for (const auto& layer : f.layers)
    t.values.insert(t.values.end(), layer.data().begin(), layer.data().end());
  fs::path p = tmp_dir() / "pre.ftr";
  save_tensor(p.string(), t);

  LayeredFeatures back = enc.load(p.string());
  CHECK(back.layers.size() == 3);
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t j = 0; j < back.layers[l].data().size(); ++j)
      CHECK(back.layers[l].data()[j] ==
            doctest::Approx(f.layers[l].data()[j]).epsilon(1e-6));
}

TEST_CASE("feature files with the wrong shape or rank are rejected") {
  SyntheticEncoder enc(EncoderSpec{2, 6, 7});
  fs::path bad_shape = tmp_dir() / "bad_shape.ftr";
  Tensor t;
  t.dims = {2, 5, 6};  // wrong layer count for L = 2
  t.values.assign(60, 0.0);
  save_tensor(bad_shape.string(), t);
  CHECK_THROWS_WITH(enc.load(bad_shape.string()), doctest::Contains("shape"));

  fs::path bad_rank = tmp_dir() / "bad_rank.ftr";
  Tensor t2;
  t2.dims = {4, 4};
  t2.values.assign(16, 0.0);
  save_tensor(bad_rank.string(), t2);
  CHECK_THROWS_WITH(enc.load(bad_rank.string()), doctest::Contains("rank"));
}

TEST_CASE("validate rejects inconsistent and non-finite features") {
  LayeredFeatures f;
  f.layers = {Matrix(3, 4), Matrix(2, 4)};
  CHECK_THROWS(f.validate());

  LayeredFeatures g;
  g.layers = {Matrix(2, 2)};
  g.layers[0](1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(g.validate());
}

TEST_CASE("a pure band tone concentrates energy in its own layer-0 response") {
  // Layer 0 weighs the filterbank fully, so two tones at different band
  // centers with identical content codes must differ there. Same tone twice
  // differs only via the content hash, which layer 0 ignores entirely.
  SyntheticEncoder enc(EncoderSpec{3, 16, 7});
  auto w2 = tone(SyntheticEncoder::band_frequency(2), 6);
  auto w5 = tone(SyntheticEncoder::band_frequency(5), 6);
  LayeredFeatures f2 = enc.encode(w2);
  LayeredFeatures f5 = enc.encode(w5);
  double diff0 = 0.0;
  for (std::size_t j = 0; j < f2.layers[0].data().size(); ++j)
    diff0 += std::abs(f2.layers[0].data()[j] - f5.layers[0].data()[j]);
  CHECK(diff0 > 1e-3);
}
