#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lpe/rng.hpp"
#include "lpe/tensor.hpp"

namespace lpe {

// Per-layer frame embeddings. layers[0] holds pre-transformer features,
// layers[1..L] the transformer layer outputs.
struct LayeredFeatures {
  std::vector<Matrix> layers;  // [L+1] matrices of shape [T][D_enc]
  double frame_rate = 100.0;

  int num_layers() const { return static_cast<int>(layers.size()) - 1; }  // L
  std::size_t frames() const { return layers.empty() ? 0 : layers[0].rows(); }
  std::size_t width() const { return layers.empty() ? 0 : layers[0].cols(); }

  void validate() const {
    if (layers.empty()) throw std::runtime_error("LayeredFeatures: no layers");
    for (const auto& m : layers) {
      if (m.rows() != frames() || m.cols() != width())
        throw std::runtime_error("LayeredFeatures: inconsistent layer shapes");
      for (double v : m.data())
        if (!std::isfinite(v)) throw std::runtime_error("LayeredFeatures: non-finite value");
    }
  }
};

// Content features come from the last encoder layer.
inline Matrix content_layer(const LayeredFeatures& f) {
  if (f.layers.empty()) throw std::runtime_error("content_layer: empty features");
  return f.layers.back();
}

struct EncoderSpec {
  int num_layers = 4;   // L; features carry L+1 layers
  int width = 24;       // D_enc
  std::uint64_t seed = 7;

  void validate() const {
    if (num_layers < 1 || width < 1)
      throw std::runtime_error("EncoderSpec: L and D_enc must be >= 1");
  }
};

// Deterministic synthetic layered encoder. Frame descriptors combine a small
// sinusoid filterbank (paralinguistic channel) with a pseudo-random code
// derived from a hash of the waveform (content channel). Lower layers weight
// the filterbank, upper layers the content code; the last layer is content
// only. Stateless after construction.
class SyntheticEncoder {
 public:
  static constexpr int kSampleRate = 16000;
  static constexpr int kHop = 160;
  static constexpr int kBands = 8;
  static constexpr int kCodeDim = 8;

  explicit SyntheticEncoder(EncoderSpec spec) : spec_(spec) {
    spec_.validate();
    const int n_layers = spec_.num_layers + 1;
    const int desc_dim = kBands + kCodeDim;
    Rng rng(spec_.seed);
    proj_.reserve(static_cast<std::size_t>(n_layers));
    bias_.reserve(static_cast<std::size_t>(n_layers));
    for (int l = 0; l < n_layers; ++l) {
      Matrix w(static_cast<std::size_t>(desc_dim), static_cast<std::size_t>(spec_.width));
      double bound = 1.0 / std::sqrt(static_cast<double>(desc_dim));
      for (auto& v : w.data()) v = (2.0 * rng.uniform() - 1.0) * bound * 3.0;
      Vec b(static_cast<std::size_t>(spec_.width));
      for (auto& v : b) v = (2.0 * rng.uniform() - 1.0) * 0.1;
      proj_.push_back(std::move(w));
      bias_.push_back(std::move(b));
    }
  }

  const EncoderSpec& spec() const { return spec_; }

  // Band center frequencies, also used by the fixture synthesizer.
  static double band_frequency(int band) { return 200.0 + 150.0 * band; }

  LayeredFeatures encode(const std::vector<double>& wave) const {
    if (wave.empty()) throw std::runtime_error("encode: empty input");
    const std::size_t frames = wave.size() / kHop;
    if (frames == 0) throw std::runtime_error("encode: input shorter than one frame");

    // Content key hashes the f32 representation so that a waveform written to
    // a feature file and read back encodes identically.
    std::uint64_t key = 0xCBF29CE484222325ULL;
    for (double v : wave) {
      float f = static_cast<float>(v);
      key = fnv1a(&f, sizeof(f), key);
    }

    const int n_layers = spec_.num_layers + 1;
    LayeredFeatures out;
    out.frame_rate = static_cast<double>(kSampleRate) / kHop;
    out.layers.assign(static_cast<std::size_t>(n_layers),
                      Matrix(frames, static_cast<std::size_t>(spec_.width)));

    std::vector<double> desc(kBands + kCodeDim);
    for (std::size_t t = 0; t < frames; ++t) {
      // Filterbank energies over the frame window.
      for (int j = 0; j < kBands; ++j) {
        double f = band_frequency(j);
        double c = 0.0, s = 0.0;
        for (int w = 0; w < kHop; ++w) {
          double x = wave[t * kHop + static_cast<std::size_t>(w)];
          double phase = 2.0 * 3.14159265358979323846 * f * w / kSampleRate;
          c += x * std::cos(phase);
          s += x * std::sin(phase);
        }
        desc[static_cast<std::size_t>(j)] = 2.0 * std::sqrt(c * c + s * s) / kHop;
      }
      // Content code: utterance-stable, frame-varying pseudo-random values.
      for (int m = 0; m < kCodeDim; ++m) {
        Rng r(key ^ (0x9E3779B97F4A7C15ULL * (t + 1)) ^ (0xD1B54A32D192ED03ULL * (m + 1)));
        desc[static_cast<std::size_t>(kBands + m)] = 2.0 * r.uniform() - 1.0;
      }

      for (int l = 0; l < n_layers; ++l) {
        double alpha = 1.0 - static_cast<double>(l) / spec_.num_layers;
        Matrix& layer = out.layers[static_cast<std::size_t>(l)];
        for (int d = 0; d < spec_.width; ++d) {
          double acc = bias_[static_cast<std::size_t>(l)][static_cast<std::size_t>(d)];
          for (int j = 0; j < kBands + kCodeDim; ++j) {
            double scale = (j < kBands) ? alpha : (1.0 - alpha);
            acc += proj_[static_cast<std::size_t>(l)](static_cast<std::size_t>(j),
                                                      static_cast<std::size_t>(d)) *
                   scale * desc[static_cast<std::size_t>(j)];
          }
          layer(t, static_cast<std::size_t>(d)) = std::tanh(acc);
        }
      }
    }
    out.validate();
    return out;
  }

  // Feature files hold either a rank-1 waveform (encoded here) or a rank-3
  // precomputed [L+1][T][D_enc] tensor (passed through), so real encoder
  // features extracted offline can be injected.
  LayeredFeatures load(const std::string& path) const {
    Tensor t = load_tensor(path);
    if (t.dims.size() == 1) {
      return encode(t.values);
    }
    if (t.dims.size() == 3) {
      const auto n_layers = static_cast<std::size_t>(t.dims[0]);
      const auto frames = static_cast<std::size_t>(t.dims[1]);
      const auto width = static_cast<std::size_t>(t.dims[2]);
      if (n_layers != static_cast<std::size_t>(spec_.num_layers + 1) ||
          width != static_cast<std::size_t>(spec_.width))
        throw std::runtime_error("feature file shape does not match encoder spec: " + path);
      LayeredFeatures out;
      out.layers.assign(n_layers, Matrix(frames, width));
      std::size_t idx = 0;
      for (std::size_t l = 0; l < n_layers; ++l)
        for (std::size_t r = 0; r < frames; ++r)
          for (std::size_t c = 0; c < width; ++c)
            out.layers[l](r, c) = t.values[idx++];
      out.validate();
      return out;
    }
    throw std::runtime_error("corrupt feature file (rank must be 1 or 3): " + path);
  }

 private:
  EncoderSpec spec_;
  std::vector<Matrix> proj_;
  std::vector<Vec> bias_;
};

inline void save_waveform(const std::string& path, const std::vector<double>& wave) {
  Tensor t;
  t.dims = {static_cast<std::int64_t>(wave.size())};
  t.values = wave;
  save_tensor(path, t);
}

}  // namespace lpe
