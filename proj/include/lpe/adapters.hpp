#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "lpe/params.hpp"
#include "lpe/speech_frontend.hpp"
#include "lpe/tensor.hpp"

namespace lpe {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x * sigmoid(x); }
inline double silu_grad(double x) {
  double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

// Output length of one stride-2 convolution (kernel 5, padding 2).
inline std::size_t conv_out_len(std::size_t t) { return (t - 1) / 2 + 1; }

// ceil(ceil(ceil(T/2)/2)/2)
inline std::size_t subsample_len(std::size_t t) {
  return conv_out_len(conv_out_len(conv_out_len(t)));
}

struct LossBreakdown {
  double decoder_loss = 0.0;
  double emotion_loss = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

inline LossBreakdown combine_loss(double decoder_loss, double emotion_loss, double lambda) {
  if (!std::isfinite(decoder_loss) || !std::isfinite(emotion_loss) || !std::isfinite(lambda))
    throw std::runtime_error("combine_loss: non-finite input");
  LossBreakdown b;
  b.decoder_loss = decoder_loss;
  b.emotion_loss = emotion_loss;
  b.lambda = lambda;
  b.total = decoder_loss + lambda * emotion_loss;
  return b;
}

// ---------------------------------------------------------------------------
// Subsampler adapter: three 1D convolutions (kernel 5, stride 2, padding 2,
// SiLU after each), a bottleneck projection D_enc -> D_lm, and layer norm.
// 8x time reduction total.
// ---------------------------------------------------------------------------

class SubsamplerAdapter {
 public:
  static constexpr int kKernel = 5;
  static constexpr int kPad = 2;
  static constexpr int kStride = 2;
  static constexpr int kConvLayers = 3;
  static constexpr double kLnEps = 1e-5;

  SubsamplerAdapter(int d_enc, int d_lm, std::uint64_t seed)
      : d_enc_(d_enc), d_lm_(d_lm) {
    Rng rng(seed);
    for (int i = 1; i <= kConvLayers; ++i) {
      auto& w = params_.add("conv" + std::to_string(i) + ".w", {d_enc, d_enc, kKernel});
      init_uniform_fan_in(w, static_cast<std::size_t>(d_enc * kKernel), rng);
      params_.add("conv" + std::to_string(i) + ".b", {d_enc});
    }
    auto& bw = params_.add("bottleneck.w", {d_enc, d_lm});
    init_uniform_fan_in(bw, static_cast<std::size_t>(d_enc), rng);
    params_.add("bottleneck.b", {d_lm});
    auto& g = params_.add("ln.gain", {d_lm});
    std::fill(g.value.begin(), g.value.end(), 1.0);
    params_.add("ln.bias", {d_lm});
  }

  int d_enc() const { return d_enc_; }
  int d_lm() const { return d_lm_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  struct Cache {
    std::vector<Matrix> conv_in;   // input to each conv layer
    std::vector<Matrix> conv_pre;  // pre-activation of each conv layer
    Matrix bottleneck_in;          // activated conv3 output
    Matrix pre_ln;                 // bottleneck output before layer norm
    std::vector<double> ln_mean, ln_rstd;
  };

  Matrix forward(const Matrix& content, Cache* cache = nullptr) const {
    if (content.rows() == 0) throw std::runtime_error("subsample: empty input (T = 0)");
    if (static_cast<int>(content.cols()) != d_enc_)
      throw std::runtime_error("subsample: input width != D_enc");

    Matrix x = content;
    if (cache) {
      cache->conv_in.clear();
      cache->conv_pre.clear();
    }
    for (int i = 1; i <= kConvLayers; ++i) {
      const Param& w = params_.at("conv" + std::to_string(i) + ".w");
      const Param& b = params_.at("conv" + std::to_string(i) + ".b");
      std::size_t t_out = conv_out_len(x.rows());
      Matrix pre(t_out, static_cast<std::size_t>(d_enc_));
      for (std::size_t t = 0; t < t_out; ++t) {
        for (int co = 0; co < d_enc_; ++co) {
          double acc = b.value[static_cast<std::size_t>(co)];
          for (int k = 0; k < kKernel; ++k) {
            std::int64_t src = static_cast<std::int64_t>(t) * kStride + k - kPad;
            if (src < 0 || src >= static_cast<std::int64_t>(x.rows())) continue;
            const double* in_row = x.row(static_cast<std::size_t>(src));
            const double* w_row = w.value.data() +
                (static_cast<std::size_t>(co) * static_cast<std::size_t>(d_enc_) + 0) * kKernel + k;
            for (int ci = 0; ci < d_enc_; ++ci)
              acc += w_row[static_cast<std::size_t>(ci) * kKernel] * in_row[ci];
          }
          pre(t, static_cast<std::size_t>(co)) = acc;
        }
      }
      Matrix act(t_out, static_cast<std::size_t>(d_enc_));
      for (std::size_t j = 0; j < pre.data().size(); ++j)
        act.data()[j] = silu(pre.data()[j]);
      if (cache) {
        cache->conv_in.push_back(std::move(x));
        cache->conv_pre.push_back(pre);
      }
      x = std::move(act);
    }

    const Param& bw = params_.at("bottleneck.w");
    const Param& bb = params_.at("bottleneck.b");
    std::size_t t_out = x.rows();
    Matrix pre_ln(t_out, static_cast<std::size_t>(d_lm_));
    for (std::size_t t = 0; t < t_out; ++t)
      for (int o = 0; o < d_lm_; ++o) {
        double acc = bb.value[static_cast<std::size_t>(o)];
        for (int i = 0; i < d_enc_; ++i)
          acc += x(t, static_cast<std::size_t>(i)) *
                 bw.value[static_cast<std::size_t>(i) * static_cast<std::size_t>(d_lm_) +
                          static_cast<std::size_t>(o)];
        pre_ln(t, static_cast<std::size_t>(o)) = acc;
      }

    const Param& g = params_.at("ln.gain");
    const Param& lb = params_.at("ln.bias");
    Matrix out(t_out, static_cast<std::size_t>(d_lm_));
    std::vector<double> means(t_out), rstds(t_out);
    for (std::size_t t = 0; t < t_out; ++t) {
      double mean = 0.0;
      for (int o = 0; o < d_lm_; ++o) mean += pre_ln(t, static_cast<std::size_t>(o));
      mean /= d_lm_;
      double var = 0.0;
      for (int o = 0; o < d_lm_; ++o) {
        double d = pre_ln(t, static_cast<std::size_t>(o)) - mean;
        var += d * d;
      }
      var /= d_lm_;
      double rstd = 1.0 / std::sqrt(var + kLnEps);
      means[t] = mean;
      rstds[t] = rstd;
      for (int o = 0; o < d_lm_; ++o) {
        double xhat = (pre_ln(t, static_cast<std::size_t>(o)) - mean) * rstd;
        out(t, static_cast<std::size_t>(o)) =
            g.value[static_cast<std::size_t>(o)] * xhat + lb.value[static_cast<std::size_t>(o)];
      }
    }
    if (cache) {
      cache->bottleneck_in = std::move(x);
      cache->pre_ln = std::move(pre_ln);
      cache->ln_mean = std::move(means);
      cache->ln_rstd = std::move(rstds);
    }
    return out;
  }

  // Accumulates parameter gradients; returns the gradient w.r.t. the input
  // content matrix.
  Matrix backward(const Cache& cache, const Matrix& d_out) {
    const std::size_t t_out = cache.pre_ln.rows();
    Param& g = params_.at("ln.gain");
    Param& lb = params_.at("ln.bias");

    // Layer norm backward.
    Matrix d_pre_ln(t_out, static_cast<std::size_t>(d_lm_));
    for (std::size_t t = 0; t < t_out; ++t) {
      double mean = cache.ln_mean[t], rstd = cache.ln_rstd[t];
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      std::vector<double> xhat(static_cast<std::size_t>(d_lm_)), dxhat(static_cast<std::size_t>(d_lm_));
      for (int o = 0; o < d_lm_; ++o) {
        xhat[static_cast<std::size_t>(o)] = (cache.pre_ln(t, static_cast<std::size_t>(o)) - mean) * rstd;
        double dy = d_out(t, static_cast<std::size_t>(o));
        g.grad[static_cast<std::size_t>(o)] += dy * xhat[static_cast<std::size_t>(o)];
        lb.grad[static_cast<std::size_t>(o)] += dy;
        dxhat[static_cast<std::size_t>(o)] = dy * g.value[static_cast<std::size_t>(o)];
        sum_dxhat += dxhat[static_cast<std::size_t>(o)];
        sum_dxhat_xhat += dxhat[static_cast<std::size_t>(o)] * xhat[static_cast<std::size_t>(o)];
      }
      for (int o = 0; o < d_lm_; ++o)
        d_pre_ln(t, static_cast<std::size_t>(o)) =
            rstd * (dxhat[static_cast<std::size_t>(o)] - sum_dxhat / d_lm_ -
                    xhat[static_cast<std::size_t>(o)] * sum_dxhat_xhat / d_lm_);
    }

    // Bottleneck backward.
    Param& bw = params_.at("bottleneck.w");
    Param& bb = params_.at("bottleneck.b");
    Matrix d_act(t_out, static_cast<std::size_t>(d_enc_));
    for (std::size_t t = 0; t < t_out; ++t)
      for (int o = 0; o < d_lm_; ++o) {
        double dy = d_pre_ln(t, static_cast<std::size_t>(o));
        bb.grad[static_cast<std::size_t>(o)] += dy;
        for (int i = 0; i < d_enc_; ++i) {
          std::size_t idx = static_cast<std::size_t>(i) * static_cast<std::size_t>(d_lm_) +
                            static_cast<std::size_t>(o);
          bw.grad[idx] += cache.bottleneck_in(t, static_cast<std::size_t>(i)) * dy;
          d_act(t, static_cast<std::size_t>(i)) += bw.value[idx] * dy;
        }
      }

    // Conv stack backward, last layer first.
    Matrix d_cur = std::move(d_act);
    for (int i = kConvLayers; i >= 1; --i) {
      const Matrix& pre = cache.conv_pre[static_cast<std::size_t>(i - 1)];
      const Matrix& in = cache.conv_in[static_cast<std::size_t>(i - 1)];
      Param& w = params_.at("conv" + std::to_string(i) + ".w");
      Param& b = params_.at("conv" + std::to_string(i) + ".b");

      Matrix d_z = d_cur;  // through SiLU
      for (std::size_t j = 0; j < d_z.data().size(); ++j)
        d_z.data()[j] *= silu_grad(pre.data()[j]);

      Matrix d_in(in.rows(), static_cast<std::size_t>(d_enc_));
      for (std::size_t t = 0; t < d_z.rows(); ++t)
        for (int co = 0; co < d_enc_; ++co) {
          double dz = d_z(t, static_cast<std::size_t>(co));
          b.grad[static_cast<std::size_t>(co)] += dz;
          for (int k = 0; k < kKernel; ++k) {
            std::int64_t src = static_cast<std::int64_t>(t) * kStride + k - kPad;
            if (src < 0 || src >= static_cast<std::int64_t>(in.rows())) continue;
            for (int ci = 0; ci < d_enc_; ++ci) {
              std::size_t idx = (static_cast<std::size_t>(co) * static_cast<std::size_t>(d_enc_) +
                                 static_cast<std::size_t>(ci)) * kKernel + static_cast<std::size_t>(k);
              w.grad[idx] += dz * in(static_cast<std::size_t>(src), static_cast<std::size_t>(ci));
              d_in(static_cast<std::size_t>(src), static_cast<std::size_t>(ci)) += w.value[idx] * dz;
            }
          }
        }
      d_cur = std::move(d_in);
    }
    return d_cur;
  }

 private:
  int d_enc_, d_lm_;
  ParamSet params_;
};

// ---------------------------------------------------------------------------
// Multiscale adapter: softmax-weighted sum over all encoder layers, two
// affine maps with SiLU between (applied per frame), mean pooling over time,
// and a training-only linear emotion classifier.
// ---------------------------------------------------------------------------

class MultiscaleAdapter {
 public:
  MultiscaleAdapter(int num_layers_plus1, int d_enc, int d_lm, int num_emotions,
                    std::uint64_t seed)
      : l1_(num_layers_plus1), d_enc_(d_enc), d_lm_(d_lm), k_(num_emotions) {
    Rng rng(seed);
    params_.add("layer_logits", {l1_});  // zeros: uniform initial layer weights
    auto& w1 = params_.add("proj1.w", {d_enc_, d_lm_});
    init_uniform_fan_in(w1, static_cast<std::size_t>(d_enc_), rng);
    params_.add("proj1.b", {d_lm_});
    auto& w2 = params_.add("proj2.w", {d_lm_, d_lm_});
    init_uniform_fan_in(w2, static_cast<std::size_t>(d_lm_), rng);
    params_.add("proj2.b", {d_lm_});
    auto& wc = params_.add("classifier.w", {d_lm_, k_});
    init_uniform_fan_in(wc, static_cast<std::size_t>(d_lm_), rng);
    params_.add("classifier.b", {k_});
  }

  int num_layers_plus1() const { return l1_; }
  int num_emotions() const { return k_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  Vec layer_weights() const {
    const Param& logits = params_.at("layer_logits");
    Vec w(logits.value.size());
    double mx = logits.value[0];
    for (double v : logits.value) mx = std::max(mx, v);
    double sum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] = std::exp(logits.value[i] - mx);
      sum += w[i];
    }
    for (auto& v : w) v /= sum;
    return w;
  }

  struct Cache {
    Vec weights;          // softmax(layer_logits)
    Matrix weighted_sum;  // [T][D_enc]
    Matrix pre1;          // [T][D_lm] before SiLU
    Matrix hidden;        // [T][D_lm] after SiLU
    Vec embedding;        // [D_lm]
    const LayeredFeatures* features = nullptr;
  };

  struct Output {
    Vec embedding;  // [D_lm]
    Vec logits;     // [K] training-only classifier outputs
  };

  Output forward(const LayeredFeatures& f, Cache* cache = nullptr) const {
    if (static_cast<int>(f.layers.size()) != l1_)
      throw std::runtime_error("emotion_embed: layer count mismatch (got " +
                               std::to_string(f.layers.size()) + ", want " + std::to_string(l1_) + ")");
    const std::size_t t_len = f.frames();
    Vec w = layer_weights();

    Matrix ws(t_len, static_cast<std::size_t>(d_enc_));
    for (std::size_t l = 0; l < static_cast<std::size_t>(l1_); ++l)
      for (std::size_t j = 0; j < ws.data().size(); ++j)
        ws.data()[j] += w[l] * f.layers[l].data()[j];

    const Param& w1 = params_.at("proj1.w");
    const Param& b1 = params_.at("proj1.b");
    const Param& w2 = params_.at("proj2.w");
    const Param& b2 = params_.at("proj2.b");

    Matrix pre1(t_len, static_cast<std::size_t>(d_lm_));
    Matrix hidden(t_len, static_cast<std::size_t>(d_lm_));
    Vec emb(static_cast<std::size_t>(d_lm_), 0.0);
    for (std::size_t t = 0; t < t_len; ++t) {
      for (int o = 0; o < d_lm_; ++o) {
        double acc = b1.value[static_cast<std::size_t>(o)];
        for (int i = 0; i < d_enc_; ++i)
          acc += ws(t, static_cast<std::size_t>(i)) *
                 w1.value[static_cast<std::size_t>(i) * static_cast<std::size_t>(d_lm_) +
                          static_cast<std::size_t>(o)];
        pre1(t, static_cast<std::size_t>(o)) = acc;
        hidden(t, static_cast<std::size_t>(o)) = silu(acc);
      }
      for (int o = 0; o < d_lm_; ++o) {
        double acc = b2.value[static_cast<std::size_t>(o)];
        for (int i = 0; i < d_lm_; ++i)
          acc += hidden(t, static_cast<std::size_t>(i)) *
                 w2.value[static_cast<std::size_t>(i) * static_cast<std::size_t>(d_lm_) +
                          static_cast<std::size_t>(o)];
        emb[static_cast<std::size_t>(o)] += acc;
      }
    }
    for (auto& v : emb) v /= static_cast<double>(t_len);

    const Param& wc = params_.at("classifier.w");
    const Param& bc = params_.at("classifier.b");
    Vec logits(static_cast<std::size_t>(k_));
    for (int c = 0; c < k_; ++c) {
      double acc = bc.value[static_cast<std::size_t>(c)];
      for (int i = 0; i < d_lm_; ++i)
        acc += emb[static_cast<std::size_t>(i)] *
               wc.value[static_cast<std::size_t>(i) * static_cast<std::size_t>(k_) +
                        static_cast<std::size_t>(c)];
      logits[static_cast<std::size_t>(c)] = acc;
    }

    if (cache) {
      cache->weights = std::move(w);
      cache->weighted_sum = std::move(ws);
      cache->pre1 = std::move(pre1);
      cache->hidden = std::move(hidden);
      cache->embedding = emb;
      cache->features = &f;
    }
    return Output{std::move(emb), std::move(logits)};
  }

  // d_embedding: upstream gradient on the emotion embedding (decoder path);
  // d_logits: upstream gradient on the classifier logits (emotion loss path).
  void backward(const Cache& cache, const Vec& d_embedding, const Vec& d_logits) {
    const std::size_t t_len = cache.weighted_sum.rows();
    Vec d_emb = d_embedding;
    if (d_emb.empty()) d_emb.assign(static_cast<std::size_t>(d_lm_), 0.0);

    if (!d_logits.empty()) {
      Param& wc = params_.at("classifier.w");
      Param& bc = params_.at("classifier.b");
      for (int c = 0; c < k_; ++c) {
        double dl = d_logits[static_cast<std::size_t>(c)];
        bc.grad[static_cast<std::size_t>(c)] += dl;
        for (int i = 0; i < d_lm_; ++i) {
          std::size_t idx = static_cast<std::size_t>(i) * static_cast<std::size_t>(k_) +
                            static_cast<std::size_t>(c);
          wc.grad[idx] += cache.embedding[static_cast<std::size_t>(i)] * dl;
          d_emb[static_cast<std::size_t>(i)] += wc.value[idx] * dl;
        }
      }
    }

    Param& w1 = params_.at("proj1.w");
    Param& b1 = params_.at("proj1.b");
    Param& w2 = params_.at("proj2.w");
    Param& b2 = params_.at("proj2.b");

    Matrix d_ws(t_len, static_cast<std::size_t>(d_enc_));
    const double inv_t = 1.0 / static_cast<double>(t_len);
    for (std::size_t t = 0; t < t_len; ++t) {
      // d_z2 = d_emb / T for every frame.
      Vec d_h1(static_cast<std::size_t>(d_lm_), 0.0);
      for (int o = 0; o < d_lm_; ++o) {
        double dz2 = d_emb[static_cast<std::size_t>(o)] * inv_t;
        b2.grad[static_cast<std::size_t>(o)] += dz2;
        for (int i = 0; i < d_lm_; ++i) {
          std::size_t idx = static_cast<std::size_t>(i) * static_cast<std::size_t>(d_lm_) +
                            static_cast<std::size_t>(o);
          w2.grad[idx] += cache.hidden(t, static_cast<std::size_t>(i)) * dz2;
          d_h1[static_cast<std::size_t>(i)] += w2.value[idx] * dz2;
        }
      }
      for (int o = 0; o < d_lm_; ++o) {
        double dz1 = d_h1[static_cast<std::size_t>(o)] *
                     silu_grad(cache.pre1(t, static_cast<std::size_t>(o)));
        b1.grad[static_cast<std::size_t>(o)] += dz1;
        for (int i = 0; i < d_enc_; ++i) {
          std::size_t idx = static_cast<std::size_t>(i) * static_cast<std::size_t>(d_lm_) +
                            static_cast<std::size_t>(o);
          w1.grad[idx] += cache.weighted_sum(t, static_cast<std::size_t>(i)) * dz1;
          d_ws(t, static_cast<std::size_t>(i)) += w1.value[idx] * dz1;
        }
      }
    }

    // Softmax layer-weight backward.
    Param& logits = params_.at("layer_logits");
    Vec d_w(static_cast<std::size_t>(l1_), 0.0);
    for (std::size_t l = 0; l < static_cast<std::size_t>(l1_); ++l) {
      double acc = 0.0;
      const auto& layer = cache.features->layers[l];
      for (std::size_t j = 0; j < d_ws.data().size(); ++j)
        acc += d_ws.data()[j] * layer.data()[j];
      d_w[l] = acc;
    }
    double dot = 0.0;
    for (std::size_t l = 0; l < d_w.size(); ++l) dot += cache.weights[l] * d_w[l];
    for (std::size_t l = 0; l < d_w.size(); ++l)
      logits.grad[l] += cache.weights[l] * (d_w[l] - dot);
  }

 private:
  int l1_, d_enc_, d_lm_, k_;
  ParamSet params_;
};

}  // namespace lpe
