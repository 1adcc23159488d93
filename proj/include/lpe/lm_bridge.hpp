#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpe/adapters.hpp"
#include "lpe/params.hpp"
#include "lpe/rng.hpp"
#include "lpe/tensor.hpp"

namespace lpe {

// ---------------------------------------------------------------------------
// Byte-level tokenizer
// ---------------------------------------------------------------------------

struct ByteTokenizer {
  static constexpr int kBos = 256;
  static constexpr int kEos = 257;
  static constexpr int kVocab = 258;

  std::vector<int> encode(const std::string& text, bool add_bos = false,
                          bool add_eos = false) const {
    std::vector<int> ids;
    ids.reserve(text.size() + 2);
    if (add_bos) ids.push_back(kBos);
    for (unsigned char c : text) ids.push_back(static_cast<int>(c));
    if (add_eos) ids.push_back(kEos);
    return ids;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids)
      if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
    return out;
  }

  void save_vocab(const std::string& path) const {
    nlohmann::json j;
    j["type"] = "byte";
    j["vocab_size"] = kVocab;
    j["specials"] = {{"bos", kBos}, {"eos", kEos}};
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write vocabulary: " + path);
    os << j.dump(2) << "\n";
  }
};

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

struct DecoderSpec {
  int vocab_size = ByteTokenizer::kVocab;
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 128;
  int max_seq = 192;
  std::uint64_t seed = 11;

  std::string hash() const {
    nlohmann::json j = {{"vocab", vocab_size}, {"d_model", d_model}, {"n_layers", n_layers},
                        {"n_heads", n_heads}, {"d_ff", d_ff}, {"max_seq", max_seq}};
    return to_hex(fnv1a(j.dump()));
  }
};

struct SamplingConfig {
  double temperature = 0.7;
  double top_p = 0.85;
  int max_new_tokens = 64;
  std::uint64_t seed = 0;
};

// Mixed prompt/speech/emotion decoder input. `token_ids[i]` is -1 for
// positions carrying adapter embeddings instead of token embeddings.
struct AssembledInput {
  Matrix embeddings;               // [S][D_lm], before positional encoding
  std::vector<int> token_ids;      // [S], -1 on content/emotion positions
  std::vector<std::uint8_t> loss_mask;  // [S], true exactly on target positions

  struct Spans {
    std::size_t prompt_len = 0;
    std::size_t content_len = 0;
    std::size_t emotion_len = 1;
    std::size_t target_len = 0;
  } spans;

  std::size_t size() const { return embeddings.rows(); }
  std::size_t content_begin() const { return spans.prompt_len; }
  std::size_t emotion_pos() const { return spans.prompt_len + spans.content_len; }
  std::size_t target_begin() const { return spans.prompt_len + spans.content_len + spans.emotion_len; }
};

// Tiny causal transformer used as the frozen test decoder. Any decoder
// exposing tokenize/embed/forward/generate can replace it behind the same
// call sites.
class ToyDecoder {
 public:
  explicit ToyDecoder(DecoderSpec spec) : spec_(spec) {
    if (spec_.d_model % spec_.n_heads != 0)
      throw std::runtime_error("d_model must be divisible by n_heads");
    Rng rng(spec_.seed);
    auto& te = params_.add("tok_emb", {spec_.vocab_size, spec_.d_model});
    for (auto& v : te.value) v = rng.normal() * 0.08;
    auto& pe = params_.add("pos_emb", {spec_.max_seq, spec_.d_model});
    for (auto& v : pe.value) v = rng.normal() * 0.02;
    for (int l = 0; l < spec_.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      add_ln(p + "ln1");
      for (const char* n : {"wq", "wk", "wv", "wo"}) {
        auto& w = params_.add(p + "attn." + n, {spec_.d_model, spec_.d_model});
        init_uniform_fan_in(w, static_cast<std::size_t>(spec_.d_model), rng);
      }
      for (const char* n : {"bq", "bk", "bv", "bo"})
        params_.add(p + "attn." + n, {spec_.d_model});
      add_ln(p + "ln2");
      auto& w1 = params_.add(p + "mlp.w1", {spec_.d_model, spec_.d_ff});
      init_uniform_fan_in(w1, static_cast<std::size_t>(spec_.d_model), rng);
      params_.add(p + "mlp.b1", {spec_.d_ff});
      auto& w2 = params_.add(p + "mlp.w2", {spec_.d_ff, spec_.d_model});
      init_uniform_fan_in(w2, static_cast<std::size_t>(spec_.d_ff), rng);
      params_.add(p + "mlp.b2", {spec_.d_model});
    }
    add_ln("lnf");
    auto& hw = params_.add("head.w", {spec_.d_model, spec_.vocab_size});
    init_uniform_fan_in(hw, static_cast<std::size_t>(spec_.d_model), rng);
    params_.add("head.b", {spec_.vocab_size});
  }

  const DecoderSpec& spec() const { return spec_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }
  std::uint64_t param_hash() const { return params_.hash(); }

  Vec token_embedding(int id) const {
    const Param& te = params_.at("tok_emb");
    Vec v(static_cast<std::size_t>(spec_.d_model));
    for (int d = 0; d < spec_.d_model; ++d)
      v[static_cast<std::size_t>(d)] =
          te.value[static_cast<std::size_t>(id) * static_cast<std::size_t>(spec_.d_model) +
                   static_cast<std::size_t>(d)];
    return v;
  }

  Matrix embed_tokens(const std::vector<int>& ids) const {
    Matrix m(ids.size(), static_cast<std::size_t>(spec_.d_model));
    for (std::size_t i = 0; i < ids.size(); ++i) {
      Vec e = token_embedding(ids[i]);
      std::copy(e.begin(), e.end(), m.row(i));
    }
    return m;
  }

  struct LayerCache {
    Matrix h_in;                    // residual stream entering the block
    Matrix ln1_x;                   // == h_in (kept for clarity of ln backward)
    Vec ln1_mean, ln1_rstd;
    Matrix a;                       // ln1 output
    Matrix q, k, v;                 // [S][D]
    std::vector<Matrix> probs;      // per head: [S][S] attention weights
    Matrix ctx;                     // concatenated head outputs [S][D]
    Matrix h_mid;                   // after attention residual
    Vec ln2_mean, ln2_rstd;
    Matrix m;                       // ln2 output
    Matrix z1;                      // mlp pre-activation [S][F]
    Matrix a1;                      // silu(z1)
  };

  struct Cache {
    Matrix x_pos;  // input + positional embeddings
    std::vector<LayerCache> layers;
    Matrix h_final;  // residual stream before final ln
    Vec lnf_mean, lnf_rstd;
    Matrix hf;  // final ln output
  };

  // x: [S][D] raw input embeddings (positional encoding added here).
  Matrix forward(const Matrix& x, Cache* cache = nullptr) const {
    const std::size_t s_len = x.rows();
    if (s_len > static_cast<std::size_t>(spec_.max_seq))
      throw std::runtime_error("sequence length exceeds decoder max_seq");
    const int d = spec_.d_model;

    const Param& pe = params_.at("pos_emb");
    Matrix h(s_len, static_cast<std::size_t>(d));
    for (std::size_t t = 0; t < s_len; ++t)
      for (int j = 0; j < d; ++j)
        h(t, static_cast<std::size_t>(j)) =
            x(t, static_cast<std::size_t>(j)) +
            pe.value[t * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)];

    if (cache) {
      cache->x_pos = h;
      cache->layers.clear();
    }

    for (int l = 0; l < spec_.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      LayerCache lc;
      lc.h_in = h;

      Matrix a = ln_forward(h, p + "ln1", &lc.ln1_mean, &lc.ln1_rstd);
      lc.a = a;

      Matrix q = affine(a, p + "attn.wq", p + "attn.bq");
      Matrix k = affine(a, p + "attn.wk", p + "attn.bk");
      Matrix v = affine(a, p + "attn.wv", p + "attn.bv");

      const int heads = spec_.n_heads;
      const int dh = d / heads;
      const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
      Matrix ctx(s_len, static_cast<std::size_t>(d));
      std::vector<Matrix> probs;
      probs.reserve(static_cast<std::size_t>(heads));
      for (int hd = 0; hd < heads; ++hd) {
        Matrix p_mat(s_len, s_len);
        const std::size_t off = static_cast<std::size_t>(hd * dh);
        for (std::size_t t = 0; t < s_len; ++t) {
          double mx = -1e300;
          std::vector<double> sc(t + 1);
          for (std::size_t s = 0; s <= t; ++s) {
            double dot = 0.0;
            for (int j = 0; j < dh; ++j)
              dot += q(t, off + static_cast<std::size_t>(j)) * k(s, off + static_cast<std::size_t>(j));
            sc[s] = dot * scale;
            mx = std::max(mx, sc[s]);
          }
          double sum = 0.0;
          for (std::size_t s = 0; s <= t; ++s) {
            sc[s] = std::exp(sc[s] - mx);
            sum += sc[s];
          }
          for (std::size_t s = 0; s <= t; ++s) {
            double pw = sc[s] / sum;
            p_mat(t, s) = pw;
            for (int j = 0; j < dh; ++j)
              ctx(t, off + static_cast<std::size_t>(j)) += pw * v(s, off + static_cast<std::size_t>(j));
          }
        }
        probs.push_back(std::move(p_mat));
      }

      Matrix attn_out = affine(ctx, p + "attn.wo", p + "attn.bo");
      Matrix h_mid(s_len, static_cast<std::size_t>(d));
      for (std::size_t j = 0; j < h.data().size(); ++j)
        h_mid.data()[j] = h.data()[j] + attn_out.data()[j];

      Matrix m = ln_forward(h_mid, p + "ln2", &lc.ln2_mean, &lc.ln2_rstd);
      Matrix z1 = affine(m, p + "mlp.w1", p + "mlp.b1");
      Matrix a1(z1.rows(), z1.cols());
      for (std::size_t j = 0; j < z1.data().size(); ++j) a1.data()[j] = silu(z1.data()[j]);
      Matrix z2 = affine(a1, p + "mlp.w2", p + "mlp.b2");
      Matrix h_out(s_len, static_cast<std::size_t>(d));
      for (std::size_t j = 0; j < h_out.data().size(); ++j)
        h_out.data()[j] = h_mid.data()[j] + z2.data()[j];

      if (cache) {
        lc.q = std::move(q);
        lc.k = std::move(k);
        lc.v = std::move(v);
        lc.probs = std::move(probs);
        lc.ctx = std::move(ctx);
        lc.h_mid = std::move(h_mid);
        lc.m = std::move(m);
        lc.z1 = std::move(z1);
        lc.a1 = std::move(a1);
        cache->layers.push_back(std::move(lc));
      }
      h = std::move(h_out);
    }

    Vec lnf_mean, lnf_rstd;
    Matrix hf = ln_forward(h, "lnf", &lnf_mean, &lnf_rstd);
    Matrix logits = affine(hf, "head.w", "head.b");
    if (cache) {
      cache->h_final = std::move(h);
      cache->lnf_mean = std::move(lnf_mean);
      cache->lnf_rstd = std::move(lnf_rstd);
      cache->hf = std::move(hf);
    }
    return logits;
  }

  // Returns gradient w.r.t. the raw input embeddings. Parameter gradients are
  // accumulated only when requested (pretraining); during adapter training
  // the decoder is frozen and its gradients are never computed.
  Matrix backward(const Cache& cache, const Matrix& d_logits, bool accumulate_param_grads) {
    const std::size_t s_len = d_logits.rows();
    const int d = spec_.d_model;

    Matrix d_hf = affine_backward(cache.hf, "head.w", "head.b", d_logits, accumulate_param_grads);
    Matrix d_h = ln_backward(cache.h_final, "lnf", cache.lnf_mean, cache.lnf_rstd, d_hf,
                             accumulate_param_grads);

    for (int l = spec_.n_layers - 1; l >= 0; --l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      const LayerCache& lc = cache.layers[static_cast<std::size_t>(l)];

      // MLP backward.
      Matrix d_z2 = d_h;  // residual: d_h also flows to h_mid
      Matrix d_a1 = affine_backward(lc.a1, p + "mlp.w2", p + "mlp.b2", d_z2, accumulate_param_grads);
      Matrix d_z1 = d_a1;
      for (std::size_t j = 0; j < d_z1.data().size(); ++j)
        d_z1.data()[j] *= silu_grad(lc.z1.data()[j]);
      Matrix d_m = affine_backward(lc.m, p + "mlp.w1", p + "mlp.b1", d_z1, accumulate_param_grads);
      Matrix d_h_mid = ln_backward(lc.h_mid, p + "ln2", lc.ln2_mean, lc.ln2_rstd, d_m,
                                   accumulate_param_grads);
      for (std::size_t j = 0; j < d_h.data().size(); ++j) d_h_mid.data()[j] += d_h.data()[j];

      // Attention backward.
      Matrix d_ctx = affine_backward(lc.ctx, p + "attn.wo", p + "attn.bo", d_h_mid,
                                     accumulate_param_grads);
      const int heads = spec_.n_heads;
      const int dh = d / heads;
      const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
      Matrix d_q(s_len, static_cast<std::size_t>(d));
      Matrix d_k(s_len, static_cast<std::size_t>(d));
      Matrix d_v(s_len, static_cast<std::size_t>(d));
      for (int hd = 0; hd < heads; ++hd) {
        const Matrix& p_mat = lc.probs[static_cast<std::size_t>(hd)];
        const std::size_t off = static_cast<std::size_t>(hd * dh);
        for (std::size_t t = 0; t < s_len; ++t) {
          std::vector<double> d_p(t + 1, 0.0);
          for (std::size_t s = 0; s <= t; ++s) {
            double acc = 0.0;
            for (int j = 0; j < dh; ++j) {
              double dc = d_ctx(t, off + static_cast<std::size_t>(j));
              acc += dc * lc.v(s, off + static_cast<std::size_t>(j));
              d_v(s, off + static_cast<std::size_t>(j)) += p_mat(t, s) * dc;
            }
            d_p[s] = acc;
          }
          double dot = 0.0;
          for (std::size_t s = 0; s <= t; ++s) dot += p_mat(t, s) * d_p[s];
          for (std::size_t s = 0; s <= t; ++s) {
            double d_score = p_mat(t, s) * (d_p[s] - dot) * scale;
            for (int j = 0; j < dh; ++j) {
              d_q(t, off + static_cast<std::size_t>(j)) += d_score * lc.k(s, off + static_cast<std::size_t>(j));
              d_k(s, off + static_cast<std::size_t>(j)) += d_score * lc.q(t, off + static_cast<std::size_t>(j));
            }
          }
        }
      }

      Matrix d_a = affine_backward(lc.a, p + "attn.wq", p + "attn.bq", d_q, accumulate_param_grads);
      Matrix d_a2 = affine_backward(lc.a, p + "attn.wk", p + "attn.bk", d_k, accumulate_param_grads);
      Matrix d_a3 = affine_backward(lc.a, p + "attn.wv", p + "attn.bv", d_v, accumulate_param_grads);
      for (std::size_t j = 0; j < d_a.data().size(); ++j)
        d_a.data()[j] += d_a2.data()[j] + d_a3.data()[j];

      Matrix d_h_in = ln_backward(lc.h_in, p + "ln1", lc.ln1_mean, lc.ln1_rstd, d_a,
                                  accumulate_param_grads);
      for (std::size_t j = 0; j < d_h_in.data().size(); ++j) d_h_in.data()[j] += d_h_mid.data()[j];
      d_h = std::move(d_h_in);
    }

    if (accumulate_param_grads) {
      Param& pe = params_.at("pos_emb");
      for (std::size_t t = 0; t < s_len; ++t)
        for (int j = 0; j < d; ++j)
          pe.grad[t * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)] +=
              d_h(t, static_cast<std::size_t>(j));
    }
    return d_h;  // gradient w.r.t. raw input embeddings
  }

  void scatter_token_grads(const std::vector<int>& ids, const Matrix& d_x) {
    Param& te = params_.at("tok_emb");
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0) continue;
      for (int j = 0; j < spec_.d_model; ++j)
        te.grad[static_cast<std::size_t>(ids[i]) * static_cast<std::size_t>(spec_.d_model) +
                static_cast<std::size_t>(j)] += d_x(i, static_cast<std::size_t>(j));
    }
  }

 private:
  void add_ln(const std::string& name) {
    auto& g = params_.add(name + ".g", {spec_.d_model});
    std::fill(g.value.begin(), g.value.end(), 1.0);
    params_.add(name + ".b", {spec_.d_model});
  }

  Matrix affine(const Matrix& x, const std::string& wname, const std::string& bname) const {
    const Param& w = params_.at(wname);
    const Param& b = params_.at(bname);
    const std::size_t in_dim = static_cast<std::size_t>(w.dims[0]);
    const std::size_t out_dim = static_cast<std::size_t>(w.dims[1]);
    Matrix y(x.rows(), out_dim);
    for (std::size_t t = 0; t < x.rows(); ++t) {
      const double* xr = x.row(t);
      double* yr = y.row(t);
      for (std::size_t o = 0; o < out_dim; ++o) yr[o] = b.value[o];
      for (std::size_t i = 0; i < in_dim; ++i) {
        double xi = xr[i];
        const double* wr = w.value.data() + i * out_dim;
        for (std::size_t o = 0; o < out_dim; ++o) yr[o] += xi * wr[o];
      }
    }
    return y;
  }

  Matrix affine_backward(const Matrix& x, const std::string& wname, const std::string& bname,
                         const Matrix& d_y, bool accumulate) {
    Param& w = params_.at(wname);
    Param& b = params_.at(bname);
    const std::size_t in_dim = static_cast<std::size_t>(w.dims[0]);
    const std::size_t out_dim = static_cast<std::size_t>(w.dims[1]);
    Matrix d_x(x.rows(), in_dim);
    for (std::size_t t = 0; t < x.rows(); ++t) {
      const double* xr = x.row(t);
      const double* dyr = d_y.row(t);
      double* dxr = d_x.row(t);
      if (accumulate)
        for (std::size_t o = 0; o < out_dim; ++o) b.grad[o] += dyr[o];
      for (std::size_t i = 0; i < in_dim; ++i) {
        const double* wr = w.value.data() + i * out_dim;
        double* gwr = w.grad.data() + i * out_dim;
        double acc = 0.0;
        for (std::size_t o = 0; o < out_dim; ++o) {
          acc += wr[o] * dyr[o];
          if (accumulate) gwr[o] += xr[i] * dyr[o];
        }
        dxr[i] = acc;
      }
    }
    return d_x;
  }

  static constexpr double kLnEps = 1e-5;

  Matrix ln_forward(const Matrix& x, const std::string& name, Vec* means, Vec* rstds) const {
    const Param& g = params_.at(name + ".g");
    const Param& b = params_.at(name + ".b");
    const std::size_t dim = x.cols();
    Matrix y(x.rows(), dim);
    means->assign(x.rows(), 0.0);
    rstds->assign(x.rows(), 0.0);
    for (std::size_t t = 0; t < x.rows(); ++t) {
      double mean = 0.0;
      for (std::size_t j = 0; j < dim; ++j) mean += x(t, j);
      mean /= static_cast<double>(dim);
      double var = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        double d = x(t, j) - mean;
        var += d * d;
      }
      var /= static_cast<double>(dim);
      double rstd = 1.0 / std::sqrt(var + kLnEps);
      (*means)[t] = mean;
      (*rstds)[t] = rstd;
      for (std::size_t j = 0; j < dim; ++j)
        y(t, j) = g.value[j] * (x(t, j) - mean) * rstd + b.value[j];
    }
    return y;
  }

  Matrix ln_backward(const Matrix& x, const std::string& name, const Vec& means,
                     const Vec& rstds, const Matrix& d_y, bool accumulate) {
    Param& g = params_.at(name + ".g");
    Param& b = params_.at(name + ".b");
    const std::size_t dim = x.cols();
    Matrix d_x(x.rows(), dim);
    std::vector<double> xhat(dim), dxhat(dim);
    for (std::size_t t = 0; t < x.rows(); ++t) {
      double mean = means[t], rstd = rstds[t];
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        xhat[j] = (x(t, j) - mean) * rstd;
        double dy = d_y(t, j);
        if (accumulate) {
          g.grad[j] += dy * xhat[j];
          b.grad[j] += dy;
        }
        dxhat[j] = dy * g.value[j];
        sum_dxhat += dxhat[j];
        sum_dxhat_xhat += dxhat[j] * xhat[j];
      }
      for (std::size_t j = 0; j < dim; ++j)
        d_x(t, j) = rstd * (dxhat[j] - sum_dxhat / static_cast<double>(dim) -
                            xhat[j] * sum_dxhat_xhat / static_cast<double>(dim));
    }
    return d_x;
  }

  DecoderSpec spec_;
  ParamSet params_;
  bool frozen_ = false;
};

// ---------------------------------------------------------------------------
// Input assembly, masked loss, sampling
// ---------------------------------------------------------------------------

inline AssembledInput assemble(const ToyDecoder& decoder, const std::vector<int>& prompt_ids,
                               const Matrix& content_emb, const Vec& emotion_emb,
                               const std::vector<int>& target_ids = {}) {
  const int d = decoder.spec().d_model;
  if (static_cast<int>(content_emb.cols()) != d)
    throw std::runtime_error("assemble: content embedding width != D_lm");
  if (static_cast<int>(emotion_emb.size()) != d)
    throw std::runtime_error("assemble: emotion embedding width != D_lm");

  AssembledInput in;
  in.spans.prompt_len = prompt_ids.size();
  in.spans.content_len = content_emb.rows();
  in.spans.emotion_len = 1;
  in.spans.target_len = target_ids.size();
  const std::size_t s_len = in.spans.prompt_len + in.spans.content_len + 1 + in.spans.target_len;

  in.embeddings = Matrix(s_len, static_cast<std::size_t>(d));
  in.token_ids.assign(s_len, -1);
  in.loss_mask.assign(s_len, 0);

  std::size_t pos = 0;
  for (int id : prompt_ids) {
    Vec e = decoder.token_embedding(id);
    std::copy(e.begin(), e.end(), in.embeddings.row(pos));
    in.token_ids[pos] = id;
    ++pos;
  }
  for (std::size_t t = 0; t < content_emb.rows(); ++t) {
    std::copy(content_emb.row(t), content_emb.row(t) + d, in.embeddings.row(pos));
    ++pos;
  }
  std::copy(emotion_emb.begin(), emotion_emb.end(), in.embeddings.row(pos));
  ++pos;
  for (int id : target_ids) {
    Vec e = decoder.token_embedding(id);
    std::copy(e.begin(), e.end(), in.embeddings.row(pos));
    in.token_ids[pos] = id;
    in.loss_mask[pos] = 1;
    ++pos;
  }
  return in;
}

// Mean next-token cross-entropy over masked positions. Position j is scored
// from logits at j-1. Optionally fills the gradient w.r.t. logits.
inline double masked_ce_loss(const Matrix& logits, const std::vector<int>& token_ids,
                             const std::vector<std::uint8_t>& mask,
                             Matrix* d_logits = nullptr) {
  const std::size_t s_len = logits.rows();
  const std::size_t vocab = logits.cols();
  std::size_t count = 0;
  for (std::size_t j = 1; j < s_len; ++j)
    if (mask[j]) ++count;
  if (count == 0) throw std::runtime_error("masked_ce_loss: empty mask");

  if (d_logits) *d_logits = Matrix(s_len, vocab);
  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(count);
  for (std::size_t j = 1; j < s_len; ++j) {
    if (!mask[j]) continue;
    int target = token_ids[j];
    if (target < 0) throw std::runtime_error("masked_ce_loss: masked position has no token id");
    const double* row = logits.row(j - 1);
    double mx = row[0];
    for (std::size_t c = 1; c < vocab; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) sum += std::exp(row[c] - mx);
    double logz = mx + std::log(sum);
    loss += (logz - row[static_cast<std::size_t>(target)]) * inv;
    if (d_logits) {
      double* dr = d_logits->row(j - 1);
      for (std::size_t c = 0; c < vocab; ++c)
        dr[c] += (std::exp(row[c] - logz) - (c == static_cast<std::size_t>(target) ? 1.0 : 0.0)) * inv;
    }
  }
  return loss;
}

// Stage-1 emotion slot: i.i.d. standard normal, resampled per example.
inline Vec placeholder_emotion(Rng& rng, int d_lm) {
  Vec v(static_cast<std::size_t>(d_lm));
  for (auto& x : v) x = rng.normal();
  return v;
}

// Nucleus sampling from one logits row. temperature == 0 means greedy argmax
// (lowest token id wins ties).
inline int sample_token(const double* logits, std::size_t vocab, const SamplingConfig& cfg,
                        Rng& rng) {
  if (cfg.temperature <= 0.0) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < vocab; ++c)
      if (logits[c] > logits[best]) best = c;
    return static_cast<int>(best);
  }
  std::vector<double> p(vocab);
  double mx = logits[0];
  for (std::size_t c = 1; c < vocab; ++c) mx = std::max(mx, logits[c]);
  double sum = 0.0;
  for (std::size_t c = 0; c < vocab; ++c) {
    p[c] = std::exp((logits[c] - mx) / cfg.temperature);
    sum += p[c];
  }
  for (auto& x : p) x /= sum;

  std::vector<std::size_t> order(vocab);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&p](std::size_t a, std::size_t b) {
    if (p[a] != p[b]) return p[a] > p[b];
    return a < b;
  });
  // Smallest prefix with cumulative mass >= top_p.
  double cum = 0.0;
  std::size_t keep = 0;
  for (std::size_t i = 0; i < vocab; ++i) {
    cum += p[order[i]];
    keep = i + 1;
    if (cum >= cfg.top_p) break;
  }
  double mass = 0.0;
  for (std::size_t i = 0; i < keep; ++i) mass += p[order[i]];
  double u = rng.uniform() * mass;
  double acc = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    acc += p[order[i]];
    if (u < acc) return static_cast<int>(order[i]);
  }
  return static_cast<int>(order[keep - 1]);
}

inline std::string generate(const ToyDecoder& decoder, const AssembledInput& input,
                            const SamplingConfig& cfg) {
  if (input.spans.target_len != 0)
    throw std::runtime_error("generate: input carries a target span (training-mode input)");
  Rng rng(cfg.seed);
  Matrix seq = input.embeddings;
  std::vector<int> out_ids;
  for (int step = 0; step < cfg.max_new_tokens; ++step) {
    if (seq.rows() >= static_cast<std::size_t>(decoder.spec().max_seq)) break;
    Matrix logits = decoder.forward(seq);
    int tok = sample_token(logits.row(seq.rows() - 1), logits.cols(), cfg, rng);
    if (tok == ByteTokenizer::kEos) break;
    out_ids.push_back(tok);
    Vec e = decoder.token_embedding(tok);
    Matrix next(seq.rows() + 1, seq.cols());
    std::copy(seq.data().begin(), seq.data().end(), next.data().begin());
    std::copy(e.begin(), e.end(), next.row(seq.rows()));
    seq = std::move(next);
  }
  return ByteTokenizer().decode(out_ids);
}

// ---------------------------------------------------------------------------
// Decoder pretraining on a small byte corpus. A random run of leading spaces
// shifts each line so the model is robust to the positional offset at which
// target text appears in assembled inputs.
// ---------------------------------------------------------------------------

inline void pretrain_decoder(ToyDecoder& decoder, const std::vector<std::string>& corpus,
                             int steps, double lr, std::uint64_t seed, int max_offset = 24,
                             double* final_loss = nullptr) {
  if (corpus.empty()) throw std::runtime_error("pretrain_decoder: empty corpus");
  ByteTokenizer tok;
  Rng rng(seed);
  Adam opt(lr);
  std::vector<Param*> ps;
  for (auto& p : decoder.params().all()) ps.push_back(&p);

  double loss_val = 0.0;
  for (int step = 0; step < steps; ++step) {
    decoder.params().zero_grad();
    const std::string& line = corpus[rng.index(corpus.size())];
    int offset = static_cast<int>(rng.index(static_cast<std::size_t>(max_offset + 1)));
    std::string padded(static_cast<std::size_t>(offset), ' ');
    padded += line;
    std::vector<int> ids = tok.encode(padded, /*add_bos=*/true, /*add_eos=*/true);
    if (static_cast<int>(ids.size()) > decoder.spec().max_seq)
      ids.resize(static_cast<std::size_t>(decoder.spec().max_seq));

    Matrix x = decoder.embed_tokens(ids);
    ToyDecoder::Cache cache;
    Matrix logits = decoder.forward(x, &cache);
    std::vector<std::uint8_t> mask(ids.size(), 1);
    mask[0] = 0;
    Matrix d_logits;
    loss_val = masked_ce_loss(logits, ids, mask, &d_logits);
    Matrix d_x = decoder.backward(cache, d_logits, /*accumulate_param_grads=*/true);
    decoder.scatter_token_grads(ids, d_x);
    opt.step(ps);
  }
  decoder.freeze();
  if (final_loss) *final_loss = loss_val;
}

inline void save_decoder(const std::string& path_prefix, const ToyDecoder& decoder) {
  CheckpointMeta meta{"decoder", decoder.spec().hash()};
  save_checkpoint(path_prefix, meta, {&decoder.params()}, {"decoder"});
}

inline void load_decoder(const std::string& path_prefix, ToyDecoder& decoder) {
  CheckpointMeta meta = load_checkpoint(path_prefix, {&decoder.params()}, {"decoder"});
  if (meta.config_hash != decoder.spec().hash())
    throw std::runtime_error("decoder checkpoint does not match decoder spec");
  decoder.freeze();
}

}  // namespace lpe
