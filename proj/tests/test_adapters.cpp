#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "lpe/adapters.hpp"

using namespace lpe;

namespace {

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Central finite difference of a scalar function w.r.t. one parameter slot.
double fd_slot(const std::function<double()>& f, double& slot, double h = 1e-5) {
  double saved = slot;
  slot = saved + h;
  double up = f();
  slot = saved - h;
  double down = f();
  slot = saved;
  return (up - down) / (2.0 * h);
}

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (auto& v : m.data()) v = rng.normal() * 0.5;
  return m;
}

}  // namespace

TEST_CASE("silu basics") {
  CHECK(silu(0.0) == 0.0);
  CHECK(silu_grad(0.0) == doctest::Approx(0.5));
  CHECK(silu(3.0) == doctest::Approx(3.0 * (1.0 / (1.0 + std::exp(-3.0)))));
  // silu_grad matches a finite difference.
  double x = 0.73;
  double fd = (silu(x + 1e-6) - silu(x - 1e-6)) / 2e-6;
  CHECK(silu_grad(x) == doctest::Approx(fd).epsilon(1e-6));
}

TEST_CASE("stride-2 length law composes to the 8x reduction") {
  CHECK(conv_out_len(1) == 1);
  CHECK(conv_out_len(2) == 1);
  CHECK(conv_out_len(3) == 2);
  CHECK(subsample_len(8) == 1);
  CHECK(subsample_len(9) == 2);
  // Oracle: iterate ceil(t/2) three times.
  for (std::size_t t = 1; t <= 2048; ++t) {
    std::size_t o = t;
    for (int i = 0; i < 3; ++i) o = (o + 1) / 2;
    CHECK(subsample_len(t) == o);
  }
}

TEST_CASE("forward output length matches the law") {
  SubsamplerAdapter sub(4, 6, 3);
  for (std::size_t t : {1, 2, 3, 7, 8, 9, 16, 40, 57}) {
    Rng rng(t);
    Matrix in = random_matrix(t, 4, rng);
    CHECK(sub.forward(in).rows() == subsample_len(t));
    CHECK(sub.forward(in).cols() == 6);
  }
  CHECK_THROWS(sub.forward(Matrix(0, 4)));
  CHECK_THROWS(sub.forward(Matrix(3, 5)));
}

TEST_CASE("combine_loss follows the weighted-sum contract exactly") {
  LossBreakdown b = combine_loss(2.0, 1.0, 0.1);
  CHECK(b.total == 2.1);
  CHECK(b.decoder_loss == 2.0);
  CHECK(b.emotion_loss == 1.0);
  CHECK(combine_loss(1.5, 7.0, 0.0).total == 1.5);
  CHECK_THROWS(combine_loss(std::numeric_limits<double>::infinity(), 0.0, 0.1));
  CHECK_THROWS(combine_loss(0.0, std::nan(""), 0.1));
}

TEST_CASE("subsampler analytic gradients match central finite differences") {
  const std::size_t T = 4;
  const int d_enc = 6, d_lm = 8;
  SubsamplerAdapter sub(d_enc, d_lm, 21);
  Rng rng(5);
  Matrix input = random_matrix(T, static_cast<std::size_t>(d_enc), rng);

  // Scalar objective: fixed random projection of the output.
  Matrix coeff = random_matrix(subsample_len(T), static_cast<std::size_t>(d_lm), rng);
  auto objective = [&]() {
    Matrix out = sub.forward(input);
    double s = 0.0;
    for (std::size_t j = 0; j < out.data().size(); ++j) s += coeff.data()[j] * out.data()[j];
    return s;
  };

  SubsamplerAdapter::Cache cache;
  sub.forward(input, &cache);
  sub.params().zero_grad();
  Matrix d_input = sub.backward(cache, coeff);

  double worst = 0.0;
  for (auto& p : sub.params().all())
    for (std::size_t j = 0; j < p.size(); ++j) {
      double fd = fd_slot(objective, p.value[j]);
      worst = std::max(worst, rel_err(p.grad[j], fd));
    }
  CHECK(worst < 1e-4);

  double worst_in = 0.0;
  for (std::size_t j = 0; j < input.data().size(); ++j) {
    double fd = fd_slot(objective, input.data()[j]);
    worst_in = std::max(worst_in, rel_err(d_input.data()[j], fd));
  }
  CHECK(worst_in < 1e-4);
}

TEST_CASE("multiscale layer weights start uniform and stay a distribution") {
  MultiscaleAdapter ms(3, 6, 8, 4, 9);
  Vec w = ms.layer_weights();
  REQUIRE(w.size() == 3);
  for (double v : w) CHECK(v == doctest::Approx(1.0 / 3.0));

  ms.params().at("layer_logits").value = {0.3, -1.2, 0.9};
  w = ms.layer_weights();
  double sum = 0.0;
  for (double v : w) {
    CHECK(v > 0.0);
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0));
  CHECK(w[2] > w[0]);
  CHECK(w[0] > w[1]);
}

TEST_CASE("multiscale analytic gradients match central finite differences") {
  const std::size_t T = 4;
  const int L1 = 3, d_enc = 6, d_lm = 8, K = 3;
  MultiscaleAdapter ms(L1, d_enc, d_lm, K, 33);
  ms.params().at("layer_logits").value = {0.4, -0.3, 0.1};  // leave the symmetric init

  Rng rng(6);
  LayeredFeatures f;
  f.layers = {random_matrix(T, d_enc, rng), random_matrix(T, d_enc, rng),
              random_matrix(T, d_enc, rng)};

  Vec c_emb(d_lm), c_log(K);
  for (auto& v : c_emb) v = rng.normal();
  for (auto& v : c_log) v = rng.normal();

  auto objective = [&]() {
    auto out = ms.forward(f);
    double s = 0.0;
    for (int j = 0; j < d_lm; ++j) s += c_emb[static_cast<std::size_t>(j)] * out.embedding[static_cast<std::size_t>(j)];
    for (int j = 0; j < K; ++j) s += c_log[static_cast<std::size_t>(j)] * out.logits[static_cast<std::size_t>(j)];
    return s;
  };

  MultiscaleAdapter::Cache cache;
  ms.forward(f, &cache);
  ms.params().zero_grad();
  ms.backward(cache, c_emb, c_log);

  double worst = 0.0;
  for (auto& p : ms.params().all())
    for (std::size_t j = 0; j < p.size(); ++j) {
      double fd = fd_slot(objective, p.value[j]);
      worst = std::max(worst, rel_err(p.grad[j], fd));
    }
  CHECK(worst < 1e-4);
}

TEST_CASE("multiscale rejects a feature stack of the wrong depth") {
  MultiscaleAdapter ms(3, 6, 8, 4, 9);
  LayeredFeatures f;
  f.layers = {Matrix(2, 6), Matrix(2, 6)};
  CHECK_THROWS_WITH(ms.forward(f), doctest::Contains("layer count"));
}

TEST_CASE("classifier logits never feed back without an emotion loss signal") {
  // backward with empty d_logits must leave classifier gradients at zero.
  MultiscaleAdapter ms(2, 4, 6, 3, 11);
  Rng rng(8);
  LayeredFeatures f;
  f.layers = {random_matrix(3, 4, rng), random_matrix(3, 4, rng)};
  MultiscaleAdapter::Cache cache;
  ms.forward(f, &cache);
  ms.params().zero_grad();
  Vec d_emb(6, 0.5);
  ms.backward(cache, d_emb, {});
  for (double g : ms.params().at("classifier.w").grad) CHECK(g == 0.0);
  for (double g : ms.params().at("classifier.b").grad) CHECK(g == 0.0);
}
