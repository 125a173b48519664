#include <cmath>
#include <numbers>

#include "doctest.h"
#include "seldiff/grad_check.hpp"
#include "seldiff/objectives.hpp"
#include "support.hpp"

using namespace seldiff;
using test::uniform_tensor;

namespace {

// Draws made by draw_noisy under the default policy.
struct Draws {
  std::vector<int> t;
  Tensor eps;
};

Draws replay_uniform(const Tensor& x0, int T, Rng& rng) {
  Draws d;
  d.t.resize(x0.rows());
  for (auto& t : d.t) t = sample_uniform_timestep(T, rng);
  d.eps = rng.normal_tensor(x0.shape());
  return d;
}

// Schedule whose every timestep has alpha_bar = a.
NoiseSchedule flat_schedule(double a, int T = 4) {
  NoiseSchedule s;
  s.T = T;
  s.alpha_bar.assign(T, a);
  s.sigma.assign(T, std::sqrt(1 - a));
  s.beta.assign(T, 0.1);
  s.loss_weight.assign(T, 1.0);
  return s;
}

double value(const LossTerms& l) { return l.total.value().item(); }

// Loss value and gradients of an objective at fixed rng seed.
std::pair<double, Gradients> eval_loss(const LossFn& f, const Denoiser& m, const UnlearnBatch& b,
                                       const NoiseSchedule& s, std::uint64_t seed) {
  Graph g;
  auto p = m.bind(g);
  Rng rng(seed);
  LossTerms terms = f(g, m, p, b, s, rng);
  return {value(terms), g.backward(terms.total)};
}

double gauss_logpdf(double x, double mean, double var) {
  return -0.5 * std::log(2 * std::numbers::pi * var) - (x - mean) * (x - mean) / (2 * var);
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Scalar DPO pair loss from the four per-sample errors; retain is the winner.
double dpo_pair(double ef, double rf, double er, double rr, double beta) {
  return -std::log(sigmoid(beta * ((ef - rf) - (er - rr))));
}

double sq_err(const std::vector<double>& pred, const Tensor& target, std::size_t row) {
  double s = 0;
  for (std::size_t j = 0; j < pred.size(); ++j) s += (pred[j] - target.at(row, j)) * (pred[j] - target.at(row, j));
  return s / double(pred.size());
}

std::vector<double> row_of(const Tensor& m, std::size_t r) {
  return std::vector<double>(m.data().begin() + r * m.cols(), m.data().begin() + (r + 1) * m.cols());
}

}  // namespace

TEST_CASE("ga_loss: perfect predictor, sign contract, hand arithmetic") {
  const NoiseSchedule s = test::toy_schedule();
  const Tensor x0 = Tensor::matrix(1, 2, {0.5, -0.4});
  Rng probe(3);
  const Draws d = replay_uniform(x0, s.T, probe);
  const double a = std::sqrt(s.alpha_bar[d.t[0]]), sg = s.sigma[d.t[0]];
  const Denoiser oracle = test::linear_model(Tensor::matrix(2, 2, {1 / sg, 0, 0, 1 / sg}),
                                             Tensor::matrix(1, 2, {-a / sg * 0.5, a / sg * 0.4}));
  UnlearnBatch b{x0, {}, 0, 0};
  {
    Graph g;
    auto p = oracle.bind(g);
    Rng rng(3);
    CHECK(std::abs(value(ga_loss(g, oracle, p, b, s, rng))) < 1e-20);
  }

  // ga_loss == -epsilon_loss on the same draws, values and gradients.
  Rng gen(4);
  for (int rep = 0; rep < 10; ++rep) {
    const Denoiser m = test::small_model(3, gen.next_u64());
    UnlearnBatch fb{uniform_tensor(gen, {4, 3}), {}, 0, 0};
    const std::uint64_t seed = gen.next_u64();
    Graph g1, g2;
    auto p1 = m.bind(g1);
    auto p2 = m.bind(g2);
    Rng r1(seed), r2(seed);
    LossTerms ga = ga_loss(g1, m, p1, fb, s, r1);
    const Draws dd = replay_uniform(fb.forget, s.T, r2);
    Var el = epsilon_loss(g2, m, p2, fb.forget, dd.t, dd.eps, s);
    CHECK(value(ga) == -el.value().item());
    CHECK(ga.forget_term == el.value().item());
    const Gradients ga_g = g1.backward(ga.total), el_g = g2.backward(el);
    for (std::size_t k = 0; k < ga_g.size(); ++k)
      for (std::size_t i = 0; i < ga_g[k].numel(); ++i) CHECK(ga_g[k][i] == -el_g[k][i]);
  }

  // x0 = 1, eps = 0.5, alpha_bar = 0.25, model output 0: -mean((0 - 0.5)^2) = -0.25.
  {
    Graph g;
    Var pred = g.constant(Tensor::matrix(1, 1, {0.0}));
    const double coeff[1] = {-1.0};
    CHECK(weighted_sum(g, per_sample_error(g, pred, Tensor::matrix(1, 1, {0.5})), coeff).value().item() == -0.25);
    const NoiseSchedule q = flat_schedule(0.25);
    CHECK(forward_noise(Tensor::matrix(1, 1, {1.0}), 0, Tensor::matrix(1, 1, {0.5}), q).item() ==
          doctest::Approx(0.5 + std::sqrt(0.75) * 0.5));
    // Same scalar through ga_loss: a zero model gives -eps^2 for the drawn eps.
    const Denoiser zero = test::linear_model(Tensor(Shape{1, 1}), Tensor(Shape{1, 1}));
    UnlearnBatch one{Tensor::matrix(1, 1, {1.0}), {}, 0, 0};
    Graph g2;
    auto p = zero.bind(g2);
    Rng r(8), r_copy(8);
    const Draws dd = replay_uniform(one.forget, q.T, r_copy);
    CHECK(value(ga_loss(g2, zero, p, one, q, r)) == -dd.eps[0] * dd.eps[0]);
  }

  Graph g;
  auto p = oracle.bind(g);
  Rng rng(1);
  CHECK_THROWS_AS(ga_loss(g, oracle, p, UnlearnBatch{Tensor(Shape{0, 2}), {}, 0, 0}, s, rng), std::invalid_argument);
}

TEST_CASE("erasediff_loss: eps' oracle, zero model, scalar re-implementation") {
  const NoiseSchedule s = test::toy_schedule();
  const Tensor xf = Tensor::matrix(1, 2, {0.2, 0.9});
  const Tensor xr = Tensor::matrix(2, 2, {-0.3, 0.1, 0.6, -0.8});
  UnlearnBatch b{xf, xr, 0, 0};

  // Replay: forget t and eps, then eps', then retain t and eps.
  Rng probe(5);
  const Draws df = replay_uniform(xf, s.T, probe);
  const Tensor eps_prime = probe.normal_tensor(xf.shape());
  const Denoiser constant = test::linear_model(Tensor(Shape{2, 2}), eps_prime);
  {
    Graph g;
    auto p = constant.bind(g);
    Rng rng(5);
    CHECK(value(erasediff_loss(g, constant, p, b, s, 0.0, rng)) == 0.0);
  }
  {
    const Denoiser zero = test::linear_model(Tensor(Shape{2, 2}), Tensor(Shape{1, 2}));
    Graph g;
    auto p = zero.bind(g);
    Rng rng(5);
    const double expect = (eps_prime[0] * eps_prime[0] + eps_prime[1] * eps_prime[1]) / 2;
    CHECK(value(erasediff_loss(g, zero, p, b, s, 0.0, rng)) == doctest::Approx(expect).epsilon(1e-15));
  }
  (void)df;

  Rng gen(6);
  for (int rep = 0; rep < 5; ++rep) {
    const Denoiser m = test::small_model(2, gen.next_u64());
    const double beta = 0.3 + gen.uniform();
    const std::uint64_t seed = gen.next_u64();
    Rng r(seed);
    const Draws f = replay_uniform(xf, s.T, r);
    const Tensor ep = r.normal_tensor(xf.shape());
    const Draws rt = replay_uniform(xr, s.T, r);
    auto noisy = [&](const Tensor& x, const Draws& d, std::size_t i) {
      const int t = d.t[i];
      return std::vector<double>{std::sqrt(s.alpha_bar[t]) * x.at(i, 0) + s.sigma[t] * d.eps.at(i, 0),
                                 std::sqrt(s.alpha_bar[t]) * x.at(i, 1) + s.sigma[t] * d.eps.at(i, 1)};
    };
    const double lf = sq_err(test::scalar_forward(m, noisy(xf, f, 0), f.t[0]), ep, 0);
    double lr = 0;
    for (std::size_t i = 0; i < 2; ++i) lr += sq_err(test::scalar_forward(m, noisy(xr, rt, i), rt.t[i]), rt.eps, i) / 2;
    Graph g;
    auto p = m.bind(g);
    Rng rng(seed);
    CHECK(value(erasediff_loss(g, m, p, b, s, beta, rng)) == doctest::Approx(lf + beta * lr).epsilon(1e-12));
  }

  Graph g;
  auto p = constant.bind(g);
  Rng rng(1);
  CHECK_THROWS_AS(erasediff_loss(g, constant, p, UnlearnBatch{xf, {}, 0, 0}, s, 1.0, rng), std::invalid_argument);
}

TEST_CASE("siss_sample_mixture branch frequencies") {
  const NoiseSchedule s = test::toy_schedule();
  const Tensor x = Tensor::matrix(1, 2, {1, 1}), xr = Tensor::matrix(1, 2, {-1, 0});
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) CHECK(siss_sample_mixture(x, xr, 5, 1.0, s, rng).forget_branch);
  const int n = 100000;
  long forget = 0;
  for (int i = 0; i < n; ++i) forget += siss_sample_mixture(x, xr, 5, 0.5, s, rng).forget_branch;
  CHECK(std::abs(forget - n / 2.0) < 3 * std::sqrt(n * 0.25));

  // Identical anchors: the draw does not depend on which branch was picked.
  Rng a(11), b(11);
  for (int i = 0; i < 100; ++i) CHECK(siss_sample_mixture(x, x, 9, 0.2, s, a).m_t == siss_sample_mixture(x, x, 9, 0.8, s, b).m_t);
}

TEST_CASE("siss_weights: identities and closed-form density ratios") {
  const NoiseSchedule s = flat_schedule(0.25);
  const Tensor x = Tensor::matrix(1, 1, {0.0}), xr = Tensor::matrix(1, 1, {4.0});
  const SissWeights same = siss_weights(Tensor::matrix(1, 1, {1.3}), x, x, 0, 0.3, s);
  CHECK(same.w_keep == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(same.w_forget == doctest::Approx(1.0).epsilon(1e-15));

  // m_t = 1 is equidistant from sqrt(0.25) * 0 = 0 and sqrt(0.25) * 4 = 2.
  const SissWeights sym = siss_weights(Tensor::matrix(1, 1, {1.0}), x, xr, 0, 0.5, s);
  CHECK(sym.w_keep == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(sym.w_forget == doctest::Approx(1.0).epsilon(1e-15));

  for (double m : {-0.5, 0.3, 2.7}) {
    for (double lam : {0.2, 0.5, 0.9}) {
      const double qf = std::exp(gauss_logpdf(m, 0.0, 0.75)), qk = std::exp(gauss_logpdf(m, 2.0, 0.75));
      const double mix = lam * qf + (1 - lam) * qk;
      const SissWeights w = siss_weights(Tensor::matrix(1, 1, {m}), x, xr, 0, lam, s);
      CHECK(w.w_keep == doctest::Approx(qk / mix).epsilon(1e-12));
      CHECK(w.w_forget == doctest::Approx(qf / mix).epsilon(1e-12));
    }
  }

  const SissWeights off = siss_weights(Tensor::matrix(1, 1, {1.0}), x, xr, 0, 0.5, s, false);
  CHECK(off.w_keep == 1.0);
  CHECK(off.w_forget == 1.0);
}

TEST_CASE("siss_weights mixture normalisation on random instances") {
  const NoiseSchedule s = make_schedule(200, 5e-4, 0.1);
  Rng rng(17);
  for (int i = 0; i < 10000; ++i) {
    const std::size_t d = test::dim(rng, 1, 8);
    const Tensor x = uniform_tensor(rng, {1, d}, -2, 2), xr = uniform_tensor(rng, {1, d}, -2, 2);
    const int t = static_cast<int>(rng.uniform_index(s.T));
    const double lam = 0.01 + 0.98 * rng.uniform();
    const MixtureDraw m = siss_sample_mixture(x, xr, t, lam, s, rng);
    const SissWeights w = siss_weights(m.m_t, x, xr, t, lam, s);
    CHECK(std::abs(lam * w.w_forget + (1 - lam) * w.w_keep - 1.0) < 1e-10);
  }
}

TEST_CASE("siss_loss: degenerate pair, No-IS contract, scalar oracle") {
  const NoiseSchedule s = test::toy_schedule();
  const Denoiser m = test::small_model(2, 21);
  const Tensor x = Tensor::matrix(1, 2, {0.4, 0.1});
  {
    Graph g;
    auto p = m.bind(g);
    Rng rng(2);
    SissConfig cfg{0.5, 0.0, true};
    CHECK(std::abs(value(siss_loss(g, m, p, UnlearnBatch{x, x, 0, 0}, s, cfg, rng))) < 1e-14);
  }

  const Tensor xr = Tensor::matrix(2, 2, {-0.5, 0.7, 0.9, 0.2});
  const Tensor xf = Tensor::matrix(2, 2, {0.4, 0.1, -0.2, -0.6});
  UnlearnBatch b{xf, xr, 0, 0};
  for (double beta : {0.0, 0.7}) {
    // IS on: per row draw retain index, t, branch, eps.
    SissConfig cfg{0.4, beta, true};
    Rng r(31);
    double expect = 0;
    for (std::size_t i = 0; i < 2; ++i) {
      const std::size_t j = r.uniform_index(2);
      const int t = sample_uniform_timestep(s.T, r);
      const bool fb = r.bernoulli(0.4);
      const Tensor e = r.normal_tensor({1, 2});
      const double a = std::sqrt(s.alpha_bar[t]), sg = s.sigma[t];
      std::vector<double> mt(2), ek(2), ef(2);
      for (int k = 0; k < 2; ++k) {
        mt[k] = a * (fb ? xf.at(i, k) : xr.at(j, k)) + sg * e[k];
        ek[k] = (mt[k] - a * xr.at(j, k)) / sg;
        ef[k] = (mt[k] - a * xf.at(i, k)) / sg;
      }
      double df = 0, dk = 0;
      for (int k = 0; k < 2; ++k) {
        df += (mt[k] - a * xf.at(i, k)) * (mt[k] - a * xf.at(i, k));
        dk += (mt[k] - a * xr.at(j, k)) * (mt[k] - a * xr.at(j, k));
      }
      const double qf = std::exp(-df / (2 * sg * sg)), qk = std::exp(-dk / (2 * sg * sg));
      const double mix = 0.4 * qf + 0.6 * qk;
      const std::vector<double> pred = test::scalar_forward(m, mt, t);
      double lk = 0, lf = 0;
      for (int k = 0; k < 2; ++k) {
        lk += (pred[k] - ek[k]) * (pred[k] - ek[k]) / 2;
        lf += (pred[k] - ef[k]) * (pred[k] - ef[k]) / 2;
      }
      expect += (qk / mix * lk - (1 + beta) * qf / mix * lf) / 2;
    }
    Graph g;
    auto p = m.bind(g);
    Rng rng(31);
    CHECK(value(siss_loss(g, m, p, b, s, cfg, rng)) == doctest::Approx(expect).epsilon(1e-10));
  }

  // IS off: independent keep and forget draws with unit weights.
  {
    SissConfig cfg{0.4, 0.5, false};
    Rng r(41);
    double expect = 0;
    for (std::size_t i = 0; i < 2; ++i) {
      const std::size_t j = r.uniform_index(2);
      const int t = sample_uniform_timestep(s.T, r);
      const Tensor ek = r.normal_tensor({1, 2}), ef = r.normal_tensor({1, 2});
      const double a = std::sqrt(s.alpha_bar[t]), sg = s.sigma[t];
      const std::vector<double> mk{a * xr.at(j, 0) + sg * ek[0], a * xr.at(j, 1) + sg * ek[1]};
      const std::vector<double> mf{a * xf.at(i, 0) + sg * ef[0], a * xf.at(i, 1) + sg * ef[1]};
      expect += (sq_err(test::scalar_forward(m, mk, t), ek, 0) - 1.5 * sq_err(test::scalar_forward(m, mf, t), ef, 0)) / 2;
    }
    Graph g;
    auto p = m.bind(g);
    Rng rng(41);
    CHECK(value(siss_loss(g, m, p, b, s, cfg, rng)) == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("dpo_forget_loss: reference identity, small beta, translation invariance, oracle") {
  const NoiseSchedule s = test::toy_schedule();
  const Denoiser m = test::small_model(2, 5);
  Rng gen(2);
  UnlearnBatch b{uniform_tensor(gen, {3, 2}), uniform_tensor(gen, {4, 2}), 0, 0};
  {
    Graph g;
    auto p = m.bind(g);
    Rng rng(1);
    CHECK(std::abs(value(dpo_forget_loss(g, m, p, b, s, m, PreferenceConfig{2.0, 1, 1}, rng)) - std::log(2.0)) < 1e-10);
  }
  const Denoiser other = test::small_model(2, 6);
  {
    Graph g;
    auto p = other.bind(g);
    Rng rng(1);
    CHECK(std::abs(value(dpo_forget_loss(g, other, p, b, s, m, PreferenceConfig{1e-9, 1, 1}, rng)) - std::log(2.0)) < 1e-8);
  }

  for (int i = 0; i < 100; ++i) {
    const double ef = gen.uniform() * 3, rf = gen.uniform() * 3, er = gen.uniform() * 3, rr = gen.uniform() * 3;
    const double c = gen.uniform() * 10 - 5, beta = 0.1 + gen.uniform() * 3;
    CHECK(std::abs(dpo_pair(ef + c, rf + c, er + c, rr + c, beta) - dpo_pair(ef, rf, er, rr, beta)) < 1e-10);
  }

  // Two-parameter model eps_hat = w x + c on 1-D data.
  const Denoiser lin = test::linear_model(Tensor::matrix(1, 1, {0.7}), Tensor::matrix(1, 1, {-0.2}));
  const Denoiser ref = test::linear_model(Tensor::matrix(1, 1, {0.4}), Tensor::matrix(1, 1, {0.1}));
  UnlearnBatch b1{Tensor::matrix(2, 1, {0.5, -0.3}), Tensor::matrix(3, 1, {1.0, 0.2, -0.9}), 0, 0};
  const double beta = 1.7;
  Rng r(9);
  double expect = 0;
  for (std::size_t i = 0; i < 2; ++i) {
    const std::size_t j = r.uniform_index(3);
    const int t = sample_uniform_timestep(s.T, r);
    const double e = r.normal();
    const double a = std::sqrt(s.alpha_bar[t]), sg = s.sigma[t];
    const double mf = a * b1.forget[i] + sg * e, mr = a * b1.retain[j] + sg * e;
    auto err = [&](double w, double c, double in) { return (w * in + c - e) * (w * in + c - e); };
    expect += dpo_pair(err(0.7, -0.2, mf), err(0.4, 0.1, mf), err(0.7, -0.2, mr), err(0.4, 0.1, mr), beta) / 2;
  }
  Graph g;
  auto p = lin.bind(g);
  Rng rng(9);
  CHECK(value(dpo_forget_loss(g, lin, p, b1, s, ref, PreferenceConfig{beta, 1, 1}, rng)) ==
        doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("kto_forget_loss: reference identity, routing, oracle") {
  const NoiseSchedule s = test::toy_schedule();
  const Denoiser m = test::small_model(2, 5);
  Rng gen(3);
  UnlearnBatch b{uniform_tensor(gen, {3, 2}), uniform_tensor(gen, {4, 2}), 0, 0};
  const PreferenceConfig cfg{1.5, 0.8, 1.3};
  {
    Graph g;
    auto p = m.bind(g);
    Rng rng(1);
    CHECK(value(kto_forget_loss(g, m, p, b, s, m, cfg, rng)) == doctest::Approx(0.5 * (0.8 + 1.3)).epsilon(1e-15));
  }
  {
    Graph g;
    auto p = m.bind(g);
    Rng rng(1);
    LossTerms l = kto_forget_loss(g, m, p, UnlearnBatch{b.forget, {}, 0, 0}, s, m, cfg, rng);
    CHECK(value(l) == doctest::Approx(0.5 * 1.3).epsilon(1e-15));
    CHECK(l.retain_term == 0.0);
  }

  const Denoiser lin = test::linear_model(Tensor::matrix(1, 1, {0.7}), Tensor::matrix(1, 1, {-0.2}));
  const Denoiser ref = test::linear_model(Tensor::matrix(1, 1, {0.4}), Tensor::matrix(1, 1, {0.1}));
  UnlearnBatch b1{Tensor::matrix(2, 1, {0.5, -0.3}), Tensor::matrix(3, 1, {1.0, 0.2, -0.9}), 0, 0};
  for (bool with_retain : {true, false}) {
    UnlearnBatch bb = b1;
    if (!with_retain) bb.retain = Tensor();
    Rng r(12);
    auto draw_rewards = [&](const Tensor& x) {
      std::vector<int> t(x.rows());
      for (auto& v : t) v = sample_uniform_timestep(s.T, r);
      const Tensor e = r.normal_tensor(x.shape());
      std::vector<double> rho(x.rows());
      for (std::size_t i = 0; i < x.rows(); ++i) {
        const double in = std::sqrt(s.alpha_bar[t[i]]) * x[i] + s.sigma[t[i]] * e[i];
        const double et = (0.7 * in - 0.2 - e[i]) * (0.7 * in - 0.2 - e[i]);
        const double er = (0.4 * in + 0.1 - e[i]) * (0.4 * in + 0.1 - e[i]);
        rho[i] = -cfg.beta_pref * (et - er);
      }
      return rho;
    };
    const std::vector<double> rf = draw_rewards(bb.forget);
    const std::vector<double> rr = with_retain ? draw_rewards(bb.retain) : std::vector<double>{};
    double z = 0;
    for (double v : rf) z += v;
    for (double v : rr) z += v;
    z = std::max(0.0, z / double(rf.size() + rr.size()));
    double und = 0, des = 0;
    for (double v : rf) und += sigmoid(v - z) / double(rf.size());
    for (double v : rr) des += (1 - sigmoid(v - z)) / double(rr.size());
    const double expect = cfg.w_undesirable * und + (with_retain ? cfg.w_desirable * des : 0.0);
    Graph g;
    auto p = lin.bind(g);
    Rng rng(12);
    CHECK(value(kto_forget_loss(g, lin, p, bb, s, ref, cfg, rng)) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("every loss passes grad_check on 2-layer models over 20 instances") {
  const NoiseSchedule s = test::toy_schedule();
  Rng gen(77);
  const char* names[] = {"ga", "erasediff", "siss", "siss_no_is", "dpo", "kto"};
  for (int kind = 0; kind < 6; ++kind) {
    CAPTURE(names[kind]);
    for (int rep = 0; rep < 20; ++rep) {
      const Denoiser ref = test::small_model(2, gen.next_u64(), 4);
      // Scaled output layer: every reward is negative, so the KTO reference point sits at its clamp 0
      // and carries no gradient.
      std::vector<Tensor> ps = ref.params();
      for (std::size_t k = ps.size() - 2; k < ps.size(); ++k) ps[k] = kernels::scale(ps[k], 5.0);
      const Denoiser m(ref.arch(), ps);
      const UnlearnBatch b{uniform_tensor(gen, {2, 2}), uniform_tensor(gen, {3, 2}), 0, 0};
      const std::uint64_t seed = gen.next_u64();
      MultiLossFn f = [&](Graph& g, std::span<const Var> p) {
        Rng rng(seed);
        switch (kind) {
          case 0: return ga_loss(g, m, p, b, s, rng).total;
          case 1: return erasediff_loss(g, m, p, b, s, 0.5, rng).total;
          case 2: return siss_loss(g, m, p, b, s, SissConfig{0.5, 0.3, true}, rng).total;
          case 3: return siss_loss(g, m, p, b, s, SissConfig{0.5, 0.3, false}, rng).total;
          case 4: return dpo_forget_loss(g, m, p, b, s, ref, PreferenceConfig{2.0, 1, 1}, rng).total;
          default: return kto_forget_loss(g, m, p, b, s, ref, PreferenceConfig{2.0, 1, 1}, rng).total;
        }
      };
      CHECK(grad_check(f, m.params()) < 1e-4);
    }
  }
}

TEST_CASE("selective_wrap with inert selections matches the raw objective bitwise") {
  const NoiseSchedule s = test::toy_schedule();
  const Denoiser m = test::small_model(16, 4);
  Rng gen(5);
  const UnlearnBatch b{uniform_tensor(gen, {3, 16}), uniform_tensor(gen, {3, 16}), 4, 4};
  const LossFn raw = unwrapped([](Graph& g, const Denoiser& md, std::span<const Var> p, const UnlearnBatch& bt,
                                  const NoiseSchedule& sc, Rng& r, const NoisingPolicy& pol) {
    return ga_loss(g, md, p, bt, sc, r, pol);
  });
  const LossFn wrapped = selective_wrap(
      [](Graph& g, const Denoiser& md, std::span<const Var> p, const UnlearnBatch& bt, const NoiseSchedule& sc, Rng& r,
         const NoisingPolicy& pol) { return ga_loss(g, md, p, bt, sc, r, pol); },
      TimeWindowConfig{0.0, 0, s.T, s.T}, FrequencyFilterConfig{0.15, 1.0, {}});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto [lr, gr] = eval_loss(raw, m, b, s, seed);
    const auto [lw, gw] = eval_loss(wrapped, m, b, s, seed);
    CHECK(lr == lw);
    for (std::size_t k = 0; k < gr.size(); ++k) CHECK(gr[k] == gw[k]);
  }

  const LossFn bad = selective_wrap(
      [](Graph& g, const Denoiser& md, std::span<const Var> p, const UnlearnBatch& bt, const NoiseSchedule& sc, Rng& r,
         const NoisingPolicy& pol) { return ga_loss(g, md, p, bt, sc, r, pol); },
      TimeWindowConfig{0.0, 0, 10, 10}, FrequencyFilterConfig{});
  CHECK_THROWS_AS(eval_loss(bad, m, b, s, 0), std::invalid_argument);
}

TEST_CASE("selective_wrap on GA equals filtering by hand") {
  const NoiseSchedule s = make_schedule(1000, 1e-4, 2e-2);
  DenoiserArch arch;
  arch.data_dim = 16;
  arch.hidden = {8};
  arch.time_dim = 4;
  const Denoiser m(arch, 9);
  Rng gen(6);
  const UnlearnBatch b{uniform_tensor(gen, {3, 16}), {}, 4, 4};
  const TimeWindowConfig win{0.0, 250, 750, 1000};
  const LossFn wrapped = selective_wrap(
      [](Graph& g, const Denoiser& md, std::span<const Var> p, const UnlearnBatch& bt, const NoiseSchedule& sc, Rng& r,
         const NoisingPolicy& pol) { return ga_loss(g, md, p, bt, sc, r, pol); },
      win, FrequencyFilterConfig{0.15, 0.0, {}});
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto [lw, gw] = eval_loss(wrapped, m, b, s, seed);
    Rng r(seed);
    std::vector<int> t(3);
    for (auto& v : t) v = sample_timestep(win, r);
    const Tensor eps = r.normal_tensor(b.forget.shape());
    const Tensor xt = low_pass_rows(forward_noise(b.forget, t, eps, s), 4, 4, 0.15, 0.0);
    Graph g;
    auto p = m.bind(g);
    Var pred = m.forward(g, p, g.constant(xt), t);
    const std::vector<double> coeff(3, -1.0 / 3);
    Var l = weighted_sum(g, per_sample_error(g, pred, eps), coeff);
    const Gradients gh = g.backward(l);
    CHECK(lw == l.value().item());
    for (std::size_t k = 0; k < gh.size(); ++k) CHECK(max_abs_diff(gh[k], gw[k]) == 0.0);
  }
}

TEST_CASE("forget-only filtering leaves the SISS retain branch unfiltered") {
  const NoiseSchedule s = test::toy_schedule();
  const Denoiser m = test::small_model(16, 3);
  Rng gen(8);
  const UnlearnBatch b{uniform_tensor(gen, {2, 16}), uniform_tensor(gen, {2, 16}), 4, 4};
  const SissConfig cfg{0.5, 0.0, false};
  NoisingPolicy pol;
  pol.freq = FrequencyFilterConfig{0.2, 0.0, {}};
  Graph g;
  auto p = m.bind(g);
  Rng rng(3);
  const double got = value(siss_loss(g, m, p, b, s, cfg, rng, pol));

  Rng r(3);
  double expect = 0;
  for (std::size_t i = 0; i < 2; ++i) {
    const std::size_t j = r.uniform_index(2);
    const int t = sample_uniform_timestep(s.T, r);
    const Tensor ek = r.normal_tensor({1, 16}), ef = r.normal_tensor({1, 16});
    const Tensor mk = forward_noise(b.retain.row(j), t, ek, s);
    const Tensor mf = low_pass_rows(forward_noise(b.forget.row(i), t, ef, s), 4, 4, 0.2, 0.0);
    expect += (sq_err(row_of(m.predict(mk, t), 0), ek, 0) - sq_err(row_of(m.predict(mf, t), 0), ef, 0)) / 2;
  }
  CHECK(got == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("unlearn_step: zero learning rate, window contract, abort") {
  const NoiseSchedule s = make_schedule(200, 5e-4, 0.1);
  Rng gen(2);
  UnlearnRun run;
  run.model = test::small_model(2, 4);
  run.sched = s;
  run.optimizer = Adam(AdamConfig{0.0});
  run.forget = uniform_tensor(gen, {6, 2});
  run.retain = uniform_tensor(gen, {20, 2});
  const std::vector<Tensor> before = run.model.params();
  Rng rng(1);
  const StepRecord rec = unlearn_step(run, rng);
  for (std::size_t k = 0; k < before.size(); ++k) CHECK(run.model.params()[k] == before[k]);
  CHECK(run.step == 1);
  CHECK(rec.grad_norm > 0.0);

  run.optimizer = Adam(AdamConfig{1e-3});
  run.policy.time = TimeWindowConfig{0.0, 50, 150, 200};
  for (int i = 0; i < 20; ++i) {
    const StepRecord r = unlearn_step(run, rng);
    for (int t : r.timesteps) CHECK(run.policy.time->contains(t));
  }
  CHECK(run.history.size() == 21);

  // Parameters that overflow the forward pass abort the step and leave the model alone.
  for (auto& p : run.model.params())
    for (double& v : p.data()) v = 1e200;
  const std::vector<Tensor> huge = run.model.params();
  CHECK_THROWS_AS(unlearn_step(run, rng), StepAborted);
  for (std::size_t k = 0; k < huge.size(); ++k) CHECK(run.model.params()[k] == huge[k]);

  UnlearnRun pref = run;
  pref.model = test::small_model(2, 4);
  pref.objective.kind = ObjectiveKind::dpo;
  CHECK_THROWS_AS(pref.loss_fn(), std::invalid_argument);
  pref.reference = pref.model;
  CHECK_NOTHROW(unlearn_step(pref, rng));
}

TEST_CASE("objective names round trip") {
  for (auto k : {ObjectiveKind::ga, ObjectiveKind::erasediff, ObjectiveKind::siss, ObjectiveKind::dpo, ObjectiveKind::kto})
    CHECK(objective_kind_from_string(to_string(k)) == k);
  CHECK_THROWS(objective_kind_from_string("npo"));
  CHECK_THROWS(SissConfig{1.0, 0.0, true}.validate());
  CHECK_THROWS(PreferenceConfig{0.0, 1, 1}.validate());
}

TEST_CASE("siss_loss with importance sampling is unbiased at fixed (x, x', t)") {
  const NoiseSchedule s = test::toy_schedule();
  const Denoiser m = test::small_model(1, 13);
  const int t = 20;
  const double x = 0.6, xr = -0.9, beta = 0.4;
  const double a = std::sqrt(s.alpha_bar[t]), sg = s.sigma[t];

  // Exact two-branch expectation by quadrature over the standard normal eps.
  auto branch = [&](double anchor) {
    const int n = 40001;
    const double lo = -10, h = 20.0 / (n - 1);
    double acc = 0;
    for (int i = 0; i < n; ++i) {
      const double e = lo + i * h;
      const double d = test::scalar_forward(m, {a * anchor + sg * e}, t)[0] - e;
      acc += (i == 0 || i == n - 1 ? 0.5 : 1.0) * d * d * std::exp(-0.5 * e * e);
    }
    return acc * h / std::sqrt(2 * std::numbers::pi);
  };
  const double exact = branch(xr) - (1 + beta) * branch(x);

  // 10^5 mixture draws in 100 batches of 1000 forget rows paired with x'.
  NoisingPolicy pol;
  pol.time = TimeWindowConfig{0.0, t, t + 1, s.T};
  const UnlearnBatch b{Tensor(Shape{1000, 1}, std::vector<double>(1000, x)), Tensor::matrix(1, 1, {xr}), 0, 0};
  Rng rng(99);
  double sum = 0, sum2 = 0;
  const int batches = 100;
  for (int k = 0; k < batches; ++k) {
    Graph g;
    auto p = m.bind(g);
    const double v = value(siss_loss(g, m, p, b, s, SissConfig{0.5, beta, true}, rng, pol));
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / batches;
  const double se = std::sqrt((sum2 / batches - mean * mean) / (batches - 1));
  CHECK(std::abs(mean - exact) < 3 * se);
}
