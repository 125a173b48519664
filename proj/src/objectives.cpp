#include "seldiff/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace seldiff {

namespace {

void require_rows(const Tensor& t, const char* what) {
  if (t.rank() != 2 || t.rows() == 0) {
    throw std::invalid_argument(std::string(what) + " batch is empty");
  }
}

// w_t * scale for each timestep
std::vector<double> weights(const NoiseSchedule& sched, std::span<const int> t, double scale) {
  std::vector<double> c(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) c[i] = sched.loss_weight[t[i]] * scale;
  return c;
}

// Same arithmetic as per_sample_error, on plain tensors.
std::vector<double> row_errors(const Tensor& pred, const Tensor& target) {
  const std::size_t r = pred.rows(), c = pred.cols();
  std::vector<double> e(r);
  const double inv_d = 1.0 / static_cast<double>(c);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = pred[i * c + j] - target[i * c + j];
      s += d * d;
    }
    e[i] = s * inv_d;
  }
  return e;
}

Tensor column(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor(Shape{n, 1}, std::move(v));
}

Tensor one_row(const Tensor& m, std::size_t r) { return m.row(r); }

void put_row(Tensor& dst, std::size_t r, const Tensor& src) {
  std::copy(src.data().begin(), src.data().end(), dst.data().begin() + r * dst.cols());
}

void check_reference(const Denoiser& model, const Denoiser& reference) {
  if (!(model.arch() == reference.arch())) {
    throw std::invalid_argument("reference model architecture differs from the trained model");
  }
}

NoisingPolicy with_geometry(NoisingPolicy p, const UnlearnBatch& batch) {
  p.image_h = batch.image_h;
  p.image_w = batch.image_w;
  return p;
}

}  // namespace

NoisyBatch draw_noisy(const Tensor& x0, const NoiseSchedule& sched, Rng& rng, const NoisingPolicy& policy,
                      bool forget_branch) {
  NoisyBatch nb;
  nb.t.resize(x0.rows());
  for (auto& t : nb.t) t = policy.draw_timestep(sched.T, rng);
  nb.eps = rng.normal_tensor(x0.shape());
  nb.x_t = policy.filter(forward_noise(x0, nb.t, nb.eps, sched), nb.t, forget_branch);
  nb.target = policy.filter_target(nb.eps, nb.t, forget_branch);
  return nb;
}

void SissConfig::validate() const {
  if (!(lambda > 0.0 && lambda < 1.0)) throw std::invalid_argument("siss lambda must lie in (0, 1)");
  if (!(beta_siss >= 0.0)) throw std::invalid_argument("siss beta must be non-negative");
}

void PreferenceConfig::validate() const {
  if (!(beta_pref > 0.0)) throw std::invalid_argument("preference beta must be positive");
  if (!(w_desirable >= 0.0 && w_undesirable >= 0.0)) throw std::invalid_argument("KTO weights must be non-negative");
}

// ---------------------------------------------------------------------------

LossTerms ga_loss(Graph& g, const Denoiser& model, std::span<const Var> params, const UnlearnBatch& batch,
                  const NoiseSchedule& sched, Rng& rng, const NoisingPolicy& policy) {
  require_rows(batch.forget, "forget");
  const NoisingPolicy p = with_geometry(policy, batch);
  NoisyBatch nb = draw_noisy(batch.forget, sched, rng, p, true);
  Var pred = model.forward(g, params, g.constant(nb.x_t), nb.t);
  const double inv_n = 1.0 / static_cast<double>(nb.t.size());
  std::vector<double> coeff = weights(sched, nb.t, inv_n);
  for (double& c : coeff) c = -c;
  LossTerms out;
  out.total = weighted_sum(g, per_sample_error(g, pred, nb.target), coeff);
  out.forget_term = -out.total.value().item();
  out.timesteps = std::move(nb.t);
  return out;
}

LossTerms erasediff_loss(Graph& g, const Denoiser& model, std::span<const Var> params, const UnlearnBatch& batch,
                         const NoiseSchedule& sched, double beta_retain, Rng& rng, const NoisingPolicy& policy) {
  require_rows(batch.forget, "forget");
  require_rows(batch.retain, "retain");
  const NoisingPolicy p = with_geometry(policy, batch);
  NoisyBatch nf = draw_noisy(batch.forget, sched, rng, p, true);
  Tensor eps_prime = p.filter_target(rng.normal_tensor(batch.forget.shape()), nf.t, true);
  NoisyBatch nr = draw_noisy(batch.retain, sched, rng, p, false);

  Var pred_f = model.forward(g, params, g.constant(nf.x_t), nf.t);
  Var pred_r = model.forward(g, params, g.constant(nr.x_t), nr.t);
  Var lf = weighted_sum(g, per_sample_error(g, pred_f, eps_prime), weights(sched, nf.t, 1.0 / nf.t.size()));
  Var lr = weighted_sum(g, per_sample_error(g, pred_r, nr.target), weights(sched, nr.t, 1.0 / nr.t.size()));

  LossTerms out;
  out.total = g.add(lf, g.scale(lr, beta_retain));
  out.forget_term = lf.value().item();
  out.retain_term = lr.value().item();
  out.timesteps = nf.t;
  out.timesteps.insert(out.timesteps.end(), nr.t.begin(), nr.t.end());
  return out;
}

MixtureDraw siss_sample_mixture(const Tensor& x, const Tensor& x_retain, int t, double lambda,
                                const NoiseSchedule& sched, Rng& rng) {
  if (x.shape() != x_retain.shape()) {
    throw ShapeError("siss mixture: forget " + shape_string(x.shape()) + " vs retain " + shape_string(x_retain.shape()));
  }
  const bool forget_branch = rng.bernoulli(lambda);
  Tensor eps = rng.normal_tensor(x.shape());
  return {forward_noise(forget_branch ? x : x_retain, t, eps, sched), forget_branch};
}

SissWeights siss_weights(const Tensor& m_t, const Tensor& x, const Tensor& x_retain, int t, double lambda,
                         const NoiseSchedule& sched, bool importance_sampling) {
  if (!importance_sampling) return {1.0, 1.0};
  sched.check_timestep(t);
  if (m_t.shape() != x.shape() || x.shape() != x_retain.shape()) throw ShapeError("siss_weights: shape mismatch");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("siss_weights: lambda outside [0, 1]");
  const double a = std::sqrt(sched.alpha_bar[t]);
  const double var = 1.0 - sched.alpha_bar[t];
  double df = 0.0, dk = 0.0;
  for (std::size_t i = 0; i < m_t.numel(); ++i) {
    const double ef = m_t[i] - a * x[i];
    const double ek = m_t[i] - a * x_retain[i];
    df += ef * ef;
    dk += ek * ek;
  }
  // Shared Gaussian normaliser cancels in both ratios.
  const double lq_f = -df / (2.0 * var);
  const double lq_k = -dk / (2.0 * var);
  const double af = std::log(lambda) + lq_f;
  const double ak = std::log1p(-lambda) + lq_k;
  const double hi = std::max(af, ak);
  const double log_mix = hi + std::log(std::exp(af - hi) + std::exp(ak - hi));
  SissWeights w{std::exp(lq_k - log_mix), std::exp(lq_f - log_mix)};
  if (!std::isfinite(w.w_keep) || !std::isfinite(w.w_forget)) {
    throw NumericError("siss_weights: non-finite importance weight");
  }
  return w;
}

LossTerms siss_loss(Graph& g, const Denoiser& model, std::span<const Var> params, const UnlearnBatch& batch,
                    const NoiseSchedule& sched, const SissConfig& cfg, Rng& rng, const NoisingPolicy& policy) {
  cfg.validate();
  require_rows(batch.forget, "forget");
  require_rows(batch.retain, "retain");
  const NoisingPolicy p = with_geometry(policy, batch);
  const std::size_t n = batch.forget.rows();
  const std::size_t d = batch.forget.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<int> ts(n);
  LossTerms out;

  if (cfg.importance_sampling) {
    Tensor inputs(Shape{n, d}), eps_keep(Shape{n, d}), eps_forget(Shape{n, d});
    std::vector<double> ck(n), cf(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = rng.uniform_index(batch.retain.rows());
      const Tensor x = one_row(batch.forget, i);
      const Tensor xr = one_row(batch.retain, j);
      const int t = p.draw_timestep(sched.T, rng);
      ts[i] = t;
      MixtureDraw m = siss_sample_mixture(x, xr, t, cfg.lambda, sched, rng);
      const SissWeights w = siss_weights(m.m_t, x, xr, t, cfg.lambda, sched, true);
      const double a = std::sqrt(sched.alpha_bar[t]);
      const double s = sched.sigma[t];
      Tensor ek(Shape{1, d}), ef(Shape{1, d});
      for (std::size_t k = 0; k < d; ++k) {
        ek[k] = (m.m_t[k] - a * xr[k]) / s;
        ef[k] = (m.m_t[k] - a * x[k]) / s;
      }
      const int tt[1] = {t};
      put_row(inputs, i, p.filter(m.m_t, tt, m.forget_branch));
      put_row(eps_keep, i, p.filter_target(ek, tt, m.forget_branch));
      put_row(eps_forget, i, p.filter_target(ef, tt, m.forget_branch));
      ck[i] = sched.loss_weight[t] * w.w_keep * inv_n;
      cf[i] = -(1.0 + cfg.beta_siss) * sched.loss_weight[t] * w.w_forget * inv_n;
    }
    Var pred = model.forward(g, params, g.constant(std::move(inputs)), ts);
    Var keep = weighted_sum(g, per_sample_error(g, pred, eps_keep), ck);
    Var forget = weighted_sum(g, per_sample_error(g, pred, eps_forget), cf);
    out.total = g.add(keep, forget);
    out.retain_term = keep.value().item();
    out.forget_term = -forget.value().item() / (1.0 + cfg.beta_siss);
  } else {
    Tensor in_keep(Shape{n, d}), in_forget(Shape{n, d}), tgt_keep(Shape{n, d}), tgt_forget(Shape{n, d});
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = rng.uniform_index(batch.retain.rows());
      const Tensor x = one_row(batch.forget, i);
      const Tensor xr = one_row(batch.retain, j);
      const int t = p.draw_timestep(sched.T, rng);
      ts[i] = t;
      const Tensor ek = rng.normal_tensor(Shape{1, d});
      const Tensor ef = rng.normal_tensor(Shape{1, d});
      const int tt[1] = {t};
      put_row(in_keep, i, p.filter(forward_noise(xr, t, ek, sched), tt, false));
      put_row(in_forget, i, p.filter(forward_noise(x, t, ef, sched), tt, true));
      put_row(tgt_keep, i, p.filter_target(ek, tt, false));
      put_row(tgt_forget, i, p.filter_target(ef, tt, true));
    }
    std::vector<double> ck = weights(sched, ts, inv_n);
    std::vector<double> cf = weights(sched, ts, -(1.0 + cfg.beta_siss) * inv_n);
    Var pk = model.forward(g, params, g.constant(std::move(in_keep)), ts);
    Var pf = model.forward(g, params, g.constant(std::move(in_forget)), ts);
    Var keep = weighted_sum(g, per_sample_error(g, pk, tgt_keep), ck);
    Var forget = weighted_sum(g, per_sample_error(g, pf, tgt_forget), cf);
    out.total = g.add(keep, forget);
    out.retain_term = keep.value().item();
    out.forget_term = -forget.value().item() / (1.0 + cfg.beta_siss);
  }
  out.timesteps = std::move(ts);
  return out;
}

LossTerms dpo_forget_loss(Graph& g, const Denoiser& model, std::span<const Var> params, const UnlearnBatch& batch,
                          const NoiseSchedule& sched, const Denoiser& reference, const PreferenceConfig& cfg,
                          Rng& rng, const NoisingPolicy& policy) {
  cfg.validate();
  check_reference(model, reference);
  require_rows(batch.forget, "forget");
  require_rows(batch.retain, "retain");
  const NoisingPolicy p = with_geometry(policy, batch);
  const std::size_t n = batch.forget.rows();
  const std::size_t d = batch.forget.cols();

  std::vector<int> ts(n);
  Tensor in_f(Shape{n, d}), in_r(Shape{n, d}), tgt_f(Shape{n, d}), tgt_r(Shape{n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = rng.uniform_index(batch.retain.rows());
    const int t = p.draw_timestep(sched.T, rng);
    ts[i] = t;
    const Tensor eps = rng.normal_tensor(Shape{1, d});
    const int tt[1] = {t};
    put_row(in_f, i, p.filter(forward_noise(one_row(batch.forget, i), t, eps, sched), tt, true));
    put_row(in_r, i, p.filter(forward_noise(one_row(batch.retain, j), t, eps, sched), tt, false));
    put_row(tgt_f, i, p.filter_target(eps, tt, true));
    put_row(tgt_r, i, p.filter_target(eps, tt, false));
  }
  const std::vector<double> w = weights(sched, ts, 1.0);
  const std::vector<double> ref_f = row_errors(reference.predict(in_f, ts), tgt_f);
  const std::vector<double> ref_r = row_errors(reference.predict(in_r, ts), tgt_r);

  Var ef = per_sample_error(g, model.forward(g, params, g.constant(in_f), ts), tgt_f);
  Var er = per_sample_error(g, model.forward(g, params, g.constant(in_r), ts), tgt_r);
  Var wcol = g.constant(column(w));
  // margin = (e_theta(f) - e_ref(f)) - (e_theta(r) - e_ref(r)), all w_t-weighted
  std::vector<double> ref_margin(n);
  for (std::size_t i = 0; i < n; ++i) ref_margin[i] = w[i] * (ref_f[i] - ref_r[i]);
  Var margin = g.sub(g.mul(g.sub(ef, er), wcol), g.constant(column(ref_margin)));
  // -log sigmoid(beta * margin) = softplus(-beta * margin)
  Var total = g.mean(g.softplus(g.scale(margin, -cfg.beta_pref)));

  LossTerms out;
  out.total = total;
  double sf = 0.0, sr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sf += ef.value()[i];
    sr += er.value()[i];
  }
  out.forget_term = sf / n;
  out.retain_term = sr / n;
  out.timesteps = std::move(ts);
  return out;
}

LossTerms kto_forget_loss(Graph& g, const Denoiser& model, std::span<const Var> params, const UnlearnBatch& batch,
                          const NoiseSchedule& sched, const Denoiser& reference, const PreferenceConfig& cfg,
                          Rng& rng, const NoisingPolicy& policy) {
  cfg.validate();
  check_reference(model, reference);
  require_rows(batch.forget, "forget");
  const NoisingPolicy p = with_geometry(policy, batch);
  const bool has_retain = batch.retain.rank() == 2 && batch.retain.rows() > 0;

  NoisyBatch nf = draw_noisy(batch.forget, sched, rng, p, true);
  NoisyBatch nr;
  if (has_retain) nr = draw_noisy(batch.retain, sched, rng, p, false);

  // reward rho = -beta * w_t * (e_theta - e_ref)
  auto rewards = [&](const NoisyBatch& nb, std::vector<double>& ref_w) {
    const std::vector<double> w = weights(sched, nb.t, 1.0);
    const std::vector<double> er = row_errors(reference.predict(nb.x_t, nb.t), nb.target);
    ref_w.resize(er.size());
    for (std::size_t i = 0; i < er.size(); ++i) ref_w[i] = w[i] * er[i];
    Var e = per_sample_error(g, model.forward(g, params, g.constant(nb.x_t), nb.t), nb.target);
    return g.scale(g.sub(g.mul(e, g.constant(column(w))), g.constant(column(ref_w))), -cfg.beta_pref);
  };

  std::vector<double> ref_f, ref_r;
  Var rho_f = rewards(nf, ref_f);
  std::optional<Var> rho_r;
  if (has_retain) rho_r = rewards(nr, ref_r);

  double mean_rho = 0.0;
  std::size_t count = 0;
  for (double v : rho_f.value().data()) mean_rho += v, ++count;
  if (rho_r)
    for (double v : rho_r->value().data()) mean_rho += v, ++count;
  const double z = std::max(0.0, mean_rho / static_cast<double>(count));

  // sigmoid(a) = (1 + tanh(a / 2)) / 2
  auto half_tanh_mean = [&](Var rho) {
    Var shifted = g.sub(rho, g.constant(Tensor::scalar(z)));
    return g.mean(g.tanh(g.scale(shifted, 0.5)));
  };

  LossTerms out;
  Var undesirable = g.add(g.scale(half_tanh_mean(rho_f), 0.5 * cfg.w_undesirable),
                          g.constant(Tensor::scalar(0.5 * cfg.w_undesirable)));
  out.forget_term = undesirable.value().item();
  out.total = undesirable;
  if (rho_r) {
    Var desirable = g.add(g.scale(half_tanh_mean(*rho_r), -0.5 * cfg.w_desirable),
                          g.constant(Tensor::scalar(0.5 * cfg.w_desirable)));
    out.retain_term = desirable.value().item();
    out.total = g.add(undesirable, desirable);
  }
  out.timesteps = nf.t;
  out.timesteps.insert(out.timesteps.end(), nr.t.begin(), nr.t.end());
  return out;
}

// ---------------------------------------------------------------------------

LossFn selective_wrap(PolicyObjective objective, const TimeWindowConfig& time_cfg,
                      const FrequencyFilterConfig& freq_cfg, FilterTarget apply_filter_to, TargetMode target_mode) {
  time_cfg.validate();
  freq_cfg.validate();
  NoisingPolicy policy;
  policy.time = time_cfg;
  policy.freq = freq_cfg;
  policy.apply_to = apply_filter_to;
  policy.target_mode = target_mode;
  return [objective = std::move(objective), policy](Graph& g, const Denoiser& model, std::span<const Var> params,
                                                    const UnlearnBatch& batch, const NoiseSchedule& sched, Rng& rng) {
    if (policy.time->T != sched.T) {
      throw std::invalid_argument("time window built for T=" + std::to_string(policy.time->T) +
                                  " but schedule has T=" + std::to_string(sched.T));
    }
    return objective(g, model, params, batch, sched, rng, policy);
  };
}

LossFn unwrapped(PolicyObjective objective) {
  return [objective = std::move(objective)](Graph& g, const Denoiser& model, std::span<const Var> params,
                                            const UnlearnBatch& batch, const NoiseSchedule& sched, Rng& rng) {
    return objective(g, model, params, batch, sched, rng, NoisingPolicy{});
  };
}

std::string to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::ga: return "ga";
    case ObjectiveKind::erasediff: return "erasediff";
    case ObjectiveKind::siss: return "siss";
    case ObjectiveKind::dpo: return "dpo";
    case ObjectiveKind::kto: return "kto";
  }
  return "?";
}

ObjectiveKind objective_kind_from_string(const std::string& s) {
  for (auto k : {ObjectiveKind::ga, ObjectiveKind::erasediff, ObjectiveKind::siss, ObjectiveKind::dpo, ObjectiveKind::kto}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown objective '" + s + "'");
}

LossFn UnlearnRun::loss_fn() const {
  const ObjectiveConfig oc = objective;
  PolicyObjective obj;
  switch (oc.kind) {
    case ObjectiveKind::ga:
      obj = [oc](Graph& g, const Denoiser& m, std::span<const Var> ps, const UnlearnBatch& b, const NoiseSchedule& s,
                 Rng& rng, const NoisingPolicy& p) {
        LossTerms terms = ga_loss(g, m, ps, b, s, rng, p);
        if (oc.retain_weight > 0.0) {
          require_rows(b.retain, "retain");
          NoisingPolicy pr = with_geometry(p, b);
          NoisyBatch nr = draw_noisy(b.retain, s, rng, pr, false);
          Var pred = m.forward(g, ps, g.constant(nr.x_t), nr.t);
          Var lr = weighted_sum(g, per_sample_error(g, pred, nr.target), weights(s, nr.t, 1.0 / nr.t.size()));
          terms.total = g.add(terms.total, g.scale(lr, oc.retain_weight));
          terms.retain_term = lr.value().item();
          terms.timesteps.insert(terms.timesteps.end(), nr.t.begin(), nr.t.end());
        }
        return terms;
      };
      break;
    case ObjectiveKind::erasediff:
      obj = [oc](Graph& g, const Denoiser& m, std::span<const Var> ps, const UnlearnBatch& b, const NoiseSchedule& s,
                 Rng& rng, const NoisingPolicy& p) { return erasediff_loss(g, m, ps, b, s, oc.beta_retain, rng, p); };
      break;
    case ObjectiveKind::siss:
      obj = [oc](Graph& g, const Denoiser& m, std::span<const Var> ps, const UnlearnBatch& b, const NoiseSchedule& s,
                 Rng& rng, const NoisingPolicy& p) { return siss_loss(g, m, ps, b, s, oc.siss, rng, p); };
      break;
    case ObjectiveKind::dpo:
    case ObjectiveKind::kto: {
      if (!reference) throw std::invalid_argument(to_string(oc.kind) + " objective needs a reference model");
      const Denoiser ref = *reference;
      const bool dpo = oc.kind == ObjectiveKind::dpo;
      obj = [oc, ref, dpo](Graph& g, const Denoiser& m, std::span<const Var> ps, const UnlearnBatch& b,
                           const NoiseSchedule& s, Rng& rng, const NoisingPolicy& p) {
        return dpo ? dpo_forget_loss(g, m, ps, b, s, ref, oc.pref, rng, p)
                   : kto_forget_loss(g, m, ps, b, s, ref, oc.pref, rng, p);
      };
      break;
    }
  }
  const NoisingPolicy policy = this->policy;
  return [obj, policy](Graph& g, const Denoiser& m, std::span<const Var> ps, const UnlearnBatch& b,
                       const NoiseSchedule& s, Rng& rng) { return obj(g, m, ps, b, s, rng, policy); };
}

StepRecord unlearn_step(UnlearnRun& run, Rng& rng) {
  const long step = run.step;
  UnlearnBatch batch;
  batch.image_h = run.image_h;
  batch.image_w = run.image_w;
  {
    const std::size_t nf = run.forget.rows();
    if (run.forget_batch == 0 || run.forget_batch >= nf) {
      batch.forget = run.forget;
    } else {
      std::vector<std::size_t> idx(run.forget_batch);
      for (auto& i : idx) i = rng.uniform_index(nf);
      batch.forget = select_rows(run.forget, idx);
    }
    const std::size_t nr = run.retain.rank() == 2 ? run.retain.rows() : 0;
    if (nr > 0) {
      const std::size_t m = run.retain_batch == 0 ? nr : run.retain_batch;
      std::vector<std::size_t> idx(m);
      for (auto& i : idx) i = rng.uniform_index(nr);
      batch.retain = select_rows(run.retain, idx);
    }
  }

  StepRecord rec;
  rec.step = step;
  Gradients grads;
  try {
    const LossFn f = run.loss_fn();
    Graph g;
    const std::vector<Var> params = run.model.bind(g);
    LossTerms terms = f(g, run.model, params, batch, run.sched, rng);
    rec.loss = terms.total.value().item();
    rec.forget_term = terms.forget_term;
    rec.retain_term = terms.retain_term;
    rec.timesteps = std::move(terms.timesteps);
    if (!std::isfinite(rec.loss)) throw NumericError("non-finite loss");
    grads = g.backward(terms.total);
    for (const auto& gr : grads)
      if (!gr.all_finite()) throw NumericError("non-finite gradient");
  } catch (const NumericError& e) {
    throw StepAborted("unlearning step " + std::to_string(step) + " aborted: " + e.what());
  }
  rec.grad_norm = clip_global_norm(grads, run.clip_norm);
  run.optimizer.step(run.model.params(), grads);
  ++run.step;
  run.history.push_back(rec);
  return rec;
}

}  // namespace seldiff
