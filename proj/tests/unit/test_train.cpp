#include "doctest.h"
#include "snntk/gradcheck.hpp"
#include "snntk/train.hpp"

#include <cmath>

using namespace snntk;

namespace {

SnnConfig config(Eigen::Index m, Eigen::Index d, double sigma0, ActivationKind act, int s) {
  SnnConfig cfg;
  cfg.m = m;
  cfg.d = d;
  cfg.sigma0 = sigma0;
  cfg.activation = Activation{act};
  cfg.mc_samples = s;
  return cfg;
}

}  // namespace

TEST_CASE("loss_mse") {
  const SnnConfig cfg = config(64, 3, 0.3, ActivationKind::kTanh, 3);
  Dataset ds = synth_dataset(4, 3, 1);
  const SnnParams p = init_params(cfg, RngStream(2));
  const RngStream s(3);

  Dataset fitted = ds;
  fitted.targets = batch_outputs(p, cfg, ds.encoded, s);
  CHECK(loss_mse(p, cfg, fitted, s) == 0.0);

  WeightSet zero = p.weights;
  zero.dec.setZero();
  CHECK(loss_mse(SnnParams::from_weights(zero), cfg, ds, s) == doctest::Approx(0.5).epsilon(1e-14));

  // Recompute from raw forward samples: each row averages f(x, ±ζ_s) with
  // ζ_s drawn from the row's stream.
  double total = 0.0;
  for (Eigen::Index i = 0; i < 4; ++i) {
    const Vector x = ds.encoded.row(i).transpose();
    Vector mean = Vector::Zero(3);
    for (int k = 0; k < cfg.mc_samples; ++k) {
      const Matrix zeta = zeta_draw(cfg, s.child(i), k);
      mean += forward_sample(p, cfg, x, zeta) + forward_sample(p, cfg, x, -zeta);
    }
    mean /= 2.0 * cfg.mc_samples;
    total += (mean - ds.targets.row(i).transpose()).squaredNorm();
  }
  CHECK(loss_mse(p, cfg, ds, s) == doctest::Approx(total / 8.0).epsilon(1e-13));
}

TEST_CASE("kl_surrogate") {
  const SnnConfig cfg = config(8, 3, 0.2, ActivationKind::kTanh, 1);
  const SnnParams p0 = init_params(cfg, RngStream(4));
  CHECK(kl_surrogate(p0, 0.5) == 0.0);
  Matrix e = gaussian_draw(RngStream(5), 8, 3);
  e *= 2.0 / e.norm();
  WeightSet w = p0.weights;
  w.mu += e;
  const SnnParams p(w, p0.initial());
  CHECK(kl_surrogate(p, 0.5) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(kl_surrogate(p, 0.5) > 0.0);

  // Gradient β (W_μ - W_μ(0)) against central differences.
  const double h = 1e-6;
  double worst = 0.0;
  for (Eigen::Index c = 0; c < w.mu.size(); ++c) {
    WeightSet plus = w, minus = w;
    plus.mu.data()[c] += h;
    minus.mu.data()[c] -= h;
    const double fd = (kl_surrogate(SnnParams(plus, p0.initial()), 0.5) -
                       kl_surrogate(SnnParams(minus, p0.initial()), 0.5)) /
                      (2 * h);
    worst = std::max(worst, std::abs(fd - 0.5 * e.data()[c]));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("exact_gaussian_kl closed cases") {
  const SnnConfig cfg = config(3, 2, 0.5, ActivationKind::kTanh, 1);
  const SnnParams p0 = init_params(cfg, RngStream(6));
  Dataset ds = synth_dataset(2, 2, 7);
  CHECK(exact_gaussian_kl(p0, ds) == 0.0);

  // One sample, mean shift δ on unit 0 only.
  Dataset one = ds;
  one.encoded = ds.encoded.topRows(1);
  const Vector x = one.encoded.row(0).transpose();
  const double delta = 0.3;
  WeightSet w = p0.weights;
  w.mu.row(0) += delta * x.transpose();
  const double v = 0.25 * x.squaredNorm();
  CHECK(exact_gaussian_kl(SnnParams(w, p0.initial()), one) ==
        doctest::Approx(delta * delta / (2 * v)).epsilon(1e-12));

  WeightSet zero_sigma = p0.weights;
  zero_sigma.sigma.setZero();
  CHECK_THROWS_AS(exact_gaussian_kl(SnnParams::from_weights(zero_sigma), ds), NumericError);
}

TEST_CASE("exact_gaussian_kl matches a Monte Carlo log-ratio") {
  const SnnConfig cfg = config(3, 2, 0.5, ActivationKind::kTanh, 1);
  const SnnParams p0 = init_params(cfg, RngStream(8));
  const Dataset ds = synth_dataset(2, 2, 9);
  WeightSet w = p0.weights;
  w.mu += 0.3 * gaussian_draw(RngStream(10), 3, 2);
  w.sigma += 0.1 * gaussian_draw(RngStream(11), 3, 2);
  const SnnParams p(w, p0.initial());

  const int samples = 1000000;
  std::vector<double> g(samples);
  double estimate = 0.0;
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    const Vector x = ds.encoded.row(i).transpose();
    const Vector m1 = w.mu * x, m0 = p0.weights.mu * x;
    const Vector v1 = w.sigma.cwiseAbs2() * x.cwiseAbs2();
    const Vector v0 = p0.weights.sigma.cwiseAbs2() * x.cwiseAbs2();
    for (Eigen::Index r = 0; r < 3; ++r) {
      RngStream(12).child(std::uint64_t(i * 3 + r)).fill_normals(g);
      double acc = 0.0;
      for (double gs : g) {
        const double z = m1(r) + std::sqrt(v1(r)) * gs;
        const double log_p1 = -0.5 * std::log(v1(r)) - 0.5 * (z - m1(r)) * (z - m1(r)) / v1(r);
        const double log_p0 = -0.5 * std::log(v0(r)) - 0.5 * (z - m0(r)) * (z - m0(r)) / v0(r);
        acc += log_p1 - log_p0;
      }
      estimate += acc / samples;
    }
  }
  const double exact = exact_gaussian_kl(p, ds);
  INFO("exact " << exact << " mc " << estimate);
  CHECK(std::abs(exact - estimate) < 1e-2);
}

TEST_CASE("loss_gradient closed forms") {
  const SnnConfig cfg = config(16, 4, 0.0, ActivationKind::kIdentity, 2);
  const Dataset ds = synth_dataset(5, 4, 13);
  const SnnParams p = init_params(cfg, RngStream(14));
  const RngStream s(15);
  const ObjectiveSpec mse{};

  Dataset fitted = ds;
  fitted.targets = batch_outputs(p, cfg, ds.encoded, s);
  const GradParams zero = loss_gradient(p, cfg, fitted, mse, s);
  for (Group g : kAllGroups) CHECK(zero[g].isZero(0.0));

  // f(X) = X W_μ^T W_d / √m, R = f(X) - Y.
  const Matrix& wm = p.weights.mu;
  const Matrix& wd = p.weights.dec;
  const double c = 1.0 / (5.0 * 4.0);
  const Matrix r = ds.encoded * wm.transpose() * wd / 4.0 - ds.targets;
  const Matrix g_mu = c * wd * r.transpose() * ds.encoded;
  const Matrix g_d = c * wm * ds.encoded.transpose() * r;
  const GradParams g = loss_gradient(p, cfg, ds, mse, s);
  CHECK((g.mu - g_mu).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((g.dec - g_d).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(g.sigma.isZero(0.0));
}

TEST_CASE("output_gradients contracted with residuals equal loss_gradient") {
  const SnnConfig cfg = config(32, 3, 0.3, ActivationKind::kSoftplus, 3);
  const Dataset ds = synth_dataset(4, 3, 16);
  const SnnParams p = init_params(cfg, RngStream(17));
  const RngStream s(18);
  const Matrix r = batch_outputs(p, cfg, ds.encoded, s) - ds.targets;
  GradParams sum{Matrix::Zero(32, 3), Matrix::Zero(32, 3), Matrix::Zero(32, 3)};
  for (Eigen::Index i = 0; i < 4; ++i) {
    const OutputJacobian j = output_gradients(p, cfg, ds.encoded.row(i).transpose(), s.child(i));
    for (Eigen::Index k = 0; k < 3; ++k) {
      sum.mu += r(i, k) * j.mu[k] / 4.0;
      sum.sigma += r(i, k) * j.sigma[k] / 4.0;
      sum.dec += r(i, k) * j.dec[k] / 4.0;
    }
  }
  const GradParams g = loss_gradient(p, cfg, ds, ObjectiveSpec{}, s);
  for (Group grp : kAllGroups) CHECK((g[grp] - sum[grp]).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("finite_diff_check") {
  const Dataset ds = synth_dataset(6, 4, 19);
  const RngStream s(20);
  SUBCASE("identity") {
    const SnnConfig cfg = config(64, 4, 0.0, ActivationKind::kIdentity, 2);
    const auto r = finite_diff_check(init_params(cfg, RngStream(21)), cfg, ds, {}, 1e-4, s);
    CHECK(r.max_relative_error < 1e-9);
  }
  SUBCASE("tanh mse") {
    const SnnConfig cfg = config(128, 4, 0.3, ActivationKind::kTanh, 4);
    const auto r = finite_diff_check(init_params(cfg, RngStream(22)), cfg, ds, {}, 1e-4, s);
    CHECK(r.coordinates >= 3 * 8);
    CHECK(r.max_relative_error < 1e-5);
  }
  SUBCASE("tanh kl surrogate and exact kl") {
    const SnnConfig cfg = config(128, 4, 0.3, ActivationKind::kTanh, 4);
    SnnParams p0 = init_params(cfg, RngStream(23));
    WeightSet w = p0.weights;
    w.mu += 0.05 * gaussian_draw(RngStream(24), 128, 4);
    w.sigma += 0.05 * gaussian_draw(RngStream(25), 128, 4);
    const SnnParams p(w, p0.initial());
    for (ObjectiveKind kind : {ObjectiveKind::kMsePlusKlSurrogate, ObjectiveKind::kMsePlusExactKl}) {
      const auto r = finite_diff_check(p, cfg, ds, {kind, 0.1}, 1e-4, s);
      INFO(objective_kind_name(kind));
      CHECK(r.max_relative_error < 1e-5);
    }
  }
  CHECK_THROWS(finite_diff_check(SnnParams{}, SnnConfig{}, ds, {}, 1.0, s));
}

TEST_CASE("train edge cases") {
  const SnnConfig cfg = config(32, 3, 0.2, ActivationKind::kTanh, 2);
  const Dataset ds = synth_dataset(4, 3, 26);
  TrainConfig tcfg;
  tcfg.eta = 0.0;
  tcfg.steps = 5;
  tcfg.fixed_draws = true;
  SnnParams p = init_params(cfg, RngStream(27));
  const WeightSet before = p.weights;
  const TrainRecord rec = train(p, cfg, ds, {}, tcfg, RngStream(28));
  for (Group g : kAllGroups) CHECK(p.weights[g] == before[g]);
  CHECK(rec.loss_mse.size() == 6);
  for (double l : rec.loss_mse) CHECK(l == rec.loss_mse.front());

  tcfg.freeze = {true, true, true};
  CHECK_THROWS(tcfg.validate());
  CHECK_THROWS(train(p, cfg, ds, {}, tcfg, RngStream(28)));

  tcfg.freeze = {false, true, true};
  tcfg.eta = 0.5;
  tcfg.fixed_draws = false;
  SnnParams q = init_params(cfg, RngStream(27));
  train(q, cfg, ds, {}, tcfg, RngStream(29));
  CHECK(q.weights.sigma == before.sigma);
  CHECK(q.weights.dec == before.dec);
  CHECK_FALSE(q.weights.mu == before.mu);

  tcfg.freeze = {false, false, false};
  tcfg.eta = 1e12;
  SnnParams r = init_params(config(32, 3, 0.2, ActivationKind::kSoftplus, 2), RngStream(27));
  const TrainRecord bad =
      train(r, config(32, 3, 0.2, ActivationKind::kSoftplus, 2), ds, {}, tcfg, RngStream(30));
  CHECK(bad.diverged);
  for (double l : bad.loss_mse) CHECK(std::isfinite(l));
}

TEST_CASE("beta zero surrogate equals mse") {
  const SnnConfig cfg = config(32, 3, 0.2, ActivationKind::kTanh, 2);
  const Dataset ds = synth_dataset(4, 3, 31);
  TrainConfig tcfg;
  tcfg.eta = 0.3;
  tcfg.steps = 10;
  SnnParams a = init_params(cfg, RngStream(32)), b = a;
  const TrainRecord ra = train(a, cfg, ds, {}, tcfg, RngStream(33));
  const TrainRecord rb =
      train(b, cfg, ds, {ObjectiveKind::kMsePlusKlSurrogate, 0.0}, tcfg, RngStream(33));
  CHECK(ra.loss_mse == rb.loss_mse);
  CHECK(ra.loss_total == rb.loss_total);
}

TEST_CASE("linear trainer follows the closed-form recursion") {
  const Eigen::Index m = 20, d = 4, n = 6;
  const SnnConfig cfg = config(m, d, 0.0, ActivationKind::kIdentity, 2);
  const Dataset ds = synth_dataset(n, d, 34);
  TrainConfig tcfg;
  tcfg.eta = 0.2;
  tcfg.steps = 200;
  SnnParams p = init_params(cfg, RngStream(35));
  Matrix wm = p.weights.mu, wd = p.weights.dec;
  const TrainRecord rec = train(p, cfg, ds, {}, tcfg, RngStream(36));

  const double sm = std::sqrt(double(m));
  const Matrix& x = ds.encoded;
  double worst = 0.0;
  for (int step = 0; step <= tcfg.steps; ++step) {
    const Matrix r = x * wm.transpose() * wd / sm - ds.targets;
    const double loss = r.squaredNorm() / (2.0 * n);
    worst = std::max(worst, std::abs(loss - rec.loss_mse[std::size_t(step)]));
    const Matrix g_mu = wd * r.transpose() * x / (n * sm);
    const Matrix g_d = wm * x.transpose() * r / (n * sm);
    wm -= tcfg.eta * g_mu;
    wd -= tcfg.eta * g_d;
  }
  CHECK(worst < 1e-8);
  CHECK(rec.loss_mse.back() < rec.loss_mse.front());
}

TEST_CASE("convergence_bound_report") {
  TrainRecord rec;
  rec.times = {0, 1, 2, 3};
  rec.loss_mse = {1.0, 0.8, 0.8, 0.5};
  const BoundReport flat = convergence_bound_report(rec, 4, 1.0, 0.0);
  CHECK(flat.violations == 0);
  CHECK(flat.checked == 4);
  const BoundReport tight = convergence_bound_report(rec, 4, 1.0, 4.0);
  CHECK(tight.violations == 3);
  CHECK(tight.max_excess == doctest::Approx(0.5 * std::exp(3.0)));
}

TEST_CASE("loss-rate identity") {
  const Dataset ds = synth_dataset(8, 4, 37);
  SUBCASE("zero residual") {
    const SnnConfig cfg = config(64, 4, 0.2, ActivationKind::kTanh, 2);
    const SnnParams p = init_params(cfg, RngStream(38));
    Dataset fitted = ds;
    fitted.targets = batch_outputs(p, cfg, ds.encoded, RngStream(39));
    const LossRateCheck c = loss_rate_identity_check(p, cfg, fitted, RngStream(39));
    CHECK(c.predicted == 0.0);
    CHECK(c.measured == 0.0);
  }
  SUBCASE("identity activations") {
    const SnnConfig cfg = config(64, 4, 0.0, ActivationKind::kIdentity, 2);
    const LossRateCheck c =
        loss_rate_identity_check(init_params(cfg, RngStream(40)), cfg, ds, RngStream(41));
    CHECK(c.relative_error < 1e-10);
  }
  SUBCASE("tanh") {
    const SnnConfig cfg = config(1024, 4, 0.2, ActivationKind::kTanh, 4);
    const LossRateCheck c =
        loss_rate_identity_check(init_params(cfg, RngStream(42)), cfg, ds, RngStream(43));
    CHECK(c.predicted < 0.0);
    CHECK(c.relative_error < 1e-2);
  }
}

TEST_CASE("weight_drift_report") {
  TrainRecord untrained;
  untrained.drift.push_back({});
  const DriftTable two = weight_drift_report({{8, untrained}, {16, untrained}});
  CHECK(two.rows.size() == 2);
  for (const auto& s : two.slopes) CHECK_FALSE(s.has_value());
  const DriftTable three = weight_drift_report({{8, untrained}, {16, untrained}, {32, untrained}});
  for (const DriftRow& r : three.rows)
    for (double v : r.relative) CHECK(v == 0.0);

  TrainRecord a, b, c;
  for (auto [rec, v] : {std::pair{&a, 1.0}, {&b, 0.5}, {&c, 0.25}}) {
    DriftPoint dp;
    dp.relative = {v, v, v};
    rec->drift.push_back(dp);
  }
  const DriftTable fit = weight_drift_report({{4, a}, {16, b}, {64, c}});
  CHECK(fit.slopes[0].value() == doctest::Approx(-0.5));
}

TEST_CASE("drift slope is stable under longer training") {
  const Dataset ds = synth_dataset(8, 4, 44);
  auto slope_at = [&](int steps) {
    std::vector<std::pair<Eigen::Index, TrainRecord>> runs;
    for (Eigen::Index m : {128, 256, 512, 1024}) {
      const SnnConfig cfg = config(m, 4, 0.1, ActivationKind::kTanh, 2);
      SnnParams p = init_params(cfg, RngStream(45).child(std::uint64_t(m)));
      TrainConfig tcfg;
      tcfg.eta = 0.5;
      tcfg.steps = steps;
      tcfg.record_every = steps;
      runs.emplace_back(m, train(p, cfg, ds, {}, tcfg, RngStream(46)));
    }
    return weight_drift_report(runs);
  };
  const DriftTable short_run = slope_at(40);
  const DriftTable long_run = slope_at(80);
  for (Group g : {Group::kMu, Group::kDecoder}) {
    const auto idx = std::size_t(g);
    CHECK(long_run.rows.back().relative[idx] > short_run.rows.back().relative[idx]);
    CHECK(std::abs(*long_run.slopes[idx] - *short_run.slopes[idx]) < 0.1);
    CHECK(*short_run.slopes[idx] == doctest::Approx(-0.5).epsilon(0.4));
  }
}
