#include <doctest.h>

#include <cmath>
#include <numbers>

#include "vardlab/so3flow.hpp"

using namespace vardlab;
using namespace vardlab::so3;

namespace {

constexpr double kPi = std::numbers::pi;

double max_entry_diff(const Rot3& a, const Rot3& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < 9; ++i)
    m = std::max(m, std::abs(a.m[i] - b.m[i]));
  return m;
}

Vec3 random_axis_angle(Rng& rng, double max_angle) {
  Vec3 w{rng.gaussian(), rng.gaussian(), rng.gaussian()};
  const double n = w.norm();
  const double angle = rng.uniform(1e-6, max_angle);
  return (angle / n) * w;
}

}  // namespace

TEST_SUITE_BEGIN("so3");

TEST_CASE("exp map: pinned example and small-angle branch") {
  Rot3 R = exp_map(Vec3{{0.0, 0.0, kPi / 2.0}});
  CHECK(R.at(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(R.at(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(R.at(2, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(max_entry_diff(R, Rot3::rot_z(kPi / 2.0)) < 1e-12);
  CHECK(R.is_valid());

  CHECK(max_entry_diff(exp_map(Vec3{}), Rot3::identity()) == 0.0);

  // Taylor branch agrees with the log inverse at tiny angles
  Vec3 tiny{{1e-5, -2e-5, 0.5e-5}};
  Vec3 back = log_map(exp_map(tiny));
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(back[i] == doctest::Approx(tiny[i]).epsilon(1e-8));
}

TEST_CASE("log map: pinned example, round trips, near-pi refusal") {
  Vec3 w = log_map(Rot3::rot_z(0.3));
  CHECK(w[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(w[2] == doctest::Approx(0.3).epsilon(1e-12));

  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    Rot3 R = sample_uniform_so3(rng);
    if (geodesic_distance(Rot3::identity(), R) > kPi - 1e-3) continue;
    CHECK(max_entry_diff(exp_map(log_map(R)), R) < 1e-9);
  }
  for (int i = 0; i < 200; ++i) {
    Vec3 v = random_axis_angle(rng, kPi - 0.1);
    Vec3 back = log_map(exp_map(v));
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(std::abs(back[j] - v[j]) < 1e-9);
    // exp(-v) is the transpose of exp(v)
    CHECK(max_entry_diff(exp_map(-1.0 * v), exp_map(v).transpose()) < 1e-12);
  }

  CHECK_THROWS(log_map(Rot3::rot_z(kPi)));
  CHECK_THROWS(log_map(Rot3::rot_x(kPi - 1e-8)));
}

TEST_CASE("geodesics: endpoints, midpoint, metric properties") {
  Rot3 R1 = Rot3::rot_z(kPi / 4.0);
  CHECK(max_entry_diff(geodesic(Rot3::identity(), R1, 0.0),
                       Rot3::identity()) < 1e-12);
  CHECK(max_entry_diff(geodesic(Rot3::identity(), R1, 1.0), R1) < 1e-12);
  CHECK(max_entry_diff(geodesic(Rot3::identity(), R1, 0.5),
                       Rot3::rot_z(kPi / 8.0)) < 1e-12);
  CHECK_THROWS(geodesic(Rot3::identity(), R1, -0.1));
  CHECK_THROWS(geodesic(Rot3::identity(), R1, 1.1));

  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    Rot3 A = sample_uniform_so3(rng);
    Rot3 B = sample_uniform_so3(rng);
    Rot3 Q = sample_uniform_so3(rng);
    const double d = geodesic_distance(A, B);
    if (d > kPi - 1e-3) continue;
    CHECK(geodesic_distance(B, A) == doctest::Approx(d).epsilon(1e-9));
    CHECK(geodesic_distance(Q * A, Q * B) == doctest::Approx(d).epsilon(1e-9));
    CHECK(geodesic_distance(A, A) < 1e-9);
    // interior points split the distance proportionally
    Rot3 mid = geodesic(A, B, 0.5);
    CHECK(geodesic_distance(A, mid) == doctest::Approx(d / 2).epsilon(1e-8));
  }
}

TEST_CASE("target vector field: pinned values and convention overlap") {
  Rot3 R1 = Rot3::rot_z(kPi / 2.0);
  Rot3 Rt = geodesic(Rot3::identity(), R1, 0.25);
  Vec3 d = target_vector_field(Rt, R1, 0.25, FieldConvention::Derivative);
  CHECK(d[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(d[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(d[2] == doctest::Approx(kPi / 2.0).epsilon(1e-12));
  Vec3 p = target_vector_field(Rt, R1, 0.25, FieldConvention::Paper);
  CHECK(p[2] == doctest::Approx(3.0 * kPi / 2.0).epsilon(1e-12));

  // the two conventions coincide at t = 1/2
  Rot3 Rh = geodesic(Rot3::identity(), R1, 0.5);
  Vec3 dh = target_vector_field(Rh, R1, 0.5, FieldConvention::Derivative);
  Vec3 ph = target_vector_field(Rh, R1, 0.5, FieldConvention::Paper);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(dh[i] == doctest::Approx(ph[i]).epsilon(1e-12));

  CHECK_THROWS(target_vector_field(Rt, R1, 0.0, FieldConvention::Paper));
  CHECK_THROWS(target_vector_field(Rt, R1, 1.0, FieldConvention::Derivative));
}

TEST_CASE("derivative field matches the geodesic time derivative") {
  const double h = 1e-7;
  Rng rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    Rot3 R0 = sample_uniform_so3(rng);
    Rot3 R1 = sample_uniform_so3(rng);
    if (geodesic_distance(R0, R1) > kPi - 0.2) continue;
    for (double t : {0.1, 0.25, 0.5, 0.75, 0.9}) {
      Rot3 Rt = geodesic(R0, R1, t);
      Vec3 u = target_vector_field(Rt, R1, t, FieldConvention::Derivative);
      // body-frame finite difference: log(R_t^T R_{t+h}) / h
      Vec3 fd = log_map(Rt.transpose() * geodesic(R0, R1, t + h));
      for (std::size_t i = 0; i < 3; ++i)
        worst = std::max(worst, std::abs(fd[i] / h - u[i]));
    }
  }
  CHECK(worst < 1e-5);

  // the pinned single-point version is much tighter
  Rot3 R1 = Rot3::rot_z(kPi / 2.0);
  Rot3 Rt = geodesic(Rot3::identity(), R1, 0.25);
  Vec3 u = target_vector_field(Rt, R1, 0.25, FieldConvention::Derivative);
  Vec3 fd = log_map(Rt.transpose() * geodesic(Rot3::identity(), R1, 0.25 + h));
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(std::abs(fd[i] / h - u[i]) < 1e-6);
}

TEST_CASE("haar sampling: validity, mean, angle distribution") {
  Rng rng(4);
  const std::size_t n = 20000;
  std::array<double, 9> mean{};
  std::size_t small_angle = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Rot3 R = sample_uniform_so3(rng);
    if (i < 500) {
      CHECK(R.is_valid());
      CHECK(R.det() == doctest::Approx(1.0).epsilon(1e-9));
    }
    for (std::size_t j = 0; j < 9; ++j) mean[j] += R.m[j];
    const double c = std::max(-1.0, std::min(1.0, (R.trace() - 1.0) / 2.0));
    if (std::acos(c) < kPi / 2.0) ++small_angle;
  }
  for (std::size_t j = 0; j < 9; ++j) CHECK(std::abs(mean[j] / n) < 0.02);

  // angle density (1 - cos a) / pi: P(a < pi/2) = (pi/2 - 1) / pi
  const double p1 = (kPi / 2.0 - 1.0) / kPi;
  const double e1 = p1 * n, e2 = (1.0 - p1) * n;
  const double o1 = static_cast<double>(small_angle), o2 = n - o1;
  const double chi2 =
      (o1 - e1) * (o1 - e1) / e1 + (o2 - e2) * (o2 - e2) / e2;
  CHECK(chi2 < 6.63);  // chi-square(1) at the 1% level
}

TEST_CASE("orthonormalize restores validity and fixes the sign") {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    Rot3 R = sample_uniform_so3(rng);
    Rot3 noisy = R;
    for (auto& v : noisy.m) v += 1e-4 * rng.gaussian();
    Rot3 fixed = orthonormalize(noisy);
    CHECK(fixed.orthogonality_error() < 1e-12);
    CHECK(fixed.det() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(max_entry_diff(fixed, R) < 1e-3);
  }
}

TEST_CASE("cfm loss: zero net measures the mean squared target field") {
  Rng init(6);
  VectorFieldNet vnet = VectorFieldNet::make({8}, 8, init);
  for (Param* p : vnet.parameters())
    for (auto& v : p->value.data) v = 0.0;

  Rng rng(7);
  std::vector<CfmBatchItem> batch;
  double expected = 0.0;
  for (int i = 0; i < 16; ++i) {
    CfmBatchItem item;
    item.R0 = sample_uniform_so3(rng);
    item.R1 = sample_uniform_so3(rng);
    item.t = rng.uniform(0.05, 0.95);
    if (geodesic_distance(item.R0, item.R1) > kPi - 0.2) {
      --i;
      continue;
    }
    Rot3 Rt = geodesic(item.R0, item.R1, item.t);
    Vec3 u =
        target_vector_field(Rt, item.R1, item.t, FieldConvention::Derivative);
    expected += u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
    batch.push_back(item);
  }
  expected /= static_cast<double>(batch.size());

  Tape tape;
  Var loss = cfm_loss(vnet, tape, batch, FieldConvention::Derivative, nullptr);
  CHECK(tape.value(loss).data[0] == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("flow integration: identity field, exact field, drift") {
  Rng init(8);
  VectorFieldNet vnet = VectorFieldNet::make({8}, 8, init);
  for (Param* p : vnet.parameters())
    for (auto& v : p->value.data) v = 0.0;
  Rng rng(9);
  Rot3 R0 = sample_uniform_so3(rng);
  Rot3 still = integrate_flow(vnet, R0, 200, FieldConvention::Derivative);
  CHECK(max_entry_diff(still, R0) < 1e-9);

  // integrating the exact conditional field transports R0 to R1
  Rot3 R1 = Rot3::rot_z(1.1) * Rot3::rot_x(0.4);
  auto field = [&](double t, const Rot3& R) {
    return target_vector_field(R, R1, t, FieldConvention::Derivative);
  };
  Rot3 end = integrate_flow(field, R0, 1000);
  CHECK(geodesic_distance(end, R1) < 1e-3);
  CHECK(end.orthogonality_error() < 1e-9);
}

TEST_CASE("cfm training concentrates the flow on a point target") {
  Rng init(10);
  VectorFieldNet vnet = VectorFieldNet::make({32, 32}, 8, init);
  Rot3 target = Rot3::rot_z(kPi / 2.0);
  So3TrainConfig cfg;
  cfg.steps = 1500;
  cfg.batch_size = 64;
  cfg.lr = 2e-3;
  Rng rng(11);
  auto curve = train_cfm(
      vnet, [&](Rng&) { return target; }, cfg, rng);
  REQUIRE(curve.size() == cfg.steps);
  const double head =
      (curve[0] + curve[1] + curve[2] + curve[3] + curve[4]) / 5.0;
  double tail = 0.0;
  for (std::size_t i = curve.size() - 5; i < curve.size(); ++i)
    tail += curve[i];
  tail /= 5.0;
  CHECK(tail < head);

  Rng eval(12);
  std::size_t close = 0;
  const std::size_t n_eval = 50;
  for (std::size_t i = 0; i < n_eval; ++i) {
    Rot3 R0 = sample_uniform_so3(eval);
    Rot3 end = integrate_flow(vnet, R0, 100, cfg.convention);
    if (geodesic_distance(end, target) < 0.25) ++close;
  }
  CHECK(close >= n_eval * 3 / 4);
}

TEST_SUITE_END();
