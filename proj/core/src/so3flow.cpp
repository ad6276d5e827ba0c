#include "vardlab/so3flow.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

#include "vardlab/optim.hpp"

namespace vardlab::so3 {

double Vec3::norm() const {
  return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
}

Vec3 operator+(const Vec3& a, const Vec3& b) {
  return Vec3{{a[0] + b[0], a[1] + b[1], a[2] + b[2]}};
}
Vec3 operator-(const Vec3& a, const Vec3& b) {
  return Vec3{{a[0] - b[0], a[1] - b[1], a[2] - b[2]}};
}
Vec3 operator*(double c, const Vec3& a) {
  return Vec3{{c * a[0], c * a[1], c * a[2]}};
}

Rot3 Rot3::rot_z(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Rot3 R;
  R.m = {c, -s, 0, s, c, 0, 0, 0, 1};
  return R;
}

Rot3 Rot3::rot_x(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Rot3 R;
  R.m = {1, 0, 0, 0, c, -s, 0, s, c};
  return R;
}

Rot3 Rot3::transpose() const {
  Rot3 T;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) T.m[3 * r + c] = m[3 * c + r];
  return T;
}

double Rot3::det() const {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) -
         m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

double Rot3::orthogonality_error() const {
  const Rot3 T = transpose();
  const Rot3 P = T * (*this);
  double err = 0.0;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      const double target = r == c ? 1.0 : 0.0;
      err = std::max(err, std::abs(P.at(r, c) - target));
    }
  return err;
}

bool Rot3::is_valid(double tol) const {
  return orthogonality_error() <= tol && std::abs(det() - 1.0) <= tol;
}

Rot3 operator*(const Rot3& a, const Rot3& b) {
  Rot3 c;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t k = 0; k < 3; ++k) {
      double s = 0.0;
      for (std::size_t l = 0; l < 3; ++l) s += a.at(r, l) * b.at(l, k);
      c.m[3 * r + k] = s;
    }
  return c;
}

Rot3 exp_map(const Vec3& omega) {
  for (double v : omega.v)
    if (!std::isfinite(v))
      throw std::invalid_argument("exp_map: non-finite input");
  const double theta = omega.norm();
  // sin(t)/t and (1-cos t)/t^2 with series fallback near zero
  double a, b;
  if (theta < 1e-4) {
    const double t2 = theta * theta;
    a = 1.0 - t2 / 6.0;
    b = 0.5 - t2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / (theta * theta);
  }
  const double wx = omega[0], wy = omega[1], wz = omega[2];
  // K = skew(omega), R = I + a K + b K^2
  Rot3 R;
  R.m = {1.0 + b * (-wz * wz - wy * wy), -a * wz + b * wx * wy,
         a * wy + b * wx * wz,
         a * wz + b * wx * wy, 1.0 + b * (-wz * wz - wx * wx),
         -a * wx + b * wy * wz,
         -a * wy + b * wx * wz, a * wx + b * wy * wz,
         1.0 + b * (-wy * wy - wx * wx)};
  return R;
}

namespace {

// Rotation angle from the trace; safe at the cut locus, unlike log_map.
double rotation_angle(const Rot3& R) {
  return std::acos(std::min(1.0, std::max(-1.0, (R.trace() - 1.0) / 2.0)));
}

}  // namespace

Vec3 log_map(const Rot3& R) {
  const double cos_theta =
      std::min(1.0, std::max(-1.0, (R.trace() - 1.0) / 2.0));
  const double theta = std::acos(cos_theta);
  if (theta > M_PI - 1e-6)
    throw std::domain_error(
        "log_map: rotation angle within 1e-6 of pi (principal branch "
        "singularity)");
  // vee(R - R^T) / 2 = sin(theta) * axis
  const Vec3 w{{(R.at(2, 1) - R.at(1, 2)) / 2.0,
                (R.at(0, 2) - R.at(2, 0)) / 2.0,
                (R.at(1, 0) - R.at(0, 1)) / 2.0}};
  double scale;
  if (theta < 1e-4) {
    scale = 1.0 + theta * theta / 6.0;
  } else {
    scale = theta / std::sin(theta);
  }
  return scale * w;
}

double geodesic_distance(const Rot3& a, const Rot3& b) {
  return log_map(a.transpose() * b).norm();
}

Rot3 geodesic(const Rot3& R0, const Rot3& R1, double t) {
  if (t < 0.0 || t > 1.0)
    throw std::invalid_argument("geodesic: t must be in [0, 1]");
  if (t == 0.0) return R0;
  if (t == 1.0) return R1;
  const Vec3 omega = log_map(R0.transpose() * R1);
  return R0 * exp_map(t * omega);
}

Vec3 target_vector_field(const Rot3& R_t, const Rot3& R_1, double t,
                         FieldConvention convention) {
  const Vec3 rel = log_map(R_t.transpose() * R_1);
  if (convention == FieldConvention::Paper) {
    if (t <= 0.0)
      throw std::domain_error("target_vector_field: 1/t singular at t = 0");
    return (1.0 / t) * rel;
  }
  if (t >= 1.0)
    throw std::domain_error("target_vector_field: 1/(1-t) singular at t = 1");
  return (1.0 / (1.0 - t)) * rel;
}

Rot3 sample_uniform_so3(Rng& rng) {
  double q[4];
  double n2 = 0.0;
  for (double& qi : q) {
    qi = rng.gaussian();
    n2 += qi * qi;
  }
  const double inv = 1.0 / std::sqrt(n2);
  const double w = q[0] * inv, x = q[1] * inv, y = q[2] * inv, z = q[3] * inv;
  Rot3 R;
  R.m = {1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)};
  return R;
}

Rot3 orthonormalize(const Rot3& R) {
  // Gram-Schmidt on rows
  std::array<std::array<double, 3>, 3> r;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) r[i][j] = R.at(i, j);
  auto dot = [](const auto& a, const auto& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
  };
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double d = dot(r[i], r[j]);
      for (std::size_t k = 0; k < 3; ++k) r[i][k] -= d * r[j][k];
    }
    const double n = std::sqrt(dot(r[i], r[i]));
    for (std::size_t k = 0; k < 3; ++k) r[i][k] /= n;
  }
  Rot3 out;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) out.m[3 * i + j] = r[i][j];
  if (out.det() < 0.0)
    for (std::size_t j = 0; j < 3; ++j) out.m[6 + j] = -out.m[6 + j];
  return out;
}

VectorFieldNet VectorFieldNet::make(const std::vector<std::size_t>& hidden,
                                    std::size_t time_dim, Rng& rng) {
  VectorFieldNet v;
  v.time_dim = time_dim;
  v.net = Mlp::make(9 + time_dim, hidden, 3, Activation::Tanh, rng, "vfield");
  return v;
}

Tensor VectorFieldNet::build_input(const std::vector<double>& ts,
                                   const std::vector<Rot3>& Rs) const {
  const std::size_t B = ts.size();
  if (Rs.size() != B)
    throw std::invalid_argument("VectorFieldNet: batch size mismatch");
  const std::size_t w = 9 + time_dim;
  Tensor input = Tensor::zeros({B, w});
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < 9; ++j) input.data[i * w + j] = Rs[i].m[j];
    Tensor tf = fourier_time_features(ts[i], time_dim);
    for (std::size_t j = 0; j < time_dim; ++j)
      input.data[i * w + 9 + j] = tf.data[j];
  }
  return input;
}

Vec3 VectorFieldNet::apply(double t, const Rot3& R) const {
  Tensor out = net.apply(build_input({t}, {R}));
  return Vec3{{out.data[0], out.data[1], out.data[2]}};
}

Var VectorFieldNet::forward(Tape& tape, Var input, ParamBinding* bind) const {
  return net.forward(tape, input, bind);
}

Var cfm_loss(const VectorFieldNet& vnet, Tape& tape,
             const std::vector<CfmBatchItem>& batch,
             FieldConvention convention, ParamBinding* bind) {
  if (batch.empty()) throw std::invalid_argument("cfm_loss: empty batch");
  const std::size_t B = batch.size();
  std::vector<double> ts(B);
  std::vector<Rot3> Rts(B);
  Tensor targets = Tensor::zeros({B, 3});
  for (std::size_t i = 0; i < B; ++i) {
    const double t = std::min(std::max(batch[i].t, kCfmTimeClamp),
                              1.0 - kCfmTimeClamp);
    ts[i] = t;
    Rts[i] = geodesic(batch[i].R0, batch[i].R1, t);
    const Vec3 u = target_vector_field(Rts[i], batch[i].R1, t, convention);
    for (std::size_t j = 0; j < 3; ++j) targets.data[i * 3 + j] = u[j];
  }
  Var input = tape.leaf(vnet.build_input(ts, Rts));
  Var pred = vnet.forward(tape, input, bind);
  Var diff = tape.sub(pred, tape.leaf(std::move(targets)));
  return tape.scale(tape.sum(tape.mul(diff, diff)),
                    1.0 / static_cast<double>(B));
}

Rot3 integrate_flow(const std::function<Vec3(double, const Rot3&)>& field,
                    const Rot3& R0, std::size_t steps) {
  if (steps < 1) throw std::invalid_argument("integrate_flow: steps >= 1");
  const double dt = 1.0 / static_cast<double>(steps);
  Rot3 R = R0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = std::min(
        std::max(static_cast<double>(i) * dt, kCfmTimeClamp),
        1.0 - kCfmTimeClamp);
    const Vec3 v = field(t, R);
    R = orthonormalize(R * exp_map(dt * v));
  }
  return R;
}

Rot3 integrate_flow(const VectorFieldNet& vnet, const Rot3& R0,
                    std::size_t steps, FieldConvention convention) {
  (void)convention;  // the convention is baked into the trained field
  return integrate_flow(
      [&vnet](double t, const Rot3& R) { return vnet.apply(t, R); }, R0,
      steps);
}

std::vector<double> train_cfm(VectorFieldNet& vnet,
                              const std::function<Rot3(Rng&)>& sample_target,
                              const So3TrainConfig& cfg, Rng& rng) {
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  Adam opt(acfg);
  auto params = vnet.parameters();
  std::vector<double> losses;
  losses.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<CfmBatchItem> batch;
    batch.reserve(cfg.batch_size);
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      CfmBatchItem item;
      item.R1 = sample_target(rng);
      // reject pairs at the cut locus, where the principal log is undefined
      do {
        item.R0 = sample_uniform_so3(rng);
      } while (rotation_angle(item.R0.transpose() * item.R1) >
               M_PI - 1e-3);
      item.t = rng.uniform();
      batch.push_back(item);
    }
    Tape tape;
    ParamBinding bind;
    Var loss = cfm_loss(vnet, tape, batch, cfg.convention, &bind);
    const double loss_val = tape.value(loss).data[0];
    if (!std::isfinite(loss_val))
      throw std::runtime_error("train_cfm: loss diverged at step " +
                               std::to_string(step));
    tape.backward(loss);
    bind.accumulate(tape);
    opt.step(params);
    losses.push_back(loss_val);
  }
  return losses;
}

}  // namespace vardlab::so3
