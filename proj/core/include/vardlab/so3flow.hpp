#pragma once

#include <array>
#include <functional>
#include <vector>

#include "vardlab/nn.hpp"
#include "vardlab/rng.hpp"

namespace vardlab::so3 {

struct Vec3 {
  std::array<double, 3> v{0.0, 0.0, 0.0};
  double& operator[](std::size_t i) { return v[i]; }
  double operator[](std::size_t i) const { return v[i]; }
  double norm() const;
};

Vec3 operator+(const Vec3& a, const Vec3& b);
Vec3 operator-(const Vec3& a, const Vec3& b);
Vec3 operator*(double c, const Vec3& a);

// 3x3 orthonormal matrix with det +1, row-major.
struct Rot3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Rot3 identity() { return Rot3{}; }
  static Rot3 rot_z(double angle);
  static Rot3 rot_x(double angle);

  double at(std::size_t r, std::size_t c) const { return m[3 * r + c]; }
  Rot3 transpose() const;
  double trace() const { return m[0] + m[4] + m[8]; }
  double det() const;

  // max |R^T R - I| entry; 0 for an exact rotation
  double orthogonality_error() const;
  bool is_valid(double tol = 1e-9) const;
};

Rot3 operator*(const Rot3& a, const Rot3& b);

// Group exponential via Rodrigues' formula; Taylor series below 1e-4.
Rot3 exp_map(const Vec3& omega);

// Principal-branch logarithm; refuses within 1e-6 of angle pi.
Vec3 log_map(const Rot3& R);

// Geodesic distance d(R0, R1) = ||log(R0^T R1)||.
double geodesic_distance(const Rot3& a, const Rot3& b);

// R_t = R0 exp(t log(R0^T R1)); endpoints exact.
Rot3 geodesic(const Rot3& R0, const Rot3& R1, double t);

enum class FieldConvention {
  Paper,       // u_t = log_{R_t}(R_1) / t       (singular at t = 0)
  Derivative,  // u_t = log_{R_t}(R_1) / (1 - t) (time derivative of the
               //                                 geodesic; singular at t = 1)
};

// Tangent coordinates (at R_t, body frame) of the target conditional field.
Vec3 target_vector_field(const Rot3& R_t, const Rot3& R_1, double t,
                         FieldConvention convention);

// Haar-uniform rotation via unit-quaternion sampling.
Rot3 sample_uniform_so3(Rng& rng);

// Gram-Schmidt re-orthonormalization (row-wise), sign-corrected to det +1.
Rot3 orthonormalize(const Rot3& R);

// v_theta(t, R): flattened 9-entry rotation plus Fourier time features.
struct VectorFieldNet {
  Mlp net;
  std::size_t time_dim = 8;

  static VectorFieldNet make(const std::vector<std::size_t>& hidden,
                             std::size_t time_dim, Rng& rng);

  Vec3 apply(double t, const Rot3& R) const;
  // (batch) tape version; rows are flattened inputs built by the caller.
  Var forward(Tape& tape, Var input, ParamBinding* bind) const;
  Tensor build_input(const std::vector<double>& ts,
                     const std::vector<Rot3>& Rs) const;

  std::vector<Param*> parameters() { return net.parameters(); }
};

struct CfmBatchItem {
  Rot3 R0;
  Rot3 R1;
  double t;  // clamped to [eps_t, 1 - eps_t] by the caller
};

inline constexpr double kCfmTimeClamp = 1e-3;

// E || v_theta(t, R_t) - u_t(R_t | R0, R1) ||^2 on the batch.
Var cfm_loss(const VectorFieldNet& vnet, Tape& tape,
             const std::vector<CfmBatchItem>& batch,
             FieldConvention convention, ParamBinding* bind);

// Explicit manifold Euler: R <- R exp(dt * v_theta(t, R)), re-orthonormalized
// each step.
Rot3 integrate_flow(const VectorFieldNet& vnet, const Rot3& R0,
                    std::size_t steps, FieldConvention convention);

// Same integrator over an arbitrary field (exact-field oracle hooks).
Rot3 integrate_flow(const std::function<Vec3(double, const Rot3&)>& field,
                    const Rot3& R0, std::size_t steps);

struct So3TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  FieldConvention convention = FieldConvention::Derivative;
};

// CFM training with independent (R0, R1) coupling; returns the loss curve.
std::vector<double> train_cfm(VectorFieldNet& vnet,
                              const std::function<Rot3(Rng&)>& sample_target,
                              const So3TrainConfig& cfg, Rng& rng);

}  // namespace vardlab::so3
