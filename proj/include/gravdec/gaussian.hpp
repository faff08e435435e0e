#pragma once

#include <Eigen/Dense>
#include <vector>

#include "gravdec/errors.hpp"
#include "gravdec/model_spec.hpp"

namespace gravdec {

using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;

// Two-mode symplectic form for the ordering (x1, p1, x2, p2).
Mat4 symplectic_form4();

// First and second moments of the two-mode Gaussian state.
// cov_ij = (1/2)<{r_i, r_j}> - <r_i><r_j>, vacuum = I/2.
struct GaussianState {
    Vec4 mean = Vec4::Zero();
    Mat4 cov = 0.5 * Mat4::Identity();

    static GaussianState vacuum() { return {}; }

    // Symmetry to 1e-12 and the uncertainty relation
    // cov + (i/2) Sigma4 >= -1e-9. Throws numerics_error.
    void validate() const;

    // Smallest eigenvalue of cov + (i/2) Sigma4; >= 0 up to tolerance for
    // a physical state.
    double uncertainty_margin() const;
};

// Moment-flow generator: d<r>/dt = A <r>, dcov/dt = A cov + cov A^T + D.
struct Generator {
    Mat4 A = Mat4::Zero();
    Mat4 D = Mat4::Zero();
};

// Builds (A, D) for the chosen master equation, in dimensionless units.
//
// MinimalME with decoherence matrix Y = (2g - eps) I:
//   A = harmonic rotation plus the -g x1 x2 coupling rows,
//   D = diag(0, g - eps/2, 0, g - eps/2).
// FeedbackME (gains chi1 on record 1 -> force on 2, chi2 on record 2 ->
// force on 1, measurement rate Gamma):
//   A couples p1 <- -chi2 x2 and p2 <- -chi1 x1,
//   D = diag(0, Gamma + chi2^2/(4 Gamma), 0, Gamma + chi1^2/(4 Gamma)).
// QBM adds -2 gamma damping on each momentum and 2 gamma T momentum diffusion.
//
// Throws overcoupled_error when the drift has an inverted mode
// (sqrt(coupling1*coupling2) >= 1).
Generator build_generator(const ModelSpec& spec);

// Fixed-step RK4 trajectory of the moment ODEs. Returns n_steps+1 states
// including the initial one. Guards dt * ||A|| < 0.1 and validates the
// uncertainty relation at every step.
std::vector<GaussianState> propagate(const GaussianState& initial, const Generator& gen,
                                     double dt, int n_steps);

// Mean phonon numbers n_k = (<x_k^2> + <p_k^2> - 1)/2, means included.
struct PhononNumbers {
    double n1 = 0.0;
    double n2 = 0.0;
};
PhononNumbers phonon_numbers(const GaussianState& state);

// Solves A sigma + sigma A^T + D = 0 for strictly stable A via the 16x16
// Kronecker system. Residual verified below 1e-10.
Mat4 solve_lyapunov(const Mat4& A, const Mat4& D);

// Steady-state covariance of the generator. On top of solve_lyapunov the
// result must be a physical state (a formally zero covariance from D = 0 is
// rejected by the uncertainty invariant).
GaussianState steady_state_lyapunov(const Generator& gen);

}  // namespace gravdec
