#pragma once

#include <Eigen/Dense>
#include <complex>
#include <optional>
#include <vector>

#include "gravdec/errors.hpp"
#include "gravdec/gaussian.hpp"
#include "gravdec/model_spec.hpp"
#include "gravdec/rng.hpp"

namespace gravdec {

using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;

// Truncation setup for the brute-force density-matrix engine.
struct FockConfig {
    int N = 15;                 // per-mode dimension
    double leakage_tol = 1e-8;  // max allowed top-level population
    double negativity_tol = 1e-8;
    int positivity_check_stride = 10; // eigenvalue checks are O(N^6); amortized
    bool store_states = false;  // keep snapshots along the trajectory

    void validate() const {
        if (N < 2) throw config_error("FockConfig: N >= 2 required");
        if (!(leakage_tol > 0.0)) throw config_error("FockConfig: leakage_tol must be positive");
        if (positivity_check_stride < 1) {
            throw config_error("FockConfig: positivity_check_stride must be >= 1");
        }
    }
};

// Single-mode ladder-operator matrices at truncation N.
// x = (a + a^dag)/sqrt(2), p = -i(a - a^dag)/sqrt(2), so [x,p] = i
// everywhere except the (N-1, N-1) corner.
struct ModeOperators {
    int N = 0;
    CMat a, ad, n, x, p, x2, p2, xp_sym, h; // h = n + 1/2

    static ModeOperators build(int N);
};

// Two-mode density matrix over |n1, n2>, row index n1*N + n2.
struct FockState {
    int N = 0;
    CMat rho;

    static FockState from_product(const CMat& rho1, const CMat& rho2);
    static FockState from_pure(const CVec& psi1, const CVec& psi2);

    double trace_real() const { return rho.trace().real(); }
    double hermiticity_defect() const;
    double min_eigenvalue() const;
    // Population of the top Fock level of either mode.
    double leakage() const;

    // Hermitian to 1e-10, trace within 1e-8 of one, min eigenvalue above
    // -negativity_tol, leakage below tolerance. Throws numerics_error.
    void validate(const FockConfig& cfg, bool check_positivity = true) const;
};

// Common pure states (normalized after truncation).
CVec fock_vacuum(int N);
CVec fock_coherent(int N, std::complex<double> alpha);
CVec fock_cat(int N, double alpha); // |alpha> + |-alpha>, alpha real
CMat fock_thermal(int N, double nbar);

// First and second quadrature moments extracted from a two-mode state,
// same ordering and conventions as GaussianState.
struct FockMoments {
    Vec4 mean = Vec4::Zero();
    Mat4 cov = Mat4::Zero();
    double n1 = 0.0;
    double n2 = 0.0;
};

FockMoments fock_moments(const FockState& state);

// Unconditional master-equation trajectory, fixed-step RK4.
struct FockTrajectory {
    std::vector<double> times;
    std::vector<FockMoments> moments;
    std::vector<FockState> states; // filled only when cfg.store_states
    FockState final_state;
    double max_leakage = 0.0;
};

FockTrajectory evolve_unconditional(const FockState& rho0, const ModelSpec& spec, double dt,
                                    int n_steps, const FockConfig& cfg, int store_stride = 1);

// Conditional SME trajectory (Euler-Maruyama) with measurement records and
// cross feedback, same wiring and record convention as the Gaussian filter:
//   dJ_k = <x_k>_c dt + sqrt(1/(4 Gamma_k)) dW_k,
//   impulse on p2 = -chi1 dJ1, impulse on p1 = -chi2 dJ2.
// The trace is renormalized each step; the accumulated drift is reported.
struct FockConditionalTrajectory {
    std::vector<double> times;
    std::vector<FockMoments> moments;
    std::vector<double> dJ1, dJ2; // per stored window
    std::vector<FockState> states;
    FockState final_state;
    double max_leakage = 0.0;
    double trace_drift_per_unit_time = 0.0;
};

FockConditionalTrajectory evolve_conditional(const FockState& rho0, const ModelSpec& spec,
                                             const WienerPath& path, double Gamma1,
                                             double Gamma2, const FockConfig& cfg,
                                             int store_stride = 1);

// Position-coherence decay probe on a single mode. A cat state along x with
// peak separation delta_x (= 2 sqrt(2) alpha) evolves under the decoherence
// term alone; the interference fringe amplitude |tr(rho exp(i delta_x p))|
// decays exponentially and its fitted rate is returned. The normalized
// coherent-state overlap |<alpha|rho|-alpha>| / sqrt(populations) is computed
// alongside for reference; its short-time slope is suppressed by the overlap
// contamination (1 + e^{-delta_x^2/4})^-2 and is not used for the fit.
struct CoherenceDecayResult {
    double fitted_rate = 0.0;   // from the fringe amplitude
    double expected_rate = 0.0; // (g/2) delta_x^2 at epsilon = 0
    double fit_residual = 0.0;  // max |ln F - fit| over the window
    bool conclusive = true;
    std::vector<double> times;
    std::vector<double> fringe_amplitude;
    std::vector<double> overlap_coherence;
};

CoherenceDecayResult coherence_decay_probe(double delta_x, const ModelSpec& spec, double dt,
                                           int n_steps, const FockConfig& cfg);

// Trace distance (1/2) ||rho1 - rho2||_1 between equal-size states.
double trace_distance(const FockState& a, const FockState& b);

// Overlap <psi| rho |psi> with a pure reference, for fidelity checks.
double pure_state_fidelity(const FockState& rho, const CVec& psi);

}  // namespace gravdec
