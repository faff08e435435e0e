#pragma once

#include <cstdint>
#include <vector>

#include "gravdec/gaussian.hpp"
#include "gravdec/model_spec.hpp"
#include "gravdec/rng.hpp"

namespace gravdec {

// Stochastic-integration setup for one (or an ensemble of) trajectories.
struct NoiseConfig {
    std::uint64_t seed = 0;
    double dt = 1e-3;
    int n_steps = 1000;
    double Gamma1 = 0.0; // measurement rate on oscillator 1
    double Gamma2 = 0.0;
    // States are recorded every store_stride steps (record increments are
    // accumulated over the same windows). Audit requires stride 1.
    int store_stride = 1;

    void validate() const {
        if (!(dt > 0.0)) throw config_error("NoiseConfig: dt must be positive");
        if (n_steps <= 0) throw config_error("NoiseConfig: n_steps must be positive");
        if (!(Gamma1 > 0.0) || !(Gamma2 > 0.0)) {
            throw config_error("NoiseConfig: measurement rates must be positive");
        }
        if (store_stride < 1 || n_steps % store_stride != 0) {
            throw config_error("NoiseConfig: store_stride must divide n_steps");
        }
    }
};

// Conditional Gaussian filter state. The covariance obeys a deterministic
// Riccati equation, so it is identical across seeds; only the means are
// stochastic.
struct FilterState {
    Vec4 mean = Vec4::Zero();
    Mat4 cov = 0.5 * Mat4::Identity();
};

// One simulated trajectory: the stored filter states, the measurement-record
// increments that generated them, and the feedback impulses the integrator
// actually applied (audit trail).
//
// Record convention (dimensionless units):
//   dJ_k = <x_k>_c dt + sqrt(1/(4 Gamma_k)) dW_k
// Feedback wiring: gain chi_k multiplies record k and drives the *other*
// oscillator, H_fb = chi1 (dJ1/dt) x2 + chi2 (dJ2/dt) x1, so the impulse on
// p2 is -chi1 dJ1 and on p1 is -chi2 dJ2.
struct TrajectoryRecord {
    std::vector<double> times;  // stored grid, size n_stored + 1
    std::vector<double> dJ1;    // per stored window, size n_stored
    std::vector<double> dJ2;
    std::vector<FilterState> states; // size n_stored + 1
    std::vector<double> fb_impulse_p1; // applied -chi2 dJ2, per window
    std::vector<double> fb_impulse_p2; // applied -chi1 dJ1, per window
    int store_stride = 1;
    double dt = 0.0;
};

// Euler-Maruyama integration of the Gaussian conditional filter for the
// FeedbackME model (explicit chi1, chi2; rates from NoiseConfig). The
// covariance Riccati flow advances with an RK4 substep; means, records and
// feedback use Euler-Maruyama on the shared Wiener path.
TrajectoryRecord simulate_trajectory(const ModelSpec& spec, const NoiseConfig& noise,
                                     const GaussianState& initial);

// Same, but on an externally supplied Wiener path (shared-path comparisons).
TrajectoryRecord simulate_trajectory(const ModelSpec& spec, const WienerPath& path,
                                     const GaussianState& initial, double Gamma1,
                                     double Gamma2, int store_stride = 1);

// Unconditional moments reconstructed from an ensemble:
// mean = average of conditional means, cov = average conditional covariance
// plus the (unbiased) covariance of the conditional means.
struct EnsembleMoments {
    std::vector<double> times;
    std::vector<Vec4> mean;
    std::vector<Mat4> cov;
};

EnsembleMoments ensemble_moments(const std::vector<TrajectoryRecord>& records);

// Recomputes the cross-feedback forces from the stored record increments.
// Throws numerics_error if they do not reproduce what the integrator applied.
struct FeedbackForces {
    std::vector<double> force_p1; // -chi2 dJ2/dt
    std::vector<double> force_p2; // -chi1 dJ1/dt
};

FeedbackForces feedback_force_audit(const TrajectoryRecord& record, const ModelSpec& spec);

// Convenience ensemble runner: trajectory t uses Wiener streams (2t, 2t+1)
// of noise.seed. Deterministic regardless of scheduling.
std::vector<TrajectoryRecord> run_ensemble(const ModelSpec& spec, const NoiseConfig& noise,
                                           const GaussianState& initial, int n_trajectories);

}  // namespace gravdec
