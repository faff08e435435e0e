#include "gravdec/conditional.hpp"

#include <cmath>
#include <sstream>

namespace gravdec {

namespace {

// Deterministic Riccati flow of the conditional covariance. The feedback
// Hamiltonian is a classical drive and never touches the covariance, so the
// drift here is the bare harmonic rotation; measurement back-action diffuses
// the momenta and the conditioning term contracts along the measured
// quadratures:
//   dV/dt = Ah V + V Ah^T + diag(0,G1,0,G2)
//           - 4 G1 v1 v1^T - 4 G2 v2 v2^T,   v_k = V e_{x_k}.
Mat4 riccati_rhs(const Mat4& v, double Gamma1, double Gamma2) {
    Mat4 ah = Mat4::Zero();
    ah(0, 1) = 1.0;
    ah(1, 0) = -1.0;
    ah(2, 3) = 1.0;
    ah(3, 2) = -1.0;
    Mat4 d = Mat4::Zero();
    d(1, 1) = Gamma1;
    d(3, 3) = Gamma2;
    const Vec4 v1 = v.col(0);
    const Vec4 v2 = v.col(2);
    return ah * v + v * ah.transpose() + d - 4.0 * Gamma1 * (v1 * v1.transpose()) -
           4.0 * Gamma2 * (v2 * v2.transpose());
}

Mat4 riccati_rk4_step(const Mat4& v, double dt, double Gamma1, double Gamma2) {
    const Mat4 k1 = riccati_rhs(v, Gamma1, Gamma2);
    const Mat4 k2 = riccati_rhs(v + 0.5 * dt * k1, Gamma1, Gamma2);
    const Mat4 k3 = riccati_rhs(v + 0.5 * dt * k2, Gamma1, Gamma2);
    const Mat4 k4 = riccati_rhs(v + dt * k3, Gamma1, Gamma2);
    Mat4 out = v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    return 0.5 * (out + out.transpose());
}

void check_filter_state(const Vec4& m, const Mat4& v, int step) {
    GaussianState probe;
    probe.mean = m;
    probe.cov = v;
    try {
        probe.validate();
    } catch (const numerics_error& e) {
        std::ostringstream oss;
        oss << "conditional filter aborted at step " << step << ": " << e.what();
        throw numerics_error(oss.str());
    }
}

}  // namespace

TrajectoryRecord simulate_trajectory(const ModelSpec& spec, const WienerPath& path,
                                     const GaussianState& initial, double Gamma1,
                                     double Gamma2, int store_stride) {
    spec.validate();
    if (spec.variant != MasterEquation::FeedbackME) {
        throw config_error("simulate_trajectory: spec must be FeedbackME with explicit gains");
    }
    if (spec.qbm) {
        throw config_error("simulate_trajectory: the conditional filter has no QBM term");
    }
    if (!(Gamma1 > 0.0) || !(Gamma2 > 0.0)) {
        throw config_error("simulate_trajectory: measurement rates must be positive");
    }
    const int n_steps = static_cast<int>(path.dw1.size());
    if (path.dw2.size() != path.dw1.size()) {
        throw config_error("simulate_trajectory: Wiener path streams differ in length");
    }
    if (store_stride < 1 || n_steps % store_stride != 0) {
        throw config_error("simulate_trajectory: store_stride must divide n_steps");
    }
    initial.validate();

    const double dt = path.dt;
    const double chi1 = spec.chi1;
    const double chi2 = spec.chi2;
    const double rec_noise1 = std::sqrt(1.0 / (4.0 * Gamma1));
    const double rec_noise2 = std::sqrt(1.0 / (4.0 * Gamma2));
    const double gain1 = 2.0 * std::sqrt(Gamma1);
    const double gain2 = 2.0 * std::sqrt(Gamma2);

    TrajectoryRecord rec;
    rec.store_stride = store_stride;
    rec.dt = dt;
    const int n_stored = n_steps / store_stride;
    rec.times.reserve(n_stored + 1);
    rec.states.reserve(n_stored + 1);
    rec.dJ1.assign(n_stored, 0.0);
    rec.dJ2.assign(n_stored, 0.0);
    rec.fb_impulse_p1.assign(n_stored, 0.0);
    rec.fb_impulse_p2.assign(n_stored, 0.0);

    Vec4 m = initial.mean;
    Mat4 v = initial.cov;
    rec.times.push_back(0.0);
    rec.states.push_back({m, v});

    for (int step = 0; step < n_steps; ++step) {
        const double dw1 = path.dw1[static_cast<std::size_t>(step)];
        const double dw2 = path.dw2[static_cast<std::size_t>(step)];

        // Measurement records from the pre-step conditional means.
        const double dj1 = m(0) * dt + rec_noise1 * dw1;
        const double dj2 = m(2) * dt + rec_noise2 * dw2;

        // Cross feedback: record k kicks the other oscillator's momentum.
        const double kick_p2 = -chi1 * dj1;
        const double kick_p1 = -chi2 * dj2;

        // Innovation gains from the pre-step covariance.
        const Vec4 v1 = v.col(0);
        const Vec4 v2 = v.col(2);

        Vec4 m_next = m;
        m_next(0) += m(1) * dt;
        m_next(1) += -m(0) * dt + kick_p1;
        m_next(2) += m(3) * dt;
        m_next(3) += -m(2) * dt + kick_p2;
        m_next += gain1 * v1 * dw1 + gain2 * v2 * dw2;

        v = riccati_rk4_step(v, dt, Gamma1, Gamma2);
        m = m_next;

        const int bucket = step / store_stride;
        rec.dJ1[bucket] += dj1;
        rec.dJ2[bucket] += dj2;
        rec.fb_impulse_p1[bucket] += kick_p1;
        rec.fb_impulse_p2[bucket] += kick_p2;

        if ((step + 1) % store_stride == 0) {
            check_filter_state(m, v, step + 1);
            rec.times.push_back((step + 1) * dt);
            rec.states.push_back({m, v});
        }
    }
    return rec;
}

TrajectoryRecord simulate_trajectory(const ModelSpec& spec, const NoiseConfig& noise,
                                     const GaussianState& initial) {
    noise.validate();
    const auto path = WienerPath::generate(noise.seed, 0, noise.dt,
                                           static_cast<std::size_t>(noise.n_steps));
    return simulate_trajectory(spec, path, initial, noise.Gamma1, noise.Gamma2,
                               noise.store_stride);
}

EnsembleMoments ensemble_moments(const std::vector<TrajectoryRecord>& records) {
    if (records.empty()) throw config_error("ensemble_moments: no records");
    const auto& grid = records.front().times;
    for (const auto& r : records) {
        if (r.times.size() != grid.size()) {
            throw config_error("ensemble_moments: mismatched time grids");
        }
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (r.times[i] != grid[i]) {
                throw config_error("ensemble_moments: mismatched time grids");
            }
        }
    }

    const std::size_t n_times = grid.size();
    const double n = static_cast<double>(records.size());
    EnsembleMoments out;
    out.times = grid;
    out.mean.assign(n_times, Vec4::Zero());
    out.cov.assign(n_times, Mat4::Zero());

    for (std::size_t t = 0; t < n_times; ++t) {
        Vec4 mu = Vec4::Zero();
        Mat4 avg_cov = Mat4::Zero();
        for (const auto& r : records) {
            mu += r.states[t].mean;
            avg_cov += r.states[t].cov;
        }
        mu /= n;
        avg_cov /= n;

        // Law of total covariance: add the spread of the conditional means.
        Mat4 spread = Mat4::Zero();
        if (records.size() > 1) {
            for (const auto& r : records) {
                const Vec4 d = r.states[t].mean - mu;
                spread += d * d.transpose();
            }
            spread /= (n - 1.0);
        }
        out.mean[t] = mu;
        out.cov[t] = avg_cov + spread;
    }
    return out;
}

FeedbackForces feedback_force_audit(const TrajectoryRecord& record, const ModelSpec& spec) {
    spec.validate();
    if (spec.variant != MasterEquation::FeedbackME) {
        throw config_error("feedback_force_audit: spec must be FeedbackME");
    }
    if (record.store_stride != 1) {
        throw config_error("feedback_force_audit: record must be stored at stride 1");
    }
    const std::size_t n = record.dJ1.size();
    if (record.dJ2.size() != n || record.fb_impulse_p1.size() != n ||
        record.fb_impulse_p2.size() != n) {
        throw config_error("feedback_force_audit: inconsistent record lengths");
    }

    FeedbackForces forces;
    forces.force_p1.resize(n);
    forces.force_p2.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double impulse_p1 = -spec.chi2 * record.dJ2[i];
        const double impulse_p2 = -spec.chi1 * record.dJ1[i];
        if (impulse_p1 != record.fb_impulse_p1[i] || impulse_p2 != record.fb_impulse_p2[i]) {
            std::ostringstream oss;
            oss << "feedback audit mismatch at step " << i
                << ": integrator applied a force not implied by the stored record";
            throw numerics_error(oss.str());
        }
        forces.force_p1[i] = impulse_p1 / record.dt;
        forces.force_p2[i] = impulse_p2 / record.dt;
    }
    return forces;
}

std::vector<TrajectoryRecord> run_ensemble(const ModelSpec& spec, const NoiseConfig& noise,
                                           const GaussianState& initial, int n_trajectories) {
    noise.validate();
    if (n_trajectories <= 0) throw config_error("run_ensemble: need at least one trajectory");
    std::vector<TrajectoryRecord> records;
    records.reserve(static_cast<std::size_t>(n_trajectories));
    for (int t = 0; t < n_trajectories; ++t) {
        const auto path = WienerPath::generate(noise.seed, static_cast<std::uint64_t>(t),
                                               noise.dt, static_cast<std::size_t>(noise.n_steps));
        records.push_back(simulate_trajectory(spec, path, initial, noise.Gamma1, noise.Gamma2,
                                              noise.store_stride));
    }
    return records;
}

}  // namespace gravdec
