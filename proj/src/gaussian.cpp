#include "gravdec/gaussian.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <complex>
#include <sstream>

namespace gravdec {

Mat4 symplectic_form4() {
    Mat4 s = Mat4::Zero();
    s(0, 1) = 1.0;
    s(1, 0) = -1.0;
    s(2, 3) = 1.0;
    s(3, 2) = -1.0;
    return s;
}

double GaussianState::uncertainty_margin() const {
    Eigen::Matrix4cd m = cov.cast<std::complex<double>>();
    m += std::complex<double>(0.0, 0.5) * symplectic_form4().cast<std::complex<double>>();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4cd> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

void GaussianState::validate() const {
    if (!mean.allFinite() || !cov.allFinite()) {
        throw numerics_error("GaussianState has non-finite entries");
    }
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
        throw numerics_error("GaussianState covariance not symmetric to 1e-12");
    }
    const double margin = uncertainty_margin();
    if (margin < -1e-9) {
        std::ostringstream oss;
        oss << "uncertainty relation violated: min eig of cov + (i/2) Sigma = " << margin;
        throw numerics_error(oss.str());
    }
}

Generator build_generator(const ModelSpec& spec) {
    spec.validate();
    Generator gen;

    const double g1 = spec.coupling1();
    const double g2 = spec.coupling2();
    if (std::sqrt(g1 * g2) >= 1.0) {
        throw overcoupled_error("drift coupling sqrt(g1 g2) >= 1: lower mode inverted");
    }

    if (!spec.decoherence_only) {
        // dx_k = p_k, dp_k = -x_k - (gain) x_other
        gen.A(0, 1) = 1.0;
        gen.A(1, 0) = -1.0;
        gen.A(2, 3) = 1.0;
        gen.A(3, 2) = -1.0;
        gen.A(1, 2) = -g1;
        gen.A(3, 0) = -g2;
    }

    if (spec.variant == MasterEquation::MinimalME) {
        // -(1/4) sum Y_ij [x_i,[x_j,rho]] with Y = (2g - eps) I contributes
        // momentum diffusion Y_kk / 2 per mode and nothing to the drift.
        const double dpp = spec.g - 0.5 * spec.epsilon;
        gen.D(1, 1) = dpp;
        gen.D(3, 3) = dpp;
    } else {
        const double G = spec.Gamma;
        gen.D(1, 1) = G + spec.chi2 * spec.chi2 / (4.0 * G);
        gen.D(3, 3) = G + spec.chi1 * spec.chi1 / (4.0 * G);
    }

    if (spec.qbm && !spec.decoherence_only) {
        gen.A(1, 1) -= 2.0 * spec.qbm->gamma_diss;
        gen.A(3, 3) -= 2.0 * spec.qbm->gamma_diss;
    }
    if (spec.qbm) {
        gen.D(1, 1) += 2.0 * spec.qbm->gamma_diss * spec.qbm->T_bath;
        gen.D(3, 3) += 2.0 * spec.qbm->gamma_diss * spec.qbm->T_bath;
    }
    return gen;
}

namespace {

struct MomentDerivative {
    Vec4 dmean;
    Mat4 dcov;
};

MomentDerivative moment_rhs(const Generator& gen, const Vec4& mean, const Mat4& cov) {
    MomentDerivative d;
    d.dmean = gen.A * mean;
    d.dcov = gen.A * cov + cov * gen.A.transpose() + gen.D;
    return d;
}

}  // namespace

std::vector<GaussianState> propagate(const GaussianState& initial, const Generator& gen,
                                     double dt, int n_steps) {
    if (!(dt > 0.0)) throw config_error("dt must be positive");
    if (n_steps < 0) throw config_error("n_steps must be non-negative");
    const double a_norm = gen.A.cwiseAbs().rowwise().sum().maxCoeff();
    if (dt * a_norm >= 0.1) {
        throw config_error("dt * ||A|| >= 0.1: reduce the step for a stable RK4 run");
    }
    initial.validate();

    std::vector<GaussianState> out;
    out.reserve(static_cast<std::size_t>(n_steps) + 1);
    out.push_back(initial);

    Vec4 m = initial.mean;
    Mat4 v = initial.cov;
    for (int step = 0; step < n_steps; ++step) {
        const auto k1 = moment_rhs(gen, m, v);
        const auto k2 = moment_rhs(gen, m + 0.5 * dt * k1.dmean, v + 0.5 * dt * k1.dcov);
        const auto k3 = moment_rhs(gen, m + 0.5 * dt * k2.dmean, v + 0.5 * dt * k2.dcov);
        const auto k4 = moment_rhs(gen, m + dt * k3.dmean, v + dt * k3.dcov);
        m += (dt / 6.0) * (k1.dmean + 2.0 * k2.dmean + 2.0 * k3.dmean + k4.dmean);
        v += (dt / 6.0) * (k1.dcov + 2.0 * k2.dcov + 2.0 * k3.dcov + k4.dcov);
        v = 0.5 * (v + v.transpose());

        GaussianState state;
        state.mean = m;
        state.cov = v;
        try {
            state.validate();
        } catch (const numerics_error& e) {
            std::ostringstream oss;
            oss << "propagate aborted at step " << step + 1 << ": " << e.what();
            throw numerics_error(oss.str());
        }
        out.push_back(state);
    }
    return out;
}

PhononNumbers phonon_numbers(const GaussianState& state) {
    state.validate();
    PhononNumbers n;
    n.n1 = 0.5 * (state.cov(0, 0) + state.cov(1, 1) +
                  state.mean(0) * state.mean(0) + state.mean(1) * state.mean(1) - 1.0);
    n.n2 = 0.5 * (state.cov(2, 2) + state.cov(3, 3) +
                  state.mean(2) * state.mean(2) + state.mean(3) * state.mean(3) - 1.0);
    return n;
}

Mat4 solve_lyapunov(const Mat4& A, const Mat4& D) {
    Eigen::EigenSolver<Mat4> es(A);
    const double max_real = es.eigenvalues().real().maxCoeff();
    if (max_real >= -1e-12) {
        throw numerics_error("drift matrix is not strictly stable: no steady state exists");
    }

    // vec(A s + s A^T) = (I (x) A + A (x) I) vec(s) for column-major vec.
    Eigen::Matrix<double, 16, 16> big = Eigen::Matrix<double, 16, 16>::Zero();
    for (int i = 0; i < 4; ++i) {
        big.block<4, 4>(4 * i, 4 * i) += A;
        for (int j = 0; j < 4; ++j) {
            for (int k = 0; k < 4; ++k) {
                big(4 * j + k, 4 * i + k) += A(j, i);
            }
        }
    }
    Eigen::Matrix<double, 16, 1> rhs;
    for (int col = 0; col < 4; ++col)
        for (int row = 0; row < 4; ++row) rhs(4 * col + row) = -D(row, col);

    const Eigen::Matrix<double, 16, 1> sol = big.fullPivLu().solve(rhs);
    Mat4 sigma;
    for (int col = 0; col < 4; ++col)
        for (int row = 0; row < 4; ++row) sigma(row, col) = sol(4 * col + row);
    sigma = 0.5 * (sigma + sigma.transpose());

    const double residual = (A * sigma + sigma * A.transpose() + D).norm();
    if (residual >= 1e-10) {
        std::ostringstream oss;
        oss << "Lyapunov residual " << residual << " exceeds 1e-10";
        throw numerics_error(oss.str());
    }
    return sigma;
}

GaussianState steady_state_lyapunov(const Generator& gen) {
    GaussianState state;
    state.cov = solve_lyapunov(gen.A, gen.D);
    state.validate(); // rejects unphysical fixed points such as sigma = 0 from D = 0
    return state;
}

}  // namespace gravdec
