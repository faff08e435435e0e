#include "gravdec/fock.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <sstream>

namespace gravdec {

namespace {

using Complex = std::complex<double>;
constexpr Complex kI{0.0, 1.0};

// The two-mode index convention is row = n1 * N + n2 with column-major
// storage, so mode-2 (the fast index) left-multiplications collapse to one
// big GEMM and the other three primitives to N or N^2 small ones. All cost
// O(N^5) instead of the O(N^6) of a full-space product.

// out = (M (x) I) rho : out[(n1,n2),c] = sum_k M(n1,k) rho[(k,n2),c]
void apply_left_mode1(const CMat& M, const CMat& rho, CMat& out) {
    const int N = static_cast<int>(M.rows());
    out.resize(rho.rows(), rho.cols());
    for (int c = 0; c < N * N; ++c) {
        Eigen::Map<const CMat> vc(rho.data() + static_cast<std::ptrdiff_t>(c) * N * N, N, N);
        Eigen::Map<CMat> oc(out.data() + static_cast<std::ptrdiff_t>(c) * N * N, N, N);
        oc.noalias() = vc * M.transpose();
    }
}

// out = (I (x) M) rho : out[(n1,n2),c] = sum_k M(n2,k) rho[(n1,k),c]
void apply_left_mode2(const CMat& M, const CMat& rho, CMat& out) {
    const int N = static_cast<int>(M.rows());
    out.resize(rho.rows(), rho.cols());
    const std::ptrdiff_t wide = static_cast<std::ptrdiff_t>(N) * N * N;
    Eigen::Map<const CMat> w(rho.data(), N, wide);
    Eigen::Map<CMat> ow(out.data(), N, wide);
    ow.noalias() = M * w;
}

// out = rho (M (x) I) : out[r,(j1,j2)] = sum_k rho[r,(k,j2)] M(k,j1)
void apply_right_mode1(const CMat& M, const CMat& rho, CMat& out) {
    const int N = static_cast<int>(M.rows());
    const int dim = N * N;
    out.resize(dim, dim);
    using StrideT = Eigen::OuterStride<>;
    const std::ptrdiff_t col_stride = static_cast<std::ptrdiff_t>(N) * dim;
    for (int j2 = 0; j2 < N; ++j2) {
        Eigen::Map<const CMat, 0, StrideT> v(rho.data() + static_cast<std::ptrdiff_t>(j2) * dim,
                                             dim, N, StrideT(col_stride));
        Eigen::Map<CMat, 0, StrideT> ov(out.data() + static_cast<std::ptrdiff_t>(j2) * dim,
                                        dim, N, StrideT(col_stride));
        ov.noalias() = v * M;
    }
}

// out = rho (I (x) M) : out[r,(j1,j2)] = sum_k rho[r,(j1,k)] M(k,j2)
void apply_right_mode2(const CMat& M, const CMat& rho, CMat& out) {
    const int N = static_cast<int>(M.rows());
    const int dim = N * N;
    out.resize(dim, dim);
    for (int j1 = 0; j1 < N; ++j1) {
        out.middleCols(j1 * N, N).noalias() = rho.middleCols(j1 * N, N) * M;
    }
}

struct Workspace {
    CMat a1, a2, b1, b2, t1, t2, rhs, k1, k2, k3, k4, stage;
};

double expect_mode1(const CMat& M, const CMat& rho, Workspace& ws) {
    apply_left_mode1(M, rho, ws.t1);
    return ws.t1.trace().real();
}

double expect_mode2(const CMat& M, const CMat& rho, Workspace& ws) {
    apply_left_mode2(M, rho, ws.t1);
    return ws.t1.trace().real();
}

double expect_cross(const CMat& M1, const CMat& M2, const CMat& rho, Workspace& ws) {
    apply_left_mode1(M1, rho, ws.t1);
    apply_left_mode2(M2, ws.t1, ws.t2);
    return ws.t2.trace().real();
}

// Shared decoherence piece: out += c * (2 X rho X - X^2 rho - rho X^2) on the
// chosen mode.
void add_position_dephasing(int mode, double c, const ModeOperators& ops, const CMat& rho,
                            CMat& out, Workspace& ws) {
    if (c == 0.0) return;
    if (mode == 1) {
        apply_left_mode1(ops.x, rho, ws.t1);
        apply_right_mode1(ops.x, ws.t1, ws.t2);
        out += (2.0 * c) * ws.t2;
        apply_left_mode1(ops.x2, rho, ws.t2);
        out -= c * ws.t2;
        apply_right_mode1(ops.x2, rho, ws.t2);
        out -= c * ws.t2;
    } else {
        apply_left_mode2(ops.x, rho, ws.t1);
        apply_right_mode2(ops.x, ws.t1, ws.t2);
        out += (2.0 * c) * ws.t2;
        apply_left_mode2(ops.x2, rho, ws.t2);
        out -= c * ws.t2;
        apply_right_mode2(ops.x2, rho, ws.t2);
        out -= c * ws.t2;
    }
}

// QBM friction and thermal diffusion on one mode:
//   -i gamma (xp rho + x rho p - p rho x - rho px) - gamma T [x,[x,rho]]
void add_qbm(int mode, double gamma, double T, bool include_friction, const ModeOperators& ops,
             const CMat& rho, CMat& out, Workspace& ws) {
    if (gamma == 0.0) return;
    auto left = (mode == 1) ? apply_left_mode1 : apply_left_mode2;
    auto right = (mode == 1) ? apply_right_mode1 : apply_right_mode2;
    if (include_friction) {
        const CMat xp = ops.x * ops.p;
        const CMat px = ops.p * ops.x;
        left(xp, rho, ws.t1);
        out -= kI * gamma * ws.t1;
        left(ops.x, rho, ws.t1);
        right(ops.p, ws.t1, ws.t2);
        out -= kI * gamma * ws.t2;
        left(ops.p, rho, ws.t1);
        right(ops.x, ws.t1, ws.t2);
        out += kI * gamma * ws.t2;
        right(px, rho, ws.t1);
        out += kI * gamma * ws.t1;
    }
    add_position_dephasing(mode, gamma * T, ops, rho, out, ws);
}

// d rho/dt for the minimal (Diosi-equivalent) master equation:
//   -i[H0 + g x1 x2, rho] - c sum_k [x_k,[x_k,rho]],  c = (2g - eps)/4.
void minimal_rhs(const ModelSpec& spec, const ModeOperators& ops, const CMat& rho, CMat& out,
                 Workspace& ws) {
    out.setZero(rho.rows(), rho.cols());
    if (!spec.decoherence_only) {
        apply_left_mode1(ops.h, rho, ws.t1);
        out -= kI * ws.t1;
        apply_left_mode2(ops.h, rho, ws.t1);
        out -= kI * ws.t1;
        apply_right_mode1(ops.h, rho, ws.t1);
        out += kI * ws.t1;
        apply_right_mode2(ops.h, rho, ws.t1);
        out += kI * ws.t1;
        if (spec.g != 0.0) {
            apply_left_mode1(ops.x, rho, ws.t1);
            apply_left_mode2(ops.x, ws.t1, ws.t2);
            out -= kI * spec.g * ws.t2;
            apply_right_mode1(ops.x, rho, ws.t1);
            apply_right_mode2(ops.x, ws.t1, ws.t2);
            out += kI * spec.g * ws.t2;
        }
    }
    const double c = 0.5 * spec.g - 0.25 * spec.epsilon;
    add_position_dephasing(1, c, ops, rho, out, ws);
    add_position_dephasing(2, c, ops, rho, out, ws);
    if (spec.qbm) {
        add_qbm(1, spec.qbm->gamma_diss, spec.qbm->T_bath, !spec.decoherence_only, ops, rho, out, ws);
        add_qbm(2, spec.qbm->gamma_diss, spec.qbm->T_bath, !spec.decoherence_only, ops, rho, out, ws);
    }
}

// d rho/dt for the measurement + feed-forward master equation, kept as an
// independent code path from minimal_rhs:
//   -i[H0, rho]
//   - (i/2)(chi1 + chi2) [x1 x2, rho]
//   - (i/2)(chi1 - chi2) (x2 rho x1 - x1 rho x2)
//   - (Gamma/2 + chi2^2/(8 Gamma)) [x1,[x1,rho]]
//   - (Gamma/2 + chi1^2/(8 Gamma)) [x2,[x2,rho]]
// Gain chi_k rides on record k and pushes the other oscillator, which is why
// chi2 sets the noise floor of oscillator 1.
void feedback_rhs(const ModelSpec& spec, const ModeOperators& ops, const CMat& rho, CMat& out,
                  Workspace& ws) {
    out.setZero(rho.rows(), rho.cols());
    const double cs = 0.5 * (spec.chi1 + spec.chi2);
    const double ca = 0.5 * (spec.chi1 - spec.chi2);
    if (!spec.decoherence_only) {
        apply_left_mode1(ops.h, rho, ws.t1);
        out -= kI * ws.t1;
        apply_left_mode2(ops.h, rho, ws.t1);
        out -= kI * ws.t1;
        apply_right_mode1(ops.h, rho, ws.t1);
        out += kI * ws.t1;
        apply_right_mode2(ops.h, rho, ws.t1);
        out += kI * ws.t1;

        apply_left_mode1(ops.x, rho, ws.a1);  // x1 rho
        apply_left_mode2(ops.x, rho, ws.a2);  // x2 rho
        apply_right_mode1(ops.x, rho, ws.b1); // rho x1
        apply_right_mode2(ops.x, rho, ws.b2); // rho x2
        if (cs != 0.0) {
            apply_left_mode2(ops.x, ws.a1, ws.t1);  // x2 x1 rho
            out -= kI * cs * ws.t1;
            apply_right_mode2(ops.x, ws.b1, ws.t1); // rho x1 x2
            out += kI * cs * ws.t1;
        }
        if (ca != 0.0) {
            apply_right_mode1(ops.x, ws.a2, ws.t1); // x2 rho x1
            out -= kI * ca * ws.t1;
            apply_right_mode2(ops.x, ws.a1, ws.t1); // x1 rho x2
            out += kI * ca * ws.t1;
        }
    }
    const double G = spec.Gamma;
    add_position_dephasing(1, 0.5 * G + spec.chi2 * spec.chi2 / (8.0 * G), ops, rho, out, ws);
    add_position_dephasing(2, 0.5 * G + spec.chi1 * spec.chi1 / (8.0 * G), ops, rho, out, ws);
    if (spec.qbm) {
        add_qbm(1, spec.qbm->gamma_diss, spec.qbm->T_bath, !spec.decoherence_only, ops, rho, out, ws);
        add_qbm(2, spec.qbm->gamma_diss, spec.qbm->T_bath, !spec.decoherence_only, ops, rho, out, ws);
    }
}

void unconditional_rhs(const ModelSpec& spec, const ModeOperators& ops, const CMat& rho,
                       CMat& out, Workspace& ws) {
    if (spec.variant == MasterEquation::MinimalME) {
        minimal_rhs(spec, ops, rho, out, ws);
    } else {
        feedback_rhs(spec, ops, rho, out, ws);
    }
}

void hermitize(CMat& rho, Workspace& ws) {
    ws.t1 = rho.adjoint();
    rho += ws.t1;
    rho *= 0.5;
}

void check_step_invariants(const FockState& state, const FockConfig& cfg, int step,
                           bool check_positivity, double* max_leakage) {
    try {
        state.validate(cfg, check_positivity);
    } catch (const numerics_error& e) {
        std::ostringstream oss;
        oss << "fock evolution aborted at step " << step << ": " << e.what();
        throw numerics_error(oss.str());
    }
    const double leak = state.leakage();
    if (max_leakage && leak > *max_leakage) *max_leakage = leak;
}

}  // namespace

ModeOperators ModeOperators::build(int N) {
    if (N < 2) throw config_error("ModeOperators: N >= 2 required");
    ModeOperators ops;
    ops.N = N;
    ops.a = CMat::Zero(N, N);
    for (int n = 1; n < N; ++n) ops.a(n - 1, n) = std::sqrt(static_cast<double>(n));
    ops.ad = ops.a.adjoint();
    ops.n = ops.ad * ops.a;
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    ops.x = inv_sqrt2 * (ops.a + ops.ad);
    ops.p = -kI * inv_sqrt2 * (ops.a - ops.ad);
    ops.x2 = ops.x * ops.x;
    ops.p2 = ops.p * ops.p;
    ops.xp_sym = 0.5 * (ops.x * ops.p + ops.p * ops.x);
    ops.h = ops.n + 0.5 * CMat::Identity(N, N);
    return ops;
}

FockState FockState::from_product(const CMat& rho1, const CMat& rho2) {
    const int N = static_cast<int>(rho1.rows());
    if (rho2.rows() != N || rho1.cols() != N || rho2.cols() != N) {
        throw config_error("from_product: mode density matrices must be square and equal size");
    }
    FockState out;
    out.N = N;
    out.rho.resize(N * N, N * N);
    for (int j1 = 0; j1 < N; ++j1)
        for (int i1 = 0; i1 < N; ++i1)
            out.rho.block(i1 * N, j1 * N, N, N) = rho1(i1, j1) * rho2;
    return out;
}

FockState FockState::from_pure(const CVec& psi1, const CVec& psi2) {
    return from_product(psi1 * psi1.adjoint(), psi2 * psi2.adjoint());
}

double FockState::hermiticity_defect() const {
    return (rho - rho.adjoint()).cwiseAbs().maxCoeff();
}

double FockState::min_eigenvalue() const {
    Eigen::SelfAdjointEigenSolver<CMat> es(0.5 * (rho + rho.adjoint()),
                                           Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

double FockState::leakage() const {
    double top1 = 0.0, top2 = 0.0;
    for (int k = 0; k < N; ++k) {
        top1 += rho((N - 1) * N + k, (N - 1) * N + k).real();
        top2 += rho(k * N + (N - 1), k * N + (N - 1)).real();
    }
    return std::max(top1, top2);
}

void FockState::validate(const FockConfig& cfg, bool check_positivity) const {
    if (rho.rows() != N * N || rho.cols() != N * N) {
        throw numerics_error("FockState: dimension mismatch");
    }
    if (!rho.allFinite()) throw numerics_error("FockState: non-finite entries");
    if (hermiticity_defect() > 1e-10) throw numerics_error("FockState: not Hermitian to 1e-10");
    if (std::abs(trace_real() - 1.0) > 1e-8) throw numerics_error("FockState: trace deviates from 1");
    const double leak = leakage();
    if (leak > cfg.leakage_tol) {
        std::ostringstream oss;
        oss << "FockState: truncation leakage " << leak << " exceeds tolerance "
            << cfg.leakage_tol << "; raise N";
        throw numerics_error(oss.str());
    }
    if (check_positivity) {
        const double min_eig = min_eigenvalue();
        if (min_eig < -cfg.negativity_tol) {
            std::ostringstream oss;
            oss << "FockState: negative eigenvalue " << min_eig;
            throw numerics_error(oss.str());
        }
    }
}

CVec fock_vacuum(int N) {
    CVec v = CVec::Zero(N);
    v(0) = 1.0;
    return v;
}

CVec fock_coherent(int N, std::complex<double> alpha) {
    CVec v(N);
    v(0) = 1.0;
    for (int n = 1; n < N; ++n) v(n) = v(n - 1) * alpha / std::sqrt(static_cast<double>(n));
    v.normalize();
    return v;
}

CVec fock_cat(int N, double alpha) {
    CVec v = fock_coherent(N, alpha) + fock_coherent(N, -alpha);
    v.normalize();
    return v;
}

CMat fock_thermal(int N, double nbar) {
    if (nbar < 0.0) throw config_error("fock_thermal: nbar must be non-negative");
    CMat rho = CMat::Zero(N, N);
    const double r = nbar / (1.0 + nbar);
    double w = 1.0;
    double norm = 0.0;
    for (int n = 0; n < N; ++n) {
        rho(n, n) = w;
        norm += w;
        w *= r;
    }
    rho /= norm;
    return rho;
}

FockMoments fock_moments(const FockState& state) {
    const auto ops = ModeOperators::build(state.N);
    Workspace ws;
    FockMoments m;
    const CMat& rho = state.rho;

    const double x1 = expect_mode1(ops.x, rho, ws);
    const double p1 = expect_mode1(ops.p, rho, ws);
    const double x2 = expect_mode2(ops.x, rho, ws);
    const double p2 = expect_mode2(ops.p, rho, ws);
    m.mean << x1, p1, x2, p2;

    const double xx1 = expect_mode1(ops.x2, rho, ws);
    const double pp1 = expect_mode1(ops.p2, rho, ws);
    const double xp1 = expect_mode1(ops.xp_sym, rho, ws);
    const double xx2 = expect_mode2(ops.x2, rho, ws);
    const double pp2 = expect_mode2(ops.p2, rho, ws);
    const double xp2 = expect_mode2(ops.xp_sym, rho, ws);
    const double x1x2 = expect_cross(ops.x, ops.x, rho, ws);
    const double x1p2 = expect_cross(ops.x, ops.p, rho, ws);
    const double p1x2 = expect_cross(ops.p, ops.x, rho, ws);
    const double p1p2 = expect_cross(ops.p, ops.p, rho, ws);

    m.cov(0, 0) = xx1 - x1 * x1;
    m.cov(1, 1) = pp1 - p1 * p1;
    m.cov(0, 1) = m.cov(1, 0) = xp1 - x1 * p1;
    m.cov(2, 2) = xx2 - x2 * x2;
    m.cov(3, 3) = pp2 - p2 * p2;
    m.cov(2, 3) = m.cov(3, 2) = xp2 - x2 * p2;
    m.cov(0, 2) = m.cov(2, 0) = x1x2 - x1 * x2;
    m.cov(0, 3) = m.cov(3, 0) = x1p2 - x1 * p2;
    m.cov(1, 2) = m.cov(2, 1) = p1x2 - p1 * x2;
    m.cov(1, 3) = m.cov(3, 1) = p1p2 - p1 * p2;

    m.n1 = expect_mode1(ops.n, rho, ws);
    m.n2 = expect_mode2(ops.n, rho, ws);
    return m;
}

FockTrajectory evolve_unconditional(const FockState& rho0, const ModelSpec& spec, double dt,
                                    int n_steps, const FockConfig& cfg, int store_stride) {
    spec.validate();
    cfg.validate();
    if (!(dt > 0.0)) throw config_error("evolve_unconditional: dt must be positive");
    if (n_steps < 0) throw config_error("evolve_unconditional: n_steps must be non-negative");
    if (store_stride < 1 || (n_steps > 0 && n_steps % store_stride != 0)) {
        throw config_error("evolve_unconditional: store_stride must divide n_steps");
    }
    if (rho0.N != cfg.N) throw config_error("evolve_unconditional: state/config N mismatch");
    rho0.validate(cfg);

    const auto ops = ModeOperators::build(cfg.N);
    Workspace ws;

    FockTrajectory out;
    FockState state = rho0;
    out.max_leakage = state.leakage();
    out.times.push_back(0.0);
    out.moments.push_back(fock_moments(state));
    if (cfg.store_states) out.states.push_back(state);

    for (int step = 0; step < n_steps; ++step) {
        unconditional_rhs(spec, ops, state.rho, ws.k1, ws);
        ws.stage = state.rho + (0.5 * dt) * ws.k1;
        unconditional_rhs(spec, ops, ws.stage, ws.k2, ws);
        ws.stage = state.rho + (0.5 * dt) * ws.k2;
        unconditional_rhs(spec, ops, ws.stage, ws.k3, ws);
        ws.stage = state.rho + dt * ws.k3;
        unconditional_rhs(spec, ops, ws.stage, ws.k4, ws);
        state.rho += (dt / 6.0) * (ws.k1 + 2.0 * ws.k2 + 2.0 * ws.k3 + ws.k4);
        hermitize(state.rho, ws);

        const bool check_pos = ((step + 1) % cfg.positivity_check_stride == 0) ||
                               (step + 1 == n_steps);
        check_step_invariants(state, cfg, step + 1, check_pos, &out.max_leakage);

        if ((step + 1) % store_stride == 0) {
            out.times.push_back((step + 1) * dt);
            out.moments.push_back(fock_moments(state));
            if (cfg.store_states) out.states.push_back(state);
        }
    }
    out.final_state = std::move(state);
    return out;
}

FockConditionalTrajectory evolve_conditional(const FockState& rho0, const ModelSpec& spec,
                                             const WienerPath& path, double Gamma1,
                                             double Gamma2, const FockConfig& cfg,
                                             int store_stride) {
    spec.validate();
    cfg.validate();
    if (spec.variant != MasterEquation::FeedbackME) {
        throw config_error("evolve_conditional: spec must be FeedbackME with explicit gains");
    }
    if (spec.qbm) throw config_error("evolve_conditional: no QBM term in the conditional model");
    if (!(Gamma1 > 0.0) || !(Gamma2 > 0.0)) {
        throw config_error("evolve_conditional: measurement rates must be positive");
    }
    const int n_steps = static_cast<int>(path.dw1.size());
    if (path.dw2.size() != path.dw1.size()) {
        throw config_error("evolve_conditional: Wiener path streams differ in length");
    }
    if (store_stride < 1 || n_steps % store_stride != 0) {
        throw config_error("evolve_conditional: store_stride must divide n_steps");
    }
    if (rho0.N != cfg.N) throw config_error("evolve_conditional: state/config N mismatch");
    rho0.validate(cfg);

    const auto ops = ModeOperators::build(cfg.N);
    Workspace ws;
    const double dt = path.dt;
    const double rec_noise1 = std::sqrt(1.0 / (4.0 * Gamma1));
    const double rec_noise2 = std::sqrt(1.0 / (4.0 * Gamma2));
    const double cond_gain1 = std::sqrt(Gamma1);
    const double cond_gain2 = std::sqrt(Gamma2);

    FockConditionalTrajectory out;
    FockState state = rho0;
    out.max_leakage = state.leakage();
    const int n_stored = n_steps / store_stride;
    out.dJ1.assign(n_stored, 0.0);
    out.dJ2.assign(n_stored, 0.0);
    out.times.push_back(0.0);
    out.moments.push_back(fock_moments(state));
    if (cfg.store_states) out.states.push_back(state);

    double trace_drift = 0.0;
    for (int step = 0; step < n_steps; ++step) {
        const double dw1 = path.dw1[static_cast<std::size_t>(step)];
        const double dw2 = path.dw2[static_cast<std::size_t>(step)];

        apply_left_mode1(ops.x, state.rho, ws.a1);  // x1 rho
        apply_left_mode2(ops.x, state.rho, ws.a2);  // x2 rho
        apply_right_mode1(ops.x, state.rho, ws.b1); // rho x1
        apply_right_mode2(ops.x, state.rho, ws.b2); // rho x2
        const double mean_x1 = ws.a1.trace().real();
        const double mean_x2 = ws.a2.trace().real();

        const double dj1 = mean_x1 * dt + rec_noise1 * dw1;
        const double dj2 = mean_x2 * dt + rec_noise2 * dw2;

        // Deterministic part: free evolution plus measurement back-action.
        ws.rhs.setZero(state.rho.rows(), state.rho.cols());
        apply_left_mode1(ops.h, state.rho, ws.t1);
        ws.rhs -= kI * ws.t1;
        apply_left_mode2(ops.h, state.rho, ws.t1);
        ws.rhs -= kI * ws.t1;
        apply_right_mode1(ops.h, state.rho, ws.t1);
        ws.rhs += kI * ws.t1;
        apply_right_mode2(ops.h, state.rho, ws.t1);
        ws.rhs += kI * ws.t1;
        add_position_dephasing(1, 0.5 * Gamma1, ops, state.rho, ws.rhs, ws);
        add_position_dephasing(2, 0.5 * Gamma2, ops, state.rho, ws.rhs, ws);
        ws.k1 = dt * ws.rhs;

        // Classical feedback: -i [chi1 dJ1 x2 + chi2 dJ2 x1, rho].
        ws.k1 -= kI * (spec.chi1 * dj1) * (ws.a2 - ws.b2);
        ws.k1 -= kI * (spec.chi2 * dj2) * (ws.a1 - ws.b1);

        // Conditioning: sqrt(Gamma_k) dW_k (x_k rho + rho x_k - 2<x_k> rho).
        ws.k1 += (cond_gain1 * dw1) * (ws.a1 + ws.b1 - 2.0 * mean_x1 * state.rho);
        ws.k1 += (cond_gain2 * dw2) * (ws.a2 + ws.b2 - 2.0 * mean_x2 * state.rho);

        state.rho += ws.k1;
        hermitize(state.rho, ws);
        const double tr = state.rho.trace().real();
        trace_drift += std::abs(tr - 1.0);
        state.rho /= tr;

        const int bucket = step / store_stride;
        out.dJ1[bucket] += dj1;
        out.dJ2[bucket] += dj2;

        const bool check_pos = ((step + 1) % cfg.positivity_check_stride == 0) ||
                               (step + 1 == n_steps);
        check_step_invariants(state, cfg, step + 1, check_pos, &out.max_leakage);

        if ((step + 1) % store_stride == 0) {
            out.times.push_back((step + 1) * dt);
            out.moments.push_back(fock_moments(state));
            if (cfg.store_states) out.states.push_back(state);
        }
    }
    out.trace_drift_per_unit_time = trace_drift / (n_steps * dt);
    out.final_state = std::move(state);
    return out;
}

CoherenceDecayResult coherence_decay_probe(double delta_x, const ModelSpec& spec, double dt,
                                           int n_steps, const FockConfig& cfg) {
    spec.validate();
    cfg.validate();
    if (spec.variant != MasterEquation::MinimalME) {
        throw config_error("coherence_decay_probe: probe is defined for the minimal model");
    }
    if (delta_x < 0.0) throw config_error("coherence_decay_probe: delta_x must be non-negative");
    if (!(dt > 0.0) || n_steps < 2) {
        throw config_error("coherence_decay_probe: need dt > 0 and at least two steps");
    }

    const int N = cfg.N;
    const auto ops = ModeOperators::build(N);
    const double c = 0.5 * spec.g - 0.25 * spec.epsilon; // rate in front of (x - x')^2
    const double alpha = delta_x / (2.0 * std::sqrt(2.0));

    // Fringe observable: displacement along x by delta_x. Built from the
    // spectral decomposition of p, which is exact within the truncation.
    Eigen::SelfAdjointEigenSolver<CMat> es(ops.p);
    CVec phase(N);
    for (int k = 0; k < N; ++k) {
        phase(k) = std::exp(kI * delta_x * es.eigenvalues()(k));
    }
    const CMat displacement =
        es.eigenvectors() * phase.asDiagonal() * es.eigenvectors().adjoint();

    const CVec plus = fock_coherent(N, alpha);
    const CVec minus = fock_coherent(N, -alpha);
    CVec cat = plus + minus;
    cat.normalize();
    CMat rho = cat * cat.adjoint();

    CoherenceDecayResult out;
    out.expected_rate = c * delta_x * delta_x;

    auto record = [&](double t) {
        out.times.push_back(t);
        out.fringe_amplitude.push_back(std::abs((rho * displacement).trace()));
        const Complex cross = (plus.adjoint() * rho * minus).value();
        const double pop_p = (plus.adjoint() * rho * plus).value().real();
        const double pop_m = (minus.adjoint() * rho * minus).value().real();
        out.overlap_coherence.push_back(std::abs(cross) / std::sqrt(pop_p * pop_m));
    };
    record(0.0);

    // Decoherence term alone, single mode: drho/dt = -c [x,[x,rho]].
    auto rhs = [&](const CMat& r) -> CMat {
        return -c * (ops.x2 * r - 2.0 * ops.x * r * ops.x + r * ops.x2);
    };
    for (int step = 0; step < n_steps; ++step) {
        const CMat k1 = rhs(rho);
        const CMat k2 = rhs(rho + (0.5 * dt) * k1);
        const CMat k3 = rhs(rho + (0.5 * dt) * k2);
        const CMat k4 = rhs(rho + dt * k3);
        rho += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        rho = 0.5 * (rho + rho.adjoint()).eval();
        const double top = rho(N - 1, N - 1).real();
        if (top > cfg.leakage_tol) {
            throw numerics_error("coherence_decay_probe: truncation leakage; raise N");
        }
        record((step + 1) * dt);
    }

    // Least-squares slope of ln F(t); the decay is exponential so the
    // residual doubles as the conclusiveness check.
    if (delta_x == 0.0 || c == 0.0) {
        out.fitted_rate = 0.0;
        out.fit_residual = 0.0;
        out.conclusive = true;
        return out;
    }
    std::vector<double> logf(out.times.size());
    for (std::size_t i = 0; i < out.times.size(); ++i) {
        if (out.fringe_amplitude[i] <= 1e-12) {
            throw numerics_error("coherence_decay_probe: fringe amplitude underflow; shorten run");
        }
        logf[i] = std::log(out.fringe_amplitude[i]);
    }
    const double n = static_cast<double>(out.times.size());
    double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
    for (std::size_t i = 0; i < out.times.size(); ++i) {
        st += out.times[i];
        sy += logf[i];
        stt += out.times[i] * out.times[i];
        sty += out.times[i] * logf[i];
    }
    const double slope = (n * sty - st * sy) / (n * stt - st * st);
    const double intercept = (sy - slope * st) / n;
    double max_resid = 0.0;
    for (std::size_t i = 0; i < out.times.size(); ++i) {
        max_resid = std::max(max_resid, std::abs(logf[i] - (intercept + slope * out.times[i])));
    }
    out.fitted_rate = -slope;
    out.fit_residual = max_resid;
    out.conclusive = max_resid < 1e-2;
    return out;
}

double trace_distance(const FockState& a, const FockState& b) {
    if (a.N != b.N) throw config_error("trace_distance: dimension mismatch");
    CMat diff = a.rho - b.rho;
    diff = 0.5 * (diff + diff.adjoint()).eval();
    Eigen::SelfAdjointEigenSolver<CMat> es(diff, Eigen::EigenvaluesOnly);
    return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

double pure_state_fidelity(const FockState& rho, const CVec& psi) {
    if (psi.size() != rho.rho.rows()) throw config_error("pure_state_fidelity: size mismatch");
    return (psi.adjoint() * rho.rho * psi).value().real();
}

}  // namespace gravdec
