#include "gravdec/entanglement.hpp"

#include <cmath>

namespace gravdec {

Mat2 symplectic_form2() {
    Mat2 s;
    s << 0.0, 1.0, -1.0, 0.0;
    return s;
}

ChannelCriterionResult channel_criterion(const Mat2& Y, double g) {
    if ((Y - Y.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
        throw config_error("channel_criterion: Y must be symmetric");
    }
    // M = Y - 2ig sigma2 = [[Y11, Y12 - 2ig], [Y12 + 2ig, Y22]] is Hermitian;
    // its eigenvalues are tr/2 +- sqrt((Y11-Y22)^2/4 + Y12^2 + 4g^2).
    const double half_trace = 0.5 * (Y(0, 0) + Y(1, 1));
    const double half_gap = 0.5 * (Y(0, 0) - Y(1, 1));
    const double radius = std::sqrt(half_gap * half_gap + Y(0, 1) * Y(0, 1) + 4.0 * g * g);
    ChannelCriterionResult out;
    out.eig_min = half_trace - radius;
    out.eig_max = half_trace + radius;
    out.non_entangling = out.eig_min >= -1e-12;
    return out;
}

double pt_symplectic_eigenvalue(const GaussianState& state) {
    state.validate();
    // Partial transpose flips p2. For cov = [[A, C], [C^T, B]] the smallest
    // symplectic eigenvalue obeys 2 nu^2 = delta - sqrt(delta^2 - 4 det cov)
    // with delta = det A + det B - 2 det C.
    const Mat2 a = state.cov.block<2, 2>(0, 0);
    const Mat2 b = state.cov.block<2, 2>(2, 2);
    const Mat2 c = state.cov.block<2, 2>(0, 2);
    const double delta = a.determinant() + b.determinant() - 2.0 * c.determinant();
    const double det_cov = state.cov.determinant();
    double disc = delta * delta - 4.0 * det_cov;
    if (disc < 0.0) disc = 0.0; // roundoff guard near degenerate spectra
    double nu_sq = 0.5 * (delta - std::sqrt(disc));
    if (nu_sq < 0.0) nu_sq = 0.0;
    return std::sqrt(nu_sq);
}

double log_negativity(const GaussianState& state) {
    const double nu = pt_symplectic_eigenvalue(state);
    if (nu <= 0.0) throw numerics_error("log_negativity: degenerate covariance");
    const double en = -std::log2(2.0 * nu);
    return en > 0.0 ? en : 0.0;
}

std::vector<double> entanglement_along_trajectory(const std::vector<GaussianState>& states) {
    std::vector<double> out;
    out.reserve(states.size());
    for (const auto& s : states) out.push_back(log_negativity(s));
    return out;
}

}  // namespace gravdec
