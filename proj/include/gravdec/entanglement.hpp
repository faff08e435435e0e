#pragma once

#include <Eigen/Dense>
#include <vector>

#include "gravdec/gaussian.hpp"

namespace gravdec {

using Mat2 = Eigen::Matrix2d;

// Single-mode symplectic form [[0,1],[-1,0]].
Mat2 symplectic_form2();

// Non-entangling-channel test: the Hermitian matrix Y - 2ig sigma2 must have
// no negative eigenvalues. Eigenvalues are computed in closed form.
struct ChannelCriterionResult {
    double eig_min = 0.0;
    double eig_max = 0.0;
    bool non_entangling = false;
};

ChannelCriterionResult channel_criterion(const Mat2& Y, double g);

// Logarithmic negativity of a two-mode Gaussian state under the vacuum = I/2
// convention: E_N = max(0, -log2(2 nu)) with nu the smallest symplectic
// eigenvalue of the partial-transpose covariance (momentum flip on mode 2).
double log_negativity(const GaussianState& state);

// Smallest partial-transpose symplectic eigenvalue itself; the state is
// separable iff nu >= 1/2 (PPT, exact for 1x1 mode Gaussian states).
double pt_symplectic_eigenvalue(const GaussianState& state);

std::vector<double> entanglement_along_trajectory(const std::vector<GaussianState>& states);

}  // namespace gravdec
