#include "gravdec/params.hpp"

#include <cmath>
#include <string>

namespace gravdec {

namespace {
constexpr double kPi = 3.14159265358979323846;

void require_positive(double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
        throw config_error(std::string(name) + " must be strictly positive and finite");
    }
}
}  // namespace

void PhysicalSetup::validate() const {
    require_positive(m1, "m1");
    require_positive(m2, "m2");
    require_positive(omega1, "omega1");
    require_positive(omega2, "omega2");
    require_positive(d, "d");
    if (rho) require_positive(*rho, "rho");
    if (r) require_positive(*r, "r");
    if (Q) require_positive(*Q, "Q");
    if (gamma) require_positive(*gamma, "gamma");
    if (T_bath && *T_bath < 0.0) throw config_error("T_bath must be non-negative");

    if (rho && r && !waive_sphere_mass_check) {
        const double m_sphere = (4.0 / 3.0) * kPi * (*rho) * (*r) * (*r) * (*r);
        for (double m : {m1, m2}) {
            if (std::abs(m - m_sphere) > 1e-9 * m_sphere) {
                throw config_error("sphere geometry inconsistent: m_k != (4/3) pi rho r^3");
            }
        }
    }
    if (r && d < 2.0 * (*r)) {
        throw config_error("spheres overlap: require d >= 2r");
    }
}

double coupling_constant(const PhysicalSetup& setup, const Constants& c) {
    setup.validate();
    return 2.0 * c.G * setup.m1 * setup.m2 / (setup.d * setup.d * setup.d);
}

ShiftedFrequencies shifted_frequencies(const PhysicalSetup& setup, double K) {
    setup.validate();
    if (K < 0.0) throw config_error("K must be non-negative");
    ShiftedFrequencies out;
    const double w1sq = setup.omega1 * setup.omega1 - K / setup.m1;
    const double w2sq = setup.omega2 * setup.omega2 - K / setup.m2;
    if (w1sq <= 0.0 || w2sq <= 0.0) {
        throw instability_error("omega_k^2 <= K/m_k: shifted potential is not confining");
    }
    out.Omega1 = std::sqrt(w1sq);
    out.Omega2 = std::sqrt(w2sq);
    return out;
}

NormalModes normal_modes(double Omega1, double Omega2, double m1, double m2, double K) {
    require_positive(Omega1, "Omega1");
    require_positive(Omega2, "Omega2");
    require_positive(m1, "m1");
    require_positive(m2, "m2");
    if (K < 0.0) throw config_error("K must be non-negative");

    const double s = 0.5 * (Omega1 * Omega1 + Omega2 * Omega2);
    const double d1 = Omega1 * Omega1 - Omega2 * Omega2;
    const double disc = 0.5 * std::sqrt(d1 * d1 + 4.0 * K * K / (m1 * m2));
    const double wp2 = s + disc;
    const double wm2 = s - disc;
    if (wm2 <= 0.0) {
        throw overcoupled_error("omega_minus^2 <= 0: coupling exceeds the confining stiffness");
    }
    return {std::sqrt(wp2), std::sqrt(wm2)};
}

ModeSplitting mode_splitting(double K, double m, double omega) {
    require_positive(m, "m");
    require_positive(omega, "omega");
    if (K < 0.0) throw config_error("K must be non-negative");

    ModeSplitting out;
    out.approx = K / (m * omega);
    out.weak_coupling = 2.0 * K / (m * omega * omega) <= 0.1;

    // Exact splitting of the symmetric case: omega_plus = omega,
    // omega_minus = omega sqrt(1 - 2K/(m omega^2)).
    if (K == 0.0) {
        out.exact = 0.0;
        return out;
    }
    const double ratio = 1.0 - 2.0 * K / (m * omega * omega);
    if (ratio <= 0.0) {
        throw overcoupled_error("2K/(m omega^2) >= 1: lower normal mode is imaginary");
    }
    out.exact = omega * (1.0 - std::sqrt(ratio));
    return out;
}

SplittingBound splitting_bound(double rho, double omega, const Constants& c) {
    require_positive(rho, "rho");
    require_positive(omega, "omega");
    SplittingBound out;
    out.printed = kPi * c.G * rho / (6.0 * omega);
    out.consistent = kPi * c.G * rho / (3.0 * omega);
    return out;
}

GravitationalRates gravitational_rates(double K, double m, double omega, double hbar) {
    require_positive(m, "m");
    require_positive(omega, "omega");
    require_positive(hbar, "hbar");
    if (K < 0.0) throw config_error("K must be non-negative");
    GravitationalRates out;
    out.D_grav = hbar * K;
    out.R_grav = K / (2.0 * m * omega);
    out.Lambda_grav = K / (4.0 * m * omega);
    return out;
}

double effective_temperature_from_splitting(double Q, double Delta, const Constants& c) {
    require_positive(Q, "Q");
    if (Delta < 0.0) throw config_error("Delta must be non-negative");
    return c.hbar * Q * Delta / c.kB;
}

double effective_temperature_from_dissipation(double K, double m, double gamma,
                                              const Constants& c) {
    require_positive(m, "m");
    require_positive(gamma, "gamma");
    if (K < 0.0) throw config_error("K must be non-negative");
    return c.hbar * K / (2.0 * m * gamma * c.kB);
}

NoiseMinimum noise_minimizer(double chi) {
    require_positive(chi, "chi");
    // f(Gamma) = Gamma/2 + chi^2/(8 Gamma) has its minimum where the two
    // contributions are equal, Gamma = chi/2, with value chi/2.
    return {chi / 2.0, chi / 2.0};
}

DimensionlessModel dimensionless_model(double K, double m, double omega) {
    require_positive(m, "m");
    require_positive(omega, "omega");
    if (K < 0.0) throw config_error("K must be non-negative");
    DimensionlessModel out;
    out.g = K / (m * omega);
    out.Y11 = 2.0 * out.g;
    out.Y22 = 2.0 * out.g;
    return out;
}

DerivedRates derive_rates(const PhysicalSetup& setup, const Constants& c) {
    setup.validate();
    DerivedRates out;
    out.K = coupling_constant(setup, c);
    const auto shifted = shifted_frequencies(setup, out.K);
    out.Omega1 = shifted.Omega1;
    out.Omega2 = shifted.Omega2;
    const auto modes = normal_modes(out.Omega1, out.Omega2, setup.m1, setup.m2, out.K);
    out.omega_plus = modes.omega_plus;
    out.omega_minus = modes.omega_minus;
    out.Delta = out.omega_plus - out.omega_minus;

    // Rates use the symmetric-case mean values; asymmetric setups get the
    // geometric-mean scale as a representative estimate.
    const double m = std::sqrt(setup.m1 * setup.m2);
    const double omega = std::sqrt(setup.omega1 * setup.omega2);
    out.Delta_approx = out.K / (m * omega);
    out.g = out.Delta_approx;
    const auto rates = gravitational_rates(out.K, m, omega, c.hbar);
    out.D_grav = rates.D_grav;
    out.R_grav = rates.R_grav;
    out.Lambda_grav = rates.Lambda_grav;

    if (setup.Q && setup.gamma) {
        const double implied_Q = quality_factor_from_gamma(omega, *setup.gamma);
        if (std::abs(*setup.Q - implied_Q) > 1e-6 * implied_Q) {
            throw config_error("Q and gamma disagree with Q = omega/(2 gamma)");
        }
    }
    if (setup.Q) {
        out.T_grav = effective_temperature_from_splitting(*setup.Q, out.Delta_approx, c);
    } else if (setup.gamma) {
        out.T_grav = effective_temperature_from_dissipation(out.K, m, *setup.gamma, c);
    }
    return out;
}

}  // namespace gravdec
