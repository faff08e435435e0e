#pragma once

#include <optional>

#include "gravdec/constants.hpp"
#include "gravdec/errors.hpp"

namespace gravdec {

// SI description of the two-resonator experiment. Masses hang as harmonic
// oscillators along a common axis, centre separation d. Optional sphere
// geometry (rho, r) and dissipation data (Q, gamma, T_bath) feed the
// density-bound and effective-temperature estimates.
struct PhysicalSetup {
    double m1 = 0.0;     // kg
    double m2 = 0.0;     // kg
    double omega1 = 0.0; // rad/s, bare frequency
    double omega2 = 0.0; // rad/s
    double d = 0.0;      // m, centre separation
    std::optional<double> rho;    // kg/m^3
    std::optional<double> r;      // m, sphere radius
    std::optional<double> Q;      // quality factor
    std::optional<double> gamma;  // 1/s, amplitude dissipation rate
    std::optional<double> T_bath; // K
    bool waive_sphere_mass_check = false;

    // Throws config_error on violated invariants:
    //  - all of m1, m2, omega1, omega2, d strictly positive
    //  - if rho and r both given, m_k == (4/3) pi rho r^3 to 1e-9 relative
    //    (unless waived)
    //  - if r given, d >= 2r (non-overlapping spheres)
    void validate() const;
};

// Everything the closed-form layer derives from a PhysicalSetup. Frequencies
// in rad/s, rates in 1/s, K in kg/s^2, D_grav in J kg / s^2 (= hbar * K).
struct DerivedRates {
    double K = 0.0;
    double Omega1 = 0.0;
    double Omega2 = 0.0;
    double omega_plus = 0.0;
    double omega_minus = 0.0;
    double Delta = 0.0;        // exact omega_plus - omega_minus
    double Delta_approx = 0.0; // K / (m omega), weak-coupling form
    double g = 0.0;            // K / (m omega), 1/s
    double D_grav = 0.0;
    double R_grav = 0.0;
    double Lambda_grav = 0.0;
    std::optional<double> T_grav; // K, present when Q or gamma available
};

// K = 2 G m1 m2 / d^3, the gravitational spring constant between the masses.
double coupling_constant(const PhysicalSetup& setup, const Constants& c = codata2018);

struct ShiftedFrequencies {
    double Omega1 = 0.0;
    double Omega2 = 0.0;
};

// Omega_k = sqrt(omega_k^2 - K/m_k). Throws instability_error when the
// quadratic correction destroys the local minimum.
ShiftedFrequencies shifted_frequencies(const PhysicalSetup& setup, double K);

struct NormalModes {
    double omega_plus = 0.0;
    double omega_minus = 0.0;
};

// Both roots of
//   omega_pm^2 = (Omega1^2+Omega2^2)/2
//                +- (1/2) sqrt((Omega1^2-Omega2^2)^2 + 4K^2/(m1 m2)).
// Throws overcoupled_error when omega_minus^2 <= 0.
NormalModes normal_modes(double Omega1, double Omega2, double m1, double m2, double K);

struct ModeSplitting {
    double approx = 0.0; // K / (m omega)
    double exact = 0.0;  // omega_plus - omega_minus, symmetric setup
    bool weak_coupling = true; // false when 2K/(m omega^2) > 0.1
};

// Normal-mode splitting for the symmetric case m1=m2=m, omega1=omega2=omega.
ModeSplitting mode_splitting(double K, double m, double omega);

struct SplittingBound {
    double printed = 0.0;    // pi G rho / (6 omega), the quoted bound
    double consistent = 0.0; // pi G rho / (3 omega), from K=2Gm^2/d^3 at d=2r
};

// Density bound on the splitting for touching spheres. The quoted value and
// the one implied by the coupling-constant route differ by 2; both are
// reported, the quoted one is the reference.
SplittingBound splitting_bound(double rho, double omega, const Constants& c = codata2018);

struct GravitationalRates {
    double D_grav = 0.0;      // hbar K, momentum diffusion
    double R_grav = 0.0;      // K / (2 m omega), phonon heating rate
    double Lambda_grav = 0.0; // K / (4 m omega), position decoherence rate
};

GravitationalRates gravitational_rates(double K, double m, double omega, double hbar);

// k_B T_grav = hbar Q Delta. The quality-factor route; this is the
// acceptance-level estimate.
double effective_temperature_from_splitting(double Q, double Delta,
                                            const Constants& c = codata2018);

// T_grav = hbar K / (2 m gamma k_B), the dissipation-rate route. Agrees with
// the splitting route exactly under Q = omega/(2 gamma) and Delta = K/(m omega).
double effective_temperature_from_dissipation(double K, double m, double gamma,
                                              const Constants& c = codata2018);

// Adopted convention relating quality factor and dissipation rate.
inline double quality_factor_from_gamma(double omega, double gamma) {
    return omega / (2.0 * gamma);
}
inline double gamma_from_quality_factor(double omega, double Q) {
    return omega / (2.0 * Q);
}

struct NoiseMinimum {
    double Gamma_opt = 0.0;         // chi / 2
    double total_noise_coeff = 0.0; // chi / 2
};

// Minimizes f(Gamma) = Gamma/2 + chi^2/(8 Gamma), the summed double-commutator
// coefficient of measurement back-action plus feedback noise per oscillator.
NoiseMinimum noise_minimizer(double chi);

struct DimensionlessModel {
    double g = 0.0;   // K / (m omega)
    double Y11 = 0.0; // 2g
    double Y22 = 0.0; // 2g
};

// Coupling and decoherence matrix of the dimensionless master equation,
// g = K/(m omega), Y = 2g * I.
DimensionlessModel dimensionless_model(double K, double m, double omega);

// Full derived-rate bundle for a validated symmetric-or-not setup. T_grav is
// filled from Q (or gamma via the adopted convention) against Delta_approx.
DerivedRates derive_rates(const PhysicalSetup& setup, const Constants& c = codata2018);

}  // namespace gravdec
