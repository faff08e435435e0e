#pragma once

#include <stdexcept>
#include <string>

namespace gravdec {

// Bad user-supplied input: configs, parameter ranges, malformed state.
struct config_error : std::invalid_argument {
    explicit config_error(const std::string& msg) : std::invalid_argument(msg) {}
};

// The requested potential has no stable harmonic minimum (omega_k^2 <= K/m_k).
struct instability_error : std::domain_error {
    explicit instability_error(const std::string& msg) : std::domain_error(msg) {}
};

// Coupling strong enough to make the lower normal mode imaginary.
struct overcoupled_error : std::domain_error {
    explicit overcoupled_error(const std::string& msg) : std::domain_error(msg) {}
};

// Numerical integration produced a state that violates a physical invariant
// (uncertainty relation, trace, positivity, leakage) or went non-finite.
struct numerics_error : std::runtime_error {
    explicit numerics_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace gravdec
