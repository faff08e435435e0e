#pragma once

namespace gravdec {

// CODATA 2018 values, fixed at compile time. All SI.
struct Constants {
    double G = 6.67430e-11;        // m^3 kg^-1 s^-2
    double hbar = 1.054571817e-34; // J s
    double kB = 1.380649e-23;      // J/K
};

inline constexpr Constants codata2018{};

}  // namespace gravdec
