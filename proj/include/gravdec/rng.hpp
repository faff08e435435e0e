#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace gravdec {

// splitmix64, used only to expand a user seed into generator state.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// xoshiro256++ with a documented stream-splitting rule:
// stream k of base seed s starts from splitmix64 seeded with
// s + (k+1) * 0x9E3779B97F4A7C15. Streams are used one-per-Wiener-process,
// so trajectories are reproducible independent of scheduling.
class Xoshiro256 {
public:
    Xoshiro256(std::uint64_t base_seed, std::uint64_t stream_id) {
        std::uint64_t sm = base_seed + (stream_id + 1) * 0x9E3779B97F4A7C15ULL;
        for (auto& word : state_) word = splitmix64_next(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in (0,1]; never returns 0 so log() below is safe.
    double next_uniform() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller. std::normal_distribution is not
    // specified by the standard, so we roll the transform by hand to keep
    // sequences identical for a given seed.
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = next_uniform();
        const double u2 = next_uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925287 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t state_[4]{};
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Pre-sampled Wiener increments for a two-record trajectory. Trajectory t of
// a run seeded with s draws dW1 from stream 2t and dW2 from stream 2t+1.
struct WienerPath {
    double dt = 0.0;
    std::vector<double> dw1;
    std::vector<double> dw2;

    static WienerPath generate(std::uint64_t base_seed, std::uint64_t trajectory_index,
                               double dt, std::size_t n_steps) {
        Xoshiro256 g1(base_seed, 2 * trajectory_index);
        Xoshiro256 g2(base_seed, 2 * trajectory_index + 1);
        WienerPath path;
        path.dt = dt;
        path.dw1.resize(n_steps);
        path.dw2.resize(n_steps);
        const double root_dt = std::sqrt(dt);
        for (std::size_t i = 0; i < n_steps; ++i) {
            path.dw1[i] = root_dt * g1.next_normal();
            path.dw2[i] = root_dt * g2.next_normal();
        }
        return path;
    }
};

}  // namespace gravdec
