#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "gravdec/gaussian.hpp"
#include "gravdec/rng.hpp"

using namespace gravdec;

TEST_CASE("closed-system generator: block rotation, no diffusion") {
    const auto gen = build_generator(ModelSpec::minimal(0.0));
    Mat4 expected = Mat4::Zero();
    expected(0, 1) = 1.0;
    expected(1, 0) = -1.0;
    expected(2, 3) = 1.0;
    expected(3, 2) = -1.0;
    CHECK((gen.A - expected).cwiseAbs().maxCoeff() == 0.0);
    CHECK(gen.D.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("minimal model diffusion: D = diag(0, g, 0, g)") {
    const auto gen = build_generator(ModelSpec::minimal(0.02));
    CHECK(gen.D(1, 1) == doctest::Approx(0.02).epsilon(1e-15));
    CHECK(gen.D(3, 3) == doctest::Approx(0.02).epsilon(1e-15));
    CHECK(gen.D(0, 0) == 0.0);
    CHECK(gen.D(2, 2) == 0.0);
    CHECK(gen.A(1, 2) == doctest::Approx(-0.02).epsilon(1e-15));
    CHECK(gen.A(3, 0) == doctest::Approx(-0.02).epsilon(1e-15));
}

TEST_CASE("feedback generator at the minimal point equals the minimal generator") {
    const double g = 0.05;
    const auto minimal = build_generator(ModelSpec::minimal(g));
    const auto feedback = build_generator(ModelSpec::feedback(g, g, g / 2.0));
    CHECK((minimal.A - feedback.A).cwiseAbs().maxCoeff() <= 1e-14 * g);
    CHECK((minimal.D - feedback.D).cwiseAbs().maxCoeff() <= 1e-14 * g);
}

TEST_CASE("asymmetric gains break the minimal-point equivalence") {
    const double g = 0.05;
    const auto minimal = build_generator(ModelSpec::minimal(g));
    const auto skew = build_generator(ModelSpec::feedback(g, 2.0 * g, g / 2.0));
    CHECK((minimal.A - skew.A).cwiseAbs().maxCoeff() > 1e-3);
    CHECK((minimal.D - skew.D).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("feedback diffusion floors at Gamma + chi^2/(4 Gamma)") {
    const auto gen = build_generator(ModelSpec::feedback(0.04, 0.08, 0.03));
    // channel 2 (gain chi2 = 0.08) feeds oscillator 1
    CHECK(gen.D(1, 1) == doctest::Approx(0.03 + 0.08 * 0.08 / 0.12).epsilon(1e-14));
    CHECK(gen.D(3, 3) == doctest::Approx(0.03 + 0.04 * 0.04 / 0.12).epsilon(1e-14));
}

TEST_CASE("overcoupled drift rejected") {
    CHECK_THROWS_AS(build_generator(ModelSpec::minimal(1.0)), overcoupled_error);
}

TEST_CASE("epsilon outside [0, 2g] rejected") {
    CHECK_THROWS_AS(build_generator(ModelSpec::minimal(0.05, 0.2)), config_error);
    CHECK_THROWS_AS(build_generator(ModelSpec::minimal(0.05, -0.01)), config_error);
    // epsilon = 2g is the noiseless Hamiltonian limit
    const auto gen = build_generator(ModelSpec::minimal(0.05, 0.1));
    CHECK(gen.D.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("vacuum is stationary for the closed system") {
    const auto gen = build_generator(ModelSpec::minimal(0.0));
    const auto states = propagate(GaussianState::vacuum(), gen, 0.01, 500);
    for (const auto& s : states) {
        CHECK((s.cov - 0.5 * Mat4::Identity()).cwiseAbs().maxCoeff() < 1e-13);
        CHECK(s.mean.cwiseAbs().maxCoeff() < 1e-13);
    }
}

TEST_CASE("decoherence-only heating is exactly linear: n_k = g t / 2") {
    auto spec = ModelSpec::minimal(0.05);
    spec.decoherence_only = true;
    const auto gen = build_generator(spec);
    CHECK(gen.A.cwiseAbs().maxCoeff() == 0.0);
    const double dt = 0.01;
    const int n_steps = 1000;
    const auto states = propagate(GaussianState::vacuum(), gen, dt, n_steps);
    for (int i = 0; i <= n_steps; i += 100) {
        const auto n = phonon_numbers(states[static_cast<std::size_t>(i)]);
        const double expect = 0.05 * (i * dt) / 2.0;
        CHECK(n.n1 == doctest::Approx(expect).epsilon(1e-12));
        CHECK(n.n2 == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("heating law survives the full Hamiltonian to O(g)") {
    // With the rotation on, d(n1+n2)/dt = g - g (cov_p1x2 + cov_x1p2); the
    // cross term oscillates at the normal-mode beat with O(g) amplitude, so
    // the fitted slope approaches g with a small bounded correction.
    const double g = 0.05;
    const auto gen = build_generator(ModelSpec::minimal(g));
    const double dt = 0.002;
    const int n_steps = 2500; // t = 5
    const auto states = propagate(GaussianState::vacuum(), gen, dt, n_steps);
    double st = 0, sy = 0, stt = 0, sty = 0;
    for (int i = 0; i <= n_steps; ++i) {
        const double t = i * dt;
        const auto n = phonon_numbers(states[static_cast<std::size_t>(i)]);
        const double y = n.n1 + n.n2;
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
    }
    const double m = static_cast<double>(n_steps + 1);
    const double slope = (m * sty - st * sy) / (m * stt - st * st);
    CHECK(slope == doctest::Approx(g).epsilon(0.02));
}

TEST_CASE("phonon numbers") {
    CHECK(phonon_numbers(GaussianState::vacuum()).n1 == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(phonon_numbers(GaussianState::vacuum()).n2 == doctest::Approx(0.0).epsilon(1e-15));

    GaussianState one;
    one.cov.diagonal() << 1.5, 1.5, 0.5, 0.5;
    const auto n = phonon_numbers(one);
    CHECK(n.n1 == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(n.n2 == doctest::Approx(0.0).epsilon(1e-15));

    // mean contributions count
    GaussianState displaced = GaussianState::vacuum();
    displaced.mean << 1.0, 1.0, 0.0, 0.0;
    CHECK(phonon_numbers(displaced).n1 == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("RK4 order: halving dt shrinks the error ~16x") {
    const auto gen = build_generator(ModelSpec::minimal(0.05));
    const auto run = [&](double dt, int n) {
        return propagate(GaussianState::vacuum(), gen, dt, n).back().cov;
    };
    const Mat4 ref = run(0.0025, 1600); // fine reference
    const Mat4 coarse = run(0.04, 100);
    const Mat4 fine = run(0.02, 200);
    const double e_coarse = (coarse - ref).cwiseAbs().maxCoeff();
    const double e_fine = (fine - ref).cwiseAbs().maxCoeff();
    const double ratio = e_coarse / e_fine;
    CHECK(ratio > 10.0);
    CHECK(ratio < 22.0);
}

TEST_CASE("propagate guards and aborts") {
    const auto gen = build_generator(ModelSpec::minimal(0.05));
    CHECK_THROWS_AS(propagate(GaussianState::vacuum(), gen, -0.1, 10), config_error);
    CHECK_THROWS_AS(propagate(GaussianState::vacuum(), gen, 0.2, 10), config_error);

    GaussianState bad;
    bad.cov = 0.1 * Mat4::Identity(); // violates the uncertainty relation
    CHECK_THROWS_AS(propagate(bad, gen, 0.01, 10), numerics_error);
}

TEST_CASE("uncertainty relation holds at every output step") {
    const auto gen = build_generator(ModelSpec::minimal(0.08, 0.01));
    const auto states = propagate(GaussianState::vacuum(), gen, 0.01, 2000);
    for (const auto& s : states) {
        CHECK(s.uncertainty_margin() > -1e-9);
    }
}

TEST_CASE("purity never increases along a minimal-model trajectory") {
    const auto gen = build_generator(ModelSpec::minimal(0.05));
    const auto states = propagate(GaussianState::vacuum(), gen, 0.01, 2000);
    double last = states.front().cov.determinant();
    for (const auto& s : states) {
        const double det = s.cov.determinant();
        CHECK(det >= last - 1e-14);
        last = det;
    }
}

TEST_CASE("lyapunov steady state") {
    SUBCASE("QBM single-mode limit recovers the thermal value") {
        auto spec = ModelSpec::minimal(0.0);
        spec.qbm = QbmSpec{0.05, 10.0};
        const auto gen = build_generator(spec);
        const auto ss = steady_state_lyapunov(gen);
        // gamma T momentum diffusion against 2 gamma damping parks each
        // quadrature variance at T/2
        for (int k : {0, 1, 2, 3}) {
            CHECK(ss.cov(k, k) == doctest::Approx(5.0).epsilon(1e-9));
        }
        // long-time propagation oracle
        const auto hold = propagate(ss, gen, 0.02, 500);
        CHECK((hold.back().cov - ss.cov).cwiseAbs().maxCoeff() < 1e-10);

        const auto far = propagate(GaussianState::vacuum(), gen, 0.05, 4000); // t = 200
        CHECK((far.back().cov - ss.cov).cwiseAbs().maxCoeff() < 1e-6);
    }
    SUBCASE("residual below 1e-10 on random stable systems") {
        Xoshiro256 rng(99, 3);
        for (int i = 0; i < 60; ++i) {
            Mat4 r;
            for (int a = 0; a < 4; ++a)
                for (int b = 0; b < 4; ++b) r(a, b) = 2.0 * rng.next_uniform() - 1.0;
            const Mat4 A = r - 3.0 * Mat4::Identity(); // diagonally dominated, stable
            Mat4 b;
            for (int a = 0; a < 4; ++a)
                for (int c = 0; c < 4; ++c) b(a, c) = rng.next_uniform();
            const Mat4 D = b * b.transpose() + 2.0 * Mat4::Identity();
            const Mat4 sigma = solve_lyapunov(A, D);
            CHECK((A * sigma + sigma * A.transpose() + D).norm() < 1e-10);
        }
    }
    SUBCASE("marginally stable drift rejected") {
        const auto gen = build_generator(ModelSpec::minimal(0.05));
        CHECK_THROWS_AS(steady_state_lyapunov(gen), numerics_error);
    }
    SUBCASE("D = 0 with stable drift yields an unphysical fixed point") {
        auto spec = ModelSpec::minimal(0.0);
        spec.qbm = QbmSpec{0.05, 0.0}; // zero-temperature friction, no diffusion
        const auto gen = build_generator(spec);
        CHECK(gen.D.cwiseAbs().maxCoeff() == 0.0);
        CHECK_THROWS_AS(steady_state_lyapunov(gen), numerics_error);
    }
}

TEST_CASE("determinism: identical runs produce identical trajectories") {
    const auto gen = build_generator(ModelSpec::minimal(0.03));
    const auto a = propagate(GaussianState::vacuum(), gen, 0.01, 100);
    const auto b = propagate(GaussianState::vacuum(), gen, 0.01, 100);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK((a[i].cov - b[i].cov).cwiseAbs().maxCoeff() == 0.0);
    }
}
