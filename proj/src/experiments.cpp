#include "gravdec/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "gravdec/conditional.hpp"
#include "gravdec/entanglement.hpp"
#include "gravdec/gaussian.hpp"
#include "gravdec/rng.hpp"
#include "gravdec/version.hpp"

namespace gravdec {

namespace fs = std::filesystem;

namespace {

constexpr double kTwoPi = 6.28318530717958647692528676656;

double parse_quantity(const Json& j, const std::string& field,
                      const std::map<std::string, double>& unit_factors) {
    if (!j.contains(field)) throw config_error("config: missing field '" + field + "'");
    const Json& q = j.at(field);
    if (q.is_number()) {
        // Bare numbers are only allowed for dimensionless quantities.
        if (unit_factors.count("1")) return q.get<double>();
        throw config_error("config: field '" + field + "' needs an explicit unit tag");
    }
    if (!q.is_object() || !q.contains("value") || !q.contains("unit")) {
        throw config_error("config: field '" + field + "' must be {\"value\":..,\"unit\":..}");
    }
    const std::string unit = q.at("unit").get<std::string>();
    const auto it = unit_factors.find(unit);
    if (it == unit_factors.end()) {
        throw config_error("config: field '" + field + "' has unsupported unit '" + unit + "'");
    }
    return q.at("value").get<double>() * it->second;
}

const std::map<std::string, double> kMassUnits = {{"kg", 1.0}};
const std::map<std::string, double> kLengthUnits = {{"m", 1.0}};
const std::map<std::string, double> kFreqUnits = {{"rad/s", 1.0}, {"Hz", kTwoPi}};
const std::map<std::string, double> kDensityUnits = {{"kg/m^3", 1.0}};
const std::map<std::string, double> kRateUnits = {{"1/s", 1.0}, {"s^-1", 1.0}};
const std::map<std::string, double> kTempUnits = {{"K", 1.0}};
const std::map<std::string, double> kDimensionless = {{"1", 1.0}};

PhysicalSetup parse_physical(const Json& j) {
    PhysicalSetup setup;
    if (j.contains("rho")) setup.rho = parse_quantity(j, "rho", kDensityUnits);
    if (j.contains("r")) setup.r = parse_quantity(j, "r", kLengthUnits);

    const bool sphere_mass = setup.rho && setup.r && !j.contains("m1") && !j.contains("m2") &&
                             !j.contains("m");
    if (sphere_mass) {
        const double m = (4.0 / 3.0) * 3.14159265358979323846 * (*setup.rho) * (*setup.r) *
                         (*setup.r) * (*setup.r);
        setup.m1 = setup.m2 = m;
    } else if (j.contains("m")) {
        setup.m1 = setup.m2 = parse_quantity(j, "m", kMassUnits);
    } else {
        setup.m1 = parse_quantity(j, "m1", kMassUnits);
        setup.m2 = parse_quantity(j, "m2", kMassUnits);
    }

    if (j.contains("omega")) {
        setup.omega1 = setup.omega2 = parse_quantity(j, "omega", kFreqUnits);
    } else {
        setup.omega1 = parse_quantity(j, "omega1", kFreqUnits);
        setup.omega2 = parse_quantity(j, "omega2", kFreqUnits);
    }
    setup.d = parse_quantity(j, "d", kLengthUnits);
    if (j.contains("Q")) setup.Q = parse_quantity(j, "Q", kDimensionless);
    if (j.contains("gamma")) setup.gamma = parse_quantity(j, "gamma", kRateUnits);
    if (j.contains("T_bath")) setup.T_bath = parse_quantity(j, "T_bath", kTempUnits);
    if (j.contains("waive_sphere_mass_check")) {
        setup.waive_sphere_mass_check = j.at("waive_sphere_mass_check").get<bool>();
    }
    setup.validate();
    return setup;
}

ModelSpec parse_model(const Json& j) {
    ModelSpec spec;
    const std::string variant = j.value("variant", std::string("minimal"));
    if (variant == "minimal") {
        spec.variant = MasterEquation::MinimalME;
        spec.g = j.value("g", 0.0);
        spec.epsilon = j.value("epsilon", 0.0);
    } else if (variant == "feedback") {
        spec.variant = MasterEquation::FeedbackME;
        spec.chi1 = j.value("chi1", 0.0);
        spec.chi2 = j.value("chi2", 0.0);
        spec.Gamma = j.value("Gamma", 0.0);
    } else {
        throw config_error("config: model.variant must be 'minimal' or 'feedback'");
    }
    spec.decoherence_only = j.value("decoherence_only", false);
    if (j.contains("qbm")) {
        QbmSpec qbm;
        qbm.gamma_diss = j.at("qbm").value("gamma", 0.0);
        qbm.T_bath = j.at("qbm").value("T", 0.0);
        spec.qbm = qbm;
    }
    spec.validate();
    return spec;
}

bool needs_model(Experiment e) {
    switch (e) {
        case Experiment::Rates:
        case Experiment::SplittingBound:
            return false;
        default:
            return true;
    }
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void append_cov_columns(std::vector<std::string>& cols) {
    static const char* names[4] = {"x1", "p1", "x2", "p2"};
    for (int i = 0; i < 4; ++i)
        for (int j = i; j < 4; ++j)
            cols.push_back(std::string("cov_") + names[i] + "_" + names[j]);
}

void append_cov_values(std::vector<double>& row, const Mat4& cov) {
    for (int i = 0; i < 4; ++i)
        for (int j = i; j < 4; ++j) row.push_back(cov(i, j));
}

void append_mean_columns(std::vector<std::string>& cols) {
    cols.insert(cols.end(), {"mean_x1", "mean_p1", "mean_x2", "mean_p2"});
}

CheckResult make_check(const std::string& name, bool passed, const std::string& detail) {
    return CheckResult{name, passed, detail};
}

CheckResult check_range(const std::string& name, double value, double lo, double hi) {
    std::ostringstream oss;
    oss << name << " = " << value << ", required [" << lo << ", " << hi << "]";
    return make_check(name, value >= lo && value <= hi, oss.str());
}

CheckResult check_rel(const std::string& name, double value, double expected, double rel_tol) {
    const double scale = std::max(std::abs(expected), 1e-300);
    const double rel = std::abs(value - expected) / scale;
    std::ostringstream oss;
    oss << name << ": got " << value << ", expected " << expected << " (rel err " << rel
        << ", tol " << rel_tol << ")";
    return make_check(name, rel <= rel_tol, oss.str());
}

struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
};

SlopeFit fit_line(const std::vector<double>& t, const std::vector<double>& y) {
    const double n = static_cast<double>(t.size());
    double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        st += t[i];
        sy += y[i];
        stt += t[i] * t[i];
        sty += t[i] * y[i];
    }
    SlopeFit fit;
    fit.slope = (n * sty - st * sy) / (n * stt - st * st);
    fit.intercept = (sy - fit.slope * st) / n;
    return fit;
}

// ---------------------------------------------------------------------------
// experiment runners
// ---------------------------------------------------------------------------

void run_rates(const ExperimentConfig& cfg, RunOutput& out, bool with_checks) {
    const PhysicalSetup& setup = *cfg.physical;
    const Constants& c = codata2018;
    const DerivedRates rates = derive_rates(setup, c);
    const double m = std::sqrt(setup.m1 * setup.m2);
    const double omega = std::sqrt(setup.omega1 * setup.omega2);
    const auto dimless = dimensionless_model(rates.K, m, omega);

    auto& s = out.bundle.summary;
    s.push_back({"K", rates.K, "kg/s^2"});
    s.push_back({"Omega1", rates.Omega1, "rad/s"});
    s.push_back({"Omega2", rates.Omega2, "rad/s"});
    s.push_back({"omega_plus", rates.omega_plus, "rad/s"});
    s.push_back({"omega_minus", rates.omega_minus, "rad/s"});
    s.push_back({"Delta_exact", rates.Delta, "1/s"});
    s.push_back({"Delta_approx", rates.Delta_approx, "1/s"});
    // As-printed weak-coupling splitting G m / (omega d^3); half the
    // internally consistent K/(m omega). Both are reported.
    const double delta_printed = c.G * m / (omega * setup.d * setup.d * setup.d);
    s.push_back({"Delta", delta_printed, "1/s"});
    s.push_back({"g", dimless.g, "1/s"});
    s.push_back({"Y11", dimless.Y11, "1/s"});
    s.push_back({"Y22", dimless.Y22, "1/s"});
    s.push_back({"D_grav", rates.D_grav, "J kg/s"});
    s.push_back({"R_grav", rates.R_grav, "1/s"});
    s.push_back({"Lambda_grav", rates.Lambda_grav, "1/s"});

    std::optional<SplittingBound> bound;
    if (setup.rho) {
        bound = splitting_bound(*setup.rho, omega, c);
        s.push_back({"Delta_bound_printed", bound->printed, "1/s"});
        s.push_back({"Delta_bound_consistent", bound->consistent, "1/s"});
    }

    std::optional<double> T_grav;
    if (setup.Q || setup.gamma) {
        const double Q = setup.Q ? *setup.Q : quality_factor_from_gamma(omega, *setup.gamma);
        T_grav = effective_temperature_from_splitting(Q, delta_printed, c);
        s.push_back({"T_grav", *T_grav, "K"});
        s.push_back({"T_grav_approx",
                     effective_temperature_from_splitting(Q, rates.Delta_approx, c), "K"});
        if (setup.gamma) {
            s.push_back({"T_grav_dissipation",
                         effective_temperature_from_dissipation(rates.K, m, *setup.gamma, c), "K"});
        }
    }

    if (with_checks) {
        out.checks.push_back(
            check_rel("Lambda_grav == R_grav/2", rates.Lambda_grav, rates.R_grav / 2.0, 1e-15));
        out.checks.push_back(
            check_rel("R_grav == Delta_approx/2", rates.R_grav, rates.Delta_approx / 2.0, 1e-15));
        out.checks.push_back(check_rel("Lambda_grav == Delta_approx/4", rates.Lambda_grav,
                                       rates.Delta_approx / 4.0, 1e-15));
        if (bound) {
            out.checks.push_back(
                check_range("Delta_bound_printed", bound->printed, 1.0e-7, 1.1e-7));
        }
        if (T_grav) {
            out.checks.push_back(check_range("T_grav", *T_grav, 5e-10, 1.5e-9));
        }
    }
}

void run_splitting_bound(const ExperimentConfig& cfg, RunOutput& out, bool with_checks) {
    const auto bound = splitting_bound(*cfg.bound_rho, *cfg.bound_omega, codata2018);
    out.bundle.summary.push_back({"Delta_bound_printed", bound.printed, "1/s"});
    out.bundle.summary.push_back({"Delta_bound_consistent", bound.consistent, "1/s"});
    if (with_checks) {
        out.checks.push_back(
            check_rel("consistent == 2 x printed", bound.consistent, 2.0 * bound.printed, 1e-15));
        out.checks.push_back(check_range("Delta_bound_printed", bound.printed, 1.0e-7, 1.1e-7));
    }
}

void run_heat(const ExperimentConfig& cfg, RunOutput& out, bool with_checks) {
    const ModelSpec& spec = *cfg.model;
    const Generator gen = build_generator(spec);
    const int n_steps = cfg.n_steps();
    const auto states = propagate(GaussianState::vacuum(), gen, cfg.dt, n_steps);

    Series phonons{"phonons", {"time", "n1", "n2"}, {}};
    Series moments{"moments", {"time"}, {}};
    append_mean_columns(moments.columns);
    append_cov_columns(moments.columns);
    std::vector<double> times, n1s, n2s;
    for (int i = 0; i <= n_steps; i += cfg.store_stride) {
        const double t = i * cfg.dt;
        const auto n = phonon_numbers(states[static_cast<std::size_t>(i)]);
        phonons.rows.push_back({t, n.n1, n.n2});
        times.push_back(t);
        n1s.push_back(n.n1);
        n2s.push_back(n.n2);
        std::vector<double> row{t};
        for (int k = 0; k < 4; ++k) row.push_back(states[static_cast<std::size_t>(i)].mean(k));
        append_cov_values(row, states[static_cast<std::size_t>(i)].cov);
        moments.rows.push_back(std::move(row));
    }
    out.bundle.series.push_back(std::move(phonons));
    out.bundle.series.push_back(std::move(moments));

    const double expected_slope1 = gen.D(1, 1) / 2.0;
    const double expected_slope2 = gen.D(3, 3) / 2.0;
    const double slope1 = fit_line(times, n1s).slope;
    const double slope2 = fit_line(times, n2s).slope;
    out.bundle.summary.push_back({"n1_slope", slope1, "1/time"});
    out.bundle.summary.push_back({"n2_slope", slope2, "1/time"});
    out.bundle.summary.push_back({"expected_slope1", expected_slope1, "1/time"});
    out.bundle.summary.push_back({"expected_slope2", expected_slope2, "1/time"});

    if (with_checks) {
        out.checks.push_back(check_rel("n1 heating slope", slope1, expected_slope1, 1e-4));
        out.checks.push_back(check_rel("n2 heating slope", slope2, expected_slope2, 1e-4));
    }
}

void run_decohere(const ExperimentConfig& cfg, RunOutput& out, bool with_checks) {
    const auto probe =
        coherence_decay_probe(cfg.probe_delta_x, *cfg.model, cfg.dt, cfg.n_steps(), cfg.fock);

    Series coherence{"coherence", {"time", "fringe_amplitude", "overlap_coherence"}, {}};
    for (std::size_t i = 0; i < probe.times.size(); ++i) {
        coherence.rows.push_back(
            {probe.times[i], probe.fringe_amplitude[i], probe.overlap_coherence[i]});
    }
    out.bundle.series.push_back(std::move(coherence));

    out.bundle.summary.push_back({"fitted_rate", probe.fitted_rate, "1/time"});
    out.bundle.summary.push_back({"expected_rate", probe.expected_rate, "1/time"});
    out.bundle.summary.push_back({"fit_residual", probe.fit_residual, "1"});
    out.bundle.summary.push_back({"conclusive", probe.conclusive ? 1.0 : 0.0, "1"});
    out.bundle.summary.push_back({"delta_x", cfg.probe_delta_x, "1"});

    if (with_checks) {
        out.checks.push_back(
            check_rel("coherence decay rate", probe.fitted_rate, probe.expected_rate, 0.05));
        out.checks.push_back(make_check("fit conclusive", probe.conclusive,
                                        "max log-residual " + format_double(probe.fit_residual)));
    }
}

void run_entangle(const ExperimentConfig& cfg, RunOutput& out, bool with_checks) {
    const ModelSpec& spec = *cfg.model;
    if (spec.variant != MasterEquation::MinimalME) {
        throw config_error("entangle-witness/epsilon-scan: use the minimal model");
    }
    const Generator gen = build_generator(spec);
    const int n_steps = cfg.n_steps();
    const auto states = propagate(GaussianState::vacuum(), gen, cfg.dt, n_steps);

    Series series{"entanglement", {"time", "E_N", "nu_pt"}, {}};
    double max_en = 0.0;
    for (int i = 0; i <= n_steps; i += cfg.store_stride) {
        const auto& st = states[static_cast<std::size_t>(i)];
        const double en = log_negativity(st);
        const double nu = pt_symplectic_eigenvalue(st);
        series.rows.push_back({i * cfg.dt, en, nu});
        max_en = std::max(max_en, en);
    }
    out.bundle.series.push_back(std::move(series));

    const double y = 2.0 * spec.g - spec.epsilon;
    Mat2 Y = y * Mat2::Identity();
    const auto crit = channel_criterion(Y, spec.g);
    out.bundle.summary.push_back({"max_E_N", max_en, "1"});
    out.bundle.summary.push_back({"criterion_eig_min", crit.eig_min, "1"});
    out.bundle.summary.push_back({"criterion_eig_max", crit.eig_max, "1"});
    out.bundle.summary.push_back({"non_entangling", crit.non_entangling ? 1.0 : 0.0, "1"});
    out.bundle.summary.push_back({"epsilon", spec.epsilon, "1"});

    if (with_checks) {
        if (spec.epsilon == 0.0) {
            std::ostringstream oss;
            oss << "max_E_N = " << max_en << " (required <= 1e-10)";
            out.checks.push_back(make_check("non-entangling trajectory", max_en <= 1e-10, oss.str()));
            out.checks.push_back(check_rel("criterion eig_max == 4g", crit.eig_max,
                                           4.0 * spec.g, 1e-14));
            std::ostringstream oss2;
            oss2 << "criterion eig_min = " << crit.eig_min;
            out.checks.push_back(make_check("criterion eig_min == 0",
                                            std::abs(crit.eig_min) <= 1e-14 * 4.0 * spec.g,
                                            oss2.str()));
        } else {
            std::ostringstream oss;
            oss << "max_E_N = " << max_en << " (required > 1e-3 for epsilon > 0)";
            out.checks.push_back(make_check("entangling for positive epsilon", max_en > 1e-3,
                                            oss.str()));
        }
    }
}

ModelSpec conditional_spec(const ModelSpec& spec) {
    if (spec.variant == MasterEquation::FeedbackME) return spec;
    // Minimal model unravels at the minimal-noise point chi = g, Gamma = g/2.
    return ModelSpec::feedback(spec.g, spec.g, spec.g / 2.0);
}

void run_trajectories(const ExperimentConfig& cfg, RunOutput& out, bool with_checks) {
    const ModelSpec spec = conditional_spec(*cfg.model);
    NoiseConfig noise;
    noise.seed = cfg.seed;
    noise.dt = cfg.dt;
    noise.n_steps = cfg.n_steps();
    noise.Gamma1 = spec.Gamma;
    noise.Gamma2 = spec.Gamma;
    noise.store_stride = cfg.store_stride;

    const auto records = run_ensemble(spec, noise, GaussianState::vacuum(), cfg.n_traj);
    const auto recon = ensemble_moments(records);

    // Matching unconditional reference on the same grid.
    const Generator gen = build_generator(spec);
    const auto exact = propagate(GaussianState::vacuum(), gen, cfg.dt, noise.n_steps);

    Series srec{"reconstruction", {"time"}, {}};
    append_mean_columns(srec.columns);
    append_cov_columns(srec.columns);
    Series suncond{"unconditional", {"time"}, {}};
    append_mean_columns(suncond.columns);
    append_cov_columns(suncond.columns);
    Series scond{"conditional_cov", {"time"}, {}};
    append_cov_columns(scond.columns);

    double max_abs_dev = 0.0;
    for (std::size_t i = 0; i < recon.times.size(); ++i) {
        const int step = static_cast<int>(std::llround(recon.times[i] / cfg.dt));
        const auto& ex = exact[static_cast<std::size_t>(step)];

        std::vector<double> row{recon.times[i]};
        for (int k = 0; k < 4; ++k) row.push_back(recon.mean[i](k));
        append_cov_values(row, recon.cov[i]);
        srec.rows.push_back(std::move(row));

        std::vector<double> row2{recon.times[i]};
        for (int k = 0; k < 4; ++k) row2.push_back(ex.mean(k));
        append_cov_values(row2, ex.cov);
        suncond.rows.push_back(std::move(row2));

        std::vector<double> row3{recon.times[i]};
        append_cov_values(row3, records.front().states[i].cov);
        scond.rows.push_back(std::move(row3));

        max_abs_dev = std::max(max_abs_dev, (recon.cov[i] - ex.cov).cwiseAbs().maxCoeff());
    }
    out.bundle.series.push_back(std::move(srec));
    out.bundle.series.push_back(std::move(suncond));
    out.bundle.series.push_back(std::move(scond));

    if (cfg.n_traj <= 16) {
        for (int t = 0; t < cfg.n_traj; ++t) {
            char name[32];
            std::snprintf(name, sizeof(name), "record_%03d", t);
            Series rec{name, {"time", "dJ1", "dJ2"}, {}};
            append_mean_columns(rec.columns);
            const auto& r = records[static_cast<std::size_t>(t)];
            for (std::size_t i = 0; i + 1 < r.times.size(); ++i) {
                std::vector<double> row{r.times[i + 1], r.dJ1[i], r.dJ2[i]};
                for (int k = 0; k < 4; ++k) row.push_back(r.states[i + 1].mean(k));
                rec.rows.push_back(std::move(row));
            }
            out.bundle.series.push_back(std::move(rec));
        }
    }

    out.bundle.summary.push_back({"n_traj", static_cast<double>(cfg.n_traj), "1"});
    out.bundle.summary.push_back({"max_abs_cov_deviation", max_abs_dev, "1"});

    if (with_checks) {
        // Bootstrap standard errors of the reconstructed covariance entries;
        // the reconstruction must sit within 3 SE of the generator result at
        // every stored time.
        const int B = 200;
        Xoshiro256 rng(cfg.seed, 1ULL << 62);
        const std::size_t n = records.size();
        bool all_ok = true;
        double worst_ratio = 0.0;
        std::string worst_where;
        for (std::size_t i = 1; i < recon.times.size(); ++i) {
            // Collect per-trajectory means at this time.
            std::vector<Vec4> means(n);
            for (std::size_t r = 0; r < n; ++r) means[r] = records[r].states[i].mean;
            const Mat4 cond_cov = records.front().states[i].cov;

            std::vector<Mat4> boot(static_cast<std::size_t>(B));
            for (int b = 0; b < B; ++b) {
                Vec4 mu = Vec4::Zero();
                std::vector<std::size_t> idx(n);
                for (std::size_t r = 0; r < n; ++r) {
                    idx[r] = static_cast<std::size_t>(rng.next_u64() % n);
                    mu += means[idx[r]];
                }
                mu /= static_cast<double>(n);
                Mat4 spread = Mat4::Zero();
                for (std::size_t r = 0; r < n; ++r) {
                    const Vec4 d = means[idx[r]] - mu;
                    spread += d * d.transpose();
                }
                spread /= static_cast<double>(n - 1);
                boot[static_cast<std::size_t>(b)] = cond_cov + spread;
            }
            Mat4 mean_boot = Mat4::Zero();
            for (const auto& m : boot) mean_boot += m;
            mean_boot /= static_cast<double>(B);
            Mat4 se = Mat4::Zero();
            for (const auto& m : boot) se += (m - mean_boot).cwiseProduct(m - mean_boot);
            se = (se / static_cast<double>(B - 1)).cwiseSqrt();

            const int step = static_cast<int>(std::llround(recon.times[i] / cfg.dt));
            const Mat4 dev = recon.cov[i] - exact[static_cast<std::size_t>(step)].cov;
            for (int a = 0; a < 4; ++a) {
                for (int bcol = a; bcol < 4; ++bcol) {
                    const double s = std::max(se(a, bcol), 1e-300);
                    const double ratio = std::abs(dev(a, bcol)) / s;
                    if (ratio > worst_ratio) {
                        worst_ratio = ratio;
                        std::ostringstream oss;
                        oss << "t=" << recon.times[i] << " cov(" << a << "," << bcol << ")";
                        worst_where = oss.str();
                    }
                    if (ratio > 3.0) all_ok = false;
                }
            }
        }
        std::ostringstream oss;
        oss << "worst |deviation|/SE = " << worst_ratio << " at " << worst_where
            << " (required <= 3)";
        out.checks.push_back(make_check("ensemble reconstructs unconditional covariance",
                                        all_ok, oss.str()));
    }
}

void run_oracle_compare(const ExperimentConfig& cfg, RunOutput& out, bool with_checks) {
    const ModelSpec& spec = *cfg.model;
    const int n_steps = cfg.n_steps();

    const Generator gen = build_generator(spec);
    const auto gauss = propagate(GaussianState::vacuum(), gen, cfg.dt, n_steps);

    const auto vac = fock_vacuum(cfg.fock.N);
    const auto rho0 = FockState::from_pure(vac, vac);
    const auto fock = evolve_unconditional(rho0, spec, cfg.dt, n_steps, cfg.fock,
                                           cfg.store_stride);

    Series sg{"gaussian_moments", {"time"}, {}};
    append_mean_columns(sg.columns);
    append_cov_columns(sg.columns);
    Series sf{"fock_moments", {"time"}, {}};
    append_mean_columns(sf.columns);
    append_cov_columns(sf.columns);
    Series sd{"difference", {"time", "max_mean_diff", "max_cov_diff"}, {}};

    double max_mean_diff = 0.0, max_cov_diff = 0.0;
    for (std::size_t i = 0; i < fock.times.size(); ++i) {
        const int step = static_cast<int>(std::llround(fock.times[i] / cfg.dt));
        const auto& gs = gauss[static_cast<std::size_t>(step)];
        const auto& fm = fock.moments[i];

        std::vector<double> row{fock.times[i]};
        for (int k = 0; k < 4; ++k) row.push_back(gs.mean(k));
        append_cov_values(row, gs.cov);
        sg.rows.push_back(std::move(row));

        std::vector<double> row2{fock.times[i]};
        for (int k = 0; k < 4; ++k) row2.push_back(fm.mean(k));
        append_cov_values(row2, fm.cov);
        sf.rows.push_back(std::move(row2));

        const double mean_diff = (gs.mean - fm.mean).cwiseAbs().maxCoeff();
        const double cov_diff = (gs.cov - fm.cov).cwiseAbs().maxCoeff();
        sd.rows.push_back({fock.times[i], mean_diff, cov_diff});
        max_mean_diff = std::max(max_mean_diff, mean_diff);
        max_cov_diff = std::max(max_cov_diff, cov_diff);
    }
    out.bundle.series.push_back(std::move(sg));
    out.bundle.series.push_back(std::move(sf));
    out.bundle.series.push_back(std::move(sd));

    out.bundle.summary.push_back({"max_mean_diff", max_mean_diff, "1"});
    out.bundle.summary.push_back({"max_cov_diff", max_cov_diff, "1"});
    out.bundle.summary.push_back({"fock_max_leakage", fock.max_leakage, "1"});

    if (with_checks) {
        std::ostringstream oss;
        oss << "max mean diff " << max_mean_diff << ", max cov diff " << max_cov_diff
            << " (required < 1e-4)";
        out.checks.push_back(make_check("gaussian/fock moment agreement",
                                        max_mean_diff < 1e-4 && max_cov_diff < 1e-4, oss.str()));
    }
}

}  // namespace

const char* experiment_name(Experiment e) {
    switch (e) {
        case Experiment::Rates: return "rates";
        case Experiment::SplittingBound: return "splitting-bound";
        case Experiment::Heat: return "heat";
        case Experiment::Decohere: return "decohere";
        case Experiment::EntangleWitness: return "entangle-witness";
        case Experiment::EpsilonScan: return "epsilon-scan";
        case Experiment::Trajectories: return "trajectories";
        case Experiment::OracleCompare: return "oracle-compare";
    }
    return "unknown";
}

Experiment experiment_from_name(const std::string& name) {
    for (Experiment e : {Experiment::Rates, Experiment::SplittingBound, Experiment::Heat,
                         Experiment::Decohere, Experiment::EntangleWitness,
                         Experiment::EpsilonScan, Experiment::Trajectories,
                         Experiment::OracleCompare}) {
        if (name == experiment_name(e)) return e;
    }
    throw config_error("config: unknown experiment '" + name + "'");
}

int ExperimentConfig::n_steps() const {
    const double raw = t_final / dt;
    const int n = static_cast<int>(std::llround(raw));
    if (n <= 0) throw config_error("config: t_final/dt must be a positive step count");
    if (std::abs(raw - n) > 1e-9 * std::max(1.0, raw)) {
        throw config_error("config: t_final must be an integer multiple of dt");
    }
    if (n % store_stride != 0) {
        throw config_error("config: store_stride must divide the step count");
    }
    return n;
}

ExperimentConfig parse_config(const Json& j) {
    ExperimentConfig cfg;
    cfg.echo = j;
    if (!j.contains("experiment")) throw config_error("config: missing 'experiment'");
    cfg.experiment = experiment_from_name(j.at("experiment").get<std::string>());

    const bool has_physical = j.contains("physical");
    const bool has_model = j.contains("model");
    if (needs_model(cfg.experiment)) {
        if (!has_model || has_physical) {
            throw config_error("config: this experiment takes a 'model' block (and no 'physical')");
        }
        cfg.model = parse_model(j.at("model"));
    } else {
        if (!has_physical || has_model) {
            throw config_error("config: this experiment takes a 'physical' block (and no 'model')");
        }
        if (cfg.experiment == Experiment::SplittingBound) {
            const Json& p = j.at("physical");
            cfg.bound_rho = parse_quantity(p, "rho", kDensityUnits);
            cfg.bound_omega = p.contains("omega") ? parse_quantity(p, "omega", kFreqUnits)
                                                  : parse_quantity(p, "omega1", kFreqUnits);
            if (!(*cfg.bound_rho > 0.0) || !(*cfg.bound_omega > 0.0)) {
                throw config_error("config: splitting-bound needs positive rho and omega");
            }
        } else {
            cfg.physical = parse_physical(j.at("physical"));
        }
    }

    if (j.contains("integration")) {
        cfg.dt = j.at("integration").value("dt", cfg.dt);
        cfg.t_final = j.at("integration").value("t_final", cfg.t_final);
        if (!(cfg.dt > 0.0) || !(cfg.t_final > 0.0)) {
            throw config_error("config: integration.dt and t_final must be positive");
        }
    }
    if (j.contains("ensemble")) {
        const Json& e = j.at("ensemble");
        cfg.n_traj = e.value("n_traj", cfg.n_traj);
        cfg.seed = e.value("seed", cfg.seed);
        cfg.store_stride = e.value("store_stride", cfg.store_stride);
        if (cfg.n_traj < 1) throw config_error("config: ensemble.n_traj must be >= 1");
        if (cfg.store_stride < 1) throw config_error("config: ensemble.store_stride must be >= 1");
    }
    if (j.contains("fock")) {
        const Json& f = j.at("fock");
        cfg.fock.N = f.value("N", cfg.fock.N);
        cfg.fock.leakage_tol = f.value("leakage_tol", cfg.fock.leakage_tol);
        cfg.fock.negativity_tol = f.value("negativity_tol", cfg.fock.negativity_tol);
        cfg.fock.positivity_check_stride =
            f.value("positivity_check_stride", cfg.fock.positivity_check_stride);
        cfg.fock.validate();
    }
    if (j.contains("probe")) {
        cfg.probe_delta_x = j.at("probe").value("delta_x", cfg.probe_delta_x);
        if (cfg.probe_delta_x < 0.0) throw config_error("config: probe.delta_x must be >= 0");
    }
    if (j.contains("output")) {
        const Json& o = j.at("output");
        cfg.out_dir = o.value("directory", cfg.out_dir);
        if (o.contains("formats")) {
            cfg.formats = o.at("formats").get<std::vector<std::string>>();
            for (const auto& f : cfg.formats) {
                if (f != "csv" && f != "json") {
                    throw config_error("config: output.formats entries must be 'csv' or 'json'");
                }
            }
        }
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    Json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw config_error(std::string("config parse error: ") + e.what());
    }
    return parse_config(j);
}

const SummaryScalar* ResultBundle::find(const std::string& name) const {
    for (const auto& s : summary) {
        if (s.name == name) return &s;
    }
    return nullptr;
}

Json ResultBundle::summary_json() const {
    Json j = Json::object();
    for (const auto& s : summary) {
        j[s.name] = Json{{"value", s.value}, {"unit", s.unit}};
    }
    return j;
}

RunOutput run_experiment(const ExperimentConfig& cfg, bool with_checks) {
    RunOutput out;
    out.bundle.experiment = experiment_name(cfg.experiment);
    out.bundle.provenance = Json{{"config", cfg.echo},
                                 {"version", kVersion},
                                 {"seed", cfg.seed}};

    switch (cfg.experiment) {
        case Experiment::Rates: run_rates(cfg, out, with_checks); break;
        case Experiment::SplittingBound: run_splitting_bound(cfg, out, with_checks); break;
        case Experiment::Heat: run_heat(cfg, out, with_checks); break;
        case Experiment::Decohere: run_decohere(cfg, out, with_checks); break;
        case Experiment::EntangleWitness:
        case Experiment::EpsilonScan: run_entangle(cfg, out, with_checks); break;
        case Experiment::Trajectories: run_trajectories(cfg, out, with_checks); break;
        case Experiment::OracleCompare: run_oracle_compare(cfg, out, with_checks); break;
    }

    out.checks_passed = true;
    for (const auto& c : out.checks) out.checks_passed = out.checks_passed && c.passed;
    return out;
}

void write_bundle(const ResultBundle& bundle, const std::string& dir,
                  const std::vector<std::string>& formats) {
    fs::create_directories(dir);
    const bool want_json =
        std::find(formats.begin(), formats.end(), "json") != formats.end();
    const bool want_csv = std::find(formats.begin(), formats.end(), "csv") != formats.end();

    if (want_json) {
        Json doc = Json{{"experiment", bundle.experiment},
                        {"summary", bundle.summary_json()},
                        {"provenance", bundle.provenance}};
        std::ofstream out(fs::path(dir) / "summary.json", std::ios::binary);
        if (!out) throw config_error("cannot write to output directory: " + dir);
        out << doc.dump(2) << '\n';
    }
    if (want_csv) {
        for (const auto& series : bundle.series) {
            if (series.columns.empty() || series.columns.front() != "time") {
                throw config_error("series '" + series.name + "' must lead with a time column");
            }
            std::ofstream out(fs::path(dir) / (series.name + ".csv"), std::ios::binary);
            if (!out) throw config_error("cannot write to output directory: " + dir);
            for (std::size_t i = 0; i < series.columns.size(); ++i) {
                if (i) out << ',';
                out << series.columns[i];
            }
            out << '\n';
            for (const auto& row : series.rows) {
                if (row.size() != series.columns.size()) {
                    throw numerics_error("series '" + series.name + "' has a ragged row");
                }
                for (std::size_t i = 0; i < row.size(); ++i) {
                    if (i) out << ',';
                    out << format_double(row[i]);
                }
                out << '\n';
            }
        }
    }
}

std::vector<double> parse_grid(const std::string& spec) {
    const auto fail = [&]() {
        throw config_error("bad grid spec '" + spec +
                           "' (use lin:a:b:n, log:a:b:n or list:v1,v2,...)");
    };
    const auto colon = spec.find(':');
    if (colon == std::string::npos) fail();
    const std::string kind = spec.substr(0, colon);
    const std::string rest = spec.substr(colon + 1);

    std::vector<double> grid;
    if (kind == "list") {
        std::stringstream ss(rest);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (tok.empty()) fail();
            grid.push_back(std::stod(tok));
        }
    } else if (kind == "lin" || kind == "log") {
        double a = 0.0, b = 0.0;
        long n = 0;
        char c1 = 0, c2 = 0;
        std::stringstream ss(rest);
        ss >> a >> c1 >> b >> c2 >> n;
        if (ss.fail() || c1 != ':' || c2 != ':' || n < 1) fail();
        if (kind == "log" && (a <= 0.0 || b <= 0.0)) {
            throw config_error("log grid endpoints must be positive");
        }
        for (long i = 0; i < n; ++i) {
            const double f = (n == 1) ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
            grid.push_back(kind == "lin" ? a + f * (b - a)
                                         : a * std::pow(b / a, f));
        }
    } else {
        fail();
    }
    if (grid.empty()) throw config_error("grid is empty");
    return grid;
}

namespace {

void set_config_value(Json& j, const std::string& path, double value) {
    Json* node = &j;
    std::size_t pos = 0;
    while (true) {
        const std::size_t dot = path.find('.', pos);
        const std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (key.empty()) throw config_error("bad parameter path '" + path + "'");
        if (!node->is_object() || !node->contains(key)) {
            throw config_error("parameter path '" + path + "' not found in config");
        }
        node = &node->at(key);
        if (dot == std::string::npos) break;
        pos = dot + 1;
    }
    if (!node->is_number()) {
        throw config_error("parameter path '" + path + "' does not address a scalar");
    }
    *node = value;
}

}  // namespace

std::vector<RunOutput> run_sweep(const Json& base_config, const std::string& param_path,
                                 const std::vector<double>& grid, const std::string& out_dir,
                                 bool write_outputs) {
    if (grid.empty()) throw config_error("sweep: empty grid");
    std::vector<RunOutput> outputs;
    outputs.reserve(grid.size());
    Json index = Json{{"param", param_path}, {"grid", grid}, {"runs", Json::array()}};

    for (std::size_t i = 0; i < grid.size(); ++i) {
        Json point = base_config;
        set_config_value(point, param_path, grid[i]);
        ExperimentConfig cfg = parse_config(point);
        char sub[32];
        std::snprintf(sub, sizeof(sub), "sweep_%03zu", i);
        auto out = run_experiment(cfg, false);
        if (write_outputs) {
            const std::string dir = (fs::path(out_dir) / sub).string();
            write_bundle(out.bundle, dir, cfg.formats);
            index["runs"].push_back(sub);
        }
        outputs.push_back(std::move(out));
    }
    if (write_outputs) {
        fs::create_directories(out_dir);
        std::ofstream out(fs::path(out_dir) / "index.json", std::ios::binary);
        out << index.dump(2) << '\n';
    }
    return outputs;
}

}  // namespace gravdec
