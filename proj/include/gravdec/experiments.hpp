#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gravdec/fock.hpp"
#include "gravdec/model_spec.hpp"
#include "gravdec/params.hpp"

namespace gravdec {

using Json = nlohmann::ordered_json;

enum class Experiment {
    Rates,
    SplittingBound,
    Heat,
    Decohere,
    EntangleWitness,
    EpsilonScan,
    Trajectories,
    OracleCompare,
};

const char* experiment_name(Experiment e);
Experiment experiment_from_name(const std::string& name);

// Parsed and unit-converted experiment description. Physical quantities in
// the config carry explicit unit tags ({"value": 1.0, "unit": "Hz"}); the
// parser converts everything to SI (angular frequencies in rad/s) or rejects
// the unit. Dimensionless model coefficients are plain numbers.
struct ExperimentConfig {
    Experiment experiment = Experiment::Rates;

    std::optional<PhysicalSetup> physical;
    // Lenient physical block for splitting-bound: only density and frequency.
    std::optional<double> bound_rho;
    std::optional<double> bound_omega;

    std::optional<ModelSpec> model;

    double dt = 1e-2;
    double t_final = 1.0;

    int n_traj = 1;
    std::uint64_t seed = 0;
    int store_stride = 1;

    FockConfig fock;
    double probe_delta_x = 2.0;

    std::string out_dir = "out";
    std::vector<std::string> formats = {"csv", "json"};

    Json echo; // verbatim config for provenance

    int n_steps() const;
};

ExperimentConfig parse_config(const Json& j);
ExperimentConfig load_config(const std::string& path);

struct SummaryScalar {
    std::string name;
    double value = 0.0;
    std::string unit; // "1" for dimensionless
};

struct Series {
    std::string name;
    std::vector<std::string> columns; // "time" first
    std::vector<std::vector<double>> rows;
};

struct ResultBundle {
    std::string experiment;
    std::vector<SummaryScalar> summary;
    std::vector<Series> series;
    Json provenance;

    const SummaryScalar* find(const std::string& name) const;
    Json summary_json() const;
};

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct RunOutput {
    ResultBundle bundle;
    std::vector<CheckResult> checks; // filled when with_checks
    bool checks_passed = true;
};

// Executes the configured experiment. Throws config_error for bad configs and
// numerics_error when an integrator aborts. Checks are the embedded
// acceptance assertions for that experiment.
RunOutput run_experiment(const ExperimentConfig& cfg, bool with_checks);

// Serializes a bundle: <dir>/summary.json plus one CSV per series, decimal
// fields with 17 significant digits. Re-reading and re-writing any output is
// byte-identical.
void write_bundle(const ResultBundle& bundle, const std::string& dir,
                  const std::vector<std::string>& formats);

// Grid specifications: "lin:start:stop:count", "log:start:stop:count" or
// "list:v1,v2,...".
std::vector<double> parse_grid(const std::string& spec);

// Replaces the scalar at dotted `param_path` (e.g. "model.epsilon" or
// "physical.d.value") for every grid point and runs each point into
// <out>/sweep_NNN. Returns one bundle per point and writes an index file.
std::vector<RunOutput> run_sweep(const Json& base_config, const std::string& param_path,
                                 const std::vector<double>& grid, const std::string& out_dir,
                                 bool write_outputs);

}  // namespace gravdec
