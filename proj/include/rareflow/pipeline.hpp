#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rareflow/data_io.hpp"
#include "rareflow/defensive.hpp"
#include "rareflow/estimator.hpp"
#include "rareflow/gmm.hpp"
#include "rareflow/idm.hpp"
#include "rareflow/normalizer.hpp"
#include "rareflow/realnvp.hpp"
#include "rareflow/risk.hpp"
#include "rareflow/sampler.hpp"

#include "json.hpp"

namespace rareflow {

struct RunPaths {
    std::string samples_csv = "out/samples.csv";
    std::string summary_json = "out/summary.json";
    std::string gmm_json = "out/gmm.json";
    std::string flow_ms_json = "out/flow_ms.json";
    std::string flow_s_json = "out/flow_s.json";
    std::string loss_ms_csv = "out/loss_ms.csv";
    std::string loss_s_csv = "out/loss_s.csv";
    std::string report_json = "out/report.json";
    std::string trace_csv = "out/trace.csv";
    std::string scenario_dir;  // when set, estimate dumps the first few scenario logs
};

struct FlowSection {
    std::size_t layers = 8;
    std::vector<std::size_t> hidden = {512, 512};
    double scale_clamp = 5.0;
    int epochs = 60;
    std::size_t batch_size = 512;
    double lr = 1e-3;
    std::size_t train_samples = 100000;
};

struct EstimatorSection {
    std::string mode = "trimflow";  // crude | trimflow
    std::uint64_t n = 0;            // fixed rollout budget when > 0
    double omega_target = 0.2;      // stopping target when n == 0
    std::uint64_t max_n = 5000000;  // safety cap in omega-target mode
    std::uint64_t checkpoint_interval = 1000;
    double beta = 0.05;
    std::uint64_t dump_scenarios = 0;
    // share of the naturalistic model mixed into the flow proposal (trimflow
    // mode only); bounds every likelihood ratio by 1/epsilon
    double defensive_epsilon = 0.05;
};

struct GmmSection {
    int k = 6;
    GmmConfig config;
};

struct DataSection {
    std::string input_csv;  // empty -> synthesize
    ColumnMap columns;
    ExtractConfig extract;
};

struct RunConfig {
    std::uint64_t seed = 1;
    int workers = 2;
    RunPaths paths;
    DataSection data;
    SynthConfig synth;
    GmmSection gmm;
    FlowSection flow;
    SimConfig sim;
    IdmParams idm;
    SamplerConfig sampler;  // maneuver bounds are filled from the summary at use
    EstimatorSection estimator;
    RiskConfig risk;
};

// Two-component defaults so `ingest` works with an empty config.
SynthConfig default_synth_config();

RunConfig config_from_json(const nlohmann::json& j);

// Reads the config file, applies dotted-path --set overrides
// (e.g. gmm.k=4), then the RAREFLOW_SEED environment variable.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

// Normalizer + data box persisted together at ingest time.
struct IngestSummary {
    DataSummary summary;
    Normalizer normalizer;
};

void save_summary(const IngestSummary& s, const std::string& path);
IngestSummary load_summary(const std::string& path);

void cmd_ingest(const RunConfig& cfg);
void cmd_fit(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_estimate(const RunConfig& cfg);
nlohmann::json cmd_plan(double p, double b, double beta);
nlohmann::json cmd_compare(const std::string& crude_report_path,
                           const std::string& trimflow_report_path);
nlohmann::json compare_reports(const nlohmann::json& crude_report,
                               const nlohmann::json& trimflow_report);

// invalid config -> 2, data error -> 3, numerical failure -> 4.
int exit_code_for(const std::exception& e);

}  // namespace rareflow
