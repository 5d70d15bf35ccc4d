#include "rareflow/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <thread>

#include "rareflow/errors.hpp"

namespace rareflow {

namespace {

namespace fs = std::filesystem;

void ensure_parent_dir(const std::string& path) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::ofstream open_out(const std::string& path) {
    ensure_parent_dir(path);
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    return out;
}

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileNotFound("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed JSON in " + path + ": " + e.what());
    }
    return j;
}

std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

SynthConfig default_synth_config() {
    SynthConfig cfg;
    SynthComponent cruising;
    cruising.weight = 0.75;
    cruising.mean = {25.0, 25.0, 35.0};
    cruising.cov = {{{4.0, 0.5, 0.0}, {0.5, 4.0, 0.0}, {0.0, 0.0, 64.0}}};
    SynthComponent closing;
    closing.weight = 0.25;
    closing.mean = {28.0, 23.0, 24.0};
    closing.cov = {{{2.25, 0.0, 0.0}, {0.0, 2.25, 0.0}, {0.0, 0.0, 25.0}}};
    cfg.components = {cruising, closing};
    cfg.accel_rho = 0.7;
    cfg.accel_sigma = 0.45;
    cfg.count = 100000;
    return cfg;
}

namespace {

SynthConfig synth_from_json(const nlohmann::json& j) {
    SynthConfig cfg = default_synth_config();
    if (j.contains("components")) {
        cfg.components.clear();
        for (const auto& cj : j.at("components")) {
            SynthComponent c;
            c.weight = cj.value("weight", 1.0);
            c.accel_bias = cj.value("accel_bias", 0.0);
            const auto mean = cj.at("mean").get<std::vector<double>>();
            const auto cov = cj.at("cov").get<std::vector<std::vector<double>>>();
            if (mean.size() != 3 || cov.size() != 3) {
                throw ConfigError("synth component mean/cov must be 3-dimensional");
            }
            for (std::size_t a = 0; a < 3; ++a) {
                c.mean[a] = mean[a];
                if (cov[a].size() != 3) throw ConfigError("synth component cov must be 3x3");
                for (std::size_t b = 0; b < 3; ++b) c.cov[a][b] = cov[a][b];
            }
            cfg.components.push_back(c);
        }
    }
    cfg.accel_rho = j.value("accel_rho", cfg.accel_rho);
    cfg.accel_sigma = j.value("accel_sigma", cfg.accel_sigma);
    cfg.accel_speed_gain = j.value("accel_speed_gain", cfg.accel_speed_gain);
    cfg.accel_v_ref = j.value("accel_v_ref", cfg.accel_v_ref);
    cfg.count = j.value("count", cfg.count);
    return cfg;
}

}  // namespace

RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    try {
        cfg.seed = j.value("seed", cfg.seed);
        cfg.workers = j.value("workers", cfg.workers);
        if (cfg.workers < 1) throw ConfigError("workers must be >= 1");

        if (j.contains("paths")) {
            const auto& p = j.at("paths");
            cfg.paths.samples_csv = p.value("samples_csv", cfg.paths.samples_csv);
            cfg.paths.summary_json = p.value("summary_json", cfg.paths.summary_json);
            cfg.paths.gmm_json = p.value("gmm_json", cfg.paths.gmm_json);
            cfg.paths.flow_ms_json = p.value("flow_ms_json", cfg.paths.flow_ms_json);
            cfg.paths.flow_s_json = p.value("flow_s_json", cfg.paths.flow_s_json);
            cfg.paths.loss_ms_csv = p.value("loss_ms_csv", cfg.paths.loss_ms_csv);
            cfg.paths.loss_s_csv = p.value("loss_s_csv", cfg.paths.loss_s_csv);
            cfg.paths.report_json = p.value("report_json", cfg.paths.report_json);
            cfg.paths.trace_csv = p.value("trace_csv", cfg.paths.trace_csv);
            cfg.paths.scenario_dir = p.value("scenario_dir", cfg.paths.scenario_dir);
        }
        if (j.contains("data")) {
            const auto& d = j.at("data");
            cfg.data.input_csv = d.value("input_csv", cfg.data.input_csv);
            if (d.contains("columns")) {
                const auto& c = d.at("columns");
                cfg.data.columns.frame = c.value("frame", cfg.data.columns.frame);
                cfg.data.columns.id = c.value("id", cfg.data.columns.id);
                cfg.data.columns.x = c.value("x", cfg.data.columns.x);
                cfg.data.columns.x_velocity = c.value("x_velocity", cfg.data.columns.x_velocity);
                cfg.data.columns.x_acceleration =
                    c.value("x_acceleration", cfg.data.columns.x_acceleration);
                cfg.data.columns.preceding_id = c.value("preceding_id", cfg.data.columns.preceding_id);
            }
            cfg.data.extract.min_duration = d.value("min_duration", cfg.data.extract.min_duration);
            cfg.data.extract.frame_rate = d.value("frame_rate", cfg.data.extract.frame_rate);
            cfg.data.extract.step_stride = d.value("step_stride", cfg.data.extract.step_stride);
        }
        cfg.synth = j.contains("synth") ? synth_from_json(j.at("synth")) : default_synth_config();
        if (j.contains("gmm")) {
            const auto& g = j.at("gmm");
            cfg.gmm.k = g.value("k", cfg.gmm.k);
            cfg.gmm.config.max_iter = g.value("max_iter", cfg.gmm.config.max_iter);
            cfg.gmm.config.tol = g.value("tol", cfg.gmm.config.tol);
            cfg.gmm.config.restarts = g.value("restarts", cfg.gmm.config.restarts);
            cfg.gmm.config.reg_floor = g.value("reg_floor", cfg.gmm.config.reg_floor);
        }
        if (j.contains("flow")) {
            const auto& f = j.at("flow");
            cfg.flow.layers = f.value("layers", cfg.flow.layers);
            if (f.contains("hidden")) cfg.flow.hidden = f.at("hidden").get<std::vector<std::size_t>>();
            cfg.flow.scale_clamp = f.value("scale_clamp", cfg.flow.scale_clamp);
            cfg.flow.epochs = f.value("epochs", cfg.flow.epochs);
            cfg.flow.batch_size = f.value("batch_size", cfg.flow.batch_size);
            cfg.flow.lr = f.value("lr", cfg.flow.lr);
            cfg.flow.train_samples = f.value("train_samples", cfg.flow.train_samples);
        }
        if (j.contains("sim")) {
            const auto& s = j.at("sim");
            cfg.sim.dt = s.value("dt", cfg.sim.dt);
            cfg.sim.horizon = s.value("horizon", cfg.sim.horizon);
            cfg.sim.stop_on_collision = s.value("stop_on_collision", cfg.sim.stop_on_collision);
            if (cfg.sim.dt <= 0.0 || cfg.sim.horizon < 1) throw ConfigError("sim: dt > 0, horizon >= 1");
        }
        if (j.contains("idm")) {
            const auto& p = j.at("idm");
            cfg.idm.v0 = p.value("v0", cfg.idm.v0);
            cfg.idm.t_headway = p.value("t_headway", cfg.idm.t_headway);
            cfg.idm.a_max = p.value("a_max", cfg.idm.a_max);
            cfg.idm.b_comf = p.value("b_comf", cfg.idm.b_comf);
            cfg.idm.s0 = p.value("s0", cfg.idm.s0);
            cfg.idm.delta = p.value("delta", cfg.idm.delta);
            if (p.contains("b_m")) {
                const auto& bm = p.at("b_m");
                cfg.idm.b_m = bm.is_string() ? std::numeric_limits<double>::infinity()
                                             : bm.get<double>();
            }
        }
        if (j.contains("sampler")) {
            const auto& s = j.at("sampler");
            cfg.sampler.envelope_grid = s.value("envelope_grid", cfg.sampler.envelope_grid);
            cfg.sampler.envelope_margin = s.value("envelope_margin", cfg.sampler.envelope_margin);
            cfg.sampler.max_rejections = s.value("max_rejections", cfg.sampler.max_rejections);
            if (cfg.sampler.envelope_grid < 16) throw ConfigError("sampler: envelope_grid >= 16");
            if (cfg.sampler.envelope_margin < 1.0) throw ConfigError("sampler: envelope_margin >= 1");
        }
        if (j.contains("estimator")) {
            const auto& e = j.at("estimator");
            cfg.estimator.mode = e.value("mode", cfg.estimator.mode);
            cfg.estimator.n = e.value("n", cfg.estimator.n);
            cfg.estimator.omega_target = e.value("omega_target", cfg.estimator.omega_target);
            cfg.estimator.max_n = e.value("max_n", cfg.estimator.max_n);
            cfg.estimator.checkpoint_interval =
                e.value("checkpoint_interval", cfg.estimator.checkpoint_interval);
            cfg.estimator.beta = e.value("beta", cfg.estimator.beta);
            cfg.estimator.dump_scenarios = e.value("dump_scenarios", cfg.estimator.dump_scenarios);
            cfg.estimator.defensive_epsilon =
                e.value("defensive_epsilon", cfg.estimator.defensive_epsilon);
            if (!(cfg.estimator.defensive_epsilon >= 0.0 &&
                  cfg.estimator.defensive_epsilon < 1.0)) {
                throw ConfigError("estimator: defensive_epsilon must lie in [0, 1)");
            }
            if (cfg.estimator.mode != "crude" && cfg.estimator.mode != "trimflow") {
                throw ConfigError("estimator.mode must be 'crude' or 'trimflow'");
            }
            if (cfg.estimator.checkpoint_interval == 0) {
                throw ConfigError("estimator.checkpoint_interval must be positive");
            }
            if (!(cfg.estimator.beta > 0.0 && cfg.estimator.beta < 1.0)) {
                throw ConfigError("estimator.beta must lie in (0, 1)");
            }
        }
        if (j.contains("risk")) {
            const auto& r = j.at("risk");
            cfg.risk.ttc_cap = r.value("ttc_cap", cfg.risk.ttc_cap);
            cfg.risk.risky_ttc_threshold =
                r.value("risky_ttc_threshold", cfg.risk.risky_ttc_threshold);
            if (cfg.risk.ttc_cap <= 0.0 || cfg.risk.risky_ttc_threshold <= 0.0) {
                throw ConfigError("risk: thresholds must be positive");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    nlohmann::json j = path.empty() ? nlohmann::json::object() : read_json_file(path);
    for (const std::string& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + kv);
        std::string key = kv.substr(0, eq);
        const std::string value = kv.substr(eq + 1);
        for (char& ch : key) {
            if (ch == '.') ch = '/';
        }
        nlohmann::json parsed;
        try {
            parsed = nlohmann::json::parse(value);
        } catch (const nlohmann::json::exception&) {
            parsed = value;  // plain string
        }
        j[nlohmann::json::json_pointer("/" + key)] = parsed;
    }
    if (const char* env_seed = std::getenv("RAREFLOW_SEED")) {
        try {
            j["seed"] = static_cast<std::uint64_t>(std::stoull(env_seed));
        } catch (const std::exception&) {
            throw ConfigError(std::string("RAREFLOW_SEED is not an integer: ") + env_seed);
        }
    }
    return config_from_json(j);
}

void save_summary(const IngestSummary& s, const std::string& path) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["kind"] = "summary";
    j["count"] = s.summary.count;
    j["m_min"] = s.summary.m_min;
    j["m_max"] = s.summary.m_max;
    j["scene_min"] = s.summary.scene_min;
    j["scene_max"] = s.summary.scene_max;
    j["normalizer"] = {{"shift", s.normalizer.shift}, {"scale", s.normalizer.scale}};
    auto out = open_out(path);
    out << j.dump(2) << '\n';
}

IngestSummary load_summary(const std::string& path) {
    const nlohmann::json j = read_json_file(path);
    if (j.value("kind", "") != "summary") throw DataError("not a summary file: " + path);
    IngestSummary s;
    s.summary.count = j.at("count").get<std::uint64_t>();
    s.summary.m_min = j.at("m_min").get<double>();
    s.summary.m_max = j.at("m_max").get<double>();
    const auto lo = j.at("scene_min").get<std::vector<double>>();
    const auto hi = j.at("scene_max").get<std::vector<double>>();
    if (lo.size() != kSceneDim || hi.size() != kSceneDim) {
        throw DataError("summary scene box has wrong dimension");
    }
    for (std::size_t i = 0; i < kSceneDim; ++i) {
        s.summary.scene_min[i] = lo[i];
        s.summary.scene_max[i] = hi[i];
    }
    s.normalizer.shift = j.at("normalizer").at("shift").get<Vec>();
    s.normalizer.scale = j.at("normalizer").at("scale").get<Vec>();
    if (s.normalizer.dim() != kJointDim) throw DataError("summary normalizer has wrong dimension");
    return s;
}

void cmd_ingest(const RunConfig& cfg) {
    std::vector<CfSample> samples;
    if (!cfg.data.input_csv.empty()) {
        const TrackTable tracks = load_tracks_csv(cfg.data.input_csv, cfg.data.columns);
        samples = extract_car_following(tracks, cfg.data.extract).samples;
    } else {
        Rng rng(derive_seed(cfg.seed, 0x1a9e57));
        samples = synth_naturalistic(cfg.synth, rng).samples;
    }
    const Mat table = samples_to_matrix(samples);
    IngestSummary summary;
    summary.summary = summarize_samples(table);
    summary.normalizer = fit_normalizer(table);
    ensure_parent_dir(cfg.paths.samples_csv);
    write_samples_csv(cfg.paths.samples_csv, samples);
    save_summary(summary, cfg.paths.summary_json);
}

void cmd_fit(const RunConfig& cfg) {
    const auto samples = read_samples_csv(cfg.paths.samples_csv);
    const IngestSummary summary = load_summary(cfg.paths.summary_json);
    Mat table = samples_to_matrix(samples);
    for (std::size_t i = 0; i < table.rows(); ++i) {
        std::span<double> row(table.row(i), kJointDim);
        const Vec z = normalize(summary.normalizer, row);
        std::copy(z.begin(), z.end(), row.begin());
    }
    GmmConfig gc = cfg.gmm.config;
    gc.seed = derive_seed(cfg.seed, 0xf17);
    const GmmFit fit = fit_gmm(table, cfg.gmm.k, gc);
    nlohmann::json meta;
    meta["mean_loglik"] = fit.mean_loglik;
    meta["iterations"] = fit.loglik_trace.size();
    meta["best_restart"] = fit.best_restart;
    ensure_parent_dir(cfg.paths.gmm_json);
    save_gmm(fit.model, cfg.paths.gmm_json, meta);
}

void cmd_train(const RunConfig& cfg) {
    const Gmm joint = load_gmm(cfg.paths.gmm_json);
    if (joint.dim() != kJointDim) throw DataError("cmd_train: gmm has wrong dimension");
    const IngestSummary summary = load_summary(cfg.paths.summary_json);

    // Training set: normalized draws from the fitted naturalistic model,
    // weighted by the per-scene risk indicator of the physical scene.
    Rng rng(derive_seed(cfg.seed, 0x7ea1));
    const std::size_t want = cfg.flow.train_samples;
    Mat joint_rows(want, kJointDim);
    Mat scene_rows(want, kSceneDim);
    Vec weights(want, 0.0);
    const Normalizer scene_norm = summary.normalizer.slice(kSceneDims);
    std::size_t kept = 0;
    std::array<double, kJointDim> z{};
    std::array<double, kSceneDim> raw{};
    for (std::size_t i = 0; i < want; ++i) {
        joint.sample(rng, z);
        const std::span<const double> scene_z(z.data() + 1, kSceneDim);
        denormalize_into(scene_norm, scene_z, raw);
        const double w = risk_weight(scene_from_array(raw));
        if (w <= 0.0) continue;  // not closing: zero risk, contributes nothing
        for (std::size_t d = 0; d < kJointDim; ++d) joint_rows(kept, d) = z[d];
        for (std::size_t d = 0; d < kSceneDim; ++d) scene_rows(kept, d) = z[d + 1];
        weights[kept] = w;
        kept += 1;
    }
    if (kept == 0) throw EmptyData("cmd_train: every sampled scene carried zero risk weight");
    Mat joint_kept(kept, kJointDim);
    Mat scene_kept(kept, kSceneDim);
    for (std::size_t i = 0; i < kept; ++i) {
        for (std::size_t d = 0; d < kJointDim; ++d) joint_kept(i, d) = joint_rows(i, d);
        for (std::size_t d = 0; d < kSceneDim; ++d) scene_kept(i, d) = scene_rows(i, d);
    }
    weights.resize(kept);

    auto train_one = [&](std::size_t dim, const Mat& rows, std::uint64_t tag) {
        Rng init_rng(derive_seed(cfg.seed, tag));
        Flow flow = make_flow(dim, std::max(cfg.flow.layers, dim), cfg.flow.hidden,
                              cfg.flow.scale_clamp, init_rng);
        TrainConfig tc;
        tc.epochs = cfg.flow.epochs;
        tc.batch_size = cfg.flow.batch_size;
        tc.lr = cfg.flow.lr;
        tc.seed = derive_seed(cfg.seed, tag + 1);
        tc.scale_clamp = cfg.flow.scale_clamp;
        const TrainResult res = train_flow(flow, rows, weights, tc);
        return std::pair<Flow, TrainResult>(std::move(flow), res);
    };

    auto [flow_ms, res_ms] = train_one(kJointDim, joint_kept, 0x2001);
    auto [flow_s, res_s] = train_one(kSceneDim, scene_kept, 0x3001);

    ensure_parent_dir(cfg.paths.flow_ms_json);
    save_flow(flow_ms, cfg.paths.flow_ms_json);
    ensure_parent_dir(cfg.paths.flow_s_json);
    save_flow(flow_s, cfg.paths.flow_s_json);

    auto write_trace = [&](const std::string& path, const TrainResult& res) {
        auto out = open_out(path);
        out << "epoch,loss\n";
        for (std::size_t e = 0; e < res.loss_trace.size(); ++e) {
            out << e << ',' << g17(res.loss_trace[e]) << '\n';
        }
    };
    write_trace(cfg.paths.loss_ms_csv, res_ms);
    write_trace(cfg.paths.loss_s_csv, res_s);
}

namespace {

// Everything one estimation run needs, assembled once and shared read-only by
// the rollout workers. Trimflow proposals are wrapped in the defensive
// mixture so ratios stay finite at states far outside the training support.
struct EstimateSetup {
    Gmm natural_joint;
    Gmm natural_state;
    Flow proposal_joint_flow;
    Flow proposal_state_flow;
    std::unique_ptr<DefensiveMixture> guarded_joint;
    std::unique_ptr<DefensiveMixture> guarded_state;
    bool trimflow = false;
    IngestSummary summary;
    Normalizer scene_norm;
    SamplerConfig sampler;
    SimConfig sim;
    IdmParams idm;
    RiskConfig risk;

    DensityPair natural() const { return DensityPair{&natural_joint, &natural_state}; }
    DensityPair proposal() const {
        if (trimflow) return DensityPair{guarded_joint.get(), guarded_state.get()};
        return natural();
    }
    const DensityModel& initial_density() const {
        if (trimflow) return *guarded_state;
        return natural_state;
    }
};

struct ScenarioOutcome {
    IsSample sample;
    bool risky = false;  // min TTC below the diagnostic threshold
};

struct WorkerAccum {
    WeightedMoments moments;
    SamplerStats stats;
    std::uint64_t risky = 0;

    void merge(const WorkerAccum& o) {
        moments.merge(o.moments);
        stats.merge(o.stats);
        risky += o.risky;
    }
};

ScenarioOutcome run_one_scenario(const EstimateSetup& setup, const RunConfig& cfg,
                                 std::uint64_t index, SamplerStats& stats) {
    Rng rng(derive_seed(cfg.seed, index));
    const Scene s1 = sample_initial_state(setup.initial_density(), setup.summary.normalizer,
                                          setup.summary.summary, setup.sampler.max_rejections,
                                          stats, rng);
    const auto s1_z = normalize(setup.scene_norm, scene_to_array(s1));
    InitialLogDensities init_logs;
    init_logs.log_p_s = setup.natural().marginal->log_pdf(s1_z);
    init_logs.log_q_s = setup.proposal().marginal->log_pdf(s1_z);

    const ManeuverSource source = maneuver_source(setup.proposal(), setup.natural(),
                                                  setup.summary.normalizer, setup.sampler, &stats,
                                                  &rng);
    Scenario sc = rollout(s1, source, setup.sim, setup.idm);
    sc.initial_log = init_logs;

    if (!cfg.paths.scenario_dir.empty() && index < cfg.estimator.dump_scenarios) {
        char name[32];
        std::snprintf(name, sizeof(name), "scenario_%05llu.csv",
                      static_cast<unsigned long long>(index));
        auto out = open_out((fs::path(cfg.paths.scenario_dir) / name).string());
        write_scenario_csv(out, sc, setup.risk.ttc_cap);
    }

    ScenarioOutcome outcome;
    outcome.sample.log_ratio = scenario_log_ratio(sc);
    outcome.sample.hit = sc.collided;
    outcome.risky = sc.min_ttc < setup.risk.risky_ttc_threshold;
    return outcome;
}

// One checkpoint chunk of scenarios [start, start+count), split statically
// across workers and merged in worker order so results do not depend on
// scheduling.
WorkerAccum run_chunk(const EstimateSetup& setup, const RunConfig& cfg, std::uint64_t start,
                      std::uint64_t count) {
    const std::uint64_t workers =
        std::min<std::uint64_t>(static_cast<std::uint64_t>(cfg.workers), std::max<std::uint64_t>(count, 1));
    std::vector<WorkerAccum> partial(workers);
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> threads;
    const std::uint64_t per = (count + workers - 1) / workers;
    for (std::uint64_t w = 0; w < workers; ++w) {
        threads.emplace_back([&, w]() {
            try {
                const std::uint64_t lo = start + w * per;
                const std::uint64_t hi = std::min(start + count, lo + per);
                for (std::uint64_t i = lo; i < hi; ++i) {
                    const ScenarioOutcome o = run_one_scenario(setup, cfg, i, partial[w].stats);
                    const double weight = std::exp(o.sample.log_ratio);
                    if (!std::isfinite(weight)) {
                        throw NonFiniteWeight("estimate: non-finite likelihood ratio at scenario " +
                                              std::to_string(i));
                    }
                    partial[w].moments.add(weight, o.sample.hit);
                    partial[w].risky += o.risky ? 1 : 0;
                }
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (std::uint64_t w = 0; w < workers; ++w) {
        if (errors[w]) std::rethrow_exception(errors[w]);
    }
    WorkerAccum total;
    for (const auto& p : partial) total.merge(p);
    return total;
}

}  // namespace

void cmd_estimate(const RunConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();

    EstimateSetup setup;
    setup.natural_joint = load_gmm(cfg.paths.gmm_json);
    if (setup.natural_joint.dim() != kJointDim) throw DataError("cmd_estimate: gmm dimension");
    setup.natural_state = gmm_marginal(setup.natural_joint, kSceneDims);
    setup.trimflow = cfg.estimator.mode == "trimflow";
    if (setup.trimflow) {
        setup.proposal_joint_flow = load_flow(cfg.paths.flow_ms_json);
        setup.proposal_state_flow = load_flow(cfg.paths.flow_s_json);
        if (setup.proposal_joint_flow.dim() != kJointDim ||
            setup.proposal_state_flow.dim() != kSceneDim) {
            throw DataError("cmd_estimate: flow dimensions do not match the scenario layout");
        }
        setup.guarded_joint = std::make_unique<DefensiveMixture>(
            setup.proposal_joint_flow, setup.natural_joint, cfg.estimator.defensive_epsilon);
        setup.guarded_state = std::make_unique<DefensiveMixture>(
            setup.proposal_state_flow, setup.natural_state, cfg.estimator.defensive_epsilon);
    }
    setup.summary = load_summary(cfg.paths.summary_json);
    setup.scene_norm = setup.summary.normalizer.slice(kSceneDims);
    setup.sampler = cfg.sampler;
    setup.sampler.m_min = setup.summary.summary.m_min;
    setup.sampler.m_max = setup.summary.summary.m_max;
    setup.sim = cfg.sim;
    setup.idm = cfg.idm;
    setup.risk = cfg.risk;

    const bool fixed_budget = cfg.estimator.n > 0;
    const std::uint64_t budget = fixed_budget ? cfg.estimator.n : cfg.estimator.max_n;

    WorkerAccum total;
    std::vector<TraceRow> trace;
    std::uint64_t next = 0;
    bool reached_target = false;
    while (next < budget) {
        const std::uint64_t count = std::min(cfg.estimator.checkpoint_interval, budget - next);
        const WorkerAccum chunk = run_chunk(setup, cfg, next, count);
        total.merge(chunk);
        next += count;
        const EstimationReport snap = finalize_report(total.moments, cfg.estimator.beta);
        trace.push_back(TraceRow{snap.n, snap.estimate, snap.omega});
        if (!fixed_budget && snap.estimate > 0.0 && snap.omega < cfg.estimator.omega_target) {
            reached_target = true;
            break;
        }
    }
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const EstimationReport report = finalize_report(total.moments, cfg.estimator.beta, wall);

    {
        auto out = open_out(cfg.paths.trace_csv);
        out << "n,estimate,omega\n";
        for (const TraceRow& row : trace) {
            out << row.n << ',' << g17(row.estimate) << ',' << g17(row.omega) << '\n';
        }
    }

    nlohmann::json rj;
    rj["format_version"] = 1;
    rj["kind"] = "estimate_report";
    rj["mode"] = cfg.estimator.mode;
    rj["seed"] = cfg.seed;
    rj["n"] = report.n;
    rj["estimate"] = report.estimate;
    rj["variance"] = report.variance;
    rj["std_error"] = report.std_error;
    rj["omega"] = std::isfinite(report.omega) ? nlohmann::json(report.omega)
                                              : nlohmann::json("inf");
    rj["beta"] = report.beta;
    rj["z"] = report.z;
    rj["hits"] = report.hits;
    rj["weights"] = {{"min", report.weight_min},
                     {"max", report.weight_max},
                     {"mean", report.weight_mean},
                     {"n_eff", report.n_eff}};
    rj["sampler"] = {{"candidates", total.stats.candidates},
                     {"accepted", total.stats.accepted},
                     {"acceptance_rate", total.stats.acceptance_rate()},
                     {"envelope_violations", total.stats.envelope_violations},
                     {"violation_rate", total.stats.violation_rate()},
                     {"initial_draws", total.stats.initial_draws},
                     {"initial_rejected", total.stats.initial_rejected},
                     {"valid", total.stats.valid()}};
    rj["risky_shift"] = {{"threshold", cfg.risk.risky_ttc_threshold},
                         {"count", total.risky},
                         {"fraction", static_cast<double>(total.risky) /
                                          static_cast<double>(report.n)}};
    rj["budget"] = {{"requested_n", cfg.estimator.n},
                    {"omega_target", cfg.estimator.omega_target},
                    {"max_n", cfg.estimator.max_n},
                    {"checkpoint_interval", cfg.estimator.checkpoint_interval},
                    {"reached_omega_target", reached_target}};
    rj["timing"] = {{"wall_clock_s", wall}};
    auto out = open_out(cfg.paths.report_json);
    out << rj.dump(2) << '\n';
}

nlohmann::json cmd_plan(double p, double b, double beta) {
    PlannerInput in{p, b, beta};
    nlohmann::json j;
    j["p"] = p;
    j["b"] = b;
    j["beta"] = beta;
    j["required_n"] = required_n(in);
    return j;
}

nlohmann::json cmd_compare(const std::string& crude_report_path,
                           const std::string& trimflow_report_path) {
    try {
        return compare_reports(read_json_file(crude_report_path),
                               read_json_file(trimflow_report_path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("cmd_compare: malformed report: ") + e.what());
    }
}

nlohmann::json compare_reports(const nlohmann::json& a, const nlohmann::json& b) {
    for (const auto* r : {&a, &b}) {
        if (r->value("kind", "") != "estimate_report") {
            throw DataError("cmd_compare: not an estimate report");
        }
    }
    if (a.at("beta").get<double>() != b.at("beta").get<double>()) {
        throw IncompatibleTargets("cmd_compare: reports use different beta");
    }
    const double target_a = a.at("budget").at("omega_target").get<double>();
    const double target_b = b.at("budget").at("omega_target").get<double>();
    if (target_a != target_b) {
        throw IncompatibleTargets("cmd_compare: reports use different omega targets");
    }

    const double n_crude = a.at("n").get<double>();
    const double n_trim = b.at("n").get<double>();
    nlohmann::json out;
    out["kind"] = "comparison";
    out["omega_target"] = target_a;
    out["rate_crude"] = a.at("estimate");
    out["rate_trimflow"] = b.at("estimate");
    out["rate_gap"] = b.at("estimate").get<double>() - a.at("estimate").get<double>();
    out["test_count_ratio"] = n_crude > 0.0 ? n_trim / n_crude : 0.0;
    out["reduction"] = n_crude > 0.0 ? 1.0 - n_trim / n_crude : 0.0;
    const double var_a = a.at("variance").get<double>();
    const double var_b = b.at("variance").get<double>();
    out["variance_ratio"] = var_a > 0.0 ? var_b / var_a : 0.0;
    if (a.contains("risky_shift") && b.contains("risky_shift")) {
        const double fa = a.at("risky_shift").at("fraction").get<double>();
        const double fb = b.at("risky_shift").at("fraction").get<double>();
        out["risky_shift_ratio"] = fa > 0.0 ? fb / fa : 0.0;
    }
    return out;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const DataError*>(&e)) return 3;
    if (dynamic_cast<const NumericError*>(&e)) return 4;
    return 1;
}

}  // namespace rareflow
