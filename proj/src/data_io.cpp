#include "rareflow/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "rareflow/errors.hpp"

namespace rareflow {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    for (auto& f : fields) {
        const auto begin = f.find_first_not_of(" \t");
        const auto end = f.find_last_not_of(" \t");
        f = begin == std::string::npos ? std::string() : f.substr(begin, end - begin + 1);
    }
    return fields;
}

bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    const auto res = std::from_chars(first, last, out);
    return res.ec == std::errc() && res.ptr == last && std::isfinite(out);
}

bool parse_int(const std::string& s, std::int64_t& out) {
    if (s.empty()) return false;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    const auto res = std::from_chars(first, last, out);
    return res.ec == std::errc() && res.ptr == last;
}

}  // namespace

TrackTable load_tracks_csv(const std::string& path, const ColumnMap& columns) {
    std::ifstream in(path);
    if (!in) throw FileNotFound("load_tracks_csv: cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw DataError("load_tracks_csv: empty file " + path);
    const auto header = split_csv_line(line);

    auto find_col = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return i;
        }
        throw DataError("load_tracks_csv: missing required column '" + name + "' in " + path);
    };
    const std::size_t c_frame = find_col(columns.frame);
    const std::size_t c_id = find_col(columns.id);
    const std::size_t c_x = find_col(columns.x);
    const std::size_t c_v = find_col(columns.x_velocity);
    const std::size_t c_a = find_col(columns.x_acceleration);
    const std::size_t c_prec = find_col(columns.preceding_id);
    const std::size_t needed =
        1 + std::max({c_frame, c_id, c_x, c_v, c_a, c_prec});

    TrackTable table;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        table.data_lines += 1;
        const auto fields = split_csv_line(line);
        TrackRow row;
        const bool ok = fields.size() >= needed && parse_int(fields[c_frame], row.frame) &&
                        parse_int(fields[c_id], row.id) && parse_double(fields[c_x], row.x) &&
                        parse_double(fields[c_v], row.x_velocity) &&
                        parse_double(fields[c_a], row.x_acceleration) &&
                        parse_int(fields[c_prec], row.preceding_id) && row.frame >= 0 && row.id >= 0;
        if (!ok) {
            table.malformed += 1;
            continue;
        }
        table.rows.push_back(row);
    }
    if (table.data_lines > 0 &&
        static_cast<double>(table.malformed) > 0.01 * static_cast<double>(table.data_lines)) {
        throw TooManyMalformed("load_tracks_csv: " + std::to_string(table.malformed) + " of " +
                               std::to_string(table.data_lines) + " rows malformed in " + path);
    }
    return table;
}

ExtractResult extract_car_following(const TrackTable& tracks, const ExtractConfig& cfg) {
    if (cfg.step_stride < 1) throw InvalidInput("extract_car_following: stride must be >= 1");
    if (cfg.min_duration < 2) throw InvalidInput("extract_car_following: min_duration must be >= 2");
    const std::size_t stride = static_cast<std::size_t>(cfg.step_stride);

    // Frame-indexed lookup per vehicle, ids in sorted order for determinism.
    std::map<std::int64_t, std::map<std::int64_t, const TrackRow*>> by_id;
    for (const TrackRow& row : tracks.rows) by_id[row.id][row.frame] = &row;

    ExtractResult out;
    for (const auto& follower_entry : by_id) {
        const auto& frames = follower_entry.second;
        // Consecutive-frame runs with an unchanged, present leader.
        std::vector<const TrackRow*> run;
        std::int64_t run_leader = 0;
        auto flush = [&]() {
            if (run_leader != 0 && static_cast<std::int64_t>(run.size()) >= cfg.min_duration) {
                const auto& leader_frames = by_id.at(run_leader);
                for (std::size_t i = 0; i + stride < run.size(); i += stride) {
                    const TrackRow* fr = run[i];
                    const TrackRow* lr = leader_frames.at(fr->frame);
                    const TrackRow* lr_next =
                        leader_frames.at(fr->frame + static_cast<std::int64_t>(stride));
                    Scene s;
                    s.v_av = fr->x_velocity;
                    s.v_lead = lr->x_velocity;
                    s.gap = lr->x - fr->x;
                    s.a_lead = lr->x_acceleration;
                    if (s.gap <= 0.0) {
                        out.skipped_nonpositive_gap += 1;
                        continue;
                    }
                    out.samples.push_back(CfSample{s, Maneuver{lr_next->x_acceleration}});
                }
            }
            run.clear();
            run_leader = 0;
        };

        std::int64_t prev_frame = -2;
        for (const auto& [frame, row] : frames) {
            const std::int64_t leader = row->preceding_id;
            const bool leader_present =
                leader != 0 && by_id.count(leader) && by_id.at(leader).count(frame);
            const bool contiguous = frame == prev_frame + 1;
            if (!leader_present || leader != run_leader || !contiguous) {
                flush();
                if (leader_present) run_leader = leader;
            }
            if (leader_present && leader == run_leader) run.push_back(row);
            prev_frame = frame;
        }
        flush();
    }
    if (out.samples.empty()) throw NoPairsFound("extract_car_following: no persistent pairs found");
    return out;
}

SynthResult synth_naturalistic(const SynthConfig& cfg, Rng& rng) {
    if (cfg.components.empty()) throw InvalidInput("synth_naturalistic: no mixture components");
    if (cfg.count == 0) throw InvalidInput("synth_naturalistic: zero sample count");
    if (!(cfg.accel_rho > -1.0 && cfg.accel_rho < 1.0)) {
        throw InvalidInput("synth_naturalistic: accel_rho must lie in (-1, 1)");
    }

    double wsum = 0.0;
    for (const auto& c : cfg.components) wsum += c.weight;
    if (wsum <= 0.0) throw InvalidInput("synth_naturalistic: nonpositive component weights");

    // Cholesky factor per scene component.
    std::vector<Mat> chol(cfg.components.size());
    std::vector<double> cum(cfg.components.size());
    double acc = 0.0;
    for (std::size_t c = 0; c < cfg.components.size(); ++c) {
        Mat cov(3, 3);
        for (std::size_t a = 0; a < 3; ++a) {
            for (std::size_t b = 0; b < 3; ++b) cov(a, b) = cfg.components[c].cov[a][b];
        }
        if (!cholesky_lower(cov, chol[c])) {
            throw SingularComponent("synth_naturalistic: scene covariance not positive definite");
        }
        acc += cfg.components[c].weight / wsum;
        cum[c] = acc;
    }
    cum.back() = 1.0;

    // Stationary std dev of the mean-reverting acceleration chain, and the
    // total speed-reversion gain of its fixed point.
    const double rho = cfg.accel_rho;
    const double sigma_m = cfg.accel_sigma;
    const double sigma_a = sigma_m / std::sqrt(1.0 - rho * rho);
    const double kappa = cfg.accel_speed_gain;
    const double lambda = kappa / (1.0 - rho);

    SynthResult out;
    out.samples.reserve(cfg.count);
    for (std::uint64_t i = 0; i < cfg.count; ++i) {
        const double u = rng.uniform();
        std::size_t c = 0;
        while (c + 1 < cum.size() && u >= cum[c]) ++c;
        double z[3] = {rng.normal(), rng.normal(), rng.normal()};
        double v[3];
        chol_affine(chol[c], cfg.components[c].mean, std::span<const double>(z, 3),
                    std::span<double>(v, 3));
        const double bias = cfg.components[c].accel_bias;
        const double pull = bias + lambda * (cfg.accel_v_ref - v[1]);
        const double a_lead = pull + (sigma_a > 0.0 ? sigma_a * rng.normal() : 0.0);
        const double m = rho * a_lead + (1.0 - rho) * bias +
                         kappa * (cfg.accel_v_ref - v[1]) +
                         (sigma_m > 0.0 ? sigma_m * rng.normal() : 0.0);
        Scene s;
        s.v_av = v[0];
        s.v_lead = v[1];
        s.gap = v[2];
        s.a_lead = a_lead;
        out.samples.push_back(CfSample{s, Maneuver{m}});
    }

    if (sigma_m > 0.0) {
        // The exact joint over [m, v_av, v_lead, gap, a_lead]: with
        //   a = lambda (v_ref - v_lead) + eta,  m = lambda (v_ref - v_lead)
        //       + rho eta + eps,
        // both acceleration coordinates are linear in the Gaussian scene, so
        // each component stays jointly Gaussian with closed-form moments.
        std::vector<double> weights;
        std::vector<Vec> means;
        std::vector<Mat> covs;
        for (const auto& comp : cfg.components) {
            weights.push_back(comp.weight / wsum);
            const double mu_pull = comp.accel_bias + lambda * (cfg.accel_v_ref - comp.mean[1]);
            Vec mu(kJointDim, 0.0);
            mu[0] = mu_pull;
            mu[1] = comp.mean[0];
            mu[2] = comp.mean[1];
            mu[3] = comp.mean[2];
            mu[4] = mu_pull;
            Mat cov(kJointDim, kJointDim);
            for (std::size_t a = 0; a < 3; ++a) {
                for (std::size_t b = 0; b < 3; ++b) cov(a + 1, b + 1) = comp.cov[a][b];
            }
            const double va = sigma_a * sigma_a;
            const double c_vv = comp.cov[1][1];   // Var(v_lead)
            const double c_av = comp.cov[0][1];   // Cov(v_av, v_lead)
            const double c_gv = comp.cov[2][1];   // Cov(gap, v_lead)
            cov(0, 0) = lambda * lambda * c_vv + va;
            cov(4, 4) = lambda * lambda * c_vv + va;
            cov(0, 4) = cov(4, 0) = lambda * lambda * c_vv + rho * va;
            for (const std::size_t row : {std::size_t{0}, std::size_t{4}}) {
                cov(row, 1) = cov(1, row) = -lambda * c_av;
                cov(row, 2) = cov(2, row) = -lambda * c_vv;
                cov(row, 3) = cov(3, row) = -lambda * c_gv;
            }
            covs.push_back(std::move(cov));
            means.push_back(std::move(mu));
        }
        out.generating_joint = Gmm(std::move(weights), std::move(means), std::move(covs));
    }
    return out;
}

Mat samples_to_matrix(const std::vector<CfSample>& samples) {
    Mat m(samples.size(), kJointDim);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto row = joint_to_array(samples[i].maneuver, samples[i].scene);
        for (std::size_t j = 0; j < kJointDim; ++j) m(i, j) = row[j];
    }
    return m;
}

void write_samples_csv(const std::string& path, const std::vector<CfSample>& samples) {
    std::ofstream out(path);
    if (!out) throw DataError("write_samples_csv: cannot open " + path);
    out << "v_av,v_lead,gap,a_lead,m\n";
    char buf[220];
    for (const CfSample& s : samples) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g\n", s.scene.v_av,
                      s.scene.v_lead, s.scene.gap, s.scene.a_lead, s.maneuver.a_cmd);
        out << buf;
    }
}

std::vector<CfSample> read_samples_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileNotFound("read_samples_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("read_samples_csv: empty file " + path);
    if (split_csv_line(line) != std::vector<std::string>{"v_av", "v_lead", "gap", "a_lead", "m"}) {
        throw DataError("read_samples_csv: unexpected header in " + path);
    }
    std::vector<CfSample> samples;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 5) throw DataError("read_samples_csv: bad row in " + path);
        CfSample s;
        if (!parse_double(fields[0], s.scene.v_av) || !parse_double(fields[1], s.scene.v_lead) ||
            !parse_double(fields[2], s.scene.gap) || !parse_double(fields[3], s.scene.a_lead) ||
            !parse_double(fields[4], s.maneuver.a_cmd)) {
            throw DataError("read_samples_csv: unparsable row in " + path);
        }
        samples.push_back(s);
    }
    return samples;
}

}  // namespace rareflow
