#include "rareflow/idm.hpp"

#include <algorithm>
#include <cmath>

#include "rareflow/errors.hpp"
#include "rareflow/risk.hpp"

namespace rareflow {

double idm_accel(const Scene& s, const IdmParams& p) {
    if (s.gap <= 0.0) throw NonPositiveGap("idm_accel: gap must be positive");
    const double closing = s.v_av - s.v_lead;
    const double s_star =
        p.s0 + s.v_av * p.t_headway + s.v_av * closing / (2.0 * std::sqrt(p.a_max * p.b_comf));
    const double ratio = s_star / s.gap;
    const double accel =
        p.a_max * (1.0 - std::pow(s.v_av / p.v0, p.delta) - ratio * ratio);
    return std::max(accel, -p.b_m);
}

Scene step(const Scene& s, const Maneuver& m, const SimConfig& cfg, const IdmParams& p) {
    // Past contact (only reachable with stop_on_collision off) the AV holds
    // its brake cap; the controller itself is undefined at gap <= 0.
    const double a_av = s.gap > 0.0 ? idm_accel(s, p) : -p.b_m;

    Scene next;
    next.v_av = std::max(0.0, s.v_av + a_av * cfg.dt);
    next.v_lead = std::max(0.0, s.v_lead + m.a_cmd * cfg.dt);
    next.gap = s.gap + (next.v_lead - next.v_av) * cfg.dt;
    next.a_lead = m.a_cmd;
    return next;
}

Scenario rollout(const Scene& s1, const ManeuverSource& source, const SimConfig& cfg,
                 const IdmParams& p) {
    Scenario sc;
    sc.initial = s1;
    sc.scenes.push_back(s1);
    sc.min_ttc = ttc(s1);
    sc.collided = is_collision(s1);

    for (int t = 0; t < cfg.horizon; ++t) {
        if (sc.collided && cfg.stop_on_collision) break;
        const Scene& cur = sc.scenes.back();
        ManeuverDraw draw = source(cur);
        sc.maneuvers.push_back(draw.maneuver);
        sc.step_logs.push_back(draw.logs);
        const Scene next = step(cur, draw.maneuver, cfg, p);
        sc.scenes.push_back(next);
        sc.min_ttc = std::min(sc.min_ttc, ttc(next));
        if (is_collision(next)) sc.collided = true;
    }
    return sc;
}

}  // namespace rareflow
