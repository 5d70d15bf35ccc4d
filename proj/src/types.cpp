#include "rareflow/types.hpp"

#include <cstdio>

#include "rareflow/risk.hpp"

namespace rareflow {

namespace {

void put_g17(std::ostream& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
}

}  // namespace

void write_scenario_csv(std::ostream& out, const Scenario& sc, double ttc_cap) {
    out << "step,v_av,v_lead,gap,a_lead,a_cmd,ttc,collided\n";
    for (std::size_t i = 0; i < sc.scenes.size(); ++i) {
        const Scene& s = sc.scenes[i];
        out << i << ',';
        put_g17(out, s.v_av);
        out << ',';
        put_g17(out, s.v_lead);
        out << ',';
        put_g17(out, s.gap);
        out << ',';
        put_g17(out, s.a_lead);
        out << ',';
        if (i < sc.maneuvers.size()) put_g17(out, sc.maneuvers[i].a_cmd);
        out << ',';
        put_g17(out, std::min(ttc(s), ttc_cap));
        out << ',' << (is_collision(s) ? 1 : 0) << '\n';
    }
}

}  // namespace rareflow
