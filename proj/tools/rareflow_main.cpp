#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "rareflow/pipeline.hpp"

#include "CLI11.hpp"

int main(int argc, char** argv) {
    CLI::App app{"rareflow: rare-event collision-rate estimation for a car-following controller"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run configuration");
        sub->add_option("--set", overrides, "Override a config entry, e.g. --set gmm.k=4");
    };

    auto* ingest = app.add_subcommand("ingest", "Load or synthesize samples; write samples CSV + summary");
    add_common(ingest);
    auto* fit = app.add_subcommand("fit", "Fit the naturalistic mixture model");
    add_common(fit);
    auto* train = app.add_subcommand("train", "Train the joint and state proposal flows");
    add_common(train);
    auto* estimate = app.add_subcommand("estimate", "Run rollouts and estimate the collision rate");
    add_common(estimate);

    auto* plan = app.add_subcommand("plan", "Sample-size bound for a target relative half-width");
    double plan_p = 0.0, plan_b = 0.2, plan_beta = 0.05;
    plan->add_option("--p", plan_p, "Anticipated event rate")->required();
    plan->add_option("--b", plan_b, "Relative half-width threshold");
    plan->add_option("--beta", plan_beta, "Significance level");

    auto* compare = app.add_subcommand("compare", "Compare a crude report against a trimflow report");
    std::string crude_path, trim_path, compare_out;
    compare->add_option("--crude", crude_path, "Crude-mode report JSON")->required();
    compare->add_option("--trimflow", trim_path, "Trimflow-mode report JSON")->required();
    compare->add_option("--out", compare_out, "Optional output path for the comparison JSON");

    CLI11_PARSE(app, argc, argv);

    try {
        if (plan->parsed()) {
            std::cout << rareflow::cmd_plan(plan_p, plan_b, plan_beta).dump(2) << '\n';
            return 0;
        }
        if (compare->parsed()) {
            const nlohmann::json j = rareflow::cmd_compare(crude_path, trim_path);
            std::cout << j.dump(2) << '\n';
            if (!compare_out.empty()) {
                std::ofstream out(compare_out);
                out << j.dump(2) << '\n';
            }
            return 0;
        }
        const rareflow::RunConfig cfg = rareflow::load_run_config(config_path, overrides);
        if (ingest->parsed()) {
            rareflow::cmd_ingest(cfg);
        } else if (fit->parsed()) {
            rareflow::cmd_fit(cfg);
        } else if (train->parsed()) {
            rareflow::cmd_train(cfg);
        } else if (estimate->parsed()) {
            rareflow::cmd_estimate(cfg);
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return rareflow::exit_code_for(e);
    }
}
