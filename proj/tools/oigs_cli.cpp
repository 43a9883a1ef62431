// Command-line driver: one subcommand per pipeline stage, all sharing a run directory.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oigs/pipeline.hpp"

namespace {

std::string one_line(std::string s) {
    for (auto& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

int fail(const std::string& code, const std::string& message) {
    std::cerr << "error: " << code << ": " << one_line(message) << '\n';
    return 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Open-vocabulary instance Gaussian pipeline"};
    app.require_subcommand(1, 1);

    std::string seed;
    std::string config_path;
    std::string out_dir = "run";
    std::vector<CLI::App*> stages;
    for (const auto& name : oigs::stage_names()) {
        CLI::App* sub = app.add_subcommand(name, "run the " + name + " stage");
        sub->allow_extras();
        sub->add_option("--seed", seed, "random seed");
        sub->add_option("--config", config_path, "key = value config file");
        sub->add_option("--out", out_dir, "run directory");
        stages.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what());
    }

    try {
        CLI::App* sub = nullptr;
        for (auto* s : stages)
            if (s->parsed()) sub = s;

        oigs::RunConfig config;
        if (!config_path.empty()) oigs::apply_config_file(config, config_path);
        const std::vector<std::string> extras = sub->remaining();
        for (std::size_t i = 0; i < extras.size(); ++i) {
            const std::string& flag = extras[i];
            if (flag.rfind("--", 0) != 0) return fail("usage", "unexpected argument '" + flag + "'");
            std::string key = flag.substr(2), value;
            if (const auto eq = key.find('='); eq != std::string::npos) {
                value = key.substr(eq + 1);
                key.erase(eq);
            } else {
                if (i + 1 >= extras.size()) return fail("usage", "missing value for " + flag);
                value = extras[++i];
            }
            for (auto& c : key)
                if (c == '-') c = '_';
            config.set(key, value);
        }
        if (!seed.empty()) config.set("seed", seed);
        config.seed();

        const auto report = oigs::run_stage(sub->get_name(), out_dir, config);
        for (const auto& line : report.lines) std::cout << sub->get_name() << ": " << line << '\n';
    } catch (const oigs::Error& e) {
        return fail(e.code(), e.what());
    } catch (const std::exception& e) {
        return fail("internal", e.what());
    }
    return 0;
}
