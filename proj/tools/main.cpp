#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "spice/errors.hpp"
#include "spice/io.hpp"
#include "spice/sampler.hpp"
#include "spice/simgen.hpp"

namespace {

using namespace spice;

int env_threads_default() {
    if (const char* env = std::getenv("SPICE_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    return 0;  // 0 = leave the config value alone
}

void print_progress(const ProgressEvent& ev) {
    std::fprintf(stderr,
                 "progress chain=%d phase=%d iter=%d/%d acc_person=%.3f acc_item=%.3f "
                 "acc_regression=%.3f\n",
                 ev.chain, ev.phase, ev.iteration, ev.phase_total, ev.accept_person,
                 ev.accept_item, ev.accept_regression);
}

int run_calibrate(const std::string& config_path, long long seed_override, int chains_override,
                  int threads_override, const std::string& out_override, bool quiet) {
    LoadedCalibration lc = load_calibration(config_path);
    if (seed_override >= 0) lc.sampler.seed = static_cast<std::uint64_t>(seed_override);
    if (chains_override > 0) lc.sampler.n_chains = chains_override;
    const int env_threads = env_threads_default();
    if (env_threads > 0) lc.sampler.worker_count = env_threads;
    if (threads_override > 0) lc.sampler.worker_count = threads_override;
    if (!out_override.empty()) lc.output_dir = out_override;
    lc.sampler.check();

    for (const auto& w : lc.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());

    // refresh the echo lines the overrides may have touched
    for (auto& [k, v] : lc.echo) {
        if (k == "sampler.seed") v = std::to_string(lc.sampler.seed);
        if (k == "sampler.chains") v = std::to_string(lc.sampler.n_chains);
        if (k == "sampler.workers") v = std::to_string(lc.sampler.worker_count);
        if (k == "output.dir") v = lc.output_dir;
    }

    preflight_output_dir(lc.output_dir);

    Model model = build_model(std::move(lc.data), lc.blocks);
    GibbsSampler sampler(model, lc.sampler);

    const auto t0 = std::chrono::steady_clock::now();
    const auto chains = sampler.run(quiet ? ProgressFn{} : print_progress);
    const auto summary = make_summary(model.params, chains);
    const FitReport fit = compute_fit_report(sampler, chains);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    write_run_outputs(lc.output_dir, sampler, chains, summary, fit, lc.echo, secs);
    std::fprintf(stderr, "calibrate: wrote %s (%d chains, %.1fs)\n", lc.output_dir.c_str(),
                 static_cast<int>(chains.size()), secs);
    return 0;
}

int run_simulate(const std::string& config_path, long long seed_override,
                 const std::string& out_dir) {
    SimSpec spec = load_sim_spec(config_path);
    if (seed_override >= 0) spec.seed = static_cast<std::uint64_t>(seed_override);
    const SimResult result = generate(spec);
    write_sim_outputs(out_dir, result);
    std::fprintf(stderr, "simulate: %zu responses, %zu persons, %zu items -> %s\n",
                 result.data.responses.size(), result.data.persons.size(),
                 result.data.items.size(), out_dir.c_str());
    return 0;
}

int run_diagnose(const std::string& dir, const std::string& config_override) {
    const auto manifest = read_manifest(dir);
    auto need = [&](const std::string& key) {
        auto it = manifest.find(key);
        if (it == manifest.end()) {
            throw ValidationError("manifest in '" + dir + "' is missing key '" + key + "'");
        }
        return it->second;
    };

    const std::string config_path =
        config_override.empty() ? need("config_path") : config_override;
    LoadedCalibration lc = load_calibration(config_path);
    lc.sampler.seed = static_cast<std::uint64_t>(std::stoll(need("sampler.seed")));
    lc.sampler.n_chains = std::stoi(need("sampler.chains"));

    Model model = build_model(std::move(lc.data), lc.blocks);
    GibbsSampler sampler(model, lc.sampler);

    std::vector<PosteriorSamples> chains;
    for (int c = 1; c <= lc.sampler.n_chains; ++c) {
        chains.push_back(read_chain(dir, c, model.params,
                                    static_cast<int>(model.data.responses.size())));
    }

    const auto summary = make_summary(model.params, chains);
    const FitReport fit = compute_fit_report(sampler, chains);
    write_summary_csv(dir + "/summary.csv", summary);
    write_fit_txt(dir + "/fit.txt", fit);
    std::fprintf(stderr, "diagnose: recomputed summary.csv and fit.txt in %s\n", dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spice: sparse parallel item calibration engine"};
    app.require_subcommand(1);

    std::string config_path, out_dir, diag_dir, diag_config;
    long long seed = -1;
    int chains = 0, threads = 0;
    bool quiet = false;

    auto* calibrate = app.add_subcommand("calibrate", "run a calibration from a config file");
    calibrate->add_option("--config", config_path, "config file")->required();
    calibrate->add_option("--seed", seed, "override the config seed");
    calibrate->add_option("--chains", chains, "override the chain count");
    calibrate->add_option("--threads", threads, "override the worker count");
    calibrate->add_option("--out", out_dir, "override the output directory");
    calibrate->add_flag("--quiet", quiet, "suppress progress lines");

    auto* simulate = app.add_subcommand("simulate", "generate synthetic data");
    simulate->add_option("--config", config_path, "sim config file")->required();
    simulate->add_option("--seed", seed, "override the sim seed");
    simulate->add_option("--out", out_dir, "output directory")->required();

    auto* diagnose =
        app.add_subcommand("diagnose", "recompute summary and fit from stored draws");
    diagnose->add_option("--dir", diag_dir, "calibration output directory")->required();
    diagnose->add_option("--config", diag_config, "config path override");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        if (calibrate->parsed()) {
            return run_calibrate(config_path, seed, chains, threads, out_dir, quiet);
        }
        if (simulate->parsed()) return run_simulate(config_path, seed, out_dir);
        if (diagnose->parsed()) return run_diagnose(diag_dir, diag_config);
    } catch (const spice::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const spice::NumericalError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 2;
}
