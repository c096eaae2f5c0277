// sepo command-line front end: data ingestion, synthetic universes, one-step
// and multi-step backtests, hyperparameter grids, allocator comparison, and
// the ensemble-loss identity check.
//
// Exit codes: 0 ok, 2 usage/validation error, 3 runtime failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "sepo/sepo.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

struct CommonOpts {
    std::string config_path;
    std::string input_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
    int parallel = 1;
    bool allow_extended = false;
    bool dry_run = false;
    int verbosity = 0;
};

nlohmann::json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in.is_open()) throw sepo::FileNotFound("cannot open config " + path);
    nlohmann::json j;
    in >> j;
    return j;
}

void ensure_out_dir(const CommonOpts& opts) {
    if (!opts.out_dir.empty()) fs::create_directories(opts.out_dir);
}

fs::path out_file(const CommonOpts& opts, const std::string& name) {
    return fs::path(opts.out_dir) / name;
}

sepo::ExperimentConfig parse_experiment_config(const nlohmann::json& j, const CommonOpts& opts) {
    auto cfg = sepo::experiment_config_from_json(j);
    if (opts.seed) cfg.seed = *opts.seed;
    cfg.validate(opts.allow_extended);
    return cfg;
}

int cmd_ingest(const CommonOpts& opts) {
    const auto loaded = sepo::load_prices(opts.input_path);
    const auto returns = sepo::compute_returns(loaded.series);
    std::cout << "assets: " << returns.n_assets() << "\n"
              << "price rows: " << loaded.series.n_rows() << "\n"
              << "rows dropped by cleaning: " << loaded.rows_dropped << "\n"
              << "return rows: " << returns.n_rows() << "\n";
    if (opts.dry_run) return kExitOk;
    ensure_out_dir(opts);
    const auto path = out_file(opts, "returns.csv");
    sepo::write_returns_csv(path, returns);
    std::cout << "wrote " << path.string() << "\n";
    return kExitOk;
}

struct SynthOpts {
    int assets = 20;
    int days = 2000;
    double corr = 0.5;
    double vol_lo = 0.005;
    double vol_hi = 0.02;
    double drift_lo = 0.0;
    double drift_hi = 0.001;
};

int cmd_synth(const CommonOpts& opts, const SynthOpts& synth) {
    const auto returns = sepo::synth_universe(synth.assets, synth.days, {synth.vol_lo, synth.vol_hi},
                                              synth.corr, {synth.drift_lo, synth.drift_hi},
                                              opts.seed.value_or(42));
    std::cout << "generated " << returns.n_rows() << " days x " << returns.n_assets() << " assets\n";
    if (opts.dry_run) return kExitOk;
    ensure_out_dir(opts);
    const auto path = out_file(opts, "universe.csv");
    sepo::write_returns_csv(path, returns);
    std::cout << "wrote " << path.string() << "\n";
    return kExitOk;
}

int write_run_reports(const CommonOpts& opts, const std::vector<sepo::RunResult>& runs) {
    ensure_out_dir(opts);
    sepo::write_results_csv(out_file(opts, "results.csv"), runs);
    sepo::write_summary_json(out_file(opts, "summary.json"), runs);
    sepo::write_weights_history_csv(out_file(opts, "weights_history.csv"), runs);
    sepo::write_plot_data_csv(out_file(opts, "plot_data.csv"), runs);
    if (opts.verbosity > 0)
        for (const auto& name : {"results.csv", "summary.json", "weights_history.csv", "plot_data.csv"})
            std::cout << "wrote " << out_file(opts, name).string() << "\n";
    return kExitOk;
}

int cmd_backtest(const CommonOpts& opts) {
    const auto cfg = parse_experiment_config(load_json(opts.config_path), opts);
    const auto data = sepo::load_returns(opts.input_path);
    if (opts.dry_run) {
        const auto needed = cfg.train_len + sepo::kDaysPerMonth * cfg.horizon_months;
        std::cout << "data rows: " << data.n_rows() << ", required: " << needed << "\n"
                  << "mode: " << (cfg.horizon_months > 1 ? "multi_step" : "one_step") << "\n";
        return kExitOk;
    }
    sepo::RunResult run = cfg.horizon_months > 1
                              ? sepo::multi_step_experiment(data, cfg)
                              : sepo::one_step_experiment(data, cfg, opts.parallel);
    write_run_reports(opts, {run});
    if (opts.verbosity > 0)
        std::cout << "ok simulations: " << run.n_ok() << "/" << run.sims.size() << " in "
                  << run.wall_seconds << "s\n";
    if (run.n_ok() == 0) {
        std::cerr << "error: all simulations failed\n";
        return kExitRuntime;
    }
    return kExitOk;
}

int cmd_grid(const CommonOpts& opts, const std::string& emit_default) {
    if (!emit_default.empty()) {
        nlohmann::json j{{"base", sepo::ExperimentConfig{}}, {"grid", sepo::GridSpec::default_grid()}};
        std::ofstream out(emit_default);
        if (!out.is_open()) throw sepo::FileNotFound("cannot write " + emit_default);
        out << j.dump(2) << '\n';
        std::cout << "wrote default grid to " << emit_default << "\n";
        return kExitOk;
    }
    const auto j = load_json(opts.config_path);
    if (!j.contains("base") || !j.contains("grid"))
        throw sepo::InvalidParameter("grid config needs 'base' and 'grid' objects");
    const auto base = parse_experiment_config(j.at("base"), opts);
    const auto grid = sepo::grid_spec_from_json(j.at("grid"));
    const auto cells = grid.expand(base);
    for (const auto& cell : cells) cell.validate(opts.allow_extended);
    std::cout << "grid cells: " << cells.size() << "\n";
    if (opts.dry_run) return kExitOk;

    const auto data = sepo::load_returns(opts.input_path);
    const auto results = sepo::grid_search(data, grid, base, opts.parallel);
    return write_run_reports(opts, results);
}

int cmd_compare(const CommonOpts& opts) {
    const auto j = load_json(opts.config_path);
    sepo::CompareConfig cc;
    static const std::set<std::string> known{"base", "epsilons", "Ms", "gammas", "thresholds"};
    for (const auto& item : j.items())
        if (!known.count(item.key()))
            throw sepo::InvalidParameter("unknown compare key '" + item.key() + "'");
    if (j.contains("base")) cc.base = parse_experiment_config(j.at("base"), opts);
    if (j.contains("epsilons")) cc.epsilons = j.at("epsilons").get<std::vector<double>>();
    if (j.contains("Ms")) cc.portfolio_sizes = j.at("Ms").get<std::vector<int>>();
    if (j.contains("gammas")) cc.gammas = j.at("gammas").get<std::vector<double>>();
    if (j.contains("thresholds")) cc.thresholds = j.at("thresholds").get<std::vector<double>>();

    const auto data = sepo::load_returns(opts.input_path);
    const auto cells = sepo::compare_experiment(data, cc);
    ensure_out_dir(opts);
    sepo::write_compare_csv(out_file(opts, "compare.csv"), cells);
    std::cout << "wrote " << out_file(opts, "compare.csv").string() << "\n";
    int ok = 0;
    for (const auto& cell : cells) ok += cell.combos_ok;
    if (ok == 0) {
        std::cerr << "error: every comparison combination failed\n";
        return kExitRuntime;
    }
    return kExitOk;
}

int cmd_bvd_check(const CommonOpts& opts, int cases) {
    const auto result = sepo::run_bvd_identity_suite(opts.seed.value_or(2025), cases, 1e-9);
    std::cout << (result.pass ? "PASS" : "FAIL") << " ensemble loss identity over " << result.cases
              << " random ensembles (worst relative gap " << sepo::fmt_double(result.worst_gap)
              << ", tolerance 1e-9)\n";
    return result.pass ? kExitOk : kExitRuntime;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"structured ensemble portfolio pipeline"};
    app.require_subcommand(1);

    CommonOpts opts;
    SynthOpts synth;
    int bvd_cases = 1000;
    std::string emit_default;

    auto add_common = [&](CLI::App* cmd, bool needs_config, bool needs_input) {
        if (needs_config) cmd->add_option("--config", opts.config_path, "JSON config file")->required();
        if (needs_input) cmd->add_option("--input", opts.input_path, "input CSV")->required();
        cmd->add_option("--out", opts.out_dir, "output directory");
        cmd->add_option("--seed", opts.seed, "override base seed");
        cmd->add_option("--parallel", opts.parallel, "worker thread cap")->check(CLI::PositiveNumber);
        cmd->add_flag("--allow-extended", opts.allow_extended, "accept values outside the grid domains");
        cmd->add_flag("--dry-run", opts.dry_run, "validate and report without writing outputs");
        cmd->add_flag("-v,--verbose", opts.verbosity, "verbose progress output");
    };

    auto* ingest = app.add_subcommand("ingest", "load a price CSV and write simple returns");
    add_common(ingest, false, true);

    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic return universe");
    add_common(synth_cmd, false, false);
    synth_cmd->add_option("--assets", synth.assets, "number of assets")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--days", synth.days, "number of days")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--corr", synth.corr, "average pairwise correlation in [0,1)");
    synth_cmd->add_option("--vol-lo", synth.vol_lo, "daily volatility lower bound");
    synth_cmd->add_option("--vol-hi", synth.vol_hi, "daily volatility upper bound");
    synth_cmd->add_option("--drift-lo", synth.drift_lo, "daily drift lower bound");
    synth_cmd->add_option("--drift-hi", synth.drift_hi, "daily drift upper bound");

    auto* backtest = app.add_subcommand("backtest", "run a one-step or multi-step experiment");
    add_common(backtest, true, true);

    auto* grid = app.add_subcommand("grid", "expand and run a hyperparameter grid");
    grid->add_option("--config", opts.config_path, "JSON grid file");
    grid->add_option("--input", opts.input_path, "input CSV");
    grid->add_option("--out", opts.out_dir, "output directory");
    grid->add_option("--seed", opts.seed, "override base seed");
    grid->add_option("--parallel", opts.parallel, "worker thread cap")->check(CLI::PositiveNumber);
    grid->add_flag("--allow-extended", opts.allow_extended, "accept values outside the grid domains");
    grid->add_flag("--dry-run", opts.dry_run, "expand and count cells without running");
    grid->add_flag("-v,--verbose", opts.verbosity, "verbose progress output");
    grid->add_option("--emit-default", emit_default, "write the default grid file and exit");

    auto* compare = app.add_subcommand("compare", "compare the ensemble against reference allocators");
    add_common(compare, true, true);

    auto* bvd = app.add_subcommand("bvd-check", "verify the ensemble loss decomposition identity");
    bvd->add_option("--seed", opts.seed, "suite seed");
    bvd->add_option("--cases", bvd_cases, "number of random ensembles")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (ingest->parsed()) return cmd_ingest(opts);
        if (synth_cmd->parsed()) return cmd_synth(opts, synth);
        if (backtest->parsed()) return cmd_backtest(opts);
        if (grid->parsed()) {
            if (emit_default.empty() && (opts.config_path.empty() || opts.input_path.empty()))
                throw sepo::InvalidParameter("grid needs --config and --input (or --emit-default)");
            return cmd_grid(opts, emit_default);
        }
        if (compare->parsed()) return cmd_compare(opts);
        if (bvd->parsed()) return cmd_bvd_check(opts, bvd_cases);
    } catch (const sepo::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const sepo::FileNotFound& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const sepo::InvalidParameter& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const sepo::EmptyAfterCleaning& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const sepo::OutOfRange& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: malformed JSON: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
