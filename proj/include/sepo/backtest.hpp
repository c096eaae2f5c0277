#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sepo/baselines.hpp"
#include "sepo/common.hpp"
#include "sepo/ensemble.hpp"
#include "sepo/market_data.hpp"
#include "sepo/metrics.hpp"
#include "sepo/predictor.hpp"
#include "sepo/rng.hpp"
#include "sepo/selection.hpp"

namespace sepo {

constexpr Eigen::Index kDaysPerMonth = 21;

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

/// Hyperparameter domains of the experimental grid. Values outside these
/// lists are rejected unless extended domains are explicitly allowed.
struct GridDomains {
    static const std::vector<int>& portfolio_sizes() {
        static const std::vector<int> v{2, 5, 10, 20, 35};
        return v;
    }
    static const std::vector<int>& kappas() {
        static const std::vector<int> v{20, 200, 2000};
        return v;
    }
    static const std::vector<double>& etas() {
        static const std::vector<double> v{0.03, 0.3};
        return v;
    }
    static const std::vector<double>& chis() {
        static const std::vector<double> v{0.0001, 0.01, 0.1, 1.0};
        return v;
    }
    static const std::vector<double>& epsilons() {
        static const std::vector<double> v{0.0, 0.1, 0.35, 0.5};
        return v;
    }
    static const std::vector<double>& lambda_ps() {
        static const std::vector<double> v{0.0, 0.0001, 0.01, 0.07};
        return v;
    }
    static const std::vector<double>& lambda_ss() {
        static const std::vector<double> v{0.0, 3.0, 5.0};
        return v;
    }
    static const std::vector<double>& gammas() {
        static const std::vector<double> v{1.0, 2.0, 3.0, 5.0};
        return v;
    }
};

inline const std::vector<std::string>& allocator_names() {
    static const std::vector<std::string> v{"srbfn",   "equal", "mse",  "inverse_vol",
                                            "max_div", "hrp",   "herc", "cvar_rp"};
    return v;
}

struct ExperimentConfig {
    double epsilon = 0.0;
    double gamma = 1.0;
    double threshold_T = 0.0;
    int portfolio_size = 5; // M
    double lambda_p = 0.0;
    double lambda_s = 0.0;
    double eta = 0.03;
    int kappa = 20;
    double chi = 0.01;
    int tau = 1;
    BasisKind basis_kind = BasisKind::gaussian;
    int n_simulations = 1;
    int horizon_months = 1;
    std::uint64_t seed = 42;
    std::string allocator_name = "srbfn";
    int train_len = 252;
    int lag_window = 1;
    int epochs = 1;

    PredictorConfig predictor_config(std::uint64_t predictor_seed) const {
        PredictorConfig pc;
        pc.kappa = kappa;
        pc.eta = eta;
        pc.chi = chi;
        pc.lambda_p = lambda_p;
        pc.tau = tau;
        pc.lag_window = lag_window;
        pc.epochs = epochs;
        pc.seed = predictor_seed;
        return pc;
    }

    /// Structural invariants always hold; grid-domain membership is enforced
    /// only when extended values are not allowed.
    void validate(bool allow_extended) const {
        if (epsilon < 0.0 || epsilon > 1.0) throw InvalidParameter("epsilon must lie in [0, 1]");
        if (gamma < 1.0) throw InvalidParameter("gamma must be >= 1");
        if (portfolio_size < 1) throw InvalidParameter("M must be >= 1");
        if (!(eta > 0.0)) throw InvalidParameter("eta must be > 0");
        if (kappa < 1) throw InvalidParameter("kappa must be >= 1");
        if (chi < 0.0) throw InvalidParameter("chi must be >= 0");
        if (lambda_p < 0.0 || lambda_s < 0.0) throw InvalidParameter("regularization must be >= 0");
        if (tau < 1) throw InvalidParameter("tau must be >= 1");
        if (lag_window < 1) throw InvalidParameter("lag_window must be >= 1");
        if (epochs < 1) throw InvalidParameter("epochs must be >= 1");
        if (n_simulations < 1) throw InvalidParameter("n_simulations must be >= 1");
        if (horizon_months < 1) throw InvalidParameter("horizon_months must be >= 1");
        if (train_len < lag_window + tau + 1) throw InvalidParameter("train_len too short for lag + tau");
        if (std::find(allocator_names().begin(), allocator_names().end(), allocator_name) ==
            allocator_names().end())
            throw InvalidParameter("unknown allocator '" + allocator_name + "'");
        if (allow_extended) return;

        auto in = [](const auto& domain, auto value) {
            return std::find(domain.begin(), domain.end(), value) != domain.end();
        };
        if (!in(GridDomains::portfolio_sizes(), portfolio_size))
            throw InvalidParameter("M outside grid domain (use --allow-extended to override)");
        if (!in(GridDomains::kappas(), kappa))
            throw InvalidParameter("kappa outside grid domain (use --allow-extended to override)");
        if (!in(GridDomains::etas(), eta))
            throw InvalidParameter("eta outside grid domain (use --allow-extended to override)");
        if (!in(GridDomains::chis(), chi))
            throw InvalidParameter("chi outside grid domain (use --allow-extended to override)");
        if (!in(GridDomains::epsilons(), epsilon))
            throw InvalidParameter("epsilon outside grid domain (use --allow-extended to override)");
        if (!in(GridDomains::lambda_ps(), lambda_p))
            throw InvalidParameter("lambda_p outside grid domain (use --allow-extended to override)");
        if (!in(GridDomains::lambda_ss(), lambda_s))
            throw InvalidParameter("lambda_s outside grid domain (use --allow-extended to override)");
        if (!in(GridDomains::gammas(), gamma))
            throw InvalidParameter("gamma outside grid domain (use --allow-extended to override)");
    }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = nlohmann::json{{"epsilon", c.epsilon},
                       {"gamma", c.gamma},
                       {"threshold_T", c.threshold_T},
                       {"M", c.portfolio_size},
                       {"lambda_p", c.lambda_p},
                       {"lambda_s", c.lambda_s},
                       {"eta", c.eta},
                       {"kappa", c.kappa},
                       {"chi", c.chi},
                       {"tau", c.tau},
                       {"basis", to_string(c.basis_kind)},
                       {"n_simulations", c.n_simulations},
                       {"horizon_months", c.horizon_months},
                       {"seed", c.seed},
                       {"allocator", c.allocator_name},
                       {"train_len", c.train_len},
                       {"lag_window", c.lag_window},
                       {"epochs", c.epochs}};
}

/// Strict parse: unknown keys are rejected so config typos cannot silently
/// fall back to defaults.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known{
        "epsilon", "gamma",         "threshold_T",    "M",    "lambda_p",  "lambda_s",
        "eta",     "kappa",         "chi",            "tau",  "basis",     "n_simulations",
        "horizon_months", "seed",   "allocator",      "train_len", "lag_window", "epochs"};
    for (const auto& item : j.items())
        if (!known.count(item.key())) throw InvalidParameter("unknown config key '" + item.key() + "'");

    ExperimentConfig c;
    if (j.contains("epsilon")) c.epsilon = j.at("epsilon").get<double>();
    if (j.contains("gamma")) c.gamma = j.at("gamma").get<double>();
    if (j.contains("threshold_T")) c.threshold_T = j.at("threshold_T").get<double>();
    if (j.contains("M")) c.portfolio_size = j.at("M").get<int>();
    if (j.contains("lambda_p")) c.lambda_p = j.at("lambda_p").get<double>();
    if (j.contains("lambda_s")) c.lambda_s = j.at("lambda_s").get<double>();
    if (j.contains("eta")) c.eta = j.at("eta").get<double>();
    if (j.contains("kappa")) c.kappa = j.at("kappa").get<int>();
    if (j.contains("chi")) c.chi = j.at("chi").get<double>();
    if (j.contains("tau")) c.tau = j.at("tau").get<int>();
    if (j.contains("basis")) c.basis_kind = basis_kind_from_string(j.at("basis").get<std::string>());
    if (j.contains("n_simulations")) c.n_simulations = j.at("n_simulations").get<int>();
    if (j.contains("horizon_months")) c.horizon_months = j.at("horizon_months").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("allocator")) c.allocator_name = j.at("allocator").get<std::string>();
    if (j.contains("train_len")) c.train_len = j.at("train_len").get<int>();
    if (j.contains("lag_window")) c.lag_window = j.at("lag_window").get<int>();
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
    return c;
}

// ---------------------------------------------------------------------------
// Run results
// ---------------------------------------------------------------------------

/// One simulation (one-step mode) or one month (multi-step mode).
struct SimOutcome {
    int index = 0;
    bool ok = false;
    std::string error;
    std::vector<std::string> selected_assets;
    Eigen::VectorXd weights;
    Eigen::VectorXd daily_returns;
    double monthly_return = std::numeric_limits<double>::quiet_NaN();
    MetricReport metrics;
};

struct Aggregate {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double stddev = std::numeric_limits<double>::quiet_NaN();
    int count = 0;
};

struct RunResult {
    ExperimentConfig config;
    std::string mode; // "one_step" or "multi_step"
    std::vector<SimOutcome> sims;
    std::map<std::string, Aggregate> aggregates; // metric -> stats over ok sims
    std::optional<MetricReport> overall;         // multi-step: concatenated-series metrics
    bool partial = false;                        // multi-step aborted before the full horizon
    std::uint64_t data_hash = 0;
    double wall_seconds = 0.0; // informational only, never written to reports

    std::size_t n_ok() const {
        std::size_t k = 0;
        for (const auto& s : sims) k += s.ok ? 1 : 0;
        return k;
    }
};

inline std::uint64_t hash_returns(const ReturnsMatrix& r) {
    std::uint64_t h = 1469598103934665603ULL; // FNV-1a
    auto mix_bytes = [&h](const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& id : r.asset_ids) mix_bytes(id.data(), id.size());
    for (const auto& ts : r.timestamps) mix_bytes(ts.data(), ts.size());
    for (Eigen::Index i = 0; i < r.values.rows(); ++i)
        for (Eigen::Index j = 0; j < r.values.cols(); ++j) {
            const double v = r.values(i, j);
            mix_bytes(&v, sizeof(v));
        }
    return h;
}

// ---------------------------------------------------------------------------
// Decision pipeline (rank -> select -> fit -> hold)
// ---------------------------------------------------------------------------

namespace detail {

constexpr std::uint64_t kRankStream = 0x72616e6bULL;
constexpr std::uint64_t kSelectStream = 0x73656c63ULL;
constexpr std::uint64_t kEnsembleStream = 0x656e7362ULL;

struct DecisionOutcome {
    std::vector<std::string> selected;
    Eigen::VectorXd weights;
    Eigen::VectorXd hold_returns;
};

inline ReturnsMatrix single_column(const ReturnsMatrix& r, Eigen::Index col) {
    return select_columns(r, {col});
}

/// Trains one ranking predictor per universe asset on the training window and
/// returns the 1-month recurrent cumulative forecasts plus the fitted nets.
inline std::vector<std::pair<std::string, double>> rank_forecasts(
    const ReturnsMatrix& train, const ExperimentConfig& cfg, std::uint64_t sim_seed,
    std::vector<PredictorParams>* fitted = nullptr) {
    std::vector<std::pair<std::string, double>> forecasts;
    forecasts.reserve(static_cast<std::size_t>(train.n_assets()));
    for (Eigen::Index a = 0; a < train.n_assets(); ++a) {
        const ReturnsMatrix column = single_column(train, a);
        const auto pc = cfg.predictor_config(derive_seed(sim_seed, kRankStream, static_cast<std::uint64_t>(a)));
        TrainedEnsemble trained = form_structured_dataset(column, pc, 0.0);
        const double forecast =
            recurrent_forecast(trained.predictors.front(), column.values.col(0), kDaysPerMonth);
        forecasts.emplace_back(train.asset_ids[static_cast<std::size_t>(a)], forecast);
        if (fitted) fitted->push_back(std::move(trained.predictors.front()));
    }
    return forecasts;
}

/// One-step-ahead squared error of a fitted ranking net over the last month
/// of the training window; used by the MSE-weighted allocator as its
/// generalization-error proxy.
inline double tail_mse(const PredictorParams& p, const Eigen::VectorXd& series, int tau,
                       Eigen::Index window) {
    const Eigen::Index lag = p.lag_window();
    const Eigen::Index n_inst = series.size() - tau - (lag - 1);
    const Eigen::Index use = std::min(window, n_inst);
    double acc = 0.0;
    for (Eigen::Index i = n_inst - use; i < n_inst; ++i) {
        const double pred = forward(p, series.segment(i, lag));
        const double err = pred - series(i + lag - 1 + tau);
        acc += err * err;
    }
    return acc / static_cast<double>(use);
}

inline Eigen::VectorXd compute_weights(const std::string& allocator, const ReturnsMatrix& train_sel,
                                       const ExperimentConfig& cfg, std::uint64_t sim_seed,
                                       const std::vector<PredictorParams>& rank_nets,
                                       const std::vector<Eigen::Index>& selected_cols,
                                       const ReturnsMatrix& train_full) {
    if (allocator == "srbfn") {
        const auto pc = cfg.predictor_config(derive_seed(sim_seed, kEnsembleStream));
        const TrainedEnsemble trained = form_structured_dataset(train_sel, pc, cfg.epsilon);
        return fit_ensemble(trained, train_sel, cfg.basis_kind, cfg.lambda_s).portfolio_weights;
    }
    if (allocator == "mse") {
        Eigen::VectorXd mse(static_cast<Eigen::Index>(selected_cols.size()));
        for (std::size_t k = 0; k < selected_cols.size(); ++k)
            mse(static_cast<Eigen::Index>(k)) =
                tail_mse(rank_nets[static_cast<std::size_t>(selected_cols[k])],
                         train_full.values.col(selected_cols[k]), cfg.tau, kDaysPerMonth);
        return allocate_mse_weighted(mse).weights;
    }
    return allocate_baseline(allocator, train_sel).weights;
}

/// Full pipeline at one decision point: train window rows
/// [train_start, train_start + train_len), held month immediately after.
inline DecisionOutcome run_decision(const ReturnsMatrix& data, const ExperimentConfig& cfg,
                                    Eigen::Index train_start, std::uint64_t sim_seed) {
    const auto [train, hold] = split_window(data, cfg.train_len, kDaysPerMonth, train_start);

    std::vector<PredictorParams> rank_nets;
    const auto forecasts = rank_forecasts(train, cfg, sim_seed, &rank_nets);
    const ForecastRanking ranking = rank_assets(forecasts, train_start + cfg.train_len);

    SelectionConfig sel;
    sel.threshold_T = cfg.threshold_T;
    sel.portfolio_size = cfg.portfolio_size;
    sel.gamma = cfg.gamma;
    sel.seed = derive_seed(sim_seed, kSelectStream);
    DecisionOutcome out;
    out.selected = select_assets(ranking, sel);

    std::unordered_map<std::string, Eigen::Index> col_of;
    for (Eigen::Index j = 0; j < data.n_assets(); ++j) col_of[data.asset_ids[static_cast<std::size_t>(j)]] = j;
    std::vector<Eigen::Index> cols;
    cols.reserve(out.selected.size());
    for (const auto& id : out.selected) cols.push_back(col_of.at(id));

    const ReturnsMatrix train_sel = select_columns(train, cols);
    const ReturnsMatrix hold_sel = select_columns(hold, cols);

    out.weights = compute_weights(cfg.allocator_name, train_sel, cfg, sim_seed, rank_nets, cols, train);
    out.hold_returns = hold_sel.values * out.weights;
    return out;
}

inline void fill_aggregates(RunResult& result) {
    const std::vector<std::pair<std::string, double MetricReport::*>> fields{
        {"modified_sharpe", &MetricReport::modified_sharpe},
        {"annualized_sharpe", &MetricReport::annualized_sharpe},
        {"sortino", &MetricReport::sortino},
        {"omega", &MetricReport::omega},
        {"max_drawdown", &MetricReport::max_drawdown}};
    for (const auto& [name, member] : fields) {
        std::vector<double> values;
        for (const auto& sim : result.sims)
            if (sim.ok && !std::isnan(sim.metrics.*member)) values.push_back(sim.metrics.*member);
        Aggregate agg;
        agg.count = static_cast<int>(values.size());
        if (!values.empty()) {
            double mean = 0.0;
            for (double v : values) mean += v;
            mean /= static_cast<double>(values.size());
            double var = 0.0;
            for (double v : values) var += (v - mean) * (v - mean);
            agg.mean = mean;
            agg.stddev = std::sqrt(var / static_cast<double>(values.size()));
        }
        result.aggregates[name] = agg;
    }
}

template <typename Fn>
void parallel_for(int n, int workers, Fn&& fn) {
    workers = std::max(1, std::min(workers, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t)
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    for (auto& th : pool) th.join();
}

} // namespace detail

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// Repeated one-month allocations with per-simulation seeds (base + index).
/// The decision point is anchored at the end of the data: training window
/// rows [N - train_len - 21, N - 21), held month is the final 21 rows.
/// Failed simulations are recorded, not resampled.
inline RunResult one_step_experiment(const ReturnsMatrix& data, const ExperimentConfig& cfg,
                                     int workers = 1) {
    cfg.validate(true);
    const Eigen::Index needed = cfg.train_len + kDaysPerMonth;
    if (data.n_rows() < needed)
        throw OutOfRange("need at least " + std::to_string(needed) + " rows, have " +
                         std::to_string(data.n_rows()));
    const Eigen::Index train_start = data.n_rows() - needed;

    const auto t0 = std::chrono::steady_clock::now();
    RunResult result;
    result.config = cfg;
    result.mode = "one_step";
    result.data_hash = hash_returns(data);
    result.sims.resize(static_cast<std::size_t>(cfg.n_simulations));

    detail::parallel_for(cfg.n_simulations, workers, [&](int s) {
        SimOutcome& sim = result.sims[static_cast<std::size_t>(s)];
        sim.index = s;
        try {
            const std::uint64_t sim_seed = cfg.seed + static_cast<std::uint64_t>(s);
            auto outcome = detail::run_decision(data, cfg, train_start, sim_seed);
            sim.selected_assets = std::move(outcome.selected);
            sim.weights = std::move(outcome.weights);
            sim.daily_returns = std::move(outcome.hold_returns);
            sim.monthly_return = cumulative_return(sim.daily_returns);
            Eigen::VectorXd monthly(1);
            monthly << sim.monthly_return;
            sim.metrics = MetricReport::from_returns(sim.daily_returns, monthly, "1m");
            sim.ok = true;
        } catch (const Error& e) {
            sim.ok = false;
            sim.error = e.what();
        } catch (const std::exception& e) {
            sim.ok = false;
            sim.error = e.what();
        }
    });

    detail::fill_aggregates(result);
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

/// Sequential strategy: re-rank, re-select, re-train, hold one month, roll
/// the window forward 21 days, `horizon_months` times. Metrics cover the
/// concatenated daily series. A failed month aborts the remaining sequence
/// and flags the result as partial.
inline RunResult multi_step_experiment(const ReturnsMatrix& data, const ExperimentConfig& cfg) {
    cfg.validate(true);
    const int horizon = cfg.horizon_months;
    const Eigen::Index needed = cfg.train_len + kDaysPerMonth * horizon;
    if (data.n_rows() < needed)
        throw OutOfRange("need at least " + std::to_string(needed) + " rows, have " +
                         std::to_string(data.n_rows()));

    const auto t0 = std::chrono::steady_clock::now();
    RunResult result;
    result.config = cfg;
    result.mode = "multi_step";
    result.data_hash = hash_returns(data);

    const Eigen::Index first_train_start = data.n_rows() - needed;
    std::vector<double> all_daily;
    std::vector<double> monthly;
    for (int k = 0; k < horizon; ++k) {
        SimOutcome month;
        month.index = k;
        try {
            const std::uint64_t month_seed = cfg.seed + static_cast<std::uint64_t>(k);
            auto outcome = detail::run_decision(data, cfg, first_train_start + k * kDaysPerMonth, month_seed);
            month.selected_assets = std::move(outcome.selected);
            month.weights = std::move(outcome.weights);
            month.daily_returns = std::move(outcome.hold_returns);
            month.monthly_return = cumulative_return(month.daily_returns);
            Eigen::VectorXd one_month(1);
            one_month << month.monthly_return;
            month.metrics = MetricReport::from_returns(month.daily_returns, one_month, "1m");
            month.ok = true;
            for (Eigen::Index t = 0; t < month.daily_returns.size(); ++t)
                all_daily.push_back(month.daily_returns(t));
            monthly.push_back(month.monthly_return);
            result.sims.push_back(std::move(month));
        } catch (const Error& e) {
            month.ok = false;
            month.error = e.what();
            result.sims.push_back(std::move(month));
            result.partial = true;
            break;
        }
    }

    if (!all_daily.empty()) {
        const Eigen::VectorXd daily = Eigen::Map<const Eigen::VectorXd>(
            all_daily.data(), static_cast<Eigen::Index>(all_daily.size()));
        const Eigen::VectorXd months = Eigen::Map<const Eigen::VectorXd>(
            monthly.data(), static_cast<Eigen::Index>(monthly.size()));
        result.overall =
            MetricReport::from_returns(daily, months, std::to_string(monthly.size()) + "m");
    }
    detail::fill_aggregates(result);
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

/// Per-hyperparameter value lists; empty lists fall back to the base config
/// value. Expansion is the Cartesian product in the declared field order.
struct GridSpec {
    std::vector<double> epsilons;
    std::vector<double> gammas;
    std::vector<double> thresholds;
    std::vector<int> portfolio_sizes;
    std::vector<double> lambda_ps;
    std::vector<double> lambda_ss;
    std::vector<double> etas;
    std::vector<int> kappas;
    std::vector<double> chis;
    std::vector<std::string> bases;

    /// Grid covering the full experimental hyperparameter domains.
    static GridSpec default_grid() {
        GridSpec g;
        g.epsilons = GridDomains::epsilons();
        g.gammas = GridDomains::gammas();
        g.portfolio_sizes = GridDomains::portfolio_sizes();
        g.lambda_ps = GridDomains::lambda_ps();
        g.lambda_ss = GridDomains::lambda_ss();
        g.etas = GridDomains::etas();
        g.kappas = GridDomains::kappas();
        g.chis = GridDomains::chis();
        return g;
    }

    std::vector<ExperimentConfig> expand(const ExperimentConfig& base) const {
        auto values_or = [](const auto& list, auto fallback) {
            using T = decltype(fallback);
            if (list.empty()) return std::vector<T>{fallback};
            return std::vector<T>(list.begin(), list.end());
        };
        std::vector<ExperimentConfig> cells;
        for (double eps : values_or(epsilons, base.epsilon))
            for (double g : values_or(gammas, base.gamma))
                for (double t : values_or(thresholds, base.threshold_T))
                    for (int m : values_or(portfolio_sizes, base.portfolio_size))
                        for (double lp : values_or(lambda_ps, base.lambda_p))
                            for (double ls : values_or(lambda_ss, base.lambda_s))
                                for (double e : values_or(etas, base.eta))
                                    for (int k : values_or(kappas, base.kappa))
                                        for (double x : values_or(chis, base.chi))
                                            for (const std::string& b :
                                                 values_or(bases, to_string(base.basis_kind))) {
                                                ExperimentConfig c = base;
                                                c.epsilon = eps;
                                                c.gamma = g;
                                                c.threshold_T = t;
                                                c.portfolio_size = m;
                                                c.lambda_p = lp;
                                                c.lambda_s = ls;
                                                c.eta = e;
                                                c.kappa = k;
                                                c.chi = x;
                                                c.basis_kind = basis_kind_from_string(b);
                                                cells.push_back(c);
                                            }
        return cells;
    }
};

inline void to_json(nlohmann::json& j, const GridSpec& g) {
    j = nlohmann::json{{"epsilon", g.epsilons},
                       {"gamma", g.gammas},
                       {"threshold_T", g.thresholds},
                       {"M", g.portfolio_sizes},
                       {"lambda_p", g.lambda_ps},
                       {"lambda_s", g.lambda_ss},
                       {"eta", g.etas},
                       {"kappa", g.kappas},
                       {"chi", g.chis},
                       {"basis", g.bases}};
}

inline GridSpec grid_spec_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known{"epsilon", "gamma", "threshold_T", "M",   "lambda_p",
                                             "lambda_s", "eta",  "kappa",       "chi", "basis"};
    for (const auto& item : j.items())
        if (!known.count(item.key())) throw InvalidParameter("unknown grid key '" + item.key() + "'");
    GridSpec g;
    if (j.contains("epsilon")) g.epsilons = j.at("epsilon").get<std::vector<double>>();
    if (j.contains("gamma")) g.gammas = j.at("gamma").get<std::vector<double>>();
    if (j.contains("threshold_T")) g.thresholds = j.at("threshold_T").get<std::vector<double>>();
    if (j.contains("M")) g.portfolio_sizes = j.at("M").get<std::vector<int>>();
    if (j.contains("lambda_p")) g.lambda_ps = j.at("lambda_p").get<std::vector<double>>();
    if (j.contains("lambda_s")) g.lambda_ss = j.at("lambda_s").get<std::vector<double>>();
    if (j.contains("eta")) g.etas = j.at("eta").get<std::vector<double>>();
    if (j.contains("kappa")) g.kappas = j.at("kappa").get<std::vector<int>>();
    if (j.contains("chi")) g.chis = j.at("chi").get<std::vector<double>>();
    if (j.contains("basis")) g.bases = j.at("basis").get<std::vector<std::string>>();
    return g;
}

/// Runs every grid cell (one-step or multi-step per the base horizon) and
/// sorts results by mean modified Sharpe, descending; ties keep expansion
/// order. Cells execute concurrently; output is independent of worker count.
inline std::vector<RunResult> grid_search(const ReturnsMatrix& data, const GridSpec& grid,
                                          const ExperimentConfig& base, int workers = 1) {
    const auto cells = grid.expand(base);
    if (cells.empty()) throw InvalidParameter("empty grid");
    // Window length is the same for every cell (train_len/horizon are not
    // grid dimensions); validate before spawning workers.
    const Eigen::Index needed = base.train_len + kDaysPerMonth * base.horizon_months;
    if (data.n_rows() < needed)
        throw OutOfRange("need at least " + std::to_string(needed) + " rows, have " +
                         std::to_string(data.n_rows()));
    std::vector<RunResult> results(cells.size());
    detail::parallel_for(static_cast<int>(cells.size()), workers, [&](int i) {
        const auto& cell = cells[static_cast<std::size_t>(i)];
        try {
            results[static_cast<std::size_t>(i)] = cell.horizon_months > 1
                                                       ? multi_step_experiment(data, cell)
                                                       : one_step_experiment(data, cell, 1);
        } catch (const std::exception& e) {
            RunResult failed;
            failed.config = cell;
            failed.mode = cell.horizon_months > 1 ? "multi_step" : "one_step";
            SimOutcome sim;
            sim.ok = false;
            sim.error = e.what();
            failed.sims.push_back(std::move(sim));
            detail::fill_aggregates(failed);
            results[static_cast<std::size_t>(i)] = std::move(failed);
        }
    });

    std::vector<std::size_t> order(results.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto sharpe_of = [&](std::size_t i) {
        const auto it = results[i].aggregates.find("modified_sharpe");
        const double v = it == results[i].aggregates.end() ? std::nan("") : it->second.mean;
        return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
    };
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sharpe_of(a) > sharpe_of(b); });
    std::vector<RunResult> sorted;
    sorted.reserve(results.size());
    for (std::size_t i : order) sorted.push_back(std::move(results[i]));
    return sorted;
}

// ---------------------------------------------------------------------------
// Comparative protocol (s-RBFN vs reference allocators)
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& compare_methods_list() {
    static const std::vector<std::string> v{"srbfn", "inverse_vol", "cvar_rp", "max_div", "hrp", "herc"};
    return v;
}

struct CompareCell {
    double gamma = 1.0;
    double threshold = 0.0;
    // method -> average annualized Sharpe across the (epsilon, M) block
    std::map<std::string, double> avg_sharpe;
    int combos_ok = 0;
    int combos_failed = 0;
};

struct CompareConfig {
    ExperimentConfig base;
    std::vector<double> epsilons{0.0, 0.1, 0.35};
    std::vector<int> portfolio_sizes{5, 10, 20, 35};
    std::vector<double> gammas{1.0, 2.0, 3.0};
    std::vector<double> thresholds{-0.005, 0.0, 0.003};
};

/// Sequential monthly-reallocation comparison over the base horizon. Within
/// each month the asset selection is shared by all methods; each method's
/// annualized Sharpe comes from its own monthly return series. Cell values
/// average over the (epsilon, M) block, mirroring the grouped-report layout.
inline std::vector<CompareCell> compare_experiment(const ReturnsMatrix& data, const CompareConfig& cc) {
    const int horizon = cc.base.horizon_months;
    const Eigen::Index needed = cc.base.train_len + kDaysPerMonth * horizon;
    if (data.n_rows() < needed)
        throw OutOfRange("need at least " + std::to_string(needed) + " rows for the comparison");
    const Eigen::Index first_train_start = data.n_rows() - needed;

    std::vector<std::string> methods = compare_methods_list();
    methods.push_back("equal"); // 1/N sanity column

    // Rankings depend only on the month (training window + month seed), not
    // on the (gamma, T, epsilon, M) combination, so compute them once.
    std::vector<std::vector<PredictorParams>> month_nets(static_cast<std::size_t>(horizon));
    std::vector<ForecastRanking> month_rankings;
    month_rankings.reserve(static_cast<std::size_t>(horizon));
    for (int k = 0; k < horizon; ++k) {
        const std::uint64_t month_seed = cc.base.seed + static_cast<std::uint64_t>(k);
        const Eigen::Index train_start = first_train_start + k * kDaysPerMonth;
        const auto [train, hold] = split_window(data, cc.base.train_len, kDaysPerMonth, train_start);
        const auto forecasts =
            detail::rank_forecasts(train, cc.base, month_seed, &month_nets[static_cast<std::size_t>(k)]);
        month_rankings.push_back(rank_assets(forecasts, train_start + cc.base.train_len));
    }

    std::vector<CompareCell> cells;
    for (double gamma : cc.gammas)
        for (double threshold : cc.thresholds) {
            CompareCell cell;
            cell.gamma = gamma;
            cell.threshold = threshold;
            std::map<std::string, double> sums;
            std::map<std::string, int> counts;
            for (double eps : cc.epsilons)
                for (int m : cc.portfolio_sizes) {
                    ExperimentConfig cfg = cc.base;
                    cfg.gamma = gamma;
                    cfg.threshold_T = threshold;
                    cfg.epsilon = eps;
                    cfg.portfolio_size = m;
                    try {
                        std::map<std::string, std::vector<double>> monthly;
                        for (int k = 0; k < horizon; ++k) {
                            const std::uint64_t month_seed = cfg.seed + static_cast<std::uint64_t>(k);
                            const Eigen::Index train_start = first_train_start + k * kDaysPerMonth;
                            const auto [train, hold] =
                                split_window(data, cfg.train_len, kDaysPerMonth, train_start);
                            const auto& rank_nets = month_nets[static_cast<std::size_t>(k)];
                            const auto& ranking = month_rankings[static_cast<std::size_t>(k)];
                            SelectionConfig sel{cfg.threshold_T, cfg.portfolio_size, cfg.gamma,
                                                derive_seed(month_seed, detail::kSelectStream)};
                            const auto selected = select_assets(ranking, sel);
                            std::unordered_map<std::string, Eigen::Index> col_of;
                            for (Eigen::Index j = 0; j < data.n_assets(); ++j)
                                col_of[data.asset_ids[static_cast<std::size_t>(j)]] = j;
                            std::vector<Eigen::Index> cols;
                            for (const auto& id : selected) cols.push_back(col_of.at(id));
                            const ReturnsMatrix train_sel = select_columns(train, cols);
                            const ReturnsMatrix hold_sel = select_columns(hold, cols);
                            for (const auto& method : methods) {
                                const Eigen::VectorXd w = detail::compute_weights(
                                    method, train_sel, cfg, month_seed, rank_nets, cols, train);
                                monthly[method].push_back(
                                    cumulative_return(hold_sel.values * w));
                            }
                        }
                        for (const auto& method : methods) {
                            const auto& series = monthly[method];
                            const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(
                                series.data(), static_cast<Eigen::Index>(series.size()));
                            sums[method] += annualized_sharpe(v);
                            counts[method] += 1;
                        }
                        cell.combos_ok += 1;
                    } catch (const Error&) {
                        cell.combos_failed += 1;
                    }
                }
            for (const auto& method : methods)
                cell.avg_sharpe[method == "equal" ? "1_N" : method] =
                    counts[method] ? sums[method] / counts[method]
                                   : std::numeric_limits<double>::quiet_NaN();
            cells.push_back(std::move(cell));
        }
    return cells;
}

// ---------------------------------------------------------------------------
// Report writers (all output via fmt_double; files are byte-stable)
// ---------------------------------------------------------------------------

namespace detail {

inline std::string sanitize_csv(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    return s;
}

inline std::string join_ids(const std::vector<std::string>& ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += '|';
        out += ids[i];
    }
    return out;
}

} // namespace detail

inline void write_results_csv(const std::filesystem::path& path, const std::vector<RunResult>& runs) {
    std::ofstream out(path);
    if (!out.is_open()) throw FileNotFound("cannot write " + path.string());
    out << "config_index,mode,allocator,basis,epsilon,gamma,threshold_T,M,lambda_p,lambda_s,eta,kappa,"
           "chi,tau,train_len,lag_window,n_simulations,horizon_months,seed,sim,status,error,selected,"
           "modified_sharpe,annualized_sharpe,sortino,omega,max_drawdown\n";
    for (std::size_t r = 0; r < runs.size(); ++r) {
        const auto& run = runs[r];
        const auto& c = run.config;
        for (const auto& sim : run.sims) {
            out << r << ',' << run.mode << ',' << c.allocator_name << ',' << to_string(c.basis_kind)
                << ',' << fmt_double(c.epsilon) << ',' << fmt_double(c.gamma) << ','
                << fmt_double(c.threshold_T) << ',' << c.portfolio_size << ',' << fmt_double(c.lambda_p)
                << ',' << fmt_double(c.lambda_s) << ',' << fmt_double(c.eta) << ',' << c.kappa << ','
                << fmt_double(c.chi) << ',' << c.tau << ',' << c.train_len << ',' << c.lag_window << ','
                << c.n_simulations << ',' << c.horizon_months << ',' << c.seed << ',' << sim.index << ','
                << (sim.ok ? "ok" : "failed") << ',' << detail::sanitize_csv(sim.error) << ','
                << detail::join_ids(sim.selected_assets) << ',' << fmt_double(sim.metrics.modified_sharpe)
                << ',' << fmt_double(sim.metrics.annualized_sharpe) << ','
                << fmt_double(sim.metrics.sortino) << ',' << fmt_double(sim.metrics.omega) << ','
                << fmt_double(sim.metrics.max_drawdown) << '\n';
        }
    }
}

inline void write_weights_history_csv(const std::filesystem::path& path,
                                      const std::vector<RunResult>& runs) {
    std::ofstream out(path);
    if (!out.is_open()) throw FileNotFound("cannot write " + path.string());
    out << "config_index,step,asset_id,weight\n";
    for (std::size_t r = 0; r < runs.size(); ++r)
        for (const auto& sim : runs[r].sims) {
            if (!sim.ok) continue;
            for (std::size_t k = 0; k < sim.selected_assets.size(); ++k)
                out << r << ',' << sim.index << ',' << sim.selected_assets[k] << ','
                    << fmt_double(sim.weights(static_cast<Eigen::Index>(k))) << '\n';
        }
}

inline nlohmann::json summary_json(const std::vector<RunResult>& runs) {
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t r = 0; r < runs.size(); ++r) {
        const auto& run = runs[r];
        nlohmann::json aggs;
        for (const auto& [name, agg] : run.aggregates) {
            aggs[name] = {{"mean", agg.mean}, {"stddev", agg.stddev}, {"count", agg.count}};
        }
        nlohmann::json entry{{"config_index", r},
                             {"mode", run.mode},
                             {"config", run.config},
                             {"aggregates", aggs},
                             {"n_ok", run.n_ok()},
                             {"n_failed", run.sims.size() - run.n_ok()},
                             {"partial", run.partial},
                             {"data_hash", run.data_hash}};
        if (run.overall) {
            entry["overall"] = {{"modified_sharpe", run.overall->modified_sharpe},
                                {"annualized_sharpe", run.overall->annualized_sharpe},
                                {"sortino", run.overall->sortino},
                                {"omega", run.overall->omega},
                                {"max_drawdown", run.overall->max_drawdown},
                                {"period", run.overall->period}};
        }
        arr.push_back(std::move(entry));
    }
    return arr;
}

inline void write_summary_json(const std::filesystem::path& path, const std::vector<RunResult>& runs) {
    std::ofstream out(path);
    if (!out.is_open()) throw FileNotFound("cannot write " + path.string());
    out << summary_json(runs).dump(2) << '\n';
}

/// Long-format table matching the report axes: one row per (config, metric)
/// with the aggregate mean as the value.
inline void write_plot_data_csv(const std::filesystem::path& path, const std::vector<RunResult>& runs) {
    std::ofstream out(path);
    if (!out.is_open()) throw FileNotFound("cannot write " + path.string());
    out << "M,epsilon,gamma,T,metric,value\n";
    for (const auto& run : runs) {
        const auto& c = run.config;
        for (const auto& [name, agg] : run.aggregates) {
            out << c.portfolio_size << ',' << fmt_double(c.epsilon) << ',' << fmt_double(c.gamma) << ','
                << fmt_double(c.threshold_T) << ',' << name << ',' << fmt_double(agg.mean) << '\n';
        }
    }
}

inline void write_compare_csv(const std::filesystem::path& path, const std::vector<CompareCell>& cells) {
    std::ofstream out(path);
    if (!out.is_open()) throw FileNotFound("cannot write " + path.string());
    out << "gamma,threshold_T";
    for (const auto& method : compare_methods_list()) out << ',' << method;
    out << ",1_N,combos_ok,combos_failed\n";
    for (const auto& cell : cells) {
        out << fmt_double(cell.gamma) << ',' << fmt_double(cell.threshold);
        for (const auto& method : compare_methods_list()) out << ',' << fmt_double(cell.avg_sharpe.at(method));
        out << ',' << fmt_double(cell.avg_sharpe.at("1_N")) << ',' << cell.combos_ok << ','
            << cell.combos_failed << '\n';
    }
}

} // namespace sepo
