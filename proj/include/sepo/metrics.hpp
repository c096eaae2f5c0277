#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "sepo/common.hpp"
#include "sepo/rng.hpp"

namespace sepo {

// Population standard deviation is used throughout the metric suite.
inline double population_std(const Eigen::VectorXd& v) {
    const double mu = v.mean();
    return std::sqrt((v.array() - mu).square().mean());
}

inline double cumulative_return(const Eigen::VectorXd& daily) {
    double acc = 1.0;
    for (Eigen::Index t = 0; t < daily.size(); ++t) acc *= 1.0 + daily(t);
    return acc - 1.0;
}

/// Period cumulative return divided by the population std of the daily
/// returns within that period.
inline double modified_sharpe(const Eigen::VectorXd& daily) {
    if (daily.size() < 2) throw InvalidParameter("need at least 2 daily returns");
    const double sd = population_std(daily);
    if (!(sd > 0.0)) throw ZeroVolatility("zero daily volatility");
    return cumulative_return(daily) / sd;
}

/// Mean monthly return over its std, annualized by sqrt(12).
inline double annualized_sharpe(const Eigen::VectorXd& monthly) {
    if (monthly.size() < 2) throw InvalidParameter("need at least 2 monthly returns");
    const double sd = population_std(monthly);
    if (!(sd > 0.0)) throw ZeroVolatility("zero monthly volatility");
    return monthly.mean() / sd * std::sqrt(12.0);
}

/// (mean - target) / downside deviation; +infinity when no observation falls
/// below the target.
inline double sortino(const Eigen::VectorXd& returns, double target = 0.0) {
    if (returns.size() < 1) throw InvalidParameter("empty return series");
    const double downside_sq = returns
                                   .unaryExpr([&](double r) {
                                       const double d = std::min(r - target, 0.0);
                                       return d * d;
                                   })
                                   .mean();
    if (!(downside_sq > 0.0)) return std::numeric_limits<double>::infinity();
    return (returns.mean() - target) / std::sqrt(downside_sq);
}

/// Gain/loss ratio around the threshold; +infinity when there are no losses.
inline double omega(const Eigen::VectorXd& returns, double threshold = 0.0) {
    if (returns.size() < 1) throw InvalidParameter("empty return series");
    const double gains = (returns.array() - threshold).max(0.0).sum();
    const double losses = (threshold - returns.array()).max(0.0).sum();
    if (!(losses > 0.0)) return std::numeric_limits<double>::infinity();
    return gains / losses;
}

/// Most negative peak-to-trough ratio on the compounded value path (<= 0).
inline double max_drawdown(const Eigen::VectorXd& returns) {
    if (returns.size() < 1) throw InvalidParameter("empty return series");
    double value = 1.0, peak = 1.0, dd = 0.0;
    for (Eigen::Index t = 0; t < returns.size(); ++t) {
        value *= 1.0 + returns(t);
        peak = std::max(peak, value);
        dd = std::min(dd, value / peak - 1.0);
    }
    return dd;
}

struct MetricReport {
    double modified_sharpe = std::numeric_limits<double>::quiet_NaN();
    double annualized_sharpe = std::numeric_limits<double>::quiet_NaN();
    double sortino = std::numeric_limits<double>::quiet_NaN();
    double omega = std::numeric_limits<double>::quiet_NaN();
    double max_drawdown = std::numeric_limits<double>::quiet_NaN();
    std::string period;

    /// Computes the full report from a daily series plus, when available, the
    /// per-month cumulative returns (annualized Sharpe needs >= 2 months).
    static MetricReport from_returns(const Eigen::VectorXd& daily, const Eigen::VectorXd& monthly,
                                     std::string period_label) {
        MetricReport r;
        r.period = std::move(period_label);
        r.modified_sharpe = sepo::modified_sharpe(daily);
        r.sortino = sepo::sortino(daily);
        r.omega = sepo::omega(daily);
        r.max_drawdown = sepo::max_drawdown(daily);
        if (monthly.size() >= 2) r.annualized_sharpe = sepo::annualized_sharpe(monthly);
        return r;
    }
};

// ---------------------------------------------------------------------------
// Bias-variance-diversity decomposition
// ---------------------------------------------------------------------------

/// Terms of the squared-loss ensemble decomposition. The identity
/// ensemble_expected_loss = avg_bias + avg_variance - diversity holds
/// algebraically; all four fields are computed independently.
struct BvdReport {
    double avg_bias = 0.0;
    double avg_variance = 0.0;
    double diversity = 0.0;
    double ensemble_expected_loss = 0.0;

    double identity_gap() const {
        const double lhs = avg_bias + avg_variance - diversity;
        const double scale = std::max(1.0, std::abs(ensemble_expected_loss));
        return std::abs(lhs - ensemble_expected_loss) / scale;
    }
};

/// `member_preds` holds K resample draws of an M x N prediction matrix
/// (rows: members, cols: time); `targets` has length N. Expectations are
/// plain averages over the K draws.
inline BvdReport bvd_decomposition(const std::vector<Eigen::MatrixXd>& member_preds,
                                   const Eigen::VectorXd& targets) {
    if (member_preds.empty()) throw ShapeMismatch("need at least one resample draw");
    const Eigen::Index m = member_preds.front().rows();
    const Eigen::Index n = member_preds.front().cols();
    if (m < 1 || n < 1) throw ShapeMismatch("empty prediction matrix");
    if (targets.size() != n) throw ShapeMismatch("target length != prediction columns");
    for (const auto& draw : member_preds)
        if (draw.rows() != m || draw.cols() != n) throw ShapeMismatch("inconsistent draw shapes");

    const double k = static_cast<double>(member_preds.size());

    // Centroid per member: expectation over draws.
    Eigen::MatrixXd centroid = Eigen::MatrixXd::Zero(m, n);
    for (const auto& draw : member_preds) centroid += draw;
    centroid /= k;

    BvdReport report;
    report.avg_bias =
        (centroid.rowwise() - targets.transpose()).array().square().rowwise().mean().mean();

    double variance = 0.0, diversity = 0.0, loss = 0.0;
    for (const auto& draw : member_preds) {
        variance += (draw - centroid).array().square().rowwise().mean().mean();
        const Eigen::RowVectorXd combined = draw.colwise().mean();
        diversity += (draw.rowwise() - combined).array().square().rowwise().mean().mean();
        loss += (combined.transpose() - targets).array().square().mean();
    }
    report.avg_variance = variance / k;
    report.diversity = diversity / k;
    report.ensemble_expected_loss = loss / k;
    return report;
}

struct BvdSuiteResult {
    int cases = 0;
    double worst_gap = 0.0;
    bool pass = false;
};

/// Randomized check of the decomposition identity across ensemble shapes
/// (M in {1,2,5,10}, N in {5,50}, K in {1,20}); reports the worst relative
/// identity gap seen.
inline BvdSuiteResult run_bvd_identity_suite(std::uint64_t seed, int n_cases, double tolerance) {
    static const int ms[] = {1, 2, 5, 10};
    static const int ns[] = {5, 50};
    static const int ks[] = {1, 20};
    Rng rng(seed);
    BvdSuiteResult result;
    result.cases = n_cases;
    for (int c = 0; c < n_cases; ++c) {
        const int m = ms[c % 4];
        const int n = ns[(c / 4) % 2];
        const int k = ks[(c / 8) % 2];
        std::vector<Eigen::MatrixXd> draws;
        draws.reserve(static_cast<std::size_t>(k));
        for (int d = 0; d < k; ++d) {
            Eigen::MatrixXd preds(m, n);
            for (int r = 0; r < m; ++r)
                for (int t = 0; t < n; ++t) preds(r, t) = rng.normal();
            draws.push_back(std::move(preds));
        }
        Eigen::VectorXd targets(n);
        for (int t = 0; t < n; ++t) targets(t) = rng.normal();
        const BvdReport report = bvd_decomposition(draws, targets);
        result.worst_gap = std::max(result.worst_gap, report.identity_gap());
    }
    result.pass = result.worst_gap < tolerance;
    return result;
}

} // namespace sepo
