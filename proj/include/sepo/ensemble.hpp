#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/QR>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sepo/common.hpp"
#include "sepo/market_data.hpp"
#include "sepo/predictor.hpp"

namespace sepo {

// ---------------------------------------------------------------------------
// Diversity modulation
// ---------------------------------------------------------------------------

/// Per-instance modulation factors: the unique loss argmin (ties broken by
/// lowest index) receives 1 - epsilon, every other predictor epsilon / (M-1).
/// With a single predictor the factor is always 1.
inline Eigen::VectorXd delta_weights(const Eigen::VectorXd& losses, double epsilon) {
    const Eigen::Index m = losses.size();
    if (m < 1) throw InvalidParameter("need at least one loss");
    if (!losses.allFinite()) throw NonFiniteInput("non-finite losses");
    if (epsilon < 0.0 || epsilon > 1.0) throw InvalidParameter("epsilon must lie in [0, 1]");
    Eigen::VectorXd delta(m);
    if (m == 1) {
        delta(0) = 1.0;
        return delta;
    }
    Eigen::Index winner = 0;
    for (Eigen::Index j = 1; j < m; ++j)
        if (losses(j) < losses(winner)) winner = j;
    delta.setConstant(epsilon / static_cast<double>(m - 1));
    delta(winner) = 1.0 - epsilon;
    return delta;
}

// ---------------------------------------------------------------------------
// Structured dataset (diversity-modulated joint training)
// ---------------------------------------------------------------------------

/// Matrix of trained per-asset predictions; column j is produced solely by
/// predictor j. Row i holds the pre-update predictions at instance i.
struct StructuredDataset {
    Eigen::MatrixXd values; // instances x assets
    double epsilon = 0.0;
    std::vector<std::string> asset_ids;
};

inline void to_json(nlohmann::json& j, const StructuredDataset& d) {
    std::vector<double> flat(d.values.size());
    for (Eigen::Index r = 0; r < d.values.rows(); ++r)
        for (Eigen::Index c = 0; c < d.values.cols(); ++c)
            flat[static_cast<std::size_t>(r * d.values.cols() + c)] = d.values(r, c);
    j = nlohmann::json{{"rows", d.values.rows()},
                       {"cols", d.values.cols()},
                       {"values", flat},
                       {"epsilon", d.epsilon},
                       {"asset_ids", d.asset_ids}};
}

inline void from_json(const nlohmann::json& j, StructuredDataset& d) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto flat = j.at("values").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(flat.size()) != rows * cols)
        throw ShapeMismatch("dataset JSON dimensions inconsistent");
    d.values.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
            d.values(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
    d.epsilon = j.at("epsilon").get<double>();
    d.asset_ids = j.at("asset_ids").get<std::vector<std::string>>();
}

struct TrainedEnsemble {
    StructuredDataset dataset;
    std::vector<PredictorParams> predictors;
};

/// Joint single-pass training of one predictor per column. At each instance
/// the predictions and losses of all M predictors are evaluated first, the
/// pre-update predictions are recorded into the dataset row, and every
/// predictor is then stepped with its modulation factor from delta_weights.
///
/// Per-predictor seeds default to streams derived from cfg.seed; pass
/// `seeds` to pin them explicitly. `delta_log`, when given, receives the
/// delta vector of every recorded instance.
inline TrainedEnsemble form_structured_dataset(const ReturnsMatrix& train, const PredictorConfig& cfg,
                                               double epsilon,
                                               const std::vector<std::uint64_t>& seeds = {},
                                               std::vector<Eigen::VectorXd>* delta_log = nullptr) {
    cfg.validate();
    if (epsilon < 0.0 || epsilon > 1.0) throw InvalidParameter("epsilon must lie in [0, 1]");
    const Eigen::Index m = train.n_assets();
    if (m < 1) throw InvalidParameter("need at least one asset column");
    const Eigen::Index lag = cfg.lag_window;
    const Eigen::Index n_inst = train.n_rows() - cfg.tau - (lag - 1);
    if (n_inst < 1) throw InvalidParameter("training window shorter than lag_window + tau");
    if (!seeds.empty() && static_cast<Eigen::Index>(seeds.size()) != m)
        throw InvalidParameter("per-predictor seed count != asset count");

    TrainedEnsemble out;
    out.dataset.epsilon = epsilon;
    out.dataset.asset_ids = train.asset_ids;
    out.dataset.values.resize(n_inst, m);
    out.predictors.reserve(static_cast<std::size_t>(m));
    for (Eigen::Index j = 0; j < m; ++j) {
        PredictorConfig pc = cfg;
        pc.seed = seeds.empty() ? derive_seed(cfg.seed, 0x70726564ULL, static_cast<std::uint64_t>(j))
                                : seeds[static_cast<std::size_t>(j)];
        out.predictors.push_back(init_predictor(pc));
    }

    Eigen::VectorXd preds(m), losses(m);
    try {
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            const bool record = epoch == cfg.epochs - 1;
            for (Eigen::Index i = 0; i < n_inst; ++i) {
                for (Eigen::Index j = 0; j < m; ++j) {
                    const Eigen::VectorXd window = train.values.block(i, j, lag, 1);
                    const double y = train.values(i + lag - 1 + cfg.tau, j);
                    preds(j) = forward(out.predictors[static_cast<std::size_t>(j)], window);
                    losses(j) = (preds(j) - y) * (preds(j) - y);
                }
                if (record) out.dataset.values.row(i) = preds.transpose();
                const Eigen::VectorXd delta = delta_weights(losses, epsilon);
                if (record && delta_log) delta_log->push_back(delta);
                for (Eigen::Index j = 0; j < m; ++j) {
                    const Eigen::VectorXd window = train.values.block(i, j, lag, 1);
                    const double y = train.values(i + lag - 1 + cfg.tau, j);
                    detail::sgd_step_inplace(out.predictors[static_cast<std::size_t>(j)], window, y,
                                             cfg.eta, cfg.lambda_p, n_inst, delta(j));
                }
            }
        }
    } catch (const NonFiniteGradient& e) {
        throw DivergedTraining(std::string("training diverged: ") + e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Basis transform
// ---------------------------------------------------------------------------

enum class BasisKind { gaussian, radial };

inline std::string to_string(BasisKind k) { return k == BasisKind::gaussian ? "gaussian" : "radial"; }

inline BasisKind basis_kind_from_string(const std::string& s) {
    if (s == "gaussian") return BasisKind::gaussian;
    if (s == "radial") return BasisKind::radial;
    throw InvalidParameter("unknown basis kind '" + s + "'");
}

/// Per-column center/scale parameters computed from the structured dataset.
struct BasisSpec {
    BasisKind kind = BasisKind::gaussian;
    Eigen::VectorXd centers; // column means
    Eigen::VectorXd scales;  // column population std, floored
};

inline void to_json(nlohmann::json& j, const BasisSpec& b) {
    j = nlohmann::json{{"kind", to_string(b.kind)},
                       {"centers", std::vector<double>(b.centers.data(), b.centers.data() + b.centers.size())},
                       {"scales", std::vector<double>(b.scales.data(), b.scales.data() + b.scales.size())}};
}

inline void from_json(const nlohmann::json& j, BasisSpec& b) {
    b.kind = basis_kind_from_string(j.at("kind").get<std::string>());
    const auto centers = j.at("centers").get<std::vector<double>>();
    const auto scales = j.at("scales").get<std::vector<double>>();
    b.centers = Eigen::Map<const Eigen::VectorXd>(centers.data(), static_cast<Eigen::Index>(centers.size()));
    b.scales = Eigen::Map<const Eigen::VectorXd>(scales.data(), static_cast<Eigen::Index>(scales.size()));
}

/// Element-wise basis expansion of the structured dataset.
/// gaussian: exp(-(x - mu)^2 / (2 sigma^2));  radial: |x - mu| / sigma.
/// Scales are floored at 1e-8 * (1 + |mu|) so constant prediction columns
/// cannot produce a division by zero; disable the floor to surface them.
inline std::pair<Eigen::MatrixXd, BasisSpec> basis_transform(const StructuredDataset& ds, BasisKind kind,
                                                             bool apply_sigma_floor = true) {
    const Eigen::Index n = ds.values.rows();
    const Eigen::Index m = ds.values.cols();
    if (n < 2) throw InvalidParameter("basis transform needs at least 2 rows");

    BasisSpec spec;
    spec.kind = kind;
    spec.centers.resize(m);
    spec.scales.resize(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        const double mu = ds.values.col(j).mean();
        double sigma = std::sqrt((ds.values.col(j).array() - mu).square().mean());
        if (apply_sigma_floor) {
            sigma = std::max(sigma, 1e-8 * (1.0 + std::abs(mu)));
        } else if (!(sigma > 0.0)) {
            throw DegenerateColumn("constant prediction column " + std::to_string(j));
        }
        spec.centers(j) = mu;
        spec.scales(j) = sigma;
    }

    Eigen::MatrixXd phi(n, m);
    for (Eigen::Index j = 0; j < m; ++j) {
        const auto centered = ds.values.col(j).array() - spec.centers(j);
        if (kind == BasisKind::gaussian)
            phi.col(j) = (-centered.square() / (2.0 * spec.scales(j) * spec.scales(j))).exp();
        else
            phi.col(j) = centered.abs() / spec.scales(j);
    }
    return {phi, spec};
}

// ---------------------------------------------------------------------------
// Target, least-squares fit, weight extraction
// ---------------------------------------------------------------------------

/// Equal-weighted portfolio returns: the arithmetic mean across assets.
inline Eigen::VectorXd equal_weight_target(const ReturnsMatrix& r) {
    if (r.n_assets() < 1) throw InvalidParameter("need at least one asset");
    return r.values.rowwise().mean();
}

/// Regularized least squares w = (Phi' Phi + lambda_s I)^-1 Phi' target,
/// solved by Cholesky on the normal equations when lambda_s > 0 and by
/// column-pivoted QR otherwise.
inline Eigen::VectorXd fit_srbfn(const Eigen::MatrixXd& phi, const Eigen::VectorXd& target,
                                 double lambda_s) {
    if (phi.rows() != target.size()) throw ShapeMismatch("design matrix rows != target length");
    if (lambda_s < 0.0) throw InvalidParameter("lambda_s must be >= 0");
    const Eigen::Index m = phi.cols();
    if (lambda_s > 0.0) {
        Eigen::MatrixXd normal = phi.transpose() * phi;
        normal.diagonal().array() += lambda_s;
        Eigen::LLT<Eigen::MatrixXd> llt(normal);
        if (llt.info() != Eigen::Success) throw SingularSystem("Cholesky factorization failed");
        return llt.solve(phi.transpose() * target);
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(phi);
    if (qr.rank() < m) throw SingularSystem("rank-deficient design matrix with lambda_s = 0");
    return qr.solve(target);
}

/// Post-optimization constraints: clip negatives to zero and renormalize to
/// the simplex; all-clipped vectors fall back to equal weights.
inline Eigen::VectorXd extract_portfolio_weights(const Eigen::VectorXd& raw_w) {
    if (!raw_w.allFinite()) throw NonFiniteInput("non-finite ensemble parameters");
    if (raw_w.size() < 1) throw InvalidParameter("empty weight vector");
    Eigen::VectorXd w = raw_w.cwiseMax(0.0);
    const double total = w.sum();
    if (total <= 0.0) return Eigen::VectorXd::Constant(raw_w.size(), 1.0 / static_cast<double>(raw_w.size()));
    return w / total;
}

/// Ensemble predictions r_hat = Phi w.
inline Eigen::VectorXd predict_portfolio(const Eigen::MatrixXd& phi, const Eigen::VectorXd& raw_w) {
    if (phi.cols() != raw_w.size()) throw ShapeMismatch("design matrix cols != weight length");
    return phi * raw_w;
}

// ---------------------------------------------------------------------------
// End-to-end fit
// ---------------------------------------------------------------------------

struct EnsembleFit {
    Eigen::VectorXd raw_w;
    Eigen::VectorXd portfolio_weights;
    double lambda_s = 0.0;
    BasisSpec basis;
};

inline void to_json(nlohmann::json& j, const EnsembleFit& f) {
    j = nlohmann::json{
        {"raw_w", std::vector<double>(f.raw_w.data(), f.raw_w.data() + f.raw_w.size())},
        {"portfolio_weights",
         std::vector<double>(f.portfolio_weights.data(), f.portfolio_weights.data() + f.portfolio_weights.size())},
        {"lambda_s", f.lambda_s},
        {"basis", f.basis}};
}

inline void from_json(const nlohmann::json& j, EnsembleFit& f) {
    const auto raw = j.at("raw_w").get<std::vector<double>>();
    const auto pw = j.at("portfolio_weights").get<std::vector<double>>();
    f.raw_w = Eigen::Map<const Eigen::VectorXd>(raw.data(), static_cast<Eigen::Index>(raw.size()));
    f.portfolio_weights = Eigen::Map<const Eigen::VectorXd>(pw.data(), static_cast<Eigen::Index>(pw.size()));
    f.lambda_s = j.at("lambda_s").get<double>();
    f.basis = j.at("basis").get<BasisSpec>();
}

/// Train the structured dataset, expand it through the basis, and fit the
/// combiner against the equal-weighted target.
inline EnsembleFit fit_ensemble(const TrainedEnsemble& trained, const ReturnsMatrix& train,
                                BasisKind kind, double lambda_s) {
    // Targets are aligned with the dataset instances: instance i predicts the
    // return at row i + L - 1 + tau, so the target rows start there.
    const Eigen::Index n_inst = trained.dataset.values.rows();
    const Eigen::Index first_target = train.n_rows() - n_inst;
    auto [phi, spec] = basis_transform(trained.dataset, kind);
    Eigen::VectorXd target = train.values.middleRows(first_target, n_inst).rowwise().mean();
    EnsembleFit fit;
    fit.raw_w = fit_srbfn(phi, target, lambda_s);
    fit.portfolio_weights = extract_portfolio_weights(fit.raw_w);
    fit.lambda_s = lambda_s;
    fit.basis = std::move(spec);
    return fit;
}

} // namespace sepo
