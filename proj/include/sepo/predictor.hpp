#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "sepo/common.hpp"
#include "sepo/rng.hpp"

namespace sepo {

/// Hyperparameters of one per-asset predictor: a two-layer tanh network with
/// a linear output head, trained by per-instance SGD.
struct PredictorConfig {
    int kappa = 20;         // neurons per layer
    double eta = 0.03;      // learning rate
    double chi = 0.01;      // scale of the random initial weights
    double lambda_p = 0.0;  // L2 regularization
    int tau = 1;            // prediction lag (timesteps ahead)
    int lag_window = 1;     // input window length L
    int epochs = 1;         // passes over the training window
    std::uint64_t seed = 0;

    void validate() const {
        if (kappa < 1) throw InvalidParameter("kappa must be >= 1");
        if (!(eta > 0.0)) throw InvalidParameter("eta must be > 0");
        if (lambda_p < 0.0) throw InvalidParameter("lambda_p must be >= 0");
        if (tau < 1) throw InvalidParameter("tau must be >= 1");
        if (lag_window < 1) throw InvalidParameter("lag_window must be >= 1");
        if (epochs < 1) throw InvalidParameter("epochs must be >= 1");
    }
};

/// Weights of one predictor: f(x) = w2 * tanh(w1 * x + b1) + b2.
struct PredictorParams {
    Eigen::MatrixXd w1;    // kappa x L
    Eigen::VectorXd b1;    // kappa
    Eigen::RowVectorXd w2; // 1 x kappa
    double b2 = 0.0;

    Eigen::Index kappa() const { return w1.rows(); }
    Eigen::Index lag_window() const { return w1.cols(); }

    bool all_finite() const {
        return w1.allFinite() && b1.allFinite() && w2.allFinite() && std::isfinite(b2);
    }
};

inline void to_json(nlohmann::json& j, const PredictorParams& p) {
    std::vector<double> w1(p.w1.size());
    for (Eigen::Index r = 0; r < p.w1.rows(); ++r)
        for (Eigen::Index c = 0; c < p.w1.cols(); ++c)
            w1[static_cast<std::size_t>(r * p.w1.cols() + c)] = p.w1(r, c);
    j = nlohmann::json{{"kappa", p.kappa()},
                       {"L", p.lag_window()},
                       {"w1", w1},
                       {"b1", std::vector<double>(p.b1.data(), p.b1.data() + p.b1.size())},
                       {"w2", std::vector<double>(p.w2.data(), p.w2.data() + p.w2.size())},
                       {"b2", p.b2}};
}

inline void from_json(const nlohmann::json& j, PredictorParams& p) {
    const auto kappa = j.at("kappa").get<Eigen::Index>();
    const auto lag = j.at("L").get<Eigen::Index>();
    const auto w1 = j.at("w1").get<std::vector<double>>();
    const auto b1 = j.at("b1").get<std::vector<double>>();
    const auto w2 = j.at("w2").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(w1.size()) != kappa * lag ||
        static_cast<Eigen::Index>(b1.size()) != kappa ||
        static_cast<Eigen::Index>(w2.size()) != kappa)
        throw ShapeMismatch("predictor JSON dimensions inconsistent");
    p.w1.resize(kappa, lag);
    for (Eigen::Index r = 0; r < kappa; ++r)
        for (Eigen::Index c = 0; c < lag; ++c)
            p.w1(r, c) = w1[static_cast<std::size_t>(r * lag + c)];
    p.b1 = Eigen::Map<const Eigen::VectorXd>(b1.data(), kappa);
    p.w2 = Eigen::Map<const Eigen::RowVectorXd>(w2.data(), kappa);
    p.b2 = j.at("b2").get<double>();
}

/// Entries i.i.d. uniform on [-1, 1] scaled by chi; deterministic in the seed.
/// Draw order: w1 row-major, b1, w2, b2.
inline PredictorParams init_predictor(const PredictorConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    auto draw = [&] { return cfg.chi * rng.uniform(-1.0, 1.0); };
    PredictorParams p;
    p.w1.resize(cfg.kappa, cfg.lag_window);
    for (Eigen::Index r = 0; r < p.w1.rows(); ++r)
        for (Eigen::Index c = 0; c < p.w1.cols(); ++c) p.w1(r, c) = draw();
    p.b1.resize(cfg.kappa);
    for (Eigen::Index r = 0; r < p.b1.size(); ++r) p.b1(r) = draw();
    p.w2.resize(cfg.kappa);
    for (Eigen::Index r = 0; r < p.w2.size(); ++r) p.w2(r) = draw();
    p.b2 = draw();
    return p;
}

/// One forward pass over a lag window of returns.
inline double forward(const PredictorParams& p, const Eigen::VectorXd& window) {
    if (window.size() != p.lag_window()) throw ShapeMismatch("window length != lag window");
    if (!window.allFinite()) throw NonFiniteInput("non-finite input window");
    return p.w2.dot((p.w1 * window + p.b1).array().tanh().matrix()) + p.b2;
}

namespace detail {

/// In-place SGD step on squared loss with L2 term, scaled by the diversity
/// modulation factor delta. Gradient by exact backpropagation.
inline void sgd_step_inplace(PredictorParams& p, const Eigen::VectorXd& x, double y, double eta,
                             double lambda_p, Eigen::Index n_total, double delta) {
    const Eigen::VectorXd h = (p.w1 * x + p.b1).array().tanh();
    const double f = p.w2.dot(h) + p.b2;
    const double e2 = 2.0 * (f - y);
    if (!std::isfinite(e2)) throw NonFiniteGradient("diverged: non-finite loss gradient");

    const double reg = lambda_p / static_cast<double>(n_total);
    const double scale = eta * delta;

    // dL/dz for the hidden layer, with z = w1 x + b1
    const Eigen::VectorXd dz = e2 * (p.w2.transpose().array() * (1.0 - h.array().square())).matrix();

    p.b2 -= scale * (e2 + reg * p.b2);
    p.w2 -= scale * (e2 * h.transpose() + reg * p.w2);
    p.b1 -= scale * (dz + reg * p.b1);
    p.w1 -= scale * (dz * x.transpose() + reg * p.w1);
    if (!p.all_finite()) throw NonFiniteGradient("diverged: non-finite parameters after update");
}

} // namespace detail

/// Diversity-modulated SGD update; returns the updated parameters.
/// theta <- theta - eta * (dL/dtheta + (lambda_p / n_total) * theta) * delta
/// with L = (f(x) - y)^2.
inline PredictorParams sgd_step(const PredictorParams& p, const Eigen::VectorXd& x, double y,
                                double eta, double lambda_p, Eigen::Index n_total, double delta) {
    if (delta < 0.0 || delta > 1.0) throw InvalidParameter("delta must lie in [0, 1]");
    if (!x.allFinite() || !std::isfinite(y)) throw NonFiniteInput("non-finite training sample");
    PredictorParams out = p;
    detail::sgd_step_inplace(out, x, y, eta, lambda_p, n_total, delta);
    return out;
}

/// Feeds predictions back into the lag window `horizon` times and compounds
/// them: returns prod(1 + r_hat) - 1.
inline double recurrent_forecast(const PredictorParams& p, const Eigen::VectorXd& history,
                                 Eigen::Index horizon) {
    if (horizon < 0) throw InvalidParameter("horizon must be >= 0");
    if (history.size() < p.lag_window()) throw ShapeMismatch("history shorter than lag window");
    Eigen::VectorXd window = history.tail(p.lag_window());
    double cumulative = 1.0;
    for (Eigen::Index t = 0; t < horizon; ++t) {
        const double r = forward(p, window);
        if (!std::isfinite(r)) throw NonFiniteInput("non-finite forecast");
        cumulative *= 1.0 + r;
        if (p.lag_window() > 1) window.head(p.lag_window() - 1) = window.tail(p.lag_window() - 1).eval();
        window(p.lag_window() - 1) = r;
    }
    return cumulative - 1.0;
}

} // namespace sepo
