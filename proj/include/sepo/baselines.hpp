#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "sepo/common.hpp"
#include "sepo/market_data.hpp"

namespace sepo {

/// Simplex weights produced by one of the reference allocators.
struct AllocatorResult {
    Eigen::VectorXd weights;
    std::string method_name;
    std::map<std::string, double> diagnostics;
};

inline void to_json(nlohmann::json& j, const AllocatorResult& r) {
    j = nlohmann::json{
        {"method", r.method_name},
        {"weights", std::vector<double>(r.weights.data(), r.weights.data() + r.weights.size())},
        {"diagnostics", r.diagnostics}};
}

namespace detail {

inline Eigen::VectorXd normalized(Eigen::VectorXd w) {
    const double total = w.sum();
    if (!(total > 0.0)) throw SolverFailed("weights do not normalize");
    return w / total;
}

/// Sample covariance (N-1 denominator).
inline Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& returns) {
    if (returns.rows() < 2) throw InvalidParameter("need at least 2 observations");
    const Eigen::MatrixXd centered = returns.rowwise() - returns.colwise().mean();
    return centered.transpose() * centered / static_cast<double>(returns.rows() - 1);
}

/// Jitters the diagonal until Cholesky succeeds (desk-scale N can be < M).
inline Eigen::MatrixXd make_positive_definite(Eigen::MatrixXd sigma) {
    double blend = 1e-6;
    for (int attempt = 0; attempt < 8; ++attempt) {
        if (Eigen::LLT<Eigen::MatrixXd>(sigma).info() == Eigen::Success) return sigma;
        Eigen::VectorXd diag = sigma.diagonal();
        for (Eigen::Index i = 0; i < diag.size(); ++i)
            if (!(diag(i) > 0.0)) diag(i) = 1e-12;
        sigma += (blend * diag).asDiagonal();
        blend *= 10.0;
    }
    throw SolverFailed("covariance cannot be made positive definite");
}

/// Euclidean projection onto {w >= 0, sum w = 1}.
inline Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
    const Eigen::Index m = v.size();
    std::vector<double> u(v.data(), v.data() + m);
    std::sort(u.begin(), u.end(), std::greater<>());
    double running = 0.0, theta = 0.0;
    for (Eigen::Index k = 0; k < m; ++k) {
        running += u[static_cast<std::size_t>(k)];
        const double candidate = (running - 1.0) / static_cast<double>(k + 1);
        if (u[static_cast<std::size_t>(k)] - candidate > 0.0) theta = candidate;
    }
    return (v.array() - theta).max(0.0);
}

struct LinkageNode {
    int left = -1;   // child cluster id (smaller)
    int right = -1;  // child cluster id (larger)
    double height = 0.0;
};

/// Single-linkage agglomeration on a distance matrix. Leaves are ids
/// 0..M-1; internal nodes get ids M..2M-2 in merge order. Ties choose the
/// lexicographically smallest active pair.
inline std::vector<LinkageNode> single_linkage(const Eigen::MatrixXd& dist) {
    const int m = static_cast<int>(dist.rows());
    const int total = 2 * m - 1;
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(total, total);
    d.topLeftCorner(m, m) = dist;
    std::vector<int> active(static_cast<std::size_t>(m));
    std::iota(active.begin(), active.end(), 0);
    std::vector<LinkageNode> nodes(static_cast<std::size_t>(total));

    for (int step = 0; step < m - 1; ++step) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = 0, bj = 1;
        for (std::size_t i = 0; i + 1 < active.size(); ++i)
            for (std::size_t j = i + 1; j < active.size(); ++j)
                if (d(active[i], active[j]) < best) {
                    best = d(active[i], active[j]);
                    bi = i;
                    bj = j;
                }
        const int a = active[bi], b = active[bj];
        const int merged = m + step;
        nodes[static_cast<std::size_t>(merged)] = {std::min(a, b), std::max(a, b), best};
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(bj));
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(bi));
        for (int k : active) {
            const double nd = std::min(d(a, k), d(b, k));
            d(merged, k) = nd;
            d(k, merged) = nd;
        }
        active.push_back(merged);
    }
    return nodes;
}

inline void collect_leaves(const std::vector<LinkageNode>& nodes, int id, std::vector<int>& out) {
    const int m = static_cast<int>(nodes.size() + 1) / 2;
    if (id < m) {
        out.push_back(id);
        return;
    }
    collect_leaves(nodes, nodes[static_cast<std::size_t>(id)].left, out);
    collect_leaves(nodes, nodes[static_cast<std::size_t>(id)].right, out);
}

/// Correlation-derived distances d_ij = sqrt((1 - rho_ij) / 2).
inline Eigen::MatrixXd correlation_distance(const Eigen::MatrixXd& sigma) {
    const Eigen::Index m = sigma.rows();
    Eigen::MatrixXd dist(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const double si = std::sqrt(sigma(i, i));
        if (!(si > 0.0)) throw DegenerateCorrelation("zero-variance column " + std::to_string(i));
        for (Eigen::Index j = 0; j < m; ++j) {
            const double sj = std::sqrt(sigma(j, j));
            const double rho = std::clamp(sigma(i, j) / (si * sj), -1.0, 1.0);
            dist(i, j) = std::sqrt(std::max(0.0, (1.0 - rho) / 2.0));
        }
        dist(i, i) = 0.0;
    }
    return dist;
}

/// Inverse-variance weights over a covariance sub-block.
inline Eigen::VectorXd inverse_variance_weights(const Eigen::MatrixXd& sigma,
                                                const std::vector<int>& items) {
    Eigen::VectorXd w(static_cast<Eigen::Index>(items.size()));
    for (std::size_t k = 0; k < items.size(); ++k) {
        const double var = sigma(items[k], items[k]);
        if (!(var > 0.0)) throw DegenerateCorrelation("zero variance in cluster");
        w(static_cast<Eigen::Index>(k)) = 1.0 / var;
    }
    return w / w.sum();
}

inline double cluster_variance(const Eigen::MatrixXd& sigma, const std::vector<int>& items) {
    const Eigen::VectorXd w = inverse_variance_weights(sigma, items);
    double var = 0.0;
    for (std::size_t a = 0; a < items.size(); ++a)
        for (std::size_t b = 0; b < items.size(); ++b)
            var += w(static_cast<Eigen::Index>(a)) * w(static_cast<Eigen::Index>(b)) *
                   sigma(items[a], items[b]);
    return var;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Simple allocators
// ---------------------------------------------------------------------------

inline AllocatorResult allocate_equal(Eigen::Index m) {
    if (m < 1) throw InvalidParameter("portfolio size must be >= 1");
    return {Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m)), "equal", {}};
}

/// Weights inversely proportional to per-asset generalization MSE.
inline AllocatorResult allocate_mse_weighted(const Eigen::VectorXd& test_mse) {
    if (test_mse.size() < 1) throw InvalidParameter("empty MSE vector");
    for (Eigen::Index j = 0; j < test_mse.size(); ++j)
        if (!(test_mse(j) > 0.0)) throw NonPositiveMse("MSE must be positive for asset " + std::to_string(j));
    return {detail::normalized(test_mse.cwiseInverse()), "mse", {}};
}

inline AllocatorResult allocate_inverse_vol(const ReturnsMatrix& returns) {
    const Eigen::Index m = returns.n_assets();
    const Eigen::Index n = returns.n_rows();
    if (n < 2) throw InvalidParameter("need at least 2 observations");
    // Plain sequential accumulation: the closed form w_j = (1/sd_j) / sum is
    // reproducible term for term.
    Eigen::VectorXd inv(m);
    double total = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
        double mean = 0.0;
        for (Eigen::Index t = 0; t < n; ++t) mean += returns.values(t, j);
        mean /= static_cast<double>(n);
        double ssq = 0.0;
        for (Eigen::Index t = 0; t < n; ++t) {
            const double centered = returns.values(t, j) - mean;
            ssq += centered * centered;
        }
        const double sd = std::sqrt(ssq / static_cast<double>(n - 1));
        if (!(sd > 0.0)) throw ZeroVolColumn("zero volatility column " + std::to_string(j));
        inv(j) = 1.0 / sd;
        total += inv(j);
    }
    return {inv / total, "inverse_vol", {}};
}

// ---------------------------------------------------------------------------
// Maximum diversification
// ---------------------------------------------------------------------------

/// Maximizes (w' sigma_vec) / sqrt(w' Sigma w) over the simplex by projected
/// gradient ascent with an adaptive step; converged once the ratio improves
/// by less than 1e-10 for 50 consecutive iterations.
inline AllocatorResult allocate_max_div(const ReturnsMatrix& returns) {
    const Eigen::Index m = returns.n_assets();
    if (m == 1) return {Eigen::VectorXd::Ones(1), "max_div", {}};

    Eigen::MatrixXd cov = detail::make_positive_definite(detail::sample_covariance(returns.values));
    // Normalize overall scale so the ascent path is invariant to return units.
    cov /= cov.diagonal().mean();
    const Eigen::VectorXd vol = cov.diagonal().cwiseSqrt();

    auto ratio = [&](const Eigen::VectorXd& w) {
        const double risk = w.dot(cov * w);
        return w.dot(vol) / std::sqrt(risk);
    };

    Eigen::VectorXd w = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
    double current = ratio(w);
    double step = 1.0;
    int quiet = 0;
    long iterations = 0;
    const long max_iterations = 200000;
    while (quiet < 50 && iterations < max_iterations) {
        ++iterations;
        const double risk = w.dot(cov * w);
        const Eigen::VectorXd grad =
            vol / std::sqrt(risk) - w.dot(vol) * (cov * w) / (risk * std::sqrt(risk));
        const Eigen::VectorXd trial = detail::project_simplex(w + step * grad);
        const double value = ratio(trial);
        if (value > current) {
            const double gain = value - current;
            w = trial;
            current = value;
            step *= 1.2;
            quiet = gain < 1e-10 ? quiet + 1 : 0;
        } else {
            step *= 0.5;
            ++quiet;
        }
    }
    if (iterations >= max_iterations) throw SolverFailed("max diversification did not converge");

    // First-order ascent stalls near the optimum (ratio differences fall
    // below fp resolution while weights are still ~1e-8 off). Polish with the
    // closed form on the active face the ascent found: the face optimum is
    // proportional to Sigma_S^-1 vol_S. Accepted only when it stays feasible
    // and does not lower the ratio.
    std::vector<Eigen::Index> active;
    for (Eigen::Index j = 0; j < m; ++j)
        if (w(j) > 1e-8) active.push_back(j);
    if (!active.empty()) {
        const Eigen::Index a = static_cast<Eigen::Index>(active.size());
        Eigen::MatrixXd sub(a, a);
        Eigen::VectorXd vol_sub(a);
        for (Eigen::Index r = 0; r < a; ++r) {
            vol_sub(r) = vol(active[static_cast<std::size_t>(r)]);
            for (Eigen::Index c = 0; c < a; ++c)
                sub(r, c) = cov(active[static_cast<std::size_t>(r)], active[static_cast<std::size_t>(c)]);
        }
        Eigen::LLT<Eigen::MatrixXd> llt(sub);
        if (llt.info() == Eigen::Success) {
            const Eigen::VectorXd face = llt.solve(vol_sub);
            if ((face.array() > 0.0).all()) {
                Eigen::VectorXd candidate = Eigen::VectorXd::Zero(m);
                for (Eigen::Index r = 0; r < a; ++r)
                    candidate(active[static_cast<std::size_t>(r)]) = face(r);
                candidate /= candidate.sum();
                if (ratio(candidate) >= current - 1e-12) {
                    w = candidate;
                    current = ratio(candidate);
                }
            }
        }
    }
    return {w,
            "max_div",
            {{"iterations", static_cast<double>(iterations)}, {"diversification_ratio", current}}};
}

// ---------------------------------------------------------------------------
// Hierarchical risk parity
// ---------------------------------------------------------------------------

/// Single-linkage clustering on correlation distance, quasi-diagonalization,
/// and recursive bisection with inverse-variance cluster splits.
inline AllocatorResult allocate_hrp(const ReturnsMatrix& returns) {
    const Eigen::Index m = returns.n_assets();
    if (m < 2) throw InvalidParameter("HRP needs at least 2 assets");
    const Eigen::MatrixXd cov = detail::sample_covariance(returns.values);
    const Eigen::MatrixXd dist = detail::correlation_distance(cov);
    const auto nodes = detail::single_linkage(dist);

    std::vector<int> order;
    detail::collect_leaves(nodes, 2 * static_cast<int>(m) - 2, order);

    Eigen::VectorXd weights = Eigen::VectorXd::Ones(m);
    std::vector<std::pair<std::size_t, std::size_t>> stack{{0, order.size()}};
    while (!stack.empty()) {
        const auto [lo, hi] = stack.back();
        stack.pop_back();
        if (hi - lo < 2) continue;
        const std::size_t mid = lo + (hi - lo) / 2;
        const std::vector<int> first(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                     order.begin() + static_cast<std::ptrdiff_t>(mid));
        const std::vector<int> second(order.begin() + static_cast<std::ptrdiff_t>(mid),
                                      order.begin() + static_cast<std::ptrdiff_t>(hi));
        const double v1 = detail::cluster_variance(cov, first);
        const double v2 = detail::cluster_variance(cov, second);
        const double alpha = (v1 + v2 > 0.0) ? 1.0 - v1 / (v1 + v2) : 0.5;
        for (int idx : first) weights(idx) *= alpha;
        for (int idx : second) weights(idx) *= 1.0 - alpha;
        stack.push_back({lo, mid});
        stack.push_back({mid, hi});
    }
    return {detail::normalized(weights), "hrp", {}};
}

// ---------------------------------------------------------------------------
// Hierarchical equal risk contribution
// ---------------------------------------------------------------------------

/// As HRP, but the dendrogram is cut into k clusters (largest dispersion drop
/// on the within-cluster dispersion curve, capped at ceil(sqrt(M))), weights
/// are split top-down with equal-risk-contribution ratios between branches,
/// and inverse-variance weighting is applied within final clusters.
inline AllocatorResult allocate_herc(const ReturnsMatrix& returns) {
    const Eigen::Index m_idx = returns.n_assets();
    if (m_idx < 2) throw InvalidParameter("HERC needs at least 2 assets");
    const int m = static_cast<int>(m_idx);
    const Eigen::MatrixXd cov = detail::sample_covariance(returns.values);
    const Eigen::MatrixXd dist = detail::correlation_distance(cov);
    const auto nodes = detail::single_linkage(dist);
    const int root = 2 * m - 2;

    // Roots of the forest obtained by removing the top (k-1) merges.
    auto cluster_roots = [&](int k) {
        std::vector<int> roots;
        const int cut_from = 2 * m - 1 - (k - 1); // ids >= cut_from are removed
        if (k == 1) {
            roots.push_back(root);
            return roots;
        }
        for (int id = cut_from; id <= root; ++id)
            for (int child : {nodes[static_cast<std::size_t>(id)].left,
                              nodes[static_cast<std::size_t>(id)].right})
                if (child < cut_from) roots.push_back(child);
        std::sort(roots.begin(), roots.end());
        return roots;
    };

    auto dispersion = [&](const std::vector<int>& roots) {
        double w_total = 0.0;
        for (int r : roots) {
            std::vector<int> leaves;
            detail::collect_leaves(nodes, r, leaves);
            double s = 0.0;
            for (int a : leaves)
                for (int b : leaves) s += dist(a, b) * dist(a, b);
            w_total += s / (2.0 * static_cast<double>(leaves.size()));
        }
        return w_total;
    };

    const int k_max = std::min(m, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(m)))));
    std::vector<double> w_k(static_cast<std::size_t>(k_max) + 1, 0.0);
    for (int k = 1; k <= k_max; ++k) w_k[static_cast<std::size_t>(k)] = dispersion(cluster_roots(k));

    int best_k = 1;
    double best_drop = 0.0;
    for (int k = 2; k <= k_max; ++k) {
        const double drop = w_k[static_cast<std::size_t>(k - 1)] - w_k[static_cast<std::size_t>(k)];
        if (drop > best_drop + 1e-12 * (1.0 + w_k[1])) {
            best_drop = drop;
            best_k = k;
        }
    }

    const auto roots = cluster_roots(best_k);
    std::map<int, std::vector<int>> members;   // cluster root -> leaves
    std::map<int, Eigen::VectorXd> within;     // cluster root -> IV weights
    std::map<int, double> risk;                // cluster root -> IV portfolio variance
    for (int r : roots) {
        std::vector<int> leaves;
        detail::collect_leaves(nodes, r, leaves);
        members[r] = leaves;
        within[r] = detail::inverse_variance_weights(cov, leaves);
        risk[r] = detail::cluster_variance(cov, leaves);
    }

    // Branch risk: sum of final-cluster risks underneath a node.
    std::map<int, double> branch_risk;
    std::function<double(int)> accumulate_risk = [&](int id) -> double {
        if (risk.count(id)) return branch_risk[id] = risk[id];
        const auto& node = nodes[static_cast<std::size_t>(id)];
        return branch_risk[id] = accumulate_risk(node.left) + accumulate_risk(node.right);
    };
    accumulate_risk(root);

    std::map<int, double> cluster_weight;
    std::function<void(int, double)> assign = [&](int id, double weight) {
        if (risk.count(id)) {
            cluster_weight[id] = weight;
            return;
        }
        const auto& node = nodes[static_cast<std::size_t>(id)];
        const double ra = branch_risk[node.left];
        const double rb = branch_risk[node.right];
        const double alpha = (ra + rb > 0.0) ? rb / (ra + rb) : 0.5;
        assign(node.left, weight * alpha);
        assign(node.right, weight * (1.0 - alpha));
    };
    assign(root, 1.0);

    Eigen::VectorXd weights = Eigen::VectorXd::Zero(m_idx);
    for (int r : roots) {
        const auto& leaves = members[r];
        for (std::size_t k = 0; k < leaves.size(); ++k)
            weights(leaves[k]) = cluster_weight[r] * within[r](static_cast<Eigen::Index>(k));
    }
    AllocatorResult result{detail::normalized(weights), "herc", {}};
    result.diagnostics["clusters"] = static_cast<double>(best_k);
    return result;
}

// ---------------------------------------------------------------------------
// CVaR risk parity
// ---------------------------------------------------------------------------

/// Equalizes historical CVaR contributions by damped multiplicative updates
/// w_j <- w_j * (target / contribution_j)^0.5. CVaR is the mean loss over the
/// empirical tail beyond VaR at level alpha. Non-convergence is reported via
/// diagnostics (best iterate returned), not an exception.
inline AllocatorResult allocate_cvar_rp(const ReturnsMatrix& returns, double alpha = 0.95) {
    const Eigen::Index m = returns.n_assets();
    const Eigen::Index n = returns.n_rows();
    if (m < 1) throw InvalidParameter("need at least 1 asset");
    if (!(alpha > 0.0) || alpha >= 1.0) throw InvalidParameter("alpha must lie in (0, 1)");
    if (m == 1) return {Eigen::VectorXd::Ones(1), "cvar_rp", {{"converged", 1.0}}};

    const Eigen::Index tail = std::max<Eigen::Index>(
        1, static_cast<Eigen::Index>(std::floor((1.0 - alpha) * static_cast<double>(n))));

    // Contributions of each asset to the historical tail loss; ties in the
    // tail cut resolved by time index for determinism.
    auto contributions = [&](const Eigen::VectorXd& w, Eigen::VectorXd& contrib) {
        const Eigen::VectorXd pnl = returns.values * w;
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
        std::iota(idx.begin(), idx.end(), Eigen::Index{0});
        std::nth_element(idx.begin(), idx.begin() + (tail - 1), idx.end(),
                         [&](Eigen::Index a, Eigen::Index b) {
                             if (pnl(a) != pnl(b)) return pnl(a) < pnl(b);
                             return a < b;
                         });
        contrib.setZero(m);
        for (Eigen::Index t = 0; t < tail; ++t)
            contrib -= w.cwiseProduct(returns.values.row(idx[static_cast<std::size_t>(t)]).transpose());
        contrib /= static_cast<double>(tail);
    };

    auto gap_of = [&](const Eigen::VectorXd& contrib) {
        const double total = contrib.sum();
        const double scale = std::max(std::abs(total) / static_cast<double>(m), 1e-300);
        return (contrib.maxCoeff() - contrib.minCoeff()) / scale;
    };

    Eigen::VectorXd w = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
    Eigen::VectorXd contrib(m);
    Eigen::VectorXd best_w = w;
    double best_gap = std::numeric_limits<double>::infinity();
    long iterations = 0;
    bool converged = false;

    for (; iterations < 5000; ++iterations) {
        contributions(w, contrib);
        const double cvar = contrib.sum();
        const double gap = gap_of(contrib);
        if (gap < best_gap) {
            best_gap = gap;
            best_w = w;
        }
        if (gap < 1e-4) {
            converged = true;
            break;
        }
        if (!(cvar > 0.0)) break; // tail gain: contribution targets undefined
        const double target = cvar / static_cast<double>(m);
        for (Eigen::Index j = 0; j < m; ++j) {
            const double c = std::max(contrib(j), 1e-12 * target);
            w(j) *= std::sqrt(target / c);
        }
        w /= w.sum();
    }

    contributions(best_w, contrib);
    AllocatorResult result{best_w, "cvar_rp", {}};
    result.diagnostics["converged"] = converged ? 1.0 : 0.0;
    result.diagnostics["iterations"] = static_cast<double>(iterations);
    result.diagnostics["contribution_gap"] = best_gap;
    result.diagnostics["cvar"] = contrib.sum();
    return result;
}

/// Dispatch by method name; `test_mse` is only consulted by the MSE-weighted
/// allocator.
inline AllocatorResult allocate_baseline(const std::string& method, const ReturnsMatrix& returns,
                                         const Eigen::VectorXd& test_mse = {}) {
    if (method == "equal") return allocate_equal(returns.n_assets());
    if (method == "mse") return allocate_mse_weighted(test_mse);
    if (method == "inverse_vol") return allocate_inverse_vol(returns);
    if (method == "max_div") return allocate_max_div(returns);
    if (method == "hrp") return allocate_hrp(returns);
    if (method == "herc") return allocate_herc(returns);
    if (method == "cvar_rp") return allocate_cvar_rp(returns);
    throw InvalidParameter("unknown allocator '" + method + "'");
}

} // namespace sepo
