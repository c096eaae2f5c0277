#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "sepo/common.hpp"
#include "sepo/rng.hpp"

namespace sepo {

struct ForecastEntry {
    std::string asset_id;
    double forecast = 0.0; // cumulative 1-month predicted return
};

/// Assets sorted by descending forecast; ties broken by asset_id.
struct ForecastRanking {
    std::vector<ForecastEntry> entries;
    std::int64_t generated_at_index = -1; // row index of the decision point
};

struct SelectionConfig {
    double threshold_T = 0.0; // cumulative-return threshold (fraction)
    int portfolio_size = 1;   // M
    double gamma = 1.0;       // candidate pool multiplier, >= 1
    std::uint64_t seed = 0;

    void validate() const {
        if (portfolio_size < 1) throw InvalidParameter("portfolio size must be >= 1");
        if (gamma < 1.0) throw InvalidParameter("gamma must be >= 1");
    }
};

struct SelectionStats {
    std::size_t pool_size = 0;
    std::size_t candidates_above_threshold = 0;
    bool pool_shrunk = false; // fewer than gamma * M candidates cleared the threshold
};

inline ForecastRanking rank_assets(const std::vector<std::pair<std::string, double>>& forecasts,
                                   std::int64_t generated_at_index = -1) {
    if (forecasts.empty()) throw InvalidParameter("no forecasts to rank");
    ForecastRanking ranking;
    ranking.generated_at_index = generated_at_index;
    ranking.entries.reserve(forecasts.size());
    for (const auto& [id, value] : forecasts) {
        if (!std::isfinite(value)) throw NonFiniteInput("non-finite forecast for " + id);
        ranking.entries.push_back({id, value});
    }
    std::sort(ranking.entries.begin(), ranking.entries.end(), [](const auto& a, const auto& b) {
        if (a.forecast != b.forecast) return a.forecast > b.forecast;
        return a.asset_id < b.asset_id;
    });
    return ranking;
}

/// Draws M constituents from the top min(gamma * M, #above-threshold) ranked
/// assets, uniformly without replacement. gamma == 1 degenerates to the
/// deterministic top-M prefix. The returned ids keep ranking order.
inline std::vector<std::string> select_assets(const ForecastRanking& ranking, const SelectionConfig& cfg,
                                              SelectionStats* stats = nullptr) {
    cfg.validate();
    const std::size_t m = static_cast<std::size_t>(cfg.portfolio_size);

    std::size_t above = 0;
    while (above < ranking.entries.size() && ranking.entries[above].forecast > cfg.threshold_T) ++above;
    if (above < m)
        throw InsufficientCandidates("only " + std::to_string(above) + " assets above threshold, need " +
                                     std::to_string(m));

    const auto target_pool = static_cast<std::size_t>(std::llround(cfg.gamma * static_cast<double>(m)));
    const std::size_t pool = std::min(above, std::max(m, target_pool));
    if (stats) {
        stats->pool_size = pool;
        stats->candidates_above_threshold = above;
        stats->pool_shrunk = pool < target_pool;
    }

    std::vector<std::size_t> picked(m);
    if (pool == m) {
        std::iota(picked.begin(), picked.end(), std::size_t{0});
    } else {
        std::vector<std::size_t> indices(pool);
        std::iota(indices.begin(), indices.end(), std::size_t{0});
        Rng rng(cfg.seed);
        for (std::size_t k = 0; k < m; ++k) {
            const std::size_t swap_at = k + static_cast<std::size_t>(rng.below(pool - k));
            std::swap(indices[k], indices[swap_at]);
        }
        std::copy(indices.begin(), indices.begin() + static_cast<std::ptrdiff_t>(m), picked.begin());
        std::sort(picked.begin(), picked.end());
    }

    std::vector<std::string> selected;
    selected.reserve(m);
    for (std::size_t idx : picked) selected.push_back(ranking.entries[idx].asset_id);
    return selected;
}

inline void write_ranking_csv(const std::filesystem::path& path, const ForecastRanking& ranking) {
    std::ofstream out(path);
    if (!out.is_open()) throw FileNotFound("cannot write " + path.string());
    out << "asset_id,forecast\n";
    for (const auto& entry : ranking.entries)
        out << entry.asset_id << ',' << fmt_double(entry.forecast) << '\n';
}

} // namespace sepo
