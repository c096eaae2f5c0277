#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>

#include "sepo/rng.hpp"
#include "sepo/selection.hpp"

namespace {

using sepo::ForecastRanking;
using sepo::SelectionConfig;

ForecastRanking make_ranking(std::initializer_list<std::pair<std::string, double>> entries) {
    return sepo::rank_assets(std::vector<std::pair<std::string, double>>(entries));
}

TEST(RankAssets, SortsDescending) {
    const auto r = make_ranking({{"a", 0.02}, {"b", 0.05}});
    EXPECT_EQ(r.entries[0].asset_id, "b");
    EXPECT_EQ(r.entries[1].asset_id, "a");
}

TEST(RankAssets, TieBreaksByAssetId) {
    const auto r = make_ranking({{"b", 0.02}, {"a", 0.02}});
    EXPECT_EQ(r.entries[0].asset_id, "a");
    EXPECT_EQ(r.entries[1].asset_id, "b");
}

TEST(RankAssets, SingletonRanking) {
    const auto r = make_ranking({{"only", 0.01}});
    ASSERT_EQ(r.entries.size(), 1u);
    EXPECT_EQ(r.entries[0].asset_id, "only");
}

TEST(RankAssets, RejectsEmptyAndNonFinite) {
    EXPECT_THROW(sepo::rank_assets({}), sepo::InvalidParameter);
    EXPECT_THROW(make_ranking({{"a", std::nan("")}}), sepo::NonFiniteInput);
}

TEST(SelectAssets, GammaOneTakesTopM) {
    const auto r = make_ranking({{"a", 0.4}, {"b", 0.3}, {"c", 0.2}, {"d", 0.1}});
    SelectionConfig cfg{0.0, 2, 1.0, 99};
    const auto picked = sepo::select_assets(r, cfg);
    EXPECT_EQ(picked, (std::vector<std::string>{"a", "b"}));
}

TEST(SelectAssets, PoolShrinksToCandidatesAboveThreshold) {
    const auto r = make_ranking({{"a", 0.4}, {"b", 0.3}, {"c", 0.2}, {"d", -0.1}});
    SelectionConfig cfg{0.0, 2, 2.0, 7};
    sepo::SelectionStats stats;
    const auto picked = sepo::select_assets(r, cfg, &stats);
    EXPECT_EQ(stats.candidates_above_threshold, 3u);
    EXPECT_EQ(stats.pool_size, 3u);
    EXPECT_TRUE(stats.pool_shrunk);
    EXPECT_EQ(picked.size(), 2u);
    for (const auto& id : picked) EXPECT_NE(id, "d");
}

TEST(SelectAssets, SeededSamplingReproducible) {
    const auto r = make_ranking({{"a", 0.4}, {"b", 0.3}, {"c", 0.2}, {"d", 0.1}});
    SelectionConfig cfg{0.0, 2, 2.0, 1234};
    const auto first = sepo::select_assets(r, cfg);
    const auto second = sepo::select_assets(r, cfg);
    EXPECT_EQ(first, second);

    // Draw-sequence oracle: replay the partial Fisher-Yates shuffle.
    sepo::Rng rng(1234);
    std::vector<std::size_t> indices{0, 1, 2, 3};
    for (std::size_t k = 0; k < 2; ++k) {
        const std::size_t swap_at = k + static_cast<std::size_t>(rng.below(4 - k));
        std::swap(indices[k], indices[swap_at]);
    }
    std::vector<std::size_t> expected(indices.begin(), indices.begin() + 2);
    std::sort(expected.begin(), expected.end());
    std::vector<std::string> oracle;
    for (std::size_t idx : expected) oracle.push_back(r.entries[idx].asset_id);
    EXPECT_EQ(first, oracle);
}

TEST(SelectAssets, InsufficientCandidatesThrows) {
    const auto r = make_ranking({{"a", 0.4}, {"b", -0.3}, {"c", -0.2}});
    SelectionConfig cfg{0.0, 2, 1.0, 1};
    EXPECT_THROW(sepo::select_assets(r, cfg), sepo::InsufficientCandidates);
}

TEST(SelectAssets, ThresholdComparisonIsStrict) {
    const auto r = make_ranking({{"a", 0.4}, {"b", 0.0}});
    SelectionConfig cfg{0.0, 2, 1.0, 1};
    EXPECT_THROW(sepo::select_assets(r, cfg), sepo::InsufficientCandidates);
}

TEST(SelectAssets, SelectedAlwaysExceedThreshold) {
    sepo::Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::pair<std::string, double>> forecasts;
        for (int a = 0; a < 12; ++a)
            forecasts.emplace_back("A" + std::to_string(a), 0.05 * rng.normal());
        const auto ranking = sepo::rank_assets(forecasts);
        SelectionConfig cfg{-0.02, 3, 2.0, static_cast<std::uint64_t>(trial)};
        std::map<std::string, double> forecast_of(forecasts.begin(), forecasts.end());
        try {
            for (const auto& id : sepo::select_assets(ranking, cfg))
                EXPECT_GT(forecast_of.at(id), cfg.threshold_T);
        } catch (const sepo::InsufficientCandidates&) {
            // acceptable draw
        }
    }
}

TEST(SelectAssets, GammaOnePrefixProperty) {
    sepo::Rng rng(6);
    std::vector<std::pair<std::string, double>> forecasts;
    for (int a = 0; a < 10; ++a) forecasts.emplace_back("A" + std::to_string(a), rng.normal());
    const auto ranking = sepo::rank_assets(forecasts);
    SelectionConfig cfg{-10.0, 4, 1.0, 3};
    const auto picked = sepo::select_assets(ranking, cfg);
    for (std::size_t k = 0; k < picked.size(); ++k) EXPECT_EQ(picked[k], ranking.entries[k].asset_id);
}

TEST(RankingCsv, ExportsIdAndForecast) {
    const auto r = make_ranking({{"a", 0.25}, {"b", 0.5}});
    const auto path = std::filesystem::temp_directory_path() / "ranking_tmp.csv";
    sepo::write_ranking_csv(path, r);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "asset_id,forecast");
    std::getline(in, line);
    EXPECT_EQ(line, "b,0.5");
    std::getline(in, line);
    EXPECT_EQ(line, "a,0.25");
}

TEST(SelectAssets, UniformSamplingFrequencies) {
    const auto r = make_ranking({{"a", 0.4}, {"b", 0.3}, {"c", 0.2}, {"d", 0.1}});
    std::map<std::string, int> hits{{"a", 0}, {"b", 0}, {"c", 0}, {"d", 0}};
    const int trials = 10000;
    for (int s = 0; s < trials; ++s) {
        SelectionConfig cfg{0.0, 2, 2.0, static_cast<std::uint64_t>(s)};
        for (const auto& id : sepo::select_assets(r, cfg)) hits[id] += 1;
    }
    for (const auto& [id, count] : hits)
        EXPECT_NEAR(static_cast<double>(count) / trials, 0.5, 0.02) << id;
}

} // namespace
