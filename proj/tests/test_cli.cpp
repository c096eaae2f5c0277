#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "sepo/backtest.hpp"
#include "sepo/market_data.hpp"

namespace {

namespace fs = std::filesystem;

std::string cli_path() {
    const char* env = std::getenv("SEPO_CLI");
    return env ? env : "";
}

int run_cli(const std::string& args) {
    const std::string cmd = cli_path() + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t count_lines(const std::string& text) {
    std::size_t n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        if (cli_path().empty()) GTEST_SKIP() << "SEPO_CLI not set";
        work_ = fs::temp_directory_path() / "sepo_cli_test";
        fs::remove_all(work_);
        fs::create_directories(work_);
    }

    fs::path prices_csv() {
        const fs::path path = work_ / "prices.csv";
        std::ofstream out(path);
        out << "date,AAA,BBB\n";
        double a = 100.0, b = 50.0;
        const std::int64_t day0 = sepo::days_from_civil(2019, 1, 1);
        for (int t = 0; t < 40; ++t) {
            a *= 1.0 + 0.001 * ((t % 5) - 2);
            b *= 1.0 + 0.002 * ((t % 3) - 1);
            out << sepo::format_iso_date(day0 + t) << ',' << a << ',' << b << '\n';
        }
        return path;
    }

    fs::path universe_csv(int assets = 6, int days = 150) {
        const fs::path path = work_ / "universe.csv";
        const auto r = sepo::synth_universe(assets, days, {0.005, 0.02}, 0.4, {0.0002, 0.001}, 7);
        sepo::write_returns_csv(path, r);
        return path;
    }

    fs::path backtest_config(double epsilon = 0.1, int n_sims = 3) {
        const fs::path path = work_ / "cfg.json";
        nlohmann::json j{{"epsilon", epsilon}, {"M", 2},        {"lambda_s", 3.0},
                         {"threshold_T", -1.0}, {"train_len", 60}, {"n_simulations", n_sims},
                         {"seed", 11}};
        std::ofstream out(path);
        out << j.dump(2);
        return path;
    }

    fs::path work_;
};

TEST_F(CliTest, IngestValidFileSucceeds) {
    const auto prices = prices_csv();
    EXPECT_EQ(run_cli("ingest --input " + prices.string() + " --out " + (work_ / "out").string()), 0);
    EXPECT_TRUE(fs::exists(work_ / "out" / "returns.csv"));
}

TEST_F(CliTest, IngestMissingFileExitsTwo) {
    EXPECT_EQ(run_cli("ingest --input /nonexistent.csv --out " + work_.string()), 2);
}

TEST_F(CliTest, IngestDryRunWritesNothing) {
    const auto prices = prices_csv();
    const fs::path out = work_ / "dry";
    EXPECT_EQ(run_cli("ingest --dry-run --input " + prices.string() + " --out " + out.string()), 0);
    EXPECT_FALSE(fs::exists(out / "returns.csv"));
}

TEST_F(CliTest, BacktestWritesOneRowPerSimulation) {
    const auto universe = universe_csv();
    const auto cfg = backtest_config(0.1, 3);
    const fs::path out = work_ / "bt";
    ASSERT_EQ(run_cli("backtest --allow-extended --config " + cfg.string() + " --input " +
                      universe.string() + " --out " + out.string()),
              0);
    const auto results = slurp(out / "results.csv");
    EXPECT_EQ(count_lines(results), 4u); // header + 3 sims
    EXPECT_TRUE(fs::exists(out / "summary.json"));
    EXPECT_TRUE(fs::exists(out / "weights_history.csv"));
    EXPECT_TRUE(fs::exists(out / "plot_data.csv"));
}

TEST_F(CliTest, BacktestIdempotentAcrossRuns) {
    const auto universe = universe_csv();
    const auto cfg = backtest_config();
    const fs::path out1 = work_ / "bt1";
    const fs::path out2 = work_ / "bt2";
    ASSERT_EQ(run_cli("backtest --allow-extended --config " + cfg.string() + " --input " +
                      universe.string() + " --out " + out1.string()),
              0);
    ASSERT_EQ(run_cli("backtest --allow-extended --config " + cfg.string() + " --input " +
                      universe.string() + " --out " + out2.string()),
              0);
    EXPECT_EQ(slurp(out1 / "results.csv"), slurp(out2 / "results.csv"));
    EXPECT_EQ(slurp(out1 / "summary.json"), slurp(out2 / "summary.json"));
}

TEST_F(CliTest, BacktestRejectsInvalidEpsilon) {
    const auto universe = universe_csv();
    const auto cfg = backtest_config(1.5);
    EXPECT_EQ(run_cli("backtest --allow-extended --config " + cfg.string() + " --input " +
                      universe.string() + " --out " + (work_ / "bad").string()),
              2);
}

TEST_F(CliTest, BacktestDoesNotMutateInputs) {
    const auto universe = universe_csv();
    const auto cfg = backtest_config();
    const std::string before = slurp(universe);
    run_cli("backtest --allow-extended --config " + cfg.string() + " --input " + universe.string() +
            " --out " + (work_ / "mut").string());
    EXPECT_EQ(slurp(universe), before);
}

TEST_F(CliTest, GridSingleCellProducesSingleSummaryRow) {
    const auto universe = universe_csv();
    const fs::path cfg = work_ / "grid.json";
    {
        nlohmann::json j{{"base",
                          {{"M", 2}, {"threshold_T", -1.0}, {"train_len", 60}, {"n_simulations", 2},
                           {"lambda_s", 3.0}, {"seed", 5}}},
                         {"grid", {{"epsilon", {0.1}}}}};
        std::ofstream out(cfg);
        out << j.dump(2);
    }
    const fs::path out = work_ / "grid_out";
    ASSERT_EQ(run_cli("grid --allow-extended --config " + cfg.string() + " --input " +
                      universe.string() + " --out " + out.string()),
              0);
    const auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
    EXPECT_EQ(summary.size(), 1u);
}

TEST_F(CliTest, GridEmitDefaultReproducesDomainLists) {
    const fs::path path = work_ / "default_grid.json";
    ASSERT_EQ(run_cli("grid --emit-default " + path.string()), 0);
    const auto j = nlohmann::json::parse(slurp(path));
    EXPECT_EQ(j.at("grid").at("M").get<std::vector<int>>(), sepo::GridDomains::portfolio_sizes());
    EXPECT_EQ(j.at("grid").at("kappa").get<std::vector<int>>(), sepo::GridDomains::kappas());
    EXPECT_EQ(j.at("grid").at("eta").get<std::vector<double>>(), sepo::GridDomains::etas());
    EXPECT_EQ(j.at("grid").at("chi").get<std::vector<double>>(), sepo::GridDomains::chis());
    EXPECT_EQ(j.at("grid").at("epsilon").get<std::vector<double>>(), sepo::GridDomains::epsilons());
    EXPECT_EQ(j.at("grid").at("lambda_p").get<std::vector<double>>(), sepo::GridDomains::lambda_ps());
    EXPECT_EQ(j.at("grid").at("lambda_s").get<std::vector<double>>(), sepo::GridDomains::lambda_ss());
    EXPECT_EQ(j.at("grid").at("gamma").get<std::vector<double>>(), sepo::GridDomains::gammas());
}

TEST_F(CliTest, GridParallelMatchesSerial) {
    const auto universe = universe_csv();
    const fs::path cfg = work_ / "grid2.json";
    {
        nlohmann::json j{{"base",
                          {{"M", 2}, {"threshold_T", -1.0}, {"train_len", 60}, {"n_simulations", 1},
                           {"lambda_s", 3.0}, {"seed", 5}}},
                         {"grid", {{"epsilon", {0.0, 0.1}}, {"lambda_s", {0.0, 3.0}}}}};
        std::ofstream out(cfg);
        out << j.dump(2);
    }
    const fs::path out1 = work_ / "grid_p1";
    const fs::path out4 = work_ / "grid_p4";
    ASSERT_EQ(run_cli("grid --allow-extended --parallel 1 --config " + cfg.string() + " --input " +
                      universe.string() + " --out " + out1.string()),
              0);
    ASSERT_EQ(run_cli("grid --allow-extended --parallel 4 --config " + cfg.string() + " --input " +
                      universe.string() + " --out " + out4.string()),
              0);
    EXPECT_EQ(slurp(out1 / "summary.json"), slurp(out4 / "summary.json"));
    EXPECT_EQ(slurp(out1 / "results.csv"), slurp(out4 / "results.csv"));
}

TEST_F(CliTest, GridMalformedConfigExitsTwo) {
    const auto universe = universe_csv();
    const fs::path cfg = work_ / "broken.json";
    {
        std::ofstream out(cfg);
        out << "{ not json";
    }
    EXPECT_EQ(run_cli("grid --config " + cfg.string() + " --input " + universe.string()), 2);
}

TEST_F(CliTest, SynthDeterministicGivenSeed) {
    const fs::path out1 = work_ / "s1";
    const fs::path out2 = work_ / "s2";
    ASSERT_EQ(run_cli("synth --assets 4 --days 50 --corr 0.3 --seed 9 --out " + out1.string()), 0);
    ASSERT_EQ(run_cli("synth --assets 4 --days 50 --corr 0.3 --seed 9 --out " + out2.string()), 0);
    EXPECT_EQ(slurp(out1 / "universe.csv"), slurp(out2 / "universe.csv"));
}

TEST_F(CliTest, CompareEmitsMethodColumns) {
    const auto universe = universe_csv(6, 130);
    const fs::path cfg = work_ / "cmp.json";
    {
        nlohmann::json j{{"base",
                          {{"M", 2}, {"threshold_T", -1.0}, {"train_len", 60}, {"horizon_months", 2},
                           {"lambda_s", 3.0}, {"seed", 3}}},
                         {"epsilons", {0.1}},
                         {"Ms", {2}},
                         {"gammas", {1.0}},
                         {"thresholds", {-1.0}}};
        std::ofstream out(cfg);
        out << j.dump(2);
    }
    const fs::path out = work_ / "cmp_out";
    ASSERT_EQ(run_cli("compare --allow-extended --config " + cfg.string() + " --input " +
                      universe.string() + " --out " + out.string()),
              0);
    const auto text = slurp(out / "compare.csv");
    for (const std::string col : {"srbfn", "inverse_vol", "cvar_rp", "max_div", "hrp", "herc", "1_N"})
        EXPECT_NE(text.find(col), std::string::npos) << col;
}

TEST_F(CliTest, BvdCheckPasses) {
    EXPECT_EQ(run_cli("bvd-check --cases 200"), 0);
}

TEST_F(CliTest, UnknownSubcommandExitsTwo) {
    EXPECT_EQ(run_cli("frobnicate"), 2);
}

} // namespace
