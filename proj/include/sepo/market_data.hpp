#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sepo/common.hpp"
#include "sepo/rng.hpp"

namespace sepo {

// ---------------------------------------------------------------------------
// Calendar helpers (proleptic Gregorian, days since 1970-01-01)
// ---------------------------------------------------------------------------

inline std::int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
    y = static_cast<int>(yy + (m <= 2));
}

/// Parses strict "YYYY-MM-DD"; returns days since epoch or nullopt-style flag.
inline bool parse_iso_date(std::string_view s, std::int64_t& days_out) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
    auto digits = [](std::string_view t) {
        for (char c : t)
            if (!std::isdigit(static_cast<unsigned char>(c))) return false;
        return true;
    };
    if (!digits(s.substr(0, 4)) || !digits(s.substr(5, 2)) || !digits(s.substr(8, 2)))
        return false;
    const int y = std::stoi(std::string(s.substr(0, 4)));
    const int m = std::stoi(std::string(s.substr(5, 2)));
    const int d = std::stoi(std::string(s.substr(8, 2)));
    if (m < 1 || m > 12 || d < 1 || d > 31) return false;
    days_out = days_from_civil(y, m, d);
    return true;
}

inline std::string format_iso_date(std::int64_t days) {
    int y, m, d;
    civil_from_days(days, y, m, d);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", y, m, d);
    return buf;
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Cleaned price history: strictly positive prices, strictly increasing
/// timestamps, no missing cells.
struct PriceSeries {
    std::vector<std::string> asset_ids;
    std::vector<std::string> timestamps; // ISO-8601, one per row
    Eigen::MatrixXd prices;              // rows: time, cols: assets

    Eigen::Index n_rows() const { return prices.rows(); }
    Eigen::Index n_assets() const { return prices.cols(); }
};

/// Simple returns, every value > -1.
struct ReturnsMatrix {
    std::vector<std::string> asset_ids;
    std::vector<std::string> timestamps;
    Eigen::MatrixXd values; // rows: time, cols: assets

    Eigen::Index n_rows() const { return values.rows(); }
    Eigen::Index n_assets() const { return values.cols(); }
};

struct CsvLayout {
    char delimiter = ',';
    bool has_header = true;
};

struct LoadedPrices {
    PriceSeries series;
    std::size_t rows_dropped = 0; // rows removed by the cleaning pass
};

// ---------------------------------------------------------------------------
// CSV input
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char delim) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, delim)) cells.push_back(cell);
    if (!line.empty() && line.back() == delim) cells.emplace_back();
    return cells;
}

inline std::string strip(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

// Parse state for one numeric cell: empty/unreadable-as-number are distinct.
enum class CellState { value, missing, malformed };

inline CellState parse_cell(const std::string& raw, double& out) {
    const std::string s = strip(raw);
    if (s.empty()) return CellState::missing;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto res = std::from_chars(first, last, out);
    if (res.ec != std::errc{} || res.ptr != last) return CellState::malformed;
    return CellState::value;
}

struct RawTable {
    std::vector<std::string> asset_ids;
    std::vector<std::string> dates;        // kept rows only
    std::vector<std::vector<double>> rows; // kept rows only
    std::size_t dropped = 0;
};

// Shared CSV walk for prices and returns; `keep` decides whether a parsed
// value is admissible (returning false drops the whole row).
template <typename KeepFn>
RawTable read_table(const std::filesystem::path& path, const CsvLayout& layout, KeepFn keep) {
    std::ifstream in(path);
    if (!in.is_open()) throw FileNotFound("cannot open " + path.string());

    std::string line;
    std::size_t row_idx = 0;
    RawTable table;

    if (layout.has_header) {
        if (!std::getline(in, line)) throw ParseError("empty file", 0, 0);
        auto cells = split_line(line, layout.delimiter);
        if (cells.size() < 2) throw ParseError("header needs a date column and at least one asset", 0, 0);
        for (std::size_t c = 1; c < cells.size(); ++c) {
            std::string id = strip(cells[c]);
            if (id.empty()) throw ParseError("empty asset id", 0, c);
            if (std::find(table.asset_ids.begin(), table.asset_ids.end(), id) != table.asset_ids.end())
                throw ParseError("duplicate asset id '" + id + "'", 0, c);
            table.asset_ids.push_back(std::move(id));
        }
        ++row_idx;
    }

    std::int64_t prev_days = std::numeric_limits<std::int64_t>::min();
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (strip(line).empty()) { ++row_idx; continue; }
        auto cells = split_line(line, layout.delimiter);
        if (!layout.has_header && table.asset_ids.empty()) {
            if (cells.size() < 2) throw ParseError("need a date column and at least one asset", row_idx, 0);
            for (std::size_t c = 1; c < cells.size(); ++c)
                table.asset_ids.push_back("A" + std::to_string(c - 1));
        }
        const std::size_t want = table.asset_ids.size() + 1;
        if (cells.size() != want)
            throw ParseError("expected " + std::to_string(want) + " cells, got " + std::to_string(cells.size()),
                             row_idx, std::min(cells.size(), want));

        std::int64_t days;
        const std::string date = strip(cells[0]);
        if (!parse_iso_date(date, days)) throw ParseError("bad date '" + date + "'", row_idx, 0);

        std::vector<double> vals(table.asset_ids.size());
        bool drop = false;
        for (std::size_t c = 1; c < cells.size(); ++c) {
            double v;
            switch (parse_cell(cells[c], v)) {
                case CellState::malformed:
                    throw ParseError("unparseable number '" + strip(cells[c]) + "'", row_idx, c);
                case CellState::missing:
                    drop = true;
                    break;
                case CellState::value:
                    if (!std::isfinite(v) || !keep(v, row_idx, c)) drop = true;
                    vals[c - 1] = v;
                    break;
            }
            if (drop) break;
        }
        if (drop) {
            ++table.dropped;
        } else {
            if (days <= prev_days) throw ParseError("timestamps not strictly increasing at '" + date + "'", row_idx, 0);
            prev_days = days;
            table.dates.push_back(date);
            table.rows.push_back(std::move(vals));
        }
        ++row_idx;
    }
    return table;
}

inline Eigen::MatrixXd to_matrix(const RawTable& t) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(t.rows.size()),
                      static_cast<Eigen::Index>(t.asset_ids.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            m(i, j) = t.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    return m;
}

} // namespace detail

/// Loads a price CSV (ISO dates in the first column, one asset per remaining
/// column). Rows with a missing, non-finite, or non-positive price are
/// dropped; the count of removed rows is reported alongside the series.
inline LoadedPrices load_prices(const std::filesystem::path& path, const CsvLayout& layout = {}) {
    auto table = detail::read_table(path, layout, [](double v, std::size_t, std::size_t) { return v > 0.0; });
    if (table.rows.empty()) throw EmptyAfterCleaning("no usable rows in " + path.string());
    LoadedPrices out;
    out.series.prices = detail::to_matrix(table);
    out.series.asset_ids = std::move(table.asset_ids);
    out.series.timestamps = std::move(table.dates);
    out.rows_dropped = table.dropped;
    return out;
}

/// Loads an already-computed returns CSV (same layout). Values must be finite
/// and > -1; rows with missing cells are dropped.
inline ReturnsMatrix load_returns(const std::filesystem::path& path, const CsvLayout& layout = {}) {
    auto table = detail::read_table(path, layout, [&](double v, std::size_t row, std::size_t col) {
        if (v <= -1.0) throw ParseError("return <= -1", row, col);
        return true;
    });
    if (table.rows.empty()) throw EmptyAfterCleaning("no usable rows in " + path.string());
    ReturnsMatrix out;
    out.values = detail::to_matrix(table);
    out.asset_ids = std::move(table.asset_ids);
    out.timestamps = std::move(table.dates);
    return out;
}

// ---------------------------------------------------------------------------
// Transformations
// ---------------------------------------------------------------------------

/// Simple returns: values[t][j] = p[t+1][j] / p[t][j] - 1. Row count shrinks
/// by one; timestamps are those of the later observation.
inline ReturnsMatrix compute_returns(const PriceSeries& p) {
    if (p.n_rows() < 2) throw TooFewRows("need at least 2 price rows");
    ReturnsMatrix r;
    r.asset_ids = p.asset_ids;
    r.timestamps.assign(p.timestamps.begin() + 1, p.timestamps.end());
    r.values = p.prices.bottomRows(p.n_rows() - 1).array() / p.prices.topRows(p.n_rows() - 1).array() - 1.0;
    return r;
}

/// Contiguous non-overlapping train/test slices; test immediately follows train.
inline std::pair<ReturnsMatrix, ReturnsMatrix> split_window(const ReturnsMatrix& r,
                                                            Eigen::Index train_len,
                                                            Eigen::Index test_len,
                                                            Eigen::Index offset) {
    if (train_len < 0 || test_len < 0 || offset < 0 || offset + train_len + test_len > r.n_rows())
        throw OutOfRange("window [" + std::to_string(offset) + ", +" + std::to_string(train_len) + "+" +
                         std::to_string(test_len) + ") exceeds " + std::to_string(r.n_rows()) + " rows");
    auto slice = [&](Eigen::Index start, Eigen::Index len) {
        ReturnsMatrix s;
        s.asset_ids = r.asset_ids;
        s.timestamps.assign(r.timestamps.begin() + start, r.timestamps.begin() + start + len);
        s.values = r.values.middleRows(start, len);
        return s;
    };
    return {slice(offset, train_len), slice(offset + train_len, test_len)};
}

/// Column subset in the given order (used after asset selection).
inline ReturnsMatrix select_columns(const ReturnsMatrix& r, const std::vector<Eigen::Index>& cols) {
    ReturnsMatrix s;
    s.timestamps = r.timestamps;
    s.values.resize(r.n_rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) {
        if (cols[k] < 0 || cols[k] >= r.n_assets()) throw OutOfRange("column index out of range");
        s.asset_ids.push_back(r.asset_ids[static_cast<std::size_t>(cols[k])]);
        s.values.col(static_cast<Eigen::Index>(k)) = r.values.col(cols[k]);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Synthetic universe
// ---------------------------------------------------------------------------

/// Gaussian returns from a one-factor model: r_tj = mu_j + vol_j * (sqrt(c) * F_t
/// + sqrt(1-c) * Z_tj), so the expected pairwise correlation equals `corr`.
/// Pure function of its arguments.
inline ReturnsMatrix synth_universe(int n_assets, int n_days,
                                    std::pair<double, double> vol_range, double corr,
                                    std::pair<double, double> drift_range, std::uint64_t seed) {
    if (n_assets < 2) throw InvalidParameter("need at least 2 assets");
    if (n_days < 1) throw InvalidParameter("need at least 1 day");
    if (!(vol_range.first > 0.0) || vol_range.second < vol_range.first)
        throw InvalidParameter("volatility range must be positive and ordered");
    if (drift_range.second < drift_range.first) throw InvalidParameter("drift range must be ordered");
    if (!(corr >= 0.0) || corr >= 1.0) throw InvalidParameter("corr must lie in [0, 1)");

    Rng rng(seed);
    std::vector<double> vol(static_cast<std::size_t>(n_assets));
    std::vector<double> drift(static_cast<std::size_t>(n_assets));
    for (int j = 0; j < n_assets; ++j) {
        vol[static_cast<std::size_t>(j)] = rng.uniform(vol_range.first, vol_range.second);
        drift[static_cast<std::size_t>(j)] = rng.uniform(drift_range.first, drift_range.second);
    }

    const double factor_load = std::sqrt(corr);
    const double idio_load = std::sqrt(1.0 - corr);

    ReturnsMatrix r;
    r.values.resize(n_days, n_assets);
    for (int t = 0; t < n_days; ++t) {
        const double f = rng.normal();
        for (int j = 0; j < n_assets; ++j) {
            const double z = rng.normal();
            r.values(t, j) = drift[static_cast<std::size_t>(j)] +
                             vol[static_cast<std::size_t>(j)] * (factor_load * f + idio_load * z);
        }
    }

    int width = 1;
    for (int v = n_assets - 1; v >= 10; v /= 10) ++width;
    for (int j = 0; j < n_assets; ++j) {
        std::string num = std::to_string(j);
        r.asset_ids.push_back("A" + std::string(static_cast<std::size_t>(width) - num.size(), '0') + num);
    }
    const std::int64_t day0 = days_from_civil(2015, 1, 1);
    for (int t = 0; t < n_days; ++t) r.timestamps.push_back(format_iso_date(day0 + t));
    return r;
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

inline void write_returns_csv(const std::filesystem::path& path, const ReturnsMatrix& r,
                              const std::string& date_header = "date") {
    std::ofstream out(path);
    if (!out.is_open()) throw FileNotFound("cannot write " + path.string());
    out << date_header;
    for (const auto& id : r.asset_ids) out << ',' << id;
    out << '\n';
    for (Eigen::Index i = 0; i < r.n_rows(); ++i) {
        out << r.timestamps[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < r.n_assets(); ++j) out << ',' << fmt_double(r.values(i, j));
        out << '\n';
    }
}

inline void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& m,
                             const std::vector<std::string>& col_names) {
    if (col_names.size() != static_cast<std::size_t>(m.cols()))
        throw ShapeMismatch("column name count does not match matrix");
    std::ofstream out(path);
    if (!out.is_open()) throw FileNotFound("cannot write " + path.string());
    for (std::size_t c = 0; c < col_names.size(); ++c) out << (c ? "," : "") << col_names[c];
    out << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << fmt_double(m(i, j));
        out << '\n';
    }
}

} // namespace sepo
