#pragma once

#include <charconv>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace sepo {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// market_data
class FileNotFound : public Error { public: using Error::Error; };
class EmptyAfterCleaning : public Error { public: using Error::Error; };
class TooFewRows : public Error { public: using Error::Error; };
class OutOfRange : public Error { public: using Error::Error; };
class InvalidParameter : public Error { public: using Error::Error; };

/// CSV parse failure; carries the zero-based row/column of the offending cell
/// (row 0 is the header).
class ParseError : public Error {
public:
    ParseError(const std::string& msg, std::size_t row, std::size_t col)
        : Error(msg + " (row " + std::to_string(row) + ", col " + std::to_string(col) + ")"),
          row_(row), col_(col) {}
    std::size_t row() const { return row_; }
    std::size_t col() const { return col_; }

private:
    std::size_t row_;
    std::size_t col_;
};

// predictor
class NonFiniteInput : public Error { public: using Error::Error; };
class NonFiniteGradient : public Error { public: using Error::Error; };

// structured ensemble
class DivergedTraining : public Error { public: using Error::Error; };
class DegenerateColumn : public Error { public: using Error::Error; };
class SingularSystem : public Error { public: using Error::Error; };
class ShapeMismatch : public Error { public: using Error::Error; };

// selection
class InsufficientCandidates : public Error { public: using Error::Error; };

// baselines
class NonPositiveMse : public Error { public: using Error::Error; };
class ZeroVolColumn : public Error { public: using Error::Error; };
class SolverFailed : public Error { public: using Error::Error; };
class DegenerateCorrelation : public Error { public: using Error::Error; };

// metrics
class ZeroVolatility : public Error { public: using Error::Error; };

/// Shortest round-trip decimal representation; used for all CSV/report output
/// so files are byte-stable across runs and worker counts.
inline std::string fmt_double(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace sepo
