#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace amsf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Shape or size violation on an operation input.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Invalid configuration value (level counts, ratios, head counts, ...).
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Dataset/episode constraint violation (too few patients, infeasible class, ...).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw DimensionError(msg);
}

}  // namespace amsf
