#pragma once

#include <deque>
#include <string>
#include <string_view>

#include "amsf/autodiff.hpp"
#include "amsf/common.hpp"
#include "amsf/rng.hpp"

namespace amsf {

using ad::Parameter;

/// Owns model parameters. Deque keeps addresses stable across add().
class ParamStore {
public:
    Parameter& add(std::string name, Matrix init) {
        for (const auto& p : params_) {
            if (p.name == name) throw ConfigError("duplicate parameter name: " + name);
        }
        params_.push_back(Parameter{std::move(name), std::move(init), {}});
        params_.back().zero_grad();
        return params_.back();
    }

    Parameter* find(std::string_view name) {
        for (auto& p : params_) {
            if (p.name == name) return &p;
        }
        return nullptr;
    }

    void zero_grads() {
        for (auto& p : params_) p.zero_grad();
    }

    size_t count() const { return params_.size(); }
    size_t scalar_count() const {
        size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::deque<Parameter> params_;
};

/// U(-a, a) with a = 1/sqrt(fan_in); fan_in is the input width of x*W.
inline Matrix uniform_fan_in(long rows, long cols, Rng& rng) {
    const double a = 1.0 / std::sqrt(static_cast<double>(rows));
    Matrix m(rows, cols);
    for (long i = 0; i < rows; ++i)
        for (long j = 0; j < cols; ++j) m(i, j) = rng.uniform(-a, a);
    return m;
}

inline Matrix normal_init(long rows, long cols, double stddev, Rng& rng) {
    Matrix m(rows, cols);
    for (long i = 0; i < rows; ++i)
        for (long j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, stddev);
    return m;
}

}  // namespace amsf
