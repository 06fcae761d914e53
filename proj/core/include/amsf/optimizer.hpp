#pragma once

#include <vector>

#include "amsf/params.hpp"

namespace amsf {

/// Adam with decoupled weight decay. Moment state is keyed by store order.
class AdamW {
public:
    explicit AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore& store, double lr, double weight_decay) {
        if (m_.empty()) {
            for (const auto& p : store) {
                m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
                v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        size_t i = 0;
        for (auto& p : store) {
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
            const Matrix mhat = m_[i] / bc1;
            const Matrix vhat = v_[i] / bc2;
            p.value -= lr * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
            if (weight_decay > 0.0) p.value -= lr * weight_decay * p.value;
            ++i;
        }
    }

    long steps_taken() const { return t_; }

private:
    double beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Matrix> m_, v_;
};

}  // namespace amsf
