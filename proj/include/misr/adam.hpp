#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "misr/params.hpp"

namespace misr {

// Adam with bias correction, no weight decay. Moment buffers are keyed by
// parameter name and serialized into checkpoints.
template <typename T>
class Adam {
public:
    Adam(double lr = 5e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore<T>& store) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (auto& [name, p] : store.params()) {
            auto& m = m_[name];
            auto& v = v_[name];
            if (m.size() != p.size()) m.assign(p.size(), T(0));
            if (v.size() != p.size()) v.assign(p.size(), T(0));
            const bool has_grad = p.has_grad();
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double g = has_grad ? static_cast<double>(p.grad()[i]) : 0.0;
                const double mi = beta1_ * m[i] + (1.0 - beta1_) * g;
                const double vi = beta2_ * v[i] + (1.0 - beta2_) * g * g;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                p[i] = static_cast<T>(p[i] - lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + eps_));
            }
        }
    }

    long step_count() const { return t_; }
    void set_step_count(long t) { t_ = t; }
    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

    std::map<std::string, std::vector<T>>& first_moments() { return m_; }
    std::map<std::string, std::vector<T>>& second_moments() { return v_; }
    const std::map<std::string, std::vector<T>>& first_moments() const { return m_; }
    const std::map<std::string, std::vector<T>>& second_moments() const { return v_; }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::map<std::string, std::vector<T>> m_, v_;
};

}  // namespace misr
