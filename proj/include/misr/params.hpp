#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "misr/rng.hpp"
#include "misr/tensor.hpp"

namespace misr {

enum class Init { zeros, ones, normal02, kaiming, xavier };

// Named, shaped, serializable collection of learnable tensors plus
// non-learnable buffers (running statistics). Iteration order is the sorted
// name order, which fixes checkpoint layout and optimizer sweep order.
template <typename T>
class ParamStore {
public:
    // Initialization draws from a sub-stream keyed by the parameter name, so
    // values do not depend on registration order.
    Tensor<T> create(const std::string& name, Shape shape, Init init, const Rng& init_stream) {
        require(!params_.count(name), "duplicate parameter name: " + name);
        Tensor<T> t(shape);
        Rng rng = init_stream.derive(name);
        switch (init) {
            case Init::zeros:
                break;
            case Init::ones:
                for (std::size_t i = 0; i < t.size(); ++i) t[i] = T(1);
                break;
            case Init::normal02:
                for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.normal(0.0, 0.02));
                break;
            case Init::kaiming: {
                // fan_in = everything but the leading (output) dim
                double fan_in = 1.0;
                for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= static_cast<double>(shape[i]);
                const double stddev = std::sqrt(2.0 / fan_in);
                for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.normal(0.0, stddev));
                break;
            }
            case Init::xavier: {
                const double fan_in = static_cast<double>(shape.size() >= 2 ? shape[0] : t.size());
                const double fan_out = static_cast<double>(shape.size() >= 2 ? shape[1] : t.size());
                const double stddev = std::sqrt(2.0 / (fan_in + fan_out));
                for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.normal(0.0, stddev));
                break;
            }
        }
        t.set_requires_grad(true);
        params_.emplace(name, t);
        return t;
    }

    void register_buffer(const std::string& name, std::shared_ptr<std::vector<T>> buf) {
        require(!buffers_.count(name), "duplicate buffer name: " + name);
        buffers_.emplace(name, std::move(buf));
    }

    const std::map<std::string, Tensor<T>>& params() const { return params_; }
    std::map<std::string, Tensor<T>>& params() { return params_; }
    const std::map<std::string, std::shared_ptr<std::vector<T>>>& buffers() const { return buffers_; }

    Tensor<T> at(const std::string& name) const {
        auto it = params_.find(name);
        require(it != params_.end(), "unknown parameter: " + name);
        return it->second;
    }

    std::size_t total_scalars() const {
        std::size_t n = 0;
        for (const auto& [name, t] : params_) n += t.size();
        return n;
    }

    void zero_grads() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

    double grad_norm() const {
        double s = 0.0;
        for (const auto& [name, t] : params_) {
            if (!t.has_grad()) continue;
            for (T g : t.grad()) s += static_cast<double>(g) * static_cast<double>(g);
        }
        return std::sqrt(s);
    }

private:
    std::map<std::string, Tensor<T>> params_;
    std::map<std::string, std::shared_ptr<std::vector<T>>> buffers_;
};

}  // namespace misr
