#include "adafm/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace adafm {

void adam_step(std::vector<Tensor>& params, AdamState& state) {
    for (const Tensor& p : params)
        if (!p.has_grad()) throw std::invalid_argument("adam_step: parameter without gradient");

    if (state.m.empty()) {
        state.m.reserve(params.size());
        state.v.reserve(params.size());
        for (const Tensor& p : params) {
            state.m.emplace_back(p.numel(), 0.0f);
            state.v.emplace_back(p.numel(), 0.0f);
        }
    }
    if (state.m.size() != params.size())
        throw std::invalid_argument("adam_step: parameter list does not match optimizer state");

    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const float bc1 = static_cast<float>(1.0 - std::pow(static_cast<double>(state.beta1), t));
    const float bc2 = static_cast<float>(1.0 - std::pow(static_cast<double>(state.beta2), t));

    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != p.numel())
            throw std::invalid_argument("adam_step: parameter size changed between steps");
        auto data = p.data();
        auto grad = std::as_const(p).grad();
        for (std::size_t j = 0; j < data.size(); ++j) {
            const float g = grad[j];
            m[j] = state.beta1 * m[j] + (1.0f - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0f - state.beta2) * g * g;
            const float m_hat = m[j] / bc1;
            const float v_hat = v[j] / bc2;
            data[j] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
        }
    }
}

void zero_grads(std::vector<Tensor>& params) {
    for (Tensor& p : params) p.zero_grad();
}

}  // namespace adafm
