#pragma once

#include <cstdint>
#include <vector>

#include "adafm/tensor.hpp"

namespace adafm {

struct AdamState {
    float learning_rate = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float epsilon = 1e-8f;
    std::int64_t step_count = 0;
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
};

/// One bias-corrected Adam update over `params`. Gradients are read, not
/// cleared. Throws std::invalid_argument if a parameter has no gradient
/// buffer or if the parameter list changed shape since the first step.
void adam_step(std::vector<Tensor>& params, AdamState& state);

void zero_grads(std::vector<Tensor>& params);

}  // namespace adafm
