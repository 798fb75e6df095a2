#include "adafm/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace adafm {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string Shape::str() const {
    std::ostringstream os;
    os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
    return os.str();
}

std::vector<float>& detail::TensorImpl::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
    return grad;
}

Tensor::Tensor() : Tensor(Shape{0, 0, 0, 0}) {}

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<detail::TensorImpl>()) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
        throw DimensionError("negative tensor dimension " + shape.str());
    impl_->shape = shape;
    impl_->data.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : impl_(std::make_shared<detail::TensorImpl>()) {
    if (values.size() != shape.numel())
        throw DimensionError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape.str());
    impl_->shape = shape;
    impl_->data = std::move(values);
}

float& Tensor::at(int n, int c, int h, int w) {
    const Shape& s = impl_->shape;
    return impl_->data[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w];
}

float Tensor::at(int n, int c, int h, int w) const {
    const Shape& s = impl_->shape;
    return impl_->data[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w];
}

float Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape().str());
    return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
}

std::span<float> Tensor::grad() { return impl_->ensure_grad(); }

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

Tensor Tensor::clone() const { return Tensor(impl_->shape, impl_->data); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void check_finite(std::span<const float> values, const char* op) {
    for (float v : values) {
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
    }
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw DimensionError("backward() needs a scalar loss, got shape " + loss.shape().str());
    const float one = 1.0f;
    backward(loss, std::span<const float>(&one, 1));
}

void backward(const Tensor& loss, std::span<const float> grad_seed) {
    if (grad_seed.size() != loss.numel())
        throw DimensionError("backward(): seed gradient size does not match " + loss.shape().str());

    // Post-order DFS gives a topological order; walk it in reverse.
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> visited;
    std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
    stack.emplace_back(loss.impl().get(), 0);
    visited.insert(loss.impl().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (node->grad_fn && next < node->grad_fn->inputs.size()) {
            detail::TensorImpl* child = node->grad_fn->inputs[next++].get();
            if (child->grad_fn && visited.insert(child).second) stack.emplace_back(child, 0);
            continue;
        }
        order.push_back(node);
        stack.pop_back();
    }

    auto& seed = loss.impl()->ensure_grad();
    for (std::size_t i = 0; i < seed.size(); ++i) seed[i] += grad_seed[i];
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorImpl* node = *it;
        if (!node->grad_fn || node->grad.empty()) continue;
        node->grad_fn->backward(node->grad);
        if (!node->requires_grad && node != loss.impl().get()) {
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

}  // namespace adafm
