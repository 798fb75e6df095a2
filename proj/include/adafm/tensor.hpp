#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace adafm {

/// Raised when tensor shapes are incompatible with an operation.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a NaN or Inf shows up in an op output.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    [[nodiscard]] std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    [[nodiscard]] std::string str() const;
    friend bool operator==(const Shape&, const Shape&) = default;
};

class Tensor;

namespace detail {

struct TensorImpl;

// One recorded op in the autodiff graph. `backward` receives the gradient of
// the op output and accumulates into the inputs it captured.
struct GradNode {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::function<void(std::span<const float> grad_out)> backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::shared_ptr<GradNode> grad_fn;

    [[nodiscard]] bool needs_grad() const { return requires_grad || grad_fn != nullptr; }
    std::vector<float>& ensure_grad();
};

}  // namespace detail

/// Dense (n, c, h, w) float tensor with optional gradient tracking.
///
/// Tensors are cheap handles: copying a Tensor shares the underlying buffer.
/// Use clone() for a deep copy.
class Tensor {
public:
    Tensor();
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> values);

    static Tensor scalar(float v) { return Tensor(Shape{1, 1, 1, 1}, v); }

    [[nodiscard]] const Shape& shape() const { return impl_->shape; }
    [[nodiscard]] std::size_t numel() const { return impl_->data.size(); }

    [[nodiscard]] std::span<float> data() { return impl_->data; }
    [[nodiscard]] std::span<const float> data() const { return impl_->data; }
    float& operator[](std::size_t i) { return impl_->data[i]; }
    float operator[](std::size_t i) const { return impl_->data[i]; }
    float& at(int n, int c, int h, int w);
    [[nodiscard]] float at(int n, int c, int h, int w) const;
    [[nodiscard]] float item() const;

    [[nodiscard]] bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool on);

    [[nodiscard]] bool has_grad() const { return !impl_->grad.empty(); }
    /// Gradient buffer; allocated (zero) on first access.
    std::span<float> grad();
    [[nodiscard]] std::span<const float> grad() const { return impl_->grad; }
    void zero_grad();

    /// Deep copy of the values; the copy is a fresh leaf.
    [[nodiscard]] Tensor clone() const;
    /// Shares nothing with the graph: same values, no grad_fn, no requires_grad.
    [[nodiscard]] Tensor detach() const { return clone(); }

    [[nodiscard]] bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

    [[nodiscard]] const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

/// True while ops record autodiff graphs (the default).
bool grad_enabled();

/// Disables graph recording for its lifetime. Inference paths use this.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Runs reverse-mode differentiation from a scalar (1x1x1x1) tensor.
/// Gradients accumulate into every reachable tensor with requires_grad.
void backward(const Tensor& loss);

/// Reverse-mode pass seeded with an explicit output gradient of the same
/// size as `root` (vector-Jacobian product).
void backward(const Tensor& root, std::span<const float> grad_seed);

/// Throws NumericError if any value is NaN or infinite.
void check_finite(std::span<const float> values, const char* op);

}  // namespace adafm
