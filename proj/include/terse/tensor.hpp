#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace terse {

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the reverse-mode graph. A node owns its value buffer and,
// once backward has touched it, a gradient buffer of identical extent.
struct Node {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads self.grad and accumulates into parents' grads.
    std::function<void(Node& self)> backward_fn;

    void ensure_grad();
};

}  // namespace detail

/// Thread-local switch that disables graph recording.
class GradMode {
   public:
    static bool enabled() noexcept;
    static void set_enabled(bool on) noexcept;
};

class NoGradGuard {
   public:
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool prev_;
};

/// Dense float32 row-major array with value semantics for metadata and
/// shared ownership of the underlying graph node.
///
/// Copying a Tensor aliases the same node, the same way framework tensors do.
/// Use clone() for an independent buffer.
class Tensor {
   public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, float value, bool requires_grad = false);
    static Tensor from_vector(const Shape& shape, std::vector<float> values, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    std::int64_t rank() const { return static_cast<std::int64_t>(shape().size()); }
    // Negative axes count from the back.
    std::int64_t dim(std::int64_t axis) const;
    std::int64_t numel() const;

    std::span<float> data();
    std::span<const float> data() const;
    float item() const;
    float at(std::initializer_list<std::int64_t> index) const;

    bool requires_grad() const;
    void set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const float> grad() const;
    std::span<float> mutable_grad();
    void zero_grad();

    // Reverse sweep from a scalar. Every reachable node that requires grad
    // ends with an allocated (possibly zero) gradient buffer.
    void backward() const;

    // Independent leaf with a copy of the values.
    Tensor clone() const;

    detail::Node* node() const noexcept { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const noexcept { return node_; }

    // Wraps an op result. Parents and backward_fn are dropped unless grad mode
    // is on and some parent requires grad.
    static Tensor make_result(Shape shape, std::vector<float> value,
                              std::vector<std::shared_ptr<detail::Node>> parents,
                              std::function<void(detail::Node&)> backward_fn, const char* op);

   private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

/// Same values, no parents: the gradient stops here.
Tensor detach(const Tensor& x);

}  // namespace terse
