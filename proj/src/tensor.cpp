#include "terse/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "terse/error.hpp"

namespace terse {

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() noexcept { return g_grad_enabled; }
void GradMode::set_enabled(bool on) noexcept { g_grad_enabled = on; }

std::int64_t numel_of(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw DimensionError("negative extent in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

void detail::Node::ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) { return full(shape, 0.0f, requires_grad); }

Tensor Tensor::full(const Shape& shape, float value, bool requires_grad) {
    auto node = std::make_shared<detail::Node>();
    node->shape = shape;
    node->value.assign(static_cast<std::size_t>(numel_of(shape)), value);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from_vector(const Shape& shape, std::vector<float> values, bool requires_grad) {
    if (numel_of(shape) != static_cast<std::int64_t>(values.size())) {
        throw DimensionError("from_vector: shape " + shape_str(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = shape;
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return full(Shape{}, value, requires_grad); }

const Shape& Tensor::shape() const {
    if (!node_) throw DimensionError("use of undefined tensor");
    return node_->shape;
}

std::int64_t Tensor::dim(std::int64_t axis) const {
    const auto& s = shape();
    const auto r = static_cast<std::int64_t>(s.size());
    const auto a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    }
    return s[static_cast<std::size_t>(a)];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(node_ ? node_->value.size() : 0); }

std::span<float> Tensor::data() {
    if (!node_) throw DimensionError("use of undefined tensor");
    return node_->value;
}

std::span<const float> Tensor::data() const {
    if (!node_) throw DimensionError("use of undefined tensor");
    return node_->value;
}

float Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

float Tensor::at(std::initializer_list<std::int64_t> index) const {
    const auto& s = shape();
    if (index.size() != s.size()) throw DimensionError("at(): index rank mismatch for " + shape_str(s));
    std::int64_t flat = 0;
    std::size_t k = 0;
    for (auto i : index) {
        if (i < 0 || i >= s[k]) throw DimensionError("at(): index out of range for " + shape_str(s));
        flat = flat * s[k] + i;
        ++k;
    }
    return node_->value[static_cast<std::size_t>(flat)];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
    if (!node_) throw DimensionError("use of undefined tensor");
    node_->requires_grad = on;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const float> Tensor::grad() const {
    if (!node_) return {};
    return node_->grad;
}

std::span<float> Tensor::mutable_grad() {
    if (!node_) throw DimensionError("use of undefined tensor");
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

void Tensor::backward() const {
    if (!node_) throw DimensionError("backward on undefined tensor");
    if (node_->value.size() != 1) {
        throw DimensionError("backward() needs a scalar, got shape " + shape_str(node_->shape));
    }
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order without recursion
    // depth limits on long graphs.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            detail::Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    for (auto* n : order) n->ensure_grad();
    node_->grad[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

Tensor Tensor::clone() const {
    return from_vector(shape(), std::vector<float>(data().begin(), data().end()));
}

Tensor Tensor::make_result(Shape shape, std::vector<float> value,
                           std::vector<std::shared_ptr<detail::Node>> parents,
                           std::function<void(detail::Node&)> backward_fn, const char* op) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    bool any = false;
    if (GradMode::enabled()) {
        for (const auto& p : parents) any = any || (p && p->requires_grad);
    }
    if (any) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

Tensor detach(const Tensor& x) { return x.clone(); }

}  // namespace terse
