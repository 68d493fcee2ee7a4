#include "numerics/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace stylecode::nn {

namespace {
thread_local bool t_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    auto node = std::make_shared<Node<T>>();
    node->value.assign(shape_numel(shape), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
    if (shape_numel(shape) != data.size())
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
    if (!node_->is_leaf()) throw GraphError("cannot write to a non-leaf tensor");
    return node_->value;
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool flag) {
    if (!node_->is_leaf()) throw GraphError("requires_grad can only be set on leaves");
    node_->requires_grad = flag;
}

template <typename T>
void Tensor<T>::zero_grad() {
    node_->grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    auto node = std::make_shared<Node<T>>();
    node->shape = node_->shape;
    node->value = node_->value;
    return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    auto copy = detach();
    copy.node_->requires_grad = node_->requires_grad && node_->is_leaf();
    return copy;
}

template <typename T>
void check_finite(std::span<const T> values, const std::string& what) {
    // x * 0 is 0 for finite x and NaN otherwise; the branch-free sum vectorizes
    T probe = 0;
    for (const T v : values) probe += v * T(0);
    if (probe == T(0)) return;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i]))
            throw NonFiniteError("non-finite value in " + what + " at element " + std::to_string(i));
    }
}

template <typename T>
void backward(const Tensor<T>& loss) {
    if (!loss.defined()) throw GraphError("backward on an undefined tensor");
    if (!loss.requires_grad()) throw GraphError("backward on a tensor detached from any graph");
    if (loss.numel() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_str(loss.shape()));
    Node<T>* root = loss.node().get();
    if (root->backward_done) throw GraphError("backward called twice on the same graph without reset");

    // post-order DFS; reversed it is a valid reverse-topological schedule
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->is_leaf() || !node->backward || node->grad.empty()) continue;
        node->backward(*node);
    }
    root->backward_done = true;
}

namespace detail {

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const char* op,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward_fn) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    if (grad_enabled()) {
        bool any = false;
        for (const auto* t : inputs) any = any || t->requires_grad();
        if (any) {
            node->requires_grad = true;
            for (const auto* t : inputs) node->inputs.push_back(t->node());
            node->backward = std::move(backward_fn);
        }
    }
    return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const char* op,
                      const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward_fn) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    if (grad_enabled()) {
        bool any = false;
        for (const auto& t : inputs) any = any || t.requires_grad();
        if (any) {
            node->requires_grad = true;
            for (const auto& t : inputs) node->inputs.push_back(t.node());
            node->backward = std::move(backward_fn);
        }
    }
    return Tensor<T>(std::move(node));
}

template Tensor<float> make_result(Shape, std::vector<float>, const char*,
                                   std::initializer_list<const Tensor<float>*>,
                                   std::function<void(Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, const char*,
                                    std::initializer_list<const Tensor<double>*>,
                                    std::function<void(Node<double>&)>);
template Tensor<float> make_result(Shape, std::vector<float>, const char*, const std::vector<Tensor<float>>&,
                                   std::function<void(Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, const char*, const std::vector<Tensor<double>>&,
                                    std::function<void(Node<double>&)>);

} // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);
template void check_finite(std::span<const float>, const std::string&);
template void check_finite(std::span<const double>, const std::string&);

} // namespace stylecode::nn
