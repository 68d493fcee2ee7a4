#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace stylecode::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NonFiniteError : std::domain_error {
    using std::domain_error::domain_error;
};

struct GraphError : std::logic_error {
    using std::logic_error::logic_error;
};

// Numerical floor used by norms and divisions throughout.
inline constexpr double kEps = 1e-8;

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    bool backward_done = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    // Propagates this node's grad into inputs[*]->grad.
    std::function<void(Node&)> backward;

    bool is_leaf() const { return inputs.empty(); }
    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad;
    }
};

template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
    static Tensor scalar(T value) { return from_data({1}, {value}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const T> data() const { return node_->value; }
    // Only leaves may be written to; interior values belong to their graph.
    std::span<T> mutable_data();
    T item() const;
    T at(std::size_t flat_index) const { return node_->value.at(flat_index); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag);
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    void zero_grad();

    // Same values, cut from the graph.
    Tensor detach() const;
    Tensor clone() const;

    const std::shared_ptr<Node<T>>& node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// Reverse-mode sweep from a scalar loss. Leaf grads accumulate.
template <typename T>
void backward(const Tensor<T>& loss);

// Throws NonFiniteError naming `what` when any element is NaN/Inf.
template <typename T>
void check_finite(std::span<const T> values, const std::string& what);

template <typename T>
void check_finite(const Tensor<T>& t, const std::string& what) {
    check_finite<T>(t.data(), what);
}

namespace detail {

// Builds the output node; records the graph only when some input needs grad.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const char* op,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward_fn);

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const char* op,
                      const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward_fn);

} // namespace detail

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

} // namespace stylecode::nn
