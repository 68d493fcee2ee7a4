#include "numerics/adam.hpp"

#include <cmath>

namespace stylecode::nn {

template <typename T>
Adam<T>::Adam(ParamList<T> params, AdamOptions options) : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
        first_.emplace_back(p.tensor.numel(), T(0));
        second_.emplace_back(p.tensor.numel(), T(0));
    }
}

template <typename T>
void Adam<T>::step() {
    for (const auto& p : params_)
        if (p.tensor.has_grad()) check_finite<T>(p.tensor.grad(), "gradient of " + p.name);

    ++step_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    const T lr = static_cast<T>(options_.learning_rate);
    const T eps = static_cast<T>(options_.eps);
    const T tb1 = static_cast<T>(b1), tb2 = static_cast<T>(b2);
    const T tc1 = static_cast<T>(c1), tc2 = static_cast<T>(c2);

    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& tensor = params_[i].tensor;
        auto value = tensor.mutable_data();
        const auto grad = tensor.grad();
        auto& m = first_[i];
        auto& v = second_[i];
        for (std::size_t j = 0; j < value.size(); ++j) {
            const T g = grad.empty() ? T(0) : grad[j];
            m[j] = tb1 * m[j] + (T(1) - tb1) * g;
            v[j] = tb2 * v[j] + (T(1) - tb2) * g * g;
            const T m_hat = m[j] / tc1;
            const T v_hat = v[j] / tc2;
            value[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
        tensor.zero_grad();
    }
}

template <typename T>
void Adam<T>::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

template class Adam<float>;
template class Adam<double>;

} // namespace stylecode::nn
