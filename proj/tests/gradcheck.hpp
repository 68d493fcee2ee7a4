#pragma once

// Central finite-difference oracle for the autodiff engine. Lives in test code
// only and never touches the backward closures it is checking.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "numerics/ops.hpp"
#include "numerics/rng.hpp"

namespace gradcheck {

using stylecode::nn::Tensor;
using TensorD = Tensor<double>;

inline TensorD random_tensor(stylecode::nn::Shape shape, stylecode::CounterRng& rng, double scale = 1.0) {
    std::vector<double> v(stylecode::nn::shape_numel(shape));
    for (auto& x : v) x = rng.normal() * scale;
    return TensorD::from_data(std::move(shape), std::move(v), true);
}

using LossFn = std::function<TensorD(const std::vector<TensorD>&)>;
// For losses with stop-gradients: the function whose derivative input i should
// receive, i.e. the loss with every term that is stopped for input i removed.
using Reference = std::function<double(const std::vector<TensorD>&, std::size_t input)>;

// Largest relative error across all inputs, comparing analytic gradients
// to central differences with the given step.
inline double max_relative_error(const LossFn& f, std::vector<TensorD> inputs, double step = 1e-5,
                                 const Reference& reference = nullptr) {
    for (auto& t : inputs) t.zero_grad();
    auto loss = f(inputs);
    stylecode::nn::backward(loss);

    double worst = 0.0;
    for (std::size_t which = 0; which < inputs.size(); ++which) {
        auto& t = inputs[which];
        if (!t.requires_grad()) continue;
        auto value = [&] { return reference ? reference(inputs, which) : f(inputs).item(); };
        std::vector<double> analytic(t.numel(), 0.0);
        if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
        std::vector<double> numeric(t.numel());
        auto data = t.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + step;
            double up;
            double down;
            {
                stylecode::nn::NoGradGuard guard;
                up = value();
                data[i] = saved - step;
                down = value();
            }
            data[i] = saved;
            numeric[i] = (up - down) / (2 * step);
        }
        double diff = 0, na = 0, nn = 0;
        for (std::size_t i = 0; i < numeric.size(); ++i) {
            diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
            na += analytic[i] * analytic[i];
            nn += numeric[i] * numeric[i];
        }
        const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-7});
        worst = std::max(worst, std::sqrt(diff) / denom);
    }
    return worst;
}

} // namespace gradcheck
