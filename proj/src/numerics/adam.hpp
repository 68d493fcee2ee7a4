#pragma once

#include <cstdint>
#include <vector>

#include "numerics/tensor.hpp"

namespace stylecode::nn {

struct AdamOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list. Parameters without a
// gradient this step are treated as having a zero gradient.
template <typename T>
class Adam {
public:
    Adam(ParamList<T> params, AdamOptions options);

    // Applies one update and clears the gradients.
    // Throws NonFiniteError naming the offending parameter.
    void step();
    void zero_grad();

    std::uint64_t steps() const { return step_; }
    const AdamOptions& options() const { return options_; }
    void set_learning_rate(double lr) { options_.learning_rate = lr; }

private:
    ParamList<T> params_;
    AdamOptions options_;
    std::vector<std::vector<T>> first_;
    std::vector<std::vector<T>> second_;
    std::uint64_t step_ = 0;
};

} // namespace stylecode::nn
