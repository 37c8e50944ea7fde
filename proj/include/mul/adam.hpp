#pragma once

#include <cstdint>
#include <vector>

#include "mul/tensor.hpp"

namespace mul {

/// Adam with bias correction: theta -= lr * m_hat / (sqrt(v_hat) + eps).
class Adam {
public:
    Adam(std::vector<Parameter>& params, double beta1 = 0.9, double beta2 = 0.98,
         double eps = 1e-8);

    /// Applies one update from the accumulated gradients. Does not zero them.
    void step(double lr);

    int64_t steps_taken() const { return t_; }

private:
    std::vector<Parameter>* params_;
    std::vector<Tensor> m_, v_;
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

/// Linear warmup from 0 to peak over the first warmup_fraction of steps,
/// then linear decay back to 0 at total_steps.
double schedule_lr(double peak, int64_t step, int64_t total_steps, double warmup_fraction = 0.08);

}  // namespace mul
