#include "mul/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace mul {

Adam::Adam(std::vector<Parameter>& params, double beta1, double beta2, double eps)
    : params_(&params), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params) {
        m_.push_back(Tensor::zeros(p.value.shape));
        v_.push_back(Tensor::zeros(p.value.shape));
    }
}

void Adam::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_->size(); ++i) {
        Parameter& p = (*params_)[i];
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (int64_t j = 0; j < p.value.numel(); ++j) {
            const double g = p.grad.data[j];
            m.data[j] = beta1_ * m.data[j] + (1.0 - beta1_) * g;
            v.data[j] = beta2_ * v.data[j] + (1.0 - beta2_) * g * g;
            const double m_hat = m.data[j] / bc1;
            const double v_hat = v.data[j] / bc2;
            p.value.data[j] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
        }
    }
}

double schedule_lr(double peak, int64_t step, int64_t total_steps, double warmup_fraction) {
    if (total_steps < 1) throw std::runtime_error("total_steps must be >= 1");
    const int64_t warmup = std::llround(warmup_fraction * static_cast<double>(total_steps));
    if (step <= 0) return 0.0;
    if (warmup > 0 && step <= warmup)
        return peak * static_cast<double>(step) / static_cast<double>(warmup);
    if (step >= total_steps) return 0.0;
    return peak * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup);
}

}  // namespace mul
