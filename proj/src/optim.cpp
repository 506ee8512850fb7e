#include "fedlppa/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace fedlppa {

float poly_lr(float base_lr, int t, int T) {
    if (T == 0) throw std::invalid_argument("poly_lr: T must be nonzero");
    if (t < 0 || t > T) throw std::invalid_argument("poly_lr: need 0 <= t <= T");
    return base_lr * std::pow(1.0f - static_cast<float>(t) / static_cast<float>(T), 0.9f);
}

void AdamW::step(std::vector<Tensor>& params, float lr) {
    if (lr < 0.0f) throw std::invalid_argument("AdamW: negative learning rate");
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].vec().size(), 0.0f);
            v_[i].assign(params[i].vec().size(), 0.0f);
        }
    }
    if (m_.size() != params.size())
        throw std::invalid_argument("AdamW: parameter list changed size");
    ++t_;
    const float bc1 = 1.0f - std::pow(h_.beta1, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(h_.beta2, static_cast<float>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        if (p.grad().empty()) continue;  // parameter untouched by this loss
        if (m_[i].size() != p.vec().size())
            throw std::invalid_argument("AdamW: parameter shape changed");
        float* w = p.data();
        const float* g = p.grad().data();
        for (size_t j = 0; j < p.vec().size(); ++j) {
            m_[i][j] = h_.beta1 * m_[i][j] + (1.0f - h_.beta1) * g[j];
            v_[i][j] = h_.beta2 * v_[i][j] + (1.0f - h_.beta2) * g[j] * g[j];
            const float mhat = m_[i][j] / bc1;
            const float vhat = v_[i][j] / bc2;
            w[j] -= lr * (mhat / (std::sqrt(vhat) + h_.eps) + h_.weight_decay * w[j]);
        }
    }
}

void AdamW::reset() {
    t_ = 0;
    m_.clear();
    v_.clear();
}

}  // namespace fedlppa
