#pragma once

#include "fedlppa/tensor.hpp"

namespace fedlppa {

// Polynomial learning-rate decay: base_lr * (1 - t/T)^0.9
float poly_lr(float base_lr, int t, int T);

// Decoupled weight-decay Adam. Moment slots are keyed by position in the
// parameter list, which must stay stable across steps.
class AdamW {
public:
    struct Hyper {
        float beta1 = 0.9f;
        float beta2 = 0.999f;
        float eps = 1e-8f;
        float weight_decay = 1e-4f;
    };

    AdamW() = default;
    explicit AdamW(Hyper h) : h_(h) {}

    void step(std::vector<Tensor>& params, float lr);
    void reset();
    int64_t steps() const { return t_; }
    const Hyper& hyper() const { return h_; }

private:
    Hyper h_{};
    int64_t t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

}  // namespace fedlppa
