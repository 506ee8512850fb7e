#pragma once

// Weakly-supervised objective: partial cross-entropy on sparse labels plus
// Dice against pseudo-labels mixed stochastically from the two decoders.

#include <random>
#include <span>

#include "fedlppa/image.hpp"
#include "fedlppa/tensor.hpp"
#include "fedlppa/weak_labels.hpp"

namespace fedlppa {

struct LossConfig {
    float lambda = 0.5f;
    float lambda_m_lo = 0.7f;
    float lambda_m_hi = 1.0f;
    float dice_smooth = 1e-5f;
    float log_clamp = 1e-7f;
};

// Mean of -log p(class) over labeled pixels only; probs is [N,K,H,W] and
// labels holds one class map per batch element (kUnlabeled pixels are
// ignored). A batch with zero labeled pixels yields 0 and sets the flag.
Tensor partial_cross_entropy(const Tensor& probs, std::span<const Image8> labels,
                             float log_clamp = 1e-7f, bool* zero_labeled = nullptr);

// Soft Dice loss against dense targets, averaged over foreground classes
// and batch elements: 1 - (2*sum(p*t)+s)/(sum(p)+sum(t)+s).
Tensor dice_loss(const Tensor& probs, std::span<const Image8> targets,
                 float smooth = 1e-5f);

float sample_lambda_m(std::mt19937_64& rng, const LossConfig& cfg = {});

// Per-pixel argmax of lambda_m*p_M + (1-lambda_m)*p_A; ties break to the
// lowest class index. No gradient flows through the result.
std::vector<Image8> pseudo_label(const Tensor& p_m, const Tensor& p_a, float lambda_m);

// Full objective, Lsup + lambda*Lpse with both decoder heads weighted 0.5.
// lambda_m is drawn once per call from rng.
Tensor wss_objective(const Tensor& p_m, const Tensor& p_a,
                     std::span<const Image8> labels, const LossConfig& cfg,
                     std::mt19937_64& rng, bool* zero_labeled = nullptr);

}  // namespace fedlppa
