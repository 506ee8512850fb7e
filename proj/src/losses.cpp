#include "fedlppa/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace fedlppa {

namespace {
void check_probs(const Tensor& probs, std::span<const Image8> maps, const char* op) {
    if (probs.ndim() != 4)
        throw std::invalid_argument(std::string(op) + ": probs must be [N,K,H,W]");
    if (static_cast<size_t>(probs.dim(0)) != maps.size())
        throw std::invalid_argument(std::string(op) + ": batch size mismatch");
    for (const auto& m : maps)
        if (m.h != probs.dim(2) || m.w != probs.dim(3))
            throw std::invalid_argument(std::string(op) + ": label shape mismatch");
}
}  // namespace

Tensor partial_cross_entropy(const Tensor& probs, std::span<const Image8> labels,
                             float log_clamp, bool* zero_labeled) {
    check_probs(probs, labels, "partial_cross_entropy");
    const int N = probs.dim(0), K = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
    const size_t HW = static_cast<size_t>(H) * W;

    // gather labeled (flat prob index) pairs once; shared by fwd and bwd
    auto picks = std::make_shared<std::vector<size_t>>();
    for (int n = 0; n < N; ++n)
        for (size_t p = 0; p < HW; ++p) {
            const uint8_t c = labels[static_cast<size_t>(n)].v[p];
            if (c == kUnlabeled) continue;
            if (c >= K)
                throw std::invalid_argument("partial_cross_entropy: label class out of range");
            picks->push_back((static_cast<size_t>(n) * K + c) * HW + p);
        }
    if (zero_labeled) *zero_labeled = picks->empty();
    if (picks->empty()) return Tensor::scalar(0.0f);

    const float inv_cnt = 1.0f / static_cast<float>(picks->size());
    Tensor out = make_op(Shape{1}, {probs}, [picks, inv_cnt, log_clamp](TensorNode& n) {
        TensorNode* pp = n.parents[0].get();
        pp->ensure_grad();
        const float g = n.grad[0];
        for (size_t i : *picks) {
            const float p = pp->value[i];
            if (p > log_clamp) pp->grad[i] -= g * inv_cnt / p;
        }
    });
    double acc = 0.0;
    for (size_t i : *picks) acc -= std::log(std::max(probs.data()[i], log_clamp));
    out.data()[0] = static_cast<float>(acc * inv_cnt);
    return out;
}

Tensor dice_loss(const Tensor& probs, std::span<const Image8> targets, float smooth) {
    check_probs(probs, targets, "dice_loss");
    const int N = probs.dim(0), K = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
    const size_t HW = static_cast<size_t>(H) * W;
    const int terms = N * (K - 1);
    if (terms <= 0) throw std::invalid_argument("dice_loss: need at least one foreground class");

    // per-(image, fg class) sums; kept for the backward pass
    struct Sums { double inter, psum, tsum; };
    auto sums = std::make_shared<std::vector<Sums>>(static_cast<size_t>(terms));
    for (int n = 0; n < N; ++n) {
        const Image8& t = targets[static_cast<size_t>(n)];
        for (int c = 1; c < K; ++c) {
            Sums& s = (*sums)[static_cast<size_t>(n) * (K - 1) + (c - 1)];
            s = {0.0, 0.0, 0.0};
            const float* p = probs.data() + (static_cast<size_t>(n) * K + c) * HW;
            for (size_t i = 0; i < HW; ++i) {
                const double tv = t.v[i] == c ? 1.0 : 0.0;
                s.inter += p[i] * tv;
                s.psum += p[i];
                s.tsum += tv;
            }
        }
    }

    auto tgt = std::make_shared<std::vector<Image8>>(targets.begin(), targets.end());
    Tensor out = make_op(Shape{1}, {probs}, [sums, tgt, N, K, HW, smooth](TensorNode& n) {
        TensorNode* pp = n.parents[0].get();
        pp->ensure_grad();
        const float g = n.grad[0] / static_cast<float>(N * (K - 1));
        for (int b = 0; b < N; ++b) {
            const Image8& t = (*tgt)[static_cast<size_t>(b)];
            for (int c = 1; c < K; ++c) {
                const Sums& s = (*sums)[static_cast<size_t>(b) * (K - 1) + (c - 1)];
                const double den = s.psum + s.tsum + smooth;
                const double num = 2.0 * s.inter + smooth;
                float* gp = pp->grad.data() + (static_cast<size_t>(b) * K + c) * HW;
                for (size_t i = 0; i < HW; ++i) {
                    const double tv = t.v[i] == c ? 1.0 : 0.0;
                    // d(1 - num/den)/dp = -(2*t*den - num) / den^2
                    gp[i] += g * static_cast<float>(-(2.0 * tv * den - num) / (den * den));
                }
            }
        }
    });
    double acc = 0.0;
    for (const Sums& s : *sums)
        acc += 1.0 - (2.0 * s.inter + smooth) / (s.psum + s.tsum + smooth);
    out.data()[0] = static_cast<float>(acc / terms);
    return out;
}

float sample_lambda_m(std::mt19937_64& rng, const LossConfig& cfg) {
    std::uniform_real_distribution<float> u(cfg.lambda_m_lo, cfg.lambda_m_hi);
    return u(rng);
}

std::vector<Image8> pseudo_label(const Tensor& p_m, const Tensor& p_a, float lambda_m) {
    if (p_m.shape() != p_a.shape())
        throw std::invalid_argument("pseudo_label: decoder output shapes differ");
    if (p_m.ndim() != 4) throw std::invalid_argument("pseudo_label: probs must be [N,K,H,W]");
    const int N = p_m.dim(0), K = p_m.dim(1), H = p_m.dim(2), W = p_m.dim(3);
    const size_t HW = static_cast<size_t>(H) * W;
    std::vector<Image8> out;
    out.reserve(static_cast<size_t>(N));
    for (int n = 0; n < N; ++n) {
        Image8 y(H, W, 0);
        for (size_t p = 0; p < HW; ++p) {
            int best = 0;
            float bv = -1.0f;
            for (int c = 0; c < K; ++c) {
                const size_t i = (static_cast<size_t>(n) * K + c) * HW + p;
                const float v = lambda_m * p_m.data()[i] + (1.0f - lambda_m) * p_a.data()[i];
                if (v > bv) { bv = v; best = c; }  // strict: ties keep lowest index
            }
            y.v[p] = static_cast<uint8_t>(best);
        }
        out.push_back(std::move(y));
    }
    return out;
}

Tensor wss_objective(const Tensor& p_m, const Tensor& p_a,
                     std::span<const Image8> labels, const LossConfig& cfg,
                     std::mt19937_64& rng, bool* zero_labeled) {
    const float lambda_m = sample_lambda_m(rng, cfg);
    const auto y_tilde = pseudo_label(p_m, p_a, lambda_m);

    bool warn_m = false, warn_a = false;
    Tensor sup = scale(add(partial_cross_entropy(p_m, labels, cfg.log_clamp, &warn_m),
                           partial_cross_entropy(p_a, labels, cfg.log_clamp, &warn_a)),
                       0.5f);
    if (zero_labeled) *zero_labeled = warn_m || warn_a;
    if (cfg.lambda == 0.0f) return sup;
    Tensor pse = scale(add(dice_loss(p_m, y_tilde, cfg.dice_smooth),
                           dice_loss(p_a, y_tilde, cfg.dice_smooth)),
                       0.5f);
    return add(sup, scale(pse, cfg.lambda));
}

}  // namespace fedlppa
