#pragma once

// U-Net with a prompt-fusion module at the bottleneck and two decoders:
// a personalized main decoder whose pre-head features are gated by an MLP
// fed from the fused bottleneck, and an auxiliary decoder without the MLP.
// Parameters split into three flat partitions: theta (encoder + fusion +
// prompts, globally shared), phi (main decoder + MLP + head), phi_bar
// (auxiliary decoder).

#include <filesystem>

#include "fedlppa/tensor.hpp"
#include "fedlppa/weak_labels.hpp"

namespace fedlppa {

enum class Partition { Theta = 0, Phi = 1, PhiBar = 2 };

struct ModelConfig {
    int base_channels = 16;
    int depth = 4;
    int num_classes = 2;
    int num_clients = 4;
    int height = 64;
    int width = 64;
    bool use_tdf = true;       // prompts + dual-attention fusion + MLP gate
    bool dual_decoder = true;  // auxiliary decoder present
    uint64_t seed = 0;
};

struct ParamEntry {
    std::string name;
    Tensor tensor;
    bool trainable = true;
    Partition part = Partition::Theta;
};

class SegModel {
public:
    explicit SegModel(const ModelConfig& cfg);

    struct Output {
        Tensor p_m;  // [N,K,H,W] channel softmax
        Tensor p_a;  // equals p_m when the auxiliary decoder is disabled
    };
    // images: [N,1,H,W] with intensities in [0,1]
    Output forward(const Tensor& images, int client_id, Sparsity asp, bool training);

    const ModelConfig& config() const { return cfg_; }
    const std::vector<ParamEntry>& params() const { return params_; }

    std::vector<Tensor> trainable_params();
    std::vector<Tensor> trainable_params(Partition p);
    void zero_grads();

    size_t partition_size(Partition p) const;
    std::vector<float> flatten(Partition p) const;
    void load_partition(Partition p, const std::vector<float>& v);

    // concat(ukp, ddp[client]) as a flat vector, read from a theta vector
    // laid out by this architecture (used server-side for affinity).
    std::vector<float> prompt_vector(const std::vector<float>& theta, int client_id) const;

    // bottleneck spatial size (prompt resolution)
    int bottleneck_h() const { return cfg_.height >> cfg_.depth; }
    int bottleneck_w() const { return cfg_.width >> cfg_.depth; }

    void save_checkpoint(const std::filesystem::path& dir) const;
    static SegModel load_checkpoint(const std::filesystem::path& dir);

    // per-pixel argmax over the class axis, ties to the lowest index
    static std::vector<Image8> predict_classes(const Tensor& probs);

private:
    ModelConfig cfg_;
    std::vector<ParamEntry> params_;

    struct ConvBlock {
        int w, b, bn_gamma, bn_beta, bn_mean, bn_var;  // indices into params_
    };
    struct DecoderIdx {
        std::vector<int> up_w, up_b;  // per level, top-down order
        std::vector<ConvBlock> blk1, blk2;
        int head_w = -1, head_b = -1;
    };

    std::vector<ConvBlock> enc1_, enc2_;  // per level
    ConvBlock bott1_{}, bott2_{};
    // fusion module
    int ukp_ = -1, ddp_ = -1;
    ConvBlock fuse1_{}, fuse2_{};
    int q_w = -1, q_b = -1, k_w = -1, k_b = -1, v_w = -1, v_b = -1;
    int gamma_s_ = -1, gamma_c_ = -1;
    int mlp1_w = -1, mlp1_b = -1, mlp2_w = -1, mlp2_b = -1;
    DecoderIdx main_dec_, aux_dec_;

    int add_param(const std::string& name, Shape shape, Partition part,
                  bool trainable, float init_std, std::mt19937_64& rng,
                  float fill = 0.0f);
    ConvBlock add_conv_block(const std::string& name, int cin, int cout,
                             Partition part, std::mt19937_64& rng);
    DecoderIdx build_decoder(const std::string& name, int in_ch, Partition part,
                             std::mt19937_64& rng);
    Tensor run_conv_block(const ConvBlock& cb, const Tensor& x, bool training);
    Tensor run_decoder(const DecoderIdx& dec, const Tensor& bottom,
                       const std::vector<Tensor>& skips, const Tensor& gate,
                       bool training);
    Tensor fuse(const Tensor& feat, int client_id, Sparsity asp, bool training,
                Tensor* gate_out);
};

}  // namespace fedlppa
