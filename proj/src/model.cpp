#include "fedlppa/model.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "fedlppa/tensor_io.hpp"

namespace fedlppa {

using nlohmann::json;

namespace {
const char* partition_name(Partition p) {
    switch (p) {
        case Partition::Theta: return "theta";
        case Partition::Phi: return "phi";
        case Partition::PhiBar: return "phi_bar";
    }
    return "?";
}
}  // namespace

int SegModel::add_param(const std::string& name, Shape shape, Partition part,
                        bool trainable, float init_std, std::mt19937_64& rng,
                        float fill) {
    Tensor t(std::move(shape), trainable);
    if (init_std > 0.0f) {
        std::normal_distribution<float> d(0.0f, init_std);
        for (auto& v : t.vec()) v = d(rng);
    } else if (fill != 0.0f) {
        std::fill(t.vec().begin(), t.vec().end(), fill);
    }
    params_.push_back(ParamEntry{name, t, trainable, part});
    return static_cast<int>(params_.size() - 1);
}

SegModel::ConvBlock SegModel::add_conv_block(const std::string& name, int cin, int cout,
                                             Partition part, std::mt19937_64& rng) {
    ConvBlock cb;
    const float std = std::sqrt(2.0f / static_cast<float>(cin * 9));
    cb.w = add_param(name + ".w", {cout, cin, 3, 3}, part, true, std, rng);
    cb.b = add_param(name + ".b", {cout}, part, true, 0.0f, rng);
    cb.bn_gamma = add_param(name + ".bn_gamma", {cout}, part, true, 0.0f, rng, 1.0f);
    cb.bn_beta = add_param(name + ".bn_beta", {cout}, part, true, 0.0f, rng);
    cb.bn_mean = add_param(name + ".bn_mean", {cout}, part, false, 0.0f, rng);
    cb.bn_var = add_param(name + ".bn_var", {cout}, part, false, 0.0f, rng, 1.0f);
    return cb;
}

SegModel::DecoderIdx SegModel::build_decoder(const std::string& name, int in_ch,
                                             Partition part, std::mt19937_64& rng) {
    DecoderIdx d;
    d.up_w.resize(cfg_.depth);
    d.up_b.resize(cfg_.depth);
    d.blk1.resize(cfg_.depth);
    d.blk2.resize(cfg_.depth);
    int prev = in_ch;
    for (int l = cfg_.depth - 1; l >= 0; --l) {
        const int ch = cfg_.base_channels << l;
        const std::string lv = name + ".l" + std::to_string(l);
        const float std = std::sqrt(2.0f / static_cast<float>(prev * 9));
        d.up_w[l] = add_param(lv + ".up.w", {ch, prev, 3, 3}, part, true, std, rng);
        d.up_b[l] = add_param(lv + ".up.b", {ch}, part, true, 0.0f, rng);
        d.blk1[l] = add_conv_block(lv + ".conv1", 2 * ch, ch, part, rng);
        d.blk2[l] = add_conv_block(lv + ".conv2", ch, ch, part, rng);
        prev = ch;
    }
    const float std = std::sqrt(2.0f / static_cast<float>(cfg_.base_channels));
    d.head_w = add_param(name + ".head.w", {cfg_.num_classes, cfg_.base_channels, 1, 1},
                         part, true, std, rng);
    d.head_b = add_param(name + ".head.b", {cfg_.num_classes}, part, true, 0.0f, rng);
    return d;
}

SegModel::SegModel(const ModelConfig& cfg) : cfg_(cfg) {
    if (cfg_.depth < 1) throw std::invalid_argument("SegModel: depth must be >= 1");
    const int div = 1 << cfg_.depth;
    if (cfg_.height % div || cfg_.width % div)
        throw std::invalid_argument("SegModel: input size must be divisible by 2^depth");
    if (cfg_.num_clients < 1) throw std::invalid_argument("SegModel: need at least one client");

    std::mt19937_64 rng(cfg_.seed);

    // encoder (theta)
    int prev = 1;
    for (int l = 0; l < cfg_.depth; ++l) {
        const int ch = cfg_.base_channels << l;
        const std::string lv = "encoder.l" + std::to_string(l);
        enc1_.push_back(add_conv_block(lv + ".conv1", prev, ch, Partition::Theta, rng));
        enc2_.push_back(add_conv_block(lv + ".conv2", ch, ch, Partition::Theta, rng));
        prev = ch;
    }
    const int cbot = cfg_.base_channels << (cfg_.depth - 1);
    bott1_ = add_conv_block("bottleneck.conv1", cbot, cbot, Partition::Theta, rng);
    bott2_ = add_conv_block("bottleneck.conv2", cbot, cbot, Partition::Theta, rng);

    const int hb = bottleneck_h(), wb = bottleneck_w();
    if (cfg_.use_tdf) {
        ukp_ = add_param("tdf.ukp", {1, hb, wb}, Partition::Theta, true, 0.2f, rng);
        ddp_ = add_param("tdf.ddp", {cfg_.num_clients, hb, wb}, Partition::Theta, true, 0.2f, rng);
        fuse1_ = add_conv_block("tdf.fuse1", cbot + 5, cbot, Partition::Theta, rng);
        fuse2_ = add_conv_block("tdf.fuse2", cbot, cbot, Partition::Theta, rng);
        const int c8 = std::max(1, cbot / 8);
        const float s1 = std::sqrt(2.0f / static_cast<float>(cbot));
        q_w = add_param("tdf.q.w", {c8, cbot, 1, 1}, Partition::Theta, true, s1, rng);
        q_b = add_param("tdf.q.b", {c8}, Partition::Theta, true, 0.0f, rng);
        k_w = add_param("tdf.k.w", {c8, cbot, 1, 1}, Partition::Theta, true, s1, rng);
        k_b = add_param("tdf.k.b", {c8}, Partition::Theta, true, 0.0f, rng);
        v_w = add_param("tdf.v.w", {cbot, cbot, 1, 1}, Partition::Theta, true, s1, rng);
        v_b = add_param("tdf.v.b", {cbot}, Partition::Theta, true, 0.0f, rng);
        gamma_s_ = add_param("tdf.gamma_s", {1}, Partition::Theta, true, 0.0f, rng);
        gamma_c_ = add_param("tdf.gamma_c", {1}, Partition::Theta, true, 0.0f, rng);
    }

    const int dec_in = cfg_.use_tdf ? 2 * cbot : cbot;
    main_dec_ = build_decoder("main_dec", dec_in, Partition::Phi, rng);
    if (cfg_.use_tdf) {
        const int hidden = std::max(1, dec_in / 4);
        const float s1 = std::sqrt(2.0f / static_cast<float>(dec_in));
        const float s2 = std::sqrt(2.0f / static_cast<float>(hidden));
        mlp1_w = add_param("mlp.fc1.w", {hidden, dec_in, 1, 1}, Partition::Phi, true, s1, rng);
        mlp1_b = add_param("mlp.fc1.b", {hidden}, Partition::Phi, true, 0.0f, rng);
        mlp2_w = add_param("mlp.fc2.w", {cfg_.base_channels, hidden, 1, 1}, Partition::Phi, true, s2, rng);
        mlp2_b = add_param("mlp.fc2.b", {cfg_.base_channels}, Partition::Phi, true, 0.0f, rng);
    }
    if (cfg_.dual_decoder)
        aux_dec_ = build_decoder("aux_dec", dec_in, Partition::PhiBar, rng);
}

Tensor SegModel::run_conv_block(const ConvBlock& cb, const Tensor& x, bool training) {
    Tensor y = conv2d(x, params_[cb.w].tensor, params_[cb.b].tensor, 1, 1);
    y = batch_norm(y, params_[cb.bn_gamma].tensor, params_[cb.bn_beta].tensor,
                   params_[cb.bn_mean].tensor, params_[cb.bn_var].tensor, training);
    return leaky_relu(y);
}

Tensor SegModel::fuse(const Tensor& feat, int client_id, Sparsity asp, bool training,
                      Tensor* gate_out) {
    if (client_id < 0 || client_id >= cfg_.num_clients)
        throw std::invalid_argument("SegModel: client_id out of range");
    const int n = feat.dim(0), cbot = feat.dim(1), hb = feat.dim(2), wb = feat.dim(3);
    const int hw = hb * wb;

    Tensor asp_planes = asp_encode(asp, hb, wb);
    Tensor prompt = concat_axis0({params_[ukp_].tensor, select0(params_[ddp_].tensor, client_id),
                                  asp_planes});
    Tensor fused_in = concat_channels({feat, tile0(prompt, n)});
    Tensor fhat = run_conv_block(fuse2_, run_conv_block(fuse1_, fused_in, training), training);

    Tensor q = conv2d(fhat, params_[q_w].tensor, params_[q_b].tensor);
    Tensor k = conv2d(fhat, params_[k_w].tensor, params_[k_b].tensor);
    Tensor v = conv2d(fhat, params_[v_w].tensor, params_[v_b].tensor);
    const int c8 = q.dim(1);

    std::vector<Tensor> fused;
    fused.reserve(static_cast<size_t>(n));
    for (int b = 0; b < n; ++b) {
        Tensor qb = reshape(select0(q, b), {c8, hw});
        Tensor kb = reshape(select0(k, b), {c8, hw});
        Tensor vb = reshape(select0(v, b), {cbot, hw});
        Tensor fb = reshape(select0(fhat, b), {cbot, hw});

        // spatial attention: S[j,i] = softmax_i(Q_i . K_j)
        Tensor s_att = softmax_rows(transpose2d(matmul(transpose2d(qb), kb)));
        Tensor f_s = matmul(vb, transpose2d(s_att));

        // channel attention on reshaped fhat: C[j,i] = softmax_i(K'_i . Q'_j)
        Tensor c_att = softmax_rows(transpose2d(matmul(fb, transpose2d(fb))));
        Tensor f_c = matmul(transpose2d(c_att), fb);

        Tensor f_tilde = add(add(scale_t(f_s, params_[gamma_s_].tensor), fb),
                             add(scale_t(f_c, params_[gamma_c_].tensor), fb));
        fused.push_back(reshape(f_tilde, {1, cbot, hb, wb}));
    }
    Tensor f_star = concat_channels({feat, concat_axis0(fused)});

    Tensor m = relu(conv2d(f_star, params_[mlp1_w].tensor, params_[mlp1_b].tensor));
    m = sigmoid(conv2d(m, params_[mlp2_w].tensor, params_[mlp2_b].tensor));
    for (int d = 0; d < cfg_.depth; ++d) m = upsample_nearest2x(m);
    *gate_out = m;
    return f_star;
}

Tensor SegModel::run_decoder(const DecoderIdx& dec, const Tensor& bottom,
                             const std::vector<Tensor>& skips, const Tensor& gate,
                             bool training) {
    Tensor x = bottom;
    for (int l = cfg_.depth - 1; l >= 0; --l) {
        x = upsample_nearest2x(x);
        x = conv2d(x, params_[dec.up_w[l]].tensor, params_[dec.up_b[l]].tensor, 1, 1);
        x = concat_channels({skips[static_cast<size_t>(l)], x});
        x = run_conv_block(dec.blk1[l], x, training);
        x = run_conv_block(dec.blk2[l], x, training);
    }
    if (gate.defined()) x = mul(x, gate);
    Tensor logits = conv2d(x, params_[dec.head_w].tensor, params_[dec.head_b].tensor);
    return softmax_channels(logits);
}

SegModel::Output SegModel::forward(const Tensor& images, int client_id, Sparsity asp,
                                   bool training) {
    if (images.ndim() != 4 || images.dim(1) != 1 ||
        images.dim(2) != cfg_.height || images.dim(3) != cfg_.width)
        throw std::invalid_argument("SegModel: images must be [N,1," +
                                    std::to_string(cfg_.height) + "," +
                                    std::to_string(cfg_.width) + "]");
    Tensor x = images;
    std::vector<Tensor> skips;
    for (int l = 0; l < cfg_.depth; ++l) {
        x = run_conv_block(enc1_[static_cast<size_t>(l)], x, training);
        x = run_conv_block(enc2_[static_cast<size_t>(l)], x, training);
        skips.push_back(x);
        x = maxpool2x2(x);
    }
    Tensor feat = run_conv_block(bott2_, run_conv_block(bott1_, x, training), training);

    Tensor gate;
    Tensor bottom = cfg_.use_tdf ? fuse(feat, client_id, asp, training, &gate) : feat;

    Output out;
    out.p_m = run_decoder(main_dec_, bottom, skips, gate, training);
    out.p_a = cfg_.dual_decoder ? run_decoder(aux_dec_, bottom, skips, Tensor{}, training)
                                : out.p_m;
    return out;
}

std::vector<Tensor> SegModel::trainable_params() {
    std::vector<Tensor> out;
    for (auto& p : params_)
        if (p.trainable) out.push_back(p.tensor);
    return out;
}

std::vector<Tensor> SegModel::trainable_params(Partition part) {
    std::vector<Tensor> out;
    for (auto& p : params_)
        if (p.trainable && p.part == part) out.push_back(p.tensor);
    return out;
}

void SegModel::zero_grads() {
    for (auto& p : params_) p.tensor.zero_grad();
}

size_t SegModel::partition_size(Partition part) const {
    size_t n = 0;
    for (const auto& p : params_)
        if (p.part == part) n += p.tensor.vec().size();
    return n;
}

std::vector<float> SegModel::flatten(Partition part) const {
    std::vector<float> out;
    out.reserve(partition_size(part));
    for (const auto& p : params_)
        if (p.part == part) out.insert(out.end(), p.tensor.vec().begin(), p.tensor.vec().end());
    return out;
}

void SegModel::load_partition(Partition part, const std::vector<float>& v) {
    if (v.size() != partition_size(part))
        throw std::invalid_argument(std::string("load_partition: length mismatch for ") +
                                    partition_name(part));
    size_t off = 0;
    for (auto& p : params_)
        if (p.part == part) {
            std::copy(v.begin() + static_cast<long>(off),
                      v.begin() + static_cast<long>(off + p.tensor.vec().size()),
                      p.tensor.vec().begin());
            off += p.tensor.vec().size();
        }
}

std::vector<float> SegModel::prompt_vector(const std::vector<float>& theta, int client_id) const {
    if (!cfg_.use_tdf) throw std::logic_error("prompt_vector: model has no prompts");
    if (client_id < 0 || client_id >= cfg_.num_clients)
        throw std::invalid_argument("prompt_vector: client_id out of range");
    if (theta.size() != partition_size(Partition::Theta))
        throw std::invalid_argument("prompt_vector: theta length mismatch");
    const size_t plane = static_cast<size_t>(bottleneck_h()) * bottleneck_w();
    size_t off = 0, ukp_off = 0, ddp_off = 0;
    for (const auto& p : params_) {
        if (p.part != Partition::Theta) continue;
        if (p.name == "tdf.ukp") ukp_off = off;
        if (p.name == "tdf.ddp") ddp_off = off;
        off += p.tensor.vec().size();
    }
    std::vector<float> out;
    out.reserve(2 * plane);
    out.insert(out.end(), theta.begin() + static_cast<long>(ukp_off),
               theta.begin() + static_cast<long>(ukp_off + plane));
    const size_t row = ddp_off + plane * static_cast<size_t>(client_id);
    out.insert(out.end(), theta.begin() + static_cast<long>(row),
               theta.begin() + static_cast<long>(row + plane));
    return out;
}

void SegModel::save_checkpoint(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    json manifest = json::array();
    for (const auto& p : params_)
        manifest.push_back({{"name", p.name},
                            {"shape", p.tensor.shape()},
                            {"trainable", p.trainable},
                            {"partition", partition_name(p.part)}});
    json cfg{{"base_channels", cfg_.base_channels}, {"depth", cfg_.depth},
             {"num_classes", cfg_.num_classes},     {"num_clients", cfg_.num_clients},
             {"height", cfg_.height},               {"width", cfg_.width},
             {"use_tdf", cfg_.use_tdf},             {"dual_decoder", cfg_.dual_decoder},
             {"seed", cfg_.seed},                   {"manifest", manifest}};
    std::ofstream f(dir / "config.json");
    f << cfg.dump(2) << "\n";
    for (Partition part : {Partition::Theta, Partition::Phi, Partition::PhiBar}) {
        auto v = flatten(part);
        if (v.empty()) continue;
        const int len = static_cast<int>(v.size());
        Tensor t(Shape{len}, std::move(v));
        save_tensor(dir / (std::string(partition_name(part)) + ".flt"), t);
    }
}

SegModel SegModel::load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream f(dir / "config.json");
    if (!f) throw std::runtime_error("load_checkpoint: missing config.json in " + dir.string());
    json cfg = json::parse(f);
    ModelConfig mc;
    mc.base_channels = cfg.at("base_channels");
    mc.depth = cfg.at("depth");
    mc.num_classes = cfg.at("num_classes");
    mc.num_clients = cfg.at("num_clients");
    mc.height = cfg.at("height");
    mc.width = cfg.at("width");
    mc.use_tdf = cfg.at("use_tdf");
    mc.dual_decoder = cfg.at("dual_decoder");
    mc.seed = cfg.at("seed");
    SegModel m(mc);
    for (Partition part : {Partition::Theta, Partition::Phi, Partition::PhiBar}) {
        const auto path = dir / (std::string(partition_name(part)) + ".flt");
        if (!std::filesystem::exists(path)) continue;
        Tensor t = load_tensor(path);
        m.load_partition(part, t.vec());
    }
    return m;
}

std::vector<Image8> SegModel::predict_classes(const Tensor& probs) {
    if (probs.ndim() != 4) throw std::invalid_argument("predict_classes: need [N,K,H,W]");
    const int n = probs.dim(0), k = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
    const size_t hw = static_cast<size_t>(h) * w;
    std::vector<Image8> out;
    for (int b = 0; b < n; ++b) {
        Image8 img(h, w, 0);
        for (size_t p = 0; p < hw; ++p) {
            int best = 0;
            float bv = probs.data()[(static_cast<size_t>(b) * k) * hw + p];
            for (int c = 1; c < k; ++c) {
                const float v = probs.data()[(static_cast<size_t>(b) * k + c) * hw + p];
                if (v > bv) { bv = v; best = c; }
            }
            img.v[p] = static_cast<uint8_t>(best);
        }
        out.push_back(std::move(img));
    }
    return out;
}

}  // namespace fedlppa
