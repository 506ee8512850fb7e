#include "fedlppa/federation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "fedlppa/optim.hpp"

namespace fedlppa {

using nlohmann::json;

std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::Random: return "random";
        case Strategy::FixedOrder: return "fixed_order";
        case Strategy::HPS: return "hps";
        case Strategy::PSA: return "psa";
    }
    throw std::logic_error("bad strategy");
}

std::string to_string(Method m) {
    switch (m) {
        case Method::FedLPPA: return "fedlppa";
        case Method::FedAvg: return "fedavg";
        case Method::Local: return "local";
        case Method::CentralizedWeak: return "centralized_weak";
        case Method::CentralizedFull: return "centralized_full";
    }
    throw std::logic_error("bad method");
}

Strategy strategy_from_string(const std::string& s) {
    if (s == "random") return Strategy::Random;
    if (s == "fixed_order") return Strategy::FixedOrder;
    if (s == "hps") return Strategy::HPS;
    if (s == "psa") return Strategy::PSA;
    throw std::invalid_argument("unknown strategy: " + s);
}

Method method_from_string(const std::string& s) {
    if (s == "fedlppa") return Method::FedLPPA;
    if (s == "fedavg") return Method::FedAvg;
    if (s == "local") return Method::Local;
    if (s == "centralized_weak") return Method::CentralizedWeak;
    if (s == "centralized_full") return Method::CentralizedFull;
    throw std::invalid_argument("unknown method: " + s);
}

std::vector<float> aggregate_sample_weighted(const std::vector<std::vector<float>>& vecs,
                                             const std::vector<int>& sizes) {
    if (vecs.empty() || vecs.size() != sizes.size())
        throw std::invalid_argument("aggregate_sample_weighted: bad inputs");
    double total = 0.0;
    for (size_t i = 0; i < sizes.size(); ++i) {
        if (sizes[i] < 1) throw std::invalid_argument("aggregate_sample_weighted: size < 1");
        if (vecs[i].size() != vecs[0].size())
            throw std::invalid_argument("aggregate_sample_weighted: length mismatch");
        total += sizes[i];
    }
    std::vector<float> out(vecs[0].size(), 0.0f);
    for (size_t i = 0; i < vecs.size(); ++i) {
        const float w = static_cast<float>(sizes[i] / total);
        for (size_t k = 0; k < out.size(); ++k) out[k] += w * vecs[i][k];
    }
    return out;
}

std::vector<std::vector<float>> compute_affinity(const std::vector<std::vector<float>>& prompts) {
    const size_t n = prompts.size();
    if (n == 0) throw std::invalid_argument("compute_affinity: no prompts");
    std::vector<double> norms(n);
    for (size_t i = 0; i < n; ++i) {
        if (prompts[i].size() != prompts[0].size())
            throw std::invalid_argument("compute_affinity: shape mismatch");
        double s = 0.0;
        for (float v : prompts[i]) s += static_cast<double>(v) * v;
        norms[i] = std::sqrt(s);
        if (norms[i] == 0.0) throw std::invalid_argument("compute_affinity: zero-norm prompt");
    }
    std::vector<std::vector<float>> a(n, std::vector<float>(n, 0.0f));
    for (size_t i = 0; i < n; ++i) {
        a[i][i] = 1.0f;
        for (size_t j = i + 1; j < n; ++j) {
            double dot = 0.0;
            for (size_t k = 0; k < prompts[i].size(); ++k)
                dot += static_cast<double>(prompts[i][k]) * prompts[j][k];
            const float c = static_cast<float>(std::max(0.0, dot / (norms[i] * norms[j])));
            a[i][j] = a[j][i] = std::min(c, 1.0f);
        }
    }
    return a;
}

std::vector<int> random_derangement(int n, std::mt19937_64& rng) {
    if (n < 1) throw std::invalid_argument("random_derangement: n < 1");
    std::vector<int> p(static_cast<size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    if (n == 1) return p;
    // rejection sampling: shuffle until no fixed points
    for (;;) {
        std::shuffle(p.begin(), p.end(), rng);
        bool ok = true;
        for (int i = 0; i < n; ++i)
            if (p[static_cast<size_t>(i)] == i) { ok = false; break; }
        if (ok) return p;
    }
}

std::vector<std::vector<float>> assign_aux(Strategy strategy,
                                           const std::vector<std::vector<float>>& phis,
                                           const std::vector<std::vector<float>>& affinity,
                                           std::mt19937_64& rng) {
    const int n = static_cast<int>(phis.size());
    if (n == 0) throw std::invalid_argument("assign_aux: no clients");
    std::vector<std::vector<float>> out(static_cast<size_t>(n));
    if (n == 1) { out[0] = phis[0]; return out; }
    switch (strategy) {
        case Strategy::Random: {
            const auto perm = random_derangement(n, rng);
            for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = phis[static_cast<size_t>(perm[static_cast<size_t>(i)])];
            break;
        }
        case Strategy::FixedOrder:
            for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = phis[static_cast<size_t>((i + 1) % n)];
            break;
        case Strategy::HPS:
            for (int i = 0; i < n; ++i) {
                int best = i;
                float bv = 0.0f;
                for (int j = 0; j < n; ++j) {
                    if (j == i) continue;
                    const float a = affinity[static_cast<size_t>(i)][static_cast<size_t>(j)];
                    if (a > bv) { bv = a; best = j; }
                }
                out[static_cast<size_t>(i)] = phis[static_cast<size_t>(best)];
            }
            break;
        case Strategy::PSA:
            for (int i = 0; i < n; ++i) {
                double row = 0.0;
                for (int j = 0; j < n; ++j) row += affinity[static_cast<size_t>(i)][static_cast<size_t>(j)];
                std::vector<float> acc(phis[0].size(), 0.0f);
                for (int j = 0; j < n; ++j) {
                    const float w = static_cast<float>(affinity[static_cast<size_t>(i)][static_cast<size_t>(j)] / row);
                    const auto& v = phis[static_cast<size_t>(j)];
                    for (size_t k = 0; k < acc.size(); ++k) acc[k] += w * v[k];
                }
                out[static_cast<size_t>(i)] = std::move(acc);
            }
            break;
    }
    return out;
}

std::vector<float> la_blend(const std::vector<float>& prev, const std::vector<float>& incoming,
                            const std::vector<float>& w) {
    if (prev.size() != incoming.size() || prev.size() != w.size())
        throw std::invalid_argument("la_blend: length mismatch");
    std::vector<float> out(prev.size());
    for (size_t k = 0; k < prev.size(); ++k) {
        // exact endpoints: the residual form drifts by one ulp at w = 1
        if (w[k] == 1.0f) out[k] = incoming[k];
        else if (w[k] == 0.0f) out[k] = prev[k];
        else out[k] = prev[k] + (incoming[k] - prev[k]) * w[k];
    }
    return out;
}

namespace {

void clamp01(std::vector<float>& v) {
    for (float& x : v) x = std::clamp(x, 0.0f, 1.0f);
}

// Flat gradient vector aligned with SegModel::flatten for one partition;
// entries without a gradient (buffers, unused params) come back as zeros.
std::vector<float> flatten_grads(const SegModel& model, Partition part) {
    std::vector<float> out;
    out.reserve(model.partition_size(part));
    for (const auto& p : model.params()) {
        if (p.part != part) continue;
        const auto& g = p.tensor.grad();
        if (p.trainable && g.size() == p.tensor.vec().size())
            out.insert(out.end(), g.begin(), g.end());
        else
            out.insert(out.end(), p.tensor.vec().size(), 0.0f);
    }
    return out;
}

}  // namespace

int learnable_aggregation(SegModel& model,
                          const std::vector<float>& phi_prev, const std::vector<float>& phi_g,
                          std::vector<float>& w_m,
                          const std::vector<float>& phibar_prev,
                          const std::vector<float>& phibar_g, std::vector<float>& w_a,
                          const Tensor& images, std::span<const Image8> labels,
                          int client_id, Sparsity asp, const LAConfig& cfg,
                          std::mt19937_64& rng) {
    const bool aux = !phibar_prev.empty();
    const int iters = cfg.round > 2 ? 2 : cfg.max_iters;
    float prev_loss = 0.0f;
    int used = 0;
    for (int it = 0; it < iters; ++it) {
        model.load_partition(Partition::Phi, la_blend(phi_prev, phi_g, w_m));
        if (aux) model.load_partition(Partition::PhiBar, la_blend(phibar_prev, phibar_g, w_a));
        model.zero_grads();
        auto out = model.forward(images, client_id, asp, true);
        Tensor loss = wss_objective(out.p_m, out.p_a, labels, cfg.loss, rng);
        backward(loss);
        const float l = loss.item();
        const auto g_m = flatten_grads(model, Partition::Phi);
        for (size_t k = 0; k < w_m.size(); ++k)
            w_m[k] -= cfg.lr * g_m[k] * (phi_g[k] - phi_prev[k]);
        clamp01(w_m);
        if (aux) {
            const auto g_a = flatten_grads(model, Partition::PhiBar);
            for (size_t k = 0; k < w_a.size(); ++k)
                w_a[k] -= cfg.lr * g_a[k] * (phibar_g[k] - phibar_prev[k]);
            clamp01(w_a);
        }
        ++used;
        if (cfg.round <= 2 && it > 0 &&
            std::fabs(l - prev_loss) / std::max(std::fabs(prev_loss), 1e-12f) < cfg.tol)
            { prev_loss = l; break; }
        prev_loss = l;
    }
    model.load_partition(Partition::Phi, la_blend(phi_prev, phi_g, w_m));
    if (aux) model.load_partition(Partition::PhiBar, la_blend(phibar_prev, phibar_g, w_a));
    return used;
}

// ---------------------------------------------------------------------------
// Experiment driver
// ---------------------------------------------------------------------------

namespace {

struct Batch {
    Tensor images;
    std::vector<Image8> labels;
};

Batch make_batch(const std::vector<Sample>& data, const std::vector<int>& idx, bool full_labels) {
    if (idx.empty()) throw std::invalid_argument("make_batch: empty index list");
    const int h = data[0].image.h, w = data[0].image.w;
    Batch b;
    b.images = Tensor(Shape{static_cast<int>(idx.size()), 1, h, w});
    float* dst = b.images.data();
    const size_t hw = static_cast<size_t>(h) * w;
    for (size_t k = 0; k < idx.size(); ++k) {
        const Sample& s = data[static_cast<size_t>(idx[k])];
        std::copy(s.image.v.begin(), s.image.v.end(), dst + k * hw);
        b.labels.push_back(full_labels ? s.mask : s.weak);
    }
    return b;
}

std::vector<int> draw_indices(int n, int count, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> u(0, n - 1);
    std::vector<int> idx(static_cast<size_t>(count));
    for (auto& i : idx) i = u(rng);
    return idx;
}

// Runs `iters` optimizer steps on the model; returns the mean loss.
float train_iters(SegModel& model, const std::vector<Sample>& data, int client_id,
                  Sparsity asp, bool full_labels, AdamW& opt, float lr, int iters,
                  int batch, const LossConfig& lcfg, std::mt19937_64& rng) {
    if (data.empty()) throw std::invalid_argument("train_iters: empty dataset");
    auto params = model.trainable_params();
    double total = 0.0;
    for (int it = 0; it < iters; ++it) {
        Batch b = make_batch(data, draw_indices(static_cast<int>(data.size()), batch, rng),
                             full_labels);
        model.zero_grads();
        auto out = model.forward(b.images, client_id, asp, true);
        Tensor loss = wss_objective(out.p_m, out.p_a, b.labels, lcfg, rng);
        backward(loss);
        opt.step(params, lr);
        total += loss.item();
    }
    return iters > 0 ? static_cast<float>(total / iters) : 0.0f;
}

struct CsvWriter {
    std::ofstream f;
    int num_classes = 2;

    void open(const std::filesystem::path& p, int k) {
        num_classes = k;
        f.open(p);
        if (!f) throw std::runtime_error("cannot write " + p.string());
        f << "round,site";
        for (int c = 1; c < k; ++c) f << ",dsc_" << c;
        for (int c = 1; c < k; ++c) f << ",hd95_" << c;
        f << ",loss\n";
    }
    void row(int round, int site, const ClassMetrics& m, float loss) {
        if (!f.is_open()) return;
        char buf[64];
        f << round << ',' << site;
        for (double d : m.dice) { std::snprintf(buf, sizeof(buf), ",%.6f", d); f << buf; }
        for (double d : m.hd95) { std::snprintf(buf, sizeof(buf), ",%.6f", d); f << buf; }
        std::snprintf(buf, sizeof(buf), ",%.6f\n", static_cast<double>(loss));
        f << buf;
    }
};

struct MsgLog {
    std::ofstream f;
    void open(const std::filesystem::path& p) {
        f.open(p);
        if (!f) throw std::runtime_error("cannot write " + p.string());
    }
    void record(int round, const char* direction, int client, size_t bytes) {
        if (!f.is_open()) return;
        f << json{{"round", round}, {"direction", direction}, {"client", client},
                  {"bytes", bytes}}.dump() << "\n";
    }
};

void write_affinity_csv(const std::filesystem::path& dir, int round,
                        const std::vector<std::vector<float>>& a) {
    std::ofstream f(dir / ("affinity_round_" + std::to_string(round) + ".csv"));
    char buf[32];
    for (const auto& row : a) {
        for (size_t j = 0; j < row.size(); ++j) {
            std::snprintf(buf, sizeof(buf), "%s%.6f", j ? "," : "", static_cast<double>(row[j]));
            f << buf;
        }
        f << "\n";
    }
}

struct LoadedSites {
    std::vector<SiteDataset> sites;
    std::vector<Sparsity> asp;
    std::vector<int> sizes;
    int h = 0, w = 0;
};

LoadedSites load_all(const std::filesystem::path& dir) {
    LoadedSites out;
    const int n = count_sites(dir);
    if (n == 0) throw std::runtime_error("no site_<k> directories under " + dir.string());
    for (int i = 0; i < n; ++i) {
        out.sites.push_back(load_site(dir, i));
        const auto& sp = out.sites.back().spec;
        out.asp.push_back(sp.sparsity());
        out.sizes.push_back(static_cast<int>(out.sites.back().train.size()));
        out.h = sp.height;
        out.w = sp.width;
    }
    return out;
}

RunResult finalize(const std::vector<ClassMetrics>& per_site) {
    RunResult r;
    for (const auto& m : per_site) {
        r.site_dice.push_back(m.mean_dice);
        r.site_hd95.push_back(m.mean_hd95);
        r.mean_dice += m.mean_dice;
        r.mean_hd95 += m.mean_hd95;
    }
    r.mean_dice /= static_cast<double>(per_site.size());
    r.mean_hd95 /= static_cast<double>(per_site.size());
    return r;
}

constexpr uint64_t kRngClient = 0xC11E57ULL;
constexpr uint64_t kRngStrategy = 0x57A7ULL;

// Sigmoid ramp-up of the pseudo-label consistency weight: early rounds train
// on the sparse annotations alone so the self-training term cannot lock in
// the mistakes of an untrained model.
LossConfig ramp_loss(const LossConfig& base, int t, int rounds) {
    LossConfig out = base;
    if (rounds > 1) {
        const float x = static_cast<float>(t - 1) / static_cast<float>(rounds - 1);
        out.lambda = base.lambda * std::exp(-5.0f * (1.0f - x) * (1.0f - x));
    }
    return out;
}

// flatten-order spans of the non-trainable entries (normalization statistics)
std::vector<std::pair<size_t, size_t>> buffer_spans(const SegModel& m, Partition part) {
    std::vector<std::pair<size_t, size_t>> out;
    size_t off = 0;
    for (const auto& p : m.params()) {
        if (p.part != part) continue;
        const size_t len = p.tensor.vec().size();
        if (!p.trainable) out.emplace_back(off, len);
        off += len;
    }
    return out;
}

RunResult run_fedlppa(const RunConfig& cfg, const LoadedSites& ds) {
    const int n = static_cast<int>(ds.sites.size());
    ModelConfig mc;
    mc.base_channels = cfg.base_channels;
    mc.depth = cfg.depth;
    mc.num_clients = n;
    mc.height = ds.h;
    mc.width = ds.w;
    mc.use_tdf = cfg.tdf_on;
    mc.dual_decoder = true;
    mc.seed = cfg.seed;

    struct Client {
        SegModel model;
        AdamW opt;
        std::mt19937_64 rng;
        std::vector<float> w_m, w_a;
        float last_loss = 0.0f;
    };
    std::vector<Client> clients;
    clients.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        clients.push_back({SegModel(mc), AdamW{},
                           std::mt19937_64(derive_seed(cfg.seed, kRngClient, static_cast<uint64_t>(i), 0)),
                           {}, {}, 0.0f});
    const size_t len_theta = clients[0].model.partition_size(Partition::Theta);
    const size_t len_phi = clients[0].model.partition_size(Partition::Phi);
    const size_t len_phibar = clients[0].model.partition_size(Partition::PhiBar);
    for (auto& c : clients) {
        c.w_m.assign(len_phi, 1.0f);
        c.w_a.assign(len_phibar, 1.0f);
    }

    const auto theta_stats = buffer_spans(clients[0].model, Partition::Theta);
    std::vector<float> theta_g = clients[0].model.flatten(Partition::Theta);
    std::vector<float> phi_g = clients[0].model.flatten(Partition::Phi);
    std::vector<std::vector<float>> phibar_g(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        phibar_g[static_cast<size_t>(i)] = clients[static_cast<size_t>(i)].model.flatten(Partition::PhiBar);

    CsvWriter csv;
    MsgLog msgs;
    const bool writing = !cfg.run_dir.empty();
    if (writing) {
        std::filesystem::create_directories(cfg.run_dir);
        csv.open(cfg.run_dir / "metrics.csv", clients[0].model.config().num_classes);
        msgs.open(cfg.run_dir / "messages.jsonl");
    }

    std::vector<ClassMetrics> last_eval(static_cast<size_t>(n));
    bool evaluated = false;

    for (int t = 1; t <= cfg.rounds; ++t) {
        const float lr = poly_lr(cfg.base_lr, t - 1, cfg.rounds);
        const LossConfig loss_t = ramp_loss(cfg.loss, t, cfg.rounds);
        for (int i = 0; i < n; ++i) {
            Client& c = clients[static_cast<size_t>(i)];
            const auto& train = ds.sites[static_cast<size_t>(i)].train;
            msgs.record(t, "down", i, 4 * (len_theta + len_phi + len_phibar));
            // adopt the shared encoder weights but keep this client's own
            // normalization statistics: batch-norm moments track the local
            // intensity distribution and averaging them across sites breaks
            // evaluation under appearance shift
            auto theta_in = theta_g;
            const auto theta_own = c.model.flatten(Partition::Theta);
            for (const auto& [off, len] : theta_stats)
                std::copy(theta_own.begin() + static_cast<long>(off),
                          theta_own.begin() + static_cast<long>(off + len),
                          theta_in.begin() + static_cast<long>(off));
            c.model.load_partition(Partition::Theta, theta_in);
            if (cfg.la_on) {
                const auto phi_prev = c.model.flatten(Partition::Phi);
                const auto phibar_prev = c.model.flatten(Partition::PhiBar);
                Batch b = make_batch(train,
                                     draw_indices(static_cast<int>(train.size()), cfg.batch, c.rng),
                                     false);
                LAConfig la;
                la.round = t;
                la.lr = lr;
                la.loss = loss_t;
                learnable_aggregation(c.model, phi_prev, phi_g, c.w_m, phibar_prev,
                                      phibar_g[static_cast<size_t>(i)], c.w_a, b.images,
                                      b.labels, i, ds.asp[static_cast<size_t>(i)], la, c.rng);
            } else {
                c.model.load_partition(Partition::Phi, phi_g);
                c.model.load_partition(Partition::PhiBar, phibar_g[static_cast<size_t>(i)]);
            }
            c.last_loss = train_iters(c.model, train, i, ds.asp[static_cast<size_t>(i)], false,
                                      c.opt, lr, cfg.local_iters, cfg.batch, loss_t, c.rng);
            msgs.record(t, "up", i, 4 * (len_theta + len_phi));
        }

        // server: Eq. 2 aggregation of theta and phi from the uploads
        std::vector<std::vector<float>> thetas, phis;
        for (auto& c : clients) {
            thetas.push_back(c.model.flatten(Partition::Theta));
            phis.push_back(c.model.flatten(Partition::Phi));
        }
        theta_g = aggregate_sample_weighted(thetas, ds.sizes);
        phi_g = aggregate_sample_weighted(phis, ds.sizes);

        // auxiliary-decoder assignment from the uploaded main decoders
        if (cfg.pd_on) {
            std::vector<std::vector<float>> affinity;
            if (cfg.tdf_on) {
                std::vector<std::vector<float>> prompts;
                for (int i = 0; i < n; ++i)
                    prompts.push_back(clients[0].model.prompt_vector(thetas[static_cast<size_t>(i)], i));
                affinity = compute_affinity(prompts);
                if (writing) write_affinity_csv(cfg.run_dir, t, affinity);
            }
            std::vector<std::vector<float>> dec;
            for (auto& p : phis) dec.emplace_back(p.begin(), p.begin() + static_cast<long>(len_phibar));
            std::mt19937_64 srng(derive_seed(cfg.seed, kRngStrategy, static_cast<uint64_t>(t), 0));
            phibar_g = assign_aux(cfg.strategy, dec, affinity, srng);
        } else {
            // no personalized assignment: every client receives the ordinary
            // aggregated decoder prefix as its auxiliary decoder
            const std::vector<float> shared(phi_g.begin(),
                                            phi_g.begin() + static_cast<long>(len_phibar));
            for (int i = 0; i < n; ++i) phibar_g[static_cast<size_t>(i)] = shared;
            if (cfg.tdf_on && writing) {
                std::vector<std::vector<float>> prompts;
                for (int i = 0; i < n; ++i)
                    prompts.push_back(clients[0].model.prompt_vector(thetas[static_cast<size_t>(i)], i));
                write_affinity_csv(cfg.run_dir, t, compute_affinity(prompts));
            }
        }

        if (t % cfg.eval_every == 0 || t == cfg.rounds) {
            for (int i = 0; i < n; ++i) {
                Client& c = clients[static_cast<size_t>(i)];
                last_eval[static_cast<size_t>(i)] = evaluate_on(
                    c.model, ds.sites[static_cast<size_t>(i)].test, i, ds.asp[static_cast<size_t>(i)]);
                csv.row(t, i, last_eval[static_cast<size_t>(i)], c.last_loss);
            }
            evaluated = true;
        }
    }

    if (!evaluated)
        for (int i = 0; i < n; ++i)
            last_eval[static_cast<size_t>(i)] = evaluate_on(
                clients[static_cast<size_t>(i)].model, ds.sites[static_cast<size_t>(i)].test, i,
                ds.asp[static_cast<size_t>(i)]);
    if (writing)
        for (int i = 0; i < n; ++i)
            clients[static_cast<size_t>(i)].model.save_checkpoint(
                cfg.run_dir / "checkpoints" / ("site_" + std::to_string(i)));
    return finalize(last_eval);
}

RunResult run_fedavg(const RunConfig& cfg, const LoadedSites& ds) {
    const int n = static_cast<int>(ds.sites.size());
    ModelConfig mc;
    mc.base_channels = cfg.base_channels;
    mc.depth = cfg.depth;
    mc.num_clients = n;
    mc.height = ds.h;
    mc.width = ds.w;
    mc.use_tdf = false;
    mc.dual_decoder = false;
    mc.seed = cfg.seed;
    SegModel model(mc);
    const size_t len_theta = model.partition_size(Partition::Theta);
    const size_t len_phi = model.partition_size(Partition::Phi);

    std::vector<AdamW> opts(static_cast<size_t>(n));
    std::vector<std::mt19937_64> rngs;
    for (int i = 0; i < n; ++i)
        rngs.emplace_back(derive_seed(cfg.seed, kRngClient, static_cast<uint64_t>(i), 0));

    std::vector<float> theta_g = model.flatten(Partition::Theta);
    std::vector<float> phi_g = model.flatten(Partition::Phi);

    CsvWriter csv;
    MsgLog msgs;
    const bool writing = !cfg.run_dir.empty();
    if (writing) {
        std::filesystem::create_directories(cfg.run_dir);
        csv.open(cfg.run_dir / "metrics.csv", mc.num_classes);
        msgs.open(cfg.run_dir / "messages.jsonl");
    }

    std::vector<ClassMetrics> last_eval(static_cast<size_t>(n));
    bool evaluated = false;
    std::vector<float> losses(static_cast<size_t>(n), 0.0f);

    for (int t = 1; t <= cfg.rounds; ++t) {
        const float lr = poly_lr(cfg.base_lr, t - 1, cfg.rounds);
        const LossConfig loss_t = ramp_loss(cfg.loss, t, cfg.rounds);
        std::vector<std::vector<float>> thetas, phis;
        for (int i = 0; i < n; ++i) {
            msgs.record(t, "down", i, 4 * (len_theta + len_phi));
            model.load_partition(Partition::Theta, theta_g);
            model.load_partition(Partition::Phi, phi_g);
            losses[static_cast<size_t>(i)] = train_iters(
                model, ds.sites[static_cast<size_t>(i)].train, 0, ds.asp[static_cast<size_t>(i)],
                false, opts[static_cast<size_t>(i)], lr, cfg.local_iters, cfg.batch, loss_t,
                rngs[static_cast<size_t>(i)]);
            thetas.push_back(model.flatten(Partition::Theta));
            phis.push_back(model.flatten(Partition::Phi));
            msgs.record(t, "up", i, 4 * (len_theta + len_phi));
        }
        theta_g = aggregate_sample_weighted(thetas, ds.sizes);
        phi_g = aggregate_sample_weighted(phis, ds.sizes);

        if (t % cfg.eval_every == 0 || t == cfg.rounds) {
            model.load_partition(Partition::Theta, theta_g);
            model.load_partition(Partition::Phi, phi_g);
            for (int i = 0; i < n; ++i) {
                last_eval[static_cast<size_t>(i)] = evaluate_on(
                    model, ds.sites[static_cast<size_t>(i)].test, 0, ds.asp[static_cast<size_t>(i)]);
                csv.row(t, i, last_eval[static_cast<size_t>(i)], losses[static_cast<size_t>(i)]);
            }
            evaluated = true;
        }
    }
    model.load_partition(Partition::Theta, theta_g);
    model.load_partition(Partition::Phi, phi_g);
    if (!evaluated)
        for (int i = 0; i < n; ++i)
            last_eval[static_cast<size_t>(i)] = evaluate_on(
                model, ds.sites[static_cast<size_t>(i)].test, 0, ds.asp[static_cast<size_t>(i)]);
    if (writing) model.save_checkpoint(cfg.run_dir / "checkpoints" / "global");
    return finalize(last_eval);
}

RunResult run_local(const RunConfig& cfg, const LoadedSites& ds) {
    const int n = static_cast<int>(ds.sites.size());
    ModelConfig mc;
    mc.base_channels = cfg.base_channels;
    mc.depth = cfg.depth;
    mc.num_clients = n;
    mc.height = ds.h;
    mc.width = ds.w;
    mc.use_tdf = false;
    mc.dual_decoder = false;
    mc.seed = cfg.seed;

    struct Client {
        SegModel model;
        AdamW opt;
        std::mt19937_64 rng;
        float last_loss = 0.0f;
    };
    std::vector<Client> clients;
    for (int i = 0; i < n; ++i)
        clients.push_back({SegModel(mc), AdamW{},
                           std::mt19937_64(derive_seed(cfg.seed, kRngClient, static_cast<uint64_t>(i), 0)),
                           0.0f});

    CsvWriter csv;
    const bool writing = !cfg.run_dir.empty();
    if (writing) {
        std::filesystem::create_directories(cfg.run_dir);
        csv.open(cfg.run_dir / "metrics.csv", mc.num_classes);
    }
    std::vector<ClassMetrics> last_eval(static_cast<size_t>(n));
    bool evaluated = false;
    for (int t = 1; t <= cfg.rounds; ++t) {
        const float lr = poly_lr(cfg.base_lr, t - 1, cfg.rounds);
        const LossConfig loss_t = ramp_loss(cfg.loss, t, cfg.rounds);
        for (int i = 0; i < n; ++i) {
            Client& c = clients[static_cast<size_t>(i)];
            c.last_loss = train_iters(c.model, ds.sites[static_cast<size_t>(i)].train, 0,
                                      ds.asp[static_cast<size_t>(i)], false, c.opt, lr,
                                      cfg.local_iters, cfg.batch, loss_t, c.rng);
        }
        if (t % cfg.eval_every == 0 || t == cfg.rounds) {
            for (int i = 0; i < n; ++i) {
                last_eval[static_cast<size_t>(i)] = evaluate_on(
                    clients[static_cast<size_t>(i)].model, ds.sites[static_cast<size_t>(i)].test,
                    0, ds.asp[static_cast<size_t>(i)]);
                csv.row(t, i, last_eval[static_cast<size_t>(i)],
                        clients[static_cast<size_t>(i)].last_loss);
            }
            evaluated = true;
        }
    }
    if (!evaluated)
        for (int i = 0; i < n; ++i)
            last_eval[static_cast<size_t>(i)] = evaluate_on(
                clients[static_cast<size_t>(i)].model, ds.sites[static_cast<size_t>(i)].test, 0,
                ds.asp[static_cast<size_t>(i)]);
    if (writing)
        for (int i = 0; i < n; ++i)
            clients[static_cast<size_t>(i)].model.save_checkpoint(
                cfg.run_dir / "checkpoints" / ("site_" + std::to_string(i)));
    return finalize(last_eval);
}

RunResult run_centralized(const RunConfig& cfg, const LoadedSites& ds, bool full_labels) {
    const int n = static_cast<int>(ds.sites.size());
    ModelConfig mc;
    mc.base_channels = cfg.base_channels;
    mc.depth = cfg.depth;
    mc.num_clients = n;
    mc.height = ds.h;
    mc.width = ds.w;
    mc.use_tdf = false;
    mc.dual_decoder = false;
    mc.seed = cfg.seed;
    SegModel model(mc);
    AdamW opt;
    std::mt19937_64 rng(derive_seed(cfg.seed, kRngClient, 0, 0));

    std::vector<Sample> pool;
    for (const auto& s : ds.sites) pool.insert(pool.end(), s.train.begin(), s.train.end());

    CsvWriter csv;
    const bool writing = !cfg.run_dir.empty();
    if (writing) {
        std::filesystem::create_directories(cfg.run_dir);
        csv.open(cfg.run_dir / "metrics.csv", mc.num_classes);
    }
    std::vector<ClassMetrics> last_eval(static_cast<size_t>(n));
    bool evaluated = false;
    float loss = 0.0f;
    for (int t = 1; t <= cfg.rounds; ++t) {
        const float lr = poly_lr(cfg.base_lr, t - 1, cfg.rounds);
        const LossConfig loss_t = ramp_loss(cfg.loss, t, cfg.rounds);
        loss = train_iters(model, pool, 0, Sparsity::Medium, full_labels, opt, lr,
                           cfg.local_iters, cfg.batch, loss_t, rng);
        if (t % cfg.eval_every == 0 || t == cfg.rounds) {
            for (int i = 0; i < n; ++i) {
                last_eval[static_cast<size_t>(i)] = evaluate_on(
                    model, ds.sites[static_cast<size_t>(i)].test, 0, ds.asp[static_cast<size_t>(i)]);
                csv.row(t, i, last_eval[static_cast<size_t>(i)], loss);
            }
            evaluated = true;
        }
    }
    if (!evaluated)
        for (int i = 0; i < n; ++i)
            last_eval[static_cast<size_t>(i)] = evaluate_on(
                model, ds.sites[static_cast<size_t>(i)].test, 0, ds.asp[static_cast<size_t>(i)]);
    if (writing) model.save_checkpoint(cfg.run_dir / "checkpoints" / "global");
    return finalize(last_eval);
}

}  // namespace

ClassMetrics evaluate_on(SegModel& model, const std::vector<Sample>& test, int client_id,
                         Sparsity asp, int eval_batch) {
    if (test.empty()) throw std::invalid_argument("evaluate_on: empty test set");
    NoGradGuard ng;
    const int k = model.config().num_classes;
    ClassMetrics acc;
    acc.dice.assign(static_cast<size_t>(k - 1), 0.0);
    acc.hd95.assign(static_cast<size_t>(k - 1), 0.0);
    size_t count = 0;
    for (size_t start = 0; start < test.size(); start += static_cast<size_t>(eval_batch)) {
        std::vector<int> idx;
        for (size_t j = start; j < std::min(test.size(), start + static_cast<size_t>(eval_batch)); ++j)
            idx.push_back(static_cast<int>(j));
        Batch b = make_batch(test, idx, true);
        auto out = model.forward(b.images, client_id, asp, false);
        auto preds = SegModel::predict_classes(out.p_m);
        for (size_t j = 0; j < preds.size(); ++j) {
            ClassMetrics m = evaluate_classes(preds[j], test[start + j].mask, k);
            for (size_t c = 0; c + 1 < static_cast<size_t>(k); ++c) {
                acc.dice[c] += m.dice[c];
                acc.hd95[c] += m.hd95[c];
            }
            ++count;
        }
    }
    for (size_t c = 0; c + 1 < static_cast<size_t>(k); ++c) {
        acc.dice[c] /= static_cast<double>(count);
        acc.hd95[c] /= static_cast<double>(count);
        acc.mean_dice += acc.dice[c];
        acc.mean_hd95 += acc.hd95[c];
    }
    acc.mean_dice /= static_cast<double>(k - 1);
    acc.mean_hd95 /= static_cast<double>(k - 1);
    return acc;
}

RunResult run_experiment(const RunConfig& cfg) {
    if (cfg.rounds < 0) throw std::invalid_argument("run_experiment: rounds < 0");
    if (cfg.method == Method::FedLPPA && cfg.pd_on && !cfg.tdf_on &&
        (cfg.strategy == Strategy::HPS || cfg.strategy == Strategy::PSA))
        throw std::invalid_argument("run_experiment: similarity strategies need the fusion module");
    LoadedSites ds = load_all(cfg.dataset_dir);
    switch (cfg.method) {
        case Method::FedLPPA: return run_fedlppa(cfg, ds);
        case Method::FedAvg: return run_fedavg(cfg, ds);
        case Method::Local: return run_local(cfg, ds);
        case Method::CentralizedWeak: return run_centralized(cfg, ds, false);
        case Method::CentralizedFull: return run_centralized(cfg, ds, true);
    }
    throw std::logic_error("bad method");
}

}  // namespace fedlppa
