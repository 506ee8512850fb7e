#pragma once

// Federated round protocol: sample-weighted server aggregation, prompt
// affinity, four auxiliary-decoder assignment strategies, client-side
// learnable aggregation, and the full round loop plus baselines.

#include <filesystem>
#include <random>
#include <span>

#include "fedlppa/losses.hpp"
#include "fedlppa/metrics.hpp"
#include "fedlppa/model.hpp"
#include "fedlppa/synth_data.hpp"

namespace fedlppa {

enum class Strategy { Random, FixedOrder, HPS, PSA };
enum class Method { FedLPPA, FedAvg, Local, CentralizedWeak, CentralizedFull };

std::string to_string(Strategy s);
std::string to_string(Method m);
Strategy strategy_from_string(const std::string& s);
Method method_from_string(const std::string& s);

// Eq-style sample-weighted average: sum_i (n_i / sum_j n_j) * v_i.
std::vector<float> aggregate_sample_weighted(const std::vector<std::vector<float>>& vecs,
                                             const std::vector<int>& sizes);

// a_ij = max(0, cosine(prompts[i], prompts[j])); throws on a zero-norm vector.
std::vector<std::vector<float>> compute_affinity(const std::vector<std::vector<float>>& prompts);

// Uniform random permutation with no fixed points (n >= 2; n == 1 -> {0}).
std::vector<int> random_derangement(int n, std::mt19937_64& rng);

// One auxiliary-decoder parameter vector per client, chosen from the
// uploaded main-decoder vectors according to the strategy.
std::vector<std::vector<float>> assign_aux(Strategy strategy,
                                           const std::vector<std::vector<float>>& phis,
                                           const std::vector<std::vector<float>>& affinity,
                                           std::mt19937_64& rng);

// Residual blend: prev + (incoming - prev) .* w, elementwise.
std::vector<float> la_blend(const std::vector<float>& prev,
                            const std::vector<float>& incoming,
                            const std::vector<float>& w);

struct LAConfig {
    int round = 1;        // federation round (1-based); rounds > 2 run exactly 2 iters
    float lr = 0.01f;     // plain SGD step size for the blend weights
    int max_iters = 10;
    float tol = 1e-3f;    // relative loss-change convergence threshold
    LossConfig loss;
};

// Alternating blend / weight-update loop for both decoder pairs at once.
// Each iteration loads the blended parameters, measures the objective on
// the given batch, takes one SGD step on each weight vector along the
// gradient through the blend, and clamps the weights to [0,1]. Leaves the
// final blends loaded in the model; returns the iteration count.
int learnable_aggregation(SegModel& model,
                          const std::vector<float>& phi_prev, const std::vector<float>& phi_g,
                          std::vector<float>& w_m,
                          const std::vector<float>& phibar_prev,
                          const std::vector<float>& phibar_g, std::vector<float>& w_a,
                          const Tensor& images, std::span<const Image8> labels,
                          int client_id, Sparsity asp, const LAConfig& cfg,
                          std::mt19937_64& rng);

struct RunConfig {
    uint64_t seed = 0;
    Method method = Method::FedLPPA;
    Strategy strategy = Strategy::PSA;
    int rounds = 100;
    int local_iters = 10;
    int batch = 12;
    float base_lr = 0.01f;
    bool tdf_on = true;  // prompt fusion module
    bool pd_on = true;   // server-assigned auxiliary decoder
    bool la_on = true;   // learnable aggregation (off: incoming params used as-is)
    int eval_every = 10;
    int base_channels = 16;
    int depth = 4;
    LossConfig loss;
    std::filesystem::path dataset_dir;
    std::filesystem::path run_dir;  // empty: no files written
};

struct RunResult {
    std::vector<double> site_dice;  // per-site mean foreground dice at the last eval
    std::vector<double> site_hd95;
    double mean_dice = 0.0;
    double mean_hd95 = 0.0;
};

// Mean metrics of a model over a test split, eval mode, no gradients.
ClassMetrics evaluate_on(SegModel& model, const std::vector<Sample>& test,
                         int client_id, Sparsity asp, int eval_batch = 8);

// Runs the configured method end to end. When run_dir is set, writes
// metrics.csv, messages.jsonl, affinity_round_<t>.csv (federated prompt
// methods only) and final checkpoints there.
RunResult run_experiment(const RunConfig& cfg);

}  // namespace fedlppa
