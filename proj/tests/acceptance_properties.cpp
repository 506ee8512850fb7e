// Property-based acceptance suite. Each criterion prints a single
// "[criterion N] PASS/FAIL" line; the process exits nonzero if any fail.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "fedlppa/config.hpp"
#include "fedlppa/federation.hpp"
#include "fedlppa/losses.hpp"
#include "fedlppa/metrics.hpp"
#include "fedlppa/synth_data.hpp"
#include "fedlppa/weak_labels.hpp"
#include "op_gradchecks.hpp"
#include "oracles.hpp"

using namespace fedlppa;

namespace {

bool check(bool cond, const std::string& what) {
    if (!cond) std::cerr << "    failed: " << what << "\n";
    return cond;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------- criterion 1

bool criterion1_autodiff() {
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    std::mt19937_64 rng(20260823);
    for (const auto& gc : oracle::all_op_gradchecks())
        for (int trial = 0; trial < 20; ++trial) {
            const double err = oracle::gradcheck_once(gc.gc, rng);
            ok &= check(err <= 1e-4, gc.name + " trial " + std::to_string(trial) +
                                         " rel err " + std::to_string(err));
        }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << "    gradcheck wall time: " << secs << " s\n";
    ok &= check(secs < 60.0, "gradchecks must finish under one minute");
    return ok;
}

// ---------------------------------------------------------------- criterion 2

bool criterion2_protocol(const std::filesystem::path& dataset) {
    bool ok = true;
    std::mt19937_64 rng(2);

    // sample-weighted aggregation: exact weighted mean
    {
        const auto m = aggregate_sample_weighted({{0.0f}, {4.0f}}, {1, 3});
        ok &= check(std::fabs(m[0] - 3.0f) <= 1e-6f, "aggregation weighted mean");
        const auto id = aggregate_sample_weighted({{2.5f, -1.0f}}, {9});
        ok &= check(id == std::vector<float>{2.5f, -1.0f}, "aggregation identity");
    }

    // affinity properties over random prompts
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::vector<float>> prompts(4, std::vector<float>(16));
        for (auto& p : prompts)
            for (auto& v : p) v = u(rng);
        const auto a = compute_affinity(prompts);
        for (size_t i = 0; i < 4; ++i) {
            ok &= check(a[i][i] == 1.0f, "affinity unit diagonal");
            for (size_t j = 0; j < 4; ++j) {
                ok &= check(std::fabs(a[i][j] - a[j][i]) <= 1e-6f, "affinity symmetry");
                ok &= check(a[i][j] >= 0.0f && a[i][j] <= 1.0f, "affinity range");
            }
        }
        // PSA row normalization: the blend is a convex combination
        const std::vector<std::vector<float>> phis{{1.0f}, {1.0f}, {1.0f}, {1.0f}};
        const auto psa = assign_aux(Strategy::PSA, phis, a, rng);
        for (size_t i = 0; i < 4; ++i)
            ok &= check(std::fabs(psa[i][0] - 1.0f) <= 1e-6f, "psa rows sum to one");
    }

    // LA endpoints, bitwise
    std::vector<float> prev(64), inc(64);
    for (auto& v : prev) v = u(rng);
    for (auto& v : inc) v = u(rng);
    ok &= check(la_blend(prev, inc, std::vector<float>(64, 1.0f)) == inc,
                "la endpoint W=1 -> incoming, bitwise");
    ok &= check(la_blend(prev, inc, std::vector<float>(64, 0.0f)) == prev,
                "la endpoint W=0 -> previous, bitwise");

    // W clamping under fuzzed learnable-aggregation updates
    {
        ModelConfig mc;
        mc.base_channels = 2;
        mc.depth = 2;
        mc.num_clients = 4;
        mc.height = 32;
        mc.width = 32;
        mc.seed = 3;
        SegModel model(mc);
        auto spec = default_4site_config()[0];
        spec.height = spec.width = 32;
        Tensor images(Shape{2, 1, 32, 32});
        std::vector<Image8> labels;
        std::mt19937_64 gen(9);
        for (int i = 0; i < 2; ++i) {
            const Sample s = generate_sample(spec, gen);
            std::copy(s.image.v.begin(), s.image.v.end(),
                      images.data() + static_cast<size_t>(i) * 32 * 32);
            labels.push_back(s.weak);
        }
        const auto phi0 = model.flatten(Partition::Phi);
        const auto bar0 = model.flatten(Partition::PhiBar);
        for (int trial = 0; trial < 3; ++trial) {
            auto phi_g = phi0;
            auto bar_g = bar0;
            for (auto& v : phi_g) v += 0.2f * u(rng);
            for (auto& v : bar_g) v += 0.2f * u(rng);
            std::vector<float> w_m(phi0.size()), w_a(bar0.size());
            std::uniform_real_distribution<float> w0(0.0f, 1.0f);
            for (auto& v : w_m) v = w0(rng);
            for (auto& v : w_a) v = w0(rng);
            LAConfig la;
            la.round = 1;
            la.lr = 2.0f;  // exaggerated step to stress the clamp
            la.max_iters = 4;
            learnable_aggregation(model, phi0, phi_g, w_m, bar0, bar_g, w_a, images,
                                  labels, 0, Sparsity::Sparse, la, rng);
            for (float v : w_m) ok &= check(v >= 0.0f && v <= 1.0f, "w_m clamped");
            for (float v : w_a) ok &= check(v >= 0.0f && v <= 1.0f, "w_a clamped");
        }
    }

    // random strategy: always a derangement
    for (int n : {2, 4, 7})
        for (int trial = 0; trial < 100; ++trial) {
            const auto p = random_derangement(n, rng);
            for (int i = 0; i < n; ++i)
                ok &= check(p[static_cast<size_t>(i)] != i, "derangement fixed point");
        }

    // upload payload: exactly theta + phi, checked against the partition sizes
    {
        RunConfig rc;
        rc.seed = 5;
        rc.rounds = 1;
        rc.local_iters = 1;
        rc.batch = 2;
        rc.base_channels = 2;
        rc.dataset_dir = dataset;
        rc.run_dir = dataset.parent_path() / "payload_run";
        run_experiment(rc);
        ModelConfig mc;
        mc.base_channels = 2;
        mc.depth = rc.depth;
        mc.num_clients = 4;
        mc.height = 64;
        mc.width = 64;
        mc.seed = 5;
        SegModel ref(mc);
        const size_t expect =
            4 * (ref.partition_size(Partition::Theta) + ref.partition_size(Partition::Phi));
        std::ifstream f(rc.run_dir / "messages.jsonl");
        std::string line;
        int ups = 0;
        while (std::getline(f, line)) {
            const auto j = nlohmann::json::parse(line);
            if (j.at("direction") == "up") {
                ok &= check(j.at("bytes").get<size_t>() == expect,
                            "upload bytes equal the theta+phi manifest length");
                ++ups;
            }
        }
        ok &= check(ups == 4, "one upload per client per round");
    }
    return ok;
}

// ---------------------------------------------------------------- criterion 3

bool criterion3_wss() {
    bool ok = true;
    std::mt19937_64 rng(3);

    // pCE unlabeled-invariance, bitwise
    for (int trial = 0; trial < 10; ++trial) {
        const int k = 2 + static_cast<int>(rng() % 3);
        const size_t hw = 36;
        Tensor probs(Shape{1, k, 6, 6});
        std::uniform_real_distribution<float> u(0.05f, 1.0f);
        for (auto& v : probs.vec()) v = u(rng);
        Image8 lab(6, 6, kUnlabeled);
        std::bernoulli_distribution labelled(0.3);
        for (auto& v : lab.v)
            if (labelled(rng)) v = static_cast<uint8_t>(rng() % static_cast<uint64_t>(k));
        const float base = partial_cross_entropy(probs, std::vector<Image8>{lab}).item();
        Tensor scrambled(probs.shape(), probs.vec());
        for (size_t p = 0; p < hw; ++p)
            if (lab.v[p] == kUnlabeled)
                for (int c = 0; c < k; ++c)
                    scrambled.data()[static_cast<size_t>(c) * hw + p] = u(rng);
        ok &= check(partial_cross_entropy(scrambled, std::vector<Image8>{lab}).item() == base,
                    "pCE ignores unlabeled pixels bitwise");
    }

    // lambda_m distribution
    double acc = 0.0;
    bool in_range = true;
    for (int i = 0; i < 10000; ++i) {
        const float l = sample_lambda_m(rng);
        in_range &= l >= 0.7f && l < 1.0f;
        acc += l;
    }
    ok &= check(in_range, "lambda_m in [0.7, 1)");
    ok &= check(std::fabs(acc / 10000.0 - 0.85) <= 0.01, "lambda_m mean 0.85 +- 0.01");

    // pseudo label reduces to argmax of p_M when the decoders agree
    for (int trial = 0; trial < 10; ++trial) {
        Tensor p(Shape{1, 3, 4, 4});
        std::uniform_real_distribution<float> u(0.0f, 1.0f);
        for (auto& v : p.vec()) v = u(rng);
        const auto y = pseudo_label(p, p, 0.7f + 0.3f * u(rng));
        for (size_t px = 0; px < 16; ++px) {
            int best = 0;
            for (int c = 1; c < 3; ++c)
                if (p.data()[static_cast<size_t>(c) * 16 + px] >
                    p.data()[static_cast<size_t>(best) * 16 + px])
                    best = c;
            ok &= check(y[0].v[px] == best, "pseudo label = argmax p_M when p_M == p_A");
        }
    }

    // dice / hd95 against brute-force oracles on small masks
    for (int trial = 0; trial < 200; ++trial) {
        const int h = 3 + static_cast<int>(rng() % 14);
        const int w = 3 + static_cast<int>(rng() % 14);
        Image8 a(h, w, 0), b(h, w, 0);
        std::bernoulli_distribution fg(0.4);
        for (auto& v : a.v) v = fg(rng) ? 1 : 0;
        for (auto& v : b.v) v = fg(rng) ? 1 : 0;
        ok &= check(std::fabs(dice_score(a, b) - oracle::dice_ref(a, b)) <= 1e-9,
                    "dice matches the brute-force oracle");
        ok &= check(std::fabs(hd95(a, b) - oracle::hd95_ref(a, b)) <= 1e-9,
                    "hd95 matches the brute-force oracle");
    }
    return ok;
}

// ---------------------------------------------------------------- criterion 4

bool criterion4_weak_labels() {
    bool ok = true;
    std::mt19937_64 rng(4);
    constexpr AnnotationType kTypes[] = {AnnotationType::Point, AnnotationType::Scribble,
                                         AnnotationType::Scribble2, AnnotationType::Block,
                                         AnnotationType::BBox, AnnotationType::RotatedBBox};
    size_t violations = 0, uncovered = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int h = 16 + static_cast<int>(rng() % 33);
        const int w = 16 + static_cast<int>(rng() % 33);
        Image8 mask(h, w, 0);
        // random ellipse-ish blob; retry until nonempty
        while (mask.count(1) == 0) {
            const int cy = static_cast<int>(rng() % static_cast<uint64_t>(h));
            const int cx = static_cast<int>(rng() % static_cast<uint64_t>(w));
            const int ry = 1 + static_cast<int>(rng() % static_cast<uint64_t>(h / 2));
            const int rx = 1 + static_cast<int>(rng() % static_cast<uint64_t>(w / 2));
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const double dy = double(y - cy) / ry, dx = double(x - cx) / rx;
                    if (dy * dy + dx * dx <= 1.0) mask.at(y, x) = 1;
                }
        }
        for (AnnotationType t : kTypes) {
            const SparseLabel lab = synthesize_weak_label(mask, t, rng);
            bool fg_seen = false, bg_seen = false;
            for (size_t p = 0; p < mask.v.size(); ++p) {
                const uint8_t l = lab.label_map.v[p];
                if (l == kUnlabeled) continue;
                if (l != mask.v[p]) ++violations;
                if (l == 1) fg_seen = true;
                if (l == 0) bg_seen = true;
            }
            // background can be absent when the object fills the frame
            if (!fg_seen || (!bg_seen && mask.count(0) > 0)) ++uncovered;
        }
    }
    ok &= check(violations == 0, "label-noise violations: " + std::to_string(violations));
    ok &= check(uncovered == 0, "classes without a labeled pixel: " + std::to_string(uncovered));
    return ok;
}

// ---------------------------------------------------------------- criterion 8

bool criterion8_determinism(const std::filesystem::path& dataset) {
    bool ok = true;
    RunConfig rc;
    rc.seed = 17;
    rc.rounds = 2;
    rc.local_iters = 2;
    rc.batch = 2;
    rc.base_channels = 2;
    rc.eval_every = 1;
    rc.dataset_dir = dataset;
    rc.run_dir = dataset.parent_path() / "det_a";
    run_experiment(rc);
    rc.run_dir = dataset.parent_path() / "det_b";
    run_experiment(rc);
    const std::string a = slurp(dataset.parent_path() / "det_a" / "metrics.csv");
    const std::string b = slurp(dataset.parent_path() / "det_b" / "metrics.csv");
    ok &= check(!a.empty(), "metrics.csv written");
    ok &= check(a == b, "identical configs give byte-identical metrics.csv");
    return ok;
}

}  // namespace

int main() {
    const auto root = std::filesystem::temp_directory_path() / "fedlppa_acceptance_props";
    std::filesystem::remove_all(root);
    auto specs = default_4site_config();
    for (auto& s : specs) {
        s.n_train = 6;
        s.n_test = 3;
    }
    generate_federation(specs, 1234, root / "ds");

    bool all_ok = true;
    auto report = [&](int id, bool ok) {
        std::cout << "[criterion " << id << "] " << (ok ? "PASS" : "FAIL") << std::endl;
        all_ok &= ok;
    };
    report(1, criterion1_autodiff());
    report(2, criterion2_protocol(root / "ds"));
    report(3, criterion3_wss());
    report(4, criterion4_weak_labels());
    report(8, criterion8_determinism(root / "ds"));

    std::filesystem::remove_all(root);
    return all_ok ? 0 : 1;
}
