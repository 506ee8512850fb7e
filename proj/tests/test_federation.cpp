#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "fedlppa/federation.hpp"

using namespace fedlppa;

TEST_CASE("sample-weighted aggregation") {
    // equal sizes -> elementwise mean
    const auto m = aggregate_sample_weighted({{2.0f, 4.0f}, {4.0f, 0.0f}}, {5, 5});
    CHECK(m[0] == doctest::Approx(3.0f));
    CHECK(m[1] == doctest::Approx(2.0f));
    // single client -> identity
    const auto id = aggregate_sample_weighted({{1.5f, -2.0f}}, {7});
    CHECK(id == std::vector<float>{1.5f, -2.0f});
    // sizes (1,3), values 0 and 4 -> 3
    const auto w = aggregate_sample_weighted({{0.0f}, {4.0f}}, {1, 3});
    CHECK(w[0] == doctest::Approx(3.0f));
    CHECK_THROWS_AS((void)aggregate_sample_weighted({}, {}), std::invalid_argument);
    CHECK_THROWS_AS((void)aggregate_sample_weighted({{1.0f}}, {0}), std::invalid_argument);
    CHECK_THROWS_AS((void)aggregate_sample_weighted({{1.0f}, {1.0f, 2.0f}}, {1, 1}),
                    std::invalid_argument);
}

TEST_CASE("affinity matrix values and properties") {
    // identical prompts -> 1; antiparallel -> relu -> 0
    auto a = compute_affinity({{1.0f, 2.0f}, {1.0f, 2.0f}, {-1.0f, -2.0f}});
    CHECK(a[0][1] == doctest::Approx(1.0f));
    CHECK(a[0][2] == 0.0f);
    // shared prefix example: (1,0,1,0) vs (1,0,0,1) -> 0.5
    auto b = compute_affinity({{1.0f, 0.0f, 1.0f, 0.0f}, {1.0f, 0.0f, 0.0f, 1.0f}});
    CHECK(b[0][1] == doctest::Approx(0.5f));
    // fuzz: symmetric, unit diagonal, [0,1]
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::vector<float>> prompts(5, std::vector<float>(8));
        for (auto& p : prompts)
            for (auto& v : p) v = u(rng);
        const auto m = compute_affinity(prompts);
        for (size_t i = 0; i < 5; ++i) {
            CHECK(m[i][i] == 1.0f);
            for (size_t j = 0; j < 5; ++j) {
                CHECK(std::fabs(m[i][j] - m[j][i]) <= 1e-6f);
                CHECK(m[i][j] >= 0.0f);
                CHECK(m[i][j] <= 1.0f);
            }
        }
    }
    CHECK_THROWS_AS((void)compute_affinity({{0.0f, 0.0f}}), std::invalid_argument);
}

TEST_CASE("random strategy yields a derangement every time") {
    std::mt19937_64 rng(43);
    for (int n : {2, 3, 5, 9})
        for (int trial = 0; trial < 50; ++trial) {
            const auto p = random_derangement(n, rng);
            std::vector<bool> seen(static_cast<size_t>(n), false);
            for (int i = 0; i < n; ++i) {
                CHECK(p[static_cast<size_t>(i)] != i);
                seen[static_cast<size_t>(p[static_cast<size_t>(i)])] = true;
            }
            for (bool s : seen) CHECK(s);
        }
    CHECK(random_derangement(1, rng) == std::vector<int>{0});
}

TEST_CASE("auxiliary assignment strategies") {
    const std::vector<std::vector<float>> phis{{1.0f}, {2.0f}, {3.0f}};
    std::mt19937_64 rng(47);
    // fixed order: cyclic shift
    auto fo = assign_aux(Strategy::FixedOrder, phis, {}, rng);
    CHECK(fo[0][0] == 2.0f);
    CHECK(fo[1][0] == 3.0f);
    CHECK(fo[2][0] == 1.0f);
    // PSA with identity-like rows -> own parameters
    const std::vector<std::vector<float>> eye{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    auto psa_eye = assign_aux(Strategy::PSA, phis, eye, rng);
    for (int i = 0; i < 3; ++i) CHECK(psa_eye[static_cast<size_t>(i)][0] == phis[static_cast<size_t>(i)][0]);
    // PSA row (1, 0.5, 0) -> (2/3) v0 + (1/3) v1
    const std::vector<std::vector<float>> aff{{1.0f, 0.5f, 0.0f},
                                              {0.5f, 1.0f, 0.0f},
                                              {0.0f, 0.0f, 1.0f}};
    auto psa = assign_aux(Strategy::PSA, phis, aff, rng);
    CHECK(psa[0][0] == doctest::Approx(2.0f / 3 * 1 + 1.0f / 3 * 2).epsilon(1e-6));
    // HPS picks the highest off-diagonal entry; isolated rows fall back to self
    auto hps = assign_aux(Strategy::HPS, phis, aff, rng);
    CHECK(hps[0][0] == 2.0f);
    CHECK(hps[2][0] == 3.0f);  // all off-diagonal zero -> own phi
    // random strategy never assigns a client its own parameters
    for (int trial = 0; trial < 20; ++trial) {
        auto rnd = assign_aux(Strategy::Random, phis, {}, rng);
        for (int i = 0; i < 3; ++i)
            CHECK(rnd[static_cast<size_t>(i)][0] != phis[static_cast<size_t>(i)][0]);
    }
    // degenerate single-client federation
    auto solo = assign_aux(Strategy::Random, {{4.0f}}, {}, rng);
    CHECK(solo[0][0] == 4.0f);
}

TEST_CASE("learnable-aggregation blend endpoints are bitwise exact") {
    const std::vector<float> prev{0.25f, -1.5f, 3.0f};
    const std::vector<float> inc{1.0f, 0.5f, -2.0f};
    CHECK(la_blend(prev, inc, {1.0f, 1.0f, 1.0f}) == inc);
    CHECK(la_blend(prev, inc, {0.0f, 0.0f, 0.0f}) == prev);
    const auto mid = la_blend(prev, inc, {0.5f, 0.5f, 0.5f});
    for (size_t i = 0; i < 3; ++i)
        CHECK(mid[i] == doctest::Approx(0.5f * (prev[i] + inc[i])));
    CHECK_THROWS_AS((void)la_blend(prev, inc, {1.0f}), std::invalid_argument);
}

namespace {

struct FedFixture {
    std::filesystem::path dir;
    FedFixture() {
        dir = std::filesystem::temp_directory_path() / "fedlppa_fed_test";
        std::filesystem::remove_all(dir);
        auto specs = default_4site_config();
        for (auto& s : specs) {
            s.n_train = 6;
            s.n_test = 3;
        }
        generate_federation(specs, 77, dir / "ds");
    }
    ~FedFixture() { std::filesystem::remove_all(dir); }

    RunConfig base() const {
        RunConfig rc;
        rc.seed = 3;
        rc.rounds = 2;
        rc.local_iters = 1;
        rc.batch = 2;
        rc.base_channels = 2;
        rc.eval_every = 1;
        rc.dataset_dir = dir / "ds";
        return rc;
    }
};

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("learnable aggregation keeps weights in [0,1] and honors the round rule") {
    FedFixture fx;
    ModelConfig mc;
    mc.base_channels = 2;
    mc.depth = 2;
    mc.num_clients = 4;
    mc.height = 64;
    mc.width = 64;
    mc.seed = 1;
    SegModel model(mc);
    SiteDataset site = load_site(fx.dir / "ds", 0);

    const auto phi_prev = model.flatten(Partition::Phi);
    const auto phibar_prev = model.flatten(Partition::PhiBar);
    std::mt19937_64 rng(55);
    std::uniform_real_distribution<float> u(-0.1f, 0.1f);
    auto phi_g = phi_prev;
    for (auto& v : phi_g) v += u(rng);
    auto phibar_g = phibar_prev;
    for (auto& v : phibar_g) v += u(rng);

    Tensor images(Shape{2, 1, 64, 64});
    std::vector<Image8> labels;
    for (int i = 0; i < 2; ++i) {
        const auto& s = site.train[static_cast<size_t>(i)];
        std::copy(s.image.v.begin(), s.image.v.end(),
                  images.data() + static_cast<size_t>(i) * 64 * 64);
        labels.push_back(s.weak);
    }

    std::vector<float> w_m(phi_prev.size(), 1.0f), w_a(phibar_prev.size(), 1.0f);
    LAConfig la;
    la.round = 5;  // late round: exactly 2 iterations
    la.lr = 0.5f;  // large step to stress the clamp
    const int iters =
        learnable_aggregation(model, phi_prev, phi_g, w_m, phibar_prev, phibar_g, w_a,
                              images, labels, 0, Sparsity::Sparse, la, rng);
    CHECK(iters == 2);
    for (float v : w_m) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    for (float v : w_a) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    // loaded parameters equal the final blend
    CHECK(model.flatten(Partition::Phi) == la_blend(phi_prev, phi_g, w_m));
    CHECK(model.flatten(Partition::PhiBar) == la_blend(phibar_prev, phibar_g, w_a));

    // early round: capped at max_iters
    la.round = 1;
    la.max_iters = 3;
    const int early =
        learnable_aggregation(model, phi_prev, phi_g, w_m, phibar_prev, phibar_g, w_a,
                              images, labels, 0, Sparsity::Sparse, la, rng);
    CHECK(early >= 1);
    CHECK(early <= 3);
}

TEST_CASE("upload payload carries exactly theta and phi") {
    FedFixture fx;
    RunConfig rc = fx.base();
    rc.rounds = 1;
    rc.run_dir = fx.dir / "run_payload";
    run_experiment(rc);

    ModelConfig mc;
    mc.base_channels = rc.base_channels;
    mc.depth = rc.depth;
    mc.num_clients = 4;
    mc.height = 64;
    mc.width = 64;
    mc.seed = rc.seed;
    SegModel ref(mc);
    const size_t up_expect =
        4 * (ref.partition_size(Partition::Theta) + ref.partition_size(Partition::Phi));

    std::ifstream f(rc.run_dir / "messages.jsonl");
    REQUIRE(f.good());
    std::string line;
    int ups = 0;
    while (std::getline(f, line)) {
        const auto j = nlohmann::json::parse(line);
        if (j.at("direction") == "up") {
            CHECK(j.at("bytes").get<size_t>() == up_expect);
            ++ups;
        }
    }
    CHECK(ups == 4);
}

TEST_CASE("single-worker reruns are byte-identical") {
    FedFixture fx;
    RunConfig rc = fx.base();
    rc.run_dir = fx.dir / "run_a";
    run_experiment(rc);
    rc.run_dir = fx.dir / "run_b";
    run_experiment(rc);
    const std::string a = slurp(fx.dir / "run_a" / "metrics.csv");
    CHECK(a == slurp(fx.dir / "run_b" / "metrics.csv"));
    CHECK(a.find("round,site") == 0);
    CHECK(slurp(fx.dir / "run_a" / "affinity_round_1.csv") ==
          slurp(fx.dir / "run_b" / "affinity_round_1.csv"));
}

TEST_CASE("zero rounds produce a header-only metrics file") {
    FedFixture fx;
    RunConfig rc = fx.base();
    rc.rounds = 0;
    rc.run_dir = fx.dir / "run_zero";
    const RunResult r = run_experiment(rc);
    const std::string csv = slurp(rc.run_dir / "metrics.csv");
    CHECK(csv == "round,site,dsc_1,hd95_1,loss\n");
    CHECK(r.site_dice.size() == 4);  // still evaluated in memory
}

TEST_CASE("local training writes no affinity or message files") {
    FedFixture fx;
    RunConfig rc = fx.base();
    rc.method = Method::Local;
    rc.rounds = 1;
    rc.run_dir = fx.dir / "run_local";
    run_experiment(rc);
    CHECK_FALSE(std::filesystem::exists(rc.run_dir / "affinity_round_1.csv"));
    CHECK_FALSE(std::filesystem::exists(rc.run_dir / "messages.jsonl"));
    CHECK(std::filesystem::exists(rc.run_dir / "checkpoints" / "site_3"));
}

TEST_CASE("affinity files are square with unit diagonal") {
    FedFixture fx;
    RunConfig rc = fx.base();
    rc.rounds = 1;
    rc.run_dir = fx.dir / "run_aff";
    run_experiment(rc);
    std::ifstream f(rc.run_dir / "affinity_round_1.csv");
    REQUIRE(f.good());
    std::string line;
    int rows = 0;
    while (std::getline(f, line)) {
        std::stringstream ss(line);
        std::string cell;
        int cols = 0;
        while (std::getline(ss, cell, ',')) {
            const double v = std::stod(cell);
            if (cols == rows) CHECK(v == doctest::Approx(1.0));
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            ++cols;
        }
        CHECK(cols == 4);
        ++rows;
    }
    CHECK(rows == 4);
}

TEST_CASE("strategies needing prompts are rejected without the fusion module") {
    FedFixture fx;
    RunConfig rc = fx.base();
    rc.tdf_on = false;
    rc.pd_on = true;
    rc.strategy = Strategy::PSA;
    CHECK_THROWS_AS((void)run_experiment(rc), std::invalid_argument);
}
