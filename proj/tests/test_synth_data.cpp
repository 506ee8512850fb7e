#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "fedlppa/synth_data.hpp"

using namespace fedlppa;

namespace {

std::vector<SiteSpec> tiny_specs() {
    auto specs = default_4site_config();
    for (auto& s : specs) {
        s.n_train = 4;
        s.n_test = 2;
    }
    return specs;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("seed derivation separates streams") {
    std::set<uint64_t> seen;
    for (uint64_t s = 0; s < 3; ++s)
        for (uint64_t a = 0; a < 3; ++a)
            for (uint64_t b = 0; b < 2; ++b)
                for (uint64_t c = 0; c < 4; ++c) seen.insert(derive_seed(s, a, b, c));
    CHECK(seen.size() == 3 * 3 * 2 * 4);  // no collisions on this grid
    CHECK(derive_seed(1, 2, 3, 4) == derive_seed(1, 2, 3, 4));
}

TEST_CASE("default four-site roster is heterogeneous") {
    const auto specs = default_4site_config();
    REQUIRE(specs.size() == 4);
    std::set<AnnotationType> annos;
    for (size_t i = 0; i < 4; ++i) {
        CHECK(specs[i].site_id == static_cast<int>(i));
        CHECK(specs[i].n_train == 200);
        CHECK(specs[i].n_test == 50);
        CHECK(specs[i].height == 64);
        CHECK(specs[i].width == 64);
        specs[i].validate();
        annos.insert(specs[i].annotation);
    }
    CHECK(annos.size() == 4);  // four distinct annotation regimes
    // appearance shift: sites 0 and 1 have opposite intensity polarity
    CHECK(specs[0].fg_mean > specs[0].bg_mean);
    CHECK(specs[1].fg_mean < specs[1].bg_mean);
    CHECK(std::fabs(specs[0].fg_mean - specs[1].fg_mean) >= 0.3f);
}

TEST_CASE("spec validation rejects unlearnable appearance") {
    SiteSpec s;
    s.fg_mean = 0.5f;
    s.bg_mean = 0.52f;  // separation below fg_std + bg_std
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    SiteSpec bad_n;
    bad_n.n_train = 0;
    CHECK_THROWS_AS(bad_n.validate(), std::invalid_argument);
    SiteSpec jit;  // jitter can swallow the whole fg/bg separation
    jit.fg_mean = 0.7f;
    jit.bg_mean = 0.3f;
    jit.intensity_jitter = 0.2f;
    CHECK_THROWS_AS(jit.validate(), std::invalid_argument);
}

TEST_CASE("generated samples have coherent geometry and noise-free weak labels") {
    for (const auto& spec : default_4site_config()) {
        std::mt19937_64 rng(derive_seed(11, static_cast<uint64_t>(spec.site_id), 0, 0));
        for (int i = 0; i < 5; ++i) {
            const Sample s = generate_sample(spec, rng);
            CHECK(s.image.h == spec.height);
            CHECK(s.image.w == spec.width);
            CHECK(s.mask.count(1) >= 4);            // a real object
            CHECK(s.mask.count(1) < s.mask.v.size());  // not the whole frame
            for (float v : s.image.v) {
                CHECK(v >= 0.0f);
                CHECK(v <= 1.0f);
            }
            size_t labeled = 0;
            for (size_t p = 0; p < s.weak.v.size(); ++p)
                if (s.weak.v[p] != kUnlabeled) {
                    CHECK(s.weak.v[p] == s.mask.v[p]);  // weak labels never lie
                    ++labeled;
                }
            CHECK(labeled > 0);
            CHECK(labeled < s.weak.v.size());  // genuinely sparse
        }
    }
}

TEST_CASE("intensity polarity matches the spec") {
    const auto specs = default_4site_config();
    for (int site : {0, 1}) {
        std::mt19937_64 rng(21);
        const Sample s = generate_sample(specs[static_cast<size_t>(site)], rng);
        double fg = 0.0, bg = 0.0;
        size_t nf = 0, nb = 0;
        for (size_t p = 0; p < s.mask.v.size(); ++p)
            if (s.mask.v[p]) { fg += s.image.v[p]; ++nf; }
            else { bg += s.image.v[p]; ++nb; }
        fg /= static_cast<double>(nf);
        bg /= static_cast<double>(nb);
        // margins allow for the worst-case per-image intensity jitter
        if (site == 0) CHECK(fg > bg + 0.05);
        else CHECK(bg > fg + 0.05);
    }
}

TEST_CASE("federation generation is byte-deterministic and round-trips") {
    const auto root = std::filesystem::temp_directory_path() / "fedlppa_synth_test";
    std::filesystem::remove_all(root);
    const auto specs = tiny_specs();
    generate_federation(specs, 99, root / "a");
    generate_federation(specs, 99, root / "b");
    generate_federation(specs, 100, root / "c");

    CHECK(count_sites(root / "a") == 4);
    bool any_differs = false;
    for (int site = 0; site < 4; ++site)
        for (const char* split : {"train", "test"}) {
            const auto rel = std::filesystem::path("site_" + std::to_string(site)) / split;
            for (const auto& e : std::filesystem::directory_iterator(root / "a" / rel)) {
                const auto name = e.path().filename();
                CHECK(slurp(e.path()) == slurp(root / "b" / rel / name));
                if (name.string().rfind("img_", 0) == 0 &&
                    slurp(e.path()) != slurp(root / "c" / rel / name))
                    any_differs = true;
            }
        }
    CHECK(any_differs);  // a different seed changes the data

    // load_site reproduces the in-memory samples bit for bit
    for (int site = 0; site < 4; ++site) {
        const SiteDataset ds = load_site(root / "a", site);
        CHECK(ds.train.size() == 4);
        CHECK(ds.test.size() == 2);
        CHECK(ds.spec.annotation == specs[static_cast<size_t>(site)].annotation);
        std::mt19937_64 rng(derive_seed(99, static_cast<uint64_t>(site), 0, 0));
        const Sample fresh = generate_sample(specs[static_cast<size_t>(site)], rng);
        CHECK(ds.train[0].mask.v == fresh.mask.v);
        CHECK(ds.train[0].weak.v == fresh.weak.v);
        for (size_t p = 0; p < fresh.image.v.size(); ++p)
            CHECK(std::fabs(ds.train[0].image.v[p] - fresh.image.v[p]) <= 1.0f / 65535.0f);
    }
    std::filesystem::remove_all(root);
}

TEST_CASE("train and test splits draw from disjoint streams") {
    const auto specs = tiny_specs();
    const auto root = std::filesystem::temp_directory_path() / "fedlppa_split_test";
    std::filesystem::remove_all(root);
    generate_federation(specs, 7, root);
    const SiteDataset ds = load_site(root, 0);
    CHECK(ds.train[0].mask.v != ds.test[0].mask.v);
    std::filesystem::remove_all(root);
}
