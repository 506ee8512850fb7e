#include <doctest.h>

#include <random>
#include <set>

#include "fedlppa/weak_labels.hpp"

using namespace fedlppa;

namespace {

// every labeled pixel must agree with the full mask
void check_noise_free(const Image8& mask, const Image8& label) {
    for (size_t i = 0; i < mask.v.size(); ++i)
        if (label.v[i] != kUnlabeled) CHECK(label.v[i] == mask.v[i]);
}

Image8 blob_mask(int h, int w, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> cy(h / 4, 3 * h / 4), cx(w / 4, 3 * w / 4);
    std::uniform_int_distribution<int> rr(2, std::min(h, w) / 3);
    Image8 m(h, w, 0);
    const int y0 = cy(rng), x0 = cx(rng), r = rr(rng);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if ((y - y0) * (y - y0) + (x - x0) * (x - x0) <= r * r) m.at(y, x) = 1;
    return m;
}

constexpr AnnotationType kAllTypes[] = {AnnotationType::Point, AnnotationType::Scribble,
                                        AnnotationType::Scribble2, AnnotationType::Block,
                                        AnnotationType::BBox, AnnotationType::RotatedBBox};

}  // namespace

TEST_CASE("sparsity mapping follows the annotation type") {
    CHECK(sparsity_of(AnnotationType::Point, BoxRule::ToBlock) == Sparsity::Sparse);
    CHECK(sparsity_of(AnnotationType::Scribble, BoxRule::ToBlock) == Sparsity::Medium);
    CHECK(sparsity_of(AnnotationType::Scribble2, BoxRule::ToBlock) == Sparsity::Medium);
    CHECK(sparsity_of(AnnotationType::Block, BoxRule::ToBlock) == Sparsity::Dense);
    CHECK(sparsity_of(AnnotationType::BBox, BoxRule::ToBlock) == Sparsity::Dense);
    CHECK(sparsity_of(AnnotationType::BBox, BoxRule::ToScribble) == Sparsity::Medium);
}

TEST_CASE("all annotation types are noise-free with class coverage") {
    for (uint64_t seed = 0; seed < 8; ++seed) {
        Image8 mask = blob_mask(32, 32, seed);
        for (AnnotationType t : kAllTypes) {
            CAPTURE(static_cast<int>(t));
            std::mt19937_64 rng(seed * 100 + 1);
            const SparseLabel lab = synthesize_weak_label(mask, t, rng);
            check_noise_free(mask, lab.label_map);
            CHECK(lab.label_map.count(1) >= 1);  // foreground covered
            CHECK(lab.label_map.count(0) >= 1);  // background covered
        }
    }
}

TEST_CASE("point labels of a centered square sit at the shrunken side midpoints") {
    Image8 mask(20, 20, 0);
    for (int y = 5; y < 15; ++y)
        for (int x = 5; x < 15; ++x) mask.at(y, x) = 1;
    std::mt19937_64 rng(1);
    const SparseLabel lab = synthesize_weak_label(mask, AnnotationType::Point, rng);
    // inscribed rect = the square itself; shrunk by 0.5 and centered:
    // x,y in [7,12); side midpoints of that box must be labeled foreground
    const int lo = 7, hi = 12, mid = (lo + hi) / 2;
    for (auto [y, x] : {std::pair{lo, mid}, {hi - 1, mid}, {mid, lo}, {mid, hi - 1}})
        CHECK(lab.label_map.at(y, x) == 1);
    check_noise_free(mask, lab.label_map);
    CHECK(lab.sparsity == Sparsity::Sparse);
}

TEST_CASE("block label of a full-image mask is a strictly smaller erosion") {
    Image8 mask(24, 24, 1);
    std::mt19937_64 rng(2);
    const SparseLabel lab = synthesize_weak_label(mask, AnnotationType::Block, rng);
    const size_t fg = lab.label_map.count(1);
    CHECK(fg > 0);
    CHECK(fg < mask.v.size());
    check_noise_free(mask, lab.label_map);
}

TEST_CASE("scribble is thinner than the block label") {
    Image8 mask = blob_mask(32, 32, 3);
    std::mt19937_64 r1(3), r2(3);
    const auto scrib = synthesize_weak_label(mask, AnnotationType::Scribble, r1);
    const auto block = synthesize_weak_label(mask, AnnotationType::Block, r2);
    CHECK(scrib.label_map.count(1) < block.label_map.count(1));
}

TEST_CASE("scribble2 erases close to 30 percent of the warped scribble") {
    Image8 mask = blob_mask(48, 48, 4);
    std::mt19937_64 rng(4);
    const auto lab = synthesize_weak_label(mask, AnnotationType::Scribble2, rng);
    check_noise_free(mask, lab.label_map);
    CHECK(lab.label_map.count(1) >= 1);
}

TEST_CASE("degenerate masks fall back to a centroid blob") {
    Image8 mask(16, 16, 0);
    mask.at(8, 8) = 1;
    mask.at(8, 9) = 1;  // 2 px < 4 px threshold
    std::mt19937_64 rng(5);
    const auto lab = synthesize_weak_label(mask, AnnotationType::Scribble, rng);
    CHECK(lab.used_fallback);
    check_noise_free(mask, lab.label_map);
    CHECK(lab.label_map.count(1) >= 1);
}

TEST_CASE("empty mask is rejected") {
    std::mt19937_64 rng(6);
    Image8 empty(8, 8, 0);
    CHECK_THROWS_AS((void)synthesize_weak_label(empty, AnnotationType::Point, rng),
                    std::invalid_argument);
}

TEST_CASE("determinism: same seed, same label") {
    Image8 mask = blob_mask(32, 32, 7);
    for (AnnotationType t : kAllTypes) {
        std::mt19937_64 r1(9), r2(9);
        CHECK(synthesize_weak_label(mask, t, r1).label_map.v ==
              synthesize_weak_label(mask, t, r2).label_map.v);
    }
}

TEST_CASE("box preprocessing: 10x10 ToBlock gives a 4x4 block") {
    BoxLabel box;
    box.box = Rect{5, 5, 15, 15};
    const SparseLabel lab = preprocess_box(box, BoxRule::ToBlock, 24, 24);
    CHECK(lab.label_map.count(1) == 16);
    CHECK(lab.sparsity == Sparsity::Dense);
    // foreground entirely inside the box interior
    for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 24; ++x)
            if (lab.label_map.at(y, x) == 1) {
                CHECK(y >= 5);
                CHECK(y < 15);
                CHECK(x >= 5);
                CHECK(x < 15);
            }
    // all background labels lie outside the original box
    for (int y = 5; y < 15; ++y)
        for (int x = 5; x < 15; ++x) CHECK(lab.label_map.at(y, x) != 0);
}

TEST_CASE("box preprocessing: ToScribble labels an ellipse ring, fewer px than the box") {
    BoxLabel box;
    box.box = Rect{4, 6, 16, 14};
    const SparseLabel lab = preprocess_box(box, BoxRule::ToScribble, 24, 24);
    CHECK(lab.sparsity == Sparsity::Medium);
    const size_t fg = lab.label_map.count(1);
    CHECK(fg > 0);
    CHECK(fg < static_cast<size_t>(box.box.area()));
}

TEST_CASE("degenerate box is rejected") {
    BoxLabel box;
    box.box = Rect{5, 5, 5, 9};
    CHECK_THROWS_AS((void)preprocess_box(box, BoxRule::ToBlock, 16, 16),
                    std::invalid_argument);
}

TEST_CASE("asp one-hot planes") {
    for (int lvl = 0; lvl < 3; ++lvl) {
        const Tensor t = asp_encode(static_cast<Sparsity>(lvl), 4, 5);
        REQUIRE(t.shape() == Shape{3, 4, 5});
        float total = 0.0f;
        for (int p = 0; p < 3; ++p)
            for (int i = 0; i < 20; ++i) {
                const float v = t.data()[p * 20 + i];
                CHECK(v == (p == lvl ? 1.0f : 0.0f));
                total += v;
            }
        CHECK(total == 20.0f);
    }
}
