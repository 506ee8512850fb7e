#pragma once

// Synthetic multi-site 2-D segmentation data: every site shares the task
// (one compact foreground object per image) but differs in appearance
// (intensity polarity, texture, noise) and in annotation type.

#include <filesystem>
#include <random>

#include "fedlppa/image.hpp"
#include "fedlppa/weak_labels.hpp"

namespace fedlppa {

enum class ShapeFamily { Ellipse, Blob };

struct SiteSpec {
    int site_id = 0;
    int n_train = 200;
    int n_test = 50;
    int height = 64;
    int width = 64;
    AnnotationType annotation = AnnotationType::Scribble;
    BoxRule box_rule = BoxRule::ToBlock;  // used by box annotation types
    ShapeFamily family = ShapeFamily::Ellipse;
    float fg_mean = 0.8f, fg_std = 0.05f;
    float bg_mean = 0.3f, bg_std = 0.05f;
    // per-image uniform shift of each mean, drawn independently for fg and
    // bg: within-site appearance variability that a handful of training
    // images cannot cover
    float intensity_jitter = 0.0f;
    float texture_freq = 0.0f, texture_amp = 0.0f;
    float noise = 0.02f;
    float scale_min = 0.25f, scale_max = 0.45f;  // object radius, fraction of min(H,W)/2

    void validate() const;  // throws on unlearnable or degenerate settings
    Sparsity sparsity() const { return sparsity_of(annotation, box_rule); }
};

struct Sample {
    ImageF image;
    Image8 mask;  // full class map, evaluation / synthesis only
    Image8 weak;  // sparse label map, kUnlabeled elsewhere
};

// One in-memory sample; rng drives both geometry and appearance.
Sample generate_sample(const SiteSpec& spec, std::mt19937_64& rng);

// Writes site_<k>/{train,test}/{img_%04d.pgm, mask_%04d.pgm, weak_%04d.pgm,
// meta.json}. Byte-deterministic for a given seed.
void generate_federation(const std::vector<SiteSpec>& specs, uint64_t seed,
                         const std::filesystem::path& out_dir);

// The stock 4-site heterogeneous setup used by the experiment harness.
std::vector<SiteSpec> default_4site_config();

struct SiteDataset {
    SiteSpec spec;
    std::vector<Sample> train, test;
};

SiteDataset load_site(const std::filesystem::path& dataset_dir, int site_id);
int count_sites(const std::filesystem::path& dataset_dir);

// splitmix64 stream derivation for (seed, site, split, index)
uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b, uint64_t c);

}  // namespace fedlppa
