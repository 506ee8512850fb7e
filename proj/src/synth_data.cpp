#include "fedlppa/synth_data.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

namespace fedlppa {

using nlohmann::json;

void SiteSpec::validate() const {
    if (n_train < 1) throw std::invalid_argument("SiteSpec: n_train must be >= 1");
    if (n_test < 0) throw std::invalid_argument("SiteSpec: n_test must be >= 0");
    if (height < 16 || width < 16) throw std::invalid_argument("SiteSpec: image too small");
    if (scale_min <= 0.0f || scale_max < scale_min || scale_max > 0.9f)
        throw std::invalid_argument("SiteSpec: bad object scale range");
    // foreground and background intensities must be separable enough to
    // learn, even at the worst-case jitter draw
    if (intensity_jitter < 0.0f) throw std::invalid_argument("SiteSpec: negative jitter");
    if (std::fabs(fg_mean - bg_mean) - 2.0f * intensity_jitter < fg_std + bg_std)
        throw std::invalid_argument("SiteSpec: fg/bg intensity distributions overlap too much");
}

uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b, uint64_t c) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 1) +
                 0x94d049bb133111ebULL * (c + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace {

Image8 draw_mask(const SiteSpec& spec, std::mt19937_64& rng) {
    const int h = spec.height, w = spec.width;
    const float rbase = 0.5f * static_cast<float>(std::min(h, w));
    std::uniform_real_distribution<float> ucenter(0.35f, 0.65f);
    std::uniform_real_distribution<float> uscale(spec.scale_min, spec.scale_max);
    std::uniform_real_distribution<float> uang(0.0f, std::numbers::pi_v<float>);

    const float cy = ucenter(rng) * h, cx = ucenter(rng) * w;
    Image8 mask(h, w, 0);
    if (spec.family == ShapeFamily::Ellipse) {
        const float a = std::max(2.5f, uscale(rng) * rbase);
        const float b = std::max(2.5f, uscale(rng) * rbase);
        const float ang = uang(rng);
        const float c = std::cos(ang), s = std::sin(ang);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const float dx = x - cx, dy = y - cy;
                const float u = (dx * c + dy * s) / a;
                const float v = (-dx * s + dy * c) / b;
                if (u * u + v * v <= 1.0f) mask.at(y, x) = 1;
            }
    } else {
        // star-convex blob: random low-order Fourier boundary
        const float r0 = std::max(3.0f, uscale(rng) * rbase);
        std::uniform_real_distribution<float> uamp(-0.15f, 0.15f);
        std::uniform_real_distribution<float> uphase(0.0f, 2.0f * std::numbers::pi_v<float>);
        float amp[4], phase[4];
        for (int k = 0; k < 4; ++k) {
            amp[k] = uamp(rng);
            phase[k] = uphase(rng);
        }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const float dx = x - cx, dy = y - cy;
                const float rho = std::hypot(dx, dy);
                const float th = std::atan2(dy, dx);
                float r = r0;
                for (int k = 0; k < 4; ++k)
                    r *= 1.0f + amp[k] * std::cos(static_cast<float>(k + 2) * th + phase[k]) /
                                     static_cast<float>(k + 2) * 2.0f;
                if (rho <= std::max(2.0f, r)) mask.at(y, x) = 1;
            }
    }
    return mask;
}

}  // namespace

Sample generate_sample(const SiteSpec& spec, std::mt19937_64& rng) {
    Sample s;
    s.mask = draw_mask(spec, rng);
    size_t fg = 0;
    for (uint8_t v : s.mask.v) fg += v;
    if (fg < 4) {
        // tiny draw, retry once with the advanced rng state
        s.mask = draw_mask(spec, rng);
    }

    const int h = spec.height, w = spec.width;
    s.image = ImageF(h, w, 0.0f);
    std::uniform_real_distribution<float> ujit(-spec.intensity_jitter, spec.intensity_jitter);
    const float fg_shift = spec.intensity_jitter > 0.0f ? ujit(rng) : 0.0f;
    const float bg_shift = spec.intensity_jitter > 0.0f ? ujit(rng) : 0.0f;
    std::normal_distribution<float> nfg(spec.fg_mean + fg_shift, spec.fg_std);
    std::normal_distribution<float> nbg(spec.bg_mean + bg_shift, spec.bg_std);
    std::normal_distribution<float> nnoise(0.0f, 1.0f);
    std::uniform_real_distribution<float> uphase(0.0f, 2.0f * std::numbers::pi_v<float>);
    const float ph = uphase(rng);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float v = s.mask.at(y, x) ? nfg(rng) : nbg(rng);
            if (spec.texture_amp > 0.0f)
                v += spec.texture_amp *
                     std::sin(2.0f * std::numbers::pi_v<float> * spec.texture_freq *
                                  static_cast<float>(x + y) / static_cast<float>(w) + ph);
            v += spec.noise * nnoise(rng);
            s.image.at(y, x) = std::clamp(v, 0.0f, 1.0f);
        }

    s.weak = synthesize_weak_label(s.mask, spec.annotation, rng, spec.box_rule).label_map;
    return s;
}

namespace {
json spec_to_json(const SiteSpec& s) {
    return json{{"site_id", s.site_id},
                {"n_train", s.n_train},
                {"n_test", s.n_test},
                {"height", s.height},
                {"width", s.width},
                {"annotation", to_string(s.annotation)},
                {"box_rule", s.box_rule == BoxRule::ToBlock ? "to_block" : "to_scribble"},
                {"family", s.family == ShapeFamily::Ellipse ? "ellipse" : "blob"},
                {"fg_mean", s.fg_mean}, {"fg_std", s.fg_std},
                {"bg_mean", s.bg_mean}, {"bg_std", s.bg_std},
                {"texture_freq", s.texture_freq}, {"texture_amp", s.texture_amp},
                {"noise", s.noise},
                {"intensity_jitter", s.intensity_jitter},
                {"scale_min", s.scale_min}, {"scale_max", s.scale_max},
                {"sparsity", to_string(s.sparsity())}};
}

SiteSpec spec_from_json(const json& j) {
    SiteSpec s;
    s.site_id = j.at("site_id");
    s.n_train = j.at("n_train");
    s.n_test = j.at("n_test");
    s.height = j.at("height");
    s.width = j.at("width");
    s.annotation = annotation_type_from_string(j.at("annotation"));
    s.box_rule = j.at("box_rule") == "to_block" ? BoxRule::ToBlock : BoxRule::ToScribble;
    s.family = j.at("family") == "ellipse" ? ShapeFamily::Ellipse : ShapeFamily::Blob;
    s.fg_mean = j.at("fg_mean"); s.fg_std = j.at("fg_std");
    s.bg_mean = j.at("bg_mean"); s.bg_std = j.at("bg_std");
    s.texture_freq = j.at("texture_freq"); s.texture_amp = j.at("texture_amp");
    s.noise = j.at("noise");
    s.intensity_jitter = j.value("intensity_jitter", 0.0f);
    s.scale_min = j.at("scale_min"); s.scale_max = j.at("scale_max");
    return s;
}

char pathbuf[64];
std::string numbered(const char* stem, int i) {
    std::snprintf(pathbuf, sizeof(pathbuf), "%s_%04d.pgm", stem, i);
    return pathbuf;
}
}  // namespace

void generate_federation(const std::vector<SiteSpec>& specs, uint64_t seed,
                         const std::filesystem::path& out_dir) {
    if (specs.empty()) throw std::invalid_argument("generate_federation: no site specs");
    for (const auto& s : specs) s.validate();
    for (const auto& spec : specs) {
        for (int split = 0; split < 2; ++split) {
            const auto dir = out_dir / ("site_" + std::to_string(spec.site_id)) /
                             (split == 0 ? "train" : "test");
            std::filesystem::create_directories(dir);
            const int n = split == 0 ? spec.n_train : spec.n_test;
            for (int i = 0; i < n; ++i) {
                std::mt19937_64 rng(derive_seed(seed, static_cast<uint64_t>(spec.site_id),
                                                static_cast<uint64_t>(split),
                                                static_cast<uint64_t>(i)));
                Sample s = generate_sample(spec, rng);
                write_pgm16(dir / numbered("img", i), s.image);
                write_pgm8(dir / numbered("mask", i), s.mask);
                write_pgm8(dir / numbered("weak", i), s.weak);
            }
            json meta = spec_to_json(spec);
            meta["count"] = n;
            meta["seed"] = seed;
            std::ofstream f(dir / "meta.json");
            f << meta.dump(2) << "\n";
        }
    }
}

std::vector<SiteSpec> default_4site_config() {
    std::vector<SiteSpec> specs(4);
    specs[0].site_id = 0;  // bright ellipses, point labels
    specs[0].annotation = AnnotationType::Point;
    specs[0].family = ShapeFamily::Ellipse;
    specs[0].fg_mean = 0.80f; specs[0].bg_mean = 0.30f;
    specs[0].intensity_jitter = 0.15f;

    specs[1].site_id = 1;  // dark blobs, scribbles (inverted polarity)
    specs[1].annotation = AnnotationType::Scribble;
    specs[1].family = ShapeFamily::Blob;
    specs[1].fg_mean = 0.40f; specs[1].bg_mean = 0.75f;
    specs[1].intensity_jitter = 0.12f;

    specs[2].site_id = 2;  // textured ellipses, blocks
    specs[2].annotation = AnnotationType::Block;
    specs[2].family = ShapeFamily::Ellipse;
    specs[2].fg_mean = 0.60f; specs[2].bg_mean = 0.30f;
    specs[2].texture_freq = 6.0f; specs[2].texture_amp = 0.08f;
    specs[2].intensity_jitter = 0.08f;

    specs[3].site_id = 3;  // noisy blobs, boxes converted to scribbles
    specs[3].annotation = AnnotationType::BBox;
    specs[3].box_rule = BoxRule::ToScribble;
    specs[3].family = ShapeFamily::Blob;
    specs[3].fg_mean = 0.70f; specs[3].bg_mean = 0.40f;
    specs[3].noise = 0.08f;
    specs[3].intensity_jitter = 0.08f;
    return specs;
}

SiteDataset load_site(const std::filesystem::path& dataset_dir, int site_id) {
    SiteDataset ds;
    const auto base = dataset_dir / ("site_" + std::to_string(site_id));
    for (int split = 0; split < 2; ++split) {
        const auto dir = base / (split == 0 ? "train" : "test");
        std::ifstream f(dir / "meta.json");
        if (!f) throw std::runtime_error("load_site: missing " + (dir / "meta.json").string());
        json meta = json::parse(f);
        if (split == 0) ds.spec = spec_from_json(meta);
        const int n = meta.at("count");
        auto& vec = split == 0 ? ds.train : ds.test;
        vec.reserve(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            Sample s;
            s.image = read_pgm16(dir / numbered("img", i));
            s.mask = read_pgm8(dir / numbered("mask", i));
            s.weak = read_pgm8(dir / numbered("weak", i));
            vec.push_back(std::move(s));
        }
    }
    return ds;
}

int count_sites(const std::filesystem::path& dataset_dir) {
    int n = 0;
    while (std::filesystem::exists(dataset_dir / ("site_" + std::to_string(n)))) ++n;
    return n;
}

}  // namespace fedlppa
