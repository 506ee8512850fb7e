#include "fedlppa/weak_labels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedlppa {

const char* to_string(AnnotationType t) {
    switch (t) {
        case AnnotationType::Point: return "point";
        case AnnotationType::Scribble: return "scribble";
        case AnnotationType::Scribble2: return "scribble2";
        case AnnotationType::Block: return "block";
        case AnnotationType::BBox: return "bbox";
        case AnnotationType::RotatedBBox: return "rotated_bbox";
    }
    return "?";
}

const char* to_string(Sparsity s) {
    switch (s) {
        case Sparsity::Sparse: return "sparse";
        case Sparsity::Medium: return "medium";
        case Sparsity::Dense: return "dense";
    }
    return "?";
}

AnnotationType annotation_type_from_string(const std::string& s) {
    if (s == "point") return AnnotationType::Point;
    if (s == "scribble") return AnnotationType::Scribble;
    if (s == "scribble2") return AnnotationType::Scribble2;
    if (s == "block") return AnnotationType::Block;
    if (s == "bbox") return AnnotationType::BBox;
    if (s == "rotated_bbox") return AnnotationType::RotatedBBox;
    throw std::invalid_argument("unknown annotation type: " + s);
}

Sparsity sparsity_of(AnnotationType type, BoxRule box_rule) {
    switch (type) {
        case AnnotationType::Point: return Sparsity::Sparse;
        case AnnotationType::Scribble:
        case AnnotationType::Scribble2: return Sparsity::Medium;
        case AnnotationType::Block: return Sparsity::Dense;
        case AnnotationType::BBox:
        case AnnotationType::RotatedBBox:
            return box_rule == BoxRule::ToScribble ? Sparsity::Medium : Sparsity::Dense;
    }
    return Sparsity::Medium;
}

namespace {

Image8 binary_of(const Image8& mask, uint8_t cls) {
    Image8 out(mask.h, mask.w, 0);
    for (size_t i = 0; i < mask.v.size(); ++i) out.v[i] = mask.v[i] == cls ? 1 : 0;
    return out;
}

Image8 foreground_any(const Image8& mask) {
    Image8 out(mask.h, mask.w, 0);
    for (size_t i = 0; i < mask.v.size(); ++i) out.v[i] = mask.v[i] > 0 ? 1 : 0;
    return out;
}

void intersect(Image8& a, const Image8& keep) {
    for (size_t i = 0; i < a.v.size(); ++i)
        if (!keep.v[i]) a.v[i] = 0;
}

size_t popcount(const Image8& a) {
    size_t n = 0;
    for (uint8_t v : a.v) n += v ? 1 : 0;
    return n;
}

Image8 fallback_blob(const Image8& region) {
    Image8 out(region.h, region.w, 0);
    const auto [cy, cx] = innermost_pixel(region);
    if (cy >= 0) {
        stamp_blob(out, cy, cx);
        intersect(out, region);
        if (popcount(out) == 0) out.at(cy, cx) = 1;
    }
    return out;
}

Image8 synth_point(const Image8& region) {
    Rect r = largest_inscribed_rect(region);
    if (r.area() == 0) return {region.h, region.w, 0};
    // shrink by half, centered
    const int nw = std::max(1, r.width() / 2), nh = std::max(1, r.height() / 2);
    const int x0 = r.x0 + (r.width() - nw) / 2, y0 = r.y0 + (r.height() - nh) / 2;
    const int x1 = x0 + nw, y1 = y0 + nh;
    const int mx = (x0 + x1 - 1) / 2, my = (y0 + y1 - 1) / 2;
    Image8 out(region.h, region.w, 0);
    const int cy[4] = {y0, y1 - 1, my, my};
    const int cx[4] = {mx, mx, x0, x1 - 1};
    for (int i = 0; i < 4; ++i) stamp_blob(out, cy[i], cx[i]);
    intersect(out, region);
    return out;
}

Image8 synth_scribble(const Image8& region) {
    Image8 er = erode(region, 1.0);
    if (popcount(er) == 0) er = region;
    Image8 sk = skeletonize(er);
    intersect(sk, region);
    return sk;
}

Image8 synth_scribble2(const Image8& region, std::mt19937_64& rng) {
    Image8 s = synth_scribble(region);
    Image8 warped = elastic_warp(s, rng);
    intersect(warped, region);
    std::vector<size_t> px;
    for (size_t i = 0; i < warped.v.size(); ++i)
        if (warped.v[i]) px.push_back(i);
    std::shuffle(px.begin(), px.end(), rng);
    const size_t erase = static_cast<size_t>(0.3 * static_cast<double>(px.size()));
    for (size_t i = 0; i < erase; ++i) warped.v[px[i]] = 0;
    return warped;
}

Image8 synth_block(const Image8& region) {
    return erode(region, 0.25 * max_inscribed_radius(region));
}

Image8 synth_region(const Image8& region, AnnotationType type, std::mt19937_64& rng) {
    switch (type) {
        case AnnotationType::Point: return synth_point(region);
        case AnnotationType::Scribble: return synth_scribble(region);
        case AnnotationType::Scribble2: return synth_scribble2(region, rng);
        case AnnotationType::Block: return synth_block(region);
        default: break;
    }
    throw std::logic_error("synth_region: box types handled separately");
}

Rect scale2x_clipped(const Rect& r, int h, int w) {
    const int cx2 = r.x0 + r.x1, cy2 = r.y0 + r.y1;  // 2*center
    return Rect{std::max(0, (cx2 - 2 * r.width()) / 2), std::max(0, (cy2 - 2 * r.height()) / 2),
                std::min(w, (cx2 + 2 * r.width() + 1) / 2), std::min(h, (cy2 + 2 * r.height() + 1) / 2)};
}

Image8 rect_fill(const Rect& r, int h, int w) {
    Image8 out(h, w, 0);
    for (int y = std::max(0, r.y0); y < std::min(h, r.y1); ++y)
        for (int x = std::max(0, r.x0); x < std::min(w, r.x1); ++x) out.at(y, x) = 1;
    return out;
}

Image8 rotated_ellipse_ring(const RotatedRect& r, int h, int w) {
    Image8 fill(h, w, 0);
    const float c = std::cos(r.angle), s = std::sin(r.angle);
    const float a = std::max(0.5f, (r.w - 1) * 0.5f), b = std::max(0.5f, (r.h - 1) * 0.5f);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float dx = x - r.cx, dy = y - r.cy;
            const float u = (dx * c + dy * s) / a;
            const float v = (-dx * s + dy * c) / b;
            if (u * u + v * v <= 1.0f) fill.at(y, x) = 1;
        }
    Image8 ring(h, w, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!fill.at(y, x)) continue;
            const bool interior = fill.in(y - 1, x) && fill.at(y - 1, x) &&
                                  fill.in(y + 1, x) && fill.at(y + 1, x) &&
                                  fill.in(y, x - 1) && fill.at(y, x - 1) &&
                                  fill.in(y, x + 1) && fill.at(y, x + 1);
            if (!interior) ring.at(y, x) = 1;
        }
    return ring;
}

// foreground pixel set a box converts into, before any mask re-intersection
Image8 box_foreground(const BoxLabel& box, BoxRule rule, int h, int w) {
    if (!box.rotated) {
        const Rect& r = box.box;
        if (rule == BoxRule::ToBlock) {
            const int sx = static_cast<int>(0.3 * r.width());
            const int sy = static_cast<int>(0.3 * r.height());
            Rect inner{r.x0 + sx, r.y0 + sy, r.x1 - sx, r.y1 - sy};
            if (inner.width() <= 0 || inner.height() <= 0)
                inner = Rect{(r.x0 + r.x1) / 2, (r.y0 + r.y1) / 2,
                             (r.x0 + r.x1) / 2 + 1, (r.y0 + r.y1) / 2 + 1};
            return rect_fill(inner, h, w);
        }
        return ellipse_ring(r, h, w);
    }
    RotatedRect rr = box.rbox;
    if (rule == BoxRule::ToBlock) {
        rr.w *= 0.4f;  // 30% off each side
        rr.h *= 0.4f;
        Image8 out = rasterize_rotated_rect(rr, h, w);
        if (popcount(out) == 0 && Image8(h, w).in(static_cast<int>(rr.cy), static_cast<int>(rr.cx)))
            out.at(static_cast<int>(rr.cy), static_cast<int>(rr.cx)) = 1;
        return out;
    }
    return rotated_ellipse_ring(rr, h, w);
}

Image8 box_band_background(const BoxLabel& box, int h, int w) {
    if (!box.rotated) {
        Image8 band = rect_fill(scale2x_clipped(box.box, h, w), h, w);
        const Image8 inside = rect_fill(box.box, h, w);
        for (size_t i = 0; i < band.v.size(); ++i)
            if (inside.v[i]) band.v[i] = 0;
        return band;
    }
    RotatedRect big = box.rbox;
    big.w *= 2.0f;
    big.h *= 2.0f;
    Image8 band = rasterize_rotated_rect(big, h, w);
    const Image8 inside = rasterize_rotated_rect(box.rbox, h, w);
    for (size_t i = 0; i < band.v.size(); ++i)
        if (inside.v[i]) band.v[i] = 0;
    return band;
}

}  // namespace

SparseLabel synthesize_weak_label(const Image8& mask, AnnotationType type,
                                  std::mt19937_64& rng, BoxRule box_rule) {
    std::vector<uint8_t> classes;
    for (uint8_t c = 1; c < kUnlabeled; ++c) {
        bool present = false;
        for (uint8_t v : mask.v)
            if (v == c) { present = true; break; }
        if (present) classes.push_back(c);
    }
    if (classes.empty())
        throw std::invalid_argument("synthesize_weak_label: mask has no foreground class");

    SparseLabel out;
    out.type = type;
    out.sparsity = sparsity_of(type, box_rule);
    out.label_map = Image8(mask.h, mask.w, kUnlabeled);

    const bool is_box = type == AnnotationType::BBox || type == AnnotationType::RotatedBBox;
    const Image8 fg_any = foreground_any(mask);
    Image8 bg_exclude = fg_any;  // for box types also excludes the box interiors
    Image8 bg_band(mask.h, mask.w, 0);

    for (uint8_t c : classes) {
        const Image8 m = binary_of(mask, c);
        Image8 labels;
        if (popcount(m) < 4) {
            labels = fallback_blob(m);
            out.used_fallback = true;
        } else if (is_box) {
            BoxLabel bl;
            bl.class_id = c;
            if (type == AnnotationType::BBox) {
                bl.rotated = false;
                bl.box = bounding_box(m);
            } else {
                bl.rotated = true;
                bl.rbox = min_enclosing_rect(m);
            }
            labels = box_foreground(bl, box_rule, mask.h, mask.w);
            intersect(labels, m);  // keep labels noise-free
            const Image8 inside = bl.rotated ? rasterize_rotated_rect(bl.rbox, mask.h, mask.w)
                                             : rect_fill(bl.box, mask.h, mask.w);
            for (size_t i = 0; i < inside.v.size(); ++i)
                if (inside.v[i]) bg_exclude.v[i] = 1;
            const Image8 band = box_band_background(bl, mask.h, mask.w);
            for (size_t i = 0; i < band.v.size(); ++i)
                if (band.v[i]) bg_band.v[i] = 1;
        } else {
            labels = synth_region(m, type, rng);
            intersect(labels, m);
        }
        if (popcount(labels) == 0) {
            labels = fallback_blob(m);
            out.used_fallback = true;
        }
        for (size_t i = 0; i < labels.v.size(); ++i)
            if (labels.v[i]) out.label_map.v[i] = c;
    }

    // background supervision, restricted to a band around the objects
    bool has_bg = false;
    for (uint8_t v : fg_any.v)
        if (!v) { has_bg = true; break; }
    if (has_bg) {
        Image8 bg_region(mask.h, mask.w, 0);
        if (is_box) {
            for (size_t i = 0; i < bg_region.v.size(); ++i)
                bg_region.v[i] = (bg_band.v[i] && !bg_exclude.v[i]) ? 1 : 0;
            // box rule: the whole band outside the boxes supervises background
            if (popcount(bg_region) == 0) bg_region = fallback_blob(binary_of(fg_any, 0));
            for (size_t i = 0; i < bg_region.v.size(); ++i)
                if (bg_region.v[i]) out.label_map.v[i] = 0;
        } else {
            const Rect band = scale2x_clipped(bounding_box(fg_any), mask.h, mask.w);
            const Image8 band_fill = rect_fill(band, mask.h, mask.w);
            for (size_t i = 0; i < bg_region.v.size(); ++i)
                bg_region.v[i] = (band_fill.v[i] && !fg_any.v[i]) ? 1 : 0;
            Image8 labels = popcount(bg_region) >= 4 ? synth_region(bg_region, type, rng)
                                                     : fallback_blob(bg_region);
            intersect(labels, bg_region);
            if (popcount(labels) == 0) {
                labels = fallback_blob(bg_region);
                out.used_fallback = true;
            }
            for (size_t i = 0; i < labels.v.size(); ++i)
                if (labels.v[i]) out.label_map.v[i] = 0;
        }
    }
    return out;
}

SparseLabel preprocess_box(const BoxLabel& box, BoxRule rule, int h, int w) {
    if (!box.rotated && box.box.area() <= 0)
        throw std::invalid_argument("preprocess_box: degenerate box");
    if (box.rotated && (box.rbox.w <= 0 || box.rbox.h <= 0))
        throw std::invalid_argument("preprocess_box: degenerate box");

    SparseLabel out;
    out.type = box.rotated ? AnnotationType::RotatedBBox : AnnotationType::BBox;
    out.sparsity = rule == BoxRule::ToScribble ? Sparsity::Medium : Sparsity::Dense;
    out.label_map = Image8(h, w, kUnlabeled);

    const Image8 fg = box_foreground(box, rule, h, w);
    for (size_t i = 0; i < fg.v.size(); ++i)
        if (fg.v[i]) out.label_map.v[i] = static_cast<uint8_t>(box.class_id);
    const Image8 bg = box_band_background(box, h, w);
    for (size_t i = 0; i < bg.v.size(); ++i)
        if (bg.v[i] && out.label_map.v[i] == kUnlabeled) out.label_map.v[i] = 0;
    return out;
}

Tensor asp_encode(Sparsity level, int h, int w) {
    Tensor t(Shape{3, h, w});
    const int plane = static_cast<int>(level);
    std::fill(t.data() + static_cast<size_t>(plane) * h * w,
              t.data() + static_cast<size_t>(plane + 1) * h * w, 1.0f);
    return t;
}

}  // namespace fedlppa
