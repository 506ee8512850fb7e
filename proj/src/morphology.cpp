#include "fedlppa/morphology.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fedlppa {

std::array<std::array<float, 2>, 4> RotatedRect::corners() const {
    const float c = std::cos(angle), s = std::sin(angle);
    const float hw = w * 0.5f, hh = h * 0.5f;
    std::array<std::array<float, 2>, 4> out;
    const float sx[4] = {-hw, hw, hw, -hw};
    const float sy[4] = {-hh, -hh, hh, hh};
    for (int i = 0; i < 4; ++i)
        out[i] = {cx + sx[i] * c - sy[i] * s, cy + sx[i] * s + sy[i] * c};
    return out;
}

namespace {
constexpr double kInf = 1e18;

// 1-D squared distance transform (lower envelope of parabolas)
void dt1d(const double* f, int n, double* d, int* v, double* z) {
    int k = 0;
    v[0] = 0;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = 1; q < n; ++q) {
        double s;
        while (true) {
            s = ((f[q] + static_cast<double>(q) * q) - (f[v[k]] + static_cast<double>(v[k]) * v[k])) /
                (2.0 * q - 2.0 * v[k]);
            if (s <= z[k]) { --k; } else break;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double dq = q - v[k];
        d[q] = dq * dq + f[v[k]];
    }
}
}  // namespace

std::vector<double> edt_squared(const Image8& mask) {
    // everything outside the image counts as background (1-px zero border)
    const int h = mask.h + 2, w = mask.w + 2;
    std::vector<double> d(static_cast<size_t>(h) * w, 0.0);
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x)
            d[static_cast<size_t>(y + 1) * w + (x + 1)] =
                mask.at(y, x) ? kInf : 0.0;

    const int m = std::max(h, w);
    std::vector<double> f(m), out(m), z(m + 1);
    std::vector<int> v(m);
    for (int x = 0; x < w; ++x) {  // columns
        for (int y = 0; y < h; ++y) f[y] = d[static_cast<size_t>(y) * w + x];
        dt1d(f.data(), h, out.data(), v.data(), z.data());
        for (int y = 0; y < h; ++y) d[static_cast<size_t>(y) * w + x] = out[y];
    }
    for (int y = 0; y < h; ++y) {  // rows
        for (int x = 0; x < w; ++x) f[x] = d[static_cast<size_t>(y) * w + x];
        dt1d(f.data(), w, out.data(), v.data(), z.data());
        for (int x = 0; x < w; ++x) d[static_cast<size_t>(y) * w + x] = out[x];
    }
    std::vector<double> res(static_cast<size_t>(mask.h) * mask.w);
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x)
            res[static_cast<size_t>(y) * mask.w + x] = d[static_cast<size_t>(y + 1) * w + (x + 1)];
    return res;
}

Image8 erode(const Image8& mask, double radius) {
    const auto d = edt_squared(mask);
    Image8 out(mask.h, mask.w, 0);
    const double r2 = radius * radius;
    for (size_t i = 0; i < d.size(); ++i)
        if (mask.v[i] && d[i] > r2) out.v[i] = 1;
    return out;
}

namespace {
int neighbors8(const Image8& m, int y, int x, uint8_t* p) {
    // p[0..7] = N, NE, E, SE, S, SW, W, NW
    static const int dy[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
    static const int dx[8] = {0, 1, 1, 1, 0, -1, -1, -1};
    int cnt = 0;
    for (int i = 0; i < 8; ++i) {
        const int yy = y + dy[i], xx = x + dx[i];
        p[i] = (m.in(yy, xx) && m.at(yy, xx)) ? 1 : 0;
        cnt += p[i];
    }
    return cnt;
}

int transitions(const uint8_t* p) {
    int t = 0;
    for (int i = 0; i < 8; ++i)
        if (!p[i] && p[(i + 1) % 8]) ++t;
    return t;
}
}  // namespace

Image8 skeletonize(const Image8& mask) {
    Image8 m(mask.h, mask.w);
    for (size_t i = 0; i < m.v.size(); ++i) m.v[i] = mask.v[i] ? 1 : 0;
    bool changed = true;
    std::vector<size_t> kill;
    while (changed) {
        changed = false;
        for (int pass = 0; pass < 2; ++pass) {
            kill.clear();
            for (int y = 0; y < m.h; ++y)
                for (int x = 0; x < m.w; ++x) {
                    if (!m.at(y, x)) continue;
                    uint8_t p[8];
                    const int bn = neighbors8(m, y, x, p);
                    if (bn < 2 || bn > 6) continue;
                    if (transitions(p) != 1) continue;
                    // p: 0=N(p2) 2=E(p4) 4=S(p6) 6=W(p8)
                    if (pass == 0) {
                        if (p[0] && p[2] && p[4]) continue;
                        if (p[2] && p[4] && p[6]) continue;
                    } else {
                        if (p[0] && p[2] && p[6]) continue;
                        if (p[0] && p[4] && p[6]) continue;
                    }
                    kill.push_back(static_cast<size_t>(y) * m.w + x);
                }
            for (size_t i : kill) m.v[i] = 0;
            if (!kill.empty()) changed = true;
        }
    }
    return m;
}

Rect largest_inscribed_rect(const Image8& mask) {
    const int h = mask.h, w = mask.w;
    std::vector<int> hist(w, 0), stack;
    Rect best;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) hist[x] = mask.at(y, x) ? hist[x] + 1 : 0;
        stack.clear();
        for (int x = 0; x <= w; ++x) {
            const int cur = (x < w) ? hist[x] : 0;
            while (!stack.empty() && hist[stack.back()] >= cur) {
                const int ht = hist[stack.back()];
                stack.pop_back();
                const int left = stack.empty() ? 0 : stack.back() + 1;
                const long long area = static_cast<long long>(ht) * (x - left);
                if (area > best.area()) best = Rect{left, y - ht + 1, x, y + 1};
            }
            stack.push_back(x);
        }
    }
    return best;
}

Rect bounding_box(const Image8& mask) {
    int x0 = mask.w, y0 = mask.h, x1 = -1, y1 = -1;
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x)
            if (mask.at(y, x)) {
                x0 = std::min(x0, x); y0 = std::min(y0, y);
                x1 = std::max(x1, x); y1 = std::max(y1, y);
            }
    if (x1 < 0) return Rect{};
    return Rect{x0, y0, x1 + 1, y1 + 1};
}

namespace {
using Pt = std::array<double, 2>;

double cross(const Pt& o, const Pt& a, const Pt& b) {
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

std::vector<Pt> convex_hull(std::vector<Pt> pts) {
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    const size_t n = pts.size();
    if (n < 3) return pts;
    std::vector<Pt> hull(2 * n);
    size_t k = 0;
    for (size_t i = 0; i < n; ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    const size_t lower = k + 1;
    for (size_t i = n - 1; i-- > 0;) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}
}  // namespace

RotatedRect min_enclosing_rect(const Image8& mask) {
    std::vector<Pt> pts;
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x)
            if (mask.at(y, x)) pts.push_back({static_cast<double>(x), static_cast<double>(y)});
    if (pts.empty()) throw std::invalid_argument("min_enclosing_rect: empty mask");
    auto hull = convex_hull(std::move(pts));
    if (hull.size() == 1) {
        // a single pixel: unit box around its center
        return RotatedRect{static_cast<float>(hull[0][0]), static_cast<float>(hull[0][1]), 1, 1, 0};
    }
    double best_area = std::numeric_limits<double>::max();
    RotatedRect best;
    for (size_t i = 0; i < hull.size(); ++i) {
        const Pt& a = hull[i];
        const Pt& b = hull[(i + 1) % hull.size()];
        double ex = b[0] - a[0], ey = b[1] - a[1];
        const double len = std::hypot(ex, ey);
        if (len < 1e-12) continue;
        ex /= len; ey /= len;
        double umin = kInf, umax = -kInf, vmin = kInf, vmax = -kInf;
        for (const Pt& p : hull) {
            const double u = (p[0] - a[0]) * ex + (p[1] - a[1]) * ey;
            const double v = -(p[0] - a[0]) * ey + (p[1] - a[1]) * ex;
            umin = std::min(umin, u); umax = std::max(umax, u);
            vmin = std::min(vmin, v); vmax = std::max(vmax, v);
        }
        const double area = (umax - umin) * (vmax - vmin);
        if (area < best_area) {
            best_area = area;
            const double cu = (umin + umax) * 0.5, cv = (vmin + vmax) * 0.5;
            best.cx = static_cast<float>(a[0] + cu * ex - cv * ey);
            best.cy = static_cast<float>(a[1] + cu * ey + cv * ex);
            // +1 so the rect covers full pixel footprints, not just centers
            best.w = static_cast<float>(umax - umin + 1.0);
            best.h = static_cast<float>(vmax - vmin + 1.0);
            best.angle = static_cast<float>(std::atan2(ey, ex));
        }
    }
    return best;
}

Image8 rasterize_rotated_rect(const RotatedRect& r, int h, int w) {
    Image8 out(h, w, 0);
    const float c = std::cos(r.angle), s = std::sin(r.angle);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float dx = x - r.cx, dy = y - r.cy;
            const float u = dx * c + dy * s;
            const float v = -dx * s + dy * c;
            if (std::fabs(u) <= r.w * 0.5f && std::fabs(v) <= r.h * 0.5f) out.at(y, x) = 1;
        }
    return out;
}

Image8 ellipse_ring(const Rect& rect, int h, int w) {
    Image8 fill(h, w, 0);
    const double cx = (rect.x0 + rect.x1 - 1) * 0.5, cy = (rect.y0 + rect.y1 - 1) * 0.5;
    const double a = std::max(0.5, (rect.width() - 1) * 0.5);
    const double b = std::max(0.5, (rect.height() - 1) * 0.5);
    for (int y = std::max(0, rect.y0); y < std::min(h, rect.y1); ++y)
        for (int x = std::max(0, rect.x0); x < std::min(w, rect.x1); ++x) {
            const double u = (x - cx) / a, v = (y - cy) / b;
            if (u * u + v * v <= 1.0) fill.at(y, x) = 1;
        }
    // ring = filled ellipse minus its 4-neighborhood interior
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

std::array<int, 2> innermost_pixel(const Image8& mask) {
    const auto d = edt_squared(mask);
    double best = -1.0;
    std::array<int, 2> at{-1, -1};
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x) {
            const double dv = d[static_cast<size_t>(y) * mask.w + x];
            if (mask.at(y, x) && dv > best) {
                best = dv;
                at = {y, x};
            }
        }
    return at;
}

double max_inscribed_radius(const Image8& mask) {
    const auto d = edt_squared(mask);
    double best = 0.0;
    for (size_t i = 0; i < d.size(); ++i)
        if (mask.v[i]) best = std::max(best, d[i]);
    return std::sqrt(best);
}

void stamp_blob(Image8& out, int cy, int cx) {
    constexpr double sigma = 2.0, level = 0.1;
    for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) {
            const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            if (g > level && out.in(cy + dy, cx + dx)) out.at(cy + dy, cx + dx) = 1;
        }
}

Image8 elastic_warp(const Image8& mask, std::mt19937_64& rng, float amplitude) {
    constexpr int G = 4;
    std::uniform_real_distribution<float> u(-amplitude, amplitude);
    float gy[G][G], gx[G][G];
    for (int i = 0; i < G; ++i)
        for (int j = 0; j < G; ++j) {
            gy[i][j] = u(rng);
            gx[i][j] = u(rng);
        }
    Image8 out(mask.h, mask.w, 0);
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x) {
            const float fy = mask.h > 1 ? static_cast<float>(y) / (mask.h - 1) * (G - 1) : 0.0f;
            const float fx = mask.w > 1 ? static_cast<float>(x) / (mask.w - 1) * (G - 1) : 0.0f;
            const int i0 = std::min(static_cast<int>(fy), G - 2);
            const int j0 = std::min(static_cast<int>(fx), G - 2);
            const float ty = fy - i0, tx = fx - j0;
            auto lerp2 = [&](const float g[G][G]) {
                return (1 - ty) * ((1 - tx) * g[i0][j0] + tx * g[i0][j0 + 1]) +
                       ty * ((1 - tx) * g[i0 + 1][j0] + tx * g[i0 + 1][j0 + 1]);
            };
            const int sy = std::clamp(static_cast<int>(std::lround(y + lerp2(gy))), 0, mask.h - 1);
            const int sx = std::clamp(static_cast<int>(std::lround(x + lerp2(gx))), 0, mask.w - 1);
            out.at(y, x) = mask.at(sy, sx) ? 1 : 0;
        }
    return out;
}

}  // namespace fedlppa
