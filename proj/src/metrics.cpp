#include "fedlppa/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace fedlppa {

namespace {
void check_shapes(const Image8& a, const Image8& b, const char* op) {
    if (a.h != b.h || a.w != b.w)
        throw std::invalid_argument(std::string(op) + ": mask shapes differ");
}

std::vector<std::array<int, 2>> boundary_pixels(const Image8& m) {
    std::vector<std::array<int, 2>> out;
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            if (!m.at(y, x)) continue;
            const bool edge = !m.in(y - 1, x) || !m.at(y - 1, x) ||
                              !m.in(y + 1, x) || !m.at(y + 1, x) ||
                              !m.in(y, x - 1) || !m.at(y, x - 1) ||
                              !m.in(y, x + 1) || !m.at(y, x + 1);
            if (edge) out.push_back({y, x});
        }
    return out;
}

void directed_distances(const std::vector<std::array<int, 2>>& from,
                        const std::vector<std::array<int, 2>>& to,
                        std::vector<double>& pool) {
    for (const auto& p : from) {
        double best = 1e30;
        for (const auto& q : to) {
            const double dy = p[0] - q[0], dx = p[1] - q[1];
            best = std::min(best, dy * dy + dx * dx);
        }
        pool.push_back(std::sqrt(best));
    }
}

double percentile_linear(std::vector<double> v, double pct) {
    std::sort(v.begin(), v.end());
    if (v.size() == 1) return v[0];
    const double pos = pct / 100.0 * static_cast<double>(v.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}
}  // namespace

double dice_score(const Image8& pred, const Image8& gt) {
    check_shapes(pred, gt, "dice_score");
    size_t inter = 0, p = 0, g = 0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        const bool a = pred.v[i] != 0, b = gt.v[i] != 0;
        inter += (a && b) ? 1 : 0;
        p += a ? 1 : 0;
        g += b ? 1 : 0;
    }
    if (p + g == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

double hd95(const Image8& pred, const Image8& gt) {
    check_shapes(pred, gt, "hd95");
    const auto bp = boundary_pixels(pred);
    const auto bg = boundary_pixels(gt);
    if (bp.empty() || bg.empty())
        return std::hypot(static_cast<double>(pred.h), static_cast<double>(pred.w));
    std::vector<double> pool;
    pool.reserve(bp.size() + bg.size());
    directed_distances(bp, bg, pool);
    directed_distances(bg, bp, pool);
    return percentile_linear(std::move(pool), 95.0);
}

ClassMetrics evaluate_classes(const Image8& pred, const Image8& gt, int num_classes) {
    check_shapes(pred, gt, "evaluate_classes");
    ClassMetrics m;
    for (int c = 1; c < num_classes; ++c) {
        Image8 p(pred.h, pred.w), g(pred.h, pred.w);
        for (size_t i = 0; i < pred.v.size(); ++i) {
            p.v[i] = pred.v[i] == c ? 1 : 0;
            g.v[i] = gt.v[i] == c ? 1 : 0;
        }
        m.dice.push_back(dice_score(p, g));
        m.hd95.push_back(hd95(p, g));
    }
    for (double d : m.dice) m.mean_dice += d;
    for (double d : m.hd95) m.mean_hd95 += d;
    if (!m.dice.empty()) {
        m.mean_dice /= static_cast<double>(m.dice.size());
        m.mean_hd95 /= static_cast<double>(m.hd95.size());
    }
    return m;
}

}  // namespace fedlppa
