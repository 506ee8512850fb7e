#pragma once

// Binary-mask geometry used by weak-label synthesis: distance transforms,
// erosion, thinning, inscribed/enclosing rectangles, elastic warps.
// Masks are Image8 with 0 = background, nonzero = foreground.

#include <array>
#include <random>

#include "fedlppa/image.hpp"

namespace fedlppa {

struct Rect {  // half-open [x0,x1) x [y0,y1)
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    long long area() const { return static_cast<long long>(width()) * height(); }
};

struct RotatedRect {
    float cx = 0, cy = 0;      // center
    float w = 0, h = 0;        // side lengths
    float angle = 0;           // radians, rotation of the w-axis
    std::array<std::array<float, 2>, 4> corners() const;
};

// Exact squared Euclidean distance from each pixel to the nearest zero pixel
// (two-pass Felzenszwalb-Huttenlocher). Everything outside the image bounds
// counts as zero, so a full-foreground image still has finite distances.
std::vector<double> edt_squared(const Image8& mask);

// Euclidean erosion: keep foreground pixels whose distance to background
// exceeds radius.
Image8 erode(const Image8& mask, double radius);

// Zhang-Suen thinning to a 1-px skeleton.
Image8 skeletonize(const Image8& mask);

// Maximal axis-aligned all-foreground rectangle (histogram-stack scan).
Rect largest_inscribed_rect(const Image8& mask);

// Tight axis-aligned bounding box of the foreground; zero-area if empty.
Rect bounding_box(const Image8& mask);

// Minimum-area enclosing rotated rectangle (convex hull + rotating calipers).
RotatedRect min_enclosing_rect(const Image8& mask);

// Pixel set of a rotated rectangle, clipped to the image bounds.
Image8 rasterize_rotated_rect(const RotatedRect& r, int h, int w);

// 1-px boundary ring of the axis-aligned ellipse inscribed in rect.
Image8 ellipse_ring(const Rect& rect, int h, int w);

// Foreground pixel with maximal distance to background (deepest interior
// point); returns {y,x}, or {-1,-1} if the mask is empty.
std::array<int, 2> innermost_pixel(const Image8& mask);

// Radius of the largest inscribed circle: max distance-to-background.
double max_inscribed_radius(const Image8& mask);

// Stamps a thresholded Gaussian blob (5x5, sigma 2, level 0.1) at (cy,cx).
void stamp_blob(Image8& out, int cy, int cx);

// Random smooth deformation: displacements drawn on a 4x4 control grid
// within +-amplitude px, bilinearly interpolated; nearest-pixel resample.
Image8 elastic_warp(const Image8& mask, std::mt19937_64& rng, float amplitude = 2.0f);

}  // namespace fedlppa
