#pragma once

// Sparse-annotation synthesis from full masks, and conversion of box
// annotations into pixel-supervising labels. All synthesized labels are
// noise-free: labeled pixels always agree with the full mask.

#include <random>

#include "fedlppa/image.hpp"
#include "fedlppa/morphology.hpp"
#include "fedlppa/tensor.hpp"

namespace fedlppa {

constexpr uint8_t kUnlabeled = 255;

enum class AnnotationType { Point, Scribble, Scribble2, Block, BBox, RotatedBBox };
enum class Sparsity { Sparse = 0, Medium = 1, Dense = 2 };
enum class BoxRule { ToScribble, ToBlock };

const char* to_string(AnnotationType t);
const char* to_string(Sparsity s);
AnnotationType annotation_type_from_string(const std::string& s);

struct SparseLabel {
    Image8 label_map;  // class id per pixel, kUnlabeled elsewhere
    AnnotationType type = AnnotationType::Scribble;
    Sparsity sparsity = Sparsity::Medium;
    bool used_fallback = false;  // degenerate mask handled by centroid blob
};

struct BoxLabel {
    bool rotated = false;
    Rect box;          // valid when !rotated
    RotatedRect rbox;  // valid when rotated
    int class_id = 1;
};

Sparsity sparsity_of(AnnotationType type, BoxRule box_rule);

// Derives a sparse label from a full class map. Box types first derive the
// (rotated) enclosing box per class and then apply box_rule; the result is
// re-intersected with the mask so the noise-free invariant holds.
SparseLabel synthesize_weak_label(const Image8& mask, AnnotationType type,
                                  std::mt19937_64& rng,
                                  BoxRule box_rule = BoxRule::ToBlock);

// Pixel supervision from a box alone (no mask available).
SparseLabel preprocess_box(const BoxLabel& box, BoxRule rule, int h, int w);

// One-hot sparsity prompt planes: [3,H,W] with the selected plane all ones.
Tensor asp_encode(Sparsity level, int h, int w);

}  // namespace fedlppa
