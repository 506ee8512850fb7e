#pragma once

// Segmentation quality metrics: Dice similarity and the 95th-percentile
// boundary Hausdorff distance.

#include "fedlppa/image.hpp"

namespace fedlppa {

// 2|P&G| / (|P|+|G|); both masks empty counts as a perfect 1.
double dice_score(const Image8& pred, const Image8& gt);

// 95th percentile (linear interpolation) of the pooled directed
// boundary-to-boundary distances, boundary = foreground pixels 4-adjacent
// to background. Either mask empty returns the image diagonal.
double hd95(const Image8& pred, const Image8& gt);

struct ClassMetrics {
    std::vector<double> dice;  // per foreground class 1..num_classes-1
    std::vector<double> hd95;
    double mean_dice = 0.0;
    double mean_hd95 = 0.0;
};

// Per-class metrics on class maps, averaged over foreground classes.
ClassMetrics evaluate_classes(const Image8& pred, const Image8& gt, int num_classes);

}  // namespace fedlppa
