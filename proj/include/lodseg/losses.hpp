#pragma once

#include "lodseg/tensor.hpp"
#include "lodseg/volume.hpp"

namespace lodseg {

struct LossConfig {
    double lambda = 0.0;        // mixture weight; 0 = pure Dice
    double epsilon = 1e-7;      // log clamp and Dice denominator guard
    bool voxel_average = true;  // cross-entropy reduction
    bool include_background = true;  // whether Dice sums over channel 0
};

// -sum_i sum_k y[k,i] log(F[k,i]) with F clamped to [epsilon, 1]; divided by
// the voxel count when voxel_average is set. y and F are (C,n0,n1,n2).
double cross_entropy(const Tensor& y, const Tensor& F, const LossConfig& cfg = {});

// Squared-denominator soft Dice:
//   1 - (2/C) * sum_i [ sum_k y*F / (sum_k y^2 + F^2 + epsilon) ]
// When include_background is false, channel 0 is dropped and C counts only
// the remaining channels.
double dice_loss(const Tensor& y, const Tensor& F, const LossConfig& cfg = {});

// lambda * cross_entropy + (1 - lambda) * dice_loss.
double mixed_loss(const Tensor& y, const Tensor& F, const LossConfig& cfg = {});

// Same value; also writes d(loss)/dF into grad (resized to F's shape).
double mixed_loss_grad(const Tensor& y, const Tensor& F, const LossConfig& cfg, Tensor& grad);

// Hard Dice 2|A∩B| / (|A|+|B|) on binarized class-`cls` masks; 1 when both
// masks are empty.
double dice_metric(const LabelVolume& pred, const LabelVolume& gt, int cls);

// Mean over foreground classes 1..C-1.
double mean_foreground_dice(const LabelVolume& pred, const LabelVolume& gt);

}  // namespace lodseg
