#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lodseg/tensor.hpp"

namespace lodseg {

// Anatomical direction a voxel axis points toward. World frame is RAS+.
// Codes are stored in storage-axis order: axis 0 is slowest, axis 2 fastest.
// The conventional i,j,k orientation string (e.g. "LIA") lists the fastest
// axis first, so it is the reverse of this array.
using AxisCodes = std::array<char, 3>;

// Canonical target: i->Left, j->Inferior, k->Anterior.
inline AxisCodes canonical_orientation() { return {'A', 'I', 'L'}; }

std::string orientation_string(const AxisCodes& codes);  // i,j,k order, e.g. "LIA"
AxisCodes orientation_from_string(const std::string& s);

struct Volume {
    Tensor data;                       // (n0,n1,n2)
    AxisCodes orientation{'A', 'I', 'L'};
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    std::string source_id;

    const std::vector<int64_t>& shape() const { return data.shape(); }
};

struct LabelVolume {
    std::vector<int32_t> data;         // row-major (n0,n1,n2)
    std::array<int64_t, 3> shape{0, 0, 0};
    int num_classes = 0;
    std::vector<std::string> class_names;

    int64_t numel() const { return shape[0] * shape[1] * shape[2]; }
    int32_t& at(int64_t a, int64_t b, int64_t c) {
        return data[static_cast<size_t>((a * shape[1] + b) * shape[2] + c)];
    }
    int32_t at(int64_t a, int64_t b, int64_t c) const {
        return data[static_cast<size_t>((a * shape[1] + b) * shape[2] + c)];
    }
    void validate() const;  // throws if a voxel is out of [0, num_classes)
};

// Default 8-class brain scheme: 0 background then the 7 structures.
std::vector<std::string> default_class_names();
constexpr int kDefaultNumClasses = 8;

// Axis permutation/flips only, no interpolation. Idempotent.
Volume reorient_canonical(const Volume& v);
LabelVolume reorient_canonical_labels(const LabelVolume& l, const AxisCodes& orientation);
LabelVolume reorient_labels(const LabelVolume& l, const AxisCodes& from, const AxisCodes& to);

// Zero-pad (symmetric, extra voxel on the high side) or center-crop each
// axis to `side`. Inverse mapping is recoverable from the original shape.
Volume pad_crop_to_cube(const Volume& v, int64_t side);

// Label counterpart of pad_crop_to_cube; padding fills with background (0).
LabelVolume pad_crop_labels(const LabelVolume& l, int64_t side);

// Places `cube`-sided grid content back onto the original grid, inverting
// pad_crop_to_cube. Used to emit segmentations on the input's own grid.
LabelVolume uncrop_labels(const LabelVolume& cube, const std::array<int64_t, 3>& original_shape);

// (data - mean) / std over all voxels. Throws DegenerateInputError on a
// constant volume.
Volume z_score(const Volume& v);

// (C,n0,n1,n2) binary grid; exactly one 1 per voxel across channel axis.
Tensor one_hot(const LabelVolume& l);

// Argmax over channel axis of a (C,n0,n1,n2) probability grid.
LabelVolume argmax_labels(const Tensor& probs, int num_classes);

}  // namespace lodseg
