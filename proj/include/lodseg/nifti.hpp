#pragma once

#include <string>

#include "lodseg/volume.hpp"

namespace lodseg {

// NIfTI-1, 3D scalar images only; `.nii` and `.nii.gz`. Multi-frame (4D)
// files and vector/RGB datatypes are rejected. Orientation is taken from the
// sform (preferred) or qform affine; oblique affines are rejected rather
// than snapped to a grid.
Volume load_volume(const std::string& path);
void save_volume(const Volume& v, const std::string& path);

// Integer-typed NIfTI; values must lie in [0, num_classes).
LabelVolume load_labels(const std::string& path, int num_classes);
void save_labels(const LabelVolume& l, const std::string& path,
                 const AxisCodes& orientation = canonical_orientation());

}  // namespace lodseg
