#include "lodseg/volume.hpp"

#include <algorithm>
#include <cmath>

#include "lodseg/errors.hpp"

namespace lodseg {

namespace {

char opposite(char c) {
    switch (c) {
        case 'L': return 'R';
        case 'R': return 'L';
        case 'A': return 'P';
        case 'P': return 'A';
        case 'S': return 'I';
        case 'I': return 'S';
    }
    throw FormatError(std::string("invalid orientation code '") + c + "'");
}

// World axis (0=LR, 1=AP, 2=SI) a code lives on.
int world_axis(char c) {
    switch (c) {
        case 'L': case 'R': return 0;
        case 'A': case 'P': return 1;
        case 'S': case 'I': return 2;
    }
    throw FormatError(std::string("invalid orientation code '") + c + "'");
}

}  // namespace

std::string orientation_string(const AxisCodes& codes) {
    return {codes[2], codes[1], codes[0]};
}

AxisCodes orientation_from_string(const std::string& s) {
    if (s.size() != 3) throw FormatError("orientation string must have 3 letters");
    AxisCodes c{s[2], s[1], s[0]};
    int seen = 0;
    for (char x : c) seen |= 1 << world_axis(x);
    if (seen != 7) throw FormatError("orientation '" + s + "' does not cover all three world axes");
    return c;
}

std::vector<std::string> default_class_names() {
    return {"background",  "grey_matter", "white_matter", "cerebrospinal_fluid",
            "ventricles",  "cerebellum",  "brainstem",    "basal_ganglia"};
}

void LabelVolume::validate() const {
    for (int64_t i = 0; i < numel(); ++i) {
        int32_t v = data[static_cast<size_t>(i)];
        if (v < 0 || v >= num_classes) {
            int64_t rem = i;
            int64_t c = rem % shape[2]; rem /= shape[2];
            int64_t b = rem % shape[1]; rem /= shape[1];
            throw FormatError("label " + std::to_string(v) + " out of range [0," +
                              std::to_string(num_classes) + ") at voxel (" + std::to_string(rem) +
                              "," + std::to_string(b) + "," + std::to_string(c) + ")");
        }
    }
}

namespace {

// For each target axis, which source axis supplies it and whether it flips.
struct AxisMap {
    std::array<int, 3> src;
    std::array<bool, 3> flip;
    bool identity;
};

AxisMap compute_axis_map(const AxisCodes& from, const AxisCodes& to) {
    AxisMap m{};
    m.identity = true;
    for (int t = 0; t < 3; ++t) {
        int found = -1;
        for (int s = 0; s < 3; ++s) {
            if (world_axis(from[s]) == world_axis(to[t])) { found = s; break; }
        }
        if (found < 0) throw FormatError("orientation codes do not span all world axes");
        m.src[t] = found;
        m.flip[t] = (from[found] != to[t]);
        if (found != t || m.flip[t]) m.identity = false;
    }
    return m;
}

}  // namespace

Volume reorient_canonical(const Volume& v) {
    const AxisCodes target = canonical_orientation();
    AxisMap m = compute_axis_map(v.orientation, target);
    if (m.identity) return v;

    const auto& in_shape = v.shape();
    std::vector<int64_t> out_shape = {in_shape[m.src[0]], in_shape[m.src[1]], in_shape[m.src[2]]};
    Volume out;
    out.data = Tensor(out_shape);
    out.orientation = target;
    out.spacing_mm = {v.spacing_mm[m.src[0]], v.spacing_mm[m.src[1]], v.spacing_mm[m.src[2]]};
    out.source_id = v.source_id;

    std::array<int64_t, 3> idx{};
    for (int64_t a = 0; a < out_shape[0]; ++a)
        for (int64_t b = 0; b < out_shape[1]; ++b)
            for (int64_t c = 0; c < out_shape[2]; ++c) {
                std::array<int64_t, 3> t{a, b, c};
                for (int ax = 0; ax < 3; ++ax) {
                    int64_t i = t[ax];
                    if (m.flip[ax]) i = out_shape[ax] - 1 - i;
                    idx[m.src[ax]] = i;
                }
                out.data.at3(a, b, c) = v.data.at3(idx[0], idx[1], idx[2]);
            }
    return out;
}

LabelVolume reorient_canonical_labels(const LabelVolume& l, const AxisCodes& orientation) {
    return reorient_labels(l, orientation, canonical_orientation());
}

LabelVolume reorient_labels(const LabelVolume& l, const AxisCodes& from, const AxisCodes& to) {
    AxisMap m = compute_axis_map(from, to);
    if (m.identity) return l;

    LabelVolume out;
    out.shape = {l.shape[m.src[0]], l.shape[m.src[1]], l.shape[m.src[2]]};
    out.num_classes = l.num_classes;
    out.class_names = l.class_names;
    out.data.resize(static_cast<size_t>(out.numel()));

    std::array<int64_t, 3> idx{};
    for (int64_t a = 0; a < out.shape[0]; ++a)
        for (int64_t b = 0; b < out.shape[1]; ++b)
            for (int64_t c = 0; c < out.shape[2]; ++c) {
                std::array<int64_t, 3> t{a, b, c};
                for (int ax = 0; ax < 3; ++ax) {
                    int64_t i = t[ax];
                    if (m.flip[ax]) i = out.shape[ax] - 1 - i;
                    idx[m.src[ax]] = i;
                }
                out.at(a, b, c) = l.at(idx[0], idx[1], idx[2]);
            }
    return out;
}

namespace {

// Start offset of the centered copy region. For padding (n < side) the
// extra voxel lands on the high side; for cropping, on the high side too.
int64_t copy_start(int64_t n, int64_t side) {
    return n >= side ? (n - side) / 2 : 0;
}
int64_t place_start(int64_t n, int64_t side) {
    return n >= side ? 0 : (side - n) / 2;
}

}  // namespace

Volume pad_crop_to_cube(const Volume& v, int64_t side) {
    if (side < 1) throw ConfigError("pad_crop_to_cube: side must be >= 1");
    const auto& in = v.shape();
    Volume out;
    out.data = Tensor({side, side, side}, 0.0f);
    out.orientation = v.orientation;
    out.spacing_mm = v.spacing_mm;
    out.source_id = v.source_id;

    std::array<int64_t, 3> n{in[0], in[1], in[2]};
    std::array<int64_t, 3> src{}, dst{}, len{};
    for (int ax = 0; ax < 3; ++ax) {
        src[ax] = copy_start(n[ax], side);
        dst[ax] = place_start(n[ax], side);
        len[ax] = std::min(n[ax], side);
    }
    for (int64_t a = 0; a < len[0]; ++a)
        for (int64_t b = 0; b < len[1]; ++b)
            for (int64_t c = 0; c < len[2]; ++c)
                out.data.at3(dst[0] + a, dst[1] + b, dst[2] + c) =
                    v.data.at3(src[0] + a, src[1] + b, src[2] + c);
    return out;
}

LabelVolume pad_crop_labels(const LabelVolume& l, int64_t side) {
    if (side < 1) throw ConfigError("pad_crop_labels: side must be >= 1");
    LabelVolume out;
    out.shape = {side, side, side};
    out.num_classes = l.num_classes;
    out.class_names = l.class_names;
    out.data.assign(static_cast<size_t>(out.numel()), 0);

    std::array<int64_t, 3> src{}, dst{}, len{};
    for (int ax = 0; ax < 3; ++ax) {
        src[ax] = copy_start(l.shape[ax], side);
        dst[ax] = place_start(l.shape[ax], side);
        len[ax] = std::min(l.shape[ax], side);
    }
    for (int64_t a = 0; a < len[0]; ++a)
        for (int64_t b = 0; b < len[1]; ++b)
            for (int64_t c = 0; c < len[2]; ++c)
                out.at(dst[0] + a, dst[1] + b, dst[2] + c) =
                    l.at(src[0] + a, src[1] + b, src[2] + c);
    return out;
}

LabelVolume uncrop_labels(const LabelVolume& cube, const std::array<int64_t, 3>& original_shape) {
    if (cube.shape[0] != cube.shape[1] || cube.shape[1] != cube.shape[2])
        throw ShapeError("uncrop_labels expects a cube grid");
    const int64_t side = cube.shape[0];
    LabelVolume out;
    out.shape = original_shape;
    out.num_classes = cube.num_classes;
    out.class_names = cube.class_names;
    out.data.assign(static_cast<size_t>(out.numel()), 0);

    std::array<int64_t, 3> src{}, dst{}, len{};
    for (int ax = 0; ax < 3; ++ax) {
        // Inverse of pad_crop_to_cube: swap source/destination roles.
        dst[ax] = copy_start(original_shape[ax], side);
        src[ax] = place_start(original_shape[ax], side);
        len[ax] = std::min(original_shape[ax], side);
    }
    for (int64_t a = 0; a < len[0]; ++a)
        for (int64_t b = 0; b < len[1]; ++b)
            for (int64_t c = 0; c < len[2]; ++c)
                out.at(dst[0] + a, dst[1] + b, dst[2] + c) =
                    cube.at(src[0] + a, src[1] + b, src[2] + c);
    return out;
}

Volume z_score(const Volume& v) {
    const int64_t n = v.data.numel();
    double sum = 0.0, sum2 = 0.0;
    const float* p = v.data.data();
    for (int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(p[i])) throw DegenerateInputError("z_score: non-finite voxel value");
        sum += p[i];
    }
    const double mean = sum / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
        double d = p[i] - mean;
        sum2 += d * d;
    }
    const double var = sum2 / static_cast<double>(n);
    if (var <= 0.0)
        throw DegenerateInputError("z_score: zero-variance (constant) volume");
    const double inv_std = 1.0 / std::sqrt(var);

    Volume out = v;
    float* q = out.data.data();
    for (int64_t i = 0; i < n; ++i)
        q[i] = static_cast<float>((p[i] - mean) * inv_std);
    return out;
}

Tensor one_hot(const LabelVolume& l) {
    l.validate();
    Tensor out({l.num_classes, l.shape[0], l.shape[1], l.shape[2]}, 0.0f);
    const int64_t vox = l.numel();
    for (int64_t i = 0; i < vox; ++i)
        out[static_cast<int64_t>(l.data[static_cast<size_t>(i)]) * vox + i] = 1.0f;
    return out;
}

LabelVolume argmax_labels(const Tensor& probs, int num_classes) {
    if (probs.ndim() != 4 || probs.dim(0) != num_classes)
        throw ShapeError("argmax_labels: expected (C,n0,n1,n2) grid with C=" +
                         std::to_string(num_classes));
    LabelVolume out;
    out.shape = {probs.dim(1), probs.dim(2), probs.dim(3)};
    out.num_classes = num_classes;
    out.class_names = num_classes == kDefaultNumClasses ? default_class_names()
                                                        : std::vector<std::string>{};
    const int64_t vox = out.numel();
    out.data.resize(static_cast<size_t>(vox));
    const float* p = probs.data();
    for (int64_t i = 0; i < vox; ++i) {
        int best = 0;
        float bv = p[i];
        for (int c = 1; c < num_classes; ++c) {
            float v = p[c * vox + i];
            if (v > bv) { bv = v; best = c; }
        }
        out.data[static_cast<size_t>(i)] = best;
    }
    return out;
}

}  // namespace lodseg
