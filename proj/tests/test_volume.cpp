#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "lodseg/rng.hpp"
#include "lodseg/volume.hpp"

using namespace lodseg;

namespace {

Volume random_volume(std::vector<int64_t> shape, uint64_t seed,
                     AxisCodes orient = canonical_orientation()) {
    Volume v;
    v.data = Tensor(std::move(shape));
    v.orientation = orient;
    Rng rng(seed);
    for (int64_t i = 0; i < v.data.numel(); ++i)
        v.data[i] = static_cast<float>(rng.normal(10.0, 4.0));
    return v;
}

std::vector<float> sorted_values(const Volume& v) {
    std::vector<float> s = v.data.raw();
    std::sort(s.begin(), s.end());
    return s;
}

}  // namespace

TEST_CASE("orientation string round trip") {
    CHECK(orientation_string(canonical_orientation()) == "LIA");
    CHECK(orientation_from_string("LIA") == canonical_orientation());
    CHECK(orientation_from_string(orientation_string({'S', 'P', 'R'})) == AxisCodes{'S', 'P', 'R'});
    CHECK_THROWS_AS(orientation_from_string("LLS"), FormatError);
    CHECK_THROWS_AS(orientation_from_string("XYZ"), FormatError);
}

TEST_CASE("reorientation is idempotent and preserves the voxel multiset") {
    for (uint64_t s = 0; s < 5; ++s) {
        Volume v = random_volume({6, 5, 4}, s, {'R', 'S', 'P'});
        Volume c = reorient_canonical(v);
        CHECK(c.orientation == canonical_orientation());
        CHECK(sorted_values(c) == sorted_values(v));
        Volume c2 = reorient_canonical(c);
        CHECK(c2.data.raw() == c.data.raw());
        CHECK(c2.shape() == c.shape());
    }
}

TEST_CASE("reorientation maps a marked voxel correctly") {
    // Volume stored with codes (S,P,R): axis0 points superior, axis1
    // posterior, axis2 right. Canonical is (A,I,L): axis0 anterior (flip of
    // posterior axis), axis1 inferior (flip of superior), axis2 left (flip
    // of right).
    Volume v;
    v.data = Tensor({2, 3, 4}, 0.0f);
    v.orientation = {'S', 'P', 'R'};
    v.data.at3(0, 0, 0) = 1.0f;
    Volume c = reorient_canonical(v);
    // axis0(out, A) comes from axis1(in, P) flipped: size 3.
    // axis1(out, I) comes from axis0(in, S) flipped: size 2.
    // axis2(out, L) comes from axis2(in, R) flipped: size 4.
    CHECK(c.shape() == std::vector<int64_t>{3, 2, 4});
    CHECK(c.data.at3(2, 1, 3) == 1.0f);
}

TEST_CASE("label reorientation agrees with volume reorientation") {
    Rng rng(9);
    Volume v = random_volume({4, 5, 6}, 3, {'P', 'L', 'S'});
    LabelVolume l;
    l.shape = {4, 5, 6};
    l.num_classes = 8;
    l.data.resize(static_cast<size_t>(l.numel()));
    for (auto& x : l.data) x = static_cast<int32_t>(rng.uniform_int(0, 7));
    // Mirror labels into the volume intensities, reorient both, compare.
    for (int64_t i = 0; i < v.data.numel(); ++i)
        v.data[i] = static_cast<float>(l.data[static_cast<size_t>(i)]);
    Volume cv = reorient_canonical(v);
    LabelVolume cl = reorient_canonical_labels(l, v.orientation);
    for (int64_t i = 0; i < cv.data.numel(); ++i)
        CHECK(static_cast<int32_t>(cv.data[i]) == cl.data[static_cast<size_t>(i)]);
}

TEST_CASE("pad then crop round trips exactly") {
    Volume v = random_volume({5, 9, 7}, 11);
    Volume cube = pad_crop_to_cube(v, 12);
    CHECK(cube.shape() == std::vector<int64_t>{12, 12, 12});

    LabelVolume lab;
    lab.shape = {5, 9, 7};
    lab.num_classes = 100;
    lab.data.resize(static_cast<size_t>(lab.numel()));
    Rng rng(12);
    for (auto& x : lab.data) x = static_cast<int32_t>(rng.uniform_int(1, 99));
    LabelVolume cube_l = pad_crop_labels(lab, 12);
    LabelVolume back = uncrop_labels(cube_l, {5, 9, 7});
    CHECK(back.data == lab.data);

    // Crop direction: bigger than target, then restore.
    LabelVolume cube_s = pad_crop_labels(lab, 4);
    CHECK(cube_s.shape == std::array<int64_t, 3>{4, 4, 4});
}

TEST_CASE("z score yields zero mean unit variance") {
    for (uint64_t s = 0; s < 20; ++s) {
        Volume v = random_volume({6, 6, 6}, 100 + s);
        Volume z = z_score(v);
        double mean = 0.0, var = 0.0;
        for (int64_t i = 0; i < z.data.numel(); ++i) mean += z.data[i];
        mean /= static_cast<double>(z.data.numel());
        for (int64_t i = 0; i < z.data.numel(); ++i)
            var += (z.data[i] - mean) * (z.data[i] - mean);
        var /= static_cast<double>(z.data.numel());
        CHECK(std::fabs(mean) < 1e-5);
        CHECK(std::fabs(std::sqrt(var) - 1.0) < 1e-4);
    }
}

TEST_CASE("z score rejects degenerate volumes") {
    Volume v;
    v.data = Tensor({4, 4, 4}, 3.5f);
    CHECK_THROWS_AS(z_score(v), DegenerateInputError);
    v.data[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(z_score(v), DegenerateInputError);
}

TEST_CASE("one hot and argmax round trip") {
    Rng rng(55);
    LabelVolume l;
    l.shape = {4, 4, 4};
    l.num_classes = 8;
    l.data.resize(64);
    for (auto& x : l.data) x = static_cast<int32_t>(rng.uniform_int(0, 7));
    Tensor oh = one_hot(l);
    REQUIRE(oh.shape() == std::vector<int64_t>{8, 4, 4, 4});
    // Exactly one 1 per voxel.
    for (int64_t i = 0; i < 64; ++i) {
        float s = 0.0f;
        for (int c = 0; c < 8; ++c) s += oh[c * 64 + i];
        CHECK(s == 1.0f);
    }
    LabelVolume back = argmax_labels(oh, 8);
    CHECK(back.data == l.data);
}

TEST_CASE("label validation catches out-of-range voxels") {
    LabelVolume l;
    l.shape = {2, 2, 2};
    l.num_classes = 3;
    l.data = {0, 1, 2, 0, 1, 2, 0, 5};
    CHECK_THROWS_AS(l.validate(), FormatError);
}
