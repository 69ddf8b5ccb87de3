#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "lodseg/nifti.hpp"
#include "lodseg/rng.hpp"

using namespace lodseg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("lodseg_nifti_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

Volume random_volume(std::vector<int64_t> shape, uint64_t seed) {
    Volume v;
    v.data = Tensor(std::move(shape));
    Rng rng(seed);
    for (int64_t i = 0; i < v.data.numel(); ++i) v.data[i] = static_cast<float>(rng.normal());
    return v;
}

}  // namespace

TEST_CASE("volume round trips through .nii and .nii.gz") {
    TempDir td;
    Volume v = random_volume({5, 6, 7}, 1);
    v.spacing_mm = {1.0, 1.5, 2.0};
    for (const char* name : {"a.nii", "a.nii.gz"}) {
        save_volume(v, td.file(name));
        Volume r = load_volume(td.file(name));
        CHECK(r.shape() == v.shape());
        CHECK(r.orientation == v.orientation);
        CHECK(r.spacing_mm[0] == doctest::Approx(1.0));
        CHECK(r.spacing_mm[2] == doctest::Approx(2.0));
        CHECK(r.data.raw() == v.data.raw());
    }
}

TEST_CASE("labels round trip losslessly") {
    TempDir td;
    LabelVolume l;
    l.shape = {4, 5, 6};
    l.num_classes = 8;
    l.class_names = default_class_names();
    l.data.resize(static_cast<size_t>(l.numel()));
    Rng rng(2);
    for (auto& x : l.data) x = static_cast<int32_t>(rng.uniform_int(0, 7));
    save_labels(l, td.file("l.nii.gz"));
    LabelVolume r = load_labels(td.file("l.nii.gz"), 8);
    CHECK(r.shape == l.shape);
    CHECK(r.data == l.data);
}

TEST_CASE("missing or truncated files raise IO/format errors") {
    TempDir td;
    CHECK_THROWS_AS(load_volume(td.file("absent.nii")), IoError);
    std::ofstream(td.file("junk.nii"), std::ios::binary) << "not a nifti";
    CHECK_THROWS_AS(load_volume(td.file("junk.nii")), FormatError);
}

TEST_CASE("4D files are rejected") {
    TempDir td;
    Volume v = random_volume({3, 3, 3}, 3);
    save_volume(v, td.file("t.nii"));
    // Patch dim[0] in the header to 4 and dim[4] to 2.
    std::fstream f(td.file("t.nii"),
                   std::ios::binary | std::ios::in | std::ios::out);
    int16_t four = 4, two = 2;
    f.seekp(40);
    f.write(reinterpret_cast<char*>(&four), 2);
    f.seekp(40 + 4 * 2);
    f.write(reinterpret_cast<char*>(&two), 2);
    f.close();
    CHECK_THROWS_AS(load_volume(td.file("t.nii")), FormatError);
}

TEST_CASE("oblique affine is rejected with the offending axis named") {
    TempDir td;
    Volume v = random_volume({4, 4, 4}, 4);
    save_volume(v, td.file("ob.nii"));
    // srow_x starts at byte offset 280: make axis i point 45 degrees
    // between +x and +y.
    std::fstream f(td.file("ob.nii"),
                   std::ios::binary | std::ios::in | std::ios::out);
    float row[4] = {0.7071f, 0.7071f, 0.0f, 0.0f};
    f.seekp(280);
    f.write(reinterpret_cast<char*>(row), sizeof(row));
    f.close();
    try {
        load_volume(td.file("ob.nii"));
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("oblique") != std::string::npos);
    }
}

TEST_CASE("intensity rescale slope and intercept are applied") {
    TempDir td;
    Volume v = random_volume({3, 3, 3}, 5);
    save_volume(v, td.file("s.nii"));
    std::fstream f(td.file("s.nii"),
                   std::ios::binary | std::ios::in | std::ios::out);
    float slope = 2.0f, inter = 1.0f;
    f.seekp(112);  // scl_slope
    f.write(reinterpret_cast<char*>(&slope), 4);
    f.write(reinterpret_cast<char*>(&inter), 4);
    f.close();
    Volume r = load_volume(td.file("s.nii"));
    for (int64_t i = 0; i < v.data.numel(); ++i)
        CHECK(r.data[i] == doctest::Approx(2.0f * v.data[i] + 1.0f).epsilon(1e-5));
}
