#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include "lodseg/errors.hpp"
#include "lodseg/manifest.hpp"

using namespace lodseg;
namespace fs = std::filesystem;

namespace {

DatasetManifest sample_manifest() {
    DatasetManifest m;
    m.records = {
        {"a0.nii", "l0.nii", "siteA", Split::train},
        {"a1.nii", "l1.nii", "siteA", Split::val},
        {"b0.nii", "l2.nii", "siteB", Split::train},
        {"b1.nii", "l3.nii", "siteB", Split::test_int},
        {"c0.nii", "l4.nii", "siteC", Split::test_ext},
        {"c1.nii", "", "siteC", Split::test_ext},
    };
    return m;
}

}  // namespace

TEST_CASE("manifest round trips through CSV") {
    auto path = (fs::temp_directory_path() /
                 ("lodseg_manifest_" + std::to_string(::getpid()) + ".csv"))
                    .string();
    DatasetManifest m = sample_manifest();
    save_manifest(m, path);
    DatasetManifest r = load_manifest(path);
    REQUIRE(r.records.size() == m.records.size());
    for (size_t i = 0; i < m.records.size(); ++i) {
        CHECK(r.records[i].volume_path == m.records[i].volume_path);
        CHECK(r.records[i].label_path == m.records[i].label_path);
        CHECK(r.records[i].dataset_id == m.records[i].dataset_id);
        CHECK(r.records[i].split == m.records[i].split);
    }
    // Byte-identical re-serialization.
    save_manifest(r, path + ".2");
    std::ifstream f1(path), f2(path + ".2");
    std::string s1((std::istreambuf_iterator<char>(f1)), {});
    std::string s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(s1 == s2);
    fs::remove(path);
    fs::remove(path + ".2");
}

TEST_CASE("validation enforces train labels and EXT disjointness") {
    DatasetManifest m = sample_manifest();
    CHECK_NOTHROW(m.validate());

    DatasetManifest bad1 = m;
    bad1.records[0].label_path = "";
    CHECK_THROWS_AS(bad1.validate(), FormatError);

    DatasetManifest bad2 = m;
    bad2.records[4].dataset_id = "siteA";  // EXT site also trains
    CHECK_THROWS_AS(bad2.validate(), FormatError);
}

TEST_CASE("split filter and unknown split names") {
    DatasetManifest m = sample_manifest();
    CHECK(m.with_split(Split::train).size() == 2);
    CHECK(m.with_split(Split::test_ext).size() == 2);
    CHECK_THROWS_AS(split_from_name("holdout"), FormatError);
    CHECK(split_from_name("test_int") == Split::test_int);
}

TEST_CASE("per-dataset cap is deterministic and respects the limit") {
    DatasetManifest m;
    for (int i = 0; i < 10; ++i)
        m.records.push_back({"a" + std::to_string(i), "l", "siteA", Split::train});
    for (int i = 0; i < 3; ++i)
        m.records.push_back({"b" + std::to_string(i), "l", "siteB", Split::train});
    DatasetManifest c1 = cap_per_dataset(m, 5, 99);
    DatasetManifest c2 = cap_per_dataset(m, 5, 99);
    DatasetManifest c3 = cap_per_dataset(m, 5, 100);
    std::set<std::string> k1, k2, k3;
    int a_count = 0;
    for (const auto& r : c1.records) {
        k1.insert(r.volume_path);
        if (r.dataset_id == "siteA") ++a_count;
    }
    for (const auto& r : c2.records) k2.insert(r.volume_path);
    for (const auto& r : c3.records) k3.insert(r.volume_path);
    CHECK(a_count == 5);
    CHECK(c1.records.size() == 8);  // 5 + all 3 of siteB
    CHECK(k1 == k2);
    CHECK(k1 != k3);  // different seed, different draw (with high probability)
}
