#include "lodseg/phantom.hpp"

#include <doctest.h>
#include <unistd.h>

#include <filesystem>
#include <set>

#include "lodseg/errors.hpp"
#include "lodseg/nifti.hpp"

using namespace lodseg;
using namespace lodseg::phantom;
namespace fs = std::filesystem;

namespace {

SiteProfile clean_site(uint64_t seed) {
    SiteProfile s;
    s.site_id = "t";
    s.class_mean = {0.03, 0.55, 0.85, 0.18, 0.10, 0.48, 0.68, 0.38};
    s.class_std.assign(8, 0.01);
    s.bias_coeffs.assign(10, 0.0);
    s.bias_coeffs[0] = 1.0;
    s.noise_sigma = 0.01;
    s.gamma = 1.0;
    s.seed = seed;
    return s;
}

}  // namespace

TEST_CASE("subject generation is deterministic and covers every class") {
    SubjectGeometry g;
    g.seed = 77;
    LabelVolume a = generate_subject(g, 48);
    LabelVolume b = generate_subject(g, 48);
    CHECK(a.data == b.data);
    CHECK(a.num_classes == kDefaultNumClasses);

    std::set<int32_t> present(a.data.begin(), a.data.end());
    CHECK(present.size() == 8);
    CHECK(*present.begin() == 0);
    CHECK(*present.rbegin() == 7);

    g.seed = 78;
    LabelVolume c = generate_subject(g, 48);
    CHECK(a.data != c.data);
}

TEST_CASE("subject generation rejects tiny grids") {
    SubjectGeometry g;
    CHECK_THROWS_AS(generate_subject(g, 16), ConfigError);
}

TEST_CASE("structure scales change the anatomy") {
    SubjectGeometry g;
    g.seed = 5;
    LabelVolume base = generate_subject(g, 48);
    g.structure_scales.assign(8, 1.0);
    g.structure_scales[4] = 1.15;  // larger ventricles
    LabelVolume grown = generate_subject(g, 48);
    int64_t n_base = 0, n_grown = 0;
    for (size_t i = 0; i < base.data.size(); ++i) {
        n_base += base.data[i] == 4;
        n_grown += grown.data[i] == 4;
    }
    CHECK(n_grown > n_base);
}

TEST_CASE("rendering is deterministic per site and subject seed") {
    SubjectGeometry g;
    g.seed = 9;
    LabelVolume labels = generate_subject(g, 40);
    SiteProfile site = clean_site(100);
    Volume a = render_subject(labels, site, 1);
    Volume b = render_subject(labels, site, 1);
    CHECK(a.data.raw() == b.data.raw());
    Volume c = render_subject(labels, site, 2);
    CHECK(a.data.raw() != c.data.raw());
    site.seed = 101;
    Volume d = render_subject(labels, site, 1);
    CHECK(a.data.raw() != d.data.raw());
}

TEST_CASE("rendered intensities track class means") {
    SubjectGeometry g;
    g.seed = 11;
    LabelVolume labels = generate_subject(g, 40);
    SiteProfile site = clean_site(3);
    site.class_std.assign(8, 0.0);
    site.noise_sigma = 0.0;
    Volume v = render_subject(labels, site, 1);
    // Flat bias and gamma=1: every voxel equals its class mean exactly.
    for (int64_t i = 0; i < v.data.numel(); ++i) {
        int cls = labels.data[static_cast<size_t>(i)];
        CHECK(v.data[i] == doctest::Approx(site.class_mean[cls]).epsilon(1e-6));
    }
}

TEST_CASE("bias field polynomial evaluates the order-2 basis") {
    std::vector<double> coeffs = {1.0, 0.1, -0.2, 0.3, 0.05, -0.04, 0.02, 0.01, 0.03, -0.06};
    // basis: 1, x, y, z, x^2, y^2, z^2, xy, xz, yz
    double x = 0.5, y = -0.25, z = 1.0;
    double expect = 1.0 + 0.1 * x - 0.2 * y + 0.3 * z + 0.05 * x * x - 0.04 * y * y +
                    0.02 * z * z + 0.01 * x * y + 0.03 * x * z - 0.06 * y * z;
    CHECK(bias_field_at(coeffs, x, y, z) == doctest::Approx(expect).epsilon(1e-12));
    CHECK_THROWS_AS(bias_field_at({1.0, 2.0}, 0, 0, 0), ConfigError);
}

TEST_CASE("histogram distance separates sites and vanishes on self") {
    SubjectGeometry g;
    g.seed = 21;
    LabelVolume labels = generate_subject(g, 40);
    SiteProfile s1 = clean_site(1);
    SiteProfile s2 = clean_site(2);
    s2.class_mean = {0.05, 0.40, 0.95, 0.25, 0.15, 0.60, 0.75, 0.50};
    s2.gamma = 1.5;
    Volume a = render_subject(labels, s1, 7);
    Volume b = render_subject(labels, s2, 7);
    CHECK(histogram_distance(a, a) == doctest::Approx(0.0));
    double d_ab = histogram_distance(a, b);
    CHECK(d_ab == doctest::Approx(histogram_distance(b, a)).epsilon(1e-9));
    CHECK(d_ab > 0.1);
    CHECK(d_ab <= 2.0);
    // Same site, different subject noise: much closer than cross-site.
    Volume a2 = render_subject(labels, s1, 8);
    CHECK(histogram_distance(a, a2) < d_ab);
}

TEST_CASE("site profile validation rejects unlearnable rosters") {
    SiteProfile s = clean_site(0);
    CHECK_NOTHROW(s.validate());
    s.class_mean[2] = s.class_mean[1] + 0.01;  // GM and WM collide
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = clean_site(0);
    s.gamma = 3.0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("site roster is deterministic, distinct, and learnable") {
    PhantomConfig cfg;
    cfg.sites = 4;
    cfg.ext_sites = 2;
    cfg.seed = 55;
    auto roster = make_site_roster(cfg);
    REQUIRE(roster.size() == 6);
    CHECK(roster[0].site_id == "site00");
    CHECK(roster[3].site_id == "site03");
    CHECK(roster[4].site_id == "ext00");
    std::set<uint64_t> seeds;
    for (const auto& s : roster) {
        CHECK_NOTHROW(s.validate());
        seeds.insert(s.seed);
    }
    CHECK(seeds.size() == roster.size());

    auto again = make_site_roster(cfg);
    for (size_t i = 0; i < roster.size(); ++i) {
        CHECK(roster[i].class_mean == again[i].class_mean);
        CHECK(roster[i].gamma == again[i].gamma);
    }
    cfg.seed = 56;
    auto other = make_site_roster(cfg);
    CHECK(roster[0].class_mean != other[0].class_mean);
}

TEST_CASE("dataset generation writes a valid corpus") {
    PhantomConfig cfg;
    cfg.sites = 2;
    cfg.ext_sites = 1;
    cfg.subjects_per_site = 3;
    cfg.ext_subjects_per_site = 2;
    cfg.train_per_site = 1;
    cfg.val_per_site = 1;
    cfg.grid_side = 32;
    cfg.seed = 99;

    fs::path dir = fs::temp_directory_path() / ("phantom_ds_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    DatasetManifest m = generate_dataset(cfg, dir.string());
    CHECK_NOTHROW(m.validate());

    CHECK(m.with_split(Split::train).size() == 2);
    CHECK(m.with_split(Split::val).size() == 2);
    CHECK(m.with_split(Split::test_int).size() == 2);
    CHECK(m.with_split(Split::test_ext).size() == 2);

    DatasetManifest reloaded = load_manifest((dir / "manifest.csv").string());
    CHECK(reloaded.records.size() == m.records.size());

    const auto& rec = m.records.front();
    Volume v = load_volume(rec.volume_path);
    CHECK(v.shape() == std::vector<int64_t>{32, 32, 32});
    LabelVolume l = load_labels(rec.label_path, kDefaultNumClasses);
    std::set<int32_t> present(l.data.begin(), l.data.end());
    CHECK(present.size() == 8);

    for (const auto& r : m.with_split(Split::test_ext))
        CHECK(r.dataset_id.rfind("ext", 0) == 0);

    fs::remove_all(dir);
}
