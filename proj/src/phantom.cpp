#include "lodseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "lodseg/errors.hpp"
#include "lodseg/nifti.hpp"
#include "lodseg/rng.hpp"

namespace lodseg::phantom {

namespace fs = std::filesystem;
using nlohmann::json;

void SiteProfile::validate() const {
    if (class_mean.size() != class_std.size() || class_mean.empty())
        throw ConfigError("SiteProfile: class_mean/class_std size mismatch");
    if (gamma < 0.5 || gamma > 2.0)
        throw ConfigError("SiteProfile '" + site_id + "': gamma must be in [0.5,2.0]");
    if (noise_sigma < 0) throw ConfigError("SiteProfile: negative noise_sigma");
    double max_std = 0.0;
    for (size_t c = 1; c < class_std.size(); ++c) max_std = std::max(max_std, class_std[c]);
    for (size_t a = 1; a < class_mean.size(); ++a)
        for (size_t b = a + 1; b < class_mean.size(); ++b)
            if (std::fabs(class_mean[a] - class_mean[b]) < 3.0 * max_std)
                throw ConfigError("SiteProfile '" + site_id + "': foreground classes " +
                                  std::to_string(a) + " and " + std::to_string(b) +
                                  " are not separable (means closer than 3x the largest std)");
}

namespace {

// Trilinear sample of a control-point displacement grid spanning the volume.
struct DisplacementField {
    int64_t side;
    int cp;  // control points per axis
    std::vector<float> d;  // (3, cp, cp, cp)

    double at(int comp, double a, double b, double c) const {
        const double scale = static_cast<double>(cp - 1) / static_cast<double>(side - 1);
        double fa = a * scale, fb = b * scale, fc = c * scale;
        int ia = std::min<int>(cp - 2, static_cast<int>(fa));
        int ib = std::min<int>(cp - 2, static_cast<int>(fb));
        int ic = std::min<int>(cp - 2, static_cast<int>(fc));
        double ta = fa - ia, tb = fb - ib, tc = fc - ic;
        auto v = [&](int x, int y, int z) {
            return static_cast<double>(
                d[static_cast<size_t>(((comp * cp + x) * cp + y) * cp + z)]);
        };
        double c00 = v(ia, ib, ic) * (1 - tc) + v(ia, ib, ic + 1) * tc;
        double c01 = v(ia, ib + 1, ic) * (1 - tc) + v(ia, ib + 1, ic + 1) * tc;
        double c10 = v(ia + 1, ib, ic) * (1 - tc) + v(ia + 1, ib, ic + 1) * tc;
        double c11 = v(ia + 1, ib + 1, ic) * (1 - tc) + v(ia + 1, ib + 1, ic + 1) * tc;
        double c0 = c00 * (1 - tb) + c01 * tb;
        double c1 = c10 * (1 - tb) + c11 * tb;
        return c0 * (1 - ta) + c1 * ta;
    }
};

DisplacementField make_field(uint64_t seed, int64_t side, double amplitude) {
    DisplacementField f;
    f.side = side;
    f.cp = 5;
    f.d.resize(static_cast<size_t>(3 * f.cp * f.cp * f.cp));
    Rng rng(seed);
    // Cap keeps the warp free of fold-over for any control spacing.
    const double cap = 0.45 * static_cast<double>(side) / (f.cp - 1);
    for (auto& x : f.d) {
        double v = rng.normal(0.0, amplitude);
        x = static_cast<float>(std::clamp(v, -cap, cap));
    }
    return f;
}

struct Ellipsoid {
    double cx, cy, cz;   // center, normalized [-1,1]
    double rx, ry, rz;   // semi-axes
    bool contains(double x, double y, double z) const {
        double a = (x - cx) / rx, b = (y - cy) / ry, c = (z - cz) / rz;
        return a * a + b * b + c * c <= 1.0;
    }
};

// Axes (canonical LIA storage order): 0 -> anterior, 1 -> inferior, 2 -> left.
int template_label(double x, double y, double z, const std::vector<double>& s) {
    auto sc = [&](int cls) { return s[static_cast<size_t>(cls)]; };
    const double r = std::sqrt((x * x) / (0.80 * 0.80) + (y * y) / (0.85 * 0.85) +
                               (z * z) / (0.90 * 0.90));
    int label = 0;
    if (r <= 1.00 && r > 0.88) label = 3;           // CSF shell
    else if (r <= 0.88 && r > 0.62) label = 1;      // grey-matter ribbon
    else if (r <= 0.62) label = 2;                  // white-matter core
    if (label == 0) return 0;
    Ellipsoid cerebellum{-0.38, 0.45, 0.0, 0.30 * sc(5), 0.26 * sc(5), 0.40 * sc(5)};
    Ellipsoid brainstem{0.02, 0.52, 0.0, 0.14 * sc(6), 0.38 * sc(6), 0.14 * sc(6)};
    Ellipsoid vent_l{0.08, -0.08, 0.16, 0.26 * sc(4), 0.14 * sc(4), 0.10 * sc(4)};
    Ellipsoid vent_r{0.08, -0.08, -0.16, 0.26 * sc(4), 0.14 * sc(4), 0.10 * sc(4)};
    Ellipsoid bg_l{0.12, 0.02, 0.34, 0.14 * sc(7), 0.13 * sc(7), 0.12 * sc(7)};
    Ellipsoid bg_r{0.12, 0.02, -0.34, 0.14 * sc(7), 0.13 * sc(7), 0.12 * sc(7)};
    if (bg_l.contains(x, y, z) || bg_r.contains(x, y, z)) return 7;
    if (vent_l.contains(x, y, z) || vent_r.contains(x, y, z)) return 4;
    if (brainstem.contains(x, y, z)) return 6;
    if (cerebellum.contains(x, y, z)) return 5;
    return label;
}

}  // namespace

LabelVolume generate_subject(const SubjectGeometry& geom, int64_t grid_side) {
    if (grid_side < 32)
        throw ConfigError("generate_subject: grid side " + std::to_string(grid_side) +
                          " too small to host all structures (need >= 32)");
    std::vector<double> scales = geom.structure_scales;
    if (scales.empty()) scales.assign(kDefaultNumClasses, 1.0);
    if (scales.size() != kDefaultNumClasses)
        throw ConfigError("generate_subject: structure_scales must have 8 entries");

    LabelVolume l;
    l.shape = {grid_side, grid_side, grid_side};
    l.num_classes = kDefaultNumClasses;
    l.class_names = default_class_names();
    l.data.resize(static_cast<size_t>(l.numel()));

    DisplacementField field = make_field(geom.seed, grid_side, geom.deformation_amplitude);
    const double half = static_cast<double>(grid_side - 1) / 2.0;
    for (int64_t a = 0; a < grid_side; ++a)
        for (int64_t b = 0; b < grid_side; ++b)
            for (int64_t c = 0; c < grid_side; ++c) {
                double wa = a, wb = b, wc = c;
                if (geom.deformation_amplitude > 0.0) {
                    wa += field.at(0, static_cast<double>(a), static_cast<double>(b), static_cast<double>(c));
                    wb += field.at(1, static_cast<double>(a), static_cast<double>(b), static_cast<double>(c));
                    wc += field.at(2, static_cast<double>(a), static_cast<double>(b), static_cast<double>(c));
                }
                const double x = (wa - half) / half;
                const double y = (wb - half) / half;
                const double z = (wc - half) / half;
                l.at(a, b, c) = template_label(x, y, z, scales);
            }

    std::vector<int64_t> counts(kDefaultNumClasses, 0);
    for (int32_t v : l.data) ++counts[static_cast<size_t>(v)];
    for (int cls = 0; cls < kDefaultNumClasses; ++cls)
        if (counts[static_cast<size_t>(cls)] == 0)
            throw ConfigError("generate_subject: class " + std::to_string(cls) +
                              " vanished (grid too small or scales degenerate)");
    return l;
}

double bias_field_at(const std::vector<double>& coeffs, double x, double y, double z) {
    if (coeffs.size() != 10) throw ConfigError("bias field needs 10 polynomial coefficients");
    return coeffs[0] + coeffs[1] * x + coeffs[2] * y + coeffs[3] * z + coeffs[4] * x * x +
           coeffs[5] * y * y + coeffs[6] * z * z + coeffs[7] * x * y + coeffs[8] * x * z +
           coeffs[9] * y * z;
}

Volume render_subject(const LabelVolume& labels, const SiteProfile& site, uint64_t subject_seed) {
    site.validate();
    labels.validate();
    if (static_cast<int>(site.class_mean.size()) != labels.num_classes)
        throw ConfigError("render_subject: site profile classes != label classes");
    Rng rng(Rng::derive_seed(site.seed, subject_seed));
    Volume v;
    v.data = Tensor({labels.shape[0], labels.shape[1], labels.shape[2]});
    v.orientation = canonical_orientation();
    v.source_id = site.site_id;
    const double half0 = static_cast<double>(labels.shape[0] - 1) / 2.0;
    const double half1 = static_cast<double>(labels.shape[1] - 1) / 2.0;
    const double half2 = static_cast<double>(labels.shape[2] - 1) / 2.0;
    for (int64_t a = 0; a < labels.shape[0]; ++a)
        for (int64_t b = 0; b < labels.shape[1]; ++b)
            for (int64_t c = 0; c < labels.shape[2]; ++c) {
                const int cls = labels.at(a, b, c);
                double u = site.class_mean[static_cast<size_t>(cls)];
                const double sd = site.class_std[static_cast<size_t>(cls)];
                if (sd > 0.0) u += sd * rng.normal();
                const double bias = bias_field_at(site.bias_coeffs, (a - half0) / half0,
                                                  (b - half1) / half1, (c - half2) / half2);
                double t = bias * u;
                if (t < 0.0) t = 0.0;
                t = std::pow(t, site.gamma);
                if (site.noise_sigma > 0.0) t += site.noise_sigma * rng.normal();
                v.data.at3(a, b, c) = static_cast<float>(t);
            }
    return v;
}

double histogram_distance(const Volume& a, const Volume& b) {
    constexpr int kBins = 64;
    float lo = a.data[0], hi = a.data[0];
    for (float x : a.data.raw()) { lo = std::min(lo, x); hi = std::max(hi, x); }
    for (float x : b.data.raw()) { lo = std::min(lo, x); hi = std::max(hi, x); }
    if (hi <= lo) return 0.0;
    auto hist = [&](const Volume& v) {
        std::vector<double> h(kBins, 0.0);
        for (float x : v.data.raw()) {
            int bin = static_cast<int>((x - lo) / (hi - lo) * kBins);
            bin = std::clamp(bin, 0, kBins - 1);
            h[static_cast<size_t>(bin)] += 1.0;
        }
        for (double& x : h) x /= static_cast<double>(v.data.numel());
        return h;
    };
    auto ha = hist(a), hb = hist(b);
    double d = 0.0;
    for (int i = 0; i < kBins; ++i) d += std::fabs(ha[static_cast<size_t>(i)] - hb[static_cast<size_t>(i)]);
    return d;
}

json PhantomConfig::to_json() const {
    return json{{"sites", sites},
                {"ext_sites", ext_sites},
                {"subjects_per_site", subjects_per_site},
                {"ext_subjects_per_site", ext_subjects_per_site},
                {"train_per_site", train_per_site},
                {"val_per_site", val_per_site},
                {"grid_side", grid_side},
                {"seed", seed},
                {"deformation_amplitude", deformation_amplitude},
                {"mean_jitter", mean_jitter},
                {"gamma_min", gamma_min},
                {"gamma_max", gamma_max},
                {"bias_amplitude", bias_amplitude},
                {"noise_sigma_min", noise_sigma_min},
                {"noise_sigma_max", noise_sigma_max}};
}

PhantomConfig PhantomConfig::from_json(const json& j) {
    PhantomConfig c;
    c.sites = j.value("sites", c.sites);
    c.ext_sites = j.value("ext_sites", c.ext_sites);
    c.subjects_per_site = j.value("subjects_per_site", c.subjects_per_site);
    c.ext_subjects_per_site = j.value("ext_subjects_per_site", c.ext_subjects_per_site);
    c.train_per_site = j.value("train_per_site", c.train_per_site);
    c.val_per_site = j.value("val_per_site", c.val_per_site);
    c.grid_side = j.value("grid_side", c.grid_side);
    c.seed = j.value("seed", c.seed);
    c.deformation_amplitude = j.value("deformation_amplitude", c.deformation_amplitude);
    c.mean_jitter = j.value("mean_jitter", c.mean_jitter);
    c.gamma_min = j.value("gamma_min", c.gamma_min);
    c.gamma_max = j.value("gamma_max", c.gamma_max);
    c.bias_amplitude = j.value("bias_amplitude", c.bias_amplitude);
    c.noise_sigma_min = j.value("noise_sigma_min", c.noise_sigma_min);
    c.noise_sigma_max = j.value("noise_sigma_max", c.noise_sigma_max);
    return c;
}

std::vector<SiteProfile> make_site_roster(const PhantomConfig& cfg) {
    if (cfg.sites < 1) throw ConfigError("phantom: site count must be >= 1");
    // T1-like base contrast; per-site jitter perturbs it (scanner effect).
    static const double kBaseMeans[kDefaultNumClasses] = {0.03, 0.55, 0.85, 0.18,
                                                          0.10, 0.48, 0.68, 0.38};
    std::vector<SiteProfile> roster;
    const int total = cfg.sites + cfg.ext_sites;
    for (int s = 0; s < total; ++s) {
        const bool ext = s >= cfg.sites;
        SiteProfile p;
        p.site_id = (ext ? "ext" : "site") + std::string(s < 10 ? "0" : "") +
                    std::to_string(ext ? s - cfg.sites : s);
        p.seed = Rng::derive_seed(cfg.seed, 0xA000 + static_cast<uint64_t>(s));
        Rng rng(p.seed);
        const double max_std = 0.02;
        p.class_mean.resize(kDefaultNumClasses);
        p.class_std.resize(kDefaultNumClasses);
        for (int c = 0; c < kDefaultNumClasses; ++c) {
            p.class_mean[static_cast<size_t>(c)] =
                kBaseMeans[c] + (c == 0 ? 0.0 : cfg.mean_jitter * rng.normal());
            p.class_std[static_cast<size_t>(c)] = rng.uniform(0.25, 1.0) * max_std;
        }
        // Enforce the learnability invariant: spread any colliding foreground
        // means until all pairs clear 3x the largest std.
        const double min_gap = 3.2 * max_std;
        std::vector<int> order(kDefaultNumClasses - 1);
        for (int i = 0; i < kDefaultNumClasses - 1; ++i) order[static_cast<size_t>(i)] = i + 1;
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            return p.class_mean[static_cast<size_t>(a)] < p.class_mean[static_cast<size_t>(b)];
        });
        for (size_t i = 1; i < order.size(); ++i) {
            double& prev = p.class_mean[static_cast<size_t>(order[i - 1])];
            double& cur = p.class_mean[static_cast<size_t>(order[i])];
            if (cur - prev < min_gap) cur = prev + min_gap;
        }
        for (int c = 1; c < kDefaultNumClasses; ++c)
            p.class_mean[static_cast<size_t>(c)] =
                std::clamp(p.class_mean[static_cast<size_t>(c)], 0.08, 1.6);
        for (size_t i = 1; i < order.size(); ++i) {  // re-spread after clamping
            double& prev = p.class_mean[static_cast<size_t>(order[i - 1])];
            double& cur = p.class_mean[static_cast<size_t>(order[i])];
            if (cur - prev < min_gap) cur = prev + min_gap;
        }
        p.bias_coeffs.assign(10, 0.0);
        p.bias_coeffs[0] = 1.0;
        for (size_t i = 1; i < 10; ++i)
            p.bias_coeffs[i] = rng.uniform(-cfg.bias_amplitude, cfg.bias_amplitude);
        p.gamma = rng.uniform(cfg.gamma_min, cfg.gamma_max);
        p.noise_sigma = rng.uniform(cfg.noise_sigma_min, cfg.noise_sigma_max);
        p.validate();
        roster.push_back(std::move(p));
    }
    return roster;
}

DatasetManifest generate_dataset(const PhantomConfig& cfg, const std::string& out_dir) {
    if (cfg.train_per_site + cfg.val_per_site > cfg.subjects_per_site)
        throw ConfigError("phantom: train_per_site + val_per_site exceeds subjects_per_site");
    auto roster = make_site_roster(cfg);
    DatasetManifest manifest;
    fs::create_directories(out_dir);
    uint64_t subject_counter = 0;
    for (size_t si = 0; si < roster.size(); ++si) {
        const SiteProfile& site = roster[si];
        const bool ext = si >= static_cast<size_t>(cfg.sites);
        const int n_subjects = ext ? cfg.ext_subjects_per_site : cfg.subjects_per_site;
        fs::create_directories(fs::path(out_dir) / site.site_id);
        for (int sub = 0; sub < n_subjects; ++sub) {
            SubjectGeometry geom;
            geom.seed = Rng::derive_seed(cfg.seed, 0xB000 + subject_counter);
            ++subject_counter;
            geom.deformation_amplitude = cfg.deformation_amplitude;
            geom.structure_scales.assign(kDefaultNumClasses, 1.0);
            {
                Rng grng(Rng::derive_seed(geom.seed, 7));
                for (int c = 4; c < kDefaultNumClasses; ++c)
                    geom.structure_scales[static_cast<size_t>(c)] = grng.uniform(0.85, 1.15);
            }
            LabelVolume labels = generate_subject(geom, cfg.grid_side);
            Volume vol = render_subject(labels, site, geom.seed);

            char name[64];
            std::snprintf(name, sizeof(name), "sub%03d", sub);
            const std::string stem = (fs::path(out_dir) / site.site_id / name).string();
            const std::string vol_path = stem + "_t1.nii.gz";
            const std::string lab_path = stem + "_labels.nii.gz";
            save_volume(vol, vol_path);
            save_labels(labels, lab_path);

            Split split;
            if (ext) split = Split::test_ext;
            else if (sub < cfg.train_per_site) split = Split::train;
            else if (sub < cfg.train_per_site + cfg.val_per_site) split = Split::val;
            else split = Split::test_int;
            manifest.records.push_back({vol_path, lab_path, site.site_id, split});
        }
    }
    save_manifest(manifest, (fs::path(out_dir) / "manifest.csv").string());
    return manifest;
}

}  // namespace lodseg::phantom
