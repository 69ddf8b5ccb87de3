#pragma once

#include <array>
#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "lodseg/manifest.hpp"
#include "lodseg/volume.hpp"

namespace lodseg::phantom {

// Synthetic "scanner": per-class base intensities plus site-wide corruption.
struct SiteProfile {
    std::string site_id;
    std::vector<double> class_mean;  // C entries, in [0,1]
    std::vector<double> class_std;   // C entries, non-negative
    std::vector<double> bias_coeffs; // 10 coefficients of an order-2 polynomial
    double noise_sigma = 0.0;
    double gamma = 1.0;              // in [0.5, 2.0]
    uint64_t seed = 0;

    void validate() const;  // learnability: foreground means 3x separated
};

struct SubjectGeometry {
    uint64_t seed = 0;
    double deformation_amplitude = 2.0;      // voxels
    std::vector<double> structure_scales;    // C entries, multiplicative
};

// Nested-structure template (CSF shell, GM ribbon, WM core, ventricles,
// cerebellum, brainstem, basal ganglia) warped by a smooth random
// displacement field. Deterministic in geom.seed; all 8 classes present.
LabelVolume generate_subject(const SubjectGeometry& geom, int64_t grid_side);

// intensity = (bias * (class_mean[label] + class noise))^gamma + noise.
// Deterministic given site.seed and the subject seed.
Volume render_subject(const LabelVolume& labels, const SiteProfile& site, uint64_t subject_seed);

// Order-2 polynomial over coordinates normalized to [-1,1]; coeffs[0] is the
// constant term (kept near 1).
double bias_field_at(const std::vector<double>& coeffs, double x, double y, double z);

// L1 distance between 64-bin intensity histograms (each normalized to sum 1)
// after min-max scaling both volumes jointly.
double histogram_distance(const Volume& a, const Volume& b);

// Roster of sites + subjects emitted as NIfTI pairs with a manifest.
struct PhantomConfig {
    int sites = 8;
    int ext_sites = 2;
    int subjects_per_site = 20;
    int ext_subjects_per_site = 5;
    int train_per_site = 15;   // remaining INT subjects go to val/test_int
    int val_per_site = 1;
    int64_t grid_side = 64;
    uint64_t seed = 1234;
    double deformation_amplitude = 2.0;
    double mean_jitter = 0.10;       // per-site perturbation of class means
    double gamma_min = 0.6, gamma_max = 1.8;
    double bias_amplitude = 0.15;
    double noise_sigma_min = 0.005, noise_sigma_max = 0.02;

    nlohmann::json to_json() const;
    static PhantomConfig from_json(const nlohmann::json& j);
};

std::vector<SiteProfile> make_site_roster(const PhantomConfig& cfg);

// Writes {site}/{subject}_t1.nii.gz + _labels.nii.gz under out_dir and
// returns the manifest (also written to out_dir/manifest.csv).
DatasetManifest generate_dataset(const PhantomConfig& cfg, const std::string& out_dir);

}  // namespace lodseg::phantom
