#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lodseg/manifest.hpp"
#include "lodseg/nn/network.hpp"
#include "lodseg/volume.hpp"

namespace lodseg::eval {

struct EvalRecord {
    std::string volume_id;
    std::string dataset_id;
    Split split = Split::test_int;
    std::vector<double> class_dice;  // C entries
    double mean_fg_dice = 0.0;
    std::string error;  // non-empty when this record failed (e.g. no labels)

    bool ok() const { return error.empty(); }
};

// Preprocess + forward + argmax per record. Records without labels (or that
// fail to load) produce an error entry; the run continues.
std::vector<EvalRecord> evaluate(nn::LodNetwork& net, const DatasetManifest& manifest,
                                 const std::vector<Split>& splits);

struct GapReport {
    int n_int = 0, n_ext = 0;
    double int_mean = 0.0, int_std = 0.0;
    double ext_mean = 0.0, ext_std = 0.0;
    double gap = 0.0;       // int_mean - ext_mean
    double p_value = 1.0;   // Welch two-sample t-test, two-sided
};

// bonferroni multiplies the p-value (clamped to 1) for multiple comparisons.
GapReport gap_report(const std::vector<EvalRecord>& records, int bonferroni = 1);

// Standalone Welch test used by gap_report; exposed for tests.
double welch_p_value(const std::vector<double>& a, const std::vector<double>& b);

struct SitesCurveRow {
    int k = 0;
    double int_dice = 0.0;
    double ext_dice = 0.0;
    double gap() const { return int_dice - ext_dice; }
};

// One row per trained model: k = number of training sites.
std::vector<SitesCurveRow> sites_curve(const std::vector<int>& ks,
                                       const std::vector<std::vector<EvalRecord>>& per_model);

// Delimited-text persistence (one row per record / summary row).
void write_records(const std::vector<EvalRecord>& records, const std::string& path);
std::vector<EvalRecord> read_records(const std::string& path);
void write_sites_curve(const std::vector<SitesCurveRow>& rows, const std::string& path);

// Segment a preprocessed cube volume; helper shared with the CLI.
LabelVolume segment_volume(nn::LodNetwork& net, const Volume& raw_cube);

}  // namespace lodseg::eval
