#pragma once

#include <string>
#include <vector>

namespace lodseg {

enum class Split { train, val, test_int, test_ext };

std::string split_name(Split s);
Split split_from_name(const std::string& s);

struct ManifestRecord {
    std::string volume_path;
    std::string label_path;  // empty when absent
    std::string dataset_id;
    Split split = Split::train;
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;

    std::vector<ManifestRecord> with_split(Split s) const;

    // Enforces: every train record has labels; no test_ext dataset_id ever
    // appears in train.
    void validate() const;
};

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& m, const std::string& path);

// Deterministic per-dataset cap: keeps at most `cap` records per dataset_id
// within each split, selected by a seeded shuffle.
DatasetManifest cap_per_dataset(const DatasetManifest& m, int cap, uint64_t seed);

}  // namespace lodseg
