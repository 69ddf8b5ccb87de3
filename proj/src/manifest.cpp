#include "lodseg/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "lodseg/errors.hpp"
#include "lodseg/rng.hpp"

namespace lodseg {

std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test_int: return "test_int";
        case Split::test_ext: return "test_ext";
    }
    return "?";
}

Split split_from_name(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test_int") return Split::test_int;
    if (s == "test_ext") return Split::test_ext;
    throw FormatError("unknown split '" + s + "'");
}

std::vector<ManifestRecord> DatasetManifest::with_split(Split s) const {
    std::vector<ManifestRecord> out;
    for (const auto& r : records)
        if (r.split == s) out.push_back(r);
    return out;
}

void DatasetManifest::validate() const {
    std::set<std::string> train_ids, ext_ids;
    for (const auto& r : records) {
        if (r.split == Split::train) {
            if (r.label_path.empty())
                throw FormatError("manifest: train record '" + r.volume_path + "' has no label_path");
            train_ids.insert(r.dataset_id);
        }
        if (r.split == Split::test_ext) ext_ids.insert(r.dataset_id);
    }
    for (const auto& id : ext_ids)
        if (train_ids.count(id))
            throw FormatError("manifest: dataset_id '" + id + "' appears in both train and test_ext");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest '" + path + "'");
    DatasetManifest m;
    std::string line;
    if (!std::getline(f, line)) throw FormatError("manifest '" + path + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "volume_path,label_path,dataset_id,split")
        throw FormatError("manifest '" + path + "': unexpected header '" + line + "'");
    size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 4)
            throw FormatError("manifest '" + path + "' line " + std::to_string(lineno) +
                              ": expected 4 fields, got " + std::to_string(fields.size()));
        m.records.push_back({fields[0], fields[1], fields[2], split_from_name(fields[3])});
    }
    m.validate();
    return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    m.validate();
    std::ofstream f(path, std::ios::binary);  // binary: byte-identical across reruns
    if (!f) throw IoError("cannot open manifest '" + path + "' for writing");
    f << "volume_path,label_path,dataset_id,split\n";
    for (const auto& r : m.records)
        f << r.volume_path << ',' << r.label_path << ',' << r.dataset_id << ','
          << split_name(r.split) << '\n';
    if (!f) throw IoError("write error on manifest '" + path + "'");
}

DatasetManifest cap_per_dataset(const DatasetManifest& m, int cap, uint64_t seed) {
    if (cap < 1) throw ConfigError("cap_per_dataset: cap must be >= 1");
    std::map<std::pair<std::string, Split>, std::vector<size_t>> groups;
    for (size_t i = 0; i < m.records.size(); ++i)
        groups[{m.records[i].dataset_id, m.records[i].split}].push_back(i);

    std::set<size_t> keep;
    for (auto& [key, idx] : groups) {
        if (static_cast<int>(idx.size()) > cap) {
            Rng rng(Rng::derive_seed(seed, std::hash<std::string>{}(key.first)));
            for (size_t i = idx.size(); i > 1; --i)
                std::swap(idx[i - 1], idx[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
            idx.resize(static_cast<size_t>(cap));
        }
        keep.insert(idx.begin(), idx.end());
    }
    DatasetManifest out;
    for (size_t i = 0; i < m.records.size(); ++i)
        if (keep.count(i)) out.records.push_back(m.records[i]);
    return out;
}

}  // namespace lodseg
