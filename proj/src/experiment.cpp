#include "lodseg/experiment.hpp"

#include <fstream>

#include "lodseg/errors.hpp"

namespace lodseg {

using nlohmann::json;

json ExperimentConfig::to_json() const {
    json augs = json::array();
    for (const auto& a : augmentations) augs.push_back(a.to_json());
    return json{{"network", network.to_json()},
                {"train", train.to_json()},
                {"augmentations", augs},
                {"manifest", manifest_path},
                {"phantom", phantom.to_json()}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    if (j.contains("network")) c.network = nn::LODConfig::from_json(j.at("network"));
    if (j.contains("train")) c.train = train::TrainConfig::from_json(j.at("train"));
    if (j.contains("augmentations"))
        for (const auto& a : j.at("augmentations"))
            c.augmentations.push_back(aug::TransformSpec::from_json(a));
    c.manifest_path = j.value("manifest", "");
    if (j.contains("phantom"))
        c.phantom = phantom::PhantomConfig::from_json(j.at("phantom"));
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw FormatError("invalid JSON in " + path + ": " + e.what());
    }
    return from_json(j);
}

void ExperimentConfig::save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write config file " + path);
    os << to_json().dump(2) << '\n';
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override must look like key.path=value: " + assignment);
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;  // unquoted strings
    }
    json* node = &j;
    size_t pos = 0;
    while (true) {
        const size_t dot = key.find('.', pos);
        const std::string part = key.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (part.empty()) throw ConfigError("bad override key: " + key);
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        pos = dot + 1;
    }
}

}  // namespace lodseg
