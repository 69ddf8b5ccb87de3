#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "lodseg/augmentation.hpp"
#include "lodseg/nn/network.hpp"
#include "lodseg/phantom.hpp"
#include "lodseg/trainer.hpp"

namespace lodseg {

// The single experiment file: network + training recipe + augmentation
// roster + data pointers. Every CLI subcommand reads this shape.
struct ExperimentConfig {
    nn::LODConfig network = nn::default_full_scale_config();
    train::TrainConfig train;
    std::vector<aug::TransformSpec> augmentations;  // empty = no augmentation
    std::string manifest_path;
    phantom::PhantomConfig phantom;

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::string& path);
    void save(const std::string& path) const;
};

// Applies a dotted-path override ("train.initial_lr=1e-3") onto a JSON tree.
void apply_override(nlohmann::json& j, const std::string& assignment);

}  // namespace lodseg
