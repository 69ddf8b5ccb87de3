#pragma once

#include <cstdint>
#include <functional>
#include <json.hpp>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lodseg/volume.hpp"

namespace lodseg::aug {

enum class TransformName {
    flip,
    grid_distortion,
    salt_pepper,
    gaussian,
    gamma,
    contrast,
    blur,
    downscale,
    ghosting,
    inhomogeneity,
};

std::string transform_name_str(TransformName n);
TransformName transform_name_from_str(const std::string& s);
bool is_noise_transform(TransformName n);

struct TransformSpec {
    TransformName name = TransformName::flip;
    double probability = 1.0;
    std::map<std::string, double> parameters;
    bool affects_labels = false;

    void validate() const;  // unknown parameter name -> ConfigError

    nlohmann::json to_json() const;
    static TransformSpec from_json(const nlohmann::json& j);
};

// Table defaults: flip 1/2 (sagittal), grid distortion 1 (steps 5, dist 0.1),
// the six noise transforms at 1/6 each, ghosting 1/2 (max reps 4),
// inhomogeneity 1/2 (amplitude 0.2).
TransformSpec default_spec(TransformName n);
std::vector<TransformSpec> default_roster();

// Applies the transform with probability spec.probability, else identity.
// Geometric transforms move labels (nearest neighbor); intensity transforms
// return labels untouched. Deterministic given seed. labels may be null.
std::pair<Volume, LabelVolume> apply_transform(const TransformSpec& spec, const Volume& v,
                                               const LabelVolume* labels, uint64_t seed);

// Noise-group transforms are mutually exclusive per draw (at most one of
// six); flip, grid distortion, and artefacts fire independently.
class Pipeline {
public:
    explicit Pipeline(std::vector<TransformSpec> specs);

    std::pair<Volume, LabelVolume> apply(const Volume& v, const LabelVolume* labels,
                                         uint64_t seed) const;

    bool empty() const { return geometric_.empty() && noise_.empty() && artefact_.empty(); }

private:
    std::vector<TransformSpec> geometric_, noise_, artefact_;
};

Pipeline build_pipeline(const std::vector<TransformSpec>& specs);

struct RobustnessCurve {
    std::string transform;
    std::vector<double> sweep;   // strictly increasing
    std::vector<double> dice;    // mean Dice at each sweep value
    double baseline = 0.0;       // mean Dice without the transform

    double max_drop() const;
};

// The parameter probe_robustness sweeps for each transform.
std::string sweep_parameter(TransformName n);

using Segmenter = std::function<LabelVolume(const Volume&)>;

RobustnessCurve probe_robustness(const Segmenter& model,
                                 const std::vector<std::pair<Volume, LabelVolume>>& val_set,
                                 TransformSpec spec, const std::vector<double>& sweep,
                                 uint64_t seed = 0);

// Transforms whose drop (baseline - min dice) exceeds drop_threshold.
std::vector<std::string> select_transforms(const std::vector<RobustnessCurve>& curves,
                                           double drop_threshold = 0.01);

}  // namespace lodseg::aug
