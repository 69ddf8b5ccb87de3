#pragma once

#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "lodseg/augmentation.hpp"
#include "lodseg/losses.hpp"
#include "lodseg/manifest.hpp"
#include "lodseg/nn/adam.hpp"
#include "lodseg/nn/network.hpp"
#include "lodseg/volume.hpp"

namespace lodseg::train {

struct TrainConfig {
    std::vector<int> epochs_per_level{50, 30};  // coarse to fine, length L
    double initial_lr = 5e-4;
    double plateau_factor = 0.25;
    int plateau_patience = 5;
    int batch_size = 1;
    uint64_t global_seed = 0;
    bool plateau_on_dice = false;  // default monitors validation loss
    LossConfig loss;

    void validate(int levels) const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochMetrics {
    int level = 0;
    int epoch = 0;  // within the level, 0-based
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    std::vector<double> val_dice;  // per class
    double mean_val_dice = 0.0;    // foreground only
};

// Volume already reoriented + padded to the network cube; raw intensities
// (z-score runs after augmentation).
struct Sample {
    Volume raw;
    LabelVolume labels;
    std::string dataset_id;
    std::string id;
};

// Reorient + pad/crop; honors the LODSEG_CACHE directory when set.
Sample load_sample(const ManifestRecord& rec, int64_t input_side);

class Trainer {
  public:
    Trainer(nn::LodNetwork& net, TrainConfig cfg, const DatasetManifest& manifest,
            const std::vector<aug::TransformSpec>& roster, std::string out_dir);

    // Trains level L, freezes it, then each finer level; resumes from the
    // output directory's state files when present. Emits level{l}.ckpt per
    // level plus final.ckpt.
    void bottom_up_train();

    // Single-level loop; every coarser level must already be frozen.
    void train_level(int level);

    const std::vector<EpochMetrics>& history() const { return history_; }
    nn::LodNetwork& network() { return net_; }

  private:
    struct LevelTargets;

    std::vector<size_t> balanced_order(uint64_t epoch_seed) const;
    EpochMetrics run_epoch(int level, int epoch);
    void validate_epoch(int level, EpochMetrics& m);
    void save_state(int level, int next_epoch);
    bool load_state(int& level, int& epoch);
    void append_metrics(const EpochMetrics& m);
    std::string config_digest() const;

    nn::LodNetwork& net_;
    TrainConfig cfg_;
    aug::Pipeline pipeline_;
    std::string out_dir_;
    std::vector<Sample> train_, val_;
    nn::Adam adam_;
    std::vector<EpochMetrics> history_;

    double lr_ = 0.0;
    double best_monitor_ = 0.0;
    int plateau_counter_ = 0;
    bool completed_ = false;
};

}  // namespace lodseg::train
