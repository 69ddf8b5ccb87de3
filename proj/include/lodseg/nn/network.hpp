#pragma once

#include <json.hpp>
#include <set>
#include <string>
#include <vector>

#include "lodseg/nn/ops.hpp"
#include "lodseg/tensor.hpp"

namespace lodseg::nn {

// Architecture parameterization. Level 1 is the finest (full input scale),
// level L the coarsest; level l runs on grids of side input_side / d^(l-1).
struct LODConfig {
    int levels = 2;      // L
    int down_factor = 4; // d, per-level input downsampling along each axis
    int input_side = 256;
    int num_classes = 8;
    // channels_per_level[l-1] lists the per-stage widths of level l's U-net;
    // entry 0 is the stem width, each later entry adds a 2x downsampling.
    std::vector<std::vector<int>> channels_per_level;
    int convs_per_block = 2;
    double dropout_rate = 0.05;
    int norm_group_size = 4;
    int kernel_side = 3;

    void validate() const;              // throws ConfigError with the failing constraint
    int64_t level_side(int level) const;
    int stages(int level) const;        // downsampling stages inside level's U-net

    nlohmann::json to_json() const;
    static LODConfig from_json(const nlohmann::json& j);
};

// The full-scale default: L=2, d=4, 256^3. Widths must be multiples of the
// norm group size (4), which makes an odd parameter count unreachable; the
// closest attainable total is 337,720.
LODConfig default_full_scale_config();

struct ParamTensor {
    std::string name;  // level{l}/{block}/{layer}
    int level = 0;
    Tensor value;
    Tensor grad;
};

class LodNetwork {
  public:
    LodNetwork(const LODConfig& cfg, uint64_t init_seed);

    const LODConfig& config() const { return cfg_; }

    static std::vector<std::pair<std::string, std::vector<int64_t>>> parameter_shapes(
        const LODConfig& cfg);
    static int64_t parameter_count(const LODConfig& cfg);

    // Inference (dropout off, deterministic). Input is (1,s,s,s), z-scored.
    Tensor forward(const Tensor& input);
    // Probabilities at level-l resolution; level 1 equals forward().
    Tensor level_output(const Tensor& input, int level);

    // Training-mode forward to `level`: dropout active on that level only,
    // caches retained for backward(). Coarser levels run in eval mode.
    Tensor train_forward(const Tensor& input, int level, uint64_t dropout_seed);
    // Accumulates parameter gradients for the level passed to train_forward.
    void backward(const Tensor& dprobs);
    void zero_grads();

    void freeze_level(int level);
    void unfreeze_level(int level);
    bool is_frozen(int level) const { return frozen_.count(level) > 0; }
    const std::set<int>& frozen_levels() const { return frozen_; }

    std::vector<ParamTensor>& params() { return params_; }
    const std::vector<ParamTensor>& params() const { return params_; }
    ParamTensor* find_param(const std::string& name);

    void save_checkpoint(const std::string& path, const nlohmann::json& extra = nlohmann::json::object()) const;
    static LodNetwork load_checkpoint(const std::string& path, nlohmann::json* extra = nullptr);
    // Copies values for every parameter name present in the archive.
    void load_matching_params(const std::string& path);

  private:
    struct BlockParams {
        std::vector<int> conv_w, conv_b, gn_g, gn_b;
    };
    struct LevelParams {
        BlockParams stem;
        std::vector<int> down_w, down_b;
        std::vector<BlockParams> enc;
        std::vector<int> up_w, up_b;
        std::vector<BlockParams> dec;
        int fuse_w = -1, fuse_b = -1;  // present on levels < L
        int head_w = -1, head_b = -1;
    };
    struct BlockCache {
        std::vector<Tensor> conv_in;
        std::vector<GroupNormCache> gn;
        std::vector<Tensor> act;
        Tensor mask;
        bool has_mask = false;
    };
    struct LevelCache {
        BlockCache stem;
        Tensor fuse_in, fuse_act, fused;
        std::vector<Tensor> down_act;
        std::vector<BlockCache> enc;
        std::vector<Tensor> up_in, up_act, skip;
        std::vector<BlockCache> dec;
        Tensor head_in, probs;
    };

    struct LevelResult {
        Tensor features;  // decoder output, stem-width channels
        Tensor probs;
    };

    Tensor block_forward(const BlockParams& bp, const Tensor& x, bool training, uint64_t seed,
                         BlockCache* cache);
    Tensor block_backward(const BlockParams& bp, const Tensor& dy, const BlockCache& cache);
    LevelResult run_level(int level, const Tensor& level_input, const Tensor* coarse_features,
                          bool training, uint64_t dropout_seed, LevelCache* cache);
    // Runs levels L..target; returns result of the target level.
    LevelResult run_to_level(const Tensor& input, int target, bool training,
                             uint64_t dropout_seed, LevelCache* cache);

    int add_param(const std::string& name, int level, std::vector<int64_t> shape);
    void init_params(uint64_t seed);

    LODConfig cfg_;
    std::vector<ParamTensor> params_;
    std::vector<LevelParams> level_params_;  // index 0 = level 1
    std::set<int> frozen_;

    // backward() state from the last train_forward()
    LevelCache train_cache_;
    int train_level_ = -1;
};

}  // namespace lodseg::nn
