#include "lodseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>

#include "lodseg/errors.hpp"
#include "lodseg/nifti.hpp"
#include "lodseg/nn/ops.hpp"
#include "lodseg/rng.hpp"

namespace lodseg::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kTrainerVersion = "lodseg-trainer-1";

void atomic_write(const std::string& path, const std::function<void(std::ostream&)>& writer) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw IoError("cannot write " + tmp);
        writer(os);
        if (!os) throw IoError("write failed for " + tmp);
    }
    fs::rename(tmp, path);
}

uint64_t mix3(uint64_t seed, uint64_t a, uint64_t b, uint64_t c) {
    return Rng::derive_seed(Rng::derive_seed(Rng::derive_seed(seed, a), b), c);
}

std::string cache_path(const std::string& dir, const std::string& src, int64_t side) {
    const uint64_t h = std::hash<std::string>{}(src + "#" + std::to_string(side));
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return (fs::path(dir) / (std::string(buf) + ".lscache")).string();
}

bool read_cached(const std::string& path, Sample& s, int64_t side) {
    std::ifstream is(path, std::ios::binary);
    if (!is) return false;
    char magic[8] = {};
    is.read(magic, 8);
    if (std::string(magic, 8) != "LSCACHE1") return false;
    int64_t sd = 0;
    int32_t nc = 0;
    is.read(reinterpret_cast<char*>(&sd), sizeof(sd));
    is.read(reinterpret_cast<char*>(&nc), sizeof(nc));
    if (sd != side) return false;
    s.raw.data = Tensor({sd, sd, sd});
    s.raw.orientation = canonical_orientation();
    is.read(reinterpret_cast<char*>(s.raw.data.raw().data()),
            static_cast<std::streamsize>(sizeof(float) * s.raw.data.raw().size()));
    s.labels = LabelVolume{};
    if (nc > 0) {
        s.labels.shape = {sd, sd, sd};
        s.labels.num_classes = nc;
        s.labels.class_names =
            nc == kDefaultNumClasses ? default_class_names() : std::vector<std::string>{};
        s.labels.data.resize(static_cast<size_t>(s.labels.numel()));
        is.read(reinterpret_cast<char*>(s.labels.data.data()),
                static_cast<std::streamsize>(sizeof(int32_t) * s.labels.data.size()));
    }
    return static_cast<bool>(is);
}

void write_cached(const std::string& path, const Sample& s, int64_t side) {
    atomic_write(path, [&](std::ostream& os) {
        os.write("LSCACHE1", 8);
        os.write(reinterpret_cast<const char*>(&side), sizeof(side));
        const int32_t nc = s.labels.data.empty() ? 0 : s.labels.num_classes;
        os.write(reinterpret_cast<const char*>(&nc), sizeof(nc));
        os.write(reinterpret_cast<const char*>(s.raw.data.raw().data()),
                 static_cast<std::streamsize>(sizeof(float) * s.raw.data.raw().size()));
        if (nc > 0)
            os.write(reinterpret_cast<const char*>(s.labels.data.data()),
                     static_cast<std::streamsize>(sizeof(int32_t) * s.labels.data.size()));
    });
}

}  // namespace

void TrainConfig::validate(int levels) const {
    if (static_cast<int>(epochs_per_level.size()) != levels)
        throw ConfigError("epochs_per_level length must equal the level count");
    for (int e : epochs_per_level)
        if (e < 1) throw ConfigError("epochs_per_level entries must be >= 1");
    if (initial_lr <= 0) throw ConfigError("initial_lr must be positive");
    if (plateau_factor <= 0 || plateau_factor >= 1)
        throw ConfigError("plateau_factor must be in (0,1)");
    if (plateau_patience < 1) throw ConfigError("plateau_patience must be >= 1");
    if (batch_size != 1) throw ConfigError("only batch_size 1 is supported");
}

json TrainConfig::to_json() const {
    return json{{"epochs_per_level", epochs_per_level},
                {"initial_lr", initial_lr},
                {"plateau_factor", plateau_factor},
                {"plateau_patience", plateau_patience},
                {"batch_size", batch_size},
                {"global_seed", global_seed},
                {"plateau_on_dice", plateau_on_dice},
                {"loss",
                 {{"lambda", loss.lambda},
                  {"epsilon", loss.epsilon},
                  {"voxel_average", loss.voxel_average},
                  {"include_background", loss.include_background}}}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.epochs_per_level = j.value("epochs_per_level", c.epochs_per_level);
    c.initial_lr = j.value("initial_lr", c.initial_lr);
    c.plateau_factor = j.value("plateau_factor", c.plateau_factor);
    c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.global_seed = j.value("global_seed", c.global_seed);
    c.plateau_on_dice = j.value("plateau_on_dice", c.plateau_on_dice);
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        c.loss.lambda = l.value("lambda", c.loss.lambda);
        c.loss.epsilon = l.value("epsilon", c.loss.epsilon);
        c.loss.voxel_average = l.value("voxel_average", c.loss.voxel_average);
        c.loss.include_background = l.value("include_background", c.loss.include_background);
    }
    return c;
}

Sample load_sample(const ManifestRecord& rec, int64_t input_side) {
    Sample s;
    s.dataset_id = rec.dataset_id;
    s.id = fs::path(rec.volume_path).filename().string();

    const char* cache_dir = std::getenv("LODSEG_CACHE");
    std::string cpath;
    if (cache_dir && *cache_dir) {
        fs::create_directories(cache_dir);
        cpath = cache_path(cache_dir, rec.volume_path + "|" + rec.label_path, input_side);
        if (read_cached(cpath, s, input_side)) return s;
    }

    Volume v = load_volume(rec.volume_path);
    const AxisCodes orient = v.orientation;
    v = reorient_canonical(v);
    s.raw = pad_crop_to_cube(v, input_side);
    if (!rec.label_path.empty()) {
        LabelVolume l = load_labels(rec.label_path, kDefaultNumClasses);
        l = reorient_canonical_labels(l, orient);
        s.labels = pad_crop_labels(l, input_side);
    }
    if (!cpath.empty()) write_cached(cpath, s, input_side);
    return s;
}

Trainer::Trainer(nn::LodNetwork& net, TrainConfig cfg, const DatasetManifest& manifest,
                 const std::vector<aug::TransformSpec>& roster, std::string out_dir)
    : net_(net), cfg_(std::move(cfg)), pipeline_(roster), out_dir_(std::move(out_dir)) {
    cfg_.validate(net_.config().levels);
    manifest.validate();
    fs::create_directories(out_dir_);
    const int64_t side = net_.config().input_side;
    for (const auto& rec : manifest.with_split(Split::train))
        train_.push_back(load_sample(rec, side));
    for (const auto& rec : manifest.with_split(Split::val)) {
        if (rec.label_path.empty())
            throw ConfigError("validation record without labels: " + rec.volume_path);
        val_.push_back(load_sample(rec, side));
    }
    if (train_.empty()) throw ConfigError("manifest has no train records");
    if (val_.empty()) throw ConfigError("manifest has no val records");
}

std::string Trainer::config_digest() const {
    json j{{"net", net_.config().to_json()}, {"train", cfg_.to_json()}};
    return std::to_string(std::hash<std::string>{}(j.dump()));
}

std::vector<size_t> Trainer::balanced_order(uint64_t epoch_seed) const {
    std::map<std::string, std::vector<size_t>> by_dataset;
    for (size_t i = 0; i < train_.size(); ++i) by_dataset[train_[i].dataset_id].push_back(i);
    size_t m = 0;
    for (const auto& [_, v] : by_dataset) m = std::max(m, v.size());
    std::vector<size_t> order;
    uint64_t sub = 1;
    for (auto& [_, v] : by_dataset) {
        std::vector<size_t> ids = v;
        Rng rng(Rng::derive_seed(epoch_seed, sub++));
        for (size_t i = ids.size(); i > 1; --i)
            std::swap(ids[i - 1], ids[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
        for (size_t i = 0; i < m; ++i) order.push_back(ids[i % ids.size()]);
    }
    Rng rng(Rng::derive_seed(epoch_seed, 0));
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
    return order;
}

EpochMetrics Trainer::run_epoch(int level, int epoch) {
    const auto& nc = net_.config();
    const int factor = static_cast<int>(std::llround(std::pow(nc.down_factor, level - 1)));
    const uint64_t epoch_seed = mix3(cfg_.global_seed, static_cast<uint64_t>(level),
                                     static_cast<uint64_t>(epoch), 0);
    const auto order = balanced_order(epoch_seed);

    EpochMetrics m;
    m.level = level;
    m.epoch = epoch;
    m.lr = lr_;

    double train_loss = 0.0;
    auto trainable = [&](const nn::ParamTensor& p) {
        return p.level == level && !net_.is_frozen(p.level);
    };
    for (size_t k = 0; k < order.size(); ++k) {
        const Sample& s = train_[order[k]];
        const uint64_t sample_seed = mix3(cfg_.global_seed, static_cast<uint64_t>(level),
                                          static_cast<uint64_t>(epoch), k + 1);
        Volume vol = s.raw;
        LabelVolume lab = s.labels;
        if (!pipeline_.empty()) {
            auto [av, al] = pipeline_.apply(vol, &lab, sample_seed);
            vol = std::move(av);
            lab = std::move(al);
        }
        vol = z_score(vol);
        LabelVolume target = factor == 1 ? lab : nn::majority_pool_labels(lab, factor);
        Tensor y = one_hot(target);

        Tensor input({1, vol.data.dim(0), vol.data.dim(1), vol.data.dim(2)});
        input.raw() = vol.data.raw();
        Tensor probs = net_.train_forward(input, level, Rng::derive_seed(sample_seed, 0xD0));
        Tensor grad;
        train_loss += mixed_loss_grad(y, probs, cfg_.loss, grad);
        net_.zero_grads();
        net_.backward(grad);
        adam_.step(net_.params(), lr_, trainable);
    }
    m.train_loss = train_loss / static_cast<double>(order.size());
    validate_epoch(level, m);
    return m;
}

void Trainer::validate_epoch(int level, EpochMetrics& m) {
    const auto& nc = net_.config();
    const int factor = static_cast<int>(std::llround(std::pow(nc.down_factor, level - 1)));
    double loss = 0.0;
    std::vector<double> dice(static_cast<size_t>(nc.num_classes), 0.0);
    double fg = 0.0;
    for (const auto& s : val_) {
        Volume vol = z_score(s.raw);
        LabelVolume target = factor == 1 ? s.labels : nn::majority_pool_labels(s.labels, factor);
        Tensor y = one_hot(target);
        Tensor input({1, vol.data.dim(0), vol.data.dim(1), vol.data.dim(2)});
        input.raw() = vol.data.raw();
        Tensor probs = net_.level_output(input, level);
        loss += mixed_loss(y, probs, cfg_.loss);
        LabelVolume pred = argmax_labels(probs, nc.num_classes);
        for (int c = 0; c < nc.num_classes; ++c)
            dice[static_cast<size_t>(c)] += dice_metric(pred, target, c);
        fg += mean_foreground_dice(pred, target);
    }
    const double n = static_cast<double>(val_.size());
    m.val_loss = loss / n;
    for (auto& d : dice) d /= n;
    m.val_dice = dice;
    m.mean_val_dice = fg / n;
}

void Trainer::append_metrics(const EpochMetrics& m) {
    const std::string path = (fs::path(out_dir_) / "metrics.csv").string();
    const bool fresh = !fs::exists(path);
    std::ofstream os(path, std::ios::app);
    if (!os) throw IoError("cannot append to " + path);
    if (fresh) {
        os << "epoch,level,lr,train_loss,val_loss";
        for (int c = 0; c < net_.config().num_classes; ++c) os << ",val_dice_" << c;
        os << ",mean_val_dice\n";
    }
    os << m.epoch << ',' << m.level << ',' << m.lr << ',' << m.train_loss << ',' << m.val_loss;
    for (double d : m.val_dice) os << ',' << d;
    os << ',' << m.mean_val_dice << '\n';
}

void Trainer::save_state(int level, int next_epoch) {
    net_.save_checkpoint((fs::path(out_dir_) / "current.ckpt.tmp").string());
    fs::rename(fs::path(out_dir_) / "current.ckpt.tmp", fs::path(out_dir_) / "current.ckpt");
    atomic_write((fs::path(out_dir_) / "adam.bin").string(),
                 [&](std::ostream& os) { adam_.save(os); });
    json st{{"version", kTrainerVersion},
            {"digest", config_digest()},
            {"level", level},
            {"next_epoch", next_epoch},
            {"lr", lr_},
            {"best_monitor", best_monitor_},
            {"plateau_counter", plateau_counter_},
            {"completed", completed_},
            {"frozen", std::vector<int>(net_.frozen_levels().begin(), net_.frozen_levels().end())}};
    atomic_write((fs::path(out_dir_) / "state.json").string(),
                 [&](std::ostream& os) { os << st.dump(2) << '\n'; });
}

bool Trainer::load_state(int& level, int& epoch) {
    const std::string path = (fs::path(out_dir_) / "state.json").string();
    std::ifstream is(path);
    if (!is) return false;
    json st;
    try {
        is >> st;
    } catch (const json::exception& e) {
        throw FormatError("corrupt trainer state: " + std::string(e.what()));
    }
    if (st.value("version", "") != kTrainerVersion)
        throw ConfigError("trainer state version mismatch");
    if (st.value("digest", "") != config_digest())
        throw ConfigError("trainer state was written for a different configuration");
    level = st.at("level").get<int>();
    epoch = st.at("next_epoch").get<int>();
    lr_ = st.at("lr").get<double>();
    best_monitor_ = st.at("best_monitor").get<double>();
    plateau_counter_ = st.at("plateau_counter").get<int>();
    completed_ = st.value("completed", false);
    net_.load_matching_params((fs::path(out_dir_) / "current.ckpt").string());
    for (int l : st.at("frozen").get<std::vector<int>>()) net_.freeze_level(l);
    {
        std::ifstream as((fs::path(out_dir_) / "adam.bin").string(), std::ios::binary);
        if (!as) throw IoError("missing adam.bin next to state.json");
        adam_.load(as, net_.params());
    }
    return true;
}

void Trainer::train_level(int level) {
    const int L = net_.config().levels;
    if (level < 1 || level > L) throw ConfigError("train_level: level out of range");
    for (int l = level + 1; l <= L; ++l)
        if (!net_.is_frozen(l))
            throw ContractError("train_level(" + std::to_string(level) + "): level " +
                                std::to_string(l) + " is not frozen");
    const int epochs = cfg_.epochs_per_level[static_cast<size_t>(L - level)];
    lr_ = cfg_.initial_lr;
    best_monitor_ = std::numeric_limits<double>::infinity();
    plateau_counter_ = 0;
    adam_.reset();
    for (int e = 0; e < epochs; ++e) {
        EpochMetrics m = run_epoch(level, e);
        history_.push_back(m);
        append_metrics(m);
        const double monitor = cfg_.plateau_on_dice ? -m.mean_val_dice : m.val_loss;
        if (monitor < best_monitor_ - 1e-12) {
            best_monitor_ = monitor;
            plateau_counter_ = 0;
            net_.save_checkpoint(
                (fs::path(out_dir_) / ("level" + std::to_string(level) + ".ckpt")).string(),
                json{{"level", level}, {"epoch", e}});
        } else if (++plateau_counter_ >= cfg_.plateau_patience) {
            lr_ *= cfg_.plateau_factor;
            plateau_counter_ = 0;
        }
        save_state(level, e + 1);
    }
    // Retain the best-validation weights for this level.
    const std::string best =
        (fs::path(out_dir_) / ("level" + std::to_string(level) + ".ckpt")).string();
    if (fs::exists(best)) net_.load_matching_params(best);
}

void Trainer::bottom_up_train() {
    const int L = net_.config().levels;
    int resume_level = L, resume_epoch = 0;
    const bool resumed = load_state(resume_level, resume_epoch);
    if (resumed && completed_) return;

    for (int level = L; level >= 1; --level) {
        if (resumed && level > resume_level) continue;
        int start_epoch = 0;
        if (resumed && level == resume_level) start_epoch = resume_epoch;
        const int epochs = cfg_.epochs_per_level[static_cast<size_t>(L - level)];

        if (start_epoch == 0) {
            lr_ = cfg_.initial_lr;
            best_monitor_ = std::numeric_limits<double>::infinity();
            plateau_counter_ = 0;
            adam_.reset();
        }
        for (int l = level + 1; l <= L; ++l)
            if (!net_.is_frozen(l))
                throw ContractError("bottom_up_train: level " + std::to_string(l) +
                                    " must be frozen before level " + std::to_string(level));
        for (int e = start_epoch; e < epochs; ++e) {
            EpochMetrics m = run_epoch(level, e);
            history_.push_back(m);
            append_metrics(m);
            const double monitor = cfg_.plateau_on_dice ? -m.mean_val_dice : m.val_loss;
            if (monitor < best_monitor_ - 1e-12) {
                best_monitor_ = monitor;
                plateau_counter_ = 0;
                net_.save_checkpoint(
                    (fs::path(out_dir_) / ("level" + std::to_string(level) + ".ckpt")).string(),
                    json{{"level", level}, {"epoch", e}});
            } else if (++plateau_counter_ >= cfg_.plateau_patience) {
                lr_ *= cfg_.plateau_factor;
                plateau_counter_ = 0;
            }
            save_state(level, e + 1);
        }
        const std::string best =
            (fs::path(out_dir_) / ("level" + std::to_string(level) + ".ckpt")).string();
        if (fs::exists(best)) net_.load_matching_params(best);
        net_.freeze_level(level);
        if (level > 1) save_state(level - 1, 0);
    }
    completed_ = true;
    net_.save_checkpoint((fs::path(out_dir_) / "final.ckpt").string(),
                         json{{"final", true}});
    save_state(0, 0);
}

}  // namespace lodseg::train
