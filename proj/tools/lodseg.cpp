#include <CLI11.hpp>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "lodseg/errors.hpp"
#include "lodseg/evaluator.hpp"
#include "lodseg/experiment.hpp"
#include "lodseg/nifti.hpp"
#include "lodseg/phantom.hpp"
#include "lodseg/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lodseg;

namespace {

constexpr const char* kVersion = "lodseg 1.0.0";

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string output = "out";
    int workers = 1;
    bool has_seed = false;
    uint64_t seed = 0;
    bool deterministic = false;
    bool force = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "experiment config JSON");
    cmd->add_option("--set", o.overrides, "config override key.path=value")->take_all();
    cmd->add_option("--output", o.output, "output directory");
    cmd->add_option("--workers", o.workers, "worker count (execution is serial)");
    cmd->add_option("--seed", o.seed, "global seed override")
        ->each([&](const std::string&) { o.has_seed = true; });
    cmd->add_flag("--deterministic", o.deterministic, "force deterministic sample order");
    cmd->add_flag("--force", o.force, "allow writing into a non-empty output directory");
}

ExperimentConfig effective_config(const CommonOpts& o, json* out_json = nullptr) {
    json j = o.config_path.empty() ? ExperimentConfig().to_json()
                                   : [&] {
                                         std::ifstream is(o.config_path);
                                         if (!is) throw IoError("cannot open " + o.config_path);
                                         json r;
                                         is >> r;
                                         return r;
                                     }();
    for (const auto& ov : o.overrides) apply_override(j, ov);
    if (o.has_seed) {
        j["train"]["global_seed"] = o.seed;
        j["phantom"]["seed"] = o.seed;
    }
    if (out_json) *out_json = j;
    return ExperimentConfig::from_json(j);
}

// Provenance: every run records what actually executed.
void write_run_info(const std::string& out_dir, const json& effective, uint64_t seed) {
    fs::create_directories(out_dir);
    std::ofstream cfg(fs::path(out_dir) / "effective_config.json");
    cfg << effective.dump(2) << '\n';
    json run{{"version", kVersion}, {"seed", seed}};
    std::ofstream ri(fs::path(out_dir) / "run_info.json");
    ri << run.dump(2) << '\n';
}

void require_writable_dir(const std::string& dir, bool force) {
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw ConfigError("output directory " + dir + " is not empty (use --force)");
}

DatasetManifest manifest_for(const ExperimentConfig& cfg) {
    if (cfg.manifest_path.empty())
        throw ConfigError("config is missing the manifest path (key: manifest)");
    DatasetManifest m = load_manifest(cfg.manifest_path);
    m.validate();
    return m;
}

int cmd_phantom(const CommonOpts& o) {
    json eff;
    ExperimentConfig cfg = effective_config(o, &eff);
    require_writable_dir(o.output, o.force);
    write_run_info(o.output, eff, cfg.phantom.seed);
    phantom::generate_dataset(cfg.phantom, o.output);
    std::cout << "phantom dataset written to " << o.output << "\n";
    return 0;
}

int cmd_train(const CommonOpts& o) {
    json eff;
    ExperimentConfig cfg = effective_config(o, &eff);
    DatasetManifest manifest = manifest_for(cfg);  // pre-flight before compute
    if (o.force)
        for (const char* f : {"state.json", "adam.bin", "current.ckpt", "metrics.csv"})
            fs::remove(fs::path(o.output) / f);
    write_run_info(o.output, eff, cfg.train.global_seed);
    nn::LodNetwork net(cfg.network, Rng::derive_seed(cfg.train.global_seed, 0x1217));
    train::Trainer trainer(net, cfg.train, manifest, cfg.augmentations, o.output);
    trainer.bottom_up_train();
    std::cout << "training complete; final checkpoint at "
              << (fs::path(o.output) / "final.ckpt").string() << "\n";
    return 0;
}

int cmd_segment(const CommonOpts& o, const std::string& model_path,
                const std::vector<std::string>& inputs) {
    nn::LodNetwork net = nn::LodNetwork::load_checkpoint(model_path);
    fs::create_directories(o.output);
    int failures = 0;
    for (const auto& in_path : inputs) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            Volume v = load_volume(in_path);
            const AxisCodes orig_orient = v.orientation;
            Volume canon = reorient_canonical(v);
            const std::array<int64_t, 3> canon_shape{canon.shape()[0], canon.shape()[1],
                                                     canon.shape()[2]};
            Volume cube = pad_crop_to_cube(canon, net.config().input_side);
            LabelVolume pred = eval::segment_volume(net, cube);
            pred = uncrop_labels(pred, canon_shape);
            pred = reorient_labels(pred, canonical_orientation(), orig_orient);
            std::string name = fs::path(in_path).filename().string();
            for (const char* ext : {".nii.gz", ".nii"}) {
                if (name.size() > std::strlen(ext) &&
                    name.rfind(ext) == name.size() - std::strlen(ext)) {
                    name.resize(name.size() - std::strlen(ext));
                    break;
                }
            }
            const std::string out_path =
                (fs::path(o.output) / (name + "_seg.nii.gz")).string();
            save_labels(pred, out_path, orig_orient);
            const double secs = std::chrono::duration<double>(
                                    std::chrono::steady_clock::now() - t0)
                                    .count();
            std::cout << in_path << " -> " << out_path << " (" << secs << " s)\n";
        } catch (const std::exception& e) {
            ++failures;
            std::cerr << "segment failed for " << in_path << ": " << e.what() << "\n";
        }
    }
    return failures == 0 ? 0 : 2;
}

int cmd_evaluate(const CommonOpts& o, const std::string& model_path,
                 std::vector<std::string> split_names) {
    json eff;
    ExperimentConfig cfg = effective_config(o, &eff);
    DatasetManifest manifest = manifest_for(cfg);
    nn::LodNetwork net = nn::LodNetwork::load_checkpoint(model_path);
    write_run_info(o.output, eff, cfg.train.global_seed);
    if (split_names.empty()) split_names = {"test_int", "test_ext"};
    std::vector<Split> splits;
    for (const auto& s : split_names) splits.push_back(split_from_name(s));
    auto records = eval::evaluate(net, manifest, splits);
    eval::write_records(records, (fs::path(o.output) / "records.csv").string());
    int failures = 0;
    for (const auto& r : records)
        if (!r.ok()) ++failures;
    bool has_int = false, has_ext = false;
    for (const auto& r : records) {
        has_int = has_int || (r.ok() && r.split == Split::test_int);
        has_ext = has_ext || (r.ok() && r.split == Split::test_ext);
    }
    if (has_int && has_ext) {
        try {
            auto g = eval::gap_report(records);
            std::ofstream os(fs::path(o.output) / "gap_report.csv");
            os << "n_int,n_ext,int_mean,int_std,ext_mean,ext_std,gap,p_value\n";
            os << g.n_int << ',' << g.n_ext << ',' << g.int_mean << ',' << g.int_std << ','
               << g.ext_mean << ',' << g.ext_std << ',' << g.gap << ',' << g.p_value << '\n';
            std::cout << "INT " << g.int_mean << " +- " << g.int_std << "  EXT " << g.ext_mean
                      << " +- " << g.ext_std << "  gap " << g.gap << "  p " << g.p_value << "\n";
        } catch (const ConfigError& e) {
            std::cerr << "gap report skipped: " << e.what() << "\n";
        }
    }
    std::cout << records.size() << " records written to "
              << (fs::path(o.output) / "records.csv").string() << "\n";
    return failures == 0 ? 0 : 2;
}

std::vector<double> default_sweep(aug::TransformName n) {
    using T = aug::TransformName;
    switch (n) {
        case T::flip: return {1.0};
        case T::grid_distortion: return {0.05, 0.1, 0.2};
        case T::salt_pepper: return {0.005, 0.01, 0.02, 0.05};
        case T::gaussian: return {0.05, 0.1, 0.2, 0.4};
        case T::gamma: return {0.2, 0.4, 0.8};
        case T::contrast: return {0.5, 1.5, 3.0};
        case T::blur: return {3, 5, 7};
        case T::downscale: return {0.25, 0.5, 0.75};
        case T::ghosting: return {1, 2, 3, 4};
        case T::inhomogeneity: return {0.05, 0.1, 0.2};
    }
    return {};
}

int cmd_select_augmentations(const CommonOpts& o, const std::string& model_path,
                             double drop_threshold) {
    json eff;
    ExperimentConfig cfg = effective_config(o, &eff);
    DatasetManifest manifest = manifest_for(cfg);
    nn::LodNetwork net = nn::LodNetwork::load_checkpoint(model_path);
    write_run_info(o.output, eff, cfg.train.global_seed);

    std::vector<std::pair<Volume, LabelVolume>> val_set;
    for (const auto& rec : manifest.with_split(Split::val)) {
        train::Sample s = train::load_sample(rec, net.config().input_side);
        val_set.emplace_back(std::move(s.raw), std::move(s.labels));
    }
    if (val_set.empty()) throw ConfigError("manifest has no val records to probe on");

    aug::Segmenter segmenter = [&](const Volume& v) { return eval::segment_volume(net, v); };
    std::vector<aug::RobustnessCurve> curves;
    std::ofstream cs(fs::path(o.output) / "curves.csv");
    cs << "transform,sweep,dice,baseline\n";
    for (aug::TransformName n :
         {aug::TransformName::flip, aug::TransformName::grid_distortion,
          aug::TransformName::salt_pepper, aug::TransformName::gaussian,
          aug::TransformName::gamma, aug::TransformName::contrast, aug::TransformName::blur,
          aug::TransformName::downscale, aug::TransformName::ghosting,
          aug::TransformName::inhomogeneity}) {
        auto curve = aug::probe_robustness(segmenter, val_set, aug::default_spec(n),
                                           default_sweep(n), cfg.train.global_seed);
        for (size_t i = 0; i < curve.sweep.size(); ++i)
            cs << curve.transform << ',' << curve.sweep[i] << ',' << curve.dice[i] << ','
               << curve.baseline << '\n';
        curves.push_back(std::move(curve));
    }
    auto selected = aug::select_transforms(curves, drop_threshold);
    std::ofstream sel(fs::path(o.output) / "selection.txt");
    for (const auto& s : selected) {
        sel << s << '\n';
        std::cout << "selected: " << s << "\n";
    }
    if (selected.empty()) std::cout << "no transform exceeded the drop threshold\n";
    return 0;
}

int cmd_report(const CommonOpts& o, const std::vector<int>& ks,
               const std::vector<std::string>& record_files) {
    if (ks.size() != record_files.size())
        throw ConfigError("report: need one --k per records file");
    std::vector<std::vector<eval::EvalRecord>> per_model;
    for (const auto& f : record_files) per_model.push_back(eval::read_records(f));
    auto rows = eval::sites_curve(ks, per_model);
    fs::create_directories(o.output);
    eval::write_sites_curve(rows, (fs::path(o.output) / "sites_curve.csv").string());
    std::cout << "k,int_dice,ext_dice,gap\n";
    for (const auto& r : rows)
        std::cout << r.k << ',' << r.int_dice << ',' << r.ext_dice << ',' << r.gap() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"progressive level-of-detail volumetric brain segmentation"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    CommonOpts phantom_o, train_o, segment_o, eval_o, select_o, report_o;

    auto* c_phantom = app.add_subcommand("phantom", "generate a synthetic multi-site dataset");
    add_common(c_phantom, phantom_o);

    auto* c_train = app.add_subcommand("train", "bottom-up training run");
    add_common(c_train, train_o);

    auto* c_segment = app.add_subcommand("segment", "segment volumes with a checkpoint");
    add_common(c_segment, segment_o);
    std::string seg_model;
    std::vector<std::string> seg_inputs;
    c_segment->add_option("--model", seg_model, "checkpoint path")->required();
    c_segment->add_option("inputs", seg_inputs, "input NIfTI volumes")->required();

    auto* c_eval = app.add_subcommand("evaluate", "per-volume Dice + INT/EXT gap report");
    add_common(c_eval, eval_o);
    std::string eval_model;
    std::vector<std::string> eval_splits;
    c_eval->add_option("--model", eval_model, "checkpoint path")->required();
    c_eval->add_option("--split", eval_splits, "splits to evaluate (default test_int test_ext)");

    auto* c_select = app.add_subcommand("select-augmentations",
                                        "robustness probe + transform selection");
    add_common(c_select, select_o);
    std::string select_model;
    double drop_threshold = 0.01;
    c_select->add_option("--model", select_model, "checkpoint path")->required();
    c_select->add_option("--drop-threshold", drop_threshold, "Dice drop selection threshold");

    auto* c_report = app.add_subcommand("report", "sites curve from evaluation records");
    add_common(c_report, report_o);
    std::vector<int> report_ks;
    std::vector<std::string> report_files;
    c_report->add_option("--k", report_ks, "training site count per records file");
    c_report->add_option("records", report_files, "records.csv files from evaluate")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (c_phantom->parsed()) return cmd_phantom(phantom_o);
        if (c_train->parsed()) return cmd_train(train_o);
        if (c_segment->parsed()) return cmd_segment(segment_o, seg_model, seg_inputs);
        if (c_eval->parsed()) return cmd_evaluate(eval_o, eval_model, eval_splits);
        if (c_select->parsed())
            return cmd_select_augmentations(select_o, select_model, drop_threshold);
        if (c_report->parsed()) return cmd_report(report_o, report_ks, report_files);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
