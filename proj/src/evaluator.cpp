#include "lodseg/evaluator.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lodseg/errors.hpp"
#include "lodseg/losses.hpp"
#include "lodseg/trainer.hpp"

namespace lodseg::eval {

LabelVolume segment_volume(nn::LodNetwork& net, const Volume& raw_cube) {
    Volume v = z_score(raw_cube);
    Tensor input({1, v.data.dim(0), v.data.dim(1), v.data.dim(2)});
    input.raw() = v.data.raw();
    Tensor probs = net.forward(input);
    return argmax_labels(probs, net.config().num_classes);
}

std::vector<EvalRecord> evaluate(nn::LodNetwork& net, const DatasetManifest& manifest,
                                 const std::vector<Split>& splits) {
    std::vector<EvalRecord> out;
    const int64_t side = net.config().input_side;
    for (const auto& rec : manifest.records) {
        bool wanted = splits.empty();
        for (Split s : splits) wanted = wanted || rec.split == s;
        if (!wanted) continue;
        EvalRecord r;
        r.volume_id = rec.volume_path;
        r.dataset_id = rec.dataset_id;
        r.split = rec.split;
        if (rec.label_path.empty()) {
            r.error = "no labels";
            out.push_back(std::move(r));
            continue;
        }
        try {
            train::Sample s = train::load_sample(rec, side);
            LabelVolume pred = segment_volume(net, s.raw);
            const int C = net.config().num_classes;
            r.class_dice.resize(static_cast<size_t>(C));
            for (int c = 0; c < C; ++c)
                r.class_dice[static_cast<size_t>(c)] = dice_metric(pred, s.labels, c);
            r.mean_fg_dice = mean_foreground_dice(pred, s.labels);
        } catch (const std::exception& e) {
            r.error = e.what();
        }
        out.push_back(std::move(r));
    }
    return out;
}

namespace {

void moments(const std::vector<double>& x, double& mean, double& var) {
    mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size() - 1);
}

}  // namespace

double welch_p_value(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2)
        throw ConfigError("welch_p_value: each sample needs at least 2 observations");
    double ma, va, mb, vb;
    moments(a, ma, va);
    moments(b, mb, vb);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    // Guard zero variance so identical or fully separated samples behave.
    const double eps = 1e-12;
    const double sa = std::max(va, eps) / na, sb = std::max(vb, eps) / nb;
    const double t = (ma - mb) / std::sqrt(sa + sb);
    const double df =
        (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    if (!std::isfinite(t) || t == 0.0) return 1.0;
    boost::math::students_t dist(df);
    return 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
}

GapReport gap_report(const std::vector<EvalRecord>& records, int bonferroni) {
    std::vector<double> int_d, ext_d;
    for (const auto& r : records) {
        if (!r.ok()) continue;
        if (r.split == Split::test_int) int_d.push_back(r.mean_fg_dice);
        if (r.split == Split::test_ext) ext_d.push_back(r.mean_fg_dice);
    }
    if (int_d.size() < 2 || ext_d.size() < 2)
        throw ConfigError("gap_report: need at least 2 INT and 2 EXT records");
    GapReport g;
    g.n_int = static_cast<int>(int_d.size());
    g.n_ext = static_cast<int>(ext_d.size());
    double vi, ve;
    moments(int_d, g.int_mean, vi);
    moments(ext_d, g.ext_mean, ve);
    g.int_std = std::sqrt(vi);
    g.ext_std = std::sqrt(ve);
    g.gap = g.int_mean - g.ext_mean;
    g.p_value = std::min(1.0, welch_p_value(int_d, ext_d) * std::max(1, bonferroni));
    return g;
}

std::vector<SitesCurveRow> sites_curve(const std::vector<int>& ks,
                                       const std::vector<std::vector<EvalRecord>>& per_model) {
    if (ks.size() != per_model.size())
        throw ConfigError("sites_curve: one record list required per k");
    std::vector<SitesCurveRow> rows;
    for (size_t i = 0; i < ks.size(); ++i) {
        SitesCurveRow row;
        row.k = ks[i];
        double si = 0.0, se = 0.0;
        int ni = 0, ne = 0;
        for (const auto& r : per_model[i]) {
            if (!r.ok()) continue;
            if (r.split == Split::test_int) { si += r.mean_fg_dice; ++ni; }
            if (r.split == Split::test_ext) { se += r.mean_fg_dice; ++ne; }
        }
        if (ni == 0 || ne == 0)
            throw ConfigError("sites_curve: model for k=" + std::to_string(ks[i]) +
                              " lacks INT or EXT records");
        row.int_dice = si / ni;
        row.ext_dice = se / ne;
        rows.push_back(row);
    }
    return rows;
}

void write_records(const std::vector<EvalRecord>& records, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    size_t C = 0;
    for (const auto& r : records) C = std::max(C, r.class_dice.size());
    os << "volume_id,dataset_id,split";
    for (size_t c = 0; c < C; ++c) os << ",dice_" << c;
    os << ",mean_fg_dice,error\n";
    for (const auto& r : records) {
        os << r.volume_id << ',' << r.dataset_id << ',' << split_name(r.split);
        for (size_t c = 0; c < C; ++c) {
            os << ',';
            if (c < r.class_dice.size()) os << r.class_dice[c];
        }
        os << ',' << r.mean_fg_dice << ',' << r.error << '\n';
    }
}

std::vector<EvalRecord> read_records(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw FormatError("empty records file " + path);
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) header.push_back(f);
    }
    if (header.size() < 5 || header[0] != "volume_id")
        throw FormatError("unrecognized records header in " + path);
    std::vector<EvalRecord> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        f.resize(header.size());
        EvalRecord r;
        r.volume_id = f[0];
        r.dataset_id = f[1];
        r.split = split_from_name(f[2]);
        for (size_t i = 3; i + 2 < header.size(); ++i)
            if (!f[i].empty()) r.class_dice.push_back(std::stod(f[i]));
        r.mean_fg_dice = f[header.size() - 2].empty() ? 0.0 : std::stod(f[header.size() - 2]);
        r.error = f[header.size() - 1];
        out.push_back(std::move(r));
    }
    return out;
}

void write_sites_curve(const std::vector<SitesCurveRow>& rows, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << "k,int_dice,ext_dice,gap\n";
    for (const auto& r : rows)
        os << r.k << ',' << r.int_dice << ',' << r.ext_dice << ',' << r.gap() << '\n';
}

}  // namespace lodseg::eval
