#include "lodseg/augmentation.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>

#include "lodseg/errors.hpp"
#include "lodseg/losses.hpp"
#include "lodseg/phantom.hpp"
#include "lodseg/rng.hpp"

namespace lodseg::aug {

using nlohmann::json;

namespace {

const std::map<std::string, TransformName>& name_table() {
    static const std::map<std::string, TransformName> t = {
        {"flip", TransformName::flip},
        {"grid_distortion", TransformName::grid_distortion},
        {"salt_pepper", TransformName::salt_pepper},
        {"gaussian", TransformName::gaussian},
        {"gamma", TransformName::gamma},
        {"contrast", TransformName::contrast},
        {"blur", TransformName::blur},
        {"downscale", TransformName::downscale},
        {"ghosting", TransformName::ghosting},
        {"inhomogeneity", TransformName::inhomogeneity},
    };
    return t;
}

const std::map<TransformName, std::vector<std::string>>& allowed_params() {
    static const std::map<TransformName, std::vector<std::string>> t = {
        {TransformName::flip, {"axis"}},
        {TransformName::grid_distortion, {"steps", "distortion"}},
        {TransformName::salt_pepper, {"amount", "salt"}},
        {TransformName::gaussian, {"amount"}},
        {TransformName::gamma, {"clip", "log_gamma"}},
        {TransformName::contrast, {"alpha_min", "alpha_max", "alpha"}},
        {TransformName::blur, {"limit"}},
        {TransformName::downscale, {"scale_min", "scale_max", "scale"}},
        {TransformName::ghosting, {"max_reps", "reps", "attenuation"}},
        {TransformName::inhomogeneity, {"amplitude"}},
    };
    return t;
}

double param(const TransformSpec& s, const std::string& key, double fallback) {
    auto it = s.parameters.find(key);
    return it == s.parameters.end() ? fallback : it->second;
}

bool has_param(const TransformSpec& s, const std::string& key) {
    return s.parameters.count(key) > 0;
}

float sample_trilinear(const Tensor& t, double a, double b, double c) {
    const int64_t d0 = t.dim(0), d1 = t.dim(1), d2 = t.dim(2);
    a = std::clamp(a, 0.0, static_cast<double>(d0 - 1));
    b = std::clamp(b, 0.0, static_cast<double>(d1 - 1));
    c = std::clamp(c, 0.0, static_cast<double>(d2 - 1));
    int64_t ia = std::min<int64_t>(d0 - 2 < 0 ? 0 : d0 - 2, static_cast<int64_t>(a));
    int64_t ib = std::min<int64_t>(d1 - 2 < 0 ? 0 : d1 - 2, static_cast<int64_t>(b));
    int64_t ic = std::min<int64_t>(d2 - 2 < 0 ? 0 : d2 - 2, static_cast<int64_t>(c));
    int64_t ja = std::min(ia + 1, d0 - 1), jb = std::min(ib + 1, d1 - 1),
            jc = std::min(ic + 1, d2 - 1);
    double ta = a - static_cast<double>(ia), tb = b - static_cast<double>(ib),
           tc = c - static_cast<double>(ic);
    auto v = [&](int64_t x, int64_t y, int64_t z) { return static_cast<double>(t.at3(x, y, z)); };
    double c00 = v(ia, ib, ic) * (1 - tc) + v(ia, ib, jc) * tc;
    double c01 = v(ia, jb, ic) * (1 - tc) + v(ia, jb, jc) * tc;
    double c10 = v(ja, ib, ic) * (1 - tc) + v(ja, ib, jc) * tc;
    double c11 = v(ja, jb, ic) * (1 - tc) + v(ja, jb, jc) * tc;
    return static_cast<float>(((c00 * (1 - tb) + c01 * tb) * (1 - ta) +
                               (c10 * (1 - tb) + c11 * tb) * ta));
}

int32_t sample_nearest(const LabelVolume& l, double a, double b, double c) {
    int64_t ia = std::clamp<int64_t>(std::llround(a), 0, l.shape[0] - 1);
    int64_t ib = std::clamp<int64_t>(std::llround(b), 0, l.shape[1] - 1);
    int64_t ic = std::clamp<int64_t>(std::llround(c), 0, l.shape[2] - 1);
    return l.at(ia, ib, ic);
}

void flip_axis(Volume& v, LabelVolume* l, int axis) {
    if (axis < 0 || axis > 2) throw ConfigError("flip: axis must be 0, 1, or 2");
    const int64_t d0 = v.data.dim(0), d1 = v.data.dim(1), d2 = v.data.dim(2);
    Tensor out({d0, d1, d2});
    for (int64_t a = 0; a < d0; ++a)
        for (int64_t b = 0; b < d1; ++b)
            for (int64_t c = 0; c < d2; ++c) {
                int64_t sa = axis == 0 ? d0 - 1 - a : a;
                int64_t sb = axis == 1 ? d1 - 1 - b : b;
                int64_t sc = axis == 2 ? d2 - 1 - c : c;
                out.at3(a, b, c) = v.data.at3(sa, sb, sc);
            }
    v.data = std::move(out);
    if (l && !l->data.empty()) {
        LabelVolume lo = *l;
        for (int64_t a = 0; a < d0; ++a)
            for (int64_t b = 0; b < d1; ++b)
                for (int64_t c = 0; c < d2; ++c) {
                    int64_t sa = axis == 0 ? d0 - 1 - a : a;
                    int64_t sb = axis == 1 ? d1 - 1 - b : b;
                    int64_t sc = axis == 2 ? d2 - 1 - c : c;
                    lo.at(a, b, c) = l->at(sa, sb, sc);
                }
        *l = std::move(lo);
    }
}

// Monotone piecewise-linear output->source coordinate map per axis.
std::vector<double> grid_axis_map(int64_t side, int steps, double distortion, Rng& rng) {
    std::vector<double> seg(static_cast<size_t>(steps));
    double total = 0.0;
    for (auto& s : seg) {
        s = 1.0 + rng.uniform(-distortion, distortion);
        total += s;
    }
    std::vector<double> src(static_cast<size_t>(steps) + 1, 0.0);
    for (int i = 0; i < steps; ++i)
        src[static_cast<size_t>(i) + 1] =
            src[static_cast<size_t>(i)] + seg[static_cast<size_t>(i)];
    const double span = static_cast<double>(side - 1);
    for (auto& s : src) s = s / total * span;
    std::vector<double> map(static_cast<size_t>(side));
    for (int64_t x = 0; x < side; ++x) {
        double t = static_cast<double>(x) / span * steps;
        int cell = std::min<int>(steps - 1, static_cast<int>(t));
        double frac = t - cell;
        map[static_cast<size_t>(x)] =
            src[static_cast<size_t>(cell)] +
            frac * (src[static_cast<size_t>(cell) + 1] - src[static_cast<size_t>(cell)]);
    }
    return map;
}

void grid_distort(Volume& v, LabelVolume* l, int steps, double distortion, Rng& rng) {
    if (steps < 1) throw ConfigError("grid_distortion: steps must be >= 1");
    if (distortion < 0 || distortion >= 1)
        throw ConfigError("grid_distortion: distortion must be in [0,1)");
    const int64_t d0 = v.data.dim(0), d1 = v.data.dim(1), d2 = v.data.dim(2);
    auto m0 = grid_axis_map(d0, steps, distortion, rng);
    auto m1 = grid_axis_map(d1, steps, distortion, rng);
    auto m2 = grid_axis_map(d2, steps, distortion, rng);
    Tensor out({d0, d1, d2});
    for (int64_t a = 0; a < d0; ++a)
        for (int64_t b = 0; b < d1; ++b)
            for (int64_t c = 0; c < d2; ++c)
                out.at3(a, b, c) = sample_trilinear(v.data, m0[static_cast<size_t>(a)],
                                                    m1[static_cast<size_t>(b)],
                                                    m2[static_cast<size_t>(c)]);
    v.data = std::move(out);
    if (l && !l->data.empty()) {
        LabelVolume lo = *l;
        for (int64_t a = 0; a < d0; ++a)
            for (int64_t b = 0; b < d1; ++b)
                for (int64_t c = 0; c < d2; ++c)
                    lo.at(a, b, c) = sample_nearest(*l, m0[static_cast<size_t>(a)],
                                                    m1[static_cast<size_t>(b)],
                                                    m2[static_cast<size_t>(c)]);
        *l = std::move(lo);
    }
}

void salt_pepper(Volume& v, double amount, double salt, Rng& rng) {
    float lo = v.data[0], hi = v.data[0];
    for (float x : v.data.raw()) { lo = std::min(lo, x); hi = std::max(hi, x); }
    for (auto& x : v.data.raw())
        if (rng.uniform() < amount) x = rng.uniform() < salt ? hi : lo;
}

void gaussian_noise(Volume& v, double amount, Rng& rng) {
    double mean = 0.0, var = 0.0;
    for (float x : v.data.raw()) mean += x;
    mean /= static_cast<double>(v.data.numel());
    for (float x : v.data.raw()) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.data.numel());
    const double sigma = amount * std::sqrt(var);
    if (sigma <= 0.0) return;
    for (auto& x : v.data.raw()) x = static_cast<float>(x + sigma * rng.normal());
}

void gamma_transform(Volume& v, double clip, double log_gamma, Rng& rng) {
    if (clip < 0 || clip >= 0.5) throw ConfigError("gamma: clip must be in [0,0.5)");
    const double g = std::exp(rng.uniform(-log_gamma, log_gamma));
    std::vector<float> sorted(v.data.raw());
    const size_t n = sorted.size();
    size_t ilo = static_cast<size_t>(clip * static_cast<double>(n - 1));
    size_t ihi = static_cast<size_t>((1.0 - clip) * static_cast<double>(n - 1));
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<ptrdiff_t>(ilo), sorted.end());
    const double lo = sorted[ilo];
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<ptrdiff_t>(ihi), sorted.end());
    const double hi = sorted[ihi];
    if (hi <= lo) return;
    for (auto& x : v.data.raw()) {
        double t = std::clamp((static_cast<double>(x) - lo) / (hi - lo), 0.0, 1.0);
        x = static_cast<float>(lo + (hi - lo) * std::pow(t, g));
    }
}

void contrast_transform(Volume& v, double alpha) {
    double mean = 0.0;
    for (float x : v.data.raw()) mean += x;
    mean /= static_cast<double>(v.data.numel());
    for (auto& x : v.data.raw()) x = static_cast<float>(mean + alpha * (x - mean));
}

// Separable box blur with window k along each axis.
void box_blur(Volume& v, int k) {
    if (k <= 1) return;
    if (k % 2 == 0) ++k;
    const int r = k / 2;
    const int64_t d0 = v.data.dim(0), d1 = v.data.dim(1), d2 = v.data.dim(2);
    Tensor tmp({d0, d1, d2});
    auto pass = [&](Tensor& srcT, Tensor& dstT, int axis) {
        const int64_t dims[3] = {d0, d1, d2};
        for (int64_t a = 0; a < d0; ++a)
            for (int64_t b = 0; b < d1; ++b)
                for (int64_t c = 0; c < d2; ++c) {
                    double acc = 0.0;
                    for (int o = -r; o <= r; ++o) {
                        int64_t idx[3] = {a, b, c};
                        idx[axis] = std::clamp<int64_t>(idx[axis] + o, 0, dims[axis] - 1);
                        acc += srcT.at3(idx[0], idx[1], idx[2]);
                    }
                    dstT.at3(a, b, c) = static_cast<float>(acc / k);
                }
    };
    pass(v.data, tmp, 0);
    pass(tmp, v.data, 1);
    pass(v.data, tmp, 2);
    v.data = std::move(tmp);
}

void downscale_transform(Volume& v, double scale) {
    if (scale <= 0 || scale > 1) throw ConfigError("downscale: scale must be in (0,1]");
    const int64_t d0 = v.data.dim(0), d1 = v.data.dim(1), d2 = v.data.dim(2);
    const int64_t s0 = std::max<int64_t>(1, std::llround(static_cast<double>(d0) * scale));
    const int64_t s1 = std::max<int64_t>(1, std::llround(static_cast<double>(d1) * scale));
    const int64_t s2 = std::max<int64_t>(1, std::llround(static_cast<double>(d2) * scale));
    if (s0 == d0 && s1 == d1 && s2 == d2) return;
    Tensor small({s0, s1, s2});
    auto coord = [](int64_t i, int64_t from, int64_t to) {
        if (to == 1) return static_cast<double>(from - 1) / 2.0;
        return static_cast<double>(i) * static_cast<double>(from - 1) /
               static_cast<double>(to - 1);
    };
    for (int64_t a = 0; a < s0; ++a)
        for (int64_t b = 0; b < s1; ++b)
            for (int64_t c = 0; c < s2; ++c)
                small.at3(a, b, c) =
                    sample_trilinear(v.data, coord(a, d0, s0), coord(b, d1, s1), coord(c, d2, s2));
    for (int64_t a = 0; a < d0; ++a)
        for (int64_t b = 0; b < d1; ++b)
            for (int64_t c = 0; c < d2; ++c)
                v.data.at3(a, b, c) =
                    sample_trilinear(small, coord(a, s0, d0), coord(b, s1, d1), coord(c, s2, d2));
}

void ghosting(Volume& v, int reps, int axis, double attenuation) {
    if (reps <= 0) return;
    if (axis < 0 || axis > 2) throw ConfigError("ghosting: axis must be 0, 1, or 2");
    const int64_t d0 = v.data.dim(0), d1 = v.data.dim(1), d2 = v.data.dim(2);
    const size_t n = static_cast<size_t>(d0 * d1 * d2);
    std::vector<std::complex<float>> buf(n);
    for (size_t i = 0; i < n; ++i) buf[i] = v.data[static_cast<int64_t>(i)];
    auto* in = reinterpret_cast<fftwf_complex*>(buf.data());
    fftwf_plan fwd = fftwf_plan_dft_3d(static_cast<int>(d0), static_cast<int>(d1),
                                       static_cast<int>(d2), in, in, FFTW_FORWARD, FFTW_ESTIMATE);
    fftwf_execute(fwd);
    fftwf_destroy_plan(fwd);
    const int64_t dims[3] = {d0, d1, d2};
    const int64_t period = reps + 1;
    for (int64_t a = 0; a < d0; ++a)
        for (int64_t b = 0; b < d1; ++b)
            for (int64_t c = 0; c < d2; ++c) {
                const int64_t idx[3] = {a, b, c};
                const int64_t k = idx[axis];
                if (k != 0 && k % period == 0)
                    buf[static_cast<size_t>((a * d1 + b) * d2 + c)] *=
                        static_cast<float>(attenuation);
            }
    (void)dims;
    fftwf_plan bwd = fftwf_plan_dft_3d(static_cast<int>(d0), static_cast<int>(d1),
                                       static_cast<int>(d2), in, in, FFTW_BACKWARD, FFTW_ESTIMATE);
    fftwf_execute(bwd);
    fftwf_destroy_plan(bwd);
    const float inv = 1.0f / static_cast<float>(n);
    for (size_t i = 0; i < n; ++i) v.data[static_cast<int64_t>(i)] = buf[i].real() * inv;
}

void inhomogeneity(Volume& v, double amplitude, Rng& rng) {
    if (amplitude < 0 || amplitude >= 1)
        throw ConfigError("inhomogeneity: amplitude must be in [0,1)");
    std::vector<double> coeffs(10, 0.0);
    for (size_t i = 1; i < 10; ++i) coeffs[i] = rng.uniform(-1.0, 1.0);
    const int64_t d0 = v.data.dim(0), d1 = v.data.dim(1), d2 = v.data.dim(2);
    Tensor dev({d0, d1, d2});
    double max_abs = 0.0;
    auto norm = [](int64_t i, int64_t d) {
        return d == 1 ? 0.0 : 2.0 * static_cast<double>(i) / static_cast<double>(d - 1) - 1.0;
    };
    for (int64_t a = 0; a < d0; ++a)
        for (int64_t b = 0; b < d1; ++b)
            for (int64_t c = 0; c < d2; ++c) {
                double f =
                    phantom::bias_field_at(coeffs, norm(a, d0), norm(b, d1), norm(c, d2));
                dev.at3(a, b, c) = static_cast<float>(f);
                max_abs = std::max(max_abs, std::fabs(f));
            }
    if (max_abs <= 0.0 || amplitude == 0.0) return;
    for (int64_t i = 0; i < v.data.numel(); ++i)
        v.data[i] = static_cast<float>(
            v.data[i] * (1.0 + amplitude * static_cast<double>(dev[i]) / max_abs));
}

}  // namespace

std::string transform_name_str(TransformName n) {
    for (const auto& [k, val] : name_table())
        if (val == n) return k;
    throw ConfigError("unknown transform enum value");
}

TransformName transform_name_from_str(const std::string& s) {
    auto it = name_table().find(s);
    if (it == name_table().end()) throw ConfigError("unknown transform name: " + s);
    return it->second;
}

bool is_noise_transform(TransformName n) {
    switch (n) {
        case TransformName::salt_pepper:
        case TransformName::gaussian:
        case TransformName::gamma:
        case TransformName::contrast:
        case TransformName::blur:
        case TransformName::downscale:
            return true;
        default:
            return false;
    }
}

void TransformSpec::validate() const {
    if (probability < 0.0 || probability > 1.0)
        throw ConfigError("transform probability must be in [0,1]");
    const auto& allowed = allowed_params().at(name);
    for (const auto& [k, _] : parameters)
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
            throw ConfigError("transform '" + transform_name_str(name) +
                              "': unknown parameter '" + k + "'");
    const bool geometric =
        name == TransformName::flip || name == TransformName::grid_distortion;
    if (affects_labels != geometric)
        throw ConfigError("transform '" + transform_name_str(name) +
                          "': affects_labels must be " + (geometric ? "true" : "false"));
}

json TransformSpec::to_json() const {
    return json{{"name", transform_name_str(name)},
                {"probability", probability},
                {"parameters", parameters},
                {"affects_labels", affects_labels}};
}

TransformSpec TransformSpec::from_json(const json& j) {
    TransformSpec s = default_spec(transform_name_from_str(j.at("name").get<std::string>()));
    s.probability = j.value("probability", s.probability);
    if (j.contains("parameters"))
        for (auto it = j.at("parameters").begin(); it != j.at("parameters").end(); ++it)
            s.parameters[it.key()] = it.value().get<double>();
    s.affects_labels = j.value("affects_labels", s.affects_labels);
    s.validate();
    return s;
}

TransformSpec default_spec(TransformName n) {
    TransformSpec s;
    s.name = n;
    switch (n) {
        case TransformName::flip:
            s.probability = 0.5;
            s.parameters = {{"axis", 2.0}};  // sagittal (left axis)
            s.affects_labels = true;
            break;
        case TransformName::grid_distortion:
            s.probability = 1.0;
            s.parameters = {{"steps", 5.0}, {"distortion", 0.1}};
            s.affects_labels = true;
            break;
        case TransformName::salt_pepper:
            s.probability = 1.0 / 6.0;
            s.parameters = {{"amount", 0.01}, {"salt", 0.2}};
            break;
        case TransformName::gaussian:
            s.probability = 1.0 / 6.0;
            s.parameters = {{"amount", 0.2}};
            break;
        case TransformName::gamma:
            s.probability = 1.0 / 6.0;
            s.parameters = {{"clip", 0.025}, {"log_gamma", 0.4}};
            break;
        case TransformName::contrast:
            s.probability = 1.0 / 6.0;
            s.parameters = {{"alpha_min", 0.5}, {"alpha_max", 3.0}};
            break;
        case TransformName::blur:
            s.probability = 1.0 / 6.0;
            s.parameters = {{"limit", 3.0}};
            break;
        case TransformName::downscale:
            s.probability = 1.0 / 6.0;
            s.parameters = {{"scale_min", 0.25}, {"scale_max", 0.75}};
            break;
        case TransformName::ghosting:
            s.probability = 0.5;
            s.parameters = {{"max_reps", 4.0}};
            break;
        case TransformName::inhomogeneity:
            s.probability = 0.5;
            s.parameters = {{"amplitude", 0.2}};
            break;
    }
    return s;
}

std::vector<TransformSpec> default_roster() {
    std::vector<TransformSpec> r;
    for (const auto& [_, n] : name_table()) r.push_back(default_spec(n));
    std::sort(r.begin(), r.end(),
              [](const TransformSpec& a, const TransformSpec& b) { return a.name < b.name; });
    return r;
}

std::pair<Volume, LabelVolume> apply_transform(const TransformSpec& spec, const Volume& v,
                                               const LabelVolume* labels, uint64_t seed) {
    spec.validate();
    Volume out = v;
    LabelVolume lout;
    if (labels) lout = *labels;
    Rng rng(seed);
    if (rng.uniform() >= spec.probability) return {std::move(out), std::move(lout)};
    LabelVolume* lp = labels ? &lout : nullptr;
    switch (spec.name) {
        case TransformName::flip:
            flip_axis(out, lp, static_cast<int>(param(spec, "axis", 2)));
            break;
        case TransformName::grid_distortion:
            grid_distort(out, lp, static_cast<int>(param(spec, "steps", 5)),
                         param(spec, "distortion", 0.1), rng);
            break;
        case TransformName::salt_pepper:
            salt_pepper(out, param(spec, "amount", 0.01), param(spec, "salt", 0.2), rng);
            break;
        case TransformName::gaussian:
            gaussian_noise(out, param(spec, "amount", 0.2), rng);
            break;
        case TransformName::gamma:
            gamma_transform(out, param(spec, "clip", 0.025), param(spec, "log_gamma", 0.4), rng);
            break;
        case TransformName::contrast: {
            double alpha = has_param(spec, "alpha")
                               ? param(spec, "alpha", 1.0)
                               : rng.uniform(param(spec, "alpha_min", 0.5),
                                             param(spec, "alpha_max", 3.0));
            contrast_transform(out, alpha);
            break;
        }
        case TransformName::blur:
            box_blur(out, static_cast<int>(param(spec, "limit", 3)));
            break;
        case TransformName::downscale: {
            double scale = has_param(spec, "scale")
                               ? param(spec, "scale", 1.0)
                               : rng.uniform(param(spec, "scale_min", 0.25),
                                             param(spec, "scale_max", 0.75));
            downscale_transform(out, scale);
            break;
        }
        case TransformName::ghosting: {
            int reps = has_param(spec, "reps")
                           ? static_cast<int>(param(spec, "reps", 0))
                           : static_cast<int>(rng.uniform_int(
                                 1, static_cast<int64_t>(param(spec, "max_reps", 4))));
            int axis = static_cast<int>(rng.uniform_int(0, 2));
            double atten = has_param(spec, "attenuation") ? param(spec, "attenuation", 0.15)
                                                          : rng.uniform(0.05, 0.3);
            ghosting(out, reps, axis, atten);
            break;
        }
        case TransformName::inhomogeneity:
            inhomogeneity(out, param(spec, "amplitude", 0.2), rng);
            break;
    }
    return {std::move(out), std::move(lout)};
}

Pipeline::Pipeline(std::vector<TransformSpec> specs) {
    double noise_total = 0.0;
    for (auto& s : specs) {
        s.validate();
        if (s.name == TransformName::flip || s.name == TransformName::grid_distortion) {
            geometric_.push_back(s);
        } else if (is_noise_transform(s.name)) {
            noise_total += s.probability;
            noise_.push_back(s);
        } else {
            artefact_.push_back(s);
        }
    }
    if (noise_total > 1.0 + 1e-9)
        throw ConfigError("pipeline: noise-group probabilities sum above 1");
}

std::pair<Volume, LabelVolume> Pipeline::apply(const Volume& v, const LabelVolume* labels,
                                               uint64_t seed) const {
    Volume cur = v;
    LabelVolume lcur;
    if (labels) lcur = *labels;
    LabelVolume* lp = labels ? &lcur : nullptr;
    uint64_t sub = 0;
    for (const auto& s : geometric_) {
        auto [nv, nl] = apply_transform(s, cur, lp, Rng::derive_seed(seed, sub++));
        cur = std::move(nv);
        if (lp) lcur = std::move(nl);
    }
    if (!noise_.empty()) {
        Rng rng(Rng::derive_seed(seed, 0x9001));
        const double u = rng.uniform();
        double cum = 0.0;
        for (size_t i = 0; i < noise_.size(); ++i) {
            cum += noise_[i].probability;
            if (u < cum) {
                TransformSpec forced = noise_[i];
                forced.probability = 1.0;
                auto [nv, nl] =
                    apply_transform(forced, cur, lp, Rng::derive_seed(seed, 0x9100 + i));
                cur = std::move(nv);
                if (lp) lcur = std::move(nl);
                break;
            }
        }
    }
    sub = 0x9200;
    for (const auto& s : artefact_) {
        auto [nv, nl] = apply_transform(s, cur, lp, Rng::derive_seed(seed, sub++));
        cur = std::move(nv);
        if (lp) lcur = std::move(nl);
    }
    return {std::move(cur), std::move(lcur)};
}

Pipeline build_pipeline(const std::vector<TransformSpec>& specs) { return Pipeline(specs); }

double RobustnessCurve::max_drop() const {
    double min_dice = baseline;
    for (double d : dice) min_dice = std::min(min_dice, d);
    return baseline - min_dice;
}

std::string sweep_parameter(TransformName n) {
    switch (n) {
        case TransformName::flip: return "";
        case TransformName::grid_distortion: return "distortion";
        case TransformName::salt_pepper: return "amount";
        case TransformName::gaussian: return "amount";
        case TransformName::gamma: return "log_gamma";
        case TransformName::contrast: return "alpha";
        case TransformName::blur: return "limit";
        case TransformName::downscale: return "scale";
        case TransformName::ghosting: return "reps";
        case TransformName::inhomogeneity: return "amplitude";
    }
    throw ConfigError("unknown transform enum value");
}

RobustnessCurve probe_robustness(const Segmenter& model,
                                 const std::vector<std::pair<Volume, LabelVolume>>& val_set,
                                 TransformSpec spec, const std::vector<double>& sweep,
                                 uint64_t seed) {
    if (val_set.empty()) throw ConfigError("probe_robustness: empty validation set");
    for (size_t i = 1; i < sweep.size(); ++i)
        if (sweep[i] <= sweep[i - 1])
            throw ConfigError("probe_robustness: sweep values must be strictly increasing");
    spec.probability = 1.0;
    const std::string key = sweep_parameter(spec.name);
    RobustnessCurve curve;
    curve.transform = transform_name_str(spec.name);
    curve.sweep = sweep;

    double base = 0.0;
    for (const auto& [v, gt] : val_set) base += mean_foreground_dice(model(v), gt);
    curve.baseline = base / static_cast<double>(val_set.size());

    for (size_t i = 0; i < sweep.size(); ++i) {
        TransformSpec s = spec;
        if (!key.empty()) s.parameters[key] = sweep[i];
        double acc = 0.0;
        for (size_t j = 0; j < val_set.size(); ++j) {
            const auto& [v, gt] = val_set[j];
            auto [tv, tl] =
                apply_transform(s, v, &gt, Rng::derive_seed(seed, i * 10007 + j));
            acc += mean_foreground_dice(model(tv), tl);
        }
        curve.dice.push_back(acc / static_cast<double>(val_set.size()));
    }
    return curve;
}

std::vector<std::string> select_transforms(const std::vector<RobustnessCurve>& curves,
                                           double drop_threshold) {
    std::vector<std::string> out;
    for (const auto& c : curves)
        if (c.max_drop() > drop_threshold) out.push_back(c.transform);
    return out;
}

}  // namespace lodseg::aug
