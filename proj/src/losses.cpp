#include "lodseg/losses.hpp"

#include <cmath>

#include "lodseg/errors.hpp"

namespace lodseg {

namespace {

void check_pair(const Tensor& y, const Tensor& F) {
    require_same_shape(y, F, "loss");
    if (y.ndim() != 4) throw ShapeError("loss: expected (C,n0,n1,n2) grids");
}

}  // namespace

double cross_entropy(const Tensor& y, const Tensor& F, const LossConfig& cfg) {
    check_pair(y, F);
    const int64_t n = y.numel();
    const double eps = cfg.epsilon;
    double acc = 0.0;
    const float* py = y.data();
    const float* pf = F.data();
    for (int64_t i = 0; i < n; ++i) {
        if (py[i] == 0.0f) continue;
        double f = pf[i];
        if (f < eps) f = eps;
        if (f > 1.0) f = 1.0;
        acc -= static_cast<double>(py[i]) * std::log(f);
    }
    if (cfg.voxel_average) {
        const int64_t vox = y.dim(1) * y.dim(2) * y.dim(3);
        acc /= static_cast<double>(vox);
    }
    return acc;
}

double dice_loss(const Tensor& y, const Tensor& F, const LossConfig& cfg) {
    check_pair(y, F);
    const int64_t C = y.dim(0);
    const int64_t vox = y.dim(1) * y.dim(2) * y.dim(3);
    const int64_t c0 = cfg.include_background ? 0 : 1;
    const double n_cls = static_cast<double>(C - c0);
    double acc = 0.0;
    for (int64_t c = c0; c < C; ++c) {
        const float* py = y.data() + c * vox;
        const float* pf = F.data() + c * vox;
        double num = 0.0, den = cfg.epsilon;
        for (int64_t k = 0; k < vox; ++k) {
            num += static_cast<double>(py[k]) * pf[k];
            den += static_cast<double>(py[k]) * py[k] + static_cast<double>(pf[k]) * pf[k];
        }
        acc += num / den;
    }
    return 1.0 - (2.0 / n_cls) * acc;
}

double mixed_loss(const Tensor& y, const Tensor& F, const LossConfig& cfg) {
    double l = 0.0;
    if (cfg.lambda != 0.0) l += cfg.lambda * cross_entropy(y, F, cfg);
    if (cfg.lambda != 1.0) l += (1.0 - cfg.lambda) * dice_loss(y, F, cfg);
    return l;
}

double mixed_loss_grad(const Tensor& y, const Tensor& F, const LossConfig& cfg, Tensor& grad) {
    check_pair(y, F);
    const int64_t C = y.dim(0);
    const int64_t vox = y.dim(1) * y.dim(2) * y.dim(3);
    if (!grad.same_shape(F)) grad = Tensor(F.shape());
    grad.fill(0.0f);

    double value = 0.0;
    const double eps = cfg.epsilon;

    if (cfg.lambda != 0.0) {
        // Clamp acts as a hard stop: zero gradient outside [eps, 1].
        const double scale = cfg.voxel_average ? 1.0 / static_cast<double>(vox) : 1.0;
        double ce = 0.0;
        const float* py = y.data();
        const float* pf = F.data();
        float* pg = grad.data();
        for (int64_t i = 0; i < C * vox; ++i) {
            if (py[i] == 0.0f) continue;
            double f = pf[i];
            bool clamped = f < eps || f > 1.0;
            if (f < eps) f = eps;
            if (f > 1.0) f = 1.0;
            ce -= py[i] * std::log(f);
            if (!clamped)
                pg[i] += static_cast<float>(cfg.lambda * scale * (-static_cast<double>(py[i]) / f));
        }
        value += cfg.lambda * ce * scale;
    }

    if (cfg.lambda != 1.0) {
        const int64_t c0 = cfg.include_background ? 0 : 1;
        const double n_cls = static_cast<double>(C - c0);
        const double w = 1.0 - cfg.lambda;
        double acc = 0.0;
        for (int64_t c = c0; c < C; ++c) {
            const float* py = y.data() + c * vox;
            const float* pf = F.data() + c * vox;
            float* pg = grad.data() + c * vox;
            double num = 0.0, den = eps;
            for (int64_t k = 0; k < vox; ++k) {
                num += static_cast<double>(py[k]) * pf[k];
                den += static_cast<double>(py[k]) * py[k] + static_cast<double>(pf[k]) * pf[k];
            }
            acc += num / den;
            // d/dF of -(2/n) * num/den:  -(2/n) * (y*den - num*2F) / den^2
            const double inv_den2 = 1.0 / (den * den);
            for (int64_t k = 0; k < vox; ++k) {
                double d = (static_cast<double>(py[k]) * den - num * 2.0 * pf[k]) * inv_den2;
                pg[k] += static_cast<float>(w * (-2.0 / n_cls) * d);
            }
        }
        value += w * (1.0 - (2.0 / n_cls) * acc);
    }
    return value;
}

double dice_metric(const LabelVolume& pred, const LabelVolume& gt, int cls) {
    if (pred.shape != gt.shape) throw ShapeError("dice_metric: shape mismatch");
    int64_t a = 0, b = 0, inter = 0;
    const int64_t n = pred.numel();
    for (int64_t i = 0; i < n; ++i) {
        bool pa = pred.data[static_cast<size_t>(i)] == cls;
        bool pb = gt.data[static_cast<size_t>(i)] == cls;
        a += pa;
        b += pb;
        inter += pa && pb;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

double mean_foreground_dice(const LabelVolume& pred, const LabelVolume& gt) {
    double acc = 0.0;
    for (int c = 1; c < gt.num_classes; ++c) acc += dice_metric(pred, gt, c);
    return acc / static_cast<double>(gt.num_classes - 1);
}

}  // namespace lodseg
