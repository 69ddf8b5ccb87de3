#include "lodseg/nn/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "lodseg/errors.hpp"
#include "lodseg/rng.hpp"

namespace lodseg::nn {

namespace {

struct ConvDims {
    int64_t ci, co, k, d, h, w, od, oh, ow;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
    if (x.ndim() != 4 || w.ndim() != 5) throw ShapeError("conv3d: bad tensor ranks");
    ConvDims c{};
    c.ci = x.dim(0);
    c.d = x.dim(1);
    c.h = x.dim(2);
    c.w = x.dim(3);
    c.co = w.dim(0);
    c.k = w.dim(2);
    if (w.dim(1) != c.ci)
        throw ShapeError("conv3d: weight expects " + std::to_string(w.dim(1)) +
                         " input channels, got " + std::to_string(c.ci));
    auto out = [&](int64_t n) { return (n + 2 * pad - c.k) / stride + 1; };
    if ((c.d + 2 * pad - c.k) % stride || (c.h + 2 * pad - c.k) % stride ||
        (c.w + 2 * pad - c.k) % stride)
        throw ShapeError("conv3d: spatial size " + x.shape_str() + " not divisible by stride " +
                         std::to_string(stride) + " with kernel " + std::to_string(c.k) +
                         " pad " + std::to_string(pad));
    c.od = out(c.d);
    c.oh = out(c.h);
    c.ow = out(c.w);
    if (c.od < 1 || c.oh < 1 || c.ow < 1) throw ShapeError("conv3d: output collapses to zero size");
    return c;
}

// Fills the column buffer for one output depth slice: rows are
// (ci,kd,kh,kw), columns are (oh,ow).
void im2col_slice(const float* x, const ConvDims& c, int stride, int pad, int64_t od_idx,
                  float* col) {
    const int64_t cols = c.oh * c.ow;
    for (int64_t ci = 0; ci < c.ci; ++ci) {
        const float* xc = x + ci * c.d * c.h * c.w;
        for (int64_t kd = 0; kd < c.k; ++kd) {
            const int64_t d = od_idx * stride - pad + kd;
            for (int64_t kh = 0; kh < c.k; ++kh) {
                for (int64_t kw = 0; kw < c.k; ++kw) {
                    float* row = col + (((ci * c.k + kd) * c.k + kh) * c.k + kw) * cols;
                    if (d < 0 || d >= c.d) {
                        std::memset(row, 0, sizeof(float) * static_cast<size_t>(cols));
                        continue;
                    }
                    const float* xslab = xc + d * c.h * c.w;
                    for (int64_t oh = 0; oh < c.oh; ++oh) {
                        const int64_t h = oh * stride - pad + kh;
                        float* dst = row + oh * c.ow;
                        if (h < 0 || h >= c.h) {
                            std::memset(dst, 0, sizeof(float) * static_cast<size_t>(c.ow));
                            continue;
                        }
                        const float* src = xslab + h * c.w;
                        for (int64_t ow = 0; ow < c.ow; ++ow) {
                            const int64_t ww = ow * stride - pad + kw;
                            dst[ow] = (ww < 0 || ww >= c.w) ? 0.0f : src[ww];
                        }
                    }
                }
            }
        }
    }
}

// Adjoint of im2col_slice: scatter-adds the column buffer back into dx.
void col2im_slice(const float* col, const ConvDims& c, int stride, int pad, int64_t od_idx,
                  float* dx) {
    const int64_t cols = c.oh * c.ow;
    for (int64_t ci = 0; ci < c.ci; ++ci) {
        float* xc = dx + ci * c.d * c.h * c.w;
        for (int64_t kd = 0; kd < c.k; ++kd) {
            const int64_t d = od_idx * stride - pad + kd;
            if (d < 0 || d >= c.d) continue;
            for (int64_t kh = 0; kh < c.k; ++kh) {
                for (int64_t kw = 0; kw < c.k; ++kw) {
                    const float* row = col + (((ci * c.k + kd) * c.k + kh) * c.k + kw) * cols;
                    float* xslab = xc + d * c.h * c.w;
                    for (int64_t oh = 0; oh < c.oh; ++oh) {
                        const int64_t h = oh * stride - pad + kh;
                        if (h < 0 || h >= c.h) continue;
                        const float* src = row + oh * c.ow;
                        float* dst = xslab + h * c.w;
                        for (int64_t ow = 0; ow < c.ow; ++ow) {
                            const int64_t ww = ow * stride - pad + kw;
                            if (ww >= 0 && ww < c.w) dst[ww] += src[ow];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    ConvDims c = conv_dims(x, w, stride, pad);
    if (b.numel() != c.co) throw ShapeError("conv3d: bias size mismatch");
    Tensor y({c.co, c.od, c.oh, c.ow});
    const int64_t kk = c.ci * c.k * c.k * c.k;
    const int64_t cols = c.oh * c.ow;
    std::vector<float> col(static_cast<size_t>(kk * cols));
    // The channel-major output layout is strided per depth slice, so the GEMM
    // writes into a contiguous slice buffer first.
    std::vector<float> yslice(static_cast<size_t>(c.co * cols));
    for (int64_t od = 0; od < c.od; ++od) {
        im2col_slice(x.data(), c, stride, pad, od, col.data());
        // y_slice (co x cols) = W (co x kk) * col (kk x cols)
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(c.co),
                    static_cast<int>(cols), static_cast<int>(kk), 1.0f, w.data(),
                    static_cast<int>(kk), col.data(), static_cast<int>(cols), 0.0f,
                    yslice.data(), static_cast<int>(cols));
        for (int64_t co = 0; co < c.co; ++co) {
            float* dst = y.data() + (co * c.od + od) * cols;
            const float* src = yslice.data() + co * cols;
            const float bias = b[co];
            for (int64_t i = 0; i < cols; ++i) dst[i] = src[i] + bias;
        }
    }
    return y;
}

Tensor conv3d_backward_data(const Tensor& dy, const Tensor& w, int stride, int pad,
                            const std::array<int64_t, 3>& in_spatial) {
    const int64_t ci = w.dim(1);
    Tensor dx({ci, in_spatial[0], in_spatial[1], in_spatial[2]}, 0.0f);
    ConvDims c = conv_dims(dx, w, stride, pad);
    if (dy.dim(0) != c.co || dy.dim(1) != c.od || dy.dim(2) != c.oh || dy.dim(3) != c.ow)
        throw ShapeError("conv3d_backward_data: dy shape " + dy.shape_str() + " inconsistent");
    const int64_t kk = c.ci * c.k * c.k * c.k;
    const int64_t cols = c.oh * c.ow;
    std::vector<float> col(static_cast<size_t>(kk * cols));
    std::vector<float> dyslice(static_cast<size_t>(c.co * cols));
    for (int64_t od = 0; od < c.od; ++od) {
        for (int64_t co = 0; co < c.co; ++co)
            std::memcpy(dyslice.data() + co * cols, dy.data() + (co * c.od + od) * cols,
                        sizeof(float) * static_cast<size_t>(cols));
        // col (kk x cols) = W^T (kk x co) * dy_slice (co x cols)
        cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(kk),
                    static_cast<int>(cols), static_cast<int>(c.co), 1.0f, w.data(),
                    static_cast<int>(kk), dyslice.data(), static_cast<int>(cols), 0.0f,
                    col.data(), static_cast<int>(cols));
        col2im_slice(col.data(), c, stride, pad, od, dx.data());
    }
    return dx;
}

void conv3d_backward_weights(const Tensor& x, const Tensor& dy, int stride, int pad,
                             Tensor& dw, Tensor& db) {
    ConvDims c = conv_dims(x, dw, stride, pad);
    if (dy.dim(0) != c.co || dy.dim(1) != c.od)
        throw ShapeError("conv3d_backward_weights: dy shape inconsistent");
    const int64_t kk = c.ci * c.k * c.k * c.k;
    const int64_t cols = c.oh * c.ow;
    std::vector<float> col(static_cast<size_t>(kk * cols));
    std::vector<float> dyslice(static_cast<size_t>(c.co * cols));
    for (int64_t od = 0; od < c.od; ++od) {
        im2col_slice(x.data(), c, stride, pad, od, col.data());
        for (int64_t co = 0; co < c.co; ++co) {
            const float* src = dy.data() + (co * c.od + od) * cols;
            std::memcpy(dyslice.data() + co * cols, src, sizeof(float) * static_cast<size_t>(cols));
            double s = 0.0;
            for (int64_t i = 0; i < cols; ++i) s += src[i];
            db[co] += static_cast<float>(s);
        }
        // dW (co x kk) += dy_slice (co x cols) * col^T (cols x kk)
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(c.co),
                    static_cast<int>(kk), static_cast<int>(cols), 1.0f, dyslice.data(),
                    static_cast<int>(cols), col.data(), static_cast<int>(cols), 1.0f, dw.data(),
                    static_cast<int>(kk));
    }
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int group_size,
                  double eps, GroupNormCache* cache) {
    const int64_t C = x.dim(0);
    if (C % group_size != 0)
        throw ConfigError("group_norm: " + std::to_string(C) + " channels not divisible by group size " +
                          std::to_string(group_size));
    const int64_t vox = x.dim(1) * x.dim(2) * x.dim(3);
    const int64_t groups = C / group_size;
    const int64_t m = group_size * vox;
    Tensor y(x.shape());
    if (cache) {
        cache->x_hat = Tensor(x.shape());
        cache->inv_std.assign(static_cast<size_t>(groups), 0.0);
    }
    for (int64_t g = 0; g < groups; ++g) {
        const float* xa = x.data() + g * m;
        double sum = 0.0;
        for (int64_t i = 0; i < m; ++i) sum += xa[i];
        const double mean = sum / static_cast<double>(m);
        double var = 0.0;
        for (int64_t i = 0; i < m; ++i) {
            double d = xa[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(m);
        const double inv_std = 1.0 / std::sqrt(var + eps);
        if (cache) cache->inv_std[static_cast<size_t>(g)] = inv_std;
        for (int64_t cc = 0; cc < group_size; ++cc) {
            const int64_t ch = g * group_size + cc;
            const float gm = gamma[ch], bt = beta[ch];
            const float* xs = x.data() + ch * vox;
            float* ys = y.data() + ch * vox;
            float* hs = cache ? cache->x_hat.data() + ch * vox : nullptr;
            for (int64_t i = 0; i < vox; ++i) {
                float xh = static_cast<float>((xs[i] - mean) * inv_std);
                if (hs) hs[i] = xh;
                ys[i] = gm * xh + bt;
            }
        }
    }
    return y;
}

Tensor group_norm_backward(const Tensor& dy, const Tensor& gamma, int group_size,
                           const GroupNormCache& cache, Tensor& dgamma, Tensor& dbeta) {
    const int64_t C = dy.dim(0);
    const int64_t vox = dy.dim(1) * dy.dim(2) * dy.dim(3);
    const int64_t groups = C / group_size;
    const int64_t m = group_size * vox;
    Tensor dx(dy.shape());
    for (int64_t g = 0; g < groups; ++g) {
        const double inv_std = cache.inv_std[static_cast<size_t>(g)];
        // t = dy * gamma (per element); dx = inv_std * (t - mean(t) - x_hat * mean(t*x_hat))
        double sum_t = 0.0, sum_tx = 0.0;
        for (int64_t cc = 0; cc < group_size; ++cc) {
            const int64_t ch = g * group_size + cc;
            const float gm = gamma[ch];
            const float* dys = dy.data() + ch * vox;
            const float* hs = cache.x_hat.data() + ch * vox;
            double dg = 0.0, dbv = 0.0;
            for (int64_t i = 0; i < vox; ++i) {
                const double t = static_cast<double>(dys[i]) * gm;
                sum_t += t;
                sum_tx += t * hs[i];
                dg += static_cast<double>(dys[i]) * hs[i];
                dbv += dys[i];
            }
            dgamma[ch] += static_cast<float>(dg);
            dbeta[ch] += static_cast<float>(dbv);
        }
        const double mean_t = sum_t / static_cast<double>(m);
        const double mean_tx = sum_tx / static_cast<double>(m);
        for (int64_t cc = 0; cc < group_size; ++cc) {
            const int64_t ch = g * group_size + cc;
            const float gm = gamma[ch];
            const float* dys = dy.data() + ch * vox;
            const float* hs = cache.x_hat.data() + ch * vox;
            float* dxs = dx.data() + ch * vox;
            for (int64_t i = 0; i < vox; ++i) {
                const double t = static_cast<double>(dys[i]) * gm;
                dxs[i] = static_cast<float>(inv_std * (t - mean_t - hs[i] * mean_tx));
            }
        }
    }
    return dx;
}

void relu_inplace(Tensor& x) {
    float* p = x.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i)
        if (p[i] < 0.0f) p[i] = 0.0f;
}

void relu_backward_inplace(Tensor& grad, const Tensor& activated) {
    require_same_shape(grad, activated, "relu_backward");
    float* g = grad.data();
    const float* a = activated.data();
    const int64_t n = grad.numel();
    for (int64_t i = 0; i < n; ++i)
        if (a[i] <= 0.0f) g[i] = 0.0f;
}

Tensor dropout_mask(const std::vector<int64_t>& shape, double rate, uint64_t seed) {
    Tensor mask(shape);
    if (rate <= 0.0) {
        mask.fill(1.0f);
        return mask;
    }
    Rng rng(seed);
    const float keep_scale = static_cast<float>(1.0 / (1.0 - rate));
    const int64_t n = mask.numel();
    for (int64_t i = 0; i < n; ++i)
        mask[i] = rng.uniform() < rate ? 0.0f : keep_scale;
    return mask;
}

Tensor softmax_channels(const Tensor& logits) {
    const int64_t C = logits.dim(0);
    const int64_t vox = logits.dim(1) * logits.dim(2) * logits.dim(3);
    Tensor y(logits.shape());
    const float* x = logits.data();
    float* p = y.data();
    for (int64_t i = 0; i < vox; ++i) {
        float mx = x[i];
        for (int64_t c = 1; c < C; ++c) mx = std::max(mx, x[c * vox + i]);
        double sum = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            double e = std::exp(static_cast<double>(x[c * vox + i] - mx));
            p[c * vox + i] = static_cast<float>(e);
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (int64_t c = 0; c < C; ++c)
            p[c * vox + i] = static_cast<float>(p[c * vox + i] * inv);
    }
    return y;
}

Tensor softmax_backward(const Tensor& dy, const Tensor& y) {
    require_same_shape(dy, y, "softmax_backward");
    const int64_t C = y.dim(0);
    const int64_t vox = y.dim(1) * y.dim(2) * y.dim(3);
    Tensor dx(y.shape());
    const float* g = dy.data();
    const float* p = y.data();
    float* o = dx.data();
    for (int64_t i = 0; i < vox; ++i) {
        double dot = 0.0;
        for (int64_t c = 0; c < C; ++c)
            dot += static_cast<double>(g[c * vox + i]) * p[c * vox + i];
        for (int64_t c = 0; c < C; ++c)
            o[c * vox + i] =
                static_cast<float>(p[c * vox + i] * (static_cast<double>(g[c * vox + i]) - dot));
    }
    return dx;
}

Tensor mean_pool(const Tensor& x, int factor) {
    if (factor == 1) return x;
    if (x.ndim() != 4) throw ShapeError("mean_pool: expected (C,D,H,W)");
    for (int ax = 1; ax < 4; ++ax)
        if (x.dim(static_cast<size_t>(ax)) % factor)
            throw ShapeError("mean_pool: side " + std::to_string(x.dim(static_cast<size_t>(ax))) +
                             " not divisible by factor " + std::to_string(factor));
    const int64_t C = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t od = D / factor, oh = H / factor, ow = W / factor;
    Tensor y({C, od, oh, ow});
    const double inv = 1.0 / (static_cast<double>(factor) * factor * factor);
    for (int64_t c = 0; c < C; ++c)
        for (int64_t a = 0; a < od; ++a)
            for (int64_t b = 0; b < oh; ++b)
                for (int64_t cc = 0; cc < ow; ++cc) {
                    double s = 0.0;
                    for (int64_t i = 0; i < factor; ++i)
                        for (int64_t j = 0; j < factor; ++j)
                            for (int64_t k = 0; k < factor; ++k)
                                s += x.at4(c, a * factor + i, b * factor + j, cc * factor + k);
                    y.at4(c, a, b, cc) = static_cast<float>(s * inv);
                }
    return y;
}

Volume mean_pool_volume(const Volume& v, int factor) {
    if (factor == 1) return v;
    Tensor x({1, v.shape()[0], v.shape()[1], v.shape()[2]});
    std::copy(v.data.raw().begin(), v.data.raw().end(), x.raw().begin());
    Tensor y = mean_pool(x, factor);
    Volume out;
    out.data = Tensor({y.dim(1), y.dim(2), y.dim(3)});
    std::copy(y.raw().begin(), y.raw().end(), out.data.raw().begin());
    out.orientation = v.orientation;
    out.spacing_mm = {v.spacing_mm[0] * factor, v.spacing_mm[1] * factor,
                      v.spacing_mm[2] * factor};
    out.source_id = v.source_id;
    return out;
}

LabelVolume majority_pool_labels(const LabelVolume& l, int factor) {
    if (factor == 1) return l;
    for (int ax = 0; ax < 3; ++ax)
        if (l.shape[static_cast<size_t>(ax)] % factor)
            throw ShapeError("majority_pool_labels: shape not divisible by factor");
    LabelVolume out;
    out.shape = {l.shape[0] / factor, l.shape[1] / factor, l.shape[2] / factor};
    out.num_classes = l.num_classes;
    out.class_names = l.class_names;
    out.data.resize(static_cast<size_t>(out.numel()));
    std::vector<int> counts(static_cast<size_t>(l.num_classes));
    for (int64_t a = 0; a < out.shape[0]; ++a)
        for (int64_t b = 0; b < out.shape[1]; ++b)
            for (int64_t c = 0; c < out.shape[2]; ++c) {
                std::fill(counts.begin(), counts.end(), 0);
                for (int64_t i = 0; i < factor; ++i)
                    for (int64_t j = 0; j < factor; ++j)
                        for (int64_t k = 0; k < factor; ++k)
                            ++counts[static_cast<size_t>(
                                l.at(a * factor + i, b * factor + j, c * factor + k))];
                int best = 0;
                for (int cls = 1; cls < l.num_classes; ++cls)
                    if (counts[static_cast<size_t>(cls)] > counts[static_cast<size_t>(best)])
                        best = cls;  // strict '>' keeps ties at the smaller id
                out.at(a, b, c) = best;
            }
    return out;
}

}  // namespace lodseg::nn
