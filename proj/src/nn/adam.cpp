#include "lodseg/nn/adam.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include "lodseg/errors.hpp"

namespace lodseg::nn {

void Adam::step(std::vector<ParamTensor>& params, double lr,
                const std::function<bool(const ParamTensor&)>& trainable) {
    if (m_.size() != params.size()) {
        m_.assign(params.size(), {});
        v_.assign(params.size(), {});
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        ParamTensor& p = params[i];
        if (!trainable(p)) continue;
        auto& m = m_[i];
        auto& v = v_[i];
        if (m.empty()) {
            m.assign(static_cast<size_t>(p.value.numel()), 0.0f);
            v.assign(static_cast<size_t>(p.value.numel()), 0.0f);
        }
        const int64_t n = p.value.numel();
        for (int64_t j = 0; j < n; ++j) {
            const double g = p.grad[j];
            const double mj = beta1_ * m[static_cast<size_t>(j)] + (1.0 - beta1_) * g;
            const double vj = beta2_ * v[static_cast<size_t>(j)] + (1.0 - beta2_) * g * g;
            m[static_cast<size_t>(j)] = static_cast<float>(mj);
            v[static_cast<size_t>(j)] = static_cast<float>(vj);
            p.value[j] -= static_cast<float>(lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps_));
        }
    }
}

void Adam::save(std::ostream& os) const {
    uint64_t t = static_cast<uint64_t>(t_);
    uint64_t n = m_.size();
    os.write(reinterpret_cast<const char*>(&t), sizeof(t));
    os.write(reinterpret_cast<const char*>(&n), sizeof(n));
    for (size_t i = 0; i < m_.size(); ++i) {
        uint64_t len = m_[i].size();
        os.write(reinterpret_cast<const char*>(&len), sizeof(len));
        os.write(reinterpret_cast<const char*>(m_[i].data()),
                 static_cast<std::streamsize>(len * sizeof(float)));
        os.write(reinterpret_cast<const char*>(v_[i].data()),
                 static_cast<std::streamsize>(len * sizeof(float)));
    }
}

void Adam::load(std::istream& is, const std::vector<ParamTensor>& params) {
    uint64_t t = 0, n = 0;
    is.read(reinterpret_cast<char*>(&t), sizeof(t));
    is.read(reinterpret_cast<char*>(&n), sizeof(n));
    if (!is || n != params.size()) throw FormatError("optimizer state does not match network");
    t_ = static_cast<int64_t>(t);
    m_.assign(n, {});
    v_.assign(n, {});
    for (size_t i = 0; i < n; ++i) {
        uint64_t len = 0;
        is.read(reinterpret_cast<char*>(&len), sizeof(len));
        if (!is || (len != 0 && len != static_cast<uint64_t>(params[i].value.numel())))
            throw FormatError("optimizer state tensor size mismatch");
        m_[i].resize(len);
        v_[i].resize(len);
        is.read(reinterpret_cast<char*>(m_[i].data()),
                static_cast<std::streamsize>(len * sizeof(float)));
        is.read(reinterpret_cast<char*>(v_[i].data()),
                static_cast<std::streamsize>(len * sizeof(float)));
        if (!is) throw FormatError("truncated optimizer state");
    }
}

void Adam::reset() {
    t_ = 0;
    m_.clear();
    v_.clear();
}

}  // namespace lodseg::nn
