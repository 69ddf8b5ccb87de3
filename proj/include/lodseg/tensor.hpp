#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "lodseg/errors.hpp"

namespace lodseg {

// Dense row-major float tensor. Volumes are (D,H,W); channelled grids are
// (C,D,H,W). Row-major means the last index is fastest.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<int64_t> shape, float fill = 0.0f)
        : shape_(std::move(shape)), data_(numel_of(shape_), fill) {}

    static int64_t numel_of(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t s : shape) {
            if (s < 1) throw ShapeError("tensor dimension must be >= 1");
            n *= s;
        }
        return n;
    }

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t ndim() const { return shape_.size(); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // 3D access for (D,H,W) tensors.
    float& at3(int64_t d, int64_t h, int64_t w) {
        return data_[static_cast<size_t>((d * shape_[1] + h) * shape_[2] + w)];
    }
    float at3(int64_t d, int64_t h, int64_t w) const {
        return data_[static_cast<size_t>((d * shape_[1] + h) * shape_[2] + w)];
    }

    // 4D access for (C,D,H,W) tensors.
    float& at4(int64_t c, int64_t d, int64_t h, int64_t w) {
        return data_[static_cast<size_t>(((c * shape_[1] + d) * shape_[2] + h) * shape_[3] + w)];
    }
    float at4(int64_t c, int64_t d, int64_t h, int64_t w) const {
        return data_[static_cast<size_t>(((c * shape_[1] + d) * shape_[2] + h) * shape_[3] + w)];
    }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const {
        std::string s = "(";
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + ")";
    }

    std::vector<float>& raw() { return data_; }
    const std::vector<float>& raw() const { return data_; }

  private:
    std::vector<int64_t> shape_;
    std::vector<float> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace lodseg
