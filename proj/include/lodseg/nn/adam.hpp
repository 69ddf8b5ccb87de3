#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "lodseg/nn/network.hpp"

namespace lodseg::nn {

// Adam with conventional defaults. Moments are kept per parameter tensor and
// are serializable so an interrupted run resumes bit-identically.
class Adam {
  public:
    Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // Applies one update to every parameter for which `trainable` is true.
    // Non-trainable parameters keep value, moments, and step count untouched.
    void step(std::vector<ParamTensor>& params, double lr,
              const std::function<bool(const ParamTensor&)>& trainable);

    void save(std::ostream& os) const;
    void load(std::istream& is, const std::vector<ParamTensor>& params);
    void reset();

  private:
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

}  // namespace lodseg::nn
