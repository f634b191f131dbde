#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ritseg/errors.hpp"

namespace ritseg {

/// Rank <= 4 row-major float32 tensor. Image batches use NCHW layout.
class Tensor {
public:
    Tensor() = default;

    /// Zero-filled tensor of the given extents.
    explicit Tensor(std::vector<int> dims);

    static Tensor full(std::vector<int> dims, float value);
    static Tensor from(std::vector<int> dims, std::vector<float> values);
    static Tensor scalar(float value);

    const std::vector<int>& dims() const { return dims_; }
    int dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(dims_.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool is_scalar() const { return data_.size() == 1; }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& values() { return data_; }
    const std::vector<float>& values() const { return data_; }

    float& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    float operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // NCHW accessors.
    float& at(int n, int c, int h, int w) {
        return data_[static_cast<std::size_t>(((static_cast<std::int64_t>(n) * dims_[1] + c) * dims_[2] + h) * dims_[3] + w)];
    }
    float at(int n, int c, int h, int w) const {
        return data_[static_cast<std::size_t>(((static_cast<std::int64_t>(n) * dims_[1] + c) * dims_[2] + h) * dims_[3] + w)];
    }

    bool same_dims(const Tensor& other) const { return dims_ == other.dims_; }
    std::string dims_str() const;

    /// Grad buffer management; grad always mirrors the value extents.
    bool requires_grad = false;
    std::vector<float> grad; // empty until alloc_grad()
    void alloc_grad() {
        if (grad.size() != data_.size()) grad.assign(data_.size(), 0.0f);
    }
    void zero_grad() { grad.assign(grad.size(), 0.0f); }

private:
    std::vector<int> dims_;
    std::vector<float> data_;
};

/// Validation mode: when enabled, ops assert every produced element is
/// finite. Controlled by RITSEG_VALIDATE=1 or set_validation().
bool validation_enabled();
void set_validation(bool on);
void check_finite(const Tensor& t, const char* op_name);

std::int64_t dims_product(const std::vector<int>& dims);

} // namespace ritseg
