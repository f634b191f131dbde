#include "ritseg/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <sstream>

namespace ritseg {

std::int64_t dims_product(const std::vector<int>& dims) {
    std::int64_t n = 1;
    for (int d : dims) n *= d;
    return n;
}

static void validate_dims(const std::vector<int>& dims) {
    if (dims.empty() || dims.size() > 4)
        throw ShapeError("tensor rank must be 1..4, got " + std::to_string(dims.size()));
    for (int d : dims)
        if (d <= 0) throw ShapeError("tensor extents must be positive");
}

Tensor::Tensor(std::vector<int> dims) : dims_(std::move(dims)) {
    validate_dims(dims_);
    data_.assign(static_cast<std::size_t>(dims_product(dims_)), 0.0f);
}

Tensor Tensor::full(std::vector<int> dims, float value) {
    Tensor t(std::move(dims));
    t.data_.assign(t.data_.size(), value);
    return t;
}

Tensor Tensor::from(std::vector<int> dims, std::vector<float> values) {
    validate_dims(dims);
    if (static_cast<std::int64_t>(values.size()) != dims_product(dims))
        throw ShapeError("value count does not match extents");
    Tensor t;
    t.dims_ = std::move(dims);
    t.data_ = std::move(values);
    return t;
}

Tensor Tensor::scalar(float value) { return from({1}, {value}); }

std::string Tensor::dims_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < dims_.size(); ++i)
        os << (i ? "x" : "") << dims_[i];
    os << "]";
    return os.str();
}

namespace {
std::atomic<int> g_validation{-1}; // -1: read env on first use
}

bool validation_enabled() {
    int v = g_validation.load(std::memory_order_relaxed);
    if (v < 0) {
        const char* s = std::getenv("RITSEG_VALIDATE");
        v = (s && s[0] == '1') ? 1 : 0;
        g_validation.store(v, std::memory_order_relaxed);
    }
    return v == 1;
}

void set_validation(bool on) { g_validation.store(on ? 1 : 0, std::memory_order_relaxed); }

void check_finite(const Tensor& t, const char* op_name) {
    if (!validation_enabled()) return;
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        if (!std::isfinite(t[i]))
            throw Error(std::string(op_name) + ": non-finite element at flat index " + std::to_string(i));
    }
}

} // namespace ritseg
