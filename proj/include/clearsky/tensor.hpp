#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace clearsky {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

/// Dense row-major tensor. Feature maps use NHWC layout (channels fastest).
template <class S>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, S fill = S(0))
        : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {
        for (int d : shape_)
            if (d <= 0) throw ShapeError("Tensor: nonpositive dim in " + shape_str(shape_));
    }
    Tensor(Shape shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
            throw ShapeError("Tensor: data size does not match " + shape_str(shape_));
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }
    std::vector<S>& vec() { return data_; }
    const std::vector<S>& vec() const { return data_; }

    S& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    S operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // NHWC accessor for rank-4 tensors.
    S& at4(int n, int h, int w, int c) {
        return data_[static_cast<size_t>(((int64_t(n) * shape_[1] + h) * shape_[2] + w) * shape_[3] + c)];
    }
    S at4(int n, int h, int w, int c) const {
        return data_[static_cast<size_t>(((int64_t(n) * shape_[1] + h) * shape_[2] + w) * shape_[3] + c)];
    }
    S& at2(int r, int c) { return data_[static_cast<size_t>(int64_t(r) * shape_[1] + c)]; }
    S at2(int r, int c) const { return data_[static_cast<size_t>(int64_t(r) * shape_[1] + c)]; }
    S& at3(int b, int r, int c) {
        return data_[static_cast<size_t>((int64_t(b) * shape_[1] + r) * shape_[2] + c)];
    }
    S at3(int b, int r, int c) const {
        return data_[static_cast<size_t>((int64_t(b) * shape_[1] + r) * shape_[2] + c)];
    }

    Tensor<S> reshaped(Shape s) const {
        if (shape_numel(s) != numel())
            throw ShapeError("reshape: numel mismatch " + shape_str(shape_) + " -> " + shape_str(s));
        Tensor<S> out;
        out.shape_ = std::move(s);
        out.data_ = data_;
        return out;
    }

    bool same_shape(const Tensor<S>& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (S v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

    template <class T>
    Tensor<T> cast() const {
        Tensor<T> out(shape_);
        for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<T>(data_[static_cast<size_t>(i)]);
        return out;
    }

private:
    Shape shape_;
    std::vector<S> data_;
};

template <class S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* who) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace clearsky
