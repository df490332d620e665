#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace tdaa {

// Error taxonomy used across the project.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ValueError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Dense n-d array, row-major. float for training, double for the gradient
// check mode; both instantiations share all op code.
template <typename T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;

    TensorT() = default;

    explicit TensorT(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(checked_numel(shape)), T(0));
    }

    TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (checked_numel(shape) != static_cast<int64_t>(data.size()))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }

    static TensorT zeros(std::vector<int> s) { return TensorT(std::move(s)); }

    static TensorT full(std::vector<int> s, T v) {
        TensorT t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static TensorT scalar(T v) { return TensorT({1}, {v}); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }

    int dim(int i) const {
        if (i < 0 || i >= ndim())
            throw ShapeError("axis " + std::to_string(i) + " out of range for " + shape_str(shape));
        return shape[static_cast<size_t>(i)];
    }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.reserve(data.size());
        for (T v : data) out.data.push_back(static_cast<U>(v));
        return out;
    }

  private:
    static int64_t checked_numel(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
            n *= d;
        }
        return n;
    }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename T>
void check_finite(const TensorT<T>& t, const char* what) {
    if (!t.all_finite())
        throw ValueError(std::string(what) + ": tensor contains NaN or Inf");
}

}  // namespace tdaa
