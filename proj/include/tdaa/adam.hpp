#pragma once

#include <cmath>
#include <vector>

#include "tdaa/tensor.hpp"

namespace tdaa {

// Adam with bias correction. One state instance covers an ordered list of
// parameter tensors; moments are allocated lazily to match them.
template <typename T>
struct AdamStateT {
    T lr = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    int64_t step = 0;
    std::vector<TensorT<T>> m, v;

    AdamStateT() = default;
    explicit AdamStateT(T lr_) : lr(lr_) {}
};

template <typename T>
void adam_step(std::vector<TensorT<T>*> params, const std::vector<const TensorT<T>*>& grads,
               AdamStateT<T>& st) {
    if (params.size() != grads.size())
        throw ShapeError("adam_step: " + std::to_string(params.size()) + " params vs " +
                         std::to_string(grads.size()) + " grads");
    if (st.m.empty()) {
        for (auto* p : params) {
            st.m.push_back(TensorT<T>::zeros(p->shape));
            st.v.push_back(TensorT<T>::zeros(p->shape));
        }
    }
    if (st.m.size() != params.size())
        throw ShapeError("adam_step: state was initialized for a different parameter list");
    for (size_t i = 0; i < params.size(); ++i) {
        if (!params[i]->same_shape(*grads[i]))
            throw ShapeError("adam_step: param " + std::to_string(i) + " shape " +
                             shape_str(params[i]->shape) + " vs grad " +
                             shape_str(grads[i]->shape));
        if (!params[i]->same_shape(st.m[i]))
            throw ShapeError("adam_step: param " + std::to_string(i) +
                             " does not match its moment tensors");
        check_finite(*grads[i], "adam_step gradient");
    }
    ++st.step;
    const T bc1 = T(1) - std::pow(st.beta1, static_cast<T>(st.step));
    const T bc2 = T(1) - std::pow(st.beta2, static_cast<T>(st.step));
    for (size_t i = 0; i < params.size(); ++i) {
        T* p = params[i]->data.data();
        const T* gr = grads[i]->data.data();
        T* m = st.m[i].data.data();
        T* v = st.v[i].data.data();
        const size_t n = params[i]->data.size();
        for (size_t j = 0; j < n; ++j) {
            m[j] = st.beta1 * m[j] + (T(1) - st.beta1) * gr[j];
            v[j] = st.beta2 * v[j] + (T(1) - st.beta2) * gr[j] * gr[j];
            const T mhat = m[j] / bc1;
            const T vhat = v[j] / bc2;
            p[j] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

// Single-tensor convenience overload.
template <typename T>
void adam_step(TensorT<T>& param, const TensorT<T>& grad, AdamStateT<T>& st) {
    adam_step<T>({&param}, {&grad}, st);
}

using AdamState = AdamStateT<float>;

}  // namespace tdaa
