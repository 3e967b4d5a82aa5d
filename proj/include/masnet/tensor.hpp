#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace masnet {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Counter-based deterministic generator (splitmix64 mixer). Identical seed +
// call sequence yields identical streams on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::size_t uniform_index(std::size_t n) {
        // counts are tiny here; modulo bias is irrelevant next to determinism
        return n ? std::size_t(next_u64() % n) : 0;
    }

    bool coin() { return (next_u64() & 1u) != 0; }

    // Derived independent stream, e.g. one per subsystem off a root seed.
    Rng split(std::string_view tag) const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (char c : tag) {
            h ^= std::uint64_t(static_cast<unsigned char>(c));
            h *= 0x100000001b3ULL;
        }
        Rng child(state_ ^ h);
        child.next_u64();
        return child;
    }

private:
    std::uint64_t state_;
};

template <typename T>
class TensorT;
template <typename T>
class NoGradT;

// Ordered record of the backward closures of every recorded primitive, in
// execution order. Thread-confined: constructing a tape makes it active on
// this thread until it goes out of scope.
template <typename T>
class TapeT {
public:
    TapeT() : prev_(active_) { active_ = this; }
    ~TapeT() { active_ = prev_; }
    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    static TapeT* active() { return active_; }

    void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }

    std::size_t size() const { return entries_.size(); }

    // Backward from a scalar loss; one reverse traversal populates grad for
    // every requires_grad tensor reachable from it.
    void backward(TensorT<T>& loss) {
        if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
        loss.grad()[0] = T(1);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    }

private:
    friend class NoGradT<T>;
    std::vector<std::function<void()>> entries_;
    TapeT* prev_;
    static thread_local TapeT* active_;
};

template <typename T>
thread_local TapeT<T>* TapeT<T>::active_ = nullptr;

// Suspends recording on this thread for its lifetime.
template <typename T>
class NoGradT {
public:
    NoGradT() : saved_(TapeT<T>::active_) { TapeT<T>::active_ = nullptr; }
    ~NoGradT() { TapeT<T>::active_ = saved_; }
    NoGradT(const NoGradT&) = delete;
    NoGradT& operator=(const NoGradT&) = delete;

private:
    TapeT<T>* saved_;
};

// Dense n-d array over T. Copying a handle shares storage, so gradient
// accumulation through the tape is visible to every holder.
template <typename T>
class TensorT {
    struct Data {
        Shape shape;
        std::vector<T> values;
        std::vector<T> grad;     // empty until first accumulation
        bool requires_grad = false;
    };

public:
    using Scalar = T;

    TensorT() = default;

    static TensorT zeros(Shape shape) {
        TensorT t;
        t.d_ = std::make_shared<Data>();
        t.d_->values.assign(numel(shape), T(0));
        t.d_->shape = std::move(shape);
        return t;
    }

    static TensorT full(Shape shape, T v) {
        TensorT t = zeros(std::move(shape));
        std::fill(t.d_->values.begin(), t.d_->values.end(), v);
        return t;
    }

    static TensorT from(Shape shape, std::vector<T> values) {
        if (numel(shape) != values.size())
            throw std::invalid_argument("tensor: " + shape_str(shape) + " does not hold " +
                                        std::to_string(values.size()) + " values");
        for (T v : values)
            if (!std::isfinite(double(v))) throw std::invalid_argument("tensor: non-finite value");
        TensorT t;
        t.d_ = std::make_shared<Data>();
        t.d_->shape = std::move(shape);
        t.d_->values = std::move(values);
        return t;
    }

    static TensorT scalar(T v) { return from({1}, {v}); }

    // Uniform in [lo, hi); draw order is flat row-major, fixed forever.
    static TensorT uniform(Shape shape, T lo, T hi, Rng& rng) {
        TensorT t = zeros(std::move(shape));
        for (T& v : t.d_->values) v = T(rng.uniform(double(lo), double(hi)));
        return t;
    }

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const { return d_->shape; }
    std::size_t size() const { return d_->values.size(); }
    std::size_t ndim() const { return d_->shape.size(); }

    std::vector<T>& values() { return d_->values; }
    const std::vector<T>& values() const { return d_->values; }
    T* data() { return d_->values.data(); }
    const T* data() const { return d_->values.data(); }

    T item() const {
        if (size() != 1) throw std::invalid_argument("item: tensor is not scalar");
        return d_->values[0];
    }

    bool requires_grad() const { return d_ && d_->requires_grad; }
    TensorT& set_requires_grad(bool on = true) {
        d_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return d_ && !d_->grad.empty(); }

    std::vector<T>& grad() {
        if (d_->grad.empty()) d_->grad.assign(d_->values.size(), T(0));
        return d_->grad;
    }

    void zero_grad() {
        if (d_) d_->grad.assign(d_->values.size(), T(0));
    }

    bool all_finite() const {
        for (T v : d_->values)
            if (!std::isfinite(double(v))) return false;
        return true;
    }

    // Identity of the underlying storage; copies of a handle share it.
    const void* id() const { return d_.get(); }

    TensorT clone() const {
        TensorT t;
        t.d_ = std::make_shared<Data>(*d_);
        return t;
    }

private:
    std::shared_ptr<Data> d_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;
using Tape = TapeT<float>;
using Tape64 = TapeT<double>;
using NoGrad = NoGradT<float>;

}  // namespace masnet
