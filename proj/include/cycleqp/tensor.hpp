#ifndef CYCLEQP_TENSOR_HPP
#define CYCLEQP_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cycleqp {

/// Thrown when a computation produces or receives non-finite values.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense row-major tensor. Rank-4 (N, C, H, W) is the common case but any
/// rank works; scalars are shape {1}.
template <class T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<long> shape, T fill = T(0))
        : shape_(std::move(shape)),
          data_(checked_numel(shape_), fill) {}

    static Tensor scalar(T v) {
        Tensor t({1});
        t.data_[0] = v;
        return t;
    }

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    const std::vector<long>& shape() const { return shape_; }
    long dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    long numel() const { return static_cast<long>(data_.size()); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](long i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](long i) const { return data_[static_cast<std::size_t>(i)]; }

    // rank-4 accessors
    T& at(long n, long c, long h, long w) {
        return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    const T& at(long n, long c, long h, long w) const {
        return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    T item() const {
        if (numel() != 1) throw std::invalid_argument("Tensor::item: tensor is not a scalar");
        return data_[0];
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '(';
        for (std::size_t i = 0; i < shape_.size(); ++i)
            os << shape_[i] << (i + 1 < shape_.size() ? ", " : "");
        os << ')';
        return os.str();
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (long i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
        return out;
    }

private:
    static std::size_t checked_numel(const std::vector<long>& shape) {
        if (shape.empty()) throw std::invalid_argument("Tensor: empty shape");
        std::size_t n = 1;
        for (long d : shape) {
            if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::vector<long> shape_;
    std::vector<T> data_;
};

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* where) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(where) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace cycleqp

#endif
