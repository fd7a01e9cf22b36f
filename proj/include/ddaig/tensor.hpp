#ifndef DDAIG_TENSOR_HPP
#define DDAIG_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddaig {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_volume(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major tensor. Image batches use NCHW, matrices (rows, cols).
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {}
    Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
        if (data_.size() != shape_volume(shape_)) {
            throw Error("tensor value count " + std::to_string(data_.size()) +
                        " does not match shape " + shape_string(shape_));
        }
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    void reshape(Shape shape) {
        if (shape_volume(shape) != data_.size()) {
            throw Error("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        }
        shape_ = std::move(shape);
    }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<T> data_;
};

template <class T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* what) {
    if (t.rank() != rank) {
        throw Error(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                    shape_string(t.shape()));
    }
}

/// Elementwise a += s * b.
template <class T>
void axpy(Tensor<T>& a, T s, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw Error("axpy shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += s * b[i];
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max<T>(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace ddaig

#endif
