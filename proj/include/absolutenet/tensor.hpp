#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace absnet {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_size(const Shape& s) {
    std::int64_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << ')';
    return os.str();
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

/// Dense row-major tensor over a scalar type. Rank 0 is a scalar holding one
/// value. Tensors are plain values: once handed to a tape they are treated as
/// immutable, and every operation produces a fresh one.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        data_.assign(checked_size(shape_), T{});
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (checked_size(shape_) != static_cast<std::int64_t>(data_.size()))
            throw std::invalid_argument("tensor: shape " + shape_str(shape_) + " does not match " +
                                        std::to_string(data_.size()) + " values");
    }

    static Tensor full(Shape shape, T v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor ones(Shape shape) { return full(std::move(shape), T{1}); }
    static Tensor scalar(T v) { return Tensor({}, {v}); }

    const Shape& shape() const { return shape_; }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    std::int64_t extent(std::int64_t axis) const { return shape_.at(static_cast<std::size_t>(axis)); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    /// Row-major multi-index access; rank-checked.
    T& at(std::initializer_list<std::int64_t> idx) { return data_[flat_index(idx)]; }
    const T& at(std::initializer_list<std::int64_t> idx) const { return data_[flat_index(idx)]; }

    /// Same data, new shape (sizes must agree). -1 in at most one slot infers
    /// the extent.
    Tensor reshaped(Shape shape) const {
        std::int64_t known = 1, infer = -1;
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (shape[i] == -1) {
                if (infer >= 0) throw std::invalid_argument("reshape: more than one -1 extent");
                infer = static_cast<std::int64_t>(i);
            } else {
                known *= shape[i];
            }
        }
        if (infer >= 0) {
            if (known == 0 || size() % known != 0)
                throw std::invalid_argument("reshape: cannot infer extent for " + shape_str(shape));
            shape[static_cast<std::size_t>(infer)] = size() / known;
        }
        if (shape_size(shape) != size())
            throw std::invalid_argument("reshape: " + shape_str(shape_) + " -> " + shape_str(shape) +
                                        " changes element count");
        return Tensor(std::move(shape), data_);
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(out));
    }

    void fill(T v) {
        for (auto& x : data_) x = v;
    }

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

private:
    static std::int64_t checked_size(const Shape& s) {
        std::int64_t n = 1;
        for (auto e : s) {
            if (e < 1) throw std::invalid_argument("tensor: extent < 1 in " + shape_str(s));
            n *= e;
        }
        return n;
    }

    std::size_t flat_index(std::initializer_list<std::int64_t> idx) const {
        if (static_cast<std::int64_t>(idx.size()) != rank())
            throw std::invalid_argument("tensor: index rank mismatch");
        std::int64_t flat = 0;
        std::size_t d = 0;
        for (auto i : idx) {
            flat = flat * shape_[d] + i;
            ++d;
        }
        return static_cast<std::size_t>(flat);
    }

    Shape shape_;
    std::vector<T> data_;
};

}  // namespace absnet
