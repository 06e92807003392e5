#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace heartbert {

// Dense row-major tensor. Storage plus indexing only; the math lives in the
// model translation units.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<size_t> shape) : shape_(std::move(shape)) {
        size_t n = 1;
        for (size_t d : shape_) n *= d;
        data_.assign(n, T{});
    }

    const std::vector<size_t>& shape() const { return shape_; }
    size_t ndim() const { return shape_.size(); }
    size_t dim(size_t i) const { return shape_[i]; }
    size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](size_t i) { return data_[i]; }
    const T& operator[](size_t i) const { return data_[i]; }

    T& at(size_t i, size_t j) { return data_[i * shape_[1] + j]; }
    const T& at(size_t i, size_t j) const { return data_[i * shape_[1] + j]; }

    void fill(T value) { data_.assign(data_.size(), value); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

private:
    std::vector<size_t> shape_;
    std::vector<T> data_;
};

}  // namespace heartbert
