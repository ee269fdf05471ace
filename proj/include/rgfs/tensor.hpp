#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace rgfs {

/// 64-byte-aligned allocator for numeric buffers. SIMD kernels (notably
/// Eigen's) pick their prologue/epilogue split from the buffer address, so
/// fixing the alignment keeps floating-point reductions bit-reproducible
/// across processes regardless of unrelated heap history.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::size_t alignment = 64;

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{alignment}));
    }
    void deallocate(T* p, std::size_t n) noexcept {
        ::operator delete(p, n * sizeof(T), std::align_val_t{alignment});
    }

    template <typename U>
    struct rebind {
        using other = AlignedAllocator<U>;
    };
    friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
    friend bool operator!=(const AlignedAllocator&, const AlignedAllocator&) { return false; }
};

using AlignedVector = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major tensor of doubles. Shapes are small integer vectors;
/// rank-3 image/feature tensors use (channels, height, width) order.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) { resize(std::move(shape)); }

    Tensor(std::initializer_list<int> shape) { resize(std::vector<int>(shape)); }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    /// Reshape, reallocating only when the element count changes.
    void resize(std::vector<int> shape) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
            n *= static_cast<std::size_t>(d);
        }
        shape_ = std::move(shape);
        data_.assign(n, 0.0);
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    /// Rank-3 accessors, (c, y, x) into a (C, H, W) tensor.
    double& at(int c, int y, int x) {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }
    double at(int c, int y, int x) const {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }

    /// Rank-2 accessors, (r, c).
    double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
    double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    void zero() { fill(0.0); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const;

    std::string shape_string() const;

private:
    std::vector<int> shape_;
    AlignedVector data_;
};

inline std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

}  // namespace rgfs
