#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rwa {

/// Dense row-major matrix. Vectors are 1×n or n×1 matrices.
template <class T>
struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}
    Tensor(std::size_t r, std::size_t c, std::vector<T> values) : rows(r), cols(c), data(std::move(values)) {
        if (data.size() != r * c) throw std::invalid_argument("Tensor: value count does not match shape");
    }
    Tensor(std::initializer_list<std::initializer_list<T>> init) {
        rows = init.size();
        cols = rows ? init.begin()->size() : 0;
        data.reserve(rows * cols);
        for (const auto& row : init) {
            if (row.size() != cols) throw std::invalid_argument("Tensor: ragged initializer");
            data.insert(data.end(), row.begin(), row.end());
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return data.size(); }
    [[nodiscard]] bool empty() const noexcept { return data.empty(); }

    T& operator()(std::size_t r, std::size_t c) noexcept { return data[r * cols + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data[r * cols + c]; }

    std::span<T> row(std::size_t r) noexcept { return {data.data() + r * cols, cols}; }
    std::span<const T> row(std::size_t r) const noexcept { return {data.data() + r * cols, cols}; }

    [[nodiscard]] bool same_shape(const Tensor& o) const noexcept { return rows == o.rows && cols == o.cols; }

    template <class U>
    [[nodiscard]] Tensor<U> cast() const {
        Tensor<U> out(rows, cols);
        std::transform(data.begin(), data.end(), out.data.begin(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

template <class T>
[[nodiscard]] std::string shape_string(const Tensor<T>& t) {
    return "[" + std::to_string(t.rows) + "x" + std::to_string(t.cols) + "]";
}

template <class T>
[[nodiscard]] bool all_finite(const Tensor<T>& t) {
    return std::all_of(t.data.begin(), t.data.end(), [](T v) { return std::isfinite(v); });
}

template <class T>
[[nodiscard]] T dot(std::span<const T> a, std::span<const T> b) {
    T acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

template <class T>
[[nodiscard]] T norm2(std::span<const T> a) {
    return std::sqrt(dot(a, a));
}

/// Cosine similarity with the convention cos(x, 0) = 0.
template <class T>
[[nodiscard]] T cosine(std::span<const T> a, std::span<const T> b) {
    const T na = norm2(a);
    const T nb = norm2(b);
    if (na == T(0) || nb == T(0)) return T(0);
    return dot(a, b) / (na * nb);
}

/// Rows scaled to unit length; zero rows stay zero.
template <class T>
[[nodiscard]] Tensor<T> unit_rows(Tensor<T> x) {
    for (std::size_t i = 0; i < x.rows; ++i) {
        const T n = norm2<T>(x.row(i));
        if (n == T(0)) continue;
        for (auto& v : x.row(i)) v /= n;
    }
    return x;
}

/// C = A·B
template <class T>
[[nodiscard]] Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimension mismatch " + shape_string(a) + " * " + shape_string(b));
    Tensor<T> c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        T* crow = c.data.data() + i * c.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const T aik = a(i, k);
            if (aik == T(0)) continue;
            const T* brow = b.data.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

/// C = A·Bᵀ
template <class T>
[[nodiscard]] Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: inner dimension mismatch " + shape_string(a) + " * " + shape_string(b) + "^T");
    Tensor<T> c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.rows; ++j) c(i, j) = dot(a.row(i), b.row(j));
    return c;
}

/// C = Aᵀ·B
template <class T>
[[nodiscard]] Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rows != b.rows) throw std::invalid_argument("matmul_tn: inner dimension mismatch " + shape_string(a) + "^T * " + shape_string(b));
    Tensor<T> c(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const T* brow = b.data.data() + k * b.cols;
        for (std::size_t i = 0; i < a.cols; ++i) {
            const T aki = a(k, i);
            if (aki == T(0)) continue;
            T* crow = c.data.data() + i * c.cols;
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
        }
    }
    return c;
}

template <class T>
[[nodiscard]] Tensor<T> transpose(const Tensor<T>& a) {
    Tensor<T> t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

/// Truncated normal (resampled beyond two standard deviations).
template <class T, class Rng>
void fill_truncated_normal(Tensor<T>& t, Rng& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : t.data) {
        double x = dist(rng);
        while (std::abs(x) > 2.0) x = dist(rng);
        v = static_cast<T>(x * stddev);
    }
}

template <class T, class Rng>
[[nodiscard]] Tensor<T> random_normal(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0) {
    Tensor<T> t(rows, cols);
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.data) v = static_cast<T>(dist(rng));
    return t;
}

/// Rows drawn uniformly from the unit sphere.
template <class T, class Rng>
[[nodiscard]] Tensor<T> random_unit_rows(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor<T> t = random_normal<T>(rows, cols, rng);
    for (std::size_t r = 0; r < rows; ++r) {
        const T n = norm2<T>(t.row(r));
        for (auto& v : t.row(r)) v /= n;
    }
    return t;
}

}  // namespace rwa
