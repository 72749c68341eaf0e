#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tkc/error.hpp"

namespace tkc {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// N-dimensional real array stored row-major (last index varies fastest).
class DenseTensor {
public:
    DenseTensor() = default;
    explicit DenseTensor(Shape shape);
    DenseTensor(Shape shape, std::vector<double> data);

    static DenseTensor zeros(Shape shape) { return DenseTensor(std::move(shape)); }
    static DenseTensor filled(Shape shape, double value);

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
    [[nodiscard]] std::span<double> data() noexcept { return data_; }
    [[nodiscard]] const std::vector<double>& values() const noexcept { return data_; }

    [[nodiscard]] std::size_t offset(std::span<const std::size_t> index) const;
    [[nodiscard]] double at(std::span<const std::size_t> index) const { return data_[offset(index)]; }
    double& at(std::span<const std::size_t> index) { return data_[offset(index)]; }
    [[nodiscard]] double at(std::initializer_list<std::size_t> index) const {
        return at(std::span<const std::size_t>(index.begin(), index.size()));
    }
    double& at(std::initializer_list<std::size_t> index) {
        return at(std::span<const std::size_t>(index.begin(), index.size()));
    }

    double operator[](std::size_t flat) const { return data_[flat]; }
    double& operator[](std::size_t flat) { return data_[flat]; }

    [[nodiscard]] DenseTensor reshaped(Shape shape) const;

    bool operator==(const DenseTensor& other) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Dense row-major matrix.
class Matrix {
public:
    using EigenMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using ConstEigenMap =
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);
    static Matrix from_eigen(const Eigen::MatrixXd& m);

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
    [[nodiscard]] std::span<double> data() noexcept { return data_; }

    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

    [[nodiscard]] ConstEigenMap eigen() const;
    [[nodiscard]] EigenMap eigen();

    [[nodiscard]] Matrix transposed() const;

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator*(const Matrix& a, const Matrix& b);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& m);

DenseTensor operator+(const DenseTensor& a, const DenseTensor& b);
DenseTensor operator-(const DenseTensor& a, const DenseTensor& b);
DenseTensor operator*(double s, const DenseTensor& t);

/// Mode-n matricization (1-based mode) in Kolda-Bader ordering: rows index
/// the chosen mode, columns run over the remaining modes with the earliest
/// remaining mode varying fastest.
Matrix unfold(const DenseTensor& t, std::size_t mode);

/// Inverse of unfold.
DenseTensor fold(const Matrix& m, std::size_t mode, const Shape& shape);

/// t x_mode u: contracts dimension `mode` (1-based) of t with the columns of u.
DenseTensor mode_product(const DenseTensor& t, const Matrix& u, std::size_t mode);

double frobenius_norm(std::span<const double> values);
inline double frobenius_norm(const DenseTensor& t) { return frobenius_norm(t.data()); }
inline double frobenius_norm(const Matrix& m) { return frobenius_norm(m.data()); }

double max_abs_diff(const DenseTensor& a, const DenseTensor& b);
/// ||a - b|| / ||b||, or ||a - b|| when b is zero.
double relative_error(const DenseTensor& a, const DenseTensor& b);

/// Seeded generator whose streams are identical across platforms
/// (std::normal_distribution is implementation-defined, so Box-Muller is done here).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform();  // [0, 1)
    double normal();
    std::size_t index(std::size_t n);  // [0, n)

    DenseTensor normal_tensor(Shape shape, double stddev = 1.0);
    Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev = 1.0);
    /// rows x cols with orthonormal columns (rows >= cols).
    Matrix orthonormal_columns(std::size_t rows, std::size_t cols);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace tkc
