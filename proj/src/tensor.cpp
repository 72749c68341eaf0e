#include "tkc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>

#include <Eigen/QR>

namespace tkc {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s.empty() ? "scalar" : s;
}

namespace {

void check_shape(const Shape& shape) {
    for (auto d : shape) {
        require(d >= 1, ErrorCode::InvalidArgument,
                "tensor dimensions must be >= 1, got " + shape_string(shape));
    }
}

void check_same_shape(const DenseTensor& a, const DenseTensor& b, const char* what) {
    require(a.shape() == b.shape(), ErrorCode::InvalidArgument,
            std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                shape_string(b.shape()));
}

}  // namespace

DenseTensor::DenseTensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_size(shape_), 0.0);
}

DenseTensor::DenseTensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    require(shape_size(shape_) == data_.size(), ErrorCode::InvalidArgument,
            "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                shape_string(shape_));
}

DenseTensor DenseTensor::filled(Shape shape, double value) {
    DenseTensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

std::size_t DenseTensor::offset(std::span<const std::size_t> index) const {
    require(index.size() == shape_.size(), ErrorCode::InvalidArgument,
            "index rank does not match tensor rank");
    std::size_t off = 0;
    for (std::size_t k = 0; k < shape_.size(); ++k) {
        require(index[k] < shape_[k], ErrorCode::InvalidArgument, "tensor index out of range");
        off = off * shape_[k] + index[k];
    }
    return off;
}

DenseTensor DenseTensor::reshaped(Shape shape) const {
    return DenseTensor(std::move(shape), data_);
}

Matrix::Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {
    require(rows >= 1 && cols >= 1, ErrorCode::InvalidArgument, "matrix dimensions must be >= 1");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(rows >= 1 && cols >= 1, ErrorCode::InvalidArgument, "matrix dimensions must be >= 1");
    require(rows * cols == data_.size(), ErrorCode::InvalidArgument,
            "matrix data length does not match " + std::to_string(rows) + "x" + std::to_string(cols));
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_eigen(const Eigen::MatrixXd& m) {
    Matrix out(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
    out.eigen() = m;
    return out;
}

Matrix::ConstEigenMap Matrix::eigen() const {
    return ConstEigenMap(data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_));
}

Matrix::EigenMap Matrix::eigen() {
    return EigenMap(data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_));
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

Matrix operator*(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), ErrorCode::InvalidArgument, "matrix product dimension mismatch");
    Matrix out(a.rows(), b.cols());
    out.eigen().noalias() = a.eigen() * b.eigen();
    return out;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::InvalidArgument,
            "matrix sum dimension mismatch");
    Matrix out = a;
    out.eigen() += b.eigen();
    return out;
}

Matrix operator*(double s, const Matrix& m) {
    Matrix out = m;
    out.eigen() *= s;
    return out;
}

DenseTensor operator+(const DenseTensor& a, const DenseTensor& b) {
    check_same_shape(a, b, "tensor sum");
    DenseTensor out = a;
    auto d = out.data();
    auto s = b.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
    return out;
}

DenseTensor operator-(const DenseTensor& a, const DenseTensor& b) {
    check_same_shape(a, b, "tensor difference");
    DenseTensor out = a;
    auto d = out.data();
    auto s = b.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= s[i];
    return out;
}

DenseTensor operator*(double s, const DenseTensor& t) {
    DenseTensor out = t;
    for (auto& v : out.data()) v *= s;
    return out;
}

Matrix unfold(const DenseTensor& t, std::size_t mode) {
    const auto& shape = t.shape();
    require(mode >= 1 && mode <= shape.size(), ErrorCode::InvalidArgument,
            "unfold: mode " + std::to_string(mode) + " out of range for rank " +
                std::to_string(shape.size()));
    const std::size_t axis = mode - 1;
    const std::size_t rows = shape[axis];
    const std::size_t cols = t.size() / rows;

    // Column stride of each remaining mode (earliest remaining mode fastest).
    std::vector<std::size_t> col_stride(shape.size(), 0);
    std::size_t stride = 1;
    for (std::size_t k = 0; k < shape.size(); ++k) {
        if (k == axis) continue;
        col_stride[k] = stride;
        stride *= shape[k];
    }

    Matrix m(rows, cols);
    std::vector<std::size_t> index(shape.size(), 0);
    for (std::size_t flat = 0; flat < t.size(); ++flat) {
        std::size_t col = 0;
        for (std::size_t k = 0; k < shape.size(); ++k) col += index[k] * col_stride[k];
        m(index[axis], col) = t[flat];
        for (std::size_t k = shape.size(); k-- > 0;) {
            if (++index[k] < shape[k]) break;
            index[k] = 0;
        }
    }
    return m;
}

DenseTensor fold(const Matrix& m, std::size_t mode, const Shape& shape) {
    require(mode >= 1 && mode <= shape.size(), ErrorCode::InvalidArgument,
            "fold: mode " + std::to_string(mode) + " out of range for rank " + std::to_string(shape.size()));
    const std::size_t axis = mode - 1;
    DenseTensor t(shape);
    require(m.rows() == shape[axis] && m.rows() * m.cols() == t.size(), ErrorCode::InvalidArgument,
            "fold: matrix " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                " inconsistent with shape " + shape_string(shape) + " at mode " + std::to_string(mode));

    std::vector<std::size_t> col_stride(shape.size(), 0);
    std::size_t stride = 1;
    for (std::size_t k = 0; k < shape.size(); ++k) {
        if (k == axis) continue;
        col_stride[k] = stride;
        stride *= shape[k];
    }

    std::vector<std::size_t> index(shape.size(), 0);
    for (std::size_t flat = 0; flat < t.size(); ++flat) {
        std::size_t col = 0;
        for (std::size_t k = 0; k < shape.size(); ++k) col += index[k] * col_stride[k];
        t[flat] = m(index[axis], col);
        for (std::size_t k = shape.size(); k-- > 0;) {
            if (++index[k] < shape[k]) break;
            index[k] = 0;
        }
    }
    return t;
}

DenseTensor mode_product(const DenseTensor& t, const Matrix& u, std::size_t mode) {
    const auto& shape = t.shape();
    require(mode >= 1 && mode <= shape.size(), ErrorCode::InvalidArgument,
            "mode_product: mode " + std::to_string(mode) + " out of range");
    const std::size_t axis = mode - 1;
    require(u.cols() == shape[axis], ErrorCode::InvalidArgument,
            "mode_product: matrix has " + std::to_string(u.cols()) + " columns but mode " +
                std::to_string(mode) + " has size " + std::to_string(shape[axis]));

    std::size_t outer = 1;
    for (std::size_t k = 0; k < axis; ++k) outer *= shape[k];
    std::size_t inner = 1;
    for (std::size_t k = axis + 1; k < shape.size(); ++k) inner *= shape[k];
    const std::size_t n = shape[axis];
    const std::size_t j = u.rows();

    Shape out_shape = shape;
    out_shape[axis] = j;
    DenseTensor out(out_shape);

    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const auto ue = u.eigen();
    for (std::size_t o = 0; o < outer; ++o) {
        Eigen::Map<const RowMat> src(t.data().data() + o * n * inner, static_cast<Eigen::Index>(n),
                                     static_cast<Eigen::Index>(inner));
        Eigen::Map<RowMat> dst(out.data().data() + o * j * inner, static_cast<Eigen::Index>(j),
                               static_cast<Eigen::Index>(inner));
        dst.noalias() = ue * src;
    }
    return out;
}

double frobenius_norm(std::span<const double> values) {
    // Scaled accumulation avoids overflow for large entries.
    double scale = 0.0;
    double ssq = 1.0;
    for (double v : values) {
        if (v == 0.0) continue;
        const double a = std::abs(v);
        if (scale < a) {
            ssq = 1.0 + ssq * (scale / a) * (scale / a);
            scale = a;
        } else {
            ssq += (a / scale) * (a / scale);
        }
    }
    return scale * std::sqrt(ssq);
}

double max_abs_diff(const DenseTensor& a, const DenseTensor& b) {
    check_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double relative_error(const DenseTensor& a, const DenseTensor& b) {
    const double diff = frobenius_norm(a - b);
    const double ref = frobenius_norm(b);
    return ref > 0.0 ? diff / ref : diff;
}

double Rng::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

std::size_t Rng::index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

DenseTensor Rng::normal_tensor(Shape shape, double stddev) {
    DenseTensor t(std::move(shape));
    for (auto& v : t.data()) v = stddev * normal();
    return t;
}

Matrix Rng::normal_matrix(std::size_t rows, std::size_t cols, double stddev) {
    Matrix m(rows, cols);
    for (auto& v : m.data()) v = stddev * normal();
    return m;
}

Matrix Rng::orthonormal_columns(std::size_t rows, std::size_t cols) {
    require(rows >= cols, ErrorCode::InvalidArgument, "orthonormal_columns needs rows >= cols");
    const Matrix g = normal_matrix(rows, cols);
    Eigen::MatrixXd a = g.eigen();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), a.cols());
    return Matrix::from_eigen(q);
}

}  // namespace tkc
