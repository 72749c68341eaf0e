#pragma once

#include <cstddef>

#include "tkc/tensor.hpp"

namespace tkc {

/// Two-mode Tucker factorization of a J_in x J_out x D x D kernel:
///   kernel ~= core x1 factor_in x2 factor_out^T
/// core is I x O x D x D, factor_in is J_in x I with orthonormal columns,
/// factor_out is O x J_out with orthonormal rows.
struct TuckerFactors {
    DenseTensor core;
    Matrix factor_in;
    Matrix factor_out;

    [[nodiscard]] std::size_t rank_in() const { return core.dim(0); }
    [[nodiscard]] std::size_t rank_out() const { return core.dim(1); }
    [[nodiscard]] std::size_t in_channels() const { return factor_in.rows(); }
    [[nodiscard]] std::size_t out_channels() const { return factor_out.cols(); }
    [[nodiscard]] std::size_t kernel_size() const { return core.dim(2); }

    bool operator==(const TuckerFactors&) const = default;
};

struct TuckerOptions {
    std::size_t refine_iters = 3;  // HOOI sweeps after the HOSVD start; 0 = plain HOSVD
    double tol = 1e-6;             // stop when the relative error improvement drops below this
};

/// Truncated left singular vectors of m, sign-fixed so that the largest-magnitude
/// entry of every vector is positive. Returns rows x count.
Matrix leading_left_singular_vectors(const Matrix& m, std::size_t count);

/// Singular values of m in descending order.
std::vector<double> singular_values(const Matrix& m);

TuckerFactors tucker_decompose(const DenseTensor& kernel, std::size_t rank_in, std::size_t rank_out,
                               const TuckerOptions& options = {});

DenseTensor reconstruct(const TuckerFactors& f);

/// ||kernel - reconstruct(f)|| / ||kernel||; 0 when both are zero.
double reconstruction_error(const DenseTensor& kernel, const TuckerFactors& f);

/// max |factor_in^T factor_in - I| and max |factor_out factor_out^T - I|, whichever is larger.
double orthonormality_defect(const TuckerFactors& f);

}  // namespace tkc
