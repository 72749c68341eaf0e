#include "tkc/tucker.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

namespace tkc {

namespace {

Eigen::BDCSVD<Eigen::MatrixXd> compute_svd(const Matrix& m, unsigned options) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(m.eigen()), options);
    if (svd.info() != Eigen::Success) {
        raise(ErrorCode::Numerical, "SVD of a " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                                        " matrix did not converge");
    }
    return svd;
}

void fix_signs(Eigen::MatrixXd& u) {
    for (Eigen::Index c = 0; c < u.cols(); ++c) {
        Eigen::Index best = 0;
        double best_abs = -1.0;
        for (Eigen::Index r = 0; r < u.rows(); ++r) {
            const double a = std::abs(u(r, c));
            if (a > best_abs) {
                best_abs = a;
                best = r;
            }
        }
        if (u(best, c) < 0.0) u.col(c) *= -1.0;
    }
}

void check_ranks(const DenseTensor& kernel, std::size_t rank_in, std::size_t rank_out) {
    require(kernel.rank() == 4, ErrorCode::InvalidArgument,
            "tucker_decompose expects a 4-D kernel, got " + shape_string(kernel.shape()));
    require(rank_in >= 1 && rank_in <= kernel.dim(0), ErrorCode::InvalidArgument,
            "rank_in " + std::to_string(rank_in) + " outside [1, " + std::to_string(kernel.dim(0)) + "]");
    require(rank_out >= 1 && rank_out <= kernel.dim(1), ErrorCode::InvalidArgument,
            "rank_out " + std::to_string(rank_out) + " outside [1, " + std::to_string(kernel.dim(1)) + "]");
}

}  // namespace

Matrix leading_left_singular_vectors(const Matrix& m, std::size_t count) {
    require(count >= 1 && count <= m.rows(), ErrorCode::InvalidArgument,
            "requested " + std::to_string(count) + " singular vectors of a matrix with " +
                std::to_string(m.rows()) + " rows");
    auto svd = compute_svd(m, Eigen::ComputeFullU);
    Eigen::MatrixXd u = svd.matrixU().leftCols(static_cast<Eigen::Index>(count));
    fix_signs(u);
    return Matrix::from_eigen(u);
}

std::vector<double> singular_values(const Matrix& m) {
    auto svd = compute_svd(m, 0);
    const auto& s = svd.singularValues();
    return {s.data(), s.data() + s.size()};
}

TuckerFactors tucker_decompose(const DenseTensor& kernel, std::size_t rank_in, std::size_t rank_out,
                               const TuckerOptions& options) {
    check_ranks(kernel, rank_in, rank_out);

    TuckerFactors best;
    best.factor_in = leading_left_singular_vectors(unfold(kernel, 1), rank_in);
    best.factor_out = leading_left_singular_vectors(unfold(kernel, 2), rank_out).transposed();
    best.core = mode_product(mode_product(kernel, best.factor_in.transposed(), 1), best.factor_out, 2);

    if (options.refine_iters == 0) return best;

    double best_error = reconstruction_error(kernel, best);
    for (std::size_t iter = 0; iter < options.refine_iters; ++iter) {
        if (best_error == 0.0) break;

        TuckerFactors next;
        const DenseTensor projected_out = mode_product(kernel, best.factor_out, 2);
        next.factor_in = leading_left_singular_vectors(unfold(projected_out, 1), rank_in);
        const DenseTensor projected_in = mode_product(kernel, next.factor_in.transposed(), 1);
        next.factor_out = leading_left_singular_vectors(unfold(projected_in, 2), rank_out).transposed();
        next.core = mode_product(projected_in, next.factor_out, 2);

        const double error = reconstruction_error(kernel, next);
        if (error > best_error) break;  // HOOI is monotone in exact arithmetic; keep the better iterate
        const double improvement = (best_error - error) / best_error;
        best = std::move(next);
        best_error = error;
        if (improvement < options.tol) break;
    }
    return best;
}

DenseTensor reconstruct(const TuckerFactors& f) {
    require(f.core.rank() == 4, ErrorCode::InvalidArgument, "Tucker core must be 4-D");
    require(f.factor_in.cols() == f.core.dim(0), ErrorCode::InvalidArgument,
            "factor_in has " + std::to_string(f.factor_in.cols()) + " columns but core mode 1 is " +
                std::to_string(f.core.dim(0)));
    require(f.factor_out.rows() == f.core.dim(1), ErrorCode::InvalidArgument,
            "factor_out has " + std::to_string(f.factor_out.rows()) + " rows but core mode 2 is " +
                std::to_string(f.core.dim(1)));
    return mode_product(mode_product(f.core, f.factor_in, 1), f.factor_out.transposed(), 2);
}

double reconstruction_error(const DenseTensor& kernel, const TuckerFactors& f) {
    const DenseTensor approx = reconstruct(f);
    require(approx.shape() == kernel.shape(), ErrorCode::InvalidArgument,
            "reconstruction shape " + shape_string(approx.shape()) + " differs from kernel " +
                shape_string(kernel.shape()));
    const double ref = frobenius_norm(kernel);
    const double diff = frobenius_norm(kernel - approx);
    if (ref == 0.0) {
        require(diff == 0.0, ErrorCode::DegenerateInput,
                "relative reconstruction error undefined: zero kernel with nonzero reconstruction");
        return 0.0;
    }
    return diff / ref;
}

double orthonormality_defect(const TuckerFactors& f) {
    const Eigen::MatrixXd gin = f.factor_in.eigen().transpose() * f.factor_in.eigen();
    const Eigen::MatrixXd gout = f.factor_out.eigen() * f.factor_out.eigen().transpose();
    const double din = (gin - Eigen::MatrixXd::Identity(gin.rows(), gin.cols())).cwiseAbs().maxCoeff();
    const double dout = (gout - Eigen::MatrixXd::Identity(gout.rows(), gout.cols())).cwiseAbs().maxCoeff();
    return std::max(din, dout);
}

}  // namespace tkc
