#pragma once

// Dense complex-Hermitian semidefinite programs in standard form
//
//     minimize  Re Tr(C X)   subject to  Re Tr(A_i X) = b_i,  X >= 0,
//
// where X is partitioned into `blocks` x `blocks` square blocks and every A_i is a short sum of
// terms E_{row,col} (x) B. The solver is an infeasible primal-dual path-following method with the
// HKM search direction and Mehrotra's predictor-corrector; the Schur complement is assembled
// block-wise so its cost does not grow with the cube of the full dimension per constraint.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "cvqkd/common.hpp"

namespace cvqkd::keyrate {

/// E_{row,col} (x) block.
struct BlockTerm {
    int row = 0;
    int col = 0;
    CMatrix block;
};

struct SdpConstraint {
    std::vector<BlockTerm> terms;
    double target = 0.0;
};

struct BlockSdp {
    int blocks = 1;
    int block_size = 1;
    std::vector<SdpConstraint> constraints;

    int dim() const { return blocks * block_size; }
    int size() const { return static_cast<int>(constraints.size()); }

    /// Re Tr(A_i X).
    double apply(int i, const CMatrix& x) const {
        cplx acc{0.0, 0.0};
        const int b = block_size;
        for (const auto& t : constraints[i].terms)
            acc += t.block.cwiseProduct(x.block(t.col * b, t.row * b, b, b).transpose()).sum();
        return acc.real();
    }

    RVector apply(const CMatrix& x) const {
        RVector v(size());
        for (int i = 0; i < size(); ++i) v(i) = apply(i, x);
        return v;
    }

    /// sum_i y_i A_i, Hermitian.
    CMatrix adjoint(const RVector& y) const {
        CMatrix out = CMatrix::Zero(dim(), dim());
        const int b = block_size;
        for (int i = 0; i < size(); ++i) {
            if (y(i) == 0.0) continue;
            for (const auto& t : constraints[i].terms) out.block(t.row * b, t.col * b, b, b) += y(i) * t.block;
        }
        return out;
    }

    CMatrix dense(int i) const {
        RVector e = RVector::Zero(size());
        e(i) = 1.0;
        return adjoint(e);
    }

    RVector targets() const {
        RVector b(size());
        for (int i = 0; i < size(); ++i) b(i) = constraints[i].target;
        return b;
    }
};

enum class SdpStatus { optimal, infeasible, max_iterations, numerical_failure };

inline const char* to_string(SdpStatus s) {
    switch (s) {
        case SdpStatus::optimal: return "optimal";
        case SdpStatus::infeasible: return "infeasible";
        case SdpStatus::max_iterations: return "max_iterations";
        case SdpStatus::numerical_failure: return "numerical_failure";
    }
    return "unknown";
}

struct SdpOptions {
    double feasibility_tol = 1e-9;
    double gap_tol = 1e-8;
    // Accepted when progress stalls before the tight tolerances are met.
    double fallback_feasibility_tol = 1e-8;
    double fallback_gap_tol = 1e-7;
    int max_iterations = 80;
    double step_fraction = 0.95;
    // Upper bound on Tr X over the feasible set; turns the dual value into a certified bound.
    double trace_bound = 1.0;
};

struct SdpSolution {
    SdpStatus status = SdpStatus::numerical_failure;
    CMatrix x;
    RVector y;
    CMatrix z;
    double primal_value = 0.0;
    double dual_value = 0.0;
    // b^T y + trace_bound * min(0, lambda_min(C - A^* y)): a valid lower bound on the optimum
    // whenever Tr X <= trace_bound on the feasible set.
    double certified_lower = 0.0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    int iterations = 0;
};

namespace detail {

inline double min_eigenvalue(const CMatrix& h) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(h, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
}

/// Largest step a <= 1 keeping X + a dX positive definite, given the Cholesky factor of X.
inline double max_step(const Eigen::LLT<CMatrix>& chol, const CMatrix& dx) {
    const auto& l = chol.matrixL();
    CMatrix t = l.solve(dx);
    t = l.solve(t.adjoint().eval()).adjoint();
    const double lmin = min_eigenvalue(hermitian_part(t));
    if (lmin >= 0.0) return std::numeric_limits<double>::infinity();
    return -1.0 / lmin;
}

/// Schur complement M_ij = Re Tr(A_i X A_j W), assembled from b x b block products.
inline Eigen::MatrixXd schur_complement(const BlockSdp& sdp, const CMatrix& x, const CMatrix& w) {
    const int b = sdp.block_size;
    const int nb = sdp.blocks;
    struct TermRef {
        int constraint;
        int row;
        int col;
        std::vector<CMatrix> left;   // B X_{col, q}
        std::vector<CMatrix> right;  // B W_{col, q}
    };
    std::vector<TermRef> refs;
    for (int i = 0; i < sdp.size(); ++i) {
        for (const auto& t : sdp.constraints[i].terms) {
            TermRef r{i, t.row, t.col, {}, {}};
            r.left.reserve(nb);
            r.right.reserve(nb);
            for (int q = 0; q < nb; ++q) {
                r.left.push_back(t.block * x.block(t.col * b, q * b, b, b));
                r.right.push_back(t.block * w.block(t.col * b, q * b, b, b));
            }
            refs.push_back(std::move(r));
        }
    }
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(sdp.size(), sdp.size());
    // Individual terms are not Hermitian, so every ordered pair is needed; only the sum over a
    // constraint's terms gives a symmetric real part.
    for (const auto& ts : refs) {
        for (const auto& tt : refs) {
            // Tr(B_s X_{c_s r_t} B_t W_{c_t r_s})
            m(ts.constraint, tt.constraint) +=
                ts.left[tt.row].cwiseProduct(tt.right[ts.row].transpose()).sum().real();
        }
    }
    return 0.5 * (m + m.transpose());
}

}  // namespace detail

inline double certified_lower_bound(const BlockSdp& sdp, const CMatrix& cost, const RVector& y,
                                    double trace_bound) {
    const double lmin = detail::min_eigenvalue(hermitian_part(cost - sdp.adjoint(y)));
    return sdp.targets().dot(y) + trace_bound * std::min(0.0, lmin);
}

inline SdpSolution solve_sdp(const BlockSdp& sdp, const CMatrix& cost_in, const SdpOptions& opt = {}) {
    const int n = sdp.dim();
    const int m = sdp.size();
    const CMatrix cost = hermitian_part(cost_in);
    const RVector b = sdp.targets();
    const CMatrix eye = CMatrix::Identity(n, n);

    double max_a_norm = 0.0;
    double xi = std::max(10.0, std::sqrt(static_cast<double>(n)));
    for (int i = 0; i < m; ++i) {
        const double an = sdp.dense(i).norm();
        max_a_norm = std::max(max_a_norm, an);
        xi = std::max(xi, n * (1.0 + std::abs(b(i))) / (1.0 + an));
    }
    const double zeta = std::max({10.0, std::sqrt(static_cast<double>(n)), cost.norm(), max_a_norm});

    CMatrix x = xi * eye;
    CMatrix z = zeta * eye;
    RVector y = RVector::Zero(m);

    SdpSolution sol;
    const double bnorm = b.norm();
    const double cnorm = cost.norm();

    // Late iterations can lose accuracy once the iterates are badly conditioned, so the best
    // iterate seen is what gets returned.
    struct Snapshot {
        CMatrix x, z;
        RVector y;
        double merit = std::numeric_limits<double>::infinity();
        double pobj = 0.0, dobj = 0.0, rp = 0.0, rd = 0.0, rel_p = 0.0, rel_d = 0.0, rel_gap = 0.0;
        int iter = 0;
    } best;
    int since_best = 0;
    SdpStatus status = SdpStatus::max_iterations;

    for (int iter = 0; iter <= opt.max_iterations; ++iter) {
        const RVector rp = b - sdp.apply(x);
        const CMatrix rd = hermitian_part(cost - sdp.adjoint(y) - z);
        const double pobj = (cost.cwiseProduct(x.transpose())).sum().real();
        const double dobj = b.dot(y);
        const double rel_p = rp.norm() / (1.0 + bnorm);
        const double rel_d = rd.norm() / (1.0 + cnorm);
        const double rel_gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
        const double merit = std::max({rel_p / opt.feasibility_tol, rel_d / opt.feasibility_tol, rel_gap / opt.gap_tol});
        if (merit < best.merit) {
            best = {x, z, y, merit, pobj, dobj, rp.norm(), rd.norm(), rel_p, rel_d, rel_gap, iter};
            since_best = 0;
        } else {
            ++since_best;
        }
        if (std::getenv("CVQKD_SDP_TRACE"))
            std::fprintf(stderr, "sdp %2d p=%.12g d=%.12g rp=%.2e rd=%.2e gap=%.2e\n", iter, pobj, dobj, rel_p, rel_d,
                         rel_gap);

        if (merit < 1.0) {
            status = SdpStatus::optimal;
            break;
        }
        // Unbounded dual ray with a still-infeasible primal: no feasible X exists.
        if (dobj > 1e8 * (1.0 + std::abs(pobj)) && rel_d < 1e-6) {
            status = SdpStatus::infeasible;
            break;
        }
        if (iter == opt.max_iterations || since_best >= 6) {
            status = SdpStatus::max_iterations;
            break;
        }

        Eigen::LLT<CMatrix> zchol(z);
        Eigen::LLT<CMatrix> xchol(x);
        if (zchol.info() != Eigen::Success || xchol.info() != Eigen::Success) {
            status = SdpStatus::numerical_failure;
            break;
        }
        const CMatrix w = zchol.solve(eye);
        const double mu = (x.cwiseProduct(z.transpose())).sum().real() / n;

        const Eigen::MatrixXd schur = detail::schur_complement(sdp, x, w);
        Eigen::LDLT<Eigen::MatrixXd> schur_fact(schur);
        if (schur_fact.info() != Eigen::Success) {
            status = SdpStatus::numerical_failure;
            break;
        }
        const CMatrix x_rd_w = x * rd * w;

        // rc_w is (sigma mu I - X Z - corr) W
        auto direction = [&](const CMatrix& rc_w, CMatrix& dx, RVector& dy, CMatrix& dz) {
            const RVector rhs = rp - sdp.apply(rc_w - x_rd_w);
            dy = schur_fact.solve(rhs);
            dz = hermitian_part(rd - sdp.adjoint(dy));
            dx = hermitian_part(rc_w - x * dz * w);
        };

        CMatrix dx, dz;
        RVector dy;
        direction(-x, dx, dy, dz);
        double ap = std::min(1.0, detail::max_step(xchol, dx));
        double ad = std::min(1.0, detail::max_step(zchol, dz));
        const double mu_aff = ((x + ap * dx).cwiseProduct((z + ad * dz).transpose())).sum().real() / n;
        const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);

        const CMatrix rc_w = sigma * mu * w - x - dx * dz * w;
        direction(rc_w, dx, dy, dz);
        ap = std::min(1.0, opt.step_fraction * detail::max_step(xchol, dx));
        ad = std::min(1.0, opt.step_fraction * detail::max_step(zchol, dz));
        if (!(ap > 1e-14 && ad > 1e-14) || !std::isfinite(ap) || !std::isfinite(ad)) {
            status = SdpStatus::numerical_failure;
            break;
        }
        x = hermitian_part(x + ap * dx);
        y += ad * dy;
        z = hermitian_part(z + ad * dz);
    }

    if (status != SdpStatus::optimal && status != SdpStatus::infeasible && best.merit < std::numeric_limits<double>::infinity()) {
        const bool acceptable = best.rel_p < opt.fallback_feasibility_tol && best.rel_d < opt.fallback_feasibility_tol &&
                                best.rel_gap < opt.fallback_gap_tol;
        if (acceptable) status = SdpStatus::optimal;
    }
    if (status != SdpStatus::infeasible) {
        x = best.x;
        y = best.y;
        z = best.z;
    }
    sol.status = status;
    sol.iterations = best.iter;
    sol.x = x;
    sol.y = y;
    sol.z = z;
    sol.primal_value = (cost.cwiseProduct(x.transpose())).sum().real();
    sol.dual_value = b.dot(y);
    sol.primal_residual = (b - sdp.apply(x)).norm();
    sol.dual_residual = hermitian_part(cost - sdp.adjoint(y) - z).norm();
    sol.certified_lower = certified_lower_bound(sdp, cost, y, opt.trace_bound);
    return sol;
}

}  // namespace cvqkd::keyrate
