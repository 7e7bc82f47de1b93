#pragma once

// f(rho) = D(G(rho) || Z[G(rho)]) in bits.
//
// G is the isometry K = sum_z |z>_key (x) I_A (x) sqrt(R_z), so G(rho) has the spectrum of rho,
// and Z[G(rho)] is block diagonal with blocks rho_z = (I (x) sqrt(R_z)) rho (I (x) sqrt(R_z)).
// Hence f(rho) = -H(rho) + sum_z H(rho_z), evaluated on M(N_c+1)-dimensional matrices only, and
//     grad f = log2 rho - sum_z (I (x) sqrt(R_z)) log2(rho_z) (I (x) sqrt(R_z)).
// Both logs are taken of the perturbed state (1 - delta) rho + delta I / dim.

#include <cmath>

#include <Eigen/Eigenvalues>

#include "cvqkd/keyrate/problem.hpp"

namespace cvqkd::keyrate {

struct ObjectiveValue {
    double value = 0.0;
    CMatrix gradient;
};

/// -Tr(rho log2 rho) with 0 log 0 = 0; negative eigenvalues from rounding are dropped.
inline double von_neumann_entropy(const CMatrix& rho) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(hermitian_part(rho), Eigen::EigenvaluesOnly);
    double h = 0.0;
    for (int i = 0; i < es.eigenvalues().size(); ++i) {
        const double l = es.eigenvalues()(i);
        if (l > 0.0) h -= l * std::log2(l);
    }
    return h;
}

class RelativeEntropyObjective {
public:
    explicit RelativeEntropyObjective(const KeyRateProblem& p, double perturbation = 1e-10)
        : blocks_(p.states), block_size_(p.cutoff + 1), roots_(p.region_roots), delta_(perturbation) {}

    int dim() const { return blocks_ * block_size_; }
    double perturbation() const { return delta_; }

    /// (I (x) sqrt(R_z)) rho (I (x) sqrt(R_z))
    CMatrix key_block(const CMatrix& rho, int z) const {
        CMatrix out(dim(), dim());
        const int b = block_size_;
        const CMatrix& s = roots_[z];
        for (int i = 0; i < blocks_; ++i)
            for (int j = 0; j < blocks_; ++j) out.block(i * b, j * b, b, b).noalias() = s * rho.block(i * b, j * b, b, b) * s;
        return out;
    }

    double value(const CMatrix& rho) const { return evaluate(rho, false).value; }

    ObjectiveValue value_and_gradient(const CMatrix& rho) const { return evaluate(rho, true); }

private:
    struct Spectral {
        double entropy = 0.0;
        CMatrix log2_matrix;
    };

    static Spectral spectral(const CMatrix& h, bool want_log) {
        Eigen::SelfAdjointEigenSolver<CMatrix> es(hermitian_part(h), want_log ? Eigen::ComputeEigenvectors
                                                                              : Eigen::EigenvaluesOnly);
        const RVector& ev = es.eigenvalues();
        Spectral s;
        RVector logs(ev.size());
        for (int i = 0; i < ev.size(); ++i) {
            const double l = std::max(ev(i), 1e-300);
            logs(i) = std::log2(l);
            if (ev(i) > 0.0) s.entropy -= ev(i) * logs(i);
        }
        if (want_log) s.log2_matrix = es.eigenvectors() * logs.asDiagonal() * es.eigenvectors().adjoint();
        return s;
    }

    ObjectiveValue evaluate(const CMatrix& rho, bool want_gradient) const {
        const int n = dim();
        CMatrix perturbed = (1.0 - delta_) * hermitian_part(rho);
        perturbed.diagonal().array() += delta_ / n;

        ObjectiveValue out;
        Spectral whole = spectral(perturbed, want_gradient);
        out.value = -whole.entropy;
        if (want_gradient) out.gradient = whole.log2_matrix;
        for (int z = 0; z < static_cast<int>(roots_.size()); ++z) {
            Spectral part = spectral(key_block(perturbed, z), want_gradient);
            out.value += part.entropy;
            if (want_gradient) out.gradient -= key_block(part.log2_matrix, z);
        }
        if (want_gradient) out.gradient = (1.0 - delta_) * hermitian_part(out.gradient);
        return out;
    }

    int blocks_;
    int block_size_;
    std::vector<CMatrix> roots_;
    double delta_;
};

}  // namespace cvqkd::keyrate
