#pragma once

// Frank-Wolfe minimization of the key-rate objective over the constrained density operators.
// Every iteration solves the linear subproblem min_sigma Tr(sigma grad f(rho)) and, by convexity,
//     min f >= f(rho) + min_sigma Tr((sigma - rho) grad f(rho)),
// where the subproblem optimum is replaced by its certified dual bound.

#include <cmath>
#include <optional>
#include <vector>

#include "cvqkd/keyrate/objective.hpp"

namespace cvqkd::keyrate {

struct FrankWolfeOptions {
    int max_iterations = 300;
    double gap_tolerance = 1e-5;  // bits
    int stall_iterations = 50;
    double line_search_tolerance = 1e-7;
    double perturbation = 1e-10;
    SdpOptions subproblem;
};

struct FrankWolfeResult {
    CMatrix rho;
    double primal = 0.0;
    double lower_bound = -std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
    bool stalled = false;
    std::vector<double> primal_history;
    std::vector<double> bound_history;

    double gap() const { return primal - lower_bound; }
};

/// Minimizer of a convex scalar function on [0, 1] by golden-section search; returns 0 unless it
/// improves on the left end point.
template <class F>
double golden_section(F&& phi, double phi0, double tol) {
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = 0.0, b = 1.0;
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = phi(c), fd = phi(d);
    while (b - a > tol) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = phi(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = phi(d);
        }
    }
    const double t = 0.5 * (a + b);
    const double ft = phi(t);
    const double f1 = phi(1.0);
    if (f1 <= ft && f1 < phi0) return 1.0;
    return ft < phi0 ? t : 0.0;
}

struct LinearStep {
    CMatrix vertex;
    double certified_value = 0.0;  // lower bound on min Tr(sigma G)
    SdpSolution solution;
};

inline LinearStep fw_linear_subproblem(const CMatrix& gradient, const KeyRateProblem& problem,
                                       const SdpOptions& opt = {}) {
    SdpSolution sol = solve_sdp(problem.constraints, gradient, opt);
    if (sol.status == SdpStatus::infeasible) throw Error(Stage::keyrate, "linear subproblem infeasible");
    // The dual bound stays valid for any y, so an ill-conditioned late stop is usable as long as
    // the returned vertex is close to feasible.
    const double rel_p = sol.primal_residual / (1.0 + problem.constraints.targets().norm());
    if (sol.status == SdpStatus::numerical_failure && rel_p > 1e-6)
        throw Error(Stage::keyrate, std::string("linear subproblem failed: ") + to_string(sol.status));
    LinearStep s;
    s.vertex = sol.x;
    s.certified_value = sol.certified_lower;
    s.solution = std::move(sol);
    return s;
}

inline FrankWolfeResult minimize_relative_entropy(const KeyRateProblem& problem, const FrankWolfeOptions& opt = {},
                                                  std::optional<CMatrix> start = std::nullopt) {
    RelativeEntropyObjective objective(problem, opt.perturbation);
    FrankWolfeResult r;
    r.rho = start ? *start : problem.channel_state;
    double best_primal = std::numeric_limits<double>::infinity();
    int since_improvement = 0;

    for (int it = 0; it < opt.max_iterations; ++it) {
        const ObjectiveValue fv = objective.value_and_gradient(r.rho);
        r.primal = fv.value;
        r.primal_history.push_back(fv.value);

        const LinearStep step = fw_linear_subproblem(fv.gradient, problem, opt.subproblem);
        const double linear_at_rho = (fv.gradient.cwiseProduct(r.rho.transpose())).sum().real();
        const double bound = fv.value - linear_at_rho + step.certified_value;
        r.lower_bound = std::max(r.lower_bound, bound);
        r.bound_history.push_back(r.lower_bound);
        r.iterations = it + 1;

        if (fv.value < best_primal - 1e-15) {
            best_primal = fv.value;
            since_improvement = 0;
        } else if (++since_improvement >= opt.stall_iterations) {
            r.stalled = true;
            break;
        }
        if (r.primal - r.lower_bound <= opt.gap_tolerance) {
            r.converged = true;
            break;
        }

        const CMatrix direction = step.vertex - r.rho;
        auto phi = [&](double t) { return objective.value(r.rho + t * direction); };
        const double t = golden_section(phi, fv.value, opt.line_search_tolerance);
        if (t == 0.0) {
            if (++since_improvement >= opt.stall_iterations) {
                r.stalled = true;
                break;
            }
            continue;
        }
        r.rho = hermitian_part(r.rho + t * direction);
    }
    return r;
}

}  // namespace cvqkd::keyrate
