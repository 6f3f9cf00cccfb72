#pragma once
#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fedeca/domain.hpp"
#include "fedeca/errors.hpp"

namespace fedeca {

// ============================================================================
// Logistic propensity model: local gradient/Hessian kernels plus an
// incremental Newton driver. The driver is transport-agnostic: it hands out
// the next point to evaluate and consumes (nll, grad, hess) evaluations, so
// the same solver runs pooled (one kernel call per round) and federated (one
// communication round per call, shares summed in ascending center order).
// ============================================================================

inline double softplus(double x) {
    return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0);
}

// Sigmoid clamped into the open interval (0,1); no underflow to 0 or
// rounding to 1 for any finite input.
inline double stable_sigmoid(double u) {
    double r;
    if (u >= 0.0) {
        r = 1.0 / (1.0 + std::exp(-u));
    } else {
        const double e = std::exp(u);
        r = e / (1.0 + e);
    }
    constexpr double lo = std::numeric_limits<double>::min();
    constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2;
    return std::min(std::max(r, lo), hi);
}

inline double predict_propensity(const Eigen::VectorXd& theta, const Eigen::VectorXd& x) {
    if (theta.size() != x.size()) throw data_error("propensity: dimension mismatch");
    return stable_sigmoid(theta.dot(x));
}

struct StandardizeParams {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale; // standard deviation, floored at a small constant
};

// Design matrix for the logistic fit: raw covariates, optionally
// standardized, optionally augmented with a trailing intercept column.
inline Eigen::MatrixXd logistic_design(const CenterCohort& cohort, bool intercept,
                                       const StandardizeParams* standardize = nullptr) {
    const Eigen::Index n = cohort.size();
    const Eigen::Index p = cohort.num_covariates();
    Eigen::MatrixXd x(n, p + (intercept ? 1 : 0));
    x.leftCols(p) = cohort.covariates();
    if (standardize != nullptr) {
        for (Eigen::Index j = 0; j < p; ++j)
            x.col(j) = (x.col(j).array() - standardize->mean[j]) / standardize->scale[j];
    }
    if (intercept) x.col(p).setOnes();
    return x;
}

struct LogisticEval {
    double nll = 0.0;
    Eigen::VectorXd grad;
    Eigen::MatrixXd hess;

    LogisticEval() = default;
    explicit LogisticEval(Eigen::Index dim)
        : grad(Eigen::VectorXd::Zero(dim)), hess(Eigen::MatrixXd::Zero(dim, dim)) {}

    LogisticEval& operator+=(const LogisticEval& other) {
        nll += other.nll;
        grad += other.grad;
        hess += other.hess;
        return *this;
    }
};

// Local negative log-likelihood, gradient and Hessian at theta, accumulated
// over records in canonical order.
inline LogisticEval logistic_local_eval(const Eigen::MatrixXd& design,
                                        const std::vector<std::uint8_t>& treatment,
                                        const std::vector<Eigen::Index>& order,
                                        const Eigen::VectorXd& theta) {
    if (theta.size() != design.cols()) throw data_error("logistic: theta dimension mismatch");
    LogisticEval eval(theta.size());
    for (const Eigen::Index i : order) {
        const auto x = design.row(i).transpose();
        const double u = theta.dot(x);
        const double a = treatment[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
        const double s = stable_sigmoid(u);
        eval.nll += softplus(u) - a * u;
        eval.grad += (s - a) * x;
        eval.hess.selfadjointView<Eigen::Lower>().rankUpdate(x, s * (1.0 - s));
    }
    eval.hess = eval.hess.selfadjointView<Eigen::Lower>();
    if (!std::isfinite(eval.nll) || !eval.grad.allFinite() || !eval.hess.allFinite())
        throw convergence_error("logistic: non-finite likelihood terms");
    return eval;
}

struct LogisticOptions {
    int max_steps = 10;        // Newton updates per fit
    double grad_tol = 1e-7;    // sup-norm stopping tolerance on the summed gradient
    double theta_guard = 50.0; // abort when any coefficient passes this bound
};

struct PropensityFit {
    Eigen::VectorXd theta;
    Eigen::VectorXd scores; // per patient, pooled fits only
    bool converged = false;
    int iterations = 0;
    double final_grad_norm = 0.0;
    std::vector<double> nll_trace;
};

// Solves H d = g, optionally retrying once with a ridge jitter when H is
// singular (the logistic path retries; the Cox path fails hard).
inline Eigen::VectorXd solve_newton_direction(const Eigen::MatrixXd& hess,
                                              const Eigen::VectorXd& grad,
                                              const std::string& what,
                                              bool allow_jitter = true) {
    auto try_solve = [&](const Eigen::MatrixXd& h) -> std::optional<Eigen::VectorXd> {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
        if (ldlt.info() != Eigen::Success) return std::nullopt;
        Eigen::VectorXd d = ldlt.solve(grad);
        if (!d.allFinite()) return std::nullopt;
        const double residual = (h * d - grad).norm();
        if (residual > 1e-8 * (grad.norm() + 1.0)) return std::nullopt;
        return d;
    };
    if (auto d = try_solve(hess)) return *d;
    if (allow_jitter) {
        const double jitter = 1e-8 * (hess.diagonal().cwiseAbs().mean() + 1.0);
        Eigen::MatrixXd jittered = hess;
        jittered.diagonal().array() += jitter;
        if (auto d = try_solve(jittered)) return *d;
    }
    throw convergence_error(what);
}

class LogisticNewtonDriver {
public:
    LogisticNewtonDriver(Eigen::Index dim, LogisticOptions options = {})
        : options_(options), theta_(Eigen::VectorXd::Zero(dim)) {}

    bool done() const { return done_; }
    const Eigen::VectorXd& current() const { return theta_; }

    void feed(const LogisticEval& eval) {
        if (done_) throw convergence_error("logistic driver fed after completion");
        nll_trace_.push_back(eval.nll);
        final_grad_norm_ = eval.grad.lpNorm<Eigen::Infinity>();
        if (eval.nll > last_nll_) {
            if (++rising_ >= 3) throw convergence_error("logistic: diverging likelihood");
        } else {
            rising_ = 0;
        }
        last_nll_ = eval.nll;

        if (final_grad_norm_ < options_.grad_tol) {
            converged_ = true;
            done_ = true;
            return;
        }
        if (steps_ >= options_.max_steps) {
            done_ = true; // step budget exhausted; theta is the last iterate
            return;
        }
        theta_ -= solve_newton_direction(eval.hess, eval.grad,
                                         "logistic: separable or collinear covariates");
        ++steps_;
        if (theta_.lpNorm<Eigen::Infinity>() > options_.theta_guard)
            throw convergence_error("logistic: separable or collinear covariates");
    }

    PropensityFit fit_result() const {
        PropensityFit fit;
        fit.theta = theta_;
        fit.converged = converged_;
        fit.iterations = steps_;
        fit.final_grad_norm = final_grad_norm_;
        fit.nll_trace = nll_trace_;
        return fit;
    }

private:
    LogisticOptions options_;
    Eigen::VectorXd theta_;
    int steps_ = 0;
    int rising_ = 0;
    bool done_ = false;
    bool converged_ = false;
    double last_nll_ = std::numeric_limits<double>::infinity();
    double final_grad_norm_ = std::numeric_limits<double>::infinity();
    std::vector<double> nll_trace_;
};

// Single-process fit; also the K=1 reduction of the federated solver.
inline PropensityFit pooled_logistic_fit(const CenterCohort& cohort, bool intercept = false,
                                         LogisticOptions options = {},
                                         const StandardizeParams* standardize = nullptr) {
    const Eigen::Index treated = cohort.count_treated();
    if (treated == 0 || treated == cohort.size())
        throw data_error("propensity model needs both treated and control patients");
    const Eigen::MatrixXd design = logistic_design(cohort, intercept, standardize);
    LogisticNewtonDriver driver(design.cols(), options);
    while (!driver.done())
        driver.feed(logistic_local_eval(design, cohort.treatment(), cohort.canonical_order(),
                                        driver.current()));
    PropensityFit fit = driver.fit_result();
    fit.scores.resize(cohort.size());
    for (Eigen::Index i = 0; i < cohort.size(); ++i)
        fit.scores[i] = stable_sigmoid(fit.theta.dot(design.row(i)));
    return fit;
}

} // namespace fedeca
