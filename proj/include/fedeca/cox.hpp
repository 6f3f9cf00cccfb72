#pragma once
#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "fedeca/domain.hpp"
#include "fedeca/errors.hpp"
#include "fedeca/logistic.hpp"

namespace fedeca {

// ============================================================================
// Weighted Cox partial likelihood (Breslow ties), evaluated from per-center
// risk-set statistics.
//
// For every global event time s each center reports
//   W_s    weighted death mass          sum_{i in D_s} w_i
//   Z_s    weighted death z-sum         sum_{i in D_s} w_i z_i
//   zeta0  weighted risk mass           sum_{j in R_s} w_j exp(beta.z_j)
//   zeta1  first risk moment            sum_{j in R_s} w_j exp(beta.z_j) z_j
//   zeta2  second risk moment           sum ... z_j z_j^T
// and the aggregator reconstructs the negative log partial likelihood, its
// gradient and its Hessian exactly as a pooled solver would.
//
// Statistics are transmitted for every global event time, including times at
// which a center has no deaths: its risk mass there still enters the pooled
// denominators. Event times are matched across centers by exact binary64
// equality; fuzzy matching would silently merge near-ties.
// ============================================================================

struct CoxDesign {
    std::vector<Eigen::Index> extra_covariates; // empty = plain IPTW (z = treatment)

    Eigen::Index dimension() const {
        return 1 + static_cast<Eigen::Index>(extra_covariates.size());
    }
};

// Per-patient regression rows; first column is always the treatment flag.
inline Eigen::MatrixXd cox_design_matrix(const CenterCohort& cohort, const CoxDesign& design) {
    const Eigen::Index n = cohort.size();
    Eigen::MatrixXd z(n, design.dimension());
    for (Eigen::Index i = 0; i < n; ++i)
        z(i, 0) = cohort.treatment()[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    for (std::size_t c = 0; c < design.extra_covariates.size(); ++c) {
        const Eigen::Index col = design.extra_covariates[c];
        if (col < 0 || col >= cohort.num_covariates())
            throw data_error("cox design: covariate index out of range");
        z.col(1 + static_cast<Eigen::Index>(c)) = cohort.covariates().col(col);
    }
    return z;
}

struct CoxShareEntry {
    double w_death = 0.0;
    Eigen::VectorXd z_death;
    double zeta0 = 0.0;
    Eigen::VectorXd zeta1;
    Eigen::MatrixXd zeta2;

    explicit CoxShareEntry(Eigen::Index q = 0)
        : z_death(Eigen::VectorXd::Zero(q)),
          zeta1(Eigen::VectorXd::Zero(q)),
          zeta2(Eigen::MatrixXd::Zero(q, q)) {}
};

using CoxShareList = std::vector<CoxShareEntry>; // aligned with the global time grid

// Sorted union of per-center distinct event times.
inline std::vector<double> union_event_times(std::span<const std::vector<double>> per_center) {
    std::vector<double> all;
    for (const auto& times : per_center) all.insert(all.end(), times.begin(), times.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    return all;
}

// One center's statistics at every global event time. Zero-filled where the
// local death/risk sets are empty. O(n + |S|) via suffix sweeps over the
// canonical order.
inline CoxShareList cox_local_stats(const Eigen::MatrixXd& z, const Eigen::VectorXd& time,
                                    const std::vector<std::uint8_t>& event,
                                    const std::vector<Eigen::Index>& order,
                                    const Eigen::VectorXd& weights,
                                    const std::vector<double>& global_times,
                                    const Eigen::VectorXd& beta) {
    const Eigen::Index q = z.cols();
    if (beta.size() != q) throw data_error("cox: beta dimension mismatch");
    const auto num_times = global_times.size();
    CoxShareList shares(num_times, CoxShareEntry(q));
    if (order.empty()) return shares;

    Eigen::VectorXd risk(z.rows());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double eta = beta.dot(z.row(i));
        if (std::abs(eta) > 700.0 || !std::isfinite(eta))
            throw convergence_error(
                "cox: exp overflow in risk sums; consider scaling covariates");
        risk[i] = weights[i] * std::exp(eta);
    }

    // Death masses: ascending sweep, matching local event times to the grid.
    std::size_t grid = 0;
    for (const Eigen::Index i : order) {
        if (!event[static_cast<std::size_t>(i)]) continue;
        while (grid < num_times && global_times[grid] < time[i]) ++grid;
        if (grid == num_times || global_times[grid] != time[i])
            throw protocol_error("cox: local event time missing from the global grid");
        shares[grid].w_death += weights[i];
        shares[grid].z_death += weights[i] * z.row(i).transpose();
    }

    // Risk moments: descending sweep accumulating suffix sums.
    double acc0 = 0.0;
    Eigen::VectorXd acc1 = Eigen::VectorXd::Zero(q);
    Eigen::MatrixXd acc2 = Eigen::MatrixXd::Zero(q, q);
    auto record = static_cast<std::ptrdiff_t>(order.size()) - 1;
    for (auto s = static_cast<std::ptrdiff_t>(num_times) - 1; s >= 0; --s) {
        const double threshold = global_times[static_cast<std::size_t>(s)];
        while (record >= 0 && time[order[static_cast<std::size_t>(record)]] >= threshold) {
            const Eigen::Index i = order[static_cast<std::size_t>(record)];
            const auto zi = z.row(i).transpose();
            acc0 += risk[i];
            acc1 += risk[i] * zi;
            acc2.selfadjointView<Eigen::Lower>().rankUpdate(zi, risk[i]);
            --record;
        }
        auto& share = shares[static_cast<std::size_t>(s)];
        share.zeta0 = acc0;
        share.zeta1 = acc1;
        share.zeta2 = acc2.selfadjointView<Eigen::Lower>();
    }
    return shares;
}

struct CoxAggregate {
    double nll = 0.0; // negative log partial likelihood
    Eigen::VectorXd grad;
    Eigen::MatrixXd hess;
    // Global per-time quantities at the evaluated beta, consumed by the
    // robust variance round.
    std::vector<double> w_global;
    std::vector<double> zeta0_global;
    Eigen::MatrixXd zeta1_global; // |S| x q
};

// Server-side reconstruction of the pooled likelihood, gradient and Hessian
// from center shares (summed in ascending center order).
inline CoxAggregate aggregate_cox_shares(std::span<const CoxShareList> shares,
                                         const std::vector<double>& global_times,
                                         const Eigen::VectorXd& beta) {
    if (shares.empty()) throw protocol_error("cox aggregate: no center shares");
    const Eigen::Index q = beta.size();
    const auto num_times = global_times.size();
    for (const auto& list : shares)
        if (list.size() != num_times)
            throw protocol_error("cox aggregate: share length does not match the time grid");

    CoxAggregate agg;
    agg.grad = Eigen::VectorXd::Zero(q);
    agg.hess = Eigen::MatrixXd::Zero(q, q);
    agg.w_global.assign(num_times, 0.0);
    agg.zeta0_global.assign(num_times, 0.0);
    agg.zeta1_global = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(num_times), q);

    Eigen::VectorXd z_death(q), zeta1(q);
    Eigen::MatrixXd zeta2(q, q);
    for (std::size_t s = 0; s < num_times; ++s) {
        double w = 0.0;
        double zeta0 = 0.0;
        z_death.setZero();
        zeta1.setZero();
        zeta2.setZero();
        for (const auto& list : shares) {
            const auto& entry = list[s];
            w += entry.w_death;
            z_death += entry.z_death;
            zeta0 += entry.zeta0;
            zeta1 += entry.zeta1;
            zeta2 += entry.zeta2;
        }
        agg.w_global[s] = w;
        agg.zeta0_global[s] = zeta0;
        agg.zeta1_global.row(s) = zeta1.transpose();
        if (w == 0.0) continue;
        if (zeta0 <= 0.0)
            throw protocol_error("cox aggregate: zero risk mass at a death time");
        agg.nll -= beta.dot(z_death) - w * std::log(zeta0);
        agg.grad -= z_death - (w / zeta0) * zeta1;
        agg.hess += (w / zeta0) * zeta2 - (w / (zeta0 * zeta0)) * (zeta1 * zeta1.transpose());
    }
    if (!std::isfinite(agg.nll) || !agg.grad.allFinite() || !agg.hess.allFinite())
        throw convergence_error("cox aggregate: non-finite likelihood terms");
    return agg;
}

// ============================================================================
// Soft elastic-net regularizer, sharpened with the round index:
//   psi(beta) = lambda * sum_r phi_a(beta_r) + (1-lambda)/2 * |beta|^2
//   phi_a(x)  = (log(1+e^{ax}) + log(1+e^{-ax})) / a,  a = 1.3^round.
// Data-independent, so it is evaluated entirely server-side.
// ============================================================================

struct ElasticNet {
    double gamma = 0.0;  // overall strength; 0 disables the penalty
    double lambda = 0.5; // L1-ish vs ridge mix in [0,1]
};

struct PenaltyEval {
    double value = 0.0;
    Eigen::VectorXd grad;
    Eigen::VectorXd hess_diag;
};

inline PenaltyEval elastic_net_penalty(const Eigen::VectorXd& beta, const ElasticNet& penalty,
                                       int round) {
    PenaltyEval out;
    out.grad = Eigen::VectorXd::Zero(beta.size());
    out.hess_diag = Eigen::VectorXd::Zero(beta.size());
    if (penalty.gamma == 0.0) return out;
    const double alpha = std::pow(1.3, round);
    const double lambda = penalty.lambda;
    for (Eigen::Index r = 0; r < beta.size(); ++r) {
        const double x = beta[r];
        const double phi = (softplus(alpha * x) + softplus(-alpha * x)) / alpha;
        const double sig = stable_sigmoid(alpha * x);
        out.value += lambda * phi + 0.5 * (1.0 - lambda) * x * x;
        out.grad[r] = lambda * (2.0 * sig - 1.0) + (1.0 - lambda) * x;
        out.hess_diag[r] = lambda * 2.0 * alpha * sig * (1.0 - sig) + (1.0 - lambda);
    }
    return out;
}

// ============================================================================
// Newton driver for the penalized Cox loss. Like the logistic driver it is
// an incremental state machine over (nll, grad, hess) evaluations; each
// evaluation costs one communication round in the federated setting.
//
// Step policy: start each round at step 0.95 and halve on a penalized-NLL
// increase, up to 10 times; a constant-rate mode skips the decrease check.
// Stops when |grad|_inf < 1e-7 or the relative NLL change drops below 1e-9.
// ============================================================================

struct CoxOptions {
    int max_rounds = 20;
    double grad_tol = 1e-7;
    double rel_nll_tol = 1e-9;
    double initial_step = 0.95;
    int max_halvings = 10;
    bool constant_rate = false;
    ElasticNet penalty;
};

struct CoxEval {
    double nll = 0.0;
    Eigen::VectorXd grad;
    Eigen::MatrixXd hess;
};

struct PooledCoxResult {
    Eigen::VectorXd beta;
    bool converged = false;
    int rounds = 0;
    std::vector<double> nll_trace;
    double final_nll = 0.0;
    Eigen::MatrixXd penalized_hessian;
    double final_grad_norm = 0.0;
    CoxAggregate final_aggregate; // globals at beta_hat, for variance work
};

struct cox_no_convergence : convergence_error {
    cox_no_convergence(const std::string& message, std::vector<double> trace_in)
        : convergence_error(message), trace(std::move(trace_in)) {}
    std::vector<double> trace;
};

class CoxNewtonDriver {
public:
    enum class Feed {
        trial_rejected, // evaluate the re-proposed point
        step_accepted,  // evaluate the next trial point
        converged_here, // done; the point just evaluated is beta_hat
        converged_at_previous, // done; the previous accepted point stands
    };

    CoxNewtonDriver(Eigen::Index dim, CoxOptions options = {})
        : options_(options), current_(Eigen::VectorXd::Zero(dim)), trial_(current_) {}

    bool done() const { return done_; }
    const Eigen::VectorXd& next_point() const { return trial_; }

    Feed feed(const CoxEval& eval) {
        if (done_) throw convergence_error("cox driver fed after completion");
        const PenaltyEval pen = elastic_net_penalty(trial_, options_.penalty, round_);
        const double f_try = eval.nll + options_.penalty.gamma * pen.value;
        Eigen::VectorXd grad_pen = eval.grad + options_.penalty.gamma * pen.grad;
        Eigen::MatrixXd hess_pen = eval.hess;
        hess_pen.diagonal() += options_.penalty.gamma * pen.hess_diag;

        if (!have_current_) {
            // Initial evaluation at beta = 0.
            return accept(eval, f_try, grad_pen, hess_pen);
        }

        // The sharpening makes psi round-dependent; compare both points under
        // the current round's penalty.
        const double f_cur = penalized_at(current_, raw_nll_);
        if (!options_.constant_rate && f_try > f_cur) {
            if (halvings_ >= options_.max_halvings) {
                if (relative_change(f_try, f_cur) < options_.rel_nll_tol) {
                    done_ = true;
                    converged_ = true;
                    return Feed::converged_at_previous;
                }
                throw cox_no_convergence("cox: line search failed to decrease the loss",
                                         trace_);
            }
            ++halvings_;
            step_ *= 0.5;
            trial_ = current_ - step_ * direction_;
            return Feed::trial_rejected;
        }
        return accept(eval, f_try, grad_pen, hess_pen);
    }

    const Eigen::VectorXd& beta_hat() const { return current_; }
    bool converged() const { return converged_; }
    int rounds() const { return round_; }
    const std::vector<double>& nll_trace() const { return trace_; }
    double final_nll() const { return raw_nll_; }
    double final_penalized_nll() const { return penalized_at(current_, raw_nll_); }
    const Eigen::MatrixXd& final_penalized_hessian() const { return hess_pen_; }
    double final_grad_norm() const { return grad_pen_.lpNorm<Eigen::Infinity>(); }

private:
    Feed accept(const CoxEval& eval, double f_pen, const Eigen::VectorXd& grad_pen,
                const Eigen::MatrixXd& hess_pen) {
        const double f_prev = have_current_ ? penalized_at(current_, raw_nll_)
                                            : std::numeric_limits<double>::infinity();
        current_ = trial_;
        raw_nll_ = eval.nll;
        grad_pen_ = grad_pen;
        hess_pen_ = hess_pen;
        have_current_ = true;
        trace_.push_back(f_pen);

        if (grad_pen_.lpNorm<Eigen::Infinity>() < options_.grad_tol ||
            relative_change(f_pen, f_prev) < options_.rel_nll_tol) {
            if (round_ == 0) check_identifiable();
            done_ = true;
            converged_ = true;
            return Feed::converged_here;
        }
        if (round_ >= options_.max_rounds)
            throw cox_no_convergence("cox: no convergence in " +
                                         std::to_string(options_.max_rounds) + " rounds",
                                     trace_);
        ++round_;
        direction_ = solve_newton_direction(
            hess_pen_, grad_pen_, "cox: singular Hessian (constant covariate on all risk sets?)",
            /*allow_jitter=*/false);
        step_ = options_.initial_step;
        halvings_ = 0;
        trial_ = current_ - step_ * direction_;
        return Feed::step_accepted;
    }

    double penalized_at(const Eigen::VectorXd& beta, double raw_nll) const {
        if (options_.penalty.gamma == 0.0) return raw_nll;
        return raw_nll +
               options_.penalty.gamma * elastic_net_penalty(beta, options_.penalty, round_).value;
    }

    // A flat likelihood (constant z across all risk sets) converges at the
    // starting point with a singular information matrix; reject it.
    void check_identifiable() const {
        solve_newton_direction(hess_pen_, Eigen::VectorXd::Ones(hess_pen_.rows()),
                               "cox: singular Hessian (constant covariate on all risk sets?)",
                               /*allow_jitter=*/false);
    }

    static double relative_change(double f_new, double f_old) {
        if (!std::isfinite(f_old)) return std::numeric_limits<double>::infinity();
        return std::abs(f_new - f_old) / std::max(std::abs(f_old), 1e-12);
    }

    CoxOptions options_;
    Eigen::VectorXd current_;
    Eigen::VectorXd trial_;
    Eigen::VectorXd direction_;
    Eigen::VectorXd grad_pen_;
    Eigen::MatrixXd hess_pen_;
    std::vector<double> trace_;
    double raw_nll_ = 0.0;
    double step_ = 0.0;
    int round_ = 0;
    int halvings_ = 0;
    bool have_current_ = false;
    bool done_ = false;
    bool converged_ = false;
};

// Single-process weighted Cox fit: the K=1 reduction of the federated
// solver, sharing the stats kernel, the aggregation and the Newton driver.
inline PooledCoxResult pooled_cox_newton(const Eigen::MatrixXd& z, const Eigen::VectorXd& time,
                                         const std::vector<std::uint8_t>& event,
                                         const std::vector<Eigen::Index>& order,
                                         const Eigen::VectorXd& weights,
                                         CoxOptions options = {}) {
    std::vector<double> local_times;
    for (const Eigen::Index i : order)
        if (event[static_cast<std::size_t>(i)] &&
            (local_times.empty() || local_times.back() != time[i]))
            local_times.push_back(time[i]);
    if (local_times.empty()) throw data_error("cox: no events in the cohort");

    CoxNewtonDriver driver(z.cols(), options);
    CoxAggregate accepted;
    CoxAggregate pending;
    while (!driver.done()) {
        const CoxShareList share =
            cox_local_stats(z, time, event, order, weights, local_times, driver.next_point());
        pending = aggregate_cox_shares(std::span(&share, 1), local_times, driver.next_point());
        const auto status =
            driver.feed(CoxEval{pending.nll, pending.grad, pending.hess});
        if (status != CoxNewtonDriver::Feed::trial_rejected &&
            status != CoxNewtonDriver::Feed::converged_at_previous)
            accepted = std::move(pending);
    }
    PooledCoxResult out;
    out.beta = driver.beta_hat();
    out.converged = driver.converged();
    out.rounds = driver.rounds();
    out.nll_trace = driver.nll_trace();
    out.final_nll = driver.final_nll();
    out.penalized_hessian = driver.final_penalized_hessian();
    out.final_grad_norm = driver.final_grad_norm();
    out.final_aggregate = std::move(accepted);
    return out;
}

inline PooledCoxResult pooled_cox_newton(const CenterCohort& cohort, const CoxDesign& design,
                                         const Eigen::VectorXd& weights, CoxOptions options = {}) {
    const Eigen::MatrixXd z = cox_design_matrix(cohort, design);
    return pooled_cox_newton(z, cohort.time(), cohort.event(), cohort.canonical_order(), weights,
                             options);
}

} // namespace fedeca
