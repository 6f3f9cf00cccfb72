#pragma once
#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fedeca/cox.hpp"
#include "fedeca/domain.hpp"
#include "fedeca/errors.hpp"
#include "fedeca/stats.hpp"

namespace fedeca {

// ============================================================================
// Variance estimators and the treatment-effect Wald test.
//
// naive      inverse of the penalized observed information at beta_hat
// robust     sandwich H^-1 Q H^-T assembled from per-center score residuals
// bootstrap  empirical variance of beta_hat over global resampling replicates
//
// The robust score residual phi_i is accumulated over ALL patients, censored
// included: their death term vanishes but the cumulative hazard terms do not.
// The time indicator in phi_i is evaluated at the patient's own observed
// time, which is what makes the censored rows well-defined.
// ============================================================================

enum class VarianceMethod : std::uint8_t { naive = 0, robust = 1, bootstrap = 2 };

inline const char* to_string(VarianceMethod m) {
    switch (m) {
        case VarianceMethod::naive: return "naive";
        case VarianceMethod::robust: return "robust";
        case VarianceMethod::bootstrap: return "bootstrap";
    }
    return "?";
}

struct CoxFit {
    Eigen::VectorXd beta;
    Eigen::MatrixXd variance;
    VarianceMethod variance_method = VarianceMethod::naive;
    double hazard_ratio = 1.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double z_stat = 0.0;
    double p_value = 1.0;
    int n_bootstrap = 0;
    int rounds = 0;
    bool converged = false;
    std::vector<double> nll_trace; // penalized NLL per accepted round
    double final_nll = 0.0;        // unpenalized partial-likelihood value at beta_hat
};

// SPD inverse with an explicit residual check; throws on singular input.
inline Eigen::MatrixXd invert_spd(const Eigen::MatrixXd& h, const std::string& what) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
    if (ldlt.info() != Eigen::Success) throw convergence_error(what);
    Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(h.rows(), h.cols()));
    if (!inv.allFinite() ||
        (h * inv - Eigen::MatrixXd::Identity(h.rows(), h.cols())).cwiseAbs().maxCoeff() >
            1e-8 * (1.0 + h.cwiseAbs().maxCoeff()))
        throw convergence_error(what);
    return inv;
}

inline Eigen::MatrixXd naive_variance(const Eigen::MatrixXd& penalized_hessian) {
    return invert_spd(penalized_hessian, "naive variance: singular information matrix");
}

// One center's sandwich share sum_i (H^-1 phi_i)(H^-1 phi_i)^T given the
// broadcast globals at beta_hat. The pooled sandwich is the K=1 case.
inline Eigen::MatrixXd local_robust_share(const Eigen::MatrixXd& z, const Eigen::VectorXd& time,
                                          const std::vector<std::uint8_t>& event,
                                          const std::vector<Eigen::Index>& order,
                                          const Eigen::VectorXd& weights,
                                          const Eigen::VectorXd& beta_hat,
                                          const Eigen::MatrixXd& h_inv,
                                          const std::vector<double>& global_times,
                                          const std::vector<double>& w_global,
                                          const std::vector<double>& zeta0_global,
                                          const Eigen::MatrixXd& zeta1_global) {
    const Eigen::Index q = z.cols();
    const auto num_times = global_times.size();
    if (w_global.size() != num_times || zeta0_global.size() != num_times ||
        zeta1_global.rows() != static_cast<Eigen::Index>(num_times))
        throw protocol_error("robust share: global state does not match the time grid");

    // Prefix sums over event times of W_s/zeta0_s and W_s zeta1_s/zeta0_s^2.
    std::vector<double> cum0(num_times);
    Eigen::MatrixXd cum1(static_cast<Eigen::Index>(num_times), q);
    double acc0 = 0.0;
    Eigen::VectorXd acc1 = Eigen::VectorXd::Zero(q);
    for (std::size_t s = 0; s < num_times; ++s) {
        if (w_global[s] > 0.0) {
            if (zeta0_global[s] <= 0.0)
                throw protocol_error("robust share: zero risk mass at a death time");
            acc0 += w_global[s] / zeta0_global[s];
            acc1 += (w_global[s] / (zeta0_global[s] * zeta0_global[s])) *
                    zeta1_global.row(static_cast<Eigen::Index>(s)).transpose();
        }
        cum0[s] = acc0;
        cum1.row(static_cast<Eigen::Index>(s)) = acc1.transpose();
    }

    Eigen::MatrixXd share = Eigen::MatrixXd::Zero(q, q);
    std::size_t grid = 0; // last grid index with time <= the record's time
    Eigen::VectorXd phi(q);
    for (const Eigen::Index i : order) {
        while (grid + 1 < num_times && global_times[grid + 1] <= time[i]) ++grid;
        const bool before_first = num_times == 0 || global_times[0] > time[i];
        phi.setZero();
        if (!before_first) {
            const double eta = beta_hat.dot(z.row(i));
            const double risk = weights[i] * std::exp(eta);
            phi = -risk * (cum0[grid] * z.row(i).transpose() -
                           cum1.row(static_cast<Eigen::Index>(grid)).transpose());
        }
        if (event[static_cast<std::size_t>(i)]) {
            // The patient's own death time must sit on the grid.
            if (before_first || global_times[grid] != time[i])
                throw protocol_error("robust share: event time missing from the global grid");
            if (w_global[grid] > 0.0)
                phi += weights[i] *
                       (z.row(i).transpose() -
                        zeta1_global.row(static_cast<Eigen::Index>(grid)).transpose() /
                            zeta0_global[grid]);
        }
        const Eigen::VectorXd hphi = h_inv * phi;
        share.selfadjointView<Eigen::Lower>().rankUpdate(hphi, 1.0);
    }
    return share.selfadjointView<Eigen::Lower>();
}

struct WaldResult {
    double z = 0.0;
    double p = 1.0;
    double hazard_ratio = 1.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

// Wald test on the treatment coefficient (the first entry of beta).
inline WaldResult wald_test(const Eigen::VectorXd& beta, const Eigen::MatrixXd& variance) {
    if (variance.rows() < 1 || !(variance(0, 0) > 0.0))
        throw convergence_error("wald test: zero variance on the treatment coefficient");
    WaldResult out;
    const double se = std::sqrt(variance(0, 0));
    out.z = std::isinf(se) ? 0.0 : beta[0] / se;
    out.p = two_sided_p(out.z);
    out.hazard_ratio = std::exp(beta[0]);
    out.ci_low = std::exp(beta[0] - 1.96 * se);
    out.ci_high = std::exp(beta[0] + 1.96 * se);
    return out;
}

// Empirical covariance of bootstrap replicates of beta_hat.
inline Eigen::MatrixXd bootstrap_variance(const std::vector<Eigen::VectorXd>& replicates) {
    if (replicates.size() < 2) throw data_error("bootstrap needs at least 2 replicates");
    const Eigen::Index q = replicates.front().size();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(q);
    for (const auto& b : replicates) mean += b;
    mean /= static_cast<double>(replicates.size());
    Eigen::MatrixXd var = Eigen::MatrixXd::Zero(q, q);
    for (const auto& b : replicates) {
        const Eigen::VectorXd d = b - mean;
        var.selfadjointView<Eigen::Lower>().rankUpdate(d, 1.0);
    }
    var = var.selfadjointView<Eigen::Lower>();
    return var / static_cast<double>(replicates.size() - 1);
}

// Percentile CI of the hazard ratio from replicate betas (optional
// alternative to the default normal-approximation CI).
inline std::pair<double, double> bootstrap_percentile_ci(
    const std::vector<Eigen::VectorXd>& replicates) {
    std::vector<double> b1;
    b1.reserve(replicates.size());
    for (const auto& b : replicates) b1.push_back(b[0]);
    return {std::exp(quantile(b1, 0.025)), std::exp(quantile(b1, 0.975))};
}

} // namespace fedeca
