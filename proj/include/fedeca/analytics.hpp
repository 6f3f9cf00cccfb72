#pragma once
#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "fedeca/domain.hpp"
#include "fedeca/errors.hpp"
#include "fedeca/exact_sum.hpp"

namespace fedeca {

// ============================================================================
// Federated analytics: weighted Kaplan-Meier curves with Greenwood and
// exponential-Greenwood confidence intervals, and standardized mean
// differences before/after weighting.
//
// Per-time death and risk masses (and the SMD moment sums) are accumulated
// exactly (see exact_sum.hpp), so any partition of a fixed cohort into
// centers produces bit-identical curves and SMD values: the aggregation is a
// merge of exact accumulators, rounded to double once on the server.
// ============================================================================

// Local distinct event times restricted to one arm.
inline std::vector<double> arm_event_times(const CenterCohort& cohort, bool treated_arm) {
    std::vector<double> times;
    for (const Eigen::Index i : cohort.canonical_order()) {
        if ((cohort.treatment()[static_cast<std::size_t>(i)] != 0) != treated_arm) continue;
        if (!cohort.event()[static_cast<std::size_t>(i)]) continue;
        if (times.empty() || times.back() != cohort.time()[i])
            times.push_back(cohort.time()[i]);
    }
    return times;
}

struct KMMassEntry {
    ExactSum death_mass; // sum of weights over the local arm death set at s
    ExactSum risk_mass;  // sum of weights over the local arm risk set at s
};

// One center's weighted death/risk masses at every global arm event time.
inline std::vector<KMMassEntry> km_local_masses(const CenterCohort& cohort,
                                                const Eigen::VectorXd& weights, bool treated_arm,
                                                const std::vector<double>& global_times) {
    std::vector<KMMassEntry> masses(global_times.size());
    const auto& order = cohort.canonical_order();

    std::size_t grid = 0;
    for (const Eigen::Index i : order) {
        if ((cohort.treatment()[static_cast<std::size_t>(i)] != 0) != treated_arm) continue;
        if (!cohort.event()[static_cast<std::size_t>(i)]) continue;
        while (grid < global_times.size() && global_times[grid] < cohort.time()[i]) ++grid;
        if (grid == global_times.size() || global_times[grid] != cohort.time()[i])
            throw protocol_error("km: local event time missing from the global grid");
        masses[grid].death_mass.add(weights[i]);
    }

    auto record = static_cast<std::ptrdiff_t>(order.size()) - 1;
    ExactSum risk;
    for (auto s = static_cast<std::ptrdiff_t>(global_times.size()) - 1; s >= 0; --s) {
        const double threshold = global_times[static_cast<std::size_t>(s)];
        while (record >= 0 && cohort.time()[order[static_cast<std::size_t>(record)]] >= threshold) {
            const Eigen::Index i = order[static_cast<std::size_t>(record)];
            if ((cohort.treatment()[static_cast<std::size_t>(i)] != 0) == treated_arm)
                risk.add(weights[i]);
            --record;
        }
        masses[static_cast<std::size_t>(s)].risk_mass = risk;
    }
    return masses;
}

struct KMCurve {
    std::vector<double> times;
    std::vector<double> survival;
    std::vector<double> var_greenwood;
    std::vector<double> var_exp_greenwood;
    std::vector<double> ci_low;
    std::vector<double> ci_high;
};

// Product-limit assembly from rounded global masses. Once the risk mass is
// exhausted (risk <= death), survival drops to 0 and the variance
// accumulator freezes.
inline KMCurve assemble_km(const std::vector<double>& times, const std::vector<double>& death_mass,
                           const std::vector<double>& risk_mass) {
    KMCurve curve;
    curve.times = times;
    const auto m = times.size();
    curve.survival.resize(m);
    curve.var_greenwood.resize(m);
    curve.var_exp_greenwood.resize(m);
    curve.ci_low.resize(m);
    curve.ci_high.resize(m);

    double survival = 1.0;
    double greenwood_acc = 0.0;
    for (std::size_t s = 0; s < m; ++s) {
        const double d = death_mass[s];
        const double r = risk_mass[s];
        if (r <= 0.0) throw data_error("km: empty risk set at an event time");
        if (r <= d) {
            survival = 0.0;
        } else {
            survival *= 1.0 - d / r;
            greenwood_acc += d / (r * (r - d));
        }
        curve.survival[s] = survival;
        if (survival <= 0.0) {
            curve.var_greenwood[s] = 0.0;
            curve.var_exp_greenwood[s] = 0.0;
            curve.ci_low[s] = 0.0;
            curve.ci_high[s] = 0.0;
        } else if (survival >= 1.0) {
            curve.var_greenwood[s] = 0.0;
            curve.var_exp_greenwood[s] = 0.0;
            curve.ci_low[s] = 1.0;
            curve.ci_high[s] = 1.0;
        } else {
            const double log_s = std::log(survival);
            curve.var_greenwood[s] = survival * survival * greenwood_acc;
            curve.var_exp_greenwood[s] = greenwood_acc / (log_s * log_s);
            const double half_width = 1.96 * std::sqrt(curve.var_exp_greenwood[s]);
            const double zval = std::log(-log_s);
            curve.ci_low[s] = std::exp(-std::exp(zval + half_width));
            curve.ci_high[s] = std::exp(-std::exp(zval - half_width));
        }
    }
    return curve;
}

// Pooled weighted KM with the same exact-mass semantics as the federated
// path; federated curves must match this bit for bit.
inline KMCurve pooled_weighted_km(const CenterCohort& cohort, const Eigen::VectorXd& weights,
                                  bool treated_arm) {
    const auto times = arm_event_times(cohort, treated_arm);
    const auto masses = km_local_masses(cohort, weights, treated_arm, times);
    std::vector<double> death(times.size()), risk(times.size());
    for (std::size_t s = 0; s < times.size(); ++s) {
        death[s] = masses[s].death_mass.value();
        risk[s] = masses[s].risk_mass.value();
    }
    return assemble_km(times, death, risk);
}

// ============================================================================
// Standardized mean differences via two aggregation rounds of exact moments.
// The denominator uses the unweighted (before-weighting) arm variances for
// both the before and after SMD.
// ============================================================================

struct ArmMoments {
    std::uint64_t n = 0;
    ExactSum sum_w;
    std::vector<ExactSum> sum_x;   // per covariate
    std::vector<ExactSum> sum_xx;  // per covariate
    std::vector<ExactSum> sum_wx;  // per covariate
    std::vector<ExactSum> sum_wxx; // per covariate

    explicit ArmMoments(std::size_t p = 0)
        : sum_x(p), sum_xx(p), sum_wx(p), sum_wxx(p) {}

    void merge(const ArmMoments& other) {
        n += other.n;
        sum_w.add(other.sum_w);
        for (std::size_t j = 0; j < sum_x.size(); ++j) {
            sum_x[j].add(other.sum_x[j]);
            sum_xx[j].add(other.sum_xx[j]);
            sum_wx[j].add(other.sum_wx[j]);
            sum_wxx[j].add(other.sum_wxx[j]);
        }
    }
};

struct CohortMoments {
    ArmMoments treated;
    ArmMoments control;

    explicit CohortMoments(std::size_t p = 0) : treated(p), control(p) {}

    void merge(const CohortMoments& other) {
        treated.merge(other.treated);
        control.merge(other.control);
    }
};

inline CohortMoments local_moments(const CenterCohort& cohort, const Eigen::VectorXd& weights) {
    const auto p = static_cast<std::size_t>(cohort.num_covariates());
    CohortMoments out(p);
    for (const Eigen::Index i : cohort.canonical_order()) {
        ArmMoments& arm =
            cohort.treatment()[static_cast<std::size_t>(i)] != 0 ? out.treated : out.control;
        const double w = weights[i];
        arm.n += 1;
        arm.sum_w.add(w);
        for (std::size_t j = 0; j < p; ++j) {
            const double x = cohort.covariates()(i, static_cast<Eigen::Index>(j));
            arm.sum_x[j].add(x);
            arm.sum_xx[j].add(x * x);
            arm.sum_wx[j].add(w * x);
            arm.sum_wxx[j].add(w * x * x);
        }
    }
    return out;
}

struct SMDEntry {
    double smd_before = 0.0;
    double smd_after = 0.0;
    double mean_treated = 0.0;
    double mean_control = 0.0;
    double var_treated = 0.0;
    double var_control = 0.0;
    double weighted_mean_treated = 0.0;
    double weighted_mean_control = 0.0;
};

struct SMDReport {
    std::vector<SMDEntry> covariates;

    double mean_abs_before() const {
        double s = 0.0;
        for (const auto& e : covariates) s += std::abs(e.smd_before);
        return s / static_cast<double>(covariates.size());
    }
    double mean_abs_after() const {
        double s = 0.0;
        for (const auto& e : covariates) s += std::abs(e.smd_after);
        return s / static_cast<double>(covariates.size());
    }
};

// Server-side SMD assembly from merged moments. A zero denominator yields a
// NaN sentinel for that covariate.
inline SMDReport assemble_smd(const CohortMoments& moments) {
    if (moments.treated.n == 0 || moments.control.n == 0)
        throw data_error("smd: both arms must be non-empty");
    SMDReport report;
    const auto p = moments.treated.sum_x.size();
    report.covariates.resize(p);
    for (std::size_t j = 0; j < p; ++j) {
        auto arm_stats = [&](const ArmMoments& arm, SMDEntry& e, bool treated) {
            const auto n = static_cast<double>(arm.n);
            const double mean = arm.sum_x[j].value() / n;
            const double var =
                arm.n > 1 ? (arm.sum_xx[j].value() - n * mean * mean) / (n - 1.0) : 0.0;
            const double wmean = arm.sum_wx[j].value() / arm.sum_w.value();
            if (treated) {
                e.mean_treated = mean;
                e.var_treated = var;
                e.weighted_mean_treated = wmean;
            } else {
                e.mean_control = mean;
                e.var_control = var;
                e.weighted_mean_control = wmean;
            }
        };
        SMDEntry& e = report.covariates[j];
        arm_stats(moments.treated, e, true);
        arm_stats(moments.control, e, false);
        const double denom = std::sqrt(0.5 * (e.var_treated + e.var_control));
        if (denom > 0.0) {
            e.smd_before = (e.mean_treated - e.mean_control) / denom;
            e.smd_after = (e.weighted_mean_treated - e.weighted_mean_control) / denom;
        } else {
            e.smd_before = std::numeric_limits<double>::quiet_NaN();
            e.smd_after = std::numeric_limits<double>::quiet_NaN();
        }
    }
    return report;
}

inline SMDReport pooled_smd(const CenterCohort& cohort, const Eigen::VectorXd& weights) {
    return assemble_smd(local_moments(cohort, weights));
}

} // namespace fedeca
