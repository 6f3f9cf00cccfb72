#pragma once
#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "fedeca/domain.hpp"
#include "fedeca/errors.hpp"
#include "fedeca/rng.hpp"

namespace fedeca {

// ============================================================================
// Synthetic Cox-Weibull cohorts with covariate-dependent treatment
// allocation.
//
// Covariate rows are N(0, Sigma) with Sigma_{ij} = rho^|i-j|; the allocation
// coefficients are p^{-1/2} U(-shift, shift); event times follow
// S(t) = exp(-h t^nu) with h = hazard_ratio^a * exp(beta^T x); censoring is
// exponential with rate `dropout` (dropout = 0 disables censoring).
//
// Identical configs produce bit-identical cohorts. Patient i consumes only
// stream (seed, patient, i): p normals for covariates, one uniform for the
// treatment flag, two uniforms for event and censoring times.
// ============================================================================

struct SimConfig {
    Eigen::Index n = 1000;
    Eigen::Index p = 10;
    double rho = 0.5;          // Toeplitz decay in [0,1)
    double shift = 1.0;        // covariate-shift range, >= 0
    double hazard_ratio = 1.0; // multiplicative treatment effect, > 0
    double shape = 3.0;        // Weibull shape, > 0
    double dropout = 0.2;      // censoring rate, >= 0 (0 = no censoring)
    std::uint64_t seed = 0;

    void validate() const {
        if (n < 1 || p < 1) throw data_error("sim: n and p must be positive");
        if (!(rho >= 0.0 && rho < 1.0)) throw data_error("sim: rho must be in [0,1)");
        if (!(shift >= 0.0)) throw data_error("sim: shift must be >= 0");
        if (!(hazard_ratio > 0.0)) throw data_error("sim: hazard ratio must be > 0");
        if (!(shape > 0.0)) throw data_error("sim: shape must be > 0");
        if (!(dropout >= 0.0)) throw data_error("sim: dropout must be >= 0");
    }
};

struct GroundTruth {
    Eigen::VectorXd beta;       // outcome coefficients
    Eigen::VectorXd alpha;      // allocation coefficients
    Eigen::VectorXd propensity; // true q_i per patient
};

inline Eigen::MatrixXd toeplitz_covariance(Eigen::Index p, double rho) {
    Eigen::MatrixXd sigma(p, p);
    for (Eigen::Index i = 0; i < p; ++i)
        for (Eigen::Index j = 0; j < p; ++j) sigma(i, j) = std::pow(rho, std::abs(i - j));
    return sigma;
}

// Rows i.i.d. N(0, Sigma) via the Cholesky factor applied to standard normals.
inline Eigen::MatrixXd toeplitz_gaussian_covariates(Eigen::Index n, Eigen::Index p, double rho,
                                                    std::uint64_t seed) {
    if (!(rho >= 0.0 && rho < 1.0)) throw data_error("toeplitz: rho must be in [0,1)");
    const Eigen::MatrixXd sigma = toeplitz_covariance(p, rho);
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success) throw data_error("toeplitz: covariance not SPD");
    const Eigen::MatrixXd chol = llt.matrixL();

    Eigen::MatrixXd x(n, p);
    Eigen::VectorXd normals(p);
    for (Eigen::Index i = 0; i < n; ++i) {
        auto rng = stream(seed, StreamTag::patient, static_cast<std::uint64_t>(i));
        for (Eigen::Index j = 0; j < p; ++j) normals[j] = rng.next_normal();
        x.row(i) = (chol * normals).transpose();
    }
    return x;
}

struct TreatmentAssignment {
    std::vector<std::uint8_t> treatment;
    Eigen::VectorXd alpha;
    Eigen::VectorXd propensity;
};

inline TreatmentAssignment assign_treatment(const Eigen::MatrixXd& x, double shift,
                                            std::uint64_t seed) {
    if (!(shift >= 0.0)) throw data_error("assign_treatment: shift must be >= 0");
    const Eigen::Index n = x.rows();
    const Eigen::Index p = x.cols();
    TreatmentAssignment out;
    out.alpha.resize(p);
    auto alpha_rng = stream(seed, StreamTag::allocation_coefficients);
    const double scale = 1.0 / std::sqrt(static_cast<double>(p));
    for (Eigen::Index j = 0; j < p; ++j)
        out.alpha[j] = shift == 0.0 ? 0.0 : scale * alpha_rng.next_uniform(-shift, shift);

    out.propensity.resize(n);
    out.treatment.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const double logit = out.alpha.dot(x.row(i));
        out.propensity[i] = 1.0 / (1.0 + std::exp(-logit));
        auto rng = stream(seed, StreamTag::patient, static_cast<std::uint64_t>(i));
        for (Eigen::Index j = 0; j < p; ++j) rng.next_u64(); // skip covariate draws
        out.treatment[static_cast<std::size_t>(i)] = rng.next_bernoulli(out.propensity[i]);
    }
    return out;
}

struct Outcomes {
    Eigen::VectorXd time;
    std::vector<std::uint8_t> event;
};

inline Outcomes draw_outcomes(const Eigen::MatrixXd& x, const std::vector<std::uint8_t>& treatment,
                              const Eigen::VectorXd& beta, double hazard_ratio, double shape,
                              double dropout, std::uint64_t seed) {
    if (!(hazard_ratio > 0.0) || !(shape > 0.0) || !(dropout >= 0.0))
        throw data_error("draw_outcomes: bad parameters");
    const Eigen::Index n = x.rows();
    Outcomes out;
    out.time.resize(n);
    out.event.resize(static_cast<std::size_t>(n));
    const double log_mu = std::log(hazard_ratio);
    for (Eigen::Index i = 0; i < n; ++i) {
        auto rng = stream(seed, StreamTag::patient, static_cast<std::uint64_t>(i));
        for (Eigen::Index j = 0; j < x.cols(); ++j) rng.next_u64(); // covariates
        rng.next_u64();                                             // treatment flag
        const bool treated = treatment[static_cast<std::size_t>(i)] != 0;
        const double h = std::exp((treated ? log_mu : 0.0) + beta.dot(x.row(i)));
        const double u = rng.next_open_double();
        const double t_event = std::pow(-std::log(u) / h, 1.0 / shape);
        double t_censor = std::numeric_limits<double>::infinity();
        const double uc = rng.next_open_double();
        if (dropout > 0.0) t_censor = -std::log(uc) / dropout;
        out.time[i] = std::min(t_event, t_censor);
        out.event[static_cast<std::size_t>(i)] = t_event <= t_censor;
    }
    return out;
}

struct SimulatedCohort {
    CenterCohort cohort;
    GroundTruth truth;
};

inline SimulatedCohort generate_cohort(const SimConfig& config) {
    config.validate();
    Eigen::MatrixXd x = toeplitz_gaussian_covariates(config.n, config.p, config.rho, config.seed);

    auto beta_rng = stream(config.seed, StreamTag::outcome_coefficients);
    Eigen::VectorXd beta(config.p);
    for (Eigen::Index j = 0; j < config.p; ++j) beta[j] = beta_rng.next_normal();

    auto assignment = assign_treatment(x, config.shift, config.seed);
    auto outcomes = draw_outcomes(x, assignment.treatment, beta, config.hazard_ratio, config.shape,
                                  config.dropout, config.seed);

    SimulatedCohort out{
        CenterCohort(0, std::move(x), std::move(assignment.treatment), std::move(outcomes.time),
                     std::move(outcomes.event)),
        GroundTruth{std::move(beta), std::move(assignment.alpha), std::move(assignment.propensity)}};
    return out;
}

} // namespace fedeca
