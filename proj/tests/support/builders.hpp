#pragma once
// Shared cohort builders for the unit tests.

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "fedeca/domain.hpp"
#include "fedeca/rng.hpp"

namespace builders {

struct Row {
    std::vector<double> x;
    bool treated = false;
    double time = 1.0;
    bool event = true;
};

inline fedeca::CenterCohort cohort_from_rows(const std::vector<Row>& rows, int center_id = 0) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto p = static_cast<Eigen::Index>(rows.front().x.size());
    Eigen::MatrixXd x(n, p);
    Eigen::VectorXd t(n);
    std::vector<std::uint8_t> a(rows.size()), e(rows.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& row = rows[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < p; ++j) x(i, j) = row.x[static_cast<std::size_t>(j)];
        t[i] = row.time;
        a[static_cast<std::size_t>(i)] = row.treated;
        e[static_cast<std::size_t>(i)] = row.event;
    }
    return fedeca::CenterCohort(center_id, std::move(x), std::move(a), std::move(t), std::move(e));
}

// Random small cohort with distinct times and both arms present.
inline fedeca::CenterCohort random_cohort(std::uint64_t seed, int n, int p,
                                          double event_rate = 0.7) {
    auto rng = fedeca::Xoshiro256(seed);
    std::vector<Row> rows;
    for (int i = 0; i < n; ++i) {
        Row row;
        for (int j = 0; j < p; ++j) row.x.push_back(rng.next_normal());
        row.treated = (i < n / 2) ? (i % 2 == 0) : rng.next_bernoulli(0.5);
        row.time = rng.next_open_double() * 10.0 + 0.01;
        row.event = rng.next_bernoulli(event_rate);
        rows.push_back(row);
    }
    rows[0].treated = true; // both arms guaranteed
    rows[1].treated = false;
    rows[0].event = true;
    return cohort_from_rows(rows);
}

inline Eigen::VectorXd random_weights(std::uint64_t seed, Eigen::Index n, double lo = 0.5,
                                      double hi = 4.0) {
    auto rng = fedeca::Xoshiro256(seed);
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i) w[i] = rng.next_uniform(lo, hi);
    return w;
}

// Splits a cohort's rows round-robin into k sub-cohorts (kernel-level
// federation emulation; the runtime splitter has its own tests).
inline std::vector<fedeca::CenterCohort> round_robin_split(const fedeca::CenterCohort& cohort,
                                                           int k) {
    std::vector<std::vector<Row>> parts(static_cast<std::size_t>(k));
    for (Eigen::Index i = 0; i < cohort.size(); ++i) {
        Row row;
        row.x.resize(static_cast<std::size_t>(cohort.num_covariates()));
        for (Eigen::Index j = 0; j < cohort.num_covariates(); ++j)
            row.x[static_cast<std::size_t>(j)] = cohort.covariates()(i, j);
        row.treated = cohort.treatment()[static_cast<std::size_t>(i)] != 0;
        row.time = cohort.time()[i];
        row.event = cohort.event()[static_cast<std::size_t>(i)] != 0;
        parts[static_cast<std::size_t>(i) % static_cast<std::size_t>(k)].push_back(row);
    }
    std::vector<fedeca::CenterCohort> out;
    for (int c = 0; c < k; ++c) out.push_back(cohort_from_rows(parts[static_cast<std::size_t>(c)], c));
    return out;
}

// The weights of a split, aligned with each sub-cohort's rows.
inline std::vector<Eigen::VectorXd> split_weights(const Eigen::VectorXd& pooled, int k) {
    std::vector<std::vector<double>> parts(static_cast<std::size_t>(k));
    for (Eigen::Index i = 0; i < pooled.size(); ++i)
        parts[static_cast<std::size_t>(i) % static_cast<std::size_t>(k)].push_back(pooled[i]);
    std::vector<Eigen::VectorXd> out;
    for (const auto& part : parts)
        out.push_back(Eigen::Map<const Eigen::VectorXd>(part.data(),
                                                        static_cast<Eigen::Index>(part.size())));
    return out;
}

} // namespace builders
