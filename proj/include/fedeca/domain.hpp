#pragma once
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedeca/errors.hpp"

namespace fedeca {

// ============================================================================
// Survival-data domain types shared by every module: cohorts, event-time
// indexing and inverse-probability weights.
//
// Records are kept in input order; canonical_order is the permutation sorting
// them by (time, event, original index). Every summation in the library walks
// records in canonical order so that reductions are permutation-invariant and
// reproducible bit for bit.
// ============================================================================

enum class Estimand : std::uint8_t { ate = 0, att = 1, atc = 2 };

inline const char* to_string(Estimand e) {
    switch (e) {
        case Estimand::ate: return "ate";
        case Estimand::att: return "att";
        case Estimand::atc: return "atc";
    }
    return "?";
}

struct PatientRecord {
    Eigen::VectorXd covariates;
    bool treatment = false;
    double time = 0.0;
    bool event = false;
};

class CenterCohort {
public:
    CenterCohort() = default;

    CenterCohort(int center_id, Eigen::MatrixXd covariates, std::vector<std::uint8_t> treatment,
                 Eigen::VectorXd time, std::vector<std::uint8_t> event)
        : center_id_(center_id),
          covariates_(std::move(covariates)),
          treatment_(std::move(treatment)),
          time_(std::move(time)),
          event_(std::move(event)) {
        rebuild_canonical_order();
    }

    int center_id() const { return center_id_; }
    Eigen::Index size() const { return time_.size(); }
    Eigen::Index num_covariates() const { return covariates_.cols(); }

    const Eigen::MatrixXd& covariates() const { return covariates_; }
    const Eigen::VectorXd& time() const { return time_; }
    const std::vector<std::uint8_t>& treatment() const { return treatment_; }
    const std::vector<std::uint8_t>& event() const { return event_; }

    // Permutation sorting records by (time, event, original index).
    const std::vector<Eigen::Index>& canonical_order() const { return canonical_order_; }

    PatientRecord record(Eigen::Index i) const {
        return {covariates_.row(i).transpose(), treatment_[i] != 0, time_[i], event_[i] != 0};
    }

    Eigen::Index count_treated() const {
        return std::count(treatment_.begin(), treatment_.end(), std::uint8_t{1});
    }
    Eigen::Index count_events() const {
        return std::count(event_.begin(), event_.end(), std::uint8_t{1});
    }

private:
    void rebuild_canonical_order() {
        canonical_order_.resize(time_.size());
        std::iota(canonical_order_.begin(), canonical_order_.end(), Eigen::Index{0});
        std::sort(canonical_order_.begin(), canonical_order_.end(),
                  [&](Eigen::Index a, Eigen::Index b) {
                      if (time_[a] != time_[b]) return time_[a] < time_[b];
                      if (event_[a] != event_[b]) return event_[a] < event_[b];
                      return a < b;
                  });
    }

    int center_id_ = 0;
    Eigen::MatrixXd covariates_;
    std::vector<std::uint8_t> treatment_;
    Eigen::VectorXd time_;
    std::vector<std::uint8_t> event_;
    std::vector<Eigen::Index> canonical_order_;
};

// Validates raw rows (as parsed from the cohort CSV contract) into a cohort.
// Row and column names in errors are 0-based data rows, matching the CSV body.
inline CenterCohort validate_cohort(const std::vector<std::vector<double>>& rows, int center_id = 0) {
    if (rows.empty()) throw data_error("empty cohort");
    const std::size_t width = rows.front().size();
    if (width < 3) throw data_error("rows need at least one covariate plus treated,T,E");
    const auto p = static_cast<Eigen::Index>(width - 3);
    const auto n = static_cast<Eigen::Index>(rows.size());

    Eigen::MatrixXd covariates(n, p);
    std::vector<std::uint8_t> treatment(n), event(n);
    Eigen::VectorXd time(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& row = rows[static_cast<std::size_t>(i)];
        if (row.size() != width)
            throw data_error("ragged row " + std::to_string(i) + ": expected " +
                             std::to_string(width) + " columns, got " + std::to_string(row.size()));
        for (Eigen::Index j = 0; j < p; ++j) {
            const double v = row[static_cast<std::size_t>(j)];
            if (!std::isfinite(v))
                throw data_error("non-finite covariate X_" + std::to_string(j) + " at row " +
                                 std::to_string(i));
            covariates(i, j) = v;
        }
        const double treated = row[width - 3];
        const double t = row[width - 2];
        const double ev = row[width - 1];
        if (treated != 0.0 && treated != 1.0)
            throw data_error("non-binary treatment at row " + std::to_string(i));
        if (!std::isfinite(t) || t <= 0.0)
            throw data_error("nonpositive time at row " + std::to_string(i));
        if (ev != 0.0 && ev != 1.0)
            throw data_error("non-binary event at row " + std::to_string(i));
        treatment[static_cast<std::size_t>(i)] = treated == 1.0;
        time[i] = t;
        event[static_cast<std::size_t>(i)] = ev == 1.0;
    }
    return CenterCohort(center_id, std::move(covariates), std::move(treatment), std::move(time),
                        std::move(event));
}

// ============================================================================
// Event-time index: distinct true-event times, death sets and risk sets.
//
// Risk sets are suffixes of the canonical order (records sorted by time), so
// they are stored as offsets instead of materialized index lists: risk_set(s)
// is the span canonical_order[risk_begin[s]..n).
// ============================================================================

class EventIndex {
public:
    const std::vector<double>& distinct_event_times() const { return times_; }
    const std::vector<std::vector<Eigen::Index>>& death_sets() const { return deaths_; }

    std::span<const Eigen::Index> risk_set(std::size_t s) const {
        return {order_.data() + risk_begin_[s], order_.size() - static_cast<std::size_t>(risk_begin_[s])};
    }

    std::size_t num_times() const { return times_.size(); }

    friend EventIndex build_event_index(const CenterCohort& cohort);

private:
    std::vector<double> times_;
    std::vector<std::vector<Eigen::Index>> deaths_;
    std::vector<std::size_t> risk_begin_;
    std::vector<Eigen::Index> order_;
};

inline EventIndex build_event_index(const CenterCohort& cohort) {
    if (cohort.size() == 0) throw data_error("event index of empty cohort");
    EventIndex index;
    index.order_ = cohort.canonical_order();
    const auto& order = index.order_;
    const auto n = static_cast<std::size_t>(cohort.size());

    for (std::size_t pos = 0; pos < n;) {
        const double t = cohort.time()[order[pos]];
        std::size_t end = pos;
        std::vector<Eigen::Index> deaths;
        while (end < n && cohort.time()[order[end]] == t) {
            if (cohort.event()[order[end]]) deaths.push_back(order[end]);
            ++end;
        }
        if (!deaths.empty()) {
            index.times_.push_back(t);
            index.deaths_.push_back(std::move(deaths));
            index.risk_begin_.push_back(pos); // all records with time >= t
        }
        pos = end;
    }
    return index;
}

// ============================================================================
// IPTW weights.
// ============================================================================

struct WeightVector {
    Eigen::VectorXd weights;
    Estimand estimand = Estimand::ate;
    double epsilon = 1e-16;
};

constexpr double kDefaultWeightClip = 1e-16;

inline WeightVector compute_weights(const Eigen::VectorXd& scores,
                                    const std::vector<std::uint8_t>& treatment, Estimand estimand,
                                    double epsilon = kDefaultWeightClip) {
    if (scores.size() != static_cast<Eigen::Index>(treatment.size()))
        throw data_error("scores/treatment length mismatch");
    if (!(epsilon > 0.0)) throw data_error("epsilon must be positive");
    WeightVector out;
    out.estimand = estimand;
    out.epsilon = epsilon;
    out.weights.resize(scores.size());
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
        const double s = scores[i];
        if (!std::isfinite(s) || s <= 0.0 || s >= 1.0)
            throw data_error("propensity score outside (0,1) at index " + std::to_string(i));
        const bool treated = treatment[static_cast<std::size_t>(i)] != 0;
        double w = 0.0;
        switch (estimand) {
            case Estimand::ate:
                w = treated ? 1.0 / std::max(s, epsilon) : 1.0 / std::max(1.0 - s, epsilon);
                break;
            case Estimand::att:
                w = treated ? 1.0 : s / std::max(1.0 - s, epsilon);
                break;
            case Estimand::atc:
                w = treated ? (1.0 - s) / std::max(s, epsilon) : 1.0;
                break;
        }
        out.weights[i] = w;
    }
    return out;
}

} // namespace fedeca
