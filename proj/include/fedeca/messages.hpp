#pragma once
#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fedeca/analytics.hpp"
#include "fedeca/cox.hpp"
#include "fedeca/domain.hpp"
#include "fedeca/exact_sum.hpp"

namespace fedeca {

// ============================================================================
// Round messages exchanged between the aggregator and the centers. The same
// typed structs flow through the in-process simulation backend and (encoded,
// see codec.hpp) the socket backend.
// ============================================================================

constexpr std::uint8_t kProtocolVersion = 1;

enum class Schema : std::uint8_t {
    hello = 1,
    hello_ack = 2,
    session_config = 3,
    ack = 4,
    error = 5,
    done = 6,
    times_request = 7,
    times_share = 8,
    propensity_request = 9,
    propensity_share = 10,
    weights_commit = 11,
    cox_setup = 12,
    cox_request = 13,
    cox_share = 14,
    robust_request = 15,
    robust_share = 16,
    keys_request = 17,
    keys_share = 18,
    bootstrap_plan = 19,
    bootstrap_request = 20,
    bootstrap_share = 21,
    km_request = 22,
    km_share = 23,
    moment_request = 24,
    moment_share = 25,
};

struct Hello {
    std::uint32_t center_id = 0;
    std::uint64_t n = 0;
    std::uint32_t p = 0;
    std::uint64_t n_treated = 0;
    std::uint64_t n_events = 0;
};

struct HelloAck {};

struct SessionConfig {
    Estimand estimand = Estimand::ate;
    double epsilon = kDefaultWeightClip;
    bool intercept = false;
    bool standardize = false;
    std::vector<std::uint32_t> extra_covariates; // adjusted IPTW columns
};

struct Ack {};

struct ErrorMsg {
    std::uint8_t code = 0; // ExitCode value
    std::string message;
};

struct DoneMsg {};

// scope: 0 = all events, 1 = control-arm events, 2 = treated-arm events
struct TimesRequest {
    std::uint8_t scope = 0;
};

struct TimesShare {
    std::vector<double> times;
};

struct PropensityRequest {
    Eigen::VectorXd theta;
    bool has_standardize = false;
    Eigen::VectorXd standardize_mean;
    Eigen::VectorXd standardize_scale;
};

struct PropensityShare {
    Eigen::VectorXd grad;
    Eigen::MatrixXd hess;
    double nll = 0.0; // summed local NLL, needed for the divergence check
    std::uint64_t n = 0;
};

struct WeightsCommit {
    Eigen::VectorXd theta_hat;
};

struct CoxSetup {
    std::vector<double> times; // global event-time grid
};

struct CoxRequest {
    Eigen::VectorXd beta;
};

struct CoxShareMsg {
    CoxShareList entries;
};

struct RobustRequest {
    Eigen::VectorXd beta_hat;
    Eigen::MatrixXd h_inv;
    std::vector<double> w_global;
    std::vector<double> zeta0_global;
    Eigen::MatrixXd zeta1_global;
};

struct RobustShare {
    Eigen::MatrixXd m;
};

struct KeysRequest {};

// (time, event, treated) per record in canonical order; the aggregator uses
// these to plan the global bootstrap and derive per-replicate event grids.
struct KeysShare {
    std::vector<double> times;
    std::vector<std::uint8_t> events;
    std::vector<std::uint8_t> treated;
};

struct ReplicateAssignment {
    std::uint32_t replicate_id = 0;
    // Per center: indices into that center's canonical order, with
    // multiplicity, sorted ascending.
    std::vector<std::vector<std::uint32_t>> per_center;
};

struct BootstrapPlan {
    std::vector<ReplicateAssignment> replicates;
};

struct Message;
using MessagePtr = std::shared_ptr<const Message>;

// Lockstep multiplexing: one envelope carries every active replicate's
// request (or share) for the round.
struct BootstrapRequest {
    std::vector<std::pair<std::uint32_t, MessagePtr>> items;
};

struct BootstrapShare {
    std::vector<std::pair<std::uint32_t, MessagePtr>> items;
};

struct KMRequest {
    std::uint8_t arm = 0; // 0 control, 1 treated
    std::vector<double> times;
};

struct KMShareMsg {
    std::vector<KMMassEntry> masses;
};

struct MomentRequest {
    bool weighted = false; // false: unit weights (standardization); true: IPTW
};

struct MomentShare {
    CohortMoments moments;
};

using Payload =
    std::variant<Hello, HelloAck, SessionConfig, Ack, ErrorMsg, DoneMsg, TimesRequest, TimesShare,
                 PropensityRequest, PropensityShare, WeightsCommit, CoxSetup, CoxRequest,
                 CoxShareMsg, RobustRequest, RobustShare, KeysRequest, KeysShare, BootstrapPlan,
                 BootstrapRequest, BootstrapShare, KMRequest, KMShareMsg, MomentRequest,
                 MomentShare>;

struct Message {
    Payload payload;
};

inline Schema schema_of(const Message& message) {
    struct Visitor {
        Schema operator()(const Hello&) const { return Schema::hello; }
        Schema operator()(const HelloAck&) const { return Schema::hello_ack; }
        Schema operator()(const SessionConfig&) const { return Schema::session_config; }
        Schema operator()(const Ack&) const { return Schema::ack; }
        Schema operator()(const ErrorMsg&) const { return Schema::error; }
        Schema operator()(const DoneMsg&) const { return Schema::done; }
        Schema operator()(const TimesRequest&) const { return Schema::times_request; }
        Schema operator()(const TimesShare&) const { return Schema::times_share; }
        Schema operator()(const PropensityRequest&) const { return Schema::propensity_request; }
        Schema operator()(const PropensityShare&) const { return Schema::propensity_share; }
        Schema operator()(const WeightsCommit&) const { return Schema::weights_commit; }
        Schema operator()(const CoxSetup&) const { return Schema::cox_setup; }
        Schema operator()(const CoxRequest&) const { return Schema::cox_request; }
        Schema operator()(const CoxShareMsg&) const { return Schema::cox_share; }
        Schema operator()(const RobustRequest&) const { return Schema::robust_request; }
        Schema operator()(const RobustShare&) const { return Schema::robust_share; }
        Schema operator()(const KeysRequest&) const { return Schema::keys_request; }
        Schema operator()(const KeysShare&) const { return Schema::keys_share; }
        Schema operator()(const BootstrapPlan&) const { return Schema::bootstrap_plan; }
        Schema operator()(const BootstrapRequest&) const { return Schema::bootstrap_request; }
        Schema operator()(const BootstrapShare&) const { return Schema::bootstrap_share; }
        Schema operator()(const KMRequest&) const { return Schema::km_request; }
        Schema operator()(const KMShareMsg&) const { return Schema::km_share; }
        Schema operator()(const MomentRequest&) const { return Schema::moment_request; }
        Schema operator()(const MomentShare&) const { return Schema::moment_share; }
    };
    return std::visit(Visitor{}, message.payload);
}

// One transported unit: version and round index frame a typed payload.
struct Envelope {
    std::uint32_t round = 0;
    Message message;
};

} // namespace fedeca
