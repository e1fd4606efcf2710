#pragma once

#include <span>
#include <vector>

#include "moie/elen.hpp"

namespace moie::selector {

// Gating network: concepts -> (0,1), plus its coverage target.
struct Selector {
    numcore::DenseNet gate;  // last activation sigmoid, single output
    double tau = 0.2;
    double lambda_s = 32.0;

    void validate() const;
    double pi(std::span<const double> concepts) const;
    std::vector<double> pi_batch(const Matrix& concepts) const;
};

Selector init_selector(int n_used, const std::vector<int>& hidden, double tau, double lambda_s, std::uint64_t seed);

struct SelectiveLossCfg {
    double lambda_s = 32.0;
    double alpha_mix = 0.5;  // mix of the selective objective and the coverage-free auxiliary

    void validate() const;
};

// Empirical mean of the selector outputs.
double coverage(std::span<const double> pi_values);

// lambda_s * max(0, tau - zeta)^2
double coverage_penalty(double tau, double zeta, double lambda_s);

// pi_k * prod_i (1 - pi_history_i): probability of reaching and taking expert k.
double routing_weight(std::span<const double> pi_history, double pi_k);

// prod_{i<=k} (1 - pi_i): probability of falling through to the residual.
double residual_weight(std::span<const double> pi_through_k);

// mean(weighted_losses) / coverage(pi); losses must already carry the routing
// weight. Coverage below 1e-6 raises (degenerate selector collapse).
double selective_risk(std::span<const double> weighted_losses, std::span<const double> pi_values);

enum class Route { Expert, Residual };
// Hard routing at inference: expert iff pi >= 0.5.
Route route(double pi_value);

// Everything fit_expert_iteration needs for one sample set with the history
// already folded in.
struct JointBatch {
    Matrix concepts;         // [m x n_used]
    Matrix teacher_logits;   // [m x num_classes]
    std::vector<int> labels;
    std::vector<double> history_weight;  // prod_{i<k}(1 - pi_i), 1.0 at k == 1

    int size() const { return concepts.rows; }
    void validate(int num_classes) const;
};

struct JointLossBreakdown {
    double risk = 0.0;
    double penalty = 0.0;
    double l_s = 0.0;    // risk + penalty
    double l_aux = 0.0;  // coverage-agnostic auxiliary
    double total = 0.0;  // alpha_mix * l_s + (1 - alpha_mix) * l_aux
    double zeta = 0.0;
};

// Joint objective for (expert, selector) at one iteration. When grad is
// non-empty it receives d(total)/d([expert params, selector params]).
JointLossBreakdown joint_loss(const elen::ElenExpert& expert, const Selector& sel, const JointBatch& batch,
                              const elen::DistillConfig& dcfg, const SelectiveLossCfg& scfg,
                              std::span<double> grad = {});

nlohmann::json selector_to_json(const Selector& sel);
Selector selector_from_json(const nlohmann::json& j);

}  // namespace moie::selector
