#pragma once

#include <optional>
#include <string>
#include <vector>

#include "moie/concepts.hpp"
#include "moie/data.hpp"
#include "moie/selector.hpp"

namespace moie::carver {

// f^k = h^k over a frozen embedding. phi is an optional frozen dense map
// shared by every iteration; absent means the dataset embeddings are used
// directly.
struct Blackbox {
    std::optional<numcore::DenseNet> phi;
    numcore::DenseNet head;
    int iteration = 0;

    Matrix embed(const Matrix& raw_embeddings) const;
    Matrix logits(const Matrix& raw_embeddings) const;
    void validate() const;
    int num_classes() const { return head.output_dim(); }
};

struct BlackboxConfig {
    std::vector<int> hidden{64};
    std::vector<int> phi_hidden{};  // empty: identity phi
    numcore::OptKind optimizer = numcore::OptKind::Adam;
    double lr = 0.01;
    int epochs = 400;
    double weight_decay = 0.005;
};

Blackbox train_blackbox(const data::Dataset& train, const BlackboxConfig& cfg, std::uint64_t seed);

double accuracy(const Matrix& logits, const std::vector<int>& labels);

struct ExpertHyper {
    std::vector<int> expert_hidden{10};
    double t_lens = 0.7;
    double lambda_lens = 1e-4;
    elen::DistillConfig distill{};  // alpha_kd 0.9, t_kd 10
    std::vector<int> selector_hidden{16};
    double lambda_s = 32.0;
    double alpha_mix = 0.5;
    double lr = 0.01;
    int epochs = 900;
    double expert_weight_decay = 1e-3;  // trunk and gate only, never the relevance scores
    double residual_lr = 0.005;
    int residual_epochs = 500;
    double residual_weight_decay = 0.002;
    elen::DistillConfig residual_distill{0.25, 10.0};  // CE share anchors f^k where r carries little signal
    bool residual_warm_start = true;
    int max_fit_attempts = 3;
};

struct CarveSchedule {
    std::vector<double> tau;  // one per iteration; its length caps K
    double coverage_stop = 0.90;
    double residual_accuracy_stop = 0.70;
    int min_covered = 20;

    void validate() const;
};

struct IterationRecord {
    int k = 0;
    double zeta_train = 0.0;            // selected mass of iteration k over the full train set
    double hard_coverage = 0.0;         // newly claimed fraction at iteration k
    double cumulative_coverage = 0.0;   // claimed by experts 1..k
    int covered_count = 0;
    double expert_train_accuracy = 0.0;  // on the samples it claims (-1 when empty)
    double residual_train_accuracy = 0.0;  // f^k on the unclaimed train samples (-1 when empty)
    double residual_val_accuracy = -1.0;   // f^k on the unclaimed val samples, when val given
    std::string stop_reason;            // non-empty on the last record
};

struct MoIE {
    std::vector<selector::Selector> selectors;
    std::vector<elen::ElenExpert> experts;
    Blackbox residual;  // f^K
    std::vector<IterationRecord> records;
    std::vector<int> concept_indices;  // full-space ids every expert consumes
    int num_classes = 0;

    int k() const { return static_cast<int>(experts.size()); }
    void validate() const;
};

Matrix select_columns(const Matrix& full, const std::vector<int>& indices);

// Elementwise logit difference f_prev - g.
std::vector<double> residual_target(std::span<const double> f_prev_logits, std::span<const double> expert_logits);

struct FitExpertResult {
    selector::Selector sel;
    elen::ElenExpert expert;
    int attempts = 1;
};

// Joint selector+expert training against a fixed teacher, with the routing
// mass of earlier iterations frozen in history_weight. Collapsed selectors
// (coverage under 1e-6) are retried with a fresh seed.
FitExpertResult fit_expert_iteration(const Matrix& teacher_logits, const Matrix& concepts_used,
                                     const std::vector<int>& labels, const std::vector<double>& history_weight,
                                     double tau_k, const ExpertHyper& hyper, int num_classes, std::uint64_t seed);

// New head trained toward the residual targets, weighted per sample by
// prod_{i<=k}(1 - pi_i). The loss reuses the expert's distillation form with
// the residual logits as teacher (KL at t_kd plus the label CE term); phi
// stays untouched. Near-zero total weight skips training with a warning.
Blackbox fit_residual(const Blackbox& f_prev, const Matrix& residual_targets,
                      const std::vector<double>& residual_weights, const std::vector<int>& labels,
                      const Matrix& raw_embeddings, const ExpertHyper& hyper, std::uint64_t seed);

// Optional validation split for the residual-accuracy stop; without it the
// stop falls back to the train-side measurement.
struct CarveEval {
    const data::Dataset* val = nullptr;
    const Matrix* val_concepts_full = nullptr;
};

MoIE carve(const Blackbox& f0, const data::Dataset& train, const Matrix& train_concepts_full,
           const std::vector<int>& used_concepts, const CarveSchedule& schedule, const ExpertHyper& hyper,
           std::uint64_t seed, const CarveEval& eval = {});

struct Prediction {
    int label = -1;
    int route = 0;  // 1..K expert id, 0 residual
};

Prediction moie_predict(const MoIE& moie, std::span<const double> concepts_full, std::span<const double> embedding);
std::vector<Prediction> moie_predict_batch(const MoIE& moie, const Matrix& concepts_full, const Matrix& embeddings);

struct BucketRecord {
    std::string bucket;  // "expert_k" or "residual"
    int route = 0;
    double coverage = 0.0;
    double bucket_accuracy = -1.0;  // -1 encodes an empty bucket (null)
    double proportional_accuracy = 0.0;
    double f0_accuracy = -1.0;  // initial blackbox on this bucket
    int count = 0;
};

struct CoverageReport {
    std::vector<BucketRecord> buckets;
    double cascade_accuracy = 0.0;
    double f0_overall_accuracy = 0.0;
};

CoverageReport coverage_report(const MoIE& moie, const Blackbox& f0, const data::Dataset& test,
                               const Matrix& test_concepts_full);

nlohmann::json blackbox_to_json(const Blackbox& bb);
Blackbox blackbox_from_json(const nlohmann::json& j);

void save_moie(const MoIE& moie, const std::string& dir);
MoIE load_moie(const std::string& dir);

nlohmann::json report_to_json(const CoverageReport& report);

}  // namespace moie::carver
