#pragma once

#include <map>
#include <string>
#include <vector>

#include "moie/analysis.hpp"
#include "moie/fol.hpp"

namespace moie::shortcut {

struct MetadataSpec {
    std::vector<int> metadata_concepts;  // planted spurious concept ids
    double flag_threshold = 0.3;         // fraction of conjunctions carrying one

    void validate(int n_concepts) const;
};

// Closed-form least-squares residualization: per feature column f, fit
// f ~ b0 + M b and subtract (M - mean(M)) b, keeping the column mean.
// Rank-deficient metadata falls back to ridge (lambda 1e-6) with a warning.
Matrix mdn_residualize(const Matrix& features, const Matrix& metadata);

// Fit on one matrix, apply to others with the same coefficients.
struct MdnModel {
    std::vector<double> meta_mean;      // [d]
    Matrix beta;                        // [d x n_features]

    Matrix apply(const Matrix& features, const Matrix& metadata) const;
};
MdnModel mdn_fit(const Matrix& features, const Matrix& metadata);

struct SpuriousFlag {
    int class_id = -1;
    int expert_id = -1;
    double fraction = 0.0;  // conjunctions containing a metadata concept
    int conjunctions = 0;
};

struct SpuriousReport {
    std::vector<SpuriousFlag> per_class_expert;  // every (class, expert) pair seen
    std::vector<SpuriousFlag> flagged;           // fraction >= threshold
    bool any_flagged() const { return !flagged.empty(); }
};

SpuriousReport detect_spurious(const std::vector<fol::DnfFormula>& formulas, const MetadataSpec& spec);

// Accuracy split by metadata alignment: samples whose spurious bit matches
// the label's target bit vs. those where it conflicts.
struct SubgroupGap {
    double aligned_accuracy = 0.0;
    double conflicting_accuracy = 0.0;
    double gap = 0.0;  // aligned - conflicting
    int aligned_count = 0;
    int conflicting_count = 0;
};

SubgroupGap subgroup_gap(const std::vector<int>& predictions, const data::Dataset& ds, int metadata_concept);

struct FixConfig {
    carver::BlackboxConfig blackbox;
    concepts::ProbeConfig probes;
    double concept_filter_threshold = 0.7;
    carver::CarveSchedule schedule;
    carver::ExpertHyper hyper;
    MetadataSpec metadata;
};

struct FixReport {
    SubgroupGap biased_gap;        // biased cascade on the decorrelated test set
    SubgroupGap robust_gap;        // post-fix cascade
    SubgroupGap biased_f0_gap;
    SubgroupGap robust_f0_gap;
    double spurious_probe_score_biased = 0.0;
    double spurious_probe_score_robust = 0.0;
    bool spurious_excluded_after_fix = false;
    SpuriousReport biased_detection;
    carver::MoIE robust_moie;
    carver::MoIE biased_moie;
};

// carve biased -> detect via FOL -> residualize embeddings on metadata ->
// retrain blackbox head + concepts -> filter -> re-carve -> report.
FixReport fix_shortcut(const carver::Blackbox& f0_biased, const data::GeneratedData& splits, const FixConfig& cfg,
                       std::uint64_t seed);

nlohmann::json fix_report_to_json(const FixReport& report);

}  // namespace moie::shortcut
