#pragma once

#include <vector>

#include "moie/carver.hpp"
#include "moie/fol.hpp"

namespace moie::analysis {

// Local-explanation sweep over every expert-covered sample of a dataset,
// aggregated into one DNF per (expert, predicted class).
struct ExplainResult {
    std::vector<fol::Conjunction> conjunctions;  // one per covered sample
    std::vector<fol::DnfFormula> formulas;
    std::vector<fol::RoutedSample> routed;
    double fidelity = 0.0;
    int prediction_preserved = 0;  // samples whose masked prediction matches
    int covered = 0;
};

ExplainResult explain_dataset(const carver::MoIE& moie, const data::Dataset& ds, const Matrix& concepts_full);

// Raw projections <embedding, q_i> onto the selected bank directions,
// L2-normalized per sample; all-zero rows are left as zeros with a warning.
Matrix concept_scores(const Matrix& embeddings, const concepts::ConceptBank& bank, const std::vector<int>& top_set);

struct CompletenessConfig {
    int hidden = 128;     // projection width; 1000 matches the full-scale setting
    int restarts = 3;
    double lr = 0.005;
    int epochs = 150;
    double a_r = -1.0;  // random-guess accuracy; <0 means 1/num_classes
    bool noise_control = false;  // replace concept scores with seeded noise
    std::uint64_t seed = 0;
};

struct CompletenessResult {
    double eta = 0.0;
    double concept_model_accuracy = 0.0;  // best val accuracy over restarts
    double f0_accuracy = 0.0;
    double a_r = 0.0;
};

// Train a two-layer projection from concept scores back to embedding space,
// score label agreement of h0 over it on the validation split, and normalize
// against the blackbox accuracy: eta = (acc - a_r) / (f0_acc - a_r).
CompletenessResult completeness(const carver::Blackbox& f0, const concepts::ConceptBank& bank,
                                const std::vector<int>& top_set, const data::Dataset& train,
                                const data::Dataset& val, int num_classes, const CompletenessConfig& cfg);

// Concepts ranked by their maximum attention weight over all experts and
// classes of the MoIE; full-space indices, ties toward the lower index.
std::vector<int> rank_concepts_by_attention(const carver::MoIE& moie);

struct AblationPoint {
    int n = 0;
    double accuracy = 0.0;  // over expert-covered samples
    double drop = 0.0;      // baseline accuracy - ablated accuracy
};

// Zero the top-N attention concepts of each covered sample's expert and
// predicted class, re-predict through the same route. random_baseline picks
// the N zeroed concepts uniformly per sample instead.
std::vector<AblationPoint> zero_out_ablation(const carver::MoIE& moie, const data::Dataset& test,
                                             const Matrix& test_concepts_full, const std::vector<int>& top_n_list,
                                             bool random_baseline = false, std::uint64_t seed = 0);

enum class InterventionScope { All, Hard };

struct InterventionResult {
    int n = 0;
    double accuracy = 0.0;      // after intervention, over scope samples
    double base_accuracy = 0.0; // same routes, no intervention
    int scope_count = 0;
};

// Replace each covered sample's top-N attention concepts with ground-truth
// values and re-predict through the same route. Hard scope restricts to
// samples routed to the last two experts.
InterventionResult intervene(const carver::MoIE& moie, const data::Dataset& test, const Matrix& test_concepts_full,
                             int n, InterventionScope scope);

}  // namespace moie::analysis
