#pragma once

#include <string>
#include <vector>

#include "moie/data.hpp"
#include "moie/numcore.hpp"

namespace moie::concepts {

enum class BankMode { Probe, Cav };

const char* bank_mode_name(BankMode m);
BankMode bank_mode_from_name(const std::string& s);

// One linear direction per concept plus its validation quality. Immutable
// after construction.
struct ConceptBank {
    std::vector<std::string> names;
    Matrix directions;            // [n_c x l], row i is q_i
    std::vector<double> biases;   // [n_c]
    std::vector<double> scores;   // validation accuracy or AUROC, in [0,1]
    BankMode mode = BankMode::Probe;

    int n_concepts() const { return directions.rows; }
    int embed_dim() const { return directions.cols; }
    void validate() const;
};

struct ProbeConfig {
    double lr = 0.05;
    int epochs = 150;
    double l2 = 1e-4;
    double auroc_prevalence = 0.2;  // below this, score with AUROC instead of accuracy
    std::uint64_t seed = 0;
};

// Train one hinge-loss linear probe per annotated concept; concepts constant
// in the training data are flagged degenerate with score 0.5.
ConceptBank train_probes(const data::Dataset& train, const data::Dataset& val, const ProbeConfig& cfg);

struct CavResult {
    std::vector<double> direction;
    double bias = 0.0;
    double train_hinge = 0.0;
};

// Linear separator between embedding sets, hinge loss + L2 by gradient descent.
CavResult cav_train(const Matrix& pos_embeddings, const Matrix& neg_embeddings, const ProbeConfig& cfg);

// c_i = <embedding, q_i> / ||q_i||^2 for every concept in the bank.
std::vector<double> cav_score(std::span<const double> embedding, const ConceptBank& bank);

// Predicted concept values for a whole dataset: sigmoid(w.x + b) in probe
// mode, the projection formula in cav mode.
Matrix predict_concepts(const ConceptBank& bank, const Matrix& embeddings);

// Indices with score strictly above threshold; throws PipelineError when empty.
std::vector<int> filter_concepts(const ConceptBank& bank, double threshold = 0.7);

// Rank-based AUROC with tied-rank handling.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

nlohmann::json bank_to_json(const ConceptBank& bank);
ConceptBank bank_from_json(const nlohmann::json& j);
void save_bank(const ConceptBank& bank, const std::string& path);
ConceptBank load_bank(const std::string& path);

}  // namespace moie::concepts
