#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "moie/matrix.hpp"

#include "json.hpp"

namespace moie::data {

// The {X, Y, C} tuple the whole pipeline runs on. X is already an embedding
// matrix; there is no raw-image path.
struct Dataset {
    Matrix embeddings;                       // [m x l]
    std::vector<int> labels;                 // [m], class ids
    Matrix concepts;                         // [m x n_c], observed values in [0,1]
    Matrix gt_concepts;                      // [m x n_c] binary ground truth; empty when unknown
    std::vector<int> subgroup;               // [m] or empty
    Matrix metadata;                         // [m x d] or empty
    std::vector<std::string> concept_names;  // size n_c
    std::string name;
    std::uint64_t seed = 0;
    int num_classes = 0;

    int size() const { return embeddings.rows; }
    int embed_dim() const { return embeddings.cols; }
    int n_concepts() const { return concepts.cols; }
    bool has_gt_concepts() const { return gt_concepts.rows > 0; }
    bool has_subgroup() const { return !subgroup.empty(); }
    bool has_metadata() const { return metadata.rows > 0; }

    void validate() const;
    Dataset select(const std::vector<std::size_t>& idx) const;
};

enum class RuleKind {
    XorPlusBit,  // 3 concepts {a,b,c}: label = 2*(a xor b) + c, 4 classes
    TwoBit,      // 2 concepts {a,b}: label = 2*a + b, 4 classes
    Majority3,   // 3 concepts: label = majority vote, 2 classes
    SingleConcept  // 1 concept: label = bit, 2 classes
};

const char* rule_name(RuleKind k);
RuleKind rule_from_name(const std::string& s);

struct SubgroupRule {
    RuleKind kind = RuleKind::XorPlusBit;
    std::vector<int> concept_ids;

    int num_classes() const;
    int eval(std::span<const std::uint8_t> bits) const;
};

struct SpuriousSpec {
    int concept_index = -1;  // -1: inactive
    double train_corr = 0.5;
    double test_corr = 0.5;
    double embed_gain = 1.0;  // scale of the concept's column in the mixing matrix
};

struct GenSpec {
    int num_classes = 4;
    int n_concepts = 16;
    int n_subgroups = 2;
    int embed_dim = 32;
    std::vector<SubgroupRule> rules;  // one per subgroup
    int subgroup_concept = 10;        // concept carrying the subgroup bit; ignored when n_subgroups == 1
    double rho = 0.15;                // fraction with labels independent of concepts
    std::vector<int> hard_region_concepts = {11, 12, 13};  // conjunction marking the identifiable hard region
    double concept_noise = 0.1;
    double embed_noise = 0.15;
    SpuriousSpec spurious;
    std::uint64_t mixing_seed = 9001;
    int train_m = 1800;
    int val_m = 600;
    int test_m = 600;

    void validate() const;
    static GenSpec default_spec();
};

struct GeneratedData {
    Dataset train, val, test;
};

GeneratedData generate(const GenSpec& spec, std::uint64_t seed);

// Fraction of samples whose spurious bit agrees with the label's target bit.
double spurious_agreement(const Dataset& ds, int spurious_concept);

// CSV: header row with emb_*, concept_*, optional gt_concept_*, label,
// optional subgroup, optional meta_* columns. '.' decimal, ',' separator.
void save_csv(const Dataset& ds, const std::string& path);
Dataset load_csv(const std::string& path);

// JSON-lines + <path>.manifest.json sidecar.
void save_jsonl(const Dataset& ds, const std::string& path);
Dataset load_jsonl(const std::string& path);

// Deterministic label-stratified partition. Ratios must be positive and sum
// to at most 1; rows beyond the ratio mass are dropped.
struct SplitResult {
    Dataset train, val, test;
};
SplitResult split(const Dataset& ds, const std::array<double, 3>& ratios, std::uint64_t seed);

nlohmann::json genspec_to_json(const GenSpec& spec);
GenSpec genspec_from_json(const nlohmann::json& j);

}  // namespace moie::data
