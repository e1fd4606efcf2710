#pragma once

#include <string>
#include <vector>

#include "moie/elen.hpp"

namespace moie::fol {

struct Literal {
    int concept_index = 0;  // full concept-space index
    bool negated = false;

    bool operator==(const Literal&) const = default;
    bool operator<(const Literal& o) const {
        return concept_index != o.concept_index ? concept_index < o.concept_index : negated < o.negated;
    }
};

struct Conjunction {
    std::vector<Literal> literals;  // sorted by concept index, no duplicates
    long sample_id = -1;
    int expert_id = -1;
    int predicted_class = -1;
    bool no_compression = false;  // percentile descent hit 0 without agreement

    void normalize();  // sort + reject duplicate concepts
    bool operator==(const Conjunction& o) const { return literals == o.literals; }
};

struct DnfFormula {
    int class_id = -1;
    int expert_id = -1;
    std::vector<Conjunction> conjunctions;
};

// value > threshold -> true (strict).
std::vector<std::uint8_t> binarize(std::span<const double> concept_values, double threshold = 0.5);

// Percentile-descent local explanation: start at the 99th percentile of the
// predicted class's attention row, mask concepts below it, and lower the
// percentile until the expert's prediction on the masked vector matches the
// unmasked prediction. Literal polarity comes from binarize(concepts).
Conjunction extract_local_fol(const elen::ElenExpert& expert, std::span<const double> concepts, long sample_id);

// DNF semantics over a binarized full concept vector.
bool eval(const Conjunction& conj, std::span<const std::uint8_t> values);
bool eval(const DnfFormula& formula, std::span<const std::uint8_t> values);

// Deduplicate, apply absorption (drop any conjunction that is a superset of
// another), order by literal count then lexicographically.
DnfFormula aggregate(const std::vector<Conjunction>& conjunctions);

// Fraction of covered samples whose predicted class's DNF is true while no
// other class's DNF of the same expert is. Formulas are keyed (expert, class).
struct RoutedSample {
    std::vector<std::uint8_t> concept_bits;  // binarized full concept vector
    int expert_id = -1;
    int predicted_class = -1;
};
double fidelity(const std::vector<DnfFormula>& formulas, const std::vector<RoutedSample>& samples);

// Nearest-rank percentile (p in [0,100]) of a value span.
double nearest_rank_percentile(std::span<const double> values, double p);

std::string to_text(const Conjunction& conj, const std::vector<std::string>& concept_names);
std::string to_text(const DnfFormula& formula, const std::vector<std::string>& concept_names,
                    const std::vector<std::string>& class_names);

nlohmann::json formula_to_json(const DnfFormula& formula);
DnfFormula formula_from_json(const nlohmann::json& j);

}  // namespace moie::fol
