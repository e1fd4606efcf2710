#include "moie/fol.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace moie::fol {

void Conjunction::normalize() {
    std::sort(literals.begin(), literals.end());
    for (std::size_t i = 1; i < literals.size(); ++i)
        if (literals[i].concept_index == literals[i - 1].concept_index)
            throw ContractError("Conjunction: concept appears twice");
    if (literals.empty()) throw ContractError("Conjunction: empty");
}

std::vector<std::uint8_t> binarize(std::span<const double> concept_values, double threshold) {
    std::vector<std::uint8_t> out(concept_values.size());
    for (std::size_t i = 0; i < concept_values.size(); ++i) out[i] = concept_values[i] > threshold ? 1 : 0;
    return out;
}

double nearest_rank_percentile(std::span<const double> values, double p) {
    if (values.empty()) throw ContractError("nearest_rank_percentile: empty input");
    if (p < 0.0 || p > 100.0) throw ContractError("nearest_rank_percentile: p outside [0,100]");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const auto n = sorted.size();
    std::size_t rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(n)));
    if (rank == 0) rank = 1;
    return sorted[rank - 1];
}

Conjunction extract_local_fol(const elen::ElenExpert& expert, std::span<const double> concepts, long sample_id) {
    const auto fwd = elen::elen_forward(expert, concepts);
    const int predicted = numcore::argmax(fwd.logits);
    const auto attn_row = to_vector(fwd.attn.row(predicted));

    std::vector<double> masked(concepts.size());
    std::vector<std::uint8_t> mask(concepts.size(), 1);
    bool agreed = false;
    int percentile = 99;
    for (; percentile >= 0; --percentile) {
        const double threshold = nearest_rank_percentile(attn_row, static_cast<double>(percentile));
        for (std::size_t c = 0; c < concepts.size(); ++c) {
            mask[c] = attn_row[c] >= threshold ? 1 : 0;
            masked[c] = mask[c] ? concepts[c] : 0.0;
        }
        const auto check = elen::elen_forward(expert, masked);
        if (numcore::argmax(check.logits) == predicted) {
            agreed = true;
            break;
        }
    }

    Conjunction conj;
    conj.sample_id = sample_id;
    conj.predicted_class = predicted;
    if (!agreed) {
        // full-concept fallback; cannot happen with a complete mask but kept
        // as the documented no-compression escape
        std::fill(mask.begin(), mask.end(), 1);
        conj.no_compression = true;
    }
    const auto bits = binarize(concepts);
    for (std::size_t c = 0; c < concepts.size(); ++c) {
        if (!mask[c]) continue;
        Literal lit;
        lit.concept_index = expert.concept_indices.empty() ? static_cast<int>(c)
                                                           : expert.concept_indices[c];
        lit.negated = bits[c] == 0;
        conj.literals.push_back(lit);
    }
    conj.normalize();
    return conj;
}

bool eval(const Conjunction& conj, std::span<const std::uint8_t> values) {
    for (const auto& lit : conj.literals) {
        if (lit.concept_index < 0 || lit.concept_index >= static_cast<int>(values.size()))
            throw ContractError("eval: literal index out of range");
        const bool v = values[static_cast<std::size_t>(lit.concept_index)] != 0;
        if (v == lit.negated) return false;
    }
    return true;
}

bool eval(const DnfFormula& formula, std::span<const std::uint8_t> values) {
    for (const auto& conj : formula.conjunctions)
        if (eval(conj, values)) return true;
    return false;
}

DnfFormula aggregate(const std::vector<Conjunction>& conjunctions) {
    if (conjunctions.empty()) throw ContractError("aggregate: no conjunctions");
    DnfFormula formula;
    formula.class_id = conjunctions.front().predicted_class;
    formula.expert_id = conjunctions.front().expert_id;
    for (const auto& c : conjunctions)
        if (c.predicted_class != formula.class_id || c.expert_id != formula.expert_id)
            throw ContractError("aggregate: mixed class or expert ids");

    // dedup
    std::vector<Conjunction> unique;
    for (const auto& c : conjunctions) {
        if (std::find(unique.begin(), unique.end(), c) == unique.end()) unique.push_back(c);
    }
    // absorption: drop any conjunction whose literal set contains another's
    std::vector<bool> dead(unique.size(), false);
    for (std::size_t a = 0; a < unique.size(); ++a) {
        for (std::size_t b = 0; b < unique.size(); ++b) {
            if (a == b || dead[a] || dead[b]) continue;
            const auto& small = unique[a].literals;
            const auto& big = unique[b].literals;
            if (small.size() > big.size()) continue;
            if (std::includes(big.begin(), big.end(), small.begin(), small.end())) dead[b] = true;
        }
    }
    for (std::size_t i = 0; i < unique.size(); ++i)
        if (!dead[i]) formula.conjunctions.push_back(unique[i]);

    std::sort(formula.conjunctions.begin(), formula.conjunctions.end(), [](const Conjunction& x, const Conjunction& y) {
        if (x.literals.size() != y.literals.size()) return x.literals.size() < y.literals.size();
        return x.literals < y.literals;
    });
    return formula;
}

double fidelity(const std::vector<DnfFormula>& formulas, const std::vector<RoutedSample>& samples) {
    if (samples.empty()) return 0.0;
    std::map<std::pair<int, int>, const DnfFormula*> by_key;
    for (const auto& f : formulas) by_key[{f.expert_id, f.class_id}] = &f;
    if (by_key.empty()) return 0.0;

    int ok = 0;
    for (const auto& s : samples) {
        const auto own = by_key.find({s.expert_id, s.predicted_class});
        if (own == by_key.end() || !eval(*own->second, s.concept_bits)) continue;
        bool clash = false;
        for (const auto& [key, f] : by_key) {
            if (key.first != s.expert_id || key.second == s.predicted_class) continue;
            if (eval(*f, s.concept_bits)) {
                clash = true;
                break;
            }
        }
        if (!clash) ++ok;
    }
    return static_cast<double>(ok) / static_cast<double>(samples.size());
}

namespace {

std::string literal_text(const Literal& lit, const std::vector<std::string>& names) {
    std::string base = lit.concept_index < static_cast<int>(names.size())
                           ? names[static_cast<std::size_t>(lit.concept_index)]
                           : "concept_" + std::to_string(lit.concept_index);
    return lit.negated ? "¬" + base : base;
}

}  // namespace

std::string to_text(const Conjunction& conj, const std::vector<std::string>& concept_names) {
    std::string out = "(";
    for (std::size_t i = 0; i < conj.literals.size(); ++i) {
        if (i) out += " ∧ ";
        out += literal_text(conj.literals[i], concept_names);
    }
    out += ")";
    return out;
}

std::string to_text(const DnfFormula& formula, const std::vector<std::string>& concept_names,
                    const std::vector<std::string>& class_names) {
    std::string cls = formula.class_id < static_cast<int>(class_names.size())
                          ? class_names[static_cast<std::size_t>(formula.class_id)]
                          : "class_" + std::to_string(formula.class_id);
    std::string out = cls + " ⇐ ";
    for (std::size_t i = 0; i < formula.conjunctions.size(); ++i) {
        if (i) out += " ∨ ";
        out += to_text(formula.conjunctions[i], concept_names);
    }
    return out;
}

nlohmann::json formula_to_json(const DnfFormula& formula) {
    nlohmann::json j;
    j["class"] = formula.class_id;
    j["expert"] = formula.expert_id;
    nlohmann::json cs = nlohmann::json::array();
    for (const auto& c : formula.conjunctions) {
        nlohmann::json lits = nlohmann::json::array();
        for (const auto& l : c.literals) lits.push_back({{"idx", l.concept_index}, {"neg", l.negated}});
        cs.push_back(std::move(lits));
    }
    j["conjunctions"] = std::move(cs);
    return j;
}

DnfFormula formula_from_json(const nlohmann::json& j) {
    DnfFormula f;
    f.class_id = j.at("class").get<int>();
    f.expert_id = j.at("expert").get<int>();
    for (const auto& cj : j.at("conjunctions")) {
        Conjunction c;
        c.predicted_class = f.class_id;
        c.expert_id = f.expert_id;
        for (const auto& lj : cj) c.literals.push_back({lj.at("idx").get<int>(), lj.at("neg").get<bool>()});
        c.normalize();
        f.conjunctions.push_back(std::move(c));
    }
    return f;
}

}  // namespace moie::fol
