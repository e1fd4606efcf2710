#include "moie/shortcut.hpp"

#include <algorithm>
#include <cmath>

namespace moie::shortcut {

void MetadataSpec::validate(int n_concepts) const {
    if (metadata_concepts.empty()) throw InputError("MetadataSpec: no metadata concepts");
    for (int c : metadata_concepts)
        if (c < 0 || c >= n_concepts) throw InputError("MetadataSpec: concept index out of range");
    if (flag_threshold < 0.0 || flag_threshold > 1.0) throw InputError("MetadataSpec: flag threshold in [0,1]");
}

namespace {

// Solve A x = b for several right-hand sides via Gaussian elimination with
// partial pivoting; returns false on a near-singular pivot.
bool solve_linear(Matrix a, Matrix& rhs) {
    const int n = a.rows;
    double scale = 0.0;
    for (double v : a.data) scale = std::max(scale, std::abs(v));
    if (scale == 0.0) return false;
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
        if (std::abs(a(pivot, col)) < 1e-10 * scale) return false;
        if (pivot != col) {
            for (int c = 0; c < n; ++c) std::swap(a(pivot, c), a(col, c));
            for (int c = 0; c < rhs.cols; ++c) std::swap(rhs(pivot, c), rhs(col, c));
        }
        const double inv = 1.0 / a(col, col);
        for (int r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a(r, col) * inv;
            if (f == 0.0) continue;
            for (int c = col; c < n; ++c) a(r, c) -= f * a(col, c);
            for (int c = 0; c < rhs.cols; ++c) rhs(r, c) -= f * rhs(col, c);
        }
    }
    for (int r = 0; r < n; ++r) {
        const double inv = 1.0 / a(r, r);
        for (int c = 0; c < rhs.cols; ++c) rhs(r, c) *= inv;
    }
    return true;
}

struct OlsFit {
    std::vector<double> meta_mean;
    Matrix beta;  // [d x n_features], metadata coefficients only
};

OlsFit ols_fit(const Matrix& features, const Matrix& metadata) {
    const int m = features.rows;
    const int d = metadata.cols;
    if (metadata.rows != m) throw ContractError("mdn: feature/metadata row mismatch");
    if (m <= d + 1) throw InputError("mdn: need more samples than metadata columns plus one");

    // normal equations over design [1, M]
    Matrix a(d + 1, d + 1);
    a(0, 0) = static_cast<double>(m);
    for (int i = 0; i < d; ++i) {
        double s = 0.0;
        for (int j = 0; j < m; ++j) s += metadata(j, i);
        a(0, i + 1) = s;
        a(i + 1, 0) = s;
    }
    for (int i = 0; i < d; ++i)
        for (int k = i; k < d; ++k) {
            double s = 0.0;
            for (int j = 0; j < m; ++j) s += metadata(j, i) * metadata(j, k);
            a(i + 1, k + 1) = s;
            a(k + 1, i + 1) = s;
        }
    Matrix rhs(d + 1, features.cols);
    for (int c = 0; c < features.cols; ++c) {
        double s0 = 0.0;
        for (int j = 0; j < m; ++j) s0 += features(j, c);
        rhs(0, c) = s0;
        for (int i = 0; i < d; ++i) {
            double s = 0.0;
            for (int j = 0; j < m; ++j) s += metadata(j, i) * features(j, c);
            rhs(i + 1, c) = s;
        }
    }

    Matrix solved = rhs;
    if (!solve_linear(a, solved)) {
        log::warn("mdn_residualize: rank-deficient metadata, falling back to ridge (lambda 1e-6)");
        Matrix ridge = a;
        for (int i = 0; i < ridge.rows; ++i) ridge(i, i) += 1e-6;
        solved = rhs;
        if (!solve_linear(ridge, solved)) throw NumericError("mdn_residualize: ridge system still singular");
    }

    OlsFit fit;
    fit.meta_mean.assign(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < d; ++i) {
        double s = 0.0;
        for (int j = 0; j < m; ++j) s += metadata(j, i);
        fit.meta_mean[static_cast<std::size_t>(i)] = s / m;
    }
    fit.beta = Matrix(d, features.cols);
    for (int i = 0; i < d; ++i)
        for (int c = 0; c < features.cols; ++c) fit.beta(i, c) = solved(i + 1, c);
    return fit;
}

}  // namespace

MdnModel mdn_fit(const Matrix& features, const Matrix& metadata) {
    const OlsFit fit = ols_fit(features, metadata);
    MdnModel model;
    model.meta_mean = fit.meta_mean;
    model.beta = fit.beta;
    return model;
}

Matrix MdnModel::apply(const Matrix& features, const Matrix& metadata) const {
    if (metadata.cols != beta.rows || features.cols != beta.cols)
        throw ContractError("MdnModel::apply: shape mismatch");
    if (metadata.rows != features.rows) throw ContractError("MdnModel::apply: row mismatch");
    Matrix out = features;
    for (int j = 0; j < features.rows; ++j)
        for (int c = 0; c < features.cols; ++c) {
            double adj = 0.0;
            for (int i = 0; i < metadata.cols; ++i)
                adj += (metadata(j, i) - meta_mean[static_cast<std::size_t>(i)]) * beta(i, c);
            out(j, c) -= adj;
        }
    return out;
}

Matrix mdn_residualize(const Matrix& features, const Matrix& metadata) {
    return mdn_fit(features, metadata).apply(features, metadata);
}

SpuriousReport detect_spurious(const std::vector<fol::DnfFormula>& formulas, const MetadataSpec& spec) {
    SpuriousReport report;
    for (const auto& f : formulas) {
        SpuriousFlag flag;
        flag.class_id = f.class_id;
        flag.expert_id = f.expert_id;
        flag.conjunctions = static_cast<int>(f.conjunctions.size());
        int hits = 0;
        for (const auto& conj : f.conjunctions) {
            bool has = false;
            for (const auto& lit : conj.literals)
                if (std::find(spec.metadata_concepts.begin(), spec.metadata_concepts.end(), lit.concept_index) !=
                    spec.metadata_concepts.end()) {
                    has = true;
                    break;
                }
            if (has) ++hits;
        }
        flag.fraction = flag.conjunctions > 0 ? static_cast<double>(hits) / flag.conjunctions : 0.0;
        report.per_class_expert.push_back(flag);
        if (flag.conjunctions > 0 && flag.fraction >= spec.flag_threshold) report.flagged.push_back(flag);
    }
    return report;
}

SubgroupGap subgroup_gap(const std::vector<int>& predictions, const data::Dataset& ds, int metadata_concept) {
    if (static_cast<int>(predictions.size()) != ds.size()) throw ContractError("subgroup_gap: size mismatch");
    if (!ds.has_gt_concepts()) throw InputError("subgroup_gap: dataset has no ground-truth concepts");
    SubgroupGap gap;
    int aligned_ok = 0, conflicting_ok = 0;
    for (int j = 0; j < ds.size(); ++j) {
        const int target = 2 * ds.labels[static_cast<std::size_t>(j)] >= ds.num_classes ? 1 : 0;
        const bool aligned = static_cast<int>(ds.gt_concepts(j, metadata_concept)) == target;
        const bool ok = predictions[static_cast<std::size_t>(j)] == ds.labels[static_cast<std::size_t>(j)];
        if (aligned) {
            ++gap.aligned_count;
            aligned_ok += ok;
        } else {
            ++gap.conflicting_count;
            conflicting_ok += ok;
        }
    }
    if (gap.aligned_count == 0 || gap.conflicting_count == 0)
        throw PipelineError("subgroup_gap: one alignment group is empty");
    gap.aligned_accuracy = static_cast<double>(aligned_ok) / gap.aligned_count;
    gap.conflicting_accuracy = static_cast<double>(conflicting_ok) / gap.conflicting_count;
    gap.gap = gap.aligned_accuracy - gap.conflicting_accuracy;
    return gap;
}

namespace {

std::vector<int> cascade_labels(const carver::MoIE& moie, const data::Dataset& ds, const Matrix& concepts_full) {
    const auto preds = carver::moie_predict_batch(moie, concepts_full, ds.embeddings);
    std::vector<int> out(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) out[i] = preds[i].label;
    return out;
}

std::vector<int> argmax_labels(const Matrix& logits) {
    std::vector<int> out(static_cast<std::size_t>(logits.rows));
    for (int j = 0; j < logits.rows; ++j) out[static_cast<std::size_t>(j)] = numcore::argmax(logits.row(j));
    return out;
}

}  // namespace

FixReport fix_shortcut(const carver::Blackbox& f0_biased, const data::GeneratedData& splits, const FixConfig& cfg,
                       std::uint64_t seed) {
    const auto& train = splits.train;
    const auto& val = splits.val;
    const auto& test = splits.test;
    cfg.metadata.validate(train.n_concepts());
    if (!train.has_metadata()) throw InputError("fix_shortcut: dataset has no metadata tags");
    const int spur = cfg.metadata.metadata_concepts.front();

    FixReport report;

    // biased run
    concepts::ProbeConfig probe_cfg = cfg.probes;
    probe_cfg.seed = derive_seed(seed, 61);
    const auto bank_biased = concepts::train_probes(train, val, probe_cfg);
    report.spurious_probe_score_biased = bank_biased.scores[static_cast<std::size_t>(spur)];
    const auto used_biased = concepts::filter_concepts(bank_biased, cfg.concept_filter_threshold);

    const Matrix train_concepts_b = concepts::predict_concepts(bank_biased, train.embeddings);
    const Matrix test_concepts_b = concepts::predict_concepts(bank_biased, test.embeddings);
    report.biased_moie =
        carver::carve(f0_biased, train, train_concepts_b, used_biased, cfg.schedule, cfg.hyper, derive_seed(seed, 62));

    const auto explain_b = analysis::explain_dataset(report.biased_moie, test, test_concepts_b);
    report.biased_detection = detect_spurious(explain_b.formulas, cfg.metadata);
    report.biased_gap = subgroup_gap(cascade_labels(report.biased_moie, test, test_concepts_b), test, spur);
    report.biased_f0_gap = subgroup_gap(argmax_labels(f0_biased.logits(test.embeddings)), test, spur);

    // residualize the embeddings on the metadata, coefficients fit on train
    const MdnModel mdn = mdn_fit(train.embeddings, train.metadata);
    data::Dataset train_r = train;
    data::Dataset val_r = val;
    data::Dataset test_r = test;
    train_r.embeddings = mdn.apply(train.embeddings, train.metadata);
    val_r.embeddings = mdn.apply(val.embeddings, val.metadata);
    test_r.embeddings = mdn.apply(test.embeddings, test.metadata);

    // retrain the pieces downstream of the embedding
    const carver::Blackbox f0_robust = carver::train_blackbox(train_r, cfg.blackbox, derive_seed(seed, 63));
    probe_cfg.seed = derive_seed(seed, 64);
    const auto bank_robust = concepts::train_probes(train_r, val_r, probe_cfg);
    report.spurious_probe_score_robust = bank_robust.scores[static_cast<std::size_t>(spur)];
    const auto used_robust = concepts::filter_concepts(bank_robust, cfg.concept_filter_threshold);
    report.spurious_excluded_after_fix =
        std::find(used_robust.begin(), used_robust.end(), spur) == used_robust.end();

    const Matrix train_concepts_r = concepts::predict_concepts(bank_robust, train_r.embeddings);
    const Matrix test_concepts_r = concepts::predict_concepts(bank_robust, test_r.embeddings);
    report.robust_moie =
        carver::carve(f0_robust, train_r, train_concepts_r, used_robust, cfg.schedule, cfg.hyper, derive_seed(seed, 65));

    report.robust_gap = subgroup_gap(cascade_labels(report.robust_moie, test_r, test_concepts_r), test_r, spur);
    report.robust_f0_gap = subgroup_gap(argmax_labels(f0_robust.logits(test_r.embeddings)), test_r, spur);
    return report;
}

namespace {

nlohmann::json gap_to_json(const SubgroupGap& g) {
    return {{"aligned_accuracy", g.aligned_accuracy}, {"conflicting_accuracy", g.conflicting_accuracy},
            {"gap", g.gap},           {"aligned_count", g.aligned_count},
            {"conflicting_count", g.conflicting_count}};
}

nlohmann::json flags_to_json(const std::vector<SpuriousFlag>& flags) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& f : flags)
        out.push_back({{"class", f.class_id},
                       {"expert", f.expert_id},
                       {"fraction", f.fraction},
                       {"conjunctions", f.conjunctions}});
    return out;
}

}  // namespace

nlohmann::json fix_report_to_json(const FixReport& report) {
    nlohmann::json j;
    j["biased"] = {{"cascade_gap", gap_to_json(report.biased_gap)},
                   {"f0_gap", gap_to_json(report.biased_f0_gap)},
                   {"spurious_probe_score", report.spurious_probe_score_biased},
                   {"detection", flags_to_json(report.biased_detection.per_class_expert)},
                   {"flagged", flags_to_json(report.biased_detection.flagged)}};
    j["robust"] = {{"cascade_gap", gap_to_json(report.robust_gap)},
                   {"f0_gap", gap_to_json(report.robust_f0_gap)},
                   {"spurious_probe_score", report.spurious_probe_score_robust},
                   {"spurious_excluded", report.spurious_excluded_after_fix}};
    return j;
}

}  // namespace moie::shortcut
