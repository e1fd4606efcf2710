#include "moie/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace moie::analysis {

Matrix concept_scores(const Matrix& embeddings, const concepts::ConceptBank& bank, const std::vector<int>& top_set) {
    if (embeddings.cols != bank.embed_dim()) throw ContractError("concept_scores: embedding dim mismatch");
    if (top_set.empty()) throw InputError("concept_scores: empty concept set");
    for (int c : top_set)
        if (c < 0 || c >= bank.n_concepts()) throw ContractError("concept_scores: concept index out of range");

    Matrix out(embeddings.rows, static_cast<int>(top_set.size()));
    bool warned = false;
    for (int j = 0; j < embeddings.rows; ++j) {
        double norm2 = 0.0;
        for (std::size_t i = 0; i < top_set.size(); ++i) {
            double dot = 0.0;
            const auto q = bank.directions.row(top_set[i]);
            for (int d = 0; d < bank.embed_dim(); ++d) dot += embeddings(j, d) * q[static_cast<std::size_t>(d)];
            out(j, static_cast<int>(i)) = dot;
            norm2 += dot * dot;
        }
        if (norm2 <= 0.0) {
            if (!warned) {
                log::warn("concept_scores: zero projection row left as zeros");
                warned = true;
            }
            continue;
        }
        const double inv = 1.0 / std::sqrt(norm2);
        for (std::size_t i = 0; i < top_set.size(); ++i) out(j, static_cast<int>(i)) *= inv;
    }
    return out;
}

CompletenessResult completeness(const carver::Blackbox& f0, const concepts::ConceptBank& bank,
                                const std::vector<int>& top_set, const data::Dataset& train,
                                const data::Dataset& val, int num_classes, const CompletenessConfig& cfg) {
    f0.validate();
    train.validate();
    val.validate();

    CompletenessResult result;
    result.a_r = cfg.a_r > 0.0 ? cfg.a_r : 1.0 / num_classes;
    result.f0_accuracy = carver::accuracy(f0.logits(val.embeddings), val.labels);
    const double denom = result.f0_accuracy - result.a_r;
    if (denom <= 0.0) throw NumericError("completeness: undefined score, blackbox at or below chance accuracy");

    Matrix v_train = concept_scores(train.embeddings, bank, top_set);
    Matrix v_val = concept_scores(val.embeddings, bank, top_set);
    if (cfg.noise_control) {
        Rng rng(derive_seed(cfg.seed, 606));
        for (double& x : v_train.data) x = rng.normal();
        for (double& x : v_val.data) x = rng.normal();
    }

    const Matrix head_train_target = f0.embed(train.embeddings);  // defines the projection's output width
    const int embed_out = head_train_target.cols;
    const int m = v_train.rows;

    double best = 0.0;
    for (int restart = 0; restart < cfg.restarts; ++restart) {
        numcore::DenseNet gamma = numcore::init_dense(
            {static_cast<int>(top_set.size()), cfg.hidden, embed_out},
            {numcore::Activation::Relu, numcore::Activation::Identity},
            derive_seed(cfg.seed, 700 + static_cast<std::uint64_t>(restart)));
        std::vector<double> params = gamma.get_params();
        numcore::OptState opt({numcore::OptKind::Adam, cfg.lr}, params.size(),
                              derive_seed(cfg.seed, 800 + static_cast<std::uint64_t>(restart)));
        std::vector<double> grad(params.size());
        std::vector<double> head_scratch(f0.head.param_count());

        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            gamma.set_params(params);
            const auto gcache = numcore::forward_cached(gamma, v_train);
            const auto hcache = numcore::forward_cached(f0.head, gcache.post.back());
            const Matrix& logits = hcache.post.back();
            Matrix dlogits(m, num_classes);
            for (int j = 0; j < m; ++j) {
                const auto p = numcore::softmax(logits.row(j));
                for (int c = 0; c < num_classes; ++c) {
                    dlogits(j, c) = p[static_cast<std::size_t>(c)];
                    if (c == train.labels[static_cast<std::size_t>(j)]) dlogits(j, c) -= 1.0;
                    dlogits(j, c) /= m;
                }
            }
            Matrix dembed;
            std::fill(head_scratch.begin(), head_scratch.end(), 0.0);
            numcore::backward(f0.head, hcache, dlogits, head_scratch, &dembed);  // head frozen
            std::fill(grad.begin(), grad.end(), 0.0);
            numcore::backward(gamma, gcache, dembed, grad);
            opt.apply(params, grad);
        }
        gamma.set_params(params);
        const Matrix val_logits = numcore::forward(f0.head, numcore::forward(gamma, v_val));
        best = std::max(best, carver::accuracy(val_logits, val.labels));
    }
    result.concept_model_accuracy = best;
    result.eta = (best - result.a_r) / denom;
    return result;
}

std::vector<int> rank_concepts_by_attention(const carver::MoIE& moie) {
    moie.validate();
    const int n_full =
        1 + *std::max_element(moie.concept_indices.begin(), moie.concept_indices.end());
    std::vector<double> score(static_cast<std::size_t>(n_full), 0.0);
    for (const auto& expert : moie.experts) {
        const Matrix a = elen::attention(expert);
        for (int i = 0; i < a.rows; ++i)
            for (int c = 0; c < a.cols; ++c) {
                const int full = expert.concept_indices.empty() ? c : expert.concept_indices[static_cast<std::size_t>(c)];
                score[static_cast<std::size_t>(full)] = std::max(score[static_cast<std::size_t>(full)], a(i, c));
            }
    }
    std::vector<int> order(static_cast<std::size_t>(n_full));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return score[static_cast<std::size_t>(x)] > score[static_cast<std::size_t>(y)]; });
    return order;
}

namespace {

struct RoutedPrediction {
    std::vector<carver::Prediction> preds;
    std::vector<int> covered;  // sample ids with an expert route
};

RoutedPrediction route_all(const carver::MoIE& moie, const data::Dataset& test, const Matrix& concepts_full) {
    RoutedPrediction out;
    out.preds = carver::moie_predict_batch(moie, concepts_full, test.embeddings);
    for (int j = 0; j < test.size(); ++j)
        if (out.preds[static_cast<std::size_t>(j)].route != 0) out.covered.push_back(j);
    return out;
}

}  // namespace

ExplainResult explain_dataset(const carver::MoIE& moie, const data::Dataset& ds, const Matrix& concepts_full) {
    moie.validate();
    ds.validate();
    const auto routed = route_all(moie, ds, concepts_full);
    ExplainResult result;
    result.covered = static_cast<int>(routed.covered.size());

    const int n_used = static_cast<int>(moie.concept_indices.size());
    std::map<std::pair<int, int>, std::vector<fol::Conjunction>> grouped;
    for (int j : routed.covered) {
        const auto& pred = routed.preds[static_cast<std::size_t>(j)];
        const auto& expert = moie.experts[static_cast<std::size_t>(pred.route - 1)];
        std::vector<double> sub(static_cast<std::size_t>(n_used));
        for (int i = 0; i < n_used; ++i)
            sub[static_cast<std::size_t>(i)] = concepts_full(j, moie.concept_indices[static_cast<std::size_t>(i)]);
        fol::Conjunction conj = fol::extract_local_fol(expert, sub, j);
        conj.expert_id = pred.route;
        if (!conj.no_compression) ++result.prediction_preserved;
        grouped[{pred.route, conj.predicted_class}].push_back(conj);

        fol::RoutedSample rs;
        rs.concept_bits = fol::binarize(concepts_full.row(j));
        rs.expert_id = pred.route;
        rs.predicted_class = conj.predicted_class;
        result.routed.push_back(std::move(rs));
        result.conjunctions.push_back(std::move(conj));
    }
    for (const auto& [key, conjs] : grouped) result.formulas.push_back(fol::aggregate(conjs));
    result.fidelity = fol::fidelity(result.formulas, result.routed);
    return result;
}

std::vector<AblationPoint> zero_out_ablation(const carver::MoIE& moie, const data::Dataset& test,
                                             const Matrix& test_concepts_full, const std::vector<int>& top_n_list,
                                             bool random_baseline, std::uint64_t seed) {
    moie.validate();
    test.validate();
    const int n_full = test_concepts_full.cols;
    for (int n : top_n_list)
        if (n < 0 || n > n_full) throw InputError("zero_out_ablation: N out of range");

    const auto routed = route_all(moie, test, test_concepts_full);
    if (routed.covered.empty()) throw PipelineError("zero_out_ablation: no expert-covered samples");

    double base_ok = 0;
    for (int j : routed.covered)
        if (routed.preds[static_cast<std::size_t>(j)].label == test.labels[static_cast<std::size_t>(j)]) ++base_ok;
    const double base_acc = base_ok / static_cast<double>(routed.covered.size());

    const int n_used = static_cast<int>(moie.concept_indices.size());
    std::vector<AblationPoint> curve;
    for (int n : top_n_list) {
        Rng rng(derive_seed(seed, 9000 + static_cast<std::uint64_t>(n)));
        const int n_eff = std::min(n, n_used);
        int ok = 0;
        for (int j : routed.covered) {
            const auto& pred = routed.preds[static_cast<std::size_t>(j)];
            const auto& expert = moie.experts[static_cast<std::size_t>(pred.route - 1)];
            std::vector<double> sub(static_cast<std::size_t>(n_used));
            for (int i = 0; i < n_used; ++i)
                sub[static_cast<std::size_t>(i)] = test_concepts_full(j, moie.concept_indices[static_cast<std::size_t>(i)]);
            std::vector<int> zero_local;
            if (random_baseline) {
                std::vector<int> all(static_cast<std::size_t>(n_used));
                std::iota(all.begin(), all.end(), 0);
                for (int i = 0; i < n_eff; ++i) {
                    const auto pick = rng.index(all.size() - static_cast<std::size_t>(i));
                    std::swap(all[pick], all[all.size() - 1 - static_cast<std::size_t>(i)]);
                }
                zero_local.assign(all.end() - n_eff, all.end());
            } else {
                zero_local = elen::top_concepts(expert, pred.label, n_eff);
            }
            for (int i : zero_local) sub[static_cast<std::size_t>(i)] = 0.0;
            const auto fwd = elen::elen_forward(expert, sub);
            if (numcore::argmax(fwd.logits) == test.labels[static_cast<std::size_t>(j)]) ++ok;
        }
        AblationPoint pt;
        pt.n = n;
        pt.accuracy = static_cast<double>(ok) / static_cast<double>(routed.covered.size());
        pt.drop = base_acc - pt.accuracy;
        curve.push_back(pt);
    }
    return curve;
}

InterventionResult intervene(const carver::MoIE& moie, const data::Dataset& test, const Matrix& test_concepts_full,
                             int n, InterventionScope scope) {
    moie.validate();
    test.validate();
    if (!test.has_gt_concepts()) throw InputError("intervene: dataset has no ground-truth concepts");
    if (n < 0 || n > test_concepts_full.cols) throw InputError("intervene: N out of range");

    const auto routed = route_all(moie, test, test_concepts_full);
    const int k = moie.k();
    std::vector<int> scope_samples;
    for (int j : routed.covered) {
        const int r = routed.preds[static_cast<std::size_t>(j)].route;
        if (scope == InterventionScope::Hard && k > 1 && r < k - 1) continue;
        scope_samples.push_back(j);
    }
    if (scope_samples.empty()) throw PipelineError("intervene: no samples in scope");

    const int n_used = static_cast<int>(moie.concept_indices.size());
    const int n_eff = std::min(n, n_used);
    int ok = 0, base_ok = 0;
    for (int j : scope_samples) {
        const auto& pred = routed.preds[static_cast<std::size_t>(j)];
        const auto& expert = moie.experts[static_cast<std::size_t>(pred.route - 1)];
        if (pred.label == test.labels[static_cast<std::size_t>(j)]) ++base_ok;

        std::vector<double> sub(static_cast<std::size_t>(n_used));
        for (int i = 0; i < n_used; ++i)
            sub[static_cast<std::size_t>(i)] = test_concepts_full(j, moie.concept_indices[static_cast<std::size_t>(i)]);
        const auto top_local = elen::top_concepts(expert, pred.label, n_eff);
        for (int i : top_local) {
            const int full = moie.concept_indices[static_cast<std::size_t>(i)];
            sub[static_cast<std::size_t>(i)] = test.gt_concepts(j, full);
        }
        const auto fwd = elen::elen_forward(expert, sub);
        if (numcore::argmax(fwd.logits) == test.labels[static_cast<std::size_t>(j)]) ++ok;
    }
    InterventionResult result;
    result.n = n;
    result.scope_count = static_cast<int>(scope_samples.size());
    result.accuracy = static_cast<double>(ok) / result.scope_count;
    result.base_accuracy = static_cast<double>(base_ok) / result.scope_count;
    return result;
}

}  // namespace moie::analysis
