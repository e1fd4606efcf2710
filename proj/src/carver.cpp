#include "moie/carver.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace moie::carver {

Matrix Blackbox::embed(const Matrix& raw_embeddings) const {
    return phi ? numcore::forward(*phi, raw_embeddings) : raw_embeddings;
}

Matrix Blackbox::logits(const Matrix& raw_embeddings) const {
    return numcore::forward(head, embed(raw_embeddings));
}

void Blackbox::validate() const {
    head.validate();
    if (phi) {
        phi->validate();
        if (phi->output_dim() != head.input_dim()) throw ContractError("Blackbox: phi output != head input");
    }
}

double accuracy(const Matrix& logits, const std::vector<int>& labels) {
    if (logits.rows != static_cast<int>(labels.size())) throw ContractError("accuracy: size mismatch");
    if (logits.rows == 0) throw InputError("accuracy: empty");
    int ok = 0;
    for (int j = 0; j < logits.rows; ++j)
        if (numcore::argmax(logits.row(j)) == labels[static_cast<std::size_t>(j)]) ++ok;
    return static_cast<double>(ok) / logits.rows;
}

Blackbox train_blackbox(const data::Dataset& train, const BlackboxConfig& cfg, std::uint64_t seed) {
    train.validate();
    Blackbox bb;
    bb.iteration = 0;
    int head_in = train.embed_dim();
    if (!cfg.phi_hidden.empty()) {
        std::vector<int> dims{train.embed_dim()};
        std::vector<numcore::Activation> acts;
        for (int h : cfg.phi_hidden) {
            dims.push_back(h);
            acts.push_back(numcore::Activation::Relu);
        }
        bb.phi = numcore::init_dense(dims, acts, derive_seed(seed, 31));
        head_in = bb.phi->output_dim();
    }
    std::vector<int> dims{head_in};
    std::vector<numcore::Activation> acts;
    for (int h : cfg.hidden) {
        dims.push_back(h);
        acts.push_back(numcore::Activation::Relu);
    }
    dims.push_back(train.num_classes);
    acts.push_back(numcore::Activation::Identity);
    bb.head = numcore::init_dense(dims, acts, derive_seed(seed, 32));

    const Matrix inputs = bb.embed(train.embeddings);
    const int m = inputs.rows;
    std::vector<double> params = bb.head.get_params();
    numcore::OptState opt({cfg.optimizer, cfg.lr}, params.size(), seed);
    std::vector<double> grad(params.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        bb.head.set_params(params);
        const auto cache = numcore::forward_cached(bb.head, inputs);
        const Matrix& out = cache.post.back();
        Matrix dout(m, out.cols);
        for (int j = 0; j < m; ++j) {
            const auto p = numcore::softmax(out.row(j));
            for (int c = 0; c < out.cols; ++c) {
                dout(j, c) = p[static_cast<std::size_t>(c)];
                if (c == train.labels[static_cast<std::size_t>(j)]) dout(j, c) -= 1.0;
                dout(j, c) /= m;
            }
        }
        std::fill(grad.begin(), grad.end(), 0.0);
        numcore::backward(bb.head, cache, dout, grad);
        if (cfg.weight_decay > 0.0)
            for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += cfg.weight_decay * params[i];
        opt.apply(params, grad);
    }
    bb.head.set_params(params);
    bb.validate();
    return bb;
}

void CarveSchedule::validate() const {
    if (tau.empty()) throw ContractError("CarveSchedule: tau schedule empty");
    for (double t : tau)
        if (t <= 0.0 || t > 1.0) throw ContractError("CarveSchedule: tau must be in (0,1]");
    if (coverage_stop <= 0.0 || coverage_stop > 1.0) throw ContractError("CarveSchedule: coverage stop in (0,1]");
    if (min_covered < 0) throw ContractError("CarveSchedule: min_covered must be nonnegative");
}

void MoIE::validate() const {
    if (experts.empty() || experts.size() != selectors.size()) throw ContractError("MoIE: needs K >= 1 matched pairs");
    for (const auto& e : experts) {
        e.validate();
        if (e.concept_indices != concept_indices) throw ContractError("MoIE: expert concept set mismatch");
    }
    for (const auto& s : selectors) s.validate();
    residual.validate();
}

Matrix select_columns(const Matrix& full, const std::vector<int>& indices) {
    Matrix out(full.rows, static_cast<int>(indices.size()));
    for (std::size_t i = 0; i < indices.size(); ++i)
        if (indices[i] < 0 || indices[i] >= full.cols) throw ContractError("select_columns: index out of range");
    for (int j = 0; j < full.rows; ++j)
        for (std::size_t i = 0; i < indices.size(); ++i)
            out(j, static_cast<int>(i)) = full(j, indices[i]);
    return out;
}

std::vector<double> residual_target(std::span<const double> f_prev_logits, std::span<const double> expert_logits) {
    if (f_prev_logits.size() != expert_logits.size()) throw ContractError("residual_target: length mismatch");
    std::vector<double> r(f_prev_logits.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = f_prev_logits[i] - expert_logits[i];
    return r;
}

FitExpertResult fit_expert_iteration(const Matrix& teacher_logits, const Matrix& concepts_used,
                                     const std::vector<int>& labels, const std::vector<double>& history_weight,
                                     double tau_k, const ExpertHyper& hyper, int num_classes, std::uint64_t seed) {
    selector::JointBatch batch;
    batch.concepts = concepts_used;
    batch.teacher_logits = teacher_logits;
    batch.labels = labels;
    batch.history_weight = history_weight;
    batch.validate(num_classes);

    const selector::SelectiveLossCfg scfg{hyper.lambda_s, hyper.alpha_mix};
    for (int attempt = 1; attempt <= hyper.max_fit_attempts; ++attempt) {
        const std::uint64_t attempt_seed = derive_seed(seed, 40 + static_cast<std::uint64_t>(attempt));
        elen::ElenExpert expert = elen::init_expert(num_classes, concepts_used.cols, hyper.expert_hidden,
                                                    hyper.t_lens, hyper.lambda_lens, {}, attempt_seed);
        selector::Selector sel =
            selector::init_selector(concepts_used.cols, hyper.selector_hidden, tau_k, hyper.lambda_s, attempt_seed);

        std::vector<double> params = expert.get_params();
        const auto gate_params = sel.gate.get_params();
        params.insert(params.end(), gate_params.begin(), gate_params.end());
        numcore::OptState opt({numcore::OptKind::Adam, hyper.lr}, params.size(), attempt_seed);
        std::vector<double> grad(params.size());

        try {
            const std::size_t gamma_n = expert.gamma.size();
            for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
                expert.set_params(std::span<const double>(params).first(expert.param_count()));
                sel.gate.set_params(std::span<const double>(params).subspan(expert.param_count()));
                selector::joint_loss(expert, sel, batch, hyper.distill, scfg, grad);
                if (hyper.expert_weight_decay > 0.0)
                    for (std::size_t i = gamma_n; i < grad.size(); ++i)
                        grad[i] += hyper.expert_weight_decay * params[i];
                opt.apply(params, grad);
            }
            expert.set_params(std::span<const double>(params).first(expert.param_count()));
            sel.gate.set_params(std::span<const double>(params).subspan(expert.param_count()));
            // collapse check on the trained selector
            if (selector::coverage(sel.pi_batch(concepts_used)) < 1e-6)
                throw NumericError("selector coverage collapsed");
            return FitExpertResult{std::move(sel), std::move(expert), attempt};
        } catch (const NumericError& e) {
            log::warn("fit_expert_iteration attempt " + std::to_string(attempt) + " failed: " + e.what());
            if (attempt == hyper.max_fit_attempts)
                throw PipelineError("fit_expert_iteration: selector collapsed after " +
                                    std::to_string(hyper.max_fit_attempts) + " attempts");
        }
    }
    throw PipelineError("fit_expert_iteration: unreachable");
}

Blackbox fit_residual(const Blackbox& f_prev, const Matrix& residual_targets,
                      const std::vector<double>& residual_weights, const std::vector<int>& labels,
                      const Matrix& raw_embeddings, const ExpertHyper& hyper, std::uint64_t seed) {
    f_prev.validate();
    const int m = raw_embeddings.rows;
    if (residual_targets.rows != m || static_cast<int>(residual_weights.size()) != m ||
        static_cast<int>(labels.size()) != m)
        throw ContractError("fit_residual: size mismatch");

    Blackbox next;
    next.phi = f_prev.phi;  // shared frozen embedding
    next.head = f_prev.head;  // finetune from the previous head
    next.iteration = f_prev.iteration + 1;
    if (!hyper.residual_warm_start) {
        std::vector<int> dims{next.head.input_dim()};
        std::vector<numcore::Activation> acts;
        for (std::size_t i = 0; i + 1 < next.head.layers.size(); ++i) {
            dims.push_back(next.head.layers[i].out_dim());
            acts.push_back(next.head.layers[i].act);
        }
        dims.push_back(next.head.output_dim());
        acts.push_back(next.head.layers.back().act);
        next.head = numcore::init_dense(dims, acts, derive_seed(seed, 54));
    }

    double wmax = 0.0;
    for (double w : residual_weights) wmax = std::max(wmax, w);
    if (wmax < 1e-8) {
        log::warn("fit_residual: all residual weights ~ 0, nothing left to fit; keeping previous head");
        next.head = f_prev.head;
        return next;
    }

    const Matrix inputs = next.embed(raw_embeddings);
    std::vector<double> params = next.head.get_params();
    numcore::OptState opt({numcore::OptKind::Adam, hyper.residual_lr}, params.size(), derive_seed(seed, 55));
    std::vector<double> grad(params.size());
    for (int epoch = 0; epoch < hyper.residual_epochs; ++epoch) {
        next.head.set_params(params);
        const auto cache = numcore::forward_cached(next.head, inputs);
        const Matrix& out = cache.post.back();
        Matrix dout(m, out.cols);
        for (int j = 0; j < m; ++j) {
            const double w = residual_weights[static_cast<std::size_t>(j)];
            if (w == 0.0) continue;
            const auto g = elen::distill_loss_grad(out.row(j), residual_targets.row(j),
                                                   labels[static_cast<std::size_t>(j)], hyper.residual_distill);
            for (int c = 0; c < out.cols; ++c) dout(j, c) = w * g[static_cast<std::size_t>(c)] / m;
        }
        std::fill(grad.begin(), grad.end(), 0.0);
        numcore::backward(next.head, cache, dout, grad);
        if (hyper.residual_weight_decay > 0.0)
            for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += hyper.residual_weight_decay * params[i];
        opt.apply(params, grad);
    }
    next.head.set_params(params);
    return next;
}

MoIE carve(const Blackbox& f0, const data::Dataset& train, const Matrix& train_concepts_full,
           const std::vector<int>& used_concepts, const CarveSchedule& schedule, const ExpertHyper& hyper,
           std::uint64_t seed, const CarveEval& eval) {
    f0.validate();
    train.validate();
    schedule.validate();
    if (used_concepts.empty()) throw PipelineError("carve: zero usable concepts");
    if (train_concepts_full.rows != train.size()) throw ContractError("carve: concept rows != train rows");
    const bool has_val = eval.val != nullptr && eval.val_concepts_full != nullptr;

    const int m = train.size();
    const int num_classes = f0.num_classes();
    const Matrix concepts_used = select_columns(train_concepts_full, used_concepts);
    Matrix val_concepts_used;
    if (has_val) val_concepts_used = select_columns(*eval.val_concepts_full, used_concepts);

    MoIE moie;
    moie.concept_indices = used_concepts;
    moie.num_classes = num_classes;

    Matrix teacher = f0.logits(train.embeddings);
    Blackbox f_prev = f0;
    std::vector<double> hist_weight(static_cast<std::size_t>(m), 1.0);
    std::vector<int> claimed_by(static_cast<std::size_t>(m), 0);  // 0: unclaimed, else expert id
    std::vector<int> val_claimed;
    if (has_val) val_claimed.assign(static_cast<std::size_t>(eval.val->size()), 0);

    const int max_iters = static_cast<int>(schedule.tau.size());
    for (int k = 1; k <= max_iters; ++k) {
        // iteration k repeats the method on the current residual set: the
        // samples no earlier expert claimed. The coverage target stays
        // normalized by the full training set, so the effective in-subset
        // target grows as the pool drains.
        std::vector<int> remaining;
        for (int j = 0; j < m; ++j)
            if (claimed_by[static_cast<std::size_t>(j)] == 0) remaining.push_back(j);
        if (remaining.empty()) break;
        const double tau_k = schedule.tau[static_cast<std::size_t>(k - 1)];
        const double tau_eff =
            std::min(1.0, tau_k * static_cast<double>(m) / static_cast<double>(remaining.size()));

        Matrix sub_concepts(static_cast<int>(remaining.size()), concepts_used.cols);
        Matrix sub_teacher(static_cast<int>(remaining.size()), num_classes);
        std::vector<int> sub_labels(remaining.size());
        std::vector<double> sub_hist(remaining.size());
        for (std::size_t i = 0; i < remaining.size(); ++i) {
            const int j = remaining[i];
            std::copy(concepts_used.row(j).begin(), concepts_used.row(j).end(), sub_concepts.row(static_cast<int>(i)).begin());
            std::copy(teacher.row(j).begin(), teacher.row(j).end(), sub_teacher.row(static_cast<int>(i)).begin());
            sub_labels[i] = train.labels[static_cast<std::size_t>(j)];
            sub_hist[i] = hist_weight[static_cast<std::size_t>(j)];
        }

        auto fit = fit_expert_iteration(sub_teacher, sub_concepts, sub_labels, sub_hist, tau_eff, hyper,
                                        num_classes, derive_seed(seed, 1000 + static_cast<std::uint64_t>(k)));
        fit.expert.concept_indices = used_concepts;
        fit.sel.tau = tau_k;  // record the schedule-level target

        const auto pis = fit.sel.pi_batch(concepts_used);
        IterationRecord rec;
        rec.k = k;
        {
            // selected mass over the full train set; earlier claims are routed
            // upstream and contribute nothing here
            double mass = 0.0;
            for (const int j : remaining) mass += pis[static_cast<std::size_t>(j)];
            rec.zeta_train = mass / m;
        }

        int newly = 0;
        std::vector<int> expert_bucket;
        for (const int j : remaining) {
            if (selector::route(pis[static_cast<std::size_t>(j)]) == selector::Route::Expert) {
                claimed_by[static_cast<std::size_t>(j)] = k;
                expert_bucket.push_back(j);
                ++newly;
            }
        }
        rec.covered_count = newly;
        rec.hard_coverage = static_cast<double>(newly) / m;
        int total_claimed = 0;
        for (int v : claimed_by) total_claimed += v != 0;
        rec.cumulative_coverage = static_cast<double>(total_claimed) / m;

        const Matrix expert_logits = elen::elen_logits(fit.expert, concepts_used);
        if (!expert_bucket.empty()) {
            int ok = 0;
            for (int j : expert_bucket)
                if (numcore::argmax(expert_logits.row(j)) == train.labels[static_cast<std::size_t>(j)]) ++ok;
            rec.expert_train_accuracy = static_cast<double>(ok) / static_cast<double>(expert_bucket.size());
        } else {
            rec.expert_train_accuracy = -1.0;
        }

        Matrix residual_targets(m, num_classes);
        std::vector<double> res_weights(static_cast<std::size_t>(m));
        for (int j = 0; j < m; ++j) {
            const auto r = residual_target(teacher.row(j), expert_logits.row(j));
            std::copy(r.begin(), r.end(), residual_targets.row(j).begin());
            res_weights[static_cast<std::size_t>(j)] =
                hist_weight[static_cast<std::size_t>(j)] * (1.0 - pis[static_cast<std::size_t>(j)]);
        }
        Blackbox f_k = fit_residual(f_prev, residual_targets, res_weights, train.labels, train.embeddings, hyper,
                                    derive_seed(seed, 2000 + static_cast<std::uint64_t>(k)));

        const Matrix fk_logits = f_k.logits(train.embeddings);
        int res_ok = 0, res_n = 0;
        for (int j = 0; j < m; ++j) {
            if (claimed_by[static_cast<std::size_t>(j)] != 0) continue;
            ++res_n;
            if (numcore::argmax(fk_logits.row(j)) == train.labels[static_cast<std::size_t>(j)]) ++res_ok;
        }
        rec.residual_train_accuracy = res_n > 0 ? static_cast<double>(res_ok) / res_n : -1.0;

        double stop_accuracy = rec.residual_train_accuracy;
        int stop_n = res_n;
        if (has_val) {
            const auto val_pis = fit.sel.pi_batch(val_concepts_used);
            for (int j = 0; j < eval.val->size(); ++j)
                if (val_claimed[static_cast<std::size_t>(j)] == 0 &&
                    selector::route(val_pis[static_cast<std::size_t>(j)]) == selector::Route::Expert)
                    val_claimed[static_cast<std::size_t>(j)] = k;
            const Matrix val_logits = f_k.logits(eval.val->embeddings);
            int vok = 0, vn = 0;
            for (int j = 0; j < eval.val->size(); ++j) {
                if (val_claimed[static_cast<std::size_t>(j)] != 0) continue;
                ++vn;
                if (numcore::argmax(val_logits.row(j)) == eval.val->labels[static_cast<std::size_t>(j)]) ++vok;
            }
            rec.residual_val_accuracy = vn > 0 ? static_cast<double>(vok) / vn : -1.0;
            stop_accuracy = rec.residual_val_accuracy;
            stop_n = vn;
        }

        moie.selectors.push_back(std::move(fit.sel));
        moie.experts.push_back(std::move(fit.expert));
        moie.residual = f_k;

        if (rec.cumulative_coverage >= schedule.coverage_stop)
            rec.stop_reason = "coverage";
        else if (stop_n > 0 && stop_accuracy < schedule.residual_accuracy_stop)
            rec.stop_reason = "residual-accuracy";
        else if (res_n == 0)
            rec.stop_reason = "residual-empty";
        else if (rec.covered_count < schedule.min_covered)
            rec.stop_reason = "insufficient-new-coverage";
        else if (k == max_iters)
            rec.stop_reason = "max-iterations";

        const bool stop = !rec.stop_reason.empty();
        moie.records.push_back(std::move(rec));
        if (stop) break;

        teacher = fk_logits;
        f_prev = std::move(f_k);
        for (int j = 0; j < m; ++j)
            hist_weight[static_cast<std::size_t>(j)] *= (1.0 - pis[static_cast<std::size_t>(j)]);
    }
    moie.validate();
    return moie;
}

Prediction moie_predict(const MoIE& moie, std::span<const double> concepts_full, std::span<const double> embedding) {
    std::vector<double> sub(moie.concept_indices.size());
    for (std::size_t i = 0; i < moie.concept_indices.size(); ++i)
        sub[i] = concepts_full[static_cast<std::size_t>(moie.concept_indices[i])];
    for (int k = 0; k < moie.k(); ++k) {
        const double pi = moie.selectors[static_cast<std::size_t>(k)].pi(sub);
        if (selector::route(pi) == selector::Route::Expert) {
            const auto fwd = elen::elen_forward(moie.experts[static_cast<std::size_t>(k)], sub);
            return {numcore::argmax(fwd.logits), k + 1};
        }
    }
    Matrix e(1, static_cast<int>(embedding.size()));
    std::copy(embedding.begin(), embedding.end(), e.row(0).begin());
    const Matrix out = moie.residual.logits(e);
    return {numcore::argmax(out.row(0)), 0};
}

std::vector<Prediction> moie_predict_batch(const MoIE& moie, const Matrix& concepts_full, const Matrix& embeddings) {
    if (concepts_full.rows != embeddings.rows) throw ContractError("moie_predict_batch: row mismatch");
    std::vector<Prediction> out;
    out.reserve(static_cast<std::size_t>(concepts_full.rows));
    for (int j = 0; j < concepts_full.rows; ++j)
        out.push_back(moie_predict(moie, concepts_full.row(j), embeddings.row(j)));
    return out;
}

CoverageReport coverage_report(const MoIE& moie, const Blackbox& f0, const data::Dataset& test,
                               const Matrix& test_concepts_full) {
    moie.validate();
    test.validate();
    const auto preds = moie_predict_batch(moie, test_concepts_full, test.embeddings);
    const Matrix f0_logits = f0.logits(test.embeddings);
    const int m = test.size();

    CoverageReport report;
    report.f0_overall_accuracy = accuracy(f0_logits, test.labels);

    int cascade_ok = 0;
    for (int j = 0; j < m; ++j)
        if (preds[static_cast<std::size_t>(j)].label == test.labels[static_cast<std::size_t>(j)]) ++cascade_ok;
    report.cascade_accuracy = static_cast<double>(cascade_ok) / m;

    for (int route = 1; route <= moie.k() + 1; ++route) {
        const int route_id = route <= moie.k() ? route : 0;
        BucketRecord rec;
        rec.route = route_id;
        rec.bucket = route_id == 0 ? "residual" : "expert_" + std::to_string(route_id);
        int n = 0, ok = 0, f0_ok = 0;
        for (int j = 0; j < m; ++j) {
            if (preds[static_cast<std::size_t>(j)].route != route_id) continue;
            ++n;
            if (preds[static_cast<std::size_t>(j)].label == test.labels[static_cast<std::size_t>(j)]) ++ok;
            if (numcore::argmax(f0_logits.row(j)) == test.labels[static_cast<std::size_t>(j)]) ++f0_ok;
        }
        rec.count = n;
        rec.coverage = static_cast<double>(n) / m;
        rec.bucket_accuracy = n > 0 ? static_cast<double>(ok) / n : -1.0;
        rec.proportional_accuracy = n > 0 ? rec.coverage * rec.bucket_accuracy : 0.0;
        rec.f0_accuracy = n > 0 ? static_cast<double>(f0_ok) / n : -1.0;
        report.buckets.push_back(std::move(rec));
    }
    return report;
}

nlohmann::json blackbox_to_json(const Blackbox& bb) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["iteration"] = bb.iteration;
    j["head"] = numcore::dense_to_json(bb.head);
    if (bb.phi) j["phi"] = numcore::dense_to_json(*bb.phi);
    return j;
}

Blackbox blackbox_from_json(const nlohmann::json& j) {
    Blackbox bb;
    bb.iteration = j.at("iteration").get<int>();
    bb.head = numcore::dense_from_json(j.at("head"));
    if (j.contains("phi")) bb.phi = numcore::dense_from_json(j.at("phi"));
    bb.validate();
    return bb;
}

namespace {

nlohmann::json record_to_json(const IterationRecord& r) {
    return {{"k", r.k},
            {"zeta_train", r.zeta_train},
            {"hard_coverage", r.hard_coverage},
            {"cumulative_coverage", r.cumulative_coverage},
            {"covered_count", r.covered_count},
            {"expert_train_accuracy", r.expert_train_accuracy},
            {"residual_train_accuracy", r.residual_train_accuracy},
            {"residual_val_accuracy", r.residual_val_accuracy},
            {"stop_reason", r.stop_reason}};
}

IterationRecord record_from_json(const nlohmann::json& j) {
    IterationRecord r;
    r.k = j.at("k").get<int>();
    r.zeta_train = j.at("zeta_train").get<double>();
    r.hard_coverage = j.at("hard_coverage").get<double>();
    r.cumulative_coverage = j.at("cumulative_coverage").get<double>();
    r.covered_count = j.at("covered_count").get<int>();
    r.expert_train_accuracy = j.at("expert_train_accuracy").get<double>();
    r.residual_train_accuracy = j.at("residual_train_accuracy").get<double>();
    r.residual_val_accuracy = j.value("residual_val_accuracy", -1.0);
    r.stop_reason = j.at("stop_reason").get<std::string>();
    return r;
}

}  // namespace

void save_moie(const MoIE& moie, const std::string& dir) {
    moie.validate();
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["schema_version"] = 1;
    manifest["k"] = moie.k();
    manifest["num_classes"] = moie.num_classes;
    manifest["concept_indices"] = moie.concept_indices;
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : moie.records) recs.push_back(record_to_json(r));
    manifest["records"] = std::move(recs);

    for (int k = 1; k <= moie.k(); ++k) {
        const std::string suffix = std::to_string(k) + ".json";
        std::ofstream se(dir + "/selector_" + suffix);
        se << selector_to_json(moie.selectors[static_cast<std::size_t>(k - 1)]).dump(2) << "\n";
        std::ofstream ex(dir + "/expert_" + suffix);
        ex << elen::expert_to_json(moie.experts[static_cast<std::size_t>(k - 1)]).dump(2) << "\n";
    }
    std::ofstream res(dir + "/residual.json");
    res << blackbox_to_json(moie.residual).dump(2) << "\n";
    std::ofstream mf(dir + "/manifest.json");
    mf << manifest.dump(2) << "\n";
}

MoIE load_moie(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw InputError("cannot open: " + dir + "/manifest.json");
    nlohmann::json manifest;
    mf >> manifest;
    MoIE moie;
    moie.num_classes = manifest.at("num_classes").get<int>();
    moie.concept_indices = manifest.at("concept_indices").get<std::vector<int>>();
    for (const auto& rj : manifest.at("records")) moie.records.push_back(record_from_json(rj));
    const int k = manifest.at("k").get<int>();
    for (int i = 1; i <= k; ++i) {
        const std::string suffix = std::to_string(i) + ".json";
        std::ifstream se(dir + "/selector_" + suffix);
        if (!se) throw InputError("missing selector checkpoint " + suffix);
        nlohmann::json sj;
        se >> sj;
        moie.selectors.push_back(selector::selector_from_json(sj));
        std::ifstream ex(dir + "/expert_" + suffix);
        if (!ex) throw InputError("missing expert checkpoint " + suffix);
        nlohmann::json ej;
        ex >> ej;
        moie.experts.push_back(elen::expert_from_json(ej));
    }
    std::ifstream res(dir + "/residual.json");
    if (!res) throw InputError("missing residual checkpoint");
    nlohmann::json rj;
    res >> rj;
    moie.residual = blackbox_from_json(rj);
    moie.validate();
    return moie;
}

nlohmann::json report_to_json(const CoverageReport& report) {
    nlohmann::json j;
    j["cascade_accuracy"] = report.cascade_accuracy;
    j["f0_overall_accuracy"] = report.f0_overall_accuracy;
    nlohmann::json buckets = nlohmann::json::array();
    for (const auto& b : report.buckets) {
        nlohmann::json bj;
        bj["bucket"] = b.bucket;
        bj["route"] = b.route;
        bj["count"] = b.count;
        bj["coverage"] = b.coverage;
        if (b.bucket_accuracy >= 0.0)
            bj["accuracy"] = b.bucket_accuracy;
        else
            bj["accuracy"] = nullptr;
        bj["proportional_accuracy"] = b.proportional_accuracy;
        if (b.f0_accuracy >= 0.0)
            bj["f0_accuracy"] = b.f0_accuracy;
        else
            bj["f0_accuracy"] = nullptr;
        buckets.push_back(std::move(bj));
    }
    j["buckets"] = std::move(buckets);
    return j;
}

}  // namespace moie::carver
