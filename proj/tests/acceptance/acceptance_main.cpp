// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Every tolerance is pinned here. Expensive pipeline artifacts are
// shared across criteria.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "moie/analysis.hpp"
#include "moie/cli.hpp"
#include "moie/shortcut.hpp"

#include "../oracles.hpp"

using namespace moie;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %2d (%s): %s\n", pass ? "PASS" : "FAIL", criterion, name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};

// ---- shared default-spec pipeline artifacts -------------------------------

struct PipelineRun {
    data::GeneratedData g;
    carver::Blackbox f0;
    concepts::ConceptBank bank;
    std::vector<int> used;
    Matrix train_c, val_c, test_c;
    carver::MoIE moie;
    carver::CoverageReport report;
};

PipelineRun run_default_pipeline(std::uint64_t seed, data::GenSpec spec, carver::ExpertHyper hyper,
                                 carver::CarveSchedule sched) {
    PipelineRun out{data::generate(spec, seed), {}, {}, {}, {}, {}, {}, {}, {}};
    carver::BlackboxConfig bbcfg;  // defaults
    out.f0 = carver::train_blackbox(out.g.train, bbcfg, derive_seed(seed, 1));
    concepts::ProbeConfig pcfg;
    pcfg.seed = derive_seed(seed, 2);
    out.bank = concepts::train_probes(out.g.train, out.g.val, pcfg);
    out.used = concepts::filter_concepts(out.bank, 0.7);
    out.train_c = concepts::predict_concepts(out.bank, out.g.train.embeddings);
    out.val_c = concepts::predict_concepts(out.bank, out.g.val.embeddings);
    out.test_c = concepts::predict_concepts(out.bank, out.g.test.embeddings);
    carver::CarveEval eval{&out.g.val, &out.val_c};
    out.moie = carver::carve(out.f0, out.g.train, out.train_c, out.used, sched, hyper, derive_seed(seed, 3), eval);
    out.report = carver::coverage_report(out.moie, out.f0, out.g.test, out.test_c);
    return out;
}

PipelineRun run_default_pipeline(std::uint64_t seed) {
    carver::CarveSchedule sched;
    sched.tau = {0.2, 0.2, 0.2, 0.2, 0.2, 0.2};  // paper-style schedule
    return run_default_pipeline(seed, data::GenSpec::default_spec(), carver::ExpertHyper{}, sched);
}

// ---- criterion 1: gradient correctness ------------------------------------

// The loss must be twice differentiable at the evaluation point for a
// central-difference check to be meaningful: configurations whose relu
// pre-activations or attention-row maxima sit within the step size of a
// kink are resampled.
bool smooth_enough(const numcore::DenseNet& net, const Matrix& inputs, double margin) {
    const auto cache = numcore::forward_cached(net, inputs);
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        if (net.layers[li].act != numcore::Activation::Relu) continue;
        for (double v : cache.pre[li].data)
            if (std::abs(v) < margin) return false;
    }
    return true;
}

bool smooth_enough(const elen::ElenExpert& expert, const Matrix& concepts, double margin) {
    const Matrix a = elen::attention(expert);
    for (int i = 0; i < a.rows; ++i) {
        std::vector<double> row(a.row(i).begin(), a.row(i).end());
        std::sort(row.begin(), row.end());
        if (row[row.size() - 1] - row[row.size() - 2] < margin) return false;
    }
    for (int j = 0; j < concepts.rows; ++j) {
        const auto fwd = elen::elen_forward(expert, concepts.row(j));
        for (std::size_t li = 0; li < expert.trunk.layers.size(); ++li) {
            if (expert.trunk.layers[li].act != numcore::Activation::Relu) continue;
            for (double v : fwd.trunk_cache.pre[li].data)
                if (std::abs(v) < margin) return false;
        }
    }
    return true;
}

void criterion_1() {
    const double tol = 1e-4, h = 1e-3;
    const double margin = 0.02;
    double worst = 0.0;
    Rng rng(42);

    for (int trial = 0; trial < 10; ++trial) {
        // (a) expert sample loss over a 5-sample batch
        elen::ElenExpert expert;
        Matrix concepts(5, 5), teacher(5, 3);
        std::vector<int> labels;
        for (std::uint64_t attempt = 0;; ++attempt) {
            expert = elen::init_expert(3, 5, {6}, 0.7, 1e-4, {},
                                       100 + static_cast<std::uint64_t>(trial) * 97 + attempt);
            for (double& v : expert.gamma.data) v = rng.normal() * 0.5;
            for (double& v : concepts.data) v = rng.uniform(0, 1);
            if (smooth_enough(expert, concepts, margin)) break;
        }
        labels.clear();
        for (double& v : teacher.data) v = rng.normal();
        for (int j = 0; j < 5; ++j) labels.push_back(static_cast<int>(rng.index(3)));
        const elen::DistillConfig dcfg{0.9, 10.0};

        elen::ElenExpert scratch = expert;
        numcore::LossWithGrad expert_loss = [&](std::span<const double> p, std::vector<double>* grad) {
            scratch.set_params(p);
            double loss = 0.0;
            if (grad) grad->assign(p.size(), 0.0);
            for (int j = 0; j < 5; ++j) {
                const auto fwd = elen::elen_forward(scratch, concepts.row(j));
                loss += elen::distill_loss(fwd.logits, teacher.row(j), labels[static_cast<std::size_t>(j)], dcfg) / 5.0;
                if (grad) {
                    auto dl = elen::distill_loss_grad(fwd.logits, teacher.row(j), labels[static_cast<std::size_t>(j)], dcfg);
                    for (double& g : dl) g /= 5.0;
                    elen::elen_backward(scratch, fwd, dl, *grad);
                }
            }
            loss += scratch.lambda_lens * elen::entropy_reg(scratch);
            if (grad) elen::entropy_reg_backward(scratch, scratch.lambda_lens, *grad);
            return loss;
        };
        worst = std::max(worst, numcore::grad_check(expert_loss, expert.get_params(), h, tol));

        // (b) selector joint loss over expert + selector parameters
        selector::Selector sel;
        for (std::uint64_t attempt = 0;; ++attempt) {
            sel = selector::init_selector(5, {4}, 0.4, 32.0,
                                          200 + static_cast<std::uint64_t>(trial) * 89 + attempt);
            if (smooth_enough(sel.gate, concepts, margin)) break;
        }
        selector::JointBatch batch;
        batch.concepts = concepts;
        batch.teacher_logits = teacher;
        batch.labels = labels;
        batch.history_weight.assign(5, 0.0);
        for (auto& w : batch.history_weight) w = rng.uniform(0.2, 1.0);
        const selector::SelectiveLossCfg scfg{32.0, 0.5};
        std::vector<double> joint = expert.get_params();
        {
            const auto gp = sel.gate.get_params();
            joint.insert(joint.end(), gp.begin(), gp.end());
        }
        elen::ElenExpert se = expert;
        selector::Selector ss = sel;
        numcore::LossWithGrad joint_fn = [&](std::span<const double> p, std::vector<double>* grad) {
            se.set_params(p.first(se.param_count()));
            ss.gate.set_params(p.subspan(se.param_count()));
            if (grad) {
                grad->assign(p.size(), 0.0);
                return selector::joint_loss(se, ss, batch, dcfg, scfg, *grad).total;
            }
            return selector::joint_loss(se, ss, batch, dcfg, scfg).total;
        };
        worst = std::max(worst, numcore::grad_check(joint_fn, joint, h, tol));

        // (c) residual loss over the new head's parameters
        numcore::DenseNet head;
        Matrix emb(5, 4), targets(5, 3);
        std::vector<double> weights;
        for (std::uint64_t attempt = 0;; ++attempt) {
            head = numcore::init_dense({4, 6, 3}, {numcore::Activation::Relu, numcore::Activation::Identity},
                                       300 + static_cast<std::uint64_t>(trial) * 83 + attempt);
            for (double& v : emb.data) v = rng.normal();
            if (smooth_enough(head, emb, margin)) break;
        }
        for (double& v : targets.data) v = rng.normal();
        for (int j = 0; j < 5; ++j) weights.push_back(rng.uniform(0.1, 1.0));
        const elen::DistillConfig rcfg{0.25, 10.0};
        numcore::DenseNet hs = head;
        numcore::LossWithGrad res_fn = [&](std::span<const double> p, std::vector<double>* grad) {
            hs.set_params(p);
            const auto cache = numcore::forward_cached(hs, emb);
            const Matrix& out = cache.post.back();
            double loss = 0.0;
            Matrix dout(5, 3);
            for (int j = 0; j < 5; ++j) {
                loss += weights[static_cast<std::size_t>(j)] *
                        elen::distill_loss(out.row(j), targets.row(j), labels[static_cast<std::size_t>(j)], rcfg) / 5.0;
                const auto gl =
                    elen::distill_loss_grad(out.row(j), targets.row(j), labels[static_cast<std::size_t>(j)], rcfg);
                for (int c = 0; c < 3; ++c)
                    dout(j, c) = weights[static_cast<std::size_t>(j)] * gl[static_cast<std::size_t>(c)] / 5.0;
            }
            if (grad) {
                grad->assign(p.size(), 0.0);
                numcore::backward(hs, cache, dout, *grad);
            }
            return loss;
        };
        worst = std::max(worst, numcore::grad_check(res_fn, head.get_params(), h, tol));
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf), "max relative error %.3g over 10 batches x 3 losses, tol 1e-4", worst);
    report(1, "gradient correctness", worst < tol, buf);
}

// ---- criterion 2: equation oracles ----------------------------------------

void criterion_2() {
    const double tol = 1e-9;
    Rng rng(77);
    double worst = 0.0;
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); };

    for (int trial = 0; trial < 1000; ++trial) {
        const int m = 2 + static_cast<int>(rng.index(6));
        std::vector<double> pi(static_cast<std::size_t>(m)), wl(static_cast<std::size_t>(m));
        for (auto& v : pi) v = rng.uniform(0.01, 1.0);
        for (auto& v : wl) v = rng.uniform(0.0, 3.0);
        worst = std::max(worst, rel(selector::selective_risk(wl, pi), oracle::selective_risk(wl, pi)));

        std::vector<double> hist(static_cast<std::size_t>(rng.index(4)));
        for (auto& v : hist) v = rng.uniform(0.0, 1.0);
        const double pik = rng.uniform(0.0, 1.0);
        worst = std::max(worst, rel(selector::routing_weight(hist, pik), oracle::routing_weight(hist, pik)));
        worst = std::max(worst, rel(selector::residual_weight(hist), oracle::residual_weight(hist)));

        const double tau = rng.uniform(0.0, 1.0), zeta = rng.uniform(0.0, 1.0), ls = rng.uniform(0.0, 64.0);
        worst = std::max(worst, rel(selector::coverage_penalty(tau, zeta, ls), oracle::psi_penalty(tau, zeta, ls)));

        const int classes = 2 + static_cast<int>(rng.index(3));
        std::vector<double> student(static_cast<std::size_t>(classes)), teacher(static_cast<std::size_t>(classes));
        for (auto& v : student) v = rng.normal() * 3.0;
        for (auto& v : teacher) v = rng.normal() * 3.0;
        const int label = static_cast<int>(rng.index(static_cast<std::size_t>(classes)));
        const double alpha = rng.uniform(0.0, 1.0), tkd = rng.uniform(0.5, 20.0);
        worst = std::max(worst, rel(elen::distill_loss(student, teacher, label, {alpha, tkd}),
                                    oracle::distill_loss(student, teacher, label, alpha, tkd)));
    }

    // entropy regularizer + L_s / L_aux / L composition on random tiny models
    for (int trial = 0; trial < 1000; ++trial) {
        auto expert = elen::init_expert(2, 3, {4}, rng.uniform(0.4, 2.0), rng.uniform(0.0, 0.01), {},
                                        500 + static_cast<std::uint64_t>(trial));
        for (double& v : expert.gamma.data) v = rng.normal();
        std::vector<std::vector<double>> rows;
        for (int i = 0; i < expert.gamma.rows; ++i) rows.push_back(to_vector(expert.gamma.row(i)));
        const double ent_mod = elen::entropy_reg(expert);
        const double ent_orc = oracle::entropy_reg(rows, expert.t_lens);
        const double e_rel = std::abs(ent_mod - ent_orc) / std::max({std::abs(ent_mod), std::abs(ent_orc), 1e-12});
        worst = std::max(worst, e_rel);

        auto sel = selector::init_selector(3, {3}, rng.uniform(0.05, 1.0), 32.0,
                                           700 + static_cast<std::uint64_t>(trial));
        selector::JointBatch batch;
        const int m = 3 + static_cast<int>(rng.index(3));
        batch.concepts = Matrix(m, 3);
        batch.teacher_logits = Matrix(m, 2);
        for (double& v : batch.concepts.data) v = rng.uniform(0, 1);
        for (double& v : batch.teacher_logits.data) v = rng.normal();
        for (int j = 0; j < m; ++j) {
            batch.labels.push_back(static_cast<int>(rng.index(2)));
            batch.history_weight.push_back(rng.uniform(0.1, 1.0));
        }
        const elen::DistillConfig dcfg{0.9, 10.0};
        const selector::SelectiveLossCfg scfg{32.0, 0.5};
        const auto module = selector::joint_loss(expert, sel, batch, dcfg, scfg);

        std::vector<double> distill(static_cast<std::size_t>(m)), pis(static_cast<std::size_t>(m));
        for (int j = 0; j < m; ++j) {
            const auto fwd = elen::elen_forward(expert, batch.concepts.row(j));
            distill[static_cast<std::size_t>(j)] = oracle::distill_loss(
                to_vector(std::span<const double>(fwd.logits)), to_vector(batch.teacher_logits.row(j)),
                batch.labels[static_cast<std::size_t>(j)], dcfg.alpha_kd, dcfg.t_kd);
            pis[static_cast<std::size_t>(j)] = sel.pi(batch.concepts.row(j));
        }
        const auto orc = oracle::joint_loss(distill, ent_orc, expert.lambda_lens, pis, batch.history_weight,
                                            sel.tau, scfg.lambda_s, scfg.alpha_mix);
        worst = std::max({worst, std::abs(module.l_s - orc.l_s) / std::max(std::abs(orc.l_s), 1e-12),
                          std::abs(module.l_aux - orc.l_aux) / std::max(std::abs(orc.l_aux), 1e-12),
                          std::abs(module.total - orc.total) / std::max(std::abs(orc.total), 1e-12)});
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf), "max relative deviation %.3g over 1000 trials per equation, tol 1e-9", worst);
    report(2, "equation oracles", worst < tol, buf);
}

// ---- criteria 3, 4, 5, 8, 12b on the shared default runs ------------------

struct DefaultRuns {
    std::vector<PipelineRun> runs;
};

void criteria_3_4_5_8_12(const DefaultRuns& dr) {
    // 3: every selector's coverage within 0.05 of its target, >= 4/5 seeds
    int pass3 = 0;
    std::string detail3;
    for (const auto& run : dr.runs) {
        bool ok = true;
        for (const auto& rec : run.moie.records)
            ok = ok && rec.zeta_train >= run.moie.selectors[static_cast<std::size_t>(rec.k - 1)].tau - 0.05;
        pass3 += ok;
    }
    detail3 = std::to_string(pass3) + "/5 seeds with zeta_k >= tau_k - 0.05 for every iteration";
    report(3, "coverage constraint", pass3 >= 4, detail3);

    // 4: mean cascade accuracy >= mean f0 accuracy - 0.05
    double mean_gap = 0.0;
    for (const auto& run : dr.runs) mean_gap += (run.report.cascade_accuracy - run.report.f0_overall_accuracy) / 5.0;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "mean(cascade - f0) = %+.4f, needs >= -0.05", mean_gap);
    report(4, "performance preservation", mean_gap >= -0.05, buf);

    // 5: f0 accuracy on residual-routed samples at least 0.10 below covered
    int pass5 = 0;
    for (const auto& run : dr.runs) {
        double f0_res = -1.0, f0_cov = 0.0;
        int cov_n = 0;
        for (const auto& b : run.report.buckets) {
            if (b.route == 0) {
                f0_res = b.f0_accuracy;
            } else if (b.count > 0) {
                f0_cov += b.f0_accuracy * b.count;
                cov_n += b.count;
            }
        }
        if (f0_res >= 0.0 && cov_n > 0 && (f0_cov / cov_n) - f0_res >= 0.10) ++pass5;
    }
    report(5, "residual hardness", pass5 >= 4,
           std::to_string(pass5) + "/5 seeds with f0 gap (covered - residual) >= 0.10");

    // 8: zeroing the top-10 attention concepts beats 10 random concepts
    double mean_diff = 0.0;
    for (std::size_t i = 0; i < dr.runs.size(); ++i) {
        const auto& run = dr.runs[i];
        const auto top = analysis::zero_out_ablation(run.moie, run.g.test, run.test_c, {10}, false,
                                                     derive_seed(kSeeds[i], 5));
        const auto rnd = analysis::zero_out_ablation(run.moie, run.g.test, run.test_c, {10}, true,
                                                     derive_seed(kSeeds[i], 5));
        mean_diff += (top[0].drop - rnd[0].drop) / 5.0;
    }
    std::snprintf(buf, sizeof(buf), "mean paired drop difference (top10 - random10) = %+.4f, needs > 0", mean_diff);
    report(8, "zero-out discriminativeness", mean_diff > 0.0, buf);

    // 12b: proportional accuracies sum to the cascade accuracy exactly
    double worst_identity = 0.0;
    for (const auto& run : dr.runs) {
        double sum = 0.0;
        for (const auto& b : run.report.buckets) sum += b.proportional_accuracy;
        worst_identity = std::max(worst_identity, std::abs(sum - run.report.cascade_accuracy));
    }
    std::snprintf(buf, sizeof(buf), "max |sum(prop acc) - cascade| = %.3g, tol 1e-12", worst_identity);
    report(12, "accounting identity", worst_identity <= 1e-12, buf);
}

// ---- criterion 6: heterogeneity -------------------------------------------

void criterion_6() {
    int pass = 0;
    const std::vector<std::vector<int>> rule_sets{{0, 1, 2}, {5, 6, 7}};
    for (const auto seed : kSeeds) {
        auto spec = data::GenSpec::default_spec();
        spec.rho = 0.0;
        spec.concept_noise = 0.05;
        carver::ExpertHyper hyper;
        hyper.lambda_lens = 0.02;
        hyper.expert_weight_decay = 3e-4;
        carver::CarveSchedule sched;
        sched.tau = {0.45, 0.45};
        const auto run = run_default_pipeline(seed, spec, hyper, sched);
        if (run.moie.k() < 2) continue;

        const auto preds = carver::moie_predict_batch(run.moie, run.train_c, run.g.train.embeddings);
        std::vector<int> counts(static_cast<std::size_t>(run.moie.k() + 1), 0);
        std::vector<std::array<int, 2>> sgc(static_cast<std::size_t>(run.moie.k() + 1), {0, 0});
        for (int j = 0; j < run.g.train.size(); ++j) {
            ++counts[static_cast<std::size_t>(preds[static_cast<std::size_t>(j)].route)];
            if (preds[static_cast<std::size_t>(j)].route > 0)
                ++sgc[static_cast<std::size_t>(preds[static_cast<std::size_t>(j)].route)]
                     [static_cast<std::size_t>(run.g.train.subgroup[static_cast<std::size_t>(j)])];
        }
        std::vector<int> order;
        for (int k = 1; k <= run.moie.k(); ++k) order.push_back(k);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            return counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(b)];
        });

        std::vector<std::set<int>> tops;
        bool recalls_ok = true;
        for (int rank = 0; rank < 2; ++rank) {
            const auto& e = run.moie.experts[static_cast<std::size_t>(order[static_cast<std::size_t>(rank)] - 1)];
            const Matrix a = elen::attention(e);
            std::vector<double> score(static_cast<std::size_t>(e.n_used()), 0.0);
            for (int i = 0; i < a.rows; ++i)
                for (int c = 0; c < a.cols; ++c) score[static_cast<std::size_t>(c)] += a(i, c) / a.rows;
            std::vector<int> idx(static_cast<std::size_t>(e.n_used()));
            for (int i = 0; i < e.n_used(); ++i) idx[static_cast<std::size_t>(i)] = i;
            std::stable_sort(idx.begin(), idx.end(), [&](int x, int y) {
                return score[static_cast<std::size_t>(x)] > score[static_cast<std::size_t>(y)];
            });
            std::set<int> t5;
            for (int i = 0; i < 5 && i < static_cast<int>(idx.size()); ++i)
                t5.insert(e.concept_indices[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
            tops.push_back(t5);
            const auto& sg = sgc[static_cast<std::size_t>(order[static_cast<std::size_t>(rank)])];
            const auto& rules = rule_sets[sg[1] > sg[0] ? 1 : 0];
            int hit = 0;
            for (int c : rules) hit += t5.count(c);
            recalls_ok = recalls_ok && (static_cast<double>(hit) / rules.size() >= 0.6);
        }
        int inter = 0;
        for (int c : tops[0]) inter += tops[1].count(c);
        const double jaccard = static_cast<double>(inter) / (10.0 - inter);
        if (recalls_ok && jaccard <= 0.4) ++pass;
    }
    report(6, "heterogeneity", pass >= 3,
           std::to_string(pass) + "/5 seeds with jaccard <= 0.4 and both recalls >= 0.6");
}

// ---- criterion 7: FOL integrity --------------------------------------------

void criterion_7(const DefaultRuns& dr) {
    // hard guarantee on the default artifacts
    bool preserved = true;
    for (const auto& run : dr.runs) {
        const auto ex = analysis::explain_dataset(run.moie, run.g.test, run.test_c);
        preserved = preserved && ex.prediction_preserved == ex.covered;
    }

    // fidelity on the noiseless-concept variant: the single-concept-rule
    // dataset, where extracted conjunctions determine the class exactly
    data::GenSpec spec;
    spec.num_classes = 2;
    spec.n_concepts = 8;
    spec.n_subgroups = 1;
    spec.rules = {data::SubgroupRule{data::RuleKind::SingleConcept, {0}}};
    spec.subgroup_concept = -1;
    spec.rho = 0.0;
    spec.concept_noise = 0.0;
    spec.embed_noise = 0.05;
    spec.embed_dim = 16;
    carver::CarveSchedule sched;
    sched.tau = {0.9, 0.5};
    const auto clean = run_default_pipeline(2, spec, carver::ExpertHyper{}, sched);
    const auto ex = analysis::explain_dataset(clean.moie, clean.g.test, clean.test_c);

    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "prediction preserved on all covered samples: %s; noiseless fidelity %.3f (needs >= 0.9)",
                  preserved ? "yes" : "no", ex.fidelity);
    report(7, "FOL integrity", preserved && ex.fidelity >= 0.9, buf);
}

// ---- criterion 9: completeness behavior ------------------------------------

void criterion_9(const DefaultRuns& dr) {
    const auto& run = dr.runs.front();
    analysis::CompletenessConfig cfg;
    cfg.hidden = 64;
    cfg.epochs = 150;
    cfg.restarts = 3;
    cfg.seed = derive_seed(kSeeds.front(), 4);

    const auto ranking = analysis::rank_concepts_by_attention(run.moie);
    const int n_all = run.bank.n_concepts();
    const int n_quarter = std::max(1, n_all / 4);
    std::vector<int> all_set(ranking.begin(), ranking.begin() + n_all);
    std::vector<int> quarter(ranking.begin(), ranking.begin() + n_quarter);

    const auto eta_all = analysis::completeness(run.f0, run.bank, all_set, run.g.train, run.g.val, 4, cfg);
    const auto eta_q = analysis::completeness(run.f0, run.bank, quarter, run.g.train, run.g.val, 4, cfg);
    cfg.noise_control = true;
    const auto eta_noise = analysis::completeness(run.f0, run.bank, all_set, run.g.train, run.g.val, 4, cfg);

    const bool nested = eta_all.eta >= eta_q.eta - 0.05;
    const bool in_range = eta_all.eta >= -0.1 && eta_all.eta <= 1.1 && eta_q.eta >= -0.1 && eta_q.eta <= 1.1 &&
                          eta_noise.eta >= -0.1 && eta_noise.eta <= 1.1;
    const bool control = eta_noise.eta <= 0.15;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "eta_all %.3f >= eta_top25%% %.3f - 0.05; range ok: %s; chance control %.3f <= 0.15",
                  eta_all.eta, eta_q.eta, in_range ? "yes" : "no", eta_noise.eta);
    report(9, "completeness behavior", nested && in_range && control, buf);
}

// ---- criterion 10: intervention gain ----------------------------------------

void criterion_10() {
    double mean_gain = 0.0;
    bool noop_exact = true;
    for (const auto seed : kSeeds) {
        auto spec = data::GenSpec::default_spec();
        spec.concept_noise = 0.2;
        spec.embed_noise = 0.35;
        carver::CarveSchedule sched;
        sched.tau = {0.2, 0.2, 0.2, 0.2, 0.2, 0.2};
        const auto run = run_default_pipeline(seed, spec, carver::ExpertHyper{}, sched);
        const auto base = analysis::intervene(run.moie, run.g.test, run.test_c, 0, analysis::InterventionScope::Hard);
        noop_exact = noop_exact && base.accuracy == base.base_accuracy;
        const auto oracle_all = analysis::intervene(run.moie, run.g.test, run.test_c, run.g.test.n_concepts(),
                                                    analysis::InterventionScope::Hard);
        mean_gain += (oracle_all.accuracy - oracle_all.base_accuracy) / 5.0;
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf), "mean hard-scope oracle gain %+.4f (needs >= 0.05); N=0 exact no-op: %s",
                  mean_gain, noop_exact ? "yes" : "no");
    report(10, "intervention gain", mean_gain >= 0.05 && noop_exact, buf);
}

// ---- criterion 11: shortcut fix ---------------------------------------------

void criterion_11() {
    int pass = 0;
    std::string first_detail;
    for (const auto seed : kSeeds) {
        data::GenSpec spec;
        spec.num_classes = 2;
        spec.n_subgroups = 1;
        spec.rules = {data::SubgroupRule{data::RuleKind::Majority3, {0, 1, 2}}};
        spec.subgroup_concept = -1;
        spec.rho = 0.0;
        spec.concept_noise = 0.1;
        spec.embed_noise = 0.6;
        spec.n_concepts = 16;
        spec.embed_dim = 32;
        spec.spurious.concept_index = 15;
        spec.spurious.train_corr = 0.95;
        spec.spurious.test_corr = 0.5;
        spec.spurious.embed_gain = 4.5;
        const auto g = data::generate(spec, seed);

        shortcut::FixConfig cfg;
        cfg.blackbox.hidden = {32};
        cfg.blackbox.epochs = 120;
        cfg.schedule.tau = {0.4, 0.3};
        cfg.hyper.epochs = 600;
        cfg.metadata.metadata_concepts = {15};
        cfg.probes.seed = derive_seed(seed, 61);

        const auto f0 = carver::train_blackbox(g.train, cfg.blackbox, derive_seed(seed, 1));
        const auto rep = shortcut::fix_shortcut(f0, g, cfg, derive_seed(seed, 6));

        bool flagged_planted = false;
        for (const auto& f : rep.biased_detection.flagged) (void)f, flagged_planted = true;
        const bool ok = rep.biased_f0_gap.gap >= 0.20 && std::abs(rep.robust_gap.gap) <= 0.10 &&
                        rep.spurious_probe_score_robust < 0.7 && rep.spurious_excluded_after_fix && flagged_planted;
        pass += ok;
        if (first_detail.empty()) {
            char buf[160];
            std::snprintf(buf, sizeof(buf), "seed %llu: biased gap %.2f -> robust %.2f, probe %.2f -> %.2f",
                          static_cast<unsigned long long>(seed), rep.biased_f0_gap.gap, rep.robust_gap.gap,
                          rep.spurious_probe_score_biased, rep.spurious_probe_score_robust);
            first_detail = buf;
        }
    }
    report(11, "shortcut fix", pass >= 4, std::to_string(pass) + "/5 seeds pass (" + first_detail + ")");
}

// ---- criterion 12a: byte-identical summaries --------------------------------

void criterion_12a() {
    auto read_all = [](const std::string& path) {
        std::ifstream in(path);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    nlohmann::json cj;
    cj["seed"] = 9;
    cj["data"] = {{"source", "generate"},
                  {"gen",
                   {{"num_classes", 2},
                    {"n_concepts", 6},
                    {"n_subgroups", 1},
                    {"embed_dim", 12},
                    {"rules", nlohmann::json::array({{{"kind", "single-concept"}, {"concepts", {0}}}})},
                    {"subgroup_concept", -1},
                    {"rho", 0.0},
                    {"concept_noise", 0.0},
                    {"embed_noise", 0.05},
                    {"train_m", 250},
                    {"val_m", 100},
                    {"test_m", 100}}}};
    cj["blackbox"] = {{"hidden", {12}}, {"epochs", 80}};
    cj["concepts"] = {{"epochs", 60}};
    cj["carve"] = {{"tau", {0.9}}, {"epochs", 120}, {"residual_epochs", 60}};

    bool identical = true;
    std::map<std::string, std::string> first;
    const std::string dir = (fs::temp_directory_path() / "moie_accept_det").string();
    fs::remove_all(dir);
    cj["out_dir"] = dir;
    const auto cfg = cli::config_from_json(cj, "<acceptance>");
    for (int rerun = 0; rerun < 2; ++rerun) {
        for (const std::string cmd : {"gen-data", "train-blackbox", "learn-concepts", "carve", "explain"}) {
            cli::run_command(cmd, cfg);
            const std::string body = read_all(dir + "/" + cmd + "_summary.json");
            if (rerun == 0) {
                first[cmd] = body;
            } else {
                identical = identical && first[cmd] == body;
            }
        }
    }
    fs::remove_all(dir);
    report(12, "determinism (byte-identical summaries)", identical,
           identical ? "gen-data/train-blackbox/learn-concepts/carve/explain summaries identical across reruns"
                     : "summary bytes differ between reruns");
}

}  // namespace

int main() {
    std::printf("acceptance suite: synthetic default spec, 5 seeds, pinned tolerances\n");
    criterion_1();
    criterion_2();

    DefaultRuns dr;
    for (const auto seed : kSeeds) dr.runs.push_back(run_default_pipeline(seed));
    criteria_3_4_5_8_12(dr);
    criterion_6();
    criterion_7(dr);
    criterion_9(dr);
    criterion_10();
    criterion_11();
    criterion_12a();

    if (g_failures == 0) {
        std::printf("acceptance: all criteria passed\n");
    } else {
        std::printf("acceptance: %d criterion check(s) failed\n", g_failures);
    }
    return g_failures == 0 ? 0 : 1;
}
