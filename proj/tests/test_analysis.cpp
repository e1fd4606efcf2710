#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "moie/analysis.hpp"

using namespace moie;
using namespace moie::analysis;

namespace {

data::GenSpec tiny_spec() {
    data::GenSpec spec;
    spec.num_classes = 2;
    spec.n_concepts = 6;
    spec.n_subgroups = 1;
    spec.rules = {data::SubgroupRule{data::RuleKind::SingleConcept, {0}}};
    spec.subgroup_concept = -1;
    spec.rho = 0.0;
    spec.concept_noise = 0.0;
    spec.embed_noise = 0.05;
    spec.embed_dim = 12;
    spec.train_m = 400;
    spec.val_m = 150;
    spec.test_m = 150;
    return spec;
}

struct Fixture {
    data::GeneratedData g;
    carver::Blackbox f0;
    concepts::ConceptBank bank;
    Matrix train_c, val_c, test_c;
    std::vector<int> used;
    carver::MoIE moie;

    explicit Fixture(std::uint64_t seed, data::GenSpec spec = tiny_spec(), double tau = 1.0)
        : g(data::generate(spec, seed)) {
        carver::BlackboxConfig cfg;
        cfg.hidden = {16};
        cfg.epochs = 150;
        f0 = carver::train_blackbox(g.train, cfg, derive_seed(seed, 1));
        concepts::ProbeConfig pcfg;
        pcfg.seed = derive_seed(seed, 2);
        bank = concepts::train_probes(g.train, g.val, pcfg);
        used = concepts::filter_concepts(bank, 0.7);
        train_c = concepts::predict_concepts(bank, g.train.embeddings);
        val_c = concepts::predict_concepts(bank, g.val.embeddings);
        test_c = concepts::predict_concepts(bank, g.test.embeddings);
        carver::CarveSchedule sched;
        sched.tau = {tau};
        carver::ExpertHyper hyper;
        hyper.epochs = 250;
        hyper.residual_epochs = 120;
        moie = carver::carve(f0, g.train, train_c, used, sched, hyper, derive_seed(seed, 3));
    }
};

}  // namespace

TEST_CASE("concept_scores: projection and normalization cases") {
    concepts::ConceptBank bank;
    bank.mode = concepts::BankMode::Cav;
    bank.names = {"a", "b"};
    bank.directions = Matrix::from_rows({{1, 0, 0}, {0, 1, 0}});  // orthonormal
    bank.biases = {0, 0};
    bank.scores = {1, 1};

    Matrix emb(3, 3);
    // row 0: equal mix of both directions
    emb(0, 0) = 1.0;
    emb(0, 1) = 1.0;
    // row 1: along direction a only
    emb(1, 0) = 2.5;
    // row 2: orthogonal to both
    emb(2, 2) = 4.0;

    const Matrix scores = concept_scores(emb, bank, {0, 1});
    CHECK(scores(0, 0) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(scores(0, 1) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(scores(1, 0) == doctest::Approx(1.0));  // self-projection normalizes to 1
    CHECK(scores(2, 0) == doctest::Approx(0.0));  // zero row left as zeros
    CHECK(scores(2, 1) == doctest::Approx(0.0));
}

TEST_CASE("completeness: sane score on clean data, chance control near zero") {
    Fixture f(3);
    CompletenessConfig cfg;
    cfg.hidden = 32;
    cfg.epochs = 120;
    cfg.restarts = 2;
    cfg.seed = 5;
    std::vector<int> all;
    for (int c = 0; c < f.bank.n_concepts(); ++c) all.push_back(c);
    const auto full = completeness(f.f0, f.bank, all, f.g.train, f.g.val, 2, cfg);
    CHECK(full.eta >= 0.8);  // label is a single concept: concepts suffice
    CHECK(full.eta <= 1.1);

    cfg.noise_control = true;
    const auto control = completeness(f.f0, f.bank, all, f.g.train, f.g.val, 2, cfg);
    CHECK(control.eta <= 0.15);
}

TEST_CASE("completeness: chance-level blackbox is an error") {
    Fixture f(5);
    carver::Blackbox broken = f.f0;
    for (auto& l : broken.head.layers) {
        std::fill(l.w.data.begin(), l.w.data.end(), 0.0);
        std::fill(l.b.begin(), l.b.end(), 0.0);
    }
    CompletenessConfig cfg;
    cfg.hidden = 16;
    cfg.epochs = 10;
    cfg.restarts = 1;
    std::vector<int> all{0, 1, 2, 3, 4, 5};
    CHECK_THROWS_AS(completeness(broken, f.bank, all, f.g.train, f.g.val, 2, cfg), NumericError);
}

TEST_CASE("zero_out_ablation: N=0 is a no-op, full zeroing approaches chance") {
    Fixture f(7);
    const auto curve = zero_out_ablation(f.moie, f.g.test, f.test_c, {0, f.g.test.n_concepts()}, false, 1);
    CHECK(curve[0].drop == doctest::Approx(0.0));
    // zeroing every concept leaves the expert with no information: majority rate ~0.5
    CHECK(curve[1].accuracy <= 0.5 + 0.1 + 0.1);
    CHECK_THROWS_AS(zero_out_ablation(f.moie, f.g.test, f.test_c, {99}, false, 1), InputError);
}

TEST_CASE("zero_out_ablation: planted single-concept rule collapses when its concept is zeroed") {
    Fixture f(9);
    // ranking is dominated by concept 0 for a single-concept label
    const auto curve = zero_out_ablation(f.moie, f.g.test, f.test_c, {1}, false, 2);
    CHECK(curve[0].drop >= 0.3);
}

TEST_CASE("zero_out curve is monotone for nested top-N sets") {
    Fixture f(11);
    const auto curve = zero_out_ablation(f.moie, f.g.test, f.test_c, {0, 1, 2, 4, 6}, false, 3);
    // drops are non-decreasing up to small re-prediction noise
    for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].drop >= curve[i - 1].drop - 0.05);
}

TEST_CASE("intervene: N=0 is exact, oracle fixes noisy concepts") {
    data::GenSpec spec = tiny_spec();
    spec.concept_noise = 0.2;
    spec.embed_noise = 0.5;  // imperfect probes so oracle values matter
    Fixture f(13, spec);
    const auto base = intervene(f.moie, f.g.test, f.test_c, 0, InterventionScope::All);
    CHECK(base.accuracy == doctest::Approx(base.base_accuracy));  // exact no-op

    const auto all = intervene(f.moie, f.g.test, f.test_c, f.g.test.n_concepts(), InterventionScope::All);
    CHECK(all.accuracy >= all.base_accuracy - 1e-12);
}

TEST_CASE("intervene: hard scope restricts to the last two experts") {
    Fixture f(15);
    const auto hard = intervene(f.moie, f.g.test, f.test_c, 0, InterventionScope::Hard);
    const auto sall = intervene(f.moie, f.g.test, f.test_c, 0, InterventionScope::All);
    CHECK(hard.scope_count <= sall.scope_count);  // K=1 keeps them equal, never larger
}

TEST_CASE("intervene requires ground-truth concepts") {
    Fixture f(17);
    data::Dataset no_gt = f.g.test;
    no_gt.gt_concepts = Matrix();
    CHECK_THROWS_AS(intervene(f.moie, no_gt, f.test_c, 1, InterventionScope::All), InputError);
}

TEST_CASE("explain_dataset: extraction preserves predictions and is self-consistent") {
    Fixture f(19);
    const auto ex = explain_dataset(f.moie, f.g.test, f.test_c);
    CHECK(ex.covered > 0);
    CHECK(ex.prediction_preserved == ex.covered);  // hard guarantee of the percentile loop
    CHECK(ex.fidelity >= 0.9);                     // clean two-class rule: formulas should not clash
    CHECK(static_cast<int>(ex.conjunctions.size()) == ex.covered);
}

TEST_CASE("rank_concepts_by_attention is deterministic and complete") {
    Fixture f(21);
    const auto a = rank_concepts_by_attention(f.moie);
    const auto b = rank_concepts_by_attention(f.moie);
    CHECK(a == b);
    CHECK(static_cast<int>(a.size()) >= f.moie.concept_indices.back() + 1);
}
