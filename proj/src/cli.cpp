#include "moie/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "CLI11.hpp"

namespace moie::cli {

namespace fs = std::filesystem;

const std::vector<std::string> kCommands = {"gen-data",     "train-blackbox", "learn-concepts", "carve",
                                            "explain",      "completeness",   "ablate",         "intervene",
                                            "shortcut",     "report"};

namespace {

[[noreturn]] void fail_field(const std::string& field, const std::string& why) {
    throw InputError("config field '" + field + "' " + why);
}

double get_positive(const nlohmann::json& j, const std::string& section, const std::string& key, double fallback) {
    const double v = j.value(key, fallback);
    if (!(v > 0.0)) fail_field(section + "." + key, "must be positive");
    return v;
}

int get_positive_int(const nlohmann::json& j, const std::string& section, const std::string& key, int fallback) {
    const int v = j.value(key, fallback);
    if (v <= 0) fail_field(section + "." + key, "must be a positive integer");
    return v;
}

std::vector<int> get_hidden(const nlohmann::json& j, const std::string& section, const std::string& key,
                            std::vector<int> fallback) {
    if (!j.contains(key)) return fallback;
    auto v = j.at(key).get<std::vector<int>>();
    for (int h : v)
        if (h <= 0) fail_field(section + "." + key, "must contain positive widths");
    return v;
}

void write_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("invalid JSON in " + path + ": " + e.what());
    }
    return j;
}

void write_curve_csv(const std::string& path,
                     const std::vector<std::tuple<int, std::string, double, std::uint64_t>>& rows) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot open for writing: " + path);
    out << "N,metric,value,seed\n";
    char buf[40];
    for (const auto& [n, metric, value, seed] : rows) {
        std::snprintf(buf, sizeof(buf), "%.17g", value);
        out << n << "," << metric << "," << buf << "," << seed << "\n";
    }
}

}  // namespace

RunConfig config_from_json(const nlohmann::json& j, const std::string& origin) {
    RunConfig cfg;
    cfg.echo = j;
    if (j.value("schema_version", 1) != 1) fail_field("schema_version", "must be 1");
    cfg.seed = j.value("seed", cfg.seed);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);

    if (j.contains("data")) {
        const auto& dj = j.at("data");
        cfg.data_source = dj.value("source", cfg.data_source);
        if (cfg.data_source != "generate" && cfg.data_source != "csv")
            fail_field("data.source", "must be 'generate' or 'csv'");
        if (dj.contains("gen")) {
            try {
                cfg.gen = data::genspec_from_json(dj.at("gen"));
            } catch (const InputError& e) {
                fail_field("data.gen", std::string("invalid: ") + e.what());
            }
        } else {
            cfg.gen = data::GenSpec::default_spec();
        }
        if (cfg.data_source == "csv") {
            if (!dj.contains("csv")) fail_field("data.csv", "is required when source is 'csv'");
            const auto& cj = dj.at("csv");
            cfg.csv_train = cj.value("train", "");
            cfg.csv_val = cj.value("val", "");
            cfg.csv_test = cj.value("test", "");
            if (cfg.csv_train.empty() || cfg.csv_val.empty() || cfg.csv_test.empty())
                fail_field("data.csv", "needs train, val and test paths");
        }
    } else {
        cfg.gen = data::GenSpec::default_spec();
    }

    {
        const nlohmann::json bj = j.value("blackbox", nlohmann::json::object());
        cfg.blackbox.hidden = get_hidden(bj, "blackbox", "hidden", cfg.blackbox.hidden);
        cfg.blackbox.phi_hidden = get_hidden(bj, "blackbox", "phi_hidden", cfg.blackbox.phi_hidden);
        cfg.blackbox.lr = get_positive(bj, "blackbox", "lr", cfg.blackbox.lr);
        cfg.blackbox.epochs = get_positive_int(bj, "blackbox", "epochs", cfg.blackbox.epochs);
        cfg.blackbox.weight_decay = bj.value("weight_decay", cfg.blackbox.weight_decay);
        if (cfg.blackbox.weight_decay < 0.0) fail_field("blackbox.weight_decay", "must be nonnegative");
        if (bj.contains("optimizer")) {
            try {
                cfg.blackbox.optimizer = numcore::opt_from_name(bj.at("optimizer").get<std::string>());
            } catch (const InputError&) {
                fail_field("blackbox.optimizer", "must be sgd, sgd-momentum or adam");
            }
        }
    }
    {
        const nlohmann::json cj = j.value("concepts", nlohmann::json::object());
        cfg.concept_mode = cj.value("mode", cfg.concept_mode);
        if (cfg.concept_mode != "probe" && cfg.concept_mode != "cav")
            fail_field("concepts.mode", "must be 'probe' or 'cav'");
        cfg.probes.lr = get_positive(cj, "concepts", "lr", cfg.probes.lr);
        cfg.probes.epochs = get_positive_int(cj, "concepts", "epochs", cfg.probes.epochs);
        cfg.probes.l2 = cj.value("l2", cfg.probes.l2);
        if (cfg.probes.l2 < 0.0) fail_field("concepts.l2", "must be nonnegative");
        cfg.probes.auroc_prevalence = cj.value("auroc_prevalence", cfg.probes.auroc_prevalence);
        cfg.concept_filter_threshold = cj.value("filter_threshold", cfg.concept_filter_threshold);
        if (cfg.concept_filter_threshold < 0.0 || cfg.concept_filter_threshold >= 1.0)
            fail_field("concepts.filter_threshold", "must be in [0,1)");
    }
    {
        const nlohmann::json kj = j.value("carve", nlohmann::json::object());
        if (kj.contains("tau")) {
            cfg.schedule.tau = kj.at("tau").get<std::vector<double>>();
        } else {
            cfg.schedule.tau = {0.2, 0.2, 0.2, 0.2, 0.2, 0.2};
        }
        for (double t : cfg.schedule.tau)
            if (t <= 0.0 || t > 1.0) fail_field("carve.tau", "entries must be in (0,1]");
        cfg.schedule.coverage_stop = kj.value("coverage_stop", cfg.schedule.coverage_stop);
        if (cfg.schedule.coverage_stop <= 0.0 || cfg.schedule.coverage_stop > 1.0)
            fail_field("carve.coverage_stop", "must be in (0,1]");
        cfg.schedule.residual_accuracy_stop = kj.value("residual_accuracy_stop", cfg.schedule.residual_accuracy_stop);
        cfg.schedule.min_covered = kj.value("min_covered", cfg.schedule.min_covered);
        if (cfg.schedule.min_covered < 0) fail_field("carve.min_covered", "must be nonnegative");

        cfg.hyper.expert_hidden = get_hidden(kj, "carve", "expert_hidden", cfg.hyper.expert_hidden);
        cfg.hyper.selector_hidden = get_hidden(kj, "carve", "selector_hidden", cfg.hyper.selector_hidden);
        cfg.hyper.t_lens = get_positive(kj, "carve", "t_lens", cfg.hyper.t_lens);
        cfg.hyper.lambda_lens = kj.value("lambda_lens", cfg.hyper.lambda_lens);
        if (cfg.hyper.lambda_lens < 0.0) fail_field("carve.lambda_lens", "must be nonnegative");
        cfg.hyper.distill.alpha_kd = kj.value("alpha_kd", cfg.hyper.distill.alpha_kd);
        if (cfg.hyper.distill.alpha_kd < 0.0 || cfg.hyper.distill.alpha_kd > 1.0)
            fail_field("carve.alpha_kd", "must be in [0,1]");
        cfg.hyper.distill.t_kd = get_positive(kj, "carve", "t_kd", cfg.hyper.distill.t_kd);
        cfg.hyper.lambda_s = kj.value("lambda_s", cfg.hyper.lambda_s);
        if (cfg.hyper.lambda_s < 0.0) fail_field("carve.lambda_s", "must be nonnegative");
        cfg.hyper.alpha_mix = kj.value("alpha_mix", cfg.hyper.alpha_mix);
        if (cfg.hyper.alpha_mix < 0.0 || cfg.hyper.alpha_mix > 1.0) fail_field("carve.alpha_mix", "must be in [0,1]");
        cfg.hyper.lr = get_positive(kj, "carve", "lr", cfg.hyper.lr);
        cfg.hyper.epochs = get_positive_int(kj, "carve", "epochs", cfg.hyper.epochs);
        cfg.hyper.expert_weight_decay = kj.value("expert_weight_decay", cfg.hyper.expert_weight_decay);
        if (cfg.hyper.expert_weight_decay < 0.0) fail_field("carve.expert_weight_decay", "must be nonnegative");
        cfg.hyper.residual_lr = get_positive(kj, "carve", "residual_lr", cfg.hyper.residual_lr);
        cfg.hyper.residual_epochs = get_positive_int(kj, "carve", "residual_epochs", cfg.hyper.residual_epochs);
        cfg.hyper.residual_weight_decay = kj.value("residual_weight_decay", cfg.hyper.residual_weight_decay);
        if (cfg.hyper.residual_weight_decay < 0.0) fail_field("carve.residual_weight_decay", "must be nonnegative");
        cfg.hyper.residual_distill.alpha_kd = kj.value("residual_alpha_kd", cfg.hyper.residual_distill.alpha_kd);
        if (cfg.hyper.residual_distill.alpha_kd < 0.0 || cfg.hyper.residual_distill.alpha_kd > 1.0)
            fail_field("carve.residual_alpha_kd", "must be in [0,1]");
        cfg.hyper.residual_distill.t_kd = get_positive(kj, "carve", "residual_t_kd", cfg.hyper.distill.t_kd);
        cfg.hyper.residual_warm_start = kj.value("residual_warm_start", cfg.hyper.residual_warm_start);
    }
    {
        const nlohmann::json aj = j.value("analysis", nlohmann::json::object());
        cfg.completeness.hidden = get_positive_int(aj, "analysis", "gamma_hidden", cfg.completeness.hidden);
        cfg.completeness.restarts = get_positive_int(aj, "analysis", "gamma_restarts", cfg.completeness.restarts);
        cfg.completeness.epochs = get_positive_int(aj, "analysis", "gamma_epochs", cfg.completeness.epochs);
        cfg.completeness.lr = get_positive(aj, "analysis", "gamma_lr", cfg.completeness.lr);
        if (aj.contains("completeness_n_list"))
            cfg.completeness_n_list = aj.at("completeness_n_list").get<std::vector<int>>();
        if (aj.contains("ablation_n_list")) cfg.ablation_n_list = aj.at("ablation_n_list").get<std::vector<int>>();
        if (aj.contains("intervention_n_list"))
            cfg.intervention_n_list = aj.at("intervention_n_list").get<std::vector<int>>();
        cfg.intervention_scope = aj.value("intervention_scope", cfg.intervention_scope);
        if (cfg.intervention_scope != "all" && cfg.intervention_scope != "hard")
            fail_field("analysis.intervention_scope", "must be 'all' or 'hard'");
    }
    {
        const nlohmann::json sj = j.value("shortcut", nlohmann::json::object());
        if (sj.contains("metadata_concepts"))
            cfg.metadata.metadata_concepts = sj.at("metadata_concepts").get<std::vector<int>>();
        else if (cfg.gen.spurious.concept_index >= 0)
            cfg.metadata.metadata_concepts = {cfg.gen.spurious.concept_index};
        cfg.metadata.flag_threshold = sj.value("flag_threshold", cfg.metadata.flag_threshold);
    }
    (void)origin;
    return cfg;
}

RunConfig parse_config(const std::string& path) {
    if (!fs::exists(path)) throw InputError("config file not found: " + path);
    return config_from_json(read_json(path), path);
}

namespace {

struct Artifacts {
    RunConfig cfg;
    std::string out;

    std::string data_dir() const { return out + "/data"; }
    std::string blackbox_path() const { return out + "/blackbox.json"; }
    std::string bank_path() const { return out + "/concepts.json"; }
    std::string moie_dir() const { return out + "/moie"; }
    std::string reports_dir() const { return out + "/reports"; }
};

data::GeneratedData load_splits(const Artifacts& art) {
    const std::string dir = art.data_dir();
    if (art.cfg.data_source == "csv") {
        return {data::load_csv(art.cfg.csv_train), data::load_csv(art.cfg.csv_val), data::load_csv(art.cfg.csv_test)};
    }
    for (const char* split : {"train", "val", "test"})
        if (!fs::exists(dir + "/" + split + ".csv"))
            throw InputError("missing " + dir + "/" + split + ".csv (run gen-data first)");
    return {data::load_csv(dir + "/train.csv"), data::load_csv(dir + "/val.csv"), data::load_csv(dir + "/test.csv")};
}

carver::Blackbox load_blackbox(const Artifacts& art) {
    if (!fs::exists(art.blackbox_path()))
        throw InputError("missing " + art.blackbox_path() + " (run train-blackbox first)");
    return carver::blackbox_from_json(read_json(art.blackbox_path()));
}

concepts::ConceptBank load_bank_artifact(const Artifacts& art) {
    if (!fs::exists(art.bank_path())) throw InputError("missing " + art.bank_path() + " (run learn-concepts first)");
    return concepts::load_bank(art.bank_path());
}

carver::MoIE load_moie_artifact(const Artifacts& art) {
    if (!fs::exists(art.moie_dir() + "/manifest.json"))
        throw InputError("missing " + art.moie_dir() + "/manifest.json (run carve first)");
    return carver::load_moie(art.moie_dir());
}

nlohmann::json base_summary(const std::string& command, const Artifacts& art) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["command"] = command;
    j["seed"] = art.cfg.seed;
    j["out_dir"] = art.out;
    return j;
}

void finish(nlohmann::json& summary, const std::string& command, const Artifacts& art) {
    write_json(summary, art.out + "/" + command + "_summary.json");
}

nlohmann::json cmd_gen_data(const Artifacts& art) {
    const auto splits = data::generate(art.cfg.gen, art.cfg.seed);
    fs::create_directories(art.data_dir());
    data::save_csv(splits.train, art.data_dir() + "/train.csv");
    data::save_csv(splits.val, art.data_dir() + "/val.csv");
    data::save_csv(splits.test, art.data_dir() + "/test.csv");
    data::save_jsonl(splits.train, art.data_dir() + "/train.jsonl");
    data::save_jsonl(splits.val, art.data_dir() + "/val.jsonl");
    data::save_jsonl(splits.test, art.data_dir() + "/test.jsonl");
    nlohmann::json manifest;
    manifest["schema_version"] = 1;
    manifest["seed"] = art.cfg.seed;
    manifest["spec"] = data::genspec_to_json(art.cfg.gen);
    write_json(manifest, art.data_dir() + "/manifest.json");

    auto summary = base_summary("gen-data", art);
    summary["metrics"] = {{"train_rows", splits.train.size()},
                          {"val_rows", splits.val.size()},
                          {"test_rows", splits.test.size()},
                          {"num_classes", splits.train.num_classes},
                          {"n_concepts", splits.train.n_concepts()}};
    if (art.cfg.gen.spurious.concept_index >= 0) {
        summary["metrics"]["spurious_train_agreement"] =
            data::spurious_agreement(splits.train, art.cfg.gen.spurious.concept_index);
        summary["metrics"]["spurious_test_agreement"] =
            data::spurious_agreement(splits.test, art.cfg.gen.spurious.concept_index);
    }
    summary["outputs"] = {{"data_dir", art.data_dir()}};
    return summary;
}

nlohmann::json cmd_train_blackbox(const Artifacts& art) {
    const auto splits = load_splits(art);
    const auto bb = carver::train_blackbox(splits.train, art.cfg.blackbox, derive_seed(art.cfg.seed, 1));
    write_json(carver::blackbox_to_json(bb), art.blackbox_path());
    auto summary = base_summary("train-blackbox", art);
    summary["metrics"] = {
        {"train_accuracy", carver::accuracy(bb.logits(splits.train.embeddings), splits.train.labels)},
        {"val_accuracy", carver::accuracy(bb.logits(splits.val.embeddings), splits.val.labels)},
        {"test_accuracy", carver::accuracy(bb.logits(splits.test.embeddings), splits.test.labels)}};
    summary["outputs"] = {{"blackbox", art.blackbox_path()}};
    return summary;
}

nlohmann::json cmd_learn_concepts(const Artifacts& art) {
    const auto splits = load_splits(art);
    concepts::ProbeConfig pcfg = art.cfg.probes;
    pcfg.seed = derive_seed(art.cfg.seed, 2);
    const auto bank = concepts::train_probes(splits.train, splits.val, pcfg);
    concepts::save_bank(bank, art.bank_path());
    const auto used = concepts::filter_concepts(bank, art.cfg.concept_filter_threshold);
    auto summary = base_summary("learn-concepts", art);
    summary["metrics"] = {{"scores", bank.scores}, {"kept", used}, {"kept_count", used.size()}};
    summary["outputs"] = {{"concepts", art.bank_path()}};
    return summary;
}

nlohmann::json cmd_carve(const Artifacts& art) {
    const auto splits = load_splits(art);
    const auto bb = load_blackbox(art);
    const auto bank = load_bank_artifact(art);
    const auto used = concepts::filter_concepts(bank, art.cfg.concept_filter_threshold);
    const Matrix train_concepts = concepts::predict_concepts(bank, splits.train.embeddings);
    const Matrix test_concepts = concepts::predict_concepts(bank, splits.test.embeddings);

    const Matrix val_concepts = concepts::predict_concepts(bank, splits.val.embeddings);
    carver::CarveEval eval;
    eval.val = &splits.val;
    eval.val_concepts_full = &val_concepts;
    const auto moie = carver::carve(bb, splits.train, train_concepts, used, art.cfg.schedule, art.cfg.hyper,
                                    derive_seed(art.cfg.seed, 3), eval);
    carver::save_moie(moie, art.moie_dir());

    const auto report = carver::coverage_report(moie, bb, splits.test, test_concepts);
    fs::create_directories(art.reports_dir());
    write_json(carver::report_to_json(report), art.reports_dir() + "/expert_report.json");
    {
        std::ofstream csv(art.reports_dir() + "/expert_report.csv");
        csv << "bucket,coverage,accuracy,proportional_accuracy,f0_accuracy\n";
        char buf[160];
        for (const auto& b : report.buckets) {
            std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g\n", b.bucket.c_str(), b.coverage,
                          b.bucket_accuracy, b.proportional_accuracy, b.f0_accuracy);
            csv << buf;
        }
    }

    auto summary = base_summary("carve", art);
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : moie.records)
        recs.push_back({{"k", r.k},
                        {"zeta_train", r.zeta_train},
                        {"cumulative_coverage", r.cumulative_coverage},
                        {"covered_count", r.covered_count},
                        {"residual_train_accuracy", r.residual_train_accuracy},
                        {"stop_reason", r.stop_reason}});
    summary["metrics"] = {{"k", moie.k()},
                          {"records", recs},
                          {"cascade_test_accuracy", report.cascade_accuracy},
                          {"f0_test_accuracy", report.f0_overall_accuracy}};
    summary["outputs"] = {{"moie_dir", art.moie_dir()},
                          {"expert_report", art.reports_dir() + "/expert_report.csv"}};
    return summary;
}

nlohmann::json cmd_explain(const Artifacts& art) {
    const auto splits = load_splits(art);
    const auto bank = load_bank_artifact(art);
    const auto moie = load_moie_artifact(art);
    const Matrix test_concepts = concepts::predict_concepts(bank, splits.test.embeddings);
    const auto explained = analysis::explain_dataset(moie, splits.test, test_concepts);

    nlohmann::json formulas = nlohmann::json::array();
    for (const auto& f : explained.formulas) formulas.push_back(fol::formula_to_json(f));
    nlohmann::json out;
    out["schema_version"] = 1;
    out["formulas"] = formulas;
    write_json(out, art.out + "/explanations.json");

    std::vector<std::string> class_names;
    for (int c = 0; c < moie.num_classes; ++c) class_names.push_back("class_" + std::to_string(c));
    std::ofstream txt(art.out + "/explanations.txt");
    for (const auto& f : explained.formulas) {
        txt << "[expert_" << f.expert_id << "] " << fol::to_text(f, bank.names, class_names) << "\n";
    }

    auto summary = base_summary("explain", art);
    summary["metrics"] = {{"covered", explained.covered},
                          {"prediction_preserved", explained.prediction_preserved},
                          {"fidelity", explained.fidelity},
                          {"formula_count", explained.formulas.size()}};
    summary["outputs"] = {{"json", art.out + "/explanations.json"}, {"text", art.out + "/explanations.txt"}};
    return summary;
}

nlohmann::json cmd_completeness(const Artifacts& art) {
    const auto splits = load_splits(art);
    const auto bb = load_blackbox(art);
    const auto bank = load_bank_artifact(art);
    const auto moie = load_moie_artifact(art);
    const auto ranking = analysis::rank_concepts_by_attention(moie);

    analysis::CompletenessConfig ccfg = art.cfg.completeness;
    ccfg.seed = derive_seed(art.cfg.seed, 4);
    std::vector<std::tuple<int, std::string, double, std::uint64_t>> rows;
    nlohmann::json per_n = nlohmann::json::array();
    for (int n : art.cfg.completeness_n_list) {
        if (n <= 0 || n > bank.n_concepts()) fail_field("analysis.completeness_n_list", "entries must be in [1, n_concepts]");
        std::vector<int> top_set(ranking.begin(), ranking.begin() + n);
        const auto result =
            analysis::completeness(bb, bank, top_set, splits.train, splits.val, moie.num_classes, ccfg);
        rows.emplace_back(n, "eta", result.eta, art.cfg.seed);
        per_n.push_back({{"n", n},
                         {"eta", result.eta},
                         {"concept_model_accuracy", result.concept_model_accuracy},
                         {"f0_accuracy", result.f0_accuracy},
                         {"a_r", result.a_r}});
    }
    write_curve_csv(art.out + "/completeness.csv", rows);
    auto summary = base_summary("completeness", art);
    summary["metrics"] = {{"curve", per_n}};
    summary["outputs"] = {{"csv", art.out + "/completeness.csv"}};
    return summary;
}

nlohmann::json cmd_ablate(const Artifacts& art) {
    const auto splits = load_splits(art);
    const auto bank = load_bank_artifact(art);
    const auto moie = load_moie_artifact(art);
    const Matrix test_concepts = concepts::predict_concepts(bank, splits.test.embeddings);

    const auto top = analysis::zero_out_ablation(moie, splits.test, test_concepts, art.cfg.ablation_n_list, false,
                                                 derive_seed(art.cfg.seed, 5));
    const auto rnd = analysis::zero_out_ablation(moie, splits.test, test_concepts, art.cfg.ablation_n_list, true,
                                                 derive_seed(art.cfg.seed, 5));
    std::vector<std::tuple<int, std::string, double, std::uint64_t>> rows;
    nlohmann::json per_n = nlohmann::json::array();
    for (std::size_t i = 0; i < top.size(); ++i) {
        rows.emplace_back(top[i].n, "drop_top", top[i].drop, art.cfg.seed);
        rows.emplace_back(rnd[i].n, "drop_random", rnd[i].drop, art.cfg.seed);
        per_n.push_back({{"n", top[i].n}, {"drop_top", top[i].drop}, {"drop_random", rnd[i].drop}});
    }
    write_curve_csv(art.out + "/ablation.csv", rows);
    auto summary = base_summary("ablate", art);
    summary["metrics"] = {{"curve", per_n}};
    summary["outputs"] = {{"csv", art.out + "/ablation.csv"}};
    return summary;
}

nlohmann::json cmd_intervene(const Artifacts& art) {
    const auto splits = load_splits(art);
    const auto bank = load_bank_artifact(art);
    const auto moie = load_moie_artifact(art);
    const Matrix test_concepts = concepts::predict_concepts(bank, splits.test.embeddings);
    const auto scope = art.cfg.intervention_scope == "hard" ? analysis::InterventionScope::Hard
                                                            : analysis::InterventionScope::All;

    std::vector<std::tuple<int, std::string, double, std::uint64_t>> rows;
    nlohmann::json per_n = nlohmann::json::array();
    for (int n : art.cfg.intervention_n_list) {
        const auto result = analysis::intervene(moie, splits.test, test_concepts, n, scope);
        rows.emplace_back(n, "accuracy", result.accuracy, art.cfg.seed);
        per_n.push_back({{"n", n},
                         {"accuracy", result.accuracy},
                         {"base_accuracy", result.base_accuracy},
                         {"scope_count", result.scope_count}});
    }
    write_curve_csv(art.out + "/intervention.csv", rows);
    auto summary = base_summary("intervene", art);
    summary["metrics"] = {{"scope", art.cfg.intervention_scope}, {"curve", per_n}};
    summary["outputs"] = {{"csv", art.out + "/intervention.csv"}};
    return summary;
}

nlohmann::json cmd_shortcut(const Artifacts& art) {
    if (art.cfg.metadata.metadata_concepts.empty())
        fail_field("shortcut.metadata_concepts", "is required (or set data.gen.spurious.concept_index)");
    const auto splits = load_splits(art);
    const auto f0 = carver::train_blackbox(splits.train, art.cfg.blackbox, derive_seed(art.cfg.seed, 1));

    shortcut::FixConfig fix;
    fix.blackbox = art.cfg.blackbox;
    fix.probes = art.cfg.probes;
    fix.concept_filter_threshold = art.cfg.concept_filter_threshold;
    fix.schedule = art.cfg.schedule;
    fix.hyper = art.cfg.hyper;
    fix.metadata = art.cfg.metadata;
    const auto report = shortcut::fix_shortcut(f0, splits, fix, derive_seed(art.cfg.seed, 6));

    write_json(shortcut::fix_report_to_json(report), art.out + "/shortcut_report.json");
    {
        std::ofstream csv(art.out + "/shortcut_gaps.csv");
        csv << "stage,aligned_accuracy,conflicting_accuracy,gap\n";
        char buf[160];
        std::snprintf(buf, sizeof(buf), "biased,%.17g,%.17g,%.17g\n", report.biased_gap.aligned_accuracy,
                      report.biased_gap.conflicting_accuracy, report.biased_gap.gap);
        csv << buf;
        std::snprintf(buf, sizeof(buf), "robust,%.17g,%.17g,%.17g\n", report.robust_gap.aligned_accuracy,
                      report.robust_gap.conflicting_accuracy, report.robust_gap.gap);
        csv << buf;
    }

    auto summary = base_summary("shortcut", art);
    summary["metrics"] = {{"biased_gap", report.biased_gap.gap},
                          {"robust_gap", report.robust_gap.gap},
                          {"spurious_probe_score_biased", report.spurious_probe_score_biased},
                          {"spurious_probe_score_robust", report.spurious_probe_score_robust},
                          {"spurious_excluded_after_fix", report.spurious_excluded_after_fix},
                          {"detection_flagged", report.biased_detection.any_flagged()}};
    summary["outputs"] = {{"report", art.out + "/shortcut_report.json"},
                          {"gaps_csv", art.out + "/shortcut_gaps.csv"}};
    return summary;
}

nlohmann::json cmd_report(const Artifacts& art) {
    const auto splits = load_splits(art);
    const auto bb = load_blackbox(art);
    const auto bank = load_bank_artifact(art);
    const auto moie = load_moie_artifact(art);
    const Matrix test_concepts = concepts::predict_concepts(bank, splits.test.embeddings);
    fs::create_directories(art.reports_dir());

    const auto report = carver::coverage_report(moie, bb, splits.test, test_concepts);
    write_json(carver::report_to_json(report), art.reports_dir() + "/expert_report.json");
    {
        std::ofstream csv(art.reports_dir() + "/expert_report.csv");
        csv << "bucket,coverage,accuracy,proportional_accuracy,f0_accuracy\n";
        char buf[160];
        for (const auto& b : report.buckets) {
            std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g\n", b.bucket.c_str(), b.coverage,
                          b.bucket_accuracy, b.proportional_accuracy, b.f0_accuracy);
            csv << buf;
        }
    }

    // concept-use statistics per expert and class, from the local explanations
    const auto explained = analysis::explain_dataset(moie, splits.test, test_concepts);
    struct Stat {
        long total = 0;
        int samples = 0;
    };
    std::map<std::pair<int, int>, Stat> stats;
    for (const auto& conj : explained.conjunctions) {
        auto& s = stats[{conj.expert_id, conj.predicted_class}];
        s.total += static_cast<long>(conj.literals.size());
        s.samples += 1;
    }
    {
        std::ofstream csv(art.reports_dir() + "/concept_counts.csv");
        csv << "expert,class,avg_concepts,samples\n";
        char buf[120];
        for (const auto& [key, s] : stats) {
            std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%d\n", key.first, key.second,
                          static_cast<double>(s.total) / s.samples, s.samples);
            csv << buf;
        }
    }

    auto summary = base_summary("report", art);
    summary["metrics"] = {{"cascade_test_accuracy", report.cascade_accuracy},
                          {"f0_test_accuracy", report.f0_overall_accuracy},
                          {"fidelity", explained.fidelity}};
    nlohmann::json outputs = {{"expert_report_csv", art.reports_dir() + "/expert_report.csv"},
                              {"expert_report_json", art.reports_dir() + "/expert_report.json"},
                              {"concept_counts_csv", art.reports_dir() + "/concept_counts.csv"}};
    for (const char* extra : {"completeness.csv", "ablation.csv", "intervention.csv"})
        if (fs::exists(art.out + "/" + extra)) outputs[extra] = art.out + "/" + extra;
    summary["outputs"] = std::move(outputs);
    return summary;
}

}  // namespace

nlohmann::json run_command(const std::string& command, const RunConfig& config) {
    Artifacts art{config, config.out_dir};
    fs::create_directories(art.out);

    nlohmann::json summary;
    if (command == "gen-data") summary = cmd_gen_data(art);
    else if (command == "train-blackbox") summary = cmd_train_blackbox(art);
    else if (command == "learn-concepts") summary = cmd_learn_concepts(art);
    else if (command == "carve") summary = cmd_carve(art);
    else if (command == "explain") summary = cmd_explain(art);
    else if (command == "completeness") summary = cmd_completeness(art);
    else if (command == "ablate") summary = cmd_ablate(art);
    else if (command == "intervene") summary = cmd_intervene(art);
    else if (command == "shortcut") summary = cmd_shortcut(art);
    else if (command == "report") summary = cmd_report(art);
    else throw InputError("unknown command: " + command);

    finish(summary, command, art);
    return summary;
}

int run(int argc, const char* const* argv) {
    CLI::App app{"route, interpret, repeat: carve a blackbox into a mixture of interpretable experts"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed_override;
    std::optional<std::string> out_override;
    bool quiet = false;

    for (const auto& name : kCommands) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "path to the JSON run config")->required();
        sub->add_option("--seed", seed_override, "override the config seed");
        sub->add_option("--out", out_override, "override the output directory");
        sub->add_flag("--quiet", quiet, "suppress log output");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    const std::string command = app.get_subcommands().front()->get_name();
    if (quiet) log::threshold() = log::Level::Silent;
    try {
        RunConfig cfg = parse_config(config_path);
        if (seed_override) cfg.seed = *seed_override;
        if (out_override) cfg.out_dir = *out_override;
        run_command(command, cfg);
        return 0;
    } catch (const InputError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const ContractError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "runtime failure: %s\n", e.what());
        return 2;
    }
}

}  // namespace moie::cli
