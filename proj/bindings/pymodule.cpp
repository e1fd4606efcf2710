#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "moie/analysis.hpp"
#include "moie/cli.hpp"
#include "moie/shortcut.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace moie;

namespace {

Matrix to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw InputError("expected a 2-d float array");
    Matrix m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), m.data.begin());
    return m;
}

py::array_t<double> to_numpy(const Matrix& m) {
    py::array_t<double> out({m.rows, m.cols});
    std::copy(m.data.begin(), m.data.end(), out.mutable_data());
    return out;
}

nlohmann::json parse_json_str(const std::string& s) { return nlohmann::json::parse(s); }

}  // namespace

PYBIND11_MODULE(_moie, m) {
    m.doc() = "carve a blackbox classifier into a coverage-gated mixture of interpretable experts";

    py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
    py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<PipelineError>(m, "PipelineError", PyExc_RuntimeError);
    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

    // ---- data ----
    py::class_<data::Dataset>(m, "Dataset")
        .def(py::init<>())
        .def_property(
            "embeddings", [](const data::Dataset& d) { return to_numpy(d.embeddings); },
            [](data::Dataset& d, const py::array_t<double>& a) { d.embeddings = to_matrix(a); })
        .def_property(
            "concepts", [](const data::Dataset& d) { return to_numpy(d.concepts); },
            [](data::Dataset& d, const py::array_t<double>& a) { d.concepts = to_matrix(a); })
        .def_property(
            "gt_concepts", [](const data::Dataset& d) { return to_numpy(d.gt_concepts); },
            [](data::Dataset& d, const py::array_t<double>& a) { d.gt_concepts = to_matrix(a); })
        .def_readwrite("labels", &data::Dataset::labels)
        .def_readwrite("subgroup", &data::Dataset::subgroup)
        .def_readwrite("num_classes", &data::Dataset::num_classes)
        .def_readwrite("concept_names", &data::Dataset::concept_names)
        .def_readwrite("name", &data::Dataset::name)
        .def("size", &data::Dataset::size)
        .def("embed_dim", &data::Dataset::embed_dim)
        .def("n_concepts", &data::Dataset::n_concepts)
        .def("validate", &data::Dataset::validate);

    py::class_<data::GenSpec>(m, "GenSpec")
        .def(py::init(&data::GenSpec::default_spec))
        .def_static("from_json", [](const std::string& s) { return data::genspec_from_json(parse_json_str(s)); })
        .def("to_json", [](const data::GenSpec& s) { return data::genspec_to_json(s).dump(); })
        .def_readwrite("num_classes", &data::GenSpec::num_classes)
        .def_readwrite("n_concepts", &data::GenSpec::n_concepts)
        .def_readwrite("embed_dim", &data::GenSpec::embed_dim)
        .def_readwrite("rho", &data::GenSpec::rho)
        .def_readwrite("concept_noise", &data::GenSpec::concept_noise)
        .def_readwrite("embed_noise", &data::GenSpec::embed_noise)
        .def_readwrite("train_m", &data::GenSpec::train_m)
        .def_readwrite("val_m", &data::GenSpec::val_m)
        .def_readwrite("test_m", &data::GenSpec::test_m);

    m.def(
        "generate",
        [](const data::GenSpec& spec, std::uint64_t seed) {
            auto g = data::generate(spec, seed);
            return py::make_tuple(std::move(g.train), std::move(g.val), std::move(g.test));
        },
        "spec"_a, "seed"_a);
    m.def("save_csv", &data::save_csv, "dataset"_a, "path"_a);
    m.def("load_csv", &data::load_csv, "path"_a);
    m.def(
        "split",
        [](const data::Dataset& ds, double train, double val, double test, std::uint64_t seed) {
            auto s = data::split(ds, {train, val, test}, seed);
            return py::make_tuple(std::move(s.train), std::move(s.val), std::move(s.test));
        },
        "dataset"_a, "train"_a, "val"_a, "test"_a, "seed"_a);

    // ---- concepts ----
    py::class_<concepts::ConceptBank>(m, "ConceptBank")
        .def_readonly("names", &concepts::ConceptBank::names)
        .def_readonly("scores", &concepts::ConceptBank::scores)
        .def_property_readonly("directions",
                               [](const concepts::ConceptBank& b) { return to_numpy(b.directions); })
        .def("n_concepts", &concepts::ConceptBank::n_concepts);

    py::class_<concepts::ProbeConfig>(m, "ProbeConfig")
        .def(py::init<>())
        .def_readwrite("lr", &concepts::ProbeConfig::lr)
        .def_readwrite("epochs", &concepts::ProbeConfig::epochs)
        .def_readwrite("l2", &concepts::ProbeConfig::l2)
        .def_readwrite("seed", &concepts::ProbeConfig::seed);

    m.def("train_probes", &concepts::train_probes, "train"_a, "val"_a, "config"_a = concepts::ProbeConfig{});
    m.def(
        "predict_concepts",
        [](const concepts::ConceptBank& bank, const py::array_t<double>& emb) {
            return to_numpy(concepts::predict_concepts(bank, to_matrix(emb)));
        },
        "bank"_a, "embeddings"_a);
    m.def("filter_concepts", &concepts::filter_concepts, "bank"_a, "threshold"_a = 0.7);
    m.def(
        "cav_score",
        [](const py::array_t<double>& embedding, const concepts::ConceptBank& bank) {
            const auto v = to_matrix(embedding.attr("reshape")(1, -1).cast<py::array_t<double>>());
            return concepts::cav_score(v.row(0), bank);
        },
        "embedding"_a, "bank"_a);

    // ---- blackbox / carve ----
    py::class_<carver::BlackboxConfig>(m, "BlackboxConfig")
        .def(py::init<>())
        .def_readwrite("hidden", &carver::BlackboxConfig::hidden)
        .def_readwrite("lr", &carver::BlackboxConfig::lr)
        .def_readwrite("epochs", &carver::BlackboxConfig::epochs);

    py::class_<carver::Blackbox>(m, "Blackbox")
        .def("logits", [](const carver::Blackbox& bb, const py::array_t<double>& emb) {
            return to_numpy(bb.logits(to_matrix(emb)));
        })
        .def_readonly("iteration", &carver::Blackbox::iteration);

    m.def("train_blackbox", &carver::train_blackbox, "train"_a, "config"_a, "seed"_a);
    m.def(
        "accuracy",
        [](const py::array_t<double>& logits, const std::vector<int>& labels) {
            return carver::accuracy(to_matrix(logits), labels);
        },
        "logits"_a, "labels"_a);

    py::class_<carver::ExpertHyper>(m, "ExpertHyper")
        .def(py::init<>())
        .def_readwrite("expert_hidden", &carver::ExpertHyper::expert_hidden)
        .def_readwrite("t_lens", &carver::ExpertHyper::t_lens)
        .def_readwrite("lambda_lens", &carver::ExpertHyper::lambda_lens)
        .def_readwrite("selector_hidden", &carver::ExpertHyper::selector_hidden)
        .def_readwrite("lambda_s", &carver::ExpertHyper::lambda_s)
        .def_readwrite("alpha_mix", &carver::ExpertHyper::alpha_mix)
        .def_readwrite("lr", &carver::ExpertHyper::lr)
        .def_readwrite("epochs", &carver::ExpertHyper::epochs)
        .def_readwrite("residual_lr", &carver::ExpertHyper::residual_lr)
        .def_readwrite("residual_epochs", &carver::ExpertHyper::residual_epochs);

    py::class_<carver::CarveSchedule>(m, "CarveSchedule")
        .def(py::init<>())
        .def_readwrite("tau", &carver::CarveSchedule::tau)
        .def_readwrite("coverage_stop", &carver::CarveSchedule::coverage_stop)
        .def_readwrite("residual_accuracy_stop", &carver::CarveSchedule::residual_accuracy_stop)
        .def_readwrite("min_covered", &carver::CarveSchedule::min_covered);

    py::class_<carver::MoIE>(m, "MoIE")
        .def("k", &carver::MoIE::k)
        .def_readonly("concept_indices", &carver::MoIE::concept_indices)
        .def_readonly("num_classes", &carver::MoIE::num_classes)
        .def("save", [](const carver::MoIE& moie, const std::string& dir) { carver::save_moie(moie, dir); })
        .def_static("load", &carver::load_moie)
        .def("records_json", [](const carver::MoIE& moie) {
            nlohmann::json recs = nlohmann::json::array();
            for (const auto& r : moie.records)
                recs.push_back({{"k", r.k},
                                {"zeta_train", r.zeta_train},
                                {"cumulative_coverage", r.cumulative_coverage},
                                {"stop_reason", r.stop_reason}});
            return recs.dump();
        });

    m.def(
        "carve",
        [](const carver::Blackbox& f0, const data::Dataset& train, const py::array_t<double>& concepts_full,
           const std::vector<int>& used, const carver::CarveSchedule& schedule, const carver::ExpertHyper& hyper,
           std::uint64_t seed) {
            return carver::carve(f0, train, to_matrix(concepts_full), used, schedule, hyper, seed);
        },
        "f0"_a, "train"_a, "concepts_full"_a, "used_concepts"_a, "schedule"_a, "hyper"_a, "seed"_a);

    m.def(
        "moie_predict",
        [](const carver::MoIE& moie, const py::array_t<double>& concepts_full, const py::array_t<double>& emb) {
            const auto preds = carver::moie_predict_batch(moie, to_matrix(concepts_full), to_matrix(emb));
            std::vector<int> labels, routes;
            for (const auto& p : preds) {
                labels.push_back(p.label);
                routes.push_back(p.route);
            }
            return py::make_tuple(labels, routes);
        },
        "moie"_a, "concepts_full"_a, "embeddings"_a);

    m.def(
        "coverage_report",
        [](const carver::MoIE& moie, const carver::Blackbox& f0, const data::Dataset& test,
           const py::array_t<double>& concepts_full) {
            return carver::report_to_json(carver::coverage_report(moie, f0, test, to_matrix(concepts_full))).dump();
        },
        "moie"_a, "f0"_a, "test"_a, "concepts_full"_a);

    // ---- explanations & analysis ----
    m.def(
        "explain",
        [](const carver::MoIE& moie, const data::Dataset& ds, const py::array_t<double>& concepts_full) {
            const auto ex = analysis::explain_dataset(moie, ds, to_matrix(concepts_full));
            nlohmann::json j;
            j["fidelity"] = ex.fidelity;
            j["covered"] = ex.covered;
            j["prediction_preserved"] = ex.prediction_preserved;
            nlohmann::json fs = nlohmann::json::array();
            for (const auto& f : ex.formulas) fs.push_back(fol::formula_to_json(f));
            j["formulas"] = std::move(fs);
            return j.dump();
        },
        "moie"_a, "dataset"_a, "concepts_full"_a);

    m.def(
        "completeness",
        [](const carver::Blackbox& f0, const concepts::ConceptBank& bank, const std::vector<int>& top_set,
           const data::Dataset& train, const data::Dataset& val, int num_classes, int hidden, int restarts,
           std::uint64_t seed) {
            analysis::CompletenessConfig cfg;
            cfg.hidden = hidden;
            cfg.restarts = restarts;
            cfg.seed = seed;
            const auto r = analysis::completeness(f0, bank, top_set, train, val, num_classes, cfg);
            return py::make_tuple(r.eta, r.concept_model_accuracy, r.f0_accuracy);
        },
        "f0"_a, "bank"_a, "top_set"_a, "train"_a, "val"_a, "num_classes"_a, "hidden"_a = 64, "restarts"_a = 3,
        "seed"_a = 0);

    m.def(
        "zero_out_ablation",
        [](const carver::MoIE& moie, const data::Dataset& test, const py::array_t<double>& concepts_full,
           const std::vector<int>& n_list, bool random_baseline, std::uint64_t seed) {
            const auto curve =
                analysis::zero_out_ablation(moie, test, to_matrix(concepts_full), n_list, random_baseline, seed);
            std::vector<std::pair<int, double>> out;
            for (const auto& p : curve) out.emplace_back(p.n, p.drop);
            return out;
        },
        "moie"_a, "test"_a, "concepts_full"_a, "n_list"_a, "random_baseline"_a = false, "seed"_a = 0);

    m.def(
        "intervene",
        [](const carver::MoIE& moie, const data::Dataset& test, const py::array_t<double>& concepts_full, int n,
           const std::string& scope) {
            const auto r = analysis::intervene(moie, test, to_matrix(concepts_full), n,
                                               scope == "hard" ? analysis::InterventionScope::Hard
                                                               : analysis::InterventionScope::All);
            return py::make_tuple(r.accuracy, r.base_accuracy, r.scope_count);
        },
        "moie"_a, "test"_a, "concepts_full"_a, "n"_a, "scope"_a = "all");

    m.def(
        "mdn_residualize",
        [](const py::array_t<double>& features, const py::array_t<double>& metadata) {
            return to_numpy(shortcut::mdn_residualize(to_matrix(features), to_matrix(metadata)));
        },
        "features"_a, "metadata"_a);

    // ---- CLI parity ----
    m.def(
        "run_command",
        [](const std::string& command, const std::string& config_json) {
            const auto cfg = cli::config_from_json(parse_json_str(config_json), "<inline>");
            return cli::run_command(command, cfg).dump();
        },
        "command"_a, "config_json"_a);

    m.attr("__version__") = "0.1.0";
}
