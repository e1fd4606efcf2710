#pragma once

#include <optional>
#include <string>
#include <vector>

#include "moie/shortcut.hpp"

namespace moie::cli {

struct RunConfig {
    std::uint64_t seed = 7;
    std::string out_dir = "runs/out";

    // data
    std::string data_source = "generate";  // "generate" | "csv"
    data::GenSpec gen;
    std::string csv_train, csv_val, csv_test;

    carver::BlackboxConfig blackbox;
    concepts::ProbeConfig probes;
    double concept_filter_threshold = 0.7;
    std::string concept_mode = "probe";

    carver::CarveSchedule schedule;
    carver::ExpertHyper hyper;

    analysis::CompletenessConfig completeness;
    std::vector<int> completeness_n_list{4, 8, 12, 16};
    std::vector<int> ablation_n_list{0, 1, 2, 5, 10};
    std::vector<int> intervention_n_list{0, 5, 10};
    std::string intervention_scope = "all";  // "all" | "hard"

    shortcut::MetadataSpec metadata;

    nlohmann::json echo;  // parsed config for summaries
};

RunConfig parse_config(const std::string& path);
RunConfig config_from_json(const nlohmann::json& j, const std::string& origin);

// One subcommand end to end; writes artifacts plus <command>_summary.json
// under the output directory. Returns the summary.
nlohmann::json run_command(const std::string& command, const RunConfig& config);

extern const std::vector<std::string> kCommands;

// argv-level entry point: parses flags, maps errors to exit codes
// (1: validation, 2: runtime failure).
int run(int argc, const char* const* argv);

}  // namespace moie::cli
