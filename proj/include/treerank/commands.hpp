#pragma once

// Subcommand implementations behind the `treerank` binary. Each writes its
// outputs plus the resolved config into its output directory.

#include <exception>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "treerank/config.hpp"
#include "treerank/data.hpp"
#include "treerank/model.hpp"

namespace treerank {

namespace fs = std::filesystem;

const char* build_id();

// Short class tag for the one-line error report.
std::string error_class(const std::exception& e);
// 2 for usage and config errors, 1 otherwise.
int exit_code_for(const std::exception& e);

using Overrides = std::vector<std::pair<std::string, std::string>>;

// Config file (if any), then overrides in order; validated.
Config resolve_config(const std::optional<fs::path>& config_file, const Overrides& overrides);

// Model section (architecture and ablation flags) taken from a training run
// directory, so a checkpoint is always reloaded with the shapes it was saved with.
Config with_model_of(const Config& cfg, const fs::path& model_dir);

struct EvalSummary {
  Scalar auc = 0;
  Scalar gauc = 0;
  std::size_t lists = 0;
  std::size_t dropped_all_zero = 0;
  std::size_t dropped_all_one = 0;
};

EvalSummary evaluate_model(const ModelParams& params, std::span<const ListSample> filtered);

void cmd_gen_data(const Config& cfg, const fs::path& out);
void cmd_train(const Config& cfg, const fs::path& data_dir, const fs::path& out);
EvalSummary cmd_evaluate(const Config& cfg, const fs::path& data_dir, const fs::path& model_dir, const fs::path& out);
void cmd_rerank(const Config& cfg, const fs::path& requests_file, const fs::path& model_dir, const fs::path& out,
                std::span<const Scalar> weights = {});
void cmd_bench(const Config& cfg, const fs::path& data_dir, const fs::path& model_dir, const fs::path& out);
void cmd_ablate(const Config& cfg, const fs::path& data_dir, const fs::path& out);
void cmd_sweep_alpha(const Config& cfg, const fs::path& data_dir, const fs::path& out);

}  // namespace treerank
