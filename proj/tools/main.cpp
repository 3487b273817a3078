#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "treerank/commands.hpp"
#include "treerank/errors.hpp"

namespace {

using namespace treerank;

struct Flags {
  std::string config;
  std::string out;
  std::string data;
  std::string model;
  std::string requests;
  std::string weights;
  std::vector<std::string> set;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  std::optional<std::string> ablate;
  std::optional<std::string> mode;
  std::vector<std::size_t> k;
  std::optional<std::size_t> beam;
  std::optional<std::size_t> n;
  std::optional<std::size_t> m;
  std::optional<std::size_t> epochs;
};

Overrides overrides_of(const Flags& f) {
  Overrides o;
  for (const auto& kv : f.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    o.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) o.emplace_back("seed", std::to_string(*f.seed));
  if (f.alpha) {
    std::ostringstream ss;
    ss.precision(17);
    ss << *f.alpha;
    o.emplace_back("train.alpha", ss.str());
  }
  if (f.ablate) o.emplace_back("ablate", *f.ablate);
  if (f.mode) o.emplace_back("bench.mode", *f.mode);
  if (!f.k.empty()) {
    std::string joined;
    for (std::size_t i = 0; i < f.k.size(); ++i) joined += (i ? "," : "") + std::to_string(f.k[i]);
    o.emplace_back("bench.k", joined);
  }
  if (f.beam) o.emplace_back("bench.beam", std::to_string(*f.beam));
  if (f.n) o.emplace_back("model.n", std::to_string(*f.n));
  if (f.m) o.emplace_back("model.m", std::to_string(*f.m));
  if (f.epochs) o.emplace_back("train.epochs", std::to_string(*f.epochs));
  return o;
}

std::vector<Scalar> parse_weights(const std::string& text) {
  std::vector<Scalar> w;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      w.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("bad weight '" + item + "'");
    }
  }
  return w;
}

fs::path default_out_root() {
  const char* env = std::getenv("TREERANK_OUT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"treerank: listwise reranking over the full permutation space"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "config file (key = value)");
    sub->add_option("--set", f.set, "config override key=value (repeatable)");
    sub->add_option("--seed", f.seed, "random seed");
    sub->add_option("--out", f.out, "output directory (default $TREERANK_OUT/<command>)");
    sub->add_option("--n", f.n, "candidates per request");
    sub->add_option("--m", f.m, "list length");
  };
  auto needs_data = [&](CLI::App* sub) { sub->add_option("--data", f.data, "dataset directory")->required(); };
  auto needs_model = [&](CLI::App* sub) { sub->add_option("--model", f.model, "training run directory")->required(); };
  auto training_flags = [&](CLI::App* sub) {
    sub->add_option("--alpha", f.alpha, "GBPR loss weight");
    sub->add_option("--ablate", f.ablate, "ablation: irm, tcem, gbpr (comma list) or none");
    sub->add_option("--epochs", f.epochs, "training epochs");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  common(gen);
  auto* tr = app.add_subcommand("train", "train a model");
  common(tr);
  needs_data(tr);
  training_flags(tr);
  auto* ev = app.add_subcommand("evaluate", "AUC and GAUC on the test lists");
  common(ev);
  needs_data(ev);
  needs_model(ev);
  auto* rr = app.add_subcommand("rerank", "best permutation per request");
  common(rr);
  needs_model(rr);
  rr->add_option("--requests", f.requests, "requests file")->required();
  rr->add_option("--weights", f.weights, "per-position business weights, comma separated");
  auto* be = app.add_subcommand("bench", "latency, call counts and hit ratio");
  common(be);
  needs_data(be);
  needs_model(be);
  be->add_option("--mode", f.mode, "cached or naive");
  be->add_option("--k", f.k, "sampled permutations per request (naive mode)");
  be->add_option("--beam", f.beam, "beam width of the beam-search baseline");
  auto* ab = app.add_subcommand("ablate", "train and evaluate every ablation");
  common(ab);
  needs_data(ab);
  training_flags(ab);
  auto* sw = app.add_subcommand("sweep-alpha", "AUC/GAUC across GBPR weights");
  common(sw);
  needs_data(sw);
  training_flags(sw);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }

  try {
    const std::optional<fs::path> config_file = f.config.empty() ? std::nullopt : std::optional<fs::path>(f.config);
    const Config cfg = resolve_config(config_file, overrides_of(f));
    CLI::App* sub = app.get_subcommands().front();
    const fs::path out = f.out.empty() ? default_out_root() / sub->get_name() : fs::path(f.out);

    if (sub == gen) cmd_gen_data(cfg, out);
    else if (sub == tr) cmd_train(cfg, f.data, out);
    else if (sub == ev) cmd_evaluate(cfg, f.data, f.model, out);
    else if (sub == rr) cmd_rerank(cfg, f.requests, f.model, out, parse_weights(f.weights));
    else if (sub == be) cmd_bench(cfg, f.data, f.model, out);
    else if (sub == ab) cmd_ablate(cfg, f.data, out);
    else if (sub == sw) cmd_sweep_alpha(cfg, f.data, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << error_class(e) << ": " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}
