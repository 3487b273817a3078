#include "treerank/commands.hpp"

#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "treerank/ccm.hpp"
#include "treerank/errors.hpp"
#include "treerank/metrics.hpp"
#include "treerank/training.hpp"

#ifndef TREERANK_BUILD_ID
#define TREERANK_BUILD_ID "unknown"
#endif

namespace treerank {

namespace {

constexpr const char* kConfigFile = "config.txt";
constexpr const char* kModelFile = "model.ckpt";

std::string fmt(Scalar v) {
  std::ostringstream ss;
  ss.precision(10);
  ss << v;
  return ss.str();
}

std::ofstream open_text(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ResourceError("cannot write " + path.string());
  return out;
}

void write_resolved_config(const Config& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  auto out = open_text(dir / kConfigFile);
  out << render_config(cfg);
}

// seed, config hash and build id, appended to every metric row.
std::string meta_columns(const Config& cfg) {
  std::ostringstream ss;
  ss << cfg.seed << ',' << std::hex << config_hash(cfg) << std::dec << ',' << build_id();
  return ss.str();
}

std::vector<ListSample> load_filtered(const fs::path& file, const Config& cfg, FilterStats* fstats) {
  LoadStats lstats;
  auto samples = load_dataset(file, cfg.data.error_budget, &lstats);
  if (lstats.malformed > 0) {
    std::cerr << "warning: " << file.string() << ": skipped " << lstats.malformed << " malformed lines\n";
    for (const auto& e : lstats.errors) std::cerr << "  " << e << "\n";
  }
  return filter_lists(std::move(samples), fstats);
}

ModelParams load_run_model(const Config& cfg, const fs::path& model_dir) {
  return load_model(cfg.model, model_dir / kModelFile);
}

PermutationSpace space_for(const Config& cfg) {
  IndexOptions opts;
  opts.levels = cfg.model.context_levels();
  opts.max_permutations = cfg.bench.max_permutations;
  return build_index_matrix(cfg.model.num_candidates, cfg.model.list_len, opts);
}

ScoringOptions scoring_of(const Config& cfg) { return {cfg.bench.chunk_size, cfg.bench.workers}; }

}  // namespace

const char* build_id() { return TREERANK_BUILD_ID; }

std::string error_class(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
  if (dynamic_cast<const InputError*>(&e)) return "input";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric";
  if (dynamic_cast<const ResourceError*>(&e)) return "resource";
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  if (dynamic_cast<const ConsistencyError*>(&e)) return "consistency";
  if (dynamic_cast<const UndefinedMetricError*>(&e)) return "metric";
  return "runtime";
}

int exit_code_for(const std::exception& e) { return dynamic_cast<const ConfigError*>(&e) ? 2 : 1; }

Config resolve_config(const std::optional<fs::path>& config_file, const Overrides& overrides) {
  Config cfg = config_file ? load_config(*config_file) : Config{};
  for (const auto& [k, v] : overrides) apply_setting(cfg, k, v);
  validate_config(cfg);
  return cfg;
}

Config with_model_of(const Config& cfg, const fs::path& model_dir) {
  const fs::path file = model_dir / kConfigFile;
  if (!fs::exists(file)) return cfg;
  const Config trained = load_config(file);
  Config out = cfg;
  out.model = trained.model;
  out.train.no_gbpr = trained.train.no_gbpr;
  validate_config(out);
  return out;
}

EvalSummary evaluate_model(const ModelParams& params, std::span<const ListSample> filtered) {
  const auto preds = predict_lists(filtered, params);
  std::vector<EvalRecord> records;
  records.reserve(filtered.size());
  for (std::size_t i = 0; i < filtered.size(); ++i) records.push_back({filtered[i].id, preds[i], filtered[i].labels});
  EvalSummary s;
  s.lists = records.size();
  s.auc = auc(records);
  s.gauc = gauc(records);
  return s;
}

void cmd_gen_data(const Config& cfg, const fs::path& out) {
  const SyntheticWorld world = make_world(cfg);
  const GeneratedData data = generate(world, cfg);
  write_resolved_config(cfg, out);
  write_dataset(out / "train.jsonl", data.train, cfg.model.list_len, cfg.model.dense_dim);
  write_dataset(out / "test.jsonl", data.test, cfg.model.list_len, cfg.model.dense_dim);
  write_requests(out / "requests.jsonl", data.requests, cfg.model.num_candidates, cfg.model.dense_dim);
  if (cfg.data.ground_truth) write_ground_truth(out / "ground_truth.jsonl", data.ground_truth);
  std::cout << "wrote " << data.train.size() << " train lists, " << data.test.size() << " test lists, "
            << data.requests.size() << " requests to " << out.string() << "\n";
}

void cmd_train(const Config& cfg, const fs::path& data_dir, const fs::path& out) {
  FilterStats fstats;
  const auto train_set = load_filtered(data_dir / "train.jsonl", cfg, &fstats);
  std::cout << "training on " << fstats.kept << " lists (dropped " << fstats.dropped_all_zero << " all-0, "
            << fstats.dropped_all_one << " all-1)\n";
  const TrainResult result = train(train_set, cfg);
  write_resolved_config(cfg, out);
  save_model(result.params, out / kModelFile);
  auto csv = open_text(out / "loss.csv");
  csv << "epoch,ce,gbpr,total,lists,seed,config_hash,build_id\n";
  for (const auto& e : result.epochs) {
    csv << e.epoch << ',' << fmt(e.loss.ce) << ',' << fmt(e.loss.gbpr) << ',' << fmt(e.loss.total) << ',' << e.lists
        << ',' << meta_columns(cfg) << "\n";
    std::cout << "epoch " << e.epoch << " ce=" << fmt(e.loss.ce) << " gbpr=" << fmt(e.loss.gbpr)
              << " total=" << fmt(e.loss.total) << "\n";
  }
}

EvalSummary cmd_evaluate(const Config& raw, const fs::path& data_dir, const fs::path& model_dir,
                         const fs::path& out) {
  const Config cfg = with_model_of(raw, model_dir);
  FilterStats fstats;
  const auto test_set = load_filtered(data_dir / "test.jsonl", cfg, &fstats);
  const ModelParams params = load_run_model(cfg, model_dir);
  EvalSummary s = evaluate_model(params, test_set);
  s.dropped_all_zero = fstats.dropped_all_zero;
  s.dropped_all_one = fstats.dropped_all_one;

  write_resolved_config(cfg, out);
  auto csv = open_text(out / "metrics.csv");
  csv << "metric,value,seed,config_hash,build_id\n";
  const std::string meta = meta_columns(cfg);
  csv << "auc," << fmt(s.auc) << ',' << meta << "\n";
  csv << "gauc," << fmt(s.gauc) << ',' << meta << "\n";
  csv << "lists," << s.lists << ',' << meta << "\n";
  csv << "dropped_all_zero," << s.dropped_all_zero << ',' << meta << "\n";
  csv << "dropped_all_one," << s.dropped_all_one << ',' << meta << "\n";
  std::cout << "auc=" << fmt(s.auc) << " gauc=" << fmt(s.gauc) << " lists=" << s.lists << "\n";
  return s;
}

void cmd_rerank(const Config& raw, const fs::path& requests_file, const fs::path& model_dir, const fs::path& out,
                std::span<const Scalar> weights) {
  const Config cfg = with_model_of(raw, model_dir);
  const auto requests = load_requests(requests_file, cfg.data.error_budget);
  const ModelParams params = load_run_model(cfg, model_dir);
  const PermutationSpace space = space_for(cfg);
  write_resolved_config(cfg, out);
  auto lines = open_text(out / "rerank.jsonl");
  for (const auto& r : requests) {
    const RerankResult res = rerank(r.request, params, space, weights, scoring_of(cfg));
    nlohmann::json j{{"id", r.id},
                     {"best_index", res.best_index},
                     {"best_permutation", res.best_permutation},
                     {"best_items", res.best_items},
                     {"best_score", res.best_score}};
    lines << j.dump() << "\n";
  }
  std::cout << "reranked " << requests.size() << " requests over " << space.permutations.count()
            << " permutations each\n";
}

void cmd_bench(const Config& raw, const fs::path& data_dir, const fs::path& model_dir, const fs::path& out) {
  const Config cfg = with_model_of(raw, model_dir);
  const auto records = load_requests(data_dir / "requests.jsonl", cfg.data.error_budget);
  if (records.empty()) throw InputError("no requests to benchmark");
  std::vector<RawRequest> requests;
  for (const auto& r : records) requests.push_back(r.request);
  const ModelParams params = load_run_model(cfg, model_dir);
  const PermutationSpace space = space_for(cfg);
  const std::size_t total = space.permutations.count();
  const bool naive = cfg.bench.mode == "naive";
  if (!naive && cfg.bench.mode != "cached") throw ConfigError("bench.mode must be cached or naive");

  // Evaluator argmax of every request, the reference for every HR figure.
  std::vector<std::size_t> best(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    best[i] = rerank(requests[i], params, space, {}, scoring_of(cfg)).best_index;
  }

  write_resolved_config(cfg, out);
  auto metrics = open_text(out / "bench_metrics.csv");
  auto timing = open_text(out / "bench_timing.csv");
  metrics << "mode,gsu,k,trials,hr,set_attention_per_request,head_evals_per_request,seed,config_hash,build_id\n";
  timing << "mode,k,repetitions,warmup,mean_ms,p99_ms\n";
  const std::string meta = meta_columns(cfg);

  BenchOptions bopts;
  bopts.mode = cfg.bench.mode;
  bopts.repetitions = cfg.bench.repetitions;
  bopts.warmup = cfg.bench.warmup;
  bopts.seed = cfg.seed;
  bopts.scoring = scoring_of(cfg);

  auto write_timing = [&](const BenchResult& r, std::size_t k) {
    timing << r.mode << ',' << k << ',' << r.repetitions << ',' << bopts.warmup << ',' << fmt(r.mean_ms) << ','
           << fmt(r.p99_ms) << "\n";
  };

  if (naive) {
    for (std::size_t k : cfg.bench.k_values) {
      std::vector<HRTrial> trials;
      for (std::size_t i = 0; i < records.size(); ++i) {
        for (std::size_t d = 0; d < cfg.bench.hr_draws; ++d) {
          std::mt19937_64 rng(derive_seed(cfg.seed ^ k, records[i].id * 131 + d));
          trials.push_back({records[i].id, best[i], gsu_random_k(total, k, rng)});
        }
      }
      bopts.k = k;
      const BenchResult r = bench(requests, params, space, bopts);
      metrics << "naive,random," << k << ',' << trials.size() << ',' << fmt(hit_ratio(trials)) << ','
              << r.set_attention_calls << ',' << r.head_evals << ',' << meta << "\n";
      write_timing(r, k);
      std::cout << "naive k=" << k << " hr=" << fmt(hit_ratio(trials)) << " set_attention=" << r.set_attention_calls
                << " mean_ms=" << fmt(r.mean_ms) << "\n";
    }
  } else {
    std::vector<HRTrial> trials;
    std::vector<std::size_t> all(total);
    for (std::size_t p = 0; p < total; ++p) all[p] = p;
    for (std::size_t i = 0; i < records.size(); ++i) trials.push_back({records[i].id, best[i], all});
    const BenchResult r = bench(requests, params, space, bopts);
    metrics << "cached,full," << total << ',' << trials.size() << ',' << fmt(hit_ratio(trials)) << ','
            << r.set_attention_calls << ',' << r.head_evals << ',' << meta << "\n";
    write_timing(r, total);
    std::cout << "cached hr=" << fmt(hit_ratio(trials)) << " set_attention=" << r.set_attention_calls
              << " mean_ms=" << fmt(r.mean_ms) << " p99_ms=" << fmt(r.p99_ms) << "\n";
  }

  std::vector<HRTrial> beam_trials;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Tensor semantic = semantic_encode(requests[i], params);
    HRTrial t{records[i].id, best[i], {}};
    for (const auto& list : gsu_beam_search(semantic, params, cfg.bench.beam)) {
      t.candidates.push_back(permutation_rank(cfg.model.num_candidates, list));
    }
    beam_trials.push_back(std::move(t));
  }
  metrics << cfg.bench.mode << ",beam," << cfg.bench.beam << ',' << beam_trials.size() << ','
          << fmt(hit_ratio(beam_trials)) << ",0,0," << meta << "\n";
  std::cout << "beam=" << cfg.bench.beam << " hr=" << fmt(hit_ratio(beam_trials)) << "\n";
}

namespace {

EvalSummary train_and_evaluate(const Config& cfg, std::span<const ListSample> train_set,
                               std::span<const ListSample> test_set) {
  const TrainResult result = train(train_set, cfg);
  return evaluate_model(result.params, test_set);
}

}  // namespace

void cmd_ablate(const Config& cfg, const fs::path& data_dir, const fs::path& out) {
  const auto train_set = load_filtered(data_dir / "train.jsonl", cfg, nullptr);
  const auto test_set = load_filtered(data_dir / "test.jsonl", cfg, nullptr);
  write_resolved_config(cfg, out);
  auto csv = open_text(out / "ablation.csv");
  csv << "variant,auc,gauc,seed,config_hash,build_id\n";
  for (const std::string variant : {"none", "irm", "tcem", "gbpr"}) {
    Config v = cfg;
    apply_setting(v, "ablate", variant);
    if (variant == "gbpr") v.train.alpha_set = false;
    validate_config(v);
    const EvalSummary s = train_and_evaluate(v, train_set, test_set);
    const std::string name = variant == "none" ? "full" : "no_" + variant;
    csv << name << ',' << fmt(s.auc) << ',' << fmt(s.gauc) << ',' << meta_columns(v) << "\n";
    std::cout << name << " auc=" << fmt(s.auc) << " gauc=" << fmt(s.gauc) << "\n";
  }
}

void cmd_sweep_alpha(const Config& cfg, const fs::path& data_dir, const fs::path& out) {
  const auto train_set = load_filtered(data_dir / "train.jsonl", cfg, nullptr);
  const auto test_set = load_filtered(data_dir / "test.jsonl", cfg, nullptr);
  write_resolved_config(cfg, out);
  auto csv = open_text(out / "sweep_alpha.csv");
  csv << "alpha,auc,gauc,seed,config_hash,build_id\n";
  for (Scalar alpha : {0.0, 0.01, 0.05, 0.1, 0.5}) {
    Config v = cfg;
    v.train.no_gbpr = false;
    v.train.alpha = alpha;
    v.train.alpha_set = true;
    const EvalSummary s = train_and_evaluate(v, train_set, test_set);
    csv << fmt(alpha) << ',' << fmt(s.auc) << ',' << fmt(s.gauc) << ',' << meta_columns(v) << "\n";
    std::cout << "alpha=" << fmt(alpha) << " auc=" << fmt(s.auc) << " gauc=" << fmt(s.gauc) << "\n";
  }
}

}  // namespace treerank
