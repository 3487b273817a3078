#include "treerank/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "treerank/errors.hpp"

namespace treerank {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) throw ConfigError("invalid count for '" + key + "': " + v);
  return out;
}

Scalar parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const Scalar out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("invalid number for '" + key + "': " + v);
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("invalid boolean for '" + key + "': " + v);
}

std::vector<std::size_t> parse_counts(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_count(key, item));
  }
  return out;
}

std::string join_counts(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::string fmt_real(Scalar v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string render_ablation(const Config& c) {
  std::vector<std::string> parts;
  if (c.model.no_irm) parts.emplace_back("irm");
  if (c.model.no_tcem) parts.emplace_back("tcem");
  if (c.train.no_gbpr) parts.emplace_back("gbpr");
  if (parts.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) s += (i ? "," : "") + parts[i];
  return s;
}

void apply_ablation(Config& c, const std::string& v) {
  c.model.no_irm = c.model.no_tcem = c.train.no_gbpr = false;
  if (v == "none" || v.empty()) return;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item == "irm") c.model.no_irm = true;
    else if (item == "tcem") c.model.no_tcem = true;
    else if (item == "gbpr") c.train.no_gbpr = true;
    else throw ConfigError("unknown ablation '" + item + "' (expected irm, tcem, gbpr)");
  }
}

struct Field {
  std::function<void(Config&, const std::string&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    auto cnt = [&](const char* key, auto member) {
      f[key] = {[member](Config& c, const std::string& k, const std::string& v) { member(c) = parse_count(k, v); },
                [member](const Config& c) { return std::to_string(member(const_cast<Config&>(c))); }};
    };
    auto real = [&](const char* key, auto member) {
      f[key] = {[member](Config& c, const std::string& k, const std::string& v) { member(c) = parse_real(k, v); },
                [member](const Config& c) { return fmt_real(member(const_cast<Config&>(c))); }};
    };
    auto flag = [&](const char* key, auto member) {
      f[key] = {[member](Config& c, const std::string& k, const std::string& v) { member(c) = parse_bool(k, v); },
                [member](const Config& c) { return std::string(member(const_cast<Config&>(c)) ? "1" : "0"); }};
    };

    f["seed"] = {[](Config& c, const std::string& k, const std::string& v) { c.seed = parse_count(k, v); },
                 [](const Config& c) { return std::to_string(c.seed); }};
    cnt("model.dim", [](Config& c) -> std::size_t& { return c.model.dim; });
    cnt("model.m", [](Config& c) -> std::size_t& { return c.model.list_len; });
    cnt("model.n", [](Config& c) -> std::size_t& { return c.model.num_candidates; });
    f["model.hidden"] = {[](Config& c, const std::string& k, const std::string& v) { c.model.hidden = parse_counts(k, v); },
                         [](const Config& c) { return join_counts(c.model.hidden); }};
    cnt("vocab.users", [](Config& c) -> std::size_t& { return c.model.user_vocab; });
    cnt("vocab.contexts", [](Config& c) -> std::size_t& { return c.model.context_vocab; });
    cnt("vocab.items", [](Config& c) -> std::size_t& { return c.model.item_vocab; });
    cnt("model.dense_dim", [](Config& c) -> std::size_t& { return c.model.dense_dim; });
    flag("model.oov", [](Config& c) -> bool& { return c.model.oov_enabled; });
    flag("model.irm_concat_item", [](Config& c) -> bool& { return c.model.concat_item; });
    flag("model.per_level_set_attention", [](Config& c) -> bool& { return c.model.per_level_set_attention; });
    real("model.init_std", [](Config& c) -> Scalar& { return c.model.init_std; });
    f["ablate"] = {[](Config& c, const std::string&, const std::string& v) { apply_ablation(c, v); },
                   [](const Config& c) { return render_ablation(c); }};

    real("train.lr", [](Config& c) -> Scalar& { return c.train.lr; });
    f["train.alpha"] = {[](Config& c, const std::string& k, const std::string& v) {
                          c.train.alpha = parse_real(k, v);
                          c.train.alpha_set = true;
                        },
                        // The effective value, so a rendered config reloads without a conflict.
                        [](const Config& c) { return fmt_real(c.train.no_gbpr ? 0.0 : c.train.alpha); }};
    real("train.dropout", [](Config& c) -> Scalar& { return c.train.dropout; });
    cnt("train.batch_size", [](Config& c) -> std::size_t& { return c.train.batch_size; });
    cnt("train.epochs", [](Config& c) -> std::size_t& { return c.train.epochs; });

    cnt("world.categories", [](Config& c) -> std::size_t& { return c.world.num_categories; });
    cnt("world.behavior_len", [](Config& c) -> std::size_t& { return c.world.behavior_len; });
    real("world.bias", [](Config& c) -> Scalar& { return c.world.bias; });
    real("world.quality_std", [](Config& c) -> Scalar& { return c.world.quality_std; });
    real("world.influence_std", [](Config& c) -> Scalar& { return c.world.influence_std; });
    cnt("world.planted_pairs", [](Config& c) -> std::size_t& { return c.world.planted_pairs; });
    real("world.planted_strength", [](Config& c) -> Scalar& { return c.world.planted_strength; });
    real("world.affinity", [](Config& c) -> Scalar& { return c.world.affinity; });
    real("world.position_decay", [](Config& c) -> Scalar& { return c.world.position_decay; });

    cnt("data.train_lists", [](Config& c) -> std::size_t& { return c.data.train_lists; });
    cnt("data.test_lists", [](Config& c) -> std::size_t& { return c.data.test_lists; });
    cnt("data.requests", [](Config& c) -> std::size_t& { return c.data.requests; });
    flag("data.ground_truth", [](Config& c) -> bool& { return c.data.ground_truth; });
    cnt("data.error_budget", [](Config& c) -> std::size_t& { return c.data.error_budget; });

    f["bench.k"] = {[](Config& c, const std::string& k, const std::string& v) { c.bench.k_values = parse_counts(k, v); },
                    [](const Config& c) { return join_counts(c.bench.k_values); }};
    cnt("bench.beam", [](Config& c) -> std::size_t& { return c.bench.beam; });
    cnt("bench.repetitions", [](Config& c) -> std::size_t& { return c.bench.repetitions; });
    cnt("bench.warmup", [](Config& c) -> std::size_t& { return c.bench.warmup; });
    f["bench.mode"] = {[](Config& c, const std::string&, const std::string& v) {
                         if (v != "cached" && v != "naive") throw ConfigError("bench.mode must be cached or naive");
                         c.bench.mode = v;
                       },
                       [](const Config& c) { return c.bench.mode; }};
    cnt("bench.workers", [](Config& c) -> std::size_t& { return c.bench.workers; });
    cnt("bench.chunk_size", [](Config& c) -> std::size_t& { return c.bench.chunk_size; });
    cnt("bench.max_permutations", [](Config& c) -> std::size_t& { return c.bench.max_permutations; });
    cnt("bench.hr_draws", [](Config& c) -> std::size_t& { return c.bench.hr_draws; });
    return f;
  }();
  return table;
}

}  // namespace

std::size_t ModelConfig::tree_levels() const {
  std::size_t levels = 0;
  for (std::size_t s = list_len; s > 1; s >>= 1) ++levels;
  return levels;
}

std::size_t ModelConfig::context_levels() const { return no_tcem ? 1 : tree_levels(); }

std::size_t ModelConfig::mlp_input_dim() const { return (concat_item ? 4 : 3) * dim + dense_dim; }

std::size_t ModelConfig::head_input_dim() const { return (2 + context_levels()) * dim; }

void apply_setting(Config& cfg, const std::string& key, const std::string& value) {
  if (key == "format_version") {
    if (parse_count(key, value) != static_cast<std::size_t>(kConfigFormatVersion)) {
      throw ConfigError("unsupported config format_version " + value);
    }
    return;
  }
  const auto& table = fields();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(cfg, key, trim(value));
}

Config parse_config(const std::string& text) {
  Config cfg;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string render_config(const Config& cfg) {
  std::string out = "format_version = " + std::to_string(kConfigFormatVersion) + "\n";
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(cfg) + "\n";
  return out;
}

std::uint64_t config_hash(const Config& cfg) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : render_config(cfg)) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void validate_config(const Config& cfg) {
  const auto& m = cfg.model;
  if (m.list_len < 2 || (m.list_len & (m.list_len - 1)) != 0) {
    throw ConfigError("model.m must be a power of two >= 2, got " + std::to_string(m.list_len));
  }
  if (m.num_candidates < m.list_len) throw ConfigError("model.n must be >= model.m");
  if (m.dim == 0) throw ConfigError("model.dim must be positive");
  if (cfg.train.dropout < 0 || cfg.train.dropout >= 1) throw ConfigError("train.dropout must lie in [0, 1)");
  if (cfg.train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (m.no_tcem && m.per_level_set_attention) {
    throw ConfigError("ablation tcem conflicts with model.per_level_set_attention");
  }
  if (cfg.train.no_gbpr && cfg.train.alpha_set && cfg.train.alpha != 0) {
    throw ConfigError("ablation gbpr conflicts with a nonzero train.alpha");
  }
}

}  // namespace treerank
