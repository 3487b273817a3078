#include "treerank/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "treerank/errors.hpp"

namespace treerank {

using nlohmann::json;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t id) { return splitmix64(splitmix64(seed) ^ id); }

// ---- synthetic world ------------------------------------------------------

SyntheticWorld make_world(const Config& cfg) {
  const WorldConfig& wc = cfg.world;
  SyntheticWorld w;
  w.cfg = wc;
  w.items = cfg.model.item_vocab;
  w.users = cfg.model.user_vocab;
  w.contexts = cfg.model.context_vocab;
  if (w.items < 2 || w.users == 0 || w.contexts == 0 || wc.num_categories == 0) {
    throw ConfigError("synthetic world needs >= 2 items, >= 1 user, context and category");
  }
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x776f726c64ULL));
  std::uniform_int_distribution<std::uint32_t> cat(0, static_cast<std::uint32_t>(wc.num_categories - 1));
  std::normal_distribution<Scalar> quality(0.0, wc.quality_std);
  std::normal_distribution<Scalar> influence(0.0, wc.influence_std);

  w.category.resize(w.items);
  w.quality.resize(w.items);
  w.influence.resize(w.items);
  for (std::size_t i = 0; i < w.items; ++i) {
    w.category[i] = cat(rng);
    w.quality[i] = quality(rng);
    w.influence[i] = influence(rng);
  }
  w.bonus.assign(w.items * w.items, 0.0);
  const std::size_t max_pairs = w.items * (w.items - 1) / 2;
  std::uniform_int_distribution<std::uint32_t> item(0, static_cast<std::uint32_t>(w.items - 1));
  for (std::size_t planted = 0; planted < std::min(wc.planted_pairs, max_pairs);) {
    const std::uint32_t a = item(rng), b = item(rng);
    if (a == b || w.bonus[a * w.items + b] != 0) continue;
    w.bonus[a * w.items + b] = wc.planted_strength;
    w.bonus[b * w.items + a] = wc.planted_strength;
    ++planted;
  }
  w.preferred.resize(w.users);
  for (auto& p : w.preferred) p = cat(rng);
  return w;
}

std::vector<Scalar> true_click_probs(const SyntheticWorld& world, std::uint32_t user,
                                     std::span<const std::uint32_t> items) {
  const std::size_t m = items.size();
  const std::uint32_t pref = world.preferred.at(user % world.users);
  std::vector<Scalar> p(m);
  for (std::size_t t = 0; t < m; ++t) {
    const std::uint32_t i = items[t];
    Scalar logit = world.cfg.bias + world.quality.at(i) - world.cfg.position_decay * static_cast<Scalar>(t);
    if (world.category[i] == pref) logit += world.cfg.affinity;
    for (std::size_t size : {std::size_t{2}, std::size_t{4}}) {
      if (size > m && size != 2) continue;
      const std::size_t begin = t / size * size;
      const std::size_t end = std::min(m, begin + size);
      for (std::size_t s = begin; s < end; ++s) {
        if (s != t) logit += world.context_effect(i, items[s]);
      }
    }
    p[t] = sigmoid(logit);
  }
  return p;
}

Scalar true_list_value(const SyntheticWorld& world, std::uint32_t user, std::span<const std::uint32_t> items) {
  const auto p = true_click_probs(world, user, items);
  return std::accumulate(p.begin(), p.end(), Scalar{0});
}

namespace {

std::uint32_t request_user(const RawRequest& request) {
  if (request.user_profile_ids.empty()) throw InputError("request has no user id");
  return request.user_profile_ids.front();
}

}  // namespace

GroundTruth brute_force_best(const SyntheticWorld& world, const RawRequest& request, std::size_t m) {
  const std::size_t n = request.num_candidates();
  if (m == 0 || m > n) throw InputError("brute force needs 0 < m <= n");
  const std::uint32_t user = request_user(request);
  GroundTruth best;
  best.best_value = -1;
  std::vector<std::uint32_t> order;
  std::vector<std::uint32_t> items;
  std::vector<bool> used(n, false);
  auto visit = [&](auto& self) -> void {
    if (order.size() == m) {
      const Scalar v = true_list_value(world, user, items);
      if (v > best.best_value) {
        best.best_value = v;
        best.best = order;
      }
      return;
    }
    for (std::uint32_t c = 0; c < n; ++c) {
      if (used[c]) continue;
      used[c] = true;
      order.push_back(c);
      items.push_back(request.candidate_item_ids[c]);
      self(self);
      items.pop_back();
      order.pop_back();
      used[c] = false;
    }
  };
  visit(visit);
  return best;
}

std::vector<Scalar> true_permutation_scores(const SyntheticWorld& world, const RawRequest& request,
                                            const PermutationTable& table) {
  if (table.n != request.num_candidates()) throw DimensionError("permutation table n differs from the request");
  const std::uint32_t user = request_user(request);
  std::vector<Scalar> scores(table.count());
  std::vector<std::uint32_t> items(table.m);
  for (std::size_t p = 0; p < table.count(); ++p) {
    const auto row = table.row(p);
    for (std::size_t t = 0; t < table.m; ++t) items[t] = request.candidate_item_ids[row[t]];
    scores[p] = true_list_value(world, user, items);
  }
  return scores;
}

RequestRecord generate_request(const SyntheticWorld& world, const Config& cfg, std::uint64_t id) {
  const std::size_t n = cfg.model.num_candidates;
  if (n > world.items) throw ConfigError("more candidates than items in the synthetic world");
  std::mt19937_64 rng(derive_seed(cfg.seed, id));
  RequestRecord rec;
  rec.id = id;
  RawRequest& r = rec.request;
  const auto user = std::uniform_int_distribution<std::uint32_t>(0, static_cast<std::uint32_t>(world.users - 1))(rng);
  r.user_profile_ids = {user};
  r.context_ids = {
      std::uniform_int_distribution<std::uint32_t>(0, static_cast<std::uint32_t>(world.contexts - 1))(rng)};

  // Behaviors lean towards the user's preferred category.
  std::vector<std::uint32_t> preferred_items;
  for (std::uint32_t i = 0; i < world.items; ++i) {
    if (world.category[i] == world.preferred[user]) preferred_items.push_back(i);
  }
  std::uniform_int_distribution<std::uint32_t> any_item(0, static_cast<std::uint32_t>(world.items - 1));
  std::bernoulli_distribution from_preferred(0.75);
  for (std::size_t b = 0; b < world.cfg.behavior_len; ++b) {
    if (!preferred_items.empty() && from_preferred(rng)) {
      r.behavior_item_ids.push_back(preferred_items[std::uniform_int_distribution<std::size_t>(
          0, preferred_items.size() - 1)(rng)]);
    } else {
      r.behavior_item_ids.push_back(any_item(rng));
    }
  }

  std::vector<std::uint32_t> pool(world.items);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t c = 0; c < n; ++c) {
    std::uniform_int_distribution<std::size_t> pick(c, pool.size() - 1);
    std::swap(pool[c], pool[pick(rng)]);
  }
  r.candidate_item_ids.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));

  const std::size_t dd = cfg.model.dense_dim;
  if (dd > 0) {
    r.candidate_dense = Tensor(n, dd);
    // Feature 0 is a user-item affinity cross feature; the rest are noise.
    std::normal_distribution<Scalar> normal(0.0, 1.0);
    for (std::size_t c = 0; c < n; ++c) {
      auto row = r.candidate_dense.row(c);
      for (auto& v : row) v = normal(rng);
      row[0] = world.category[r.candidate_item_ids[c]] == world.preferred[user] ? 1.0 : 0.0;
    }
  }
  return rec;
}

ListSample generate_list(const SyntheticWorld& world, const Config& cfg, std::uint64_t id) {
  RequestRecord rec = generate_request(world, cfg, id);
  const std::size_t n = rec.request.num_candidates();
  const std::size_t m = cfg.model.list_len;
  if (m > n) throw ConfigError("list length exceeds candidate count");
  std::mt19937_64 rng(derive_seed(cfg.seed ^ 0x6c6162656cULL, id));
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(m);

  ListSample s;
  s.id = id;
  RawRequest& r = s.request;
  r.user_profile_ids = rec.request.user_profile_ids;
  r.context_ids = rec.request.context_ids;
  r.behavior_item_ids = rec.request.behavior_item_ids;
  for (auto c : order) r.candidate_item_ids.push_back(rec.request.candidate_item_ids[c]);
  const std::size_t dd = rec.request.candidate_dense.cols();
  if (dd > 0) {
    r.candidate_dense = Tensor(m, dd);
    for (std::size_t t = 0; t < m; ++t) {
      std::copy_n(rec.request.candidate_dense.row(order[t]).begin(), dd, r.candidate_dense.row(t).begin());
    }
  }
  const auto p = true_click_probs(world, request_user(r), r.candidate_item_ids);
  std::uniform_real_distribution<Scalar> u(0.0, 1.0);
  for (Scalar pt : p) s.labels.push_back(u(rng) < pt ? 1 : 0);
  return s;
}

GeneratedData generate(const SyntheticWorld& world, const Config& cfg) {
  const DataConfig& dc = cfg.data;
  GeneratedData out;
  std::uint64_t id = 0;
  out.train.reserve(dc.train_lists);
  for (std::size_t i = 0; i < dc.train_lists; ++i) out.train.push_back(generate_list(world, cfg, id++));
  out.test.reserve(dc.test_lists);
  for (std::size_t i = 0; i < dc.test_lists; ++i) out.test.push_back(generate_list(world, cfg, id++));
  out.requests.reserve(dc.requests);
  for (std::size_t i = 0; i < dc.requests; ++i) out.requests.push_back(generate_request(world, cfg, id++));
  if (dc.ground_truth) {
    for (const auto& r : out.requests) {
      GroundTruth g = brute_force_best(world, r.request, cfg.model.list_len);
      g.id = r.id;
      out.ground_truth.push_back(std::move(g));
    }
  }
  return out;
}

// ---- filtering ------------------------------------------------------------

bool has_mixed_labels(std::span<const std::uint8_t> labels) {
  const bool any_pos = std::any_of(labels.begin(), labels.end(), [](auto v) { return v != 0; });
  const bool any_neg = std::any_of(labels.begin(), labels.end(), [](auto v) { return v == 0; });
  return any_pos && any_neg;
}

std::vector<ListSample> filter_lists(std::vector<ListSample> samples, FilterStats* stats) {
  FilterStats local;
  std::vector<ListSample> kept;
  kept.reserve(samples.size());
  for (auto& s : samples) {
    if (has_mixed_labels(s.labels)) {
      kept.push_back(std::move(s));
    } else if (std::all_of(s.labels.begin(), s.labels.end(), [](auto v) { return v == 0; })) {
      ++local.dropped_all_zero;
    } else {
      ++local.dropped_all_one;
    }
  }
  local.kept = kept.size();
  if (stats) *stats = local;
  return kept;
}

// ---- files ----------------------------------------------------------------

namespace {

std::vector<std::uint32_t> id_list(const json& j, const char* field) {
  const json& v = j.at(field);
  if (!v.is_array()) throw InputError(std::string(field) + " is not an array");
  std::vector<std::uint32_t> out;
  for (const auto& e : v) {
    if (!e.is_number_unsigned()) throw InputError(std::string(field) + " holds a non-id value");
    out.push_back(e.get<std::uint32_t>());
  }
  return out;
}

json request_json(std::uint64_t id, const RawRequest& r, std::span<const std::uint8_t> labels) {
  json items = json::array();
  for (std::size_t c = 0; c < r.num_candidates(); ++c) {
    json item{{"id", r.candidate_item_ids[c]}};
    json dense = json::array();
    for (std::size_t k = 0; k < r.candidate_dense.cols(); ++k) dense.push_back(r.candidate_dense(c, k));
    item["dense"] = std::move(dense);
    if (!labels.empty()) item["label"] = labels[c];
    items.push_back(std::move(item));
  }
  return json{{"id", id},
              {"user", r.user_profile_ids},
              {"context", r.context_ids},
              {"behaviors", r.behavior_item_ids},
              {"items", std::move(items)}};
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ResourceError("cannot write " + path.string());
  return out;
}

void write_header(std::ofstream& out, const char* format, const char* count_key, std::size_t count,
                  std::size_t dense_dim) {
  json header{{"format", format}, {"schema_version", kDatasetSchemaVersion}, {count_key, count},
              {"dense_dim", dense_dim}};
  out << header.dump() << '\n';
}

}  // namespace

RecordReader::RecordReader(const std::filesystem::path& path, const std::string& expected_format,
                           std::size_t error_budget)
    : in_(path), path_(path), error_budget_(error_budget), labelled_(expected_format == kListFormat) {
  if (!in_) throw InputError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in_, line)) throw FormatError(path.string() + ": missing header line");
  ++stats_.lines;
  const std::string count_key = labelled_ ? "m" : "n";
  try {
    const json h = json::parse(line);
    header_.format = h.at("format").get<std::string>();
    if (header_.format != expected_format) {
      throw FormatError("expected format '" + expected_format + "', got '" + header_.format + "'");
    }
    const int version = h.at("schema_version").get<int>();
    if (version != kDatasetSchemaVersion) throw FormatError("unsupported schema_version " + std::to_string(version));
    header_.items_per_record = h.at(count_key).get<std::size_t>();
    header_.dense_dim = h.at("dense_dim").get<std::size_t>();
    if (header_.items_per_record == 0) throw FormatError("header " + count_key + " must be positive");
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }
}

bool RecordReader::next(ListSample& out) {
  std::string line;
  while (std::getline(in_, line)) {
    ++stats_.lines;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      ListSample s;
      s.id = j.at("id").get<std::uint64_t>();
      s.request.user_profile_ids = id_list(j, "user");
      s.request.context_ids = id_list(j, "context");
      s.request.behavior_item_ids = id_list(j, "behaviors");
      const json& items = j.at("items");
      if (!items.is_array() || items.size() != header_.items_per_record) {
        throw InputError("expected " + std::to_string(header_.items_per_record) + " items, got " +
                         std::to_string(items.is_array() ? items.size() : 0));
      }
      const std::size_t dd = header_.dense_dim;
      if (dd > 0) s.request.candidate_dense = Tensor(items.size(), dd);
      for (std::size_t c = 0; c < items.size(); ++c) {
        const json& item = items[c];
        if (!item.at("id").is_number_unsigned()) throw InputError("item id is not an unsigned integer");
        s.request.candidate_item_ids.push_back(item.at("id").get<std::uint32_t>());
        const json& dense = item.contains("dense") ? item.at("dense") : json::array();
        if (!dense.is_array() || dense.size() != dd) throw InputError("item dense width differs from header");
        for (std::size_t k = 0; k < dd; ++k) {
          if (!dense[k].is_number()) throw InputError("dense feature is not a number");
          s.request.candidate_dense(c, k) = dense[k].get<Scalar>();
        }
        if (labelled_) {
          const int label = item.at("label").get<int>();
          if (label != 0 && label != 1) throw InputError("label must be 0 or 1");
          s.labels.push_back(static_cast<std::uint8_t>(label));
        }
      }
      ++stats_.records;
      out = std::move(s);
      return true;
    } catch (const std::exception& e) {
      ++stats_.malformed;
      const std::string msg = "line " + std::to_string(stats_.lines) + ": " + e.what();
      if (stats_.errors.size() < 20) stats_.errors.push_back(msg);
      if (stats_.malformed > error_budget_) {
        throw FormatError(path_.string() + ": error budget of " + std::to_string(error_budget_) +
                          " malformed lines exceeded at " + msg);
      }
    }
  }
  return false;
}

std::vector<ListSample> load_dataset(const std::filesystem::path& path, std::size_t error_budget, LoadStats* stats) {
  RecordReader reader(path, kListFormat, error_budget);
  std::vector<ListSample> out;
  ListSample s;
  while (reader.next(s)) out.push_back(std::move(s));
  if (stats) *stats = reader.stats();
  return out;
}

std::vector<RequestRecord> load_requests(const std::filesystem::path& path, std::size_t error_budget,
                                         LoadStats* stats) {
  RecordReader reader(path, kRequestFormat, error_budget);
  std::vector<RequestRecord> out;
  ListSample s;
  while (reader.next(s)) out.push_back({s.id, std::move(s.request)});
  if (stats) *stats = reader.stats();
  return out;
}

void write_dataset(const std::filesystem::path& path, std::span<const ListSample> samples, std::size_t m,
                   std::size_t dense_dim) {
  auto out = open_out(path);
  write_header(out, kListFormat, "m", m, dense_dim);
  for (const auto& s : samples) out << request_json(s.id, s.request, s.labels).dump() << '\n';
  if (!out) throw ResourceError("failed writing " + path.string());
}

void write_requests(const std::filesystem::path& path, std::span<const RequestRecord> requests, std::size_t n,
                    std::size_t dense_dim) {
  auto out = open_out(path);
  write_header(out, kRequestFormat, "n", n, dense_dim);
  for (const auto& r : requests) out << request_json(r.id, r.request, {}).dump() << '\n';
  if (!out) throw ResourceError("failed writing " + path.string());
}

void write_ground_truth(const std::filesystem::path& path, std::span<const GroundTruth> truth) {
  auto out = open_out(path);
  for (const auto& g : truth) {
    out << json{{"id", g.id}, {"best", g.best}, {"best_value", g.best_value}}.dump() << '\n';
  }
  if (!out) throw ResourceError("failed writing " + path.string());
}

std::vector<GroundTruth> load_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<GroundTruth> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("id").get<std::uint64_t>(), j.at("best").get<std::vector<std::uint32_t>>(),
                     j.at("best_value").get<Scalar>()});
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace treerank
