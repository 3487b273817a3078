#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "treerank/ccm.hpp"
#include "treerank/data.hpp"
#include "treerank/errors.hpp"

using namespace treerank;

namespace {

Config world_config(std::size_t n, std::size_t m) {
  Config cfg;
  cfg.model.num_candidates = n;
  cfg.model.list_len = m;
  cfg.model.item_vocab = 30;
  cfg.model.user_vocab = 10;
  cfg.model.context_vocab = 3;
  cfg.data.train_lists = 40;
  cfg.data.test_lists = 10;
  cfg.data.requests = 5;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

const char* kHeader = R"({"dense_dim":0,"format":"treerank-lists","m":2,"schema_version":1})";

}  // namespace

TEST_CASE("world probabilities stay inside (0, 1)") {
  const Config cfg = world_config(8, 8);
  const SyntheticWorld w = make_world(cfg);
  for (std::uint64_t id = 0; id < 50; ++id) {
    const ListSample s = generate_list(w, cfg, id);
    for (Scalar p : true_click_probs(w, s.request.user_profile_ids[0], s.request.candidate_item_ids)) {
      CHECK(p > 0.0);
      CHECK(p < 1.0);
    }
  }
}

TEST_CASE("context effect follows the block structure") {
  Config cfg = world_config(4, 4);
  SyntheticWorld w = make_world(cfg);
  std::fill(w.influence.begin(), w.influence.end(), 0.0);
  std::fill(w.bonus.begin(), w.bonus.end(), 0.0);
  w.influence[7] = 0.9;
  const std::vector<std::uint32_t> items{1, 7, 2, 3};
  const auto with = true_click_probs(w, 0, items);
  w.influence[7] = 0.0;
  const auto without = true_click_probs(w, 0, items);
  // Item 7's block mate gains from both the size-2 and the size-4 block;
  // positions 2 and 3 only share the size-4 block.
  auto logit = [](Scalar p) { return std::log(p / (1 - p)); };
  CHECK(logit(with[0]) - logit(without[0]) == doctest::Approx(1.8));
  CHECK(logit(with[2]) - logit(without[2]) == doctest::Approx(0.9));
  CHECK(logit(with[3]) - logit(without[3]) == doctest::Approx(0.9));
  CHECK(with[1] == without[1]);
}

TEST_CASE("without context effects every order of an item set ties") {
  Config cfg = world_config(6, 4);
  SyntheticWorld w = make_world(cfg);
  std::fill(w.influence.begin(), w.influence.end(), 0.0);
  std::fill(w.bonus.begin(), w.bonus.end(), 0.0);
  const RequestRecord r = generate_request(w, cfg, 3);
  const PermutationTable table = enumerate_permutations(6, 4);
  const auto scores = true_permutation_scores(w, r.request, table);
  // Same item set -> same value, whatever the order.
  std::map<std::vector<std::uint32_t>, Scalar> by_set;
  for (std::size_t p = 0; p < table.count(); ++p) {
    auto row = table.row(p);
    std::vector<std::uint32_t> key(row.begin(), row.end());
    std::sort(key.begin(), key.end());
    auto [it, fresh] = by_set.emplace(key, scores[p]);
    if (!fresh) CHECK(scores[p] == doctest::Approx(it->second).epsilon(1e-14));
  }
}

TEST_CASE("a strong planted pair lands in a shared size-2 block") {
  Config cfg = world_config(4, 4);
  SyntheticWorld w = make_world(cfg);
  std::fill(w.influence.begin(), w.influence.end(), 0.0);
  std::fill(w.bonus.begin(), w.bonus.end(), 0.0);
  RawRequest r = generate_request(w, cfg, 1).request;
  const std::uint32_t a = r.candidate_item_ids[0], b = r.candidate_item_ids[3];
  w.bonus[a * w.items + b] = w.bonus[b * w.items + a] = 3.0;
  const GroundTruth g = brute_force_best(w, r, 4);
  const auto pos = [&](std::uint32_t c) {
    return static_cast<std::size_t>(std::find(g.best.begin(), g.best.end(), c) - g.best.begin());
  };
  CHECK(pos(0) / 2 == pos(3) / 2);
}

TEST_CASE("the brute-force oracle maximizes the true total") {
  for (std::size_t m = 2; m <= 6; ++m) {
    const Config cfg = world_config(m, m);
    const SyntheticWorld w = make_world(cfg);
    const PermutationTable table = enumerate_permutations(m, m);
    for (std::uint64_t id = 0; id < 5; ++id) {
      const RequestRecord r = generate_request(w, cfg, id);
      const GroundTruth g = brute_force_best(w, r.request, m);
      const auto scores = true_permutation_scores(w, r.request, table);
      const Scalar best = *std::max_element(scores.begin(), scores.end());
      CHECK(g.best_value == best);
      CHECK(argmax_list(scores, table).best_permutation == g.best);
    }
  }
}

TEST_CASE("generation is seeded and round-trips through files") {
  const auto dir = testutil::temp_dir("gen");
  Config cfg = world_config(8, 8);
  cfg.model.dense_dim = 2;
  const SyntheticWorld w = make_world(cfg);
  const GeneratedData d = generate(w, cfg);
  CHECK(d.train.size() == 40);
  CHECK(d.ground_truth.size() == 5);
  write_dataset(dir / "a.jsonl", d.train, 8, 2);
  write_dataset(dir / "b.jsonl", generate(make_world(cfg), cfg).train, 8, 2);
  CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));

  const auto back = load_dataset(dir / "a.jsonl");
  REQUIRE(back.size() == d.train.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == d.train[i].id);
    CHECK(back[i].labels == d.train[i].labels);
    CHECK(back[i].request.candidate_item_ids == d.train[i].request.candidate_item_ids);
    CHECK(back[i].request.behavior_item_ids == d.train[i].request.behavior_item_ids);
    CHECK(back[i].request.user_profile_ids == d.train[i].request.user_profile_ids);
    CHECK(back[i].request.candidate_dense == d.train[i].request.candidate_dense);
  }

  write_requests(dir / "r.jsonl", d.requests, 8, 2);
  const auto reqs = load_requests(dir / "r.jsonl");
  REQUIRE(reqs.size() == 5);
  CHECK(reqs[2].request.candidate_item_ids == d.requests[2].request.candidate_item_ids);

  write_ground_truth(dir / "g.jsonl", d.ground_truth);
  const auto gt = load_ground_truth(dir / "g.jsonl");
  REQUIRE(gt.size() == 5);
  CHECK(gt[4].best == d.ground_truth[4].best);
  CHECK(gt[4].best_value == d.ground_truth[4].best_value);

  Config other = cfg;
  other.seed = 2;
  write_dataset(dir / "c.jsonl", generate(make_world(other), other).train, 8, 2);
  CHECK(slurp(dir / "a.jsonl") != slurp(dir / "c.jsonl"));
}

TEST_CASE("loader edge cases") {
  const auto dir = testutil::temp_dir("load");
  const std::string good = R"({"id":1,"user":[1],"context":[0],"behaviors":[],"items":[{"id":2,"label":1},{"id":3,"label":0}]})";
  const std::string short_list = R"({"id":2,"user":[1],"context":[0],"behaviors":[],"items":[{"id":2,"label":1}]})";

  write_text(dir / "empty.jsonl", std::string(kHeader) + "\n");
  CHECK(load_dataset(dir / "empty.jsonl").empty());

  write_text(dir / "one.jsonl", std::string(kHeader) + "\n" + good + "\n");
  CHECK(load_dataset(dir / "one.jsonl").size() == 1);

  LoadStats stats;
  write_text(dir / "short.jsonl", std::string(kHeader) + "\n" + short_list + "\n" + good + "\nnot json\n");
  const auto kept = load_dataset(dir / "short.jsonl", 5, &stats);
  CHECK(kept.size() == 1);
  CHECK(stats.malformed == 2);
  REQUIRE(stats.errors.size() == 2);
  CHECK(stats.errors[0].rfind("line 2:", 0) == 0);
  CHECK(stats.errors[1].rfind("line 4:", 0) == 0);
  CHECK_THROWS_AS(load_dataset(dir / "short.jsonl", 1), FormatError);

  write_text(dir / "wrong.jsonl", R"({"dense_dim":0,"format":"treerank-requests","n":2,"schema_version":1})" "\n");
  CHECK_THROWS_AS(load_dataset(dir / "wrong.jsonl"), FormatError);
  write_text(dir / "v2.jsonl", R"({"dense_dim":0,"format":"treerank-lists","m":2,"schema_version":2})" "\n");
  CHECK_THROWS_AS(load_dataset(dir / "v2.jsonl"), FormatError);
  write_text(dir / "nohdr.jsonl", "");
  CHECK_THROWS_AS(load_dataset(dir / "nohdr.jsonl"), FormatError);
  CHECK_THROWS_AS(load_dataset(dir / "missing.jsonl"), InputError);

  const std::string bad_label = R"({"id":1,"user":[1],"context":[0],"behaviors":[],"items":[{"id":2,"label":2},{"id":3,"label":0}]})";
  write_text(dir / "label.jsonl", std::string(kHeader) + "\n" + bad_label + "\n");
  CHECK(load_dataset(dir / "label.jsonl").empty());
}

TEST_CASE("filtering drops single-label lists and is idempotent") {
  auto make = [](std::uint64_t id, std::vector<std::uint8_t> labels) {
    ListSample s;
    s.id = id;
    s.labels = std::move(labels);
    return s;
  };
  std::vector<ListSample> v{make(1, {0, 0, 0, 0}), make(2, {1, 1, 1, 1}), make(3, {1, 0, 0, 0}), make(4, {0, 1, 1, 0})};
  FilterStats stats;
  const auto once = filter_lists(v, &stats);
  CHECK(once.size() == 2);
  CHECK(stats.dropped_all_zero == 1);
  CHECK(stats.dropped_all_one == 1);
  CHECK(stats.kept == 2);
  const auto twice = filter_lists(once, &stats);
  CHECK(twice.size() == once.size());
  CHECK(stats.dropped_all_zero + stats.dropped_all_one == 0);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(twice[i].id == once[i].id);
}

TEST_CASE("per-request seeds do not depend on generation order") {
  const Config cfg = world_config(8, 8);
  const SyntheticWorld w = make_world(cfg);
  const GeneratedData d = generate(w, cfg);
  const ListSample again = generate_list(w, cfg, 17);
  CHECK(again.labels == d.train[17].labels);
  CHECK(again.request.candidate_item_ids == d.train[17].request.candidate_item_ids);
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2) != derive_seed(2, 2));
}
