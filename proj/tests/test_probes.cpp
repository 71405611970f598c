#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "curate/cache.hpp"
#include "curate/error.hpp"
#include "curate/probes.hpp"
#include "support.hpp"

using namespace curate;

namespace {

std::set<std::set<SampleId>> partition_of(const ClusterAssignment& a) {
  std::set<std::set<SampleId>> out;
  for (const auto& c : a.clusters) out.emplace(c.members.begin(), c.members.end());
  return out;
}

void check_partition(const ClusterAssignment& a, std::span<const SampleId> ids) {
  std::multiset<SampleId> seen;
  for (const auto& c : a.clusters) {
    CHECK_FALSE(c.members.empty());
    seen.insert(c.members.begin(), c.members.end());
  }
  CHECK(seen == std::multiset<SampleId>(ids.begin(), ids.end()));
}

}  // namespace

TEST_CASE("two well separated pairs split into two clusters") {
  auto idx = testing::index_of({{"p1", {0, 0}}, {"p2", {0, 0.1}}, {"p3", {10, 10}}, {"p4", {10, 10.1}}});
  std::vector<SampleId> ids{"p1", "p2", "p3", "p4"};
  auto a = cluster_neighbors(idx, ids, 2, 7);
  CHECK(partition_of(a) == std::set<std::set<SampleId>>{{"p1", "p2"}, {"p3", "p4"}});
  check_partition(a, ids);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CHECK(partition_of(cluster_neighbors(idx, ids, 2, seed)) == partition_of(a));
  }
}

TEST_CASE("k equal to the point count gives singletons") {
  auto idx = testing::random_index(6, 3, 2);
  auto a = cluster_neighbors(idx, idx.ids(), 6, 1);
  CHECK(a.clusters.size() == 6);
  for (const auto& c : a.clusters) CHECK(c.members.size() == 1);
  auto fewer = cluster_neighbors(idx, idx.ids(), 9, 1);
  CHECK(fewer.clusters.size() == 6);
}

TEST_CASE("identical points collapse into one cluster that still partitions") {
  auto idx = testing::index_of({{"a", {1, 1}}, {"b", {1, 1}}, {"c", {1, 1}}});
  std::vector<SampleId> ids{"a", "b", "c"};
  auto a = cluster_neighbors(idx, ids, 2, 3);
  CHECK(a.clusters.size() == 1);
  check_partition(a, ids);
}

TEST_CASE("empty neighbor list is an error") {
  auto idx = testing::index_of({{"a", {1, 1}}});
  CHECK_THROWS_AS(cluster_neighbors(idx, std::vector<SampleId>{}, 2, 0), Error);
}

TEST_CASE("clustering is deterministic and always partitions") {
  auto idx = testing::random_index(120, 16, 9);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::vector<SampleId> ids(idx.ids().begin() + seed, idx.ids().begin() + seed + 32);
    auto a = cluster_neighbors(idx, ids, 5, seed);
    auto b = cluster_neighbors(idx, ids, 5, seed);
    CHECK(a.clusters.size() == 5);
    check_partition(a, ids);
    REQUIRE(a.clusters.size() == b.clusters.size());
    for (std::size_t c = 0; c < a.clusters.size(); ++c) {
      CHECK(a.clusters[c].members == b.clusters[c].members);
      CHECK(a.clusters[c].centroid == b.clusters[c].centroid);
    }
  }
}

TEST_CASE("lloyd converges to a fixed point") {
  auto idx = testing::random_index(64, 4, 21);
  auto a = cluster_neighbors(idx, idx.ids(), 4, 5);
  CHECK(a.iterations <= 100);
  for (const auto& c : a.clusters) {
    for (const auto& id : c.members) {
      auto v = idx.vector(id);
      const double own = squared_l2(v, c.centroid);
      for (const auto& other : a.clusters) CHECK(own <= squared_l2(v, other.centroid) + 1e-9);
    }
  }
}

TEST_CASE("expected complexity decoding") {
  std::array<double, 6> uniform{0, 0, 0, 0, 0, 0};
  CHECK(expected_complexity(uniform) == doctest::Approx(3.5).epsilon(1e-12));
  std::array<double, 6> six{-1e9, -1e9, -1e9, -1e9, -1e9, 0};
  CHECK(expected_complexity(six) == doctest::Approx(6.0).epsilon(1e-12));
  std::array<double, 6> two{0, std::log(3.0), -1e9, -1e9, -1e9, -1e9};
  CHECK(expected_complexity(two) == doctest::Approx(1.0 * 0.25 + 2.0 * 0.75).epsilon(1e-12));
}

TEST_CASE("score_complexity: mock formula, cache, contract") {
  MockComplexityBackend mock;
  std::vector<std::string> ins{"", std::string(96, 'x'), std::string(97, 'x'), "hello"};
  ContentCache cache;
  ComplexityOptions opts;
  opts.cache = &cache;
  ComplexityStats cold;
  auto s = score_complexity(mock, ins, opts, &cold);
  CHECK(s[0] == doctest::Approx(1.0));
  CHECK(s[1] == doctest::Approx(6.0));
  CHECK(s[2] == doctest::Approx(1.0));
  CHECK(s[3] == doctest::Approx(1.0 + 5.0 * 5.0 / 96.0));
  CHECK(cold.backend_calls == 4);
  ComplexityStats warm;
  CHECK(score_complexity(mock, ins, opts, &warm) == s);
  CHECK(warm.backend_calls == 0);

  NumeralLogitComplexityBackend uniform("uniform", [](const std::string&) { return std::array<double, 6>{}; });
  CHECK(score_complexity(uniform, ins)[0] == doctest::Approx(3.5));

  struct Broken : ComplexityBackend {
    std::string backend_id() const override { return "broken"; }
    double complexity(const std::string&) override { return 7.5; }
  } broken;
  CHECK_THROWS_AS(score_complexity(broken, ins), Error);
}

TEST_CASE("33-sample corpus with defaults yields five distinct probes") {
  std::vector<Sample> samples;
  for (int i = 0; i < 33; ++i) {
    samples.push_back(testing::sample("s" + std::to_string(100 + i), "Instruction number " + std::to_string(i * 7) +
                                                                          std::string(i % 13, '!'),
                                      "resp"));
  }
  Corpus corpus(samples, "");
  MockEmbeddingBackend be(1);
  auto idx = build_index(corpus, be, {});
  MockComplexityBackend complexity;
  ProbeOptions opts;
  opts.seed = 5;
  auto p = build_probe_set(idx, corpus, "s100", complexity, opts);
  CHECK(p.probe_ids.size() == 5);
  CHECK(std::set<SampleId>(p.probe_ids.begin(), p.probe_ids.end()).size() == 5);
  CHECK(std::find(p.probe_ids.begin(), p.probe_ids.end(), "s100") == p.probe_ids.end());
  CHECK_FALSE(p.low_diversity());

  opts.n_neighbors = 33;
  CHECK_THROWS_AS(build_probe_set(idx, corpus, "s100", complexity, opts), Error);
}

TEST_CASE("probe is the complexity argmax of its cluster") {
  // query q; near cluster {a,b,c} around (1,0), far cluster {d} at (0,9)
  auto idx = testing::index_of({{"q", {0, 0}},
                                {"a", {1, 0}},
                                {"b", {1.05, 0}},
                                {"c", {1, 0.05}},
                                {"d", {0, 9}},
                                {"z", {50, 50}}});
  std::map<SampleId, double> score{{"a", 2.0}, {"b", 5.5}, {"c", 3.1}, {"d", 1.0}, {"z", 6.0}, {"q", 6.0}};
  ProbeOptions opts;
  opts.n_neighbors = 4;
  opts.k_clusters = 2;
  auto p = build_probe_set(idx, "q", [&](const SampleId& id) { return score.at(id); }, opts);
  REQUIRE(p.probe_ids.size() == 2);
  CHECK(p.probe_ids[0] == "b");
  CHECK(p.provenance[0].complexity == 5.5);
  CHECK(p.provenance[0].cluster_size == 3);
  CHECK(p.probe_ids[1] == "d");
  CHECK(p.provenance[1].cluster_size == 1);
}

TEST_CASE("complexity ties go to the smaller id") {
  auto idx = testing::index_of({{"q", {0, 0}}, {"m2", {1, 0}}, {"m1", {1, 0.01}}, {"m3", {1.01, 0}}, {"far", {9, 9}}});
  ProbeOptions opts;
  opts.n_neighbors = 3;
  opts.k_clusters = 1;
  auto p = build_probe_set(idx, "q", [](const SampleId&) { return 4.0; }, opts);
  CHECK(p.probe_ids == std::vector<SampleId>{"m1"});
}

TEST_CASE("probe sets are deterministic and serialize") {
  auto idx = testing::random_index(80, 16, 4);
  ProbeOptions opts;
  opts.seed = 99;
  auto lookup = [](const SampleId& id) { return 1.0 + static_cast<double>(std::hash<std::string>{}(id) % 500) / 100.0; };
  for (std::size_t i = 0; i < 80; i += 9) {
    const auto& id = idx.ids()[i];
    auto a = build_probe_set(idx, id, lookup, opts);
    auto b = build_probe_set(idx, id, lookup, opts);
    CHECK(to_json(a).dump() == to_json(b).dump());
    auto back = probe_set_from_json(to_json(a));
    CHECK(back.probe_ids == a.probe_ids);
    CHECK(back.requested_k == a.requested_k);
  }
}
