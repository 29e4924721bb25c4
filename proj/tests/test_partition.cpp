#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fedlora/dataset.hpp"
#include "fedlora/error.hpp"
#include "fedlora/partition.hpp"
#include "json.hpp"

using namespace fedlora;

namespace {

ErrorCode code_of(const std::function<void()>& fn, std::string* message = nullptr) {
  try {
    fn();
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::kIo;
}

Dataset labels_only(const std::vector<std::size_t>& labels, std::size_t k) {
  Dataset d;
  d.features = Matrix(labels.size(), 1);
  d.labels = labels;
  d.num_classes = k;
  return d;
}

Dataset balanced(std::size_t k, std::size_t per_class) {
  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < k; ++c) labels.insert(labels.end(), per_class, c);
  return labels_only(labels, k);
}

// Checks disjointness and validity; returns the union size.
std::size_t check_disjoint(const Partition& p, std::size_t n) {
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (const auto& c : p.clients) {
    for (std::size_t i : c) {
      CHECK(i < n);
      CHECK(seen.insert(i).second);
    }
    total += c.size();
  }
  return total;
}

double total_variation(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  double sa = 0, sb = 0;
  for (auto v : a) sa += static_cast<double>(v);
  for (auto v : b) sb += static_cast<double>(v);
  double tv = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) tv += std::abs(a[i] / sa - b[i] / sb);
  return tv / 2.0;
}

double max_client_tv(const Dataset& d, const Partition& p) {
  const auto global = label_histogram(d);
  double worst = 0.0;
  for (const auto& c : p.clients) worst = std::max(worst, total_variation(label_histogram(d, c), global));
  return worst;
}

double mean_entropy(const Dataset& d, const Partition& p) {
  const auto h = client_label_entropy(d, p);
  double s = 0.0;
  for (double v : h) s += v;
  return s / static_cast<double>(h.size());
}

}  // namespace

TEST_SUITE("split") {
  TEST_CASE("80/20 counts, disjoint, deterministic") {
    const Dataset d = balanced(5, 20);
    const auto a = train_test_split(d, 0.2, 3);
    CHECK(a.test.size() == 20);
    CHECK(a.train.size() == 80);
    CHECK(a.stratified);
    std::vector<std::size_t> both = a.train;
    both.insert(both.end(), a.test.begin(), a.test.end());
    std::sort(both.begin(), both.end());
    CHECK(std::adjacent_find(both.begin(), both.end()) == both.end());
    const auto b = train_test_split(d, 0.2, 3);
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);
  }

  TEST_CASE("stratified per-class counts within one of 20 percent") {
    std::mt19937_64 gen(1);
    std::vector<std::size_t> labels;
    for (int i = 0; i < 997; ++i) labels.push_back(gen() % 7);
    const Dataset d = labels_only(labels, 7);
    const auto s = train_test_split(d, 0.2, 9);
    const auto all = label_histogram(d);
    const auto test = label_histogram(d, s.test);
    for (std::size_t c = 0; c < 7; ++c) CHECK(std::abs(static_cast<double>(test[c]) - 0.2 * all[c]) <= 1.0);
  }

  TEST_CASE("singleton class falls back to an unstratified split") {
    const Dataset d = labels_only({0, 0, 0, 0, 1}, 2);
    const auto s = train_test_split(d, 0.4, 1);
    CHECK_FALSE(s.stratified);
    CHECK(s.test.size() == 2);
  }
}

TEST_SUITE("iid") {
  TEST_CASE("sizes") {
    const Dataset d = balanced(10, 10);
    CHECK(split_iid(d, 1, 1).clients[0].size() == 100);
    for (const auto& c : split_iid(d, 10, 2).clients) CHECK(c.size() == 10);
    CHECK(code_of([&] { split_iid(balanced(2, 2), 5, 1); }) == ErrorCode::kInsufficientData);
  }

  TEST_CASE("client histograms track the global one at n = 10,000") {
    const Dataset d = balanced(10, 1000);
    for (std::uint64_t seed = 0; seed < 20; ++seed) CHECK(max_client_tv(d, split_iid(d, 10, seed)) < 0.1);
  }

  TEST_CASE("few-shot IID gives every client the same class counts") {
    const Dataset d = balanced(4, 50);
    const auto p = split_iid_fewshot(d, 5, 3, 1);
    for (const auto& c : p.clients) {
      CHECK(c.size() == 12);
      for (std::size_t v : label_histogram(d, c)) CHECK(v == 3);
    }
    check_disjoint(p, d.size());
    CHECK(code_of([&] { split_iid_fewshot(d, 5, 11, 1); }) == ErrorCode::kInsufficientShots);
  }
}

TEST_SUITE("dirichlet") {
  TEST_CASE("complete and disjoint") {
    const Dataset d = balanced(10, 100);
    for (double beta : {0.1, 0.5, 5.0}) {
      const auto p = split_dirichlet(d, 10, beta, 4);
      CHECK(check_disjoint(p, d.size()) == d.size());
      for (const auto& c : p.clients) CHECK_FALSE(c.empty());
    }
  }

  TEST_CASE("large beta approaches IID") {
    const Dataset d = balanced(10, 1000);
    for (std::uint64_t seed = 0; seed < 20; ++seed) CHECK(max_client_tv(d, split_dirichlet(d, 10, 1e6, seed)) < 0.05);
  }

  TEST_CASE("entropy grows with beta") {
    const Dataset d = balanced(10, 1000);
    double low = 0, mid = 0, high = 0, iid = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      low += mean_entropy(d, split_dirichlet(d, 10, 0.1, seed));
      mid += mean_entropy(d, split_dirichlet(d, 10, 1.0, seed));
      high += mean_entropy(d, split_dirichlet(d, 10, 1e6, seed));
      iid += mean_entropy(d, split_iid(d, 10, seed));
    }
    CHECK(low < mid);
    CHECK(mid < high);
    CHECK(mid < iid);
  }

  TEST_CASE("errors") {
    const Dataset d = balanced(2, 3);
    CHECK(code_of([&] { split_dirichlet(d, 2, 0.0, 1); }) == ErrorCode::kRange);
    std::string msg;
    CHECK(code_of([&] { split_dirichlet(d, 10, 0.5, 1); }, &msg) == ErrorCode::kPartitionInfeasible);
    CHECK(msg.find("beta=") != std::string::npos);
    CHECK(msg.find("N=10") != std::string::npos);
    CHECK(msg.find("n=6") != std::string::npos);
  }
}

TEST_SUITE("pathological") {
  TEST_CASE("few-shot table class counts") {
    struct Row {
      const char* name;
      std::size_t k_total, clients, first, last;
    };
    const Row rows[] = {{"F-MNIST", 10, 5, 2, 2},       {"CIFAR-10", 10, 5, 2, 2},    {"CIFAR-100", 100, 10, 10, 10},
                        {"TINY", 200, 10, 20, 20},      {"OxfordPets", 37, 6, 6, 7},  {"Flowers102", 102, 6, 17, 17},
                        {"Aircraft", 100, 10, 10, 10},  {"Cars", 196, 7, 28, 28},     {"DTD", 47, 7, 6, 11},
                        {"EuroSAT", 10, 5, 2, 2},       {"FER2013", 7, 3, 2, 3},      {"Caltech101", 101, 10, 10, 11},
                        {"Food101", 101, 10, 10, 11},   {"Country211", 211, 10, 21, 22}, {"SUN397", 397, 10, 39, 46},
                        {"SST2", 2, 2, 1, 1}};
    for (const auto& r : rows) {
      CAPTURE(r.name);
      const auto owned = pathological_class_assignment(r.k_total, r.clients, r.first, 17);
      REQUIRE(owned.size() == r.clients);
      for (std::size_t i = 0; i + 1 < r.clients; ++i) CHECK(owned[i].size() == r.first);
      CHECK(owned.back().size() == r.last);
      std::set<std::size_t> all;
      for (const auto& c : owned) all.insert(c.begin(), c.end());
      CHECK(all.size() == r.k_total);
    }
  }

  TEST_CASE("F-MNIST shape: 2 classes x 4 shots") {
    const Dataset d = balanced(10, 20);
    const auto p = split_pathological(d, 5, 2, 4, 3);
    std::set<std::size_t> classes_seen;
    for (const auto& c : p.clients) {
      CHECK(c.size() == 8);
      std::set<std::size_t> mine;
      for (std::size_t i : c) mine.insert(d.labels[i]);
      CHECK(mine.size() == 2);
      for (std::size_t cls : mine) CHECK(classes_seen.insert(cls).second);
    }
    check_disjoint(p, d.size());
  }

  TEST_CASE("errors") {
    const Dataset d = balanced(10, 3);
    std::string msg;
    CHECK(code_of([&] { split_pathological(d, 5, 2, 4, 1); }, &msg) == ErrorCode::kInsufficientShots);
    CHECK(msg.find("class ") == 0);
    CHECK(code_of([&] { pathological_class_assignment(10, 6, 2, 1); }) == ErrorCode::kParameter);
    CHECK(pathological_class_assignment(10, 6, 1, 1).back().size() == 5);
  }
}

TEST_SUITE("properties") {
  TEST_CASE("100 random specs: disjoint, valid, complete where required, deterministic") {
    std::mt19937_64 gen(99);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t k = 2 + gen() % 9;
      const std::size_t n = 50 + gen() % 400;
      std::vector<std::size_t> labels(n);
      for (std::size_t i = 0; i < n; ++i) labels[i] = i < k ? i : gen() % k;
      const Dataset d = labels_only(labels, k);
      PartitionSpec spec;
      spec.scheme = static_cast<PartitionScheme>(trial % 3);
      spec.num_clients = 1 + gen() % std::min<std::size_t>(5, k);
      spec.beta = 0.2 + static_cast<double>(gen() % 100) / 20.0;
      spec.classes_per_client = 1 + gen() % std::max<std::size_t>(1, (k - 1) / std::max<std::size_t>(1, spec.num_clients - 1));
      spec.shots = 1;
      spec.seed = gen();
      if (spec.scheme == PartitionScheme::kIid) spec.shots = 0;
      CAPTURE(trial);
      const Partition p = make_partition(d, spec);
      const std::size_t covered = check_disjoint(p, n);
      if (spec.scheme != PartitionScheme::kPathological) CHECK(covered == n);
      if (spec.scheme == PartitionScheme::kPathological) {
        const auto owned = pathological_class_assignment(k, spec.num_clients, spec.classes_per_client,
                                                         spec.seed);
        for (std::size_t i = 0; i < p.num_clients(); ++i) CHECK(p.clients[i].size() == owned[i].size() * spec.shots);
      }
      CHECK(make_partition(d, spec).clients == p.clients);
    }
  }

  TEST_CASE("manifest lists 1-based client ids") {
    const Dataset d = balanced(2, 4);
    PartitionSpec spec;
    spec.num_clients = 2;
    spec.seed = 5;
    const Partition p = make_partition(d, spec);
    const auto j = nlohmann::json::parse(partition_manifest(p, spec));
    CHECK(j["scheme"] == "iid");
    CHECK(j["clients"]["1"].size() == 4);
    CHECK(j["clients"]["2"].size() == 4);
  }
}

TEST_SUITE("dataset") {
  TEST_CASE("synthetic data is reproducible and class-major") {
    SynthSpec s;
    s.classes = 3;
    s.feature_dim = 4;
    s.per_class = 5;
    s.seed = 12;
    const Dataset a = synth_dataset(s), b = synth_dataset(s);
    CHECK(bitwise_equal(a.features, b.features));
    CHECK(a.labels == b.labels);
    CHECK(a.size() == 15);
    CHECK(a.labels[5] == 1);
    s.variant = 1;
    CHECK_FALSE(bitwise_equal(synth_dataset(s).features, a.features));
  }

  TEST_CASE("separation zero makes classes indistinguishable") {
    SynthSpec s;
    s.classes = 2;
    s.feature_dim = 3;
    s.per_class = 20000;
    s.separation = 0.0;
    s.seed = 4;
    const Dataset d = synth_dataset(s);
    for (std::size_t j = 0; j < 3; ++j) {
      double m0 = 0, m1 = 0;
      for (std::size_t i = 0; i < 20000; ++i) {
        m0 += d.features(i, j);
        m1 += d.features(20000 + i, j);
      }
      CHECK(std::abs(m0 - m1) / 20000 < 0.05);
    }
  }

  TEST_CASE("file round trip is exact") {
    SynthSpec s;
    s.classes = 3;
    s.feature_dim = 2;
    s.per_class = 4;
    s.seed = 3;
    const Dataset d = synth_dataset(s);
    std::stringstream buf;
    write_dataset(buf, d);
    const std::string text = buf.str();
    CHECK(text.rfind("2,3\n", 0) == 0);
    const Dataset back = read_dataset(buf);
    CHECK(bitwise_equal(back.features, d.features));
    CHECK(back.labels == d.labels);
    CHECK(back.num_classes == 3);
  }

  TEST_CASE("parse errors") {
    std::stringstream empty("");
    CHECK(code_of([&] { read_dataset(empty); }) == ErrorCode::kParse);
    std::string msg;
    std::stringstream label("2,3\n0.5,1,2\n0.1,0.2,3\n");
    CHECK(code_of([&] { read_dataset(label); }, &msg) == ErrorCode::kRange);
    CHECK(msg.find(":3:") != std::string::npos);
    std::stringstream bad("2,3\n0.5,x,2\n");
    CHECK(code_of([&] { read_dataset(bad); }, &msg) == ErrorCode::kParse);
    CHECK(msg.find(":2:") != std::string::npos);
  }
}
