#include <zlib.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "haphazard/streams.hpp"

using namespace haphazard;
namespace fs = std::filesystem;

namespace {

struct TempFile {
  fs::path path;
  TempFile(const std::string& name, const std::string& body) {
    path = fs::temp_directory_path() / ("haphazard_test_" + name);
    std::ofstream(path) << body;
  }
  ~TempFile() { fs::remove(path); }
  std::string str() const { return path.string(); }
};

std::vector<DenseRecord> dense(std::size_t rows, std::size_t n, std::uint64_t seed = 3) {
  Rng rng(seed);
  std::vector<DenseRecord> out(rows);
  for (auto& r : out) {
    r.values.resize(n);
    for (auto& v : r.values) v = rng.uniform(-5.0, 5.0);
    r.label = rng.bernoulli(0.4) ? 1 : 0;
  }
  return out;
}

std::vector<FeatureId> ids(const Instance& inst) {
  std::vector<FeatureId> out;
  for (const auto& f : inst.features) out.push_back(f.id);
  return out;
}

std::vector<FeatureId> iota_ids(FeatureId first, FeatureId last) {
  std::vector<FeatureId> out;
  for (FeatureId i = first; i <= last; ++i) out.push_back(i);
  return out;
}

int parse_error_line(auto&& fn) {
  try {
    fn();
  } catch (const ParseError& e) {
    return static_cast<int>(e.line());
  }
  return -1;
}

}  // namespace

TEST_CASE("read_csv") {
  SUBCASE("empty file") {
    TempFile f("empty.csv", "");
    CHECK(read_csv(f.str()).empty());
  }
  SUBCASE("three lines round-trip exactly") {
    TempFile f("three.csv", "0.1,2,-3.5e-7,1\n4,5.25,6,0\n-0.0,1e300,7,1\n");
    auto recs = read_csv(f.str());
    REQUIRE(recs.size() == 3);
    CHECK(recs[0] == DenseRecord{{0.1, 2.0, -3.5e-7}, 1});
    CHECK(recs[1] == DenseRecord{{4.0, 5.25, 6.0}, 0});
    CHECK(recs[2].values[1] == 1e300);
    CHECK(recs[2].label == 1);
  }
  SUBCASE("-1/+1 labels map to 0/1") {
    TempFile f("pm.csv", "1,2,-1\n3,4,+1\n");
    auto recs = read_csv(f.str());
    CHECK(recs[0].label == 0);
    CHECK(recs[1].label == 1);
  }
  SUBCASE("header, first-column label, string positive label") {
    TempFile f("hdr.csv", "cls,a,b\ng,1,2\nh,3,4\n");
    CsvOptions o;
    o.header = true;
    o.label_column = 0;
    o.positive_label = "g";
    auto recs = read_csv(f.str(), o);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0] == DenseRecord{{1.0, 2.0}, 1});
    CHECK(recs[1] == DenseRecord{{3.0, 4.0}, 0});
  }
  SUBCASE("ragged row reports its line") {
    TempFile f("ragged.csv", "1,2,0\n1,2,3,0\n");
    CHECK(parse_error_line([&] { read_csv(f.str()); }) == 2);
  }
  SUBCASE("non-numeric cell reports its line") {
    TempFile f("nonnum.csv", "1,2,0\n3,4,1\n5,x,0\n");
    CHECK(parse_error_line([&] { read_csv(f.str()); }) == 3);
  }
  SUBCASE("gzip is transparent") {
    auto p = fs::temp_directory_path() / "haphazard_test_gz.csv.gz";
    gzFile gz = gzopen(p.string().c_str(), "wb");
    REQUIRE(gz != nullptr);
    const std::string body = "1.5,2.5,1\n3,4,0\n";
    gzwrite(gz, body.data(), static_cast<unsigned>(body.size()));
    gzclose(gz);
    auto recs = read_csv(p.string());
    fs::remove(p);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0] == DenseRecord{{1.5, 2.5}, 1});
  }
  SUBCASE("missing file") { CHECK_THROWS(read_csv("/nonexistent/haphazard.csv")); }
}

TEST_CASE("read_svmlight") {
  TempFile f("a.svm", "1\n-1 3:0.5\n+1 1:2 4:-1.25\n");
  auto recs = read_svmlight(f.str(), 4);
  REQUIRE(recs.size() == 3);
  CHECK(recs[0] == DenseRecord{{0, 0, 0, 0}, 1});
  CHECK(recs[1] == DenseRecord{{0, 0, 0.5, 0}, 0});
  CHECK(recs[2] == DenseRecord{{2, 0, 0, -1.25}, 1});

  auto sparse = read_svmlight_sparse(f.str(), 4);
  REQUIRE(sparse.size() == 3);
  CHECK(sparse[0].features.empty());
  REQUIRE(sparse[1].features.size() == 1);
  CHECK(sparse[1].features[0] == FeatureValue{3, 0.5});
  CHECK(sparse[1].label == 0);
  CHECK(sparse[2].index == 2);

  TempFile big("b.svm", "1 1:1\n1 5:2\n");
  CHECK(parse_error_line([&] { read_svmlight(big.str(), 4); }) == 2);
  TempFile bad("c.svm", "1 0:1\n");
  CHECK(parse_error_line([&] { read_svmlight(bad.str(), 4); }) == 1);
}

TEST_CASE("shuffle_records is a seeded permutation") {
  auto recs = dense(50, 3);
  auto a = recs, b = recs;
  shuffle_records(a, 11);
  shuffle_records(b, 11);
  CHECK(a == b);
  CHECK(a != recs);
  auto key = [](const std::vector<DenseRecord>& v) {
    std::multiset<double> s;
    for (const auto& r : v) s.insert(r.values[0]);
    return s;
  };
  CHECK(key(a) == key(recs));
}

TEST_CASE("interval arithmetic") {
  CHECK(round_half_up_div(8, 5) == 2);    // 1.6
  CHECK(round_half_up_div(16, 5) == 3);   // 3.2
  CHECK(round_half_up_div(21, 2) == 11);  // 10.5
  CHECK(round_half_up_div(32, 5) == 6);   // 6.4
  CHECK(interval_of(0, 100, 5) == 1);
  CHECK(interval_of(19, 100, 5) == 1);
  CHECK(interval_of(20, 100, 5) == 2);
  CHECK(interval_of(99, 100, 5) == 5);
  CHECK(interval_of(102, 103, 5) == 5);  // remainder lands in the last interval
}

TEST_CASE("mask_bernoulli") {
  auto recs = dense(200, 8);
  for (const auto& inst : mask_bernoulli(recs, 1.0, 1)) CHECK(inst.features.size() == 8);
  for (const auto& inst : mask_bernoulli(recs, 0.0, 1)) CHECK(inst.empty());

  auto many = dense(12500, 8, 4);  // 1e5 record-features
  auto s = mask_bernoulli(many, 0.5, 2024);
  std::size_t kept = 0;
  for (std::size_t t = 0; t < s.size(); ++t) {
    kept += s[t].features.size();
    CHECK(s[t].index == t);
    CHECK(s[t].label == many[t].label);
    for (const auto& f : s[t].features) CHECK(f.value == many[t].values[f.id - 1]);
  }
  const double frac = static_cast<double>(kept) / 1e5;
  CHECK(frac >= 0.49);
  CHECK(frac <= 0.51);

  CHECK(mask_bernoulli(many, 0.5, 2024) == s);
  CHECK(mask_bernoulli(many, 0.5, 2025) != s);
  CHECK_THROWS_AS(mask_bernoulli(recs, 1.5, 0), ConfigError);
}

TEST_CASE("schedule_sudden") {
  auto recs = dense(100, 8);
  auto s = schedule_sudden(recs);
  CHECK(ids(s[0]) == iota_ids(1, 2));
  CHECK(ids(s[20]) == iota_ids(1, 3));
  CHECK(ids(s[99]) == iota_ids(1, 8));
  auto s21 = schedule_sudden(dense(10, 21));
  CHECK(ids(s21[0]) == iota_ids(1, 4));
  for (std::size_t t = 0; t < s.size(); ++t) CHECK(s[t].label == recs[t].label);
}

TEST_CASE("schedule_obsolete mirrors sudden") {
  auto recs = dense(100, 8);
  auto o = schedule_obsolete(recs);
  CHECK(ids(o[0]) == iota_ids(1, 8));
  CHECK(ids(o[20]) == iota_ids(1, 6));
  Schedule sud{.kind = ScheduleKind::Sudden};
  Schedule obs{.kind = ScheduleKind::Obsolete};
  for (std::size_t n : {3u, 8u, 21u, 28u}) {
    for (std::size_t k = 1; k <= 5; ++k) {
      CHECK(scheduled_features(obs, k, n).last == scheduled_features(sud, 6 - k, n).last);
    }
  }
}

TEST_CASE("schedule_reappearing") {
  auto recs = dense(100, 21);
  auto r = schedule_reappearing(recs);
  CHECK(ids(r[0]) == iota_ids(1, 11));
  CHECK(ids(r[20]) == iota_ids(12, 21));
  CHECK(ids(r[40]) == ids(r[0]));
  CHECK(ids(r[60]) == ids(r[20]));
  CHECK(ids(r[99]) == ids(r[0]));
}

TEST_CASE("schedule_alternating") {
  auto recs = dense(4000, 8, 8);
  auto same = schedule_alternating(recs, 0.4, 0.4, 100, 5);
  CHECK(same == mask_bernoulli(recs, 0.4, 5));

  auto lowhigh = schedule_alternating(recs, 0.0, 1.0, 100, 5);
  for (std::size_t t = 0; t < lowhigh.size(); ++t) {
    const bool high = (t / 100) % 2 == 1;
    CHECK(lowhigh[t].features.size() == (high ? 8u : 0u));
  }

  auto a = schedule_alternating(recs, 0.25, 0.75, 100, 6);
  std::size_t kept = 0;
  for (const auto& inst : a) kept += inst.features.size();
  // 32,000 draws; 3 sigma of a fair mixture is about 0.0077
  CHECK(std::abs(static_cast<double>(kept) / 32000.0 - 0.5) < 0.01);
  CHECK(schedule_alternating(recs, 0.25, 0.75, 100, 6) == a);
}

TEST_CASE("StreamGenerator pulls lazily") {
  auto recs = dense(30, 5);
  Schedule sch{.kind = ScheduleKind::Bernoulli, .p = 0.5};
  StreamGenerator gen(recs, sch, 77);
  std::vector<Instance> pulled;
  while (auto inst = gen.next()) pulled.push_back(*inst);
  CHECK(gen.position() == 30);
  CHECK(pulled == generate_stream(recs, sch, 77));
  CHECK_FALSE(gen.next().has_value());
}

TEST_CASE("schedule names round-trip") {
  for (auto k : {ScheduleKind::Bernoulli, ScheduleKind::Sudden, ScheduleKind::Obsolete,
                 ScheduleKind::Reappearing, ScheduleKind::Alternating}) {
    CHECK(parse_schedule_kind(schedule_kind_name(k)) == k);
  }
}
