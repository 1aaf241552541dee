#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "wedgefe/data.hpp"

using namespace wedgefe;

namespace {

TrialData six_cluster_sw() {
  auto design = TrialDesign::stepped_wedge(4, 2);
  std::vector<int> z = {2, 2, 3, 3, 4, 4};
  return testutil::make_data(
      design, z, [](int, int) { return 3; }, 1,
      [](int i, int j, int k) { return std::vector<double>{0.1 * i + 0.01 * j + 0.001 * k}; },
      [](int i, int j, int k, const std::vector<double>&) { return i + 0.5 * j + 0.01 * k; });
}

}  // namespace

TEST_CASE("trial data bookkeeping") {
  TrialData data = six_cluster_sw();
  CHECK(data.m() == 6);
  CHECK(data.J() == 4);
  CHECK(data.n_rows() == 6 * 4 * 3);
  CHECK(data.cluster_total(0) == 12);
  CHECK(data.cluster_period_sizes(0).sum() == 12.0);
  CHECK(data.sequence_of(3) == 3);

  int total = 0;
  for (int i = 0; i < data.m(); ++i) {
    auto blk = cluster_view(data, data.cluster_ids()[i], TreatmentStructure::Constant);
    total += static_cast<int>(blk.y.size());
  }
  CHECK(total == data.n_rows());  // blocks partition the rows
}

TEST_CASE("trial data validation errors") {
  auto design = TrialDesign::stepped_wedge(4, 1);
  std::map<int, int> seq{{1, 2}};
  SUBCASE("period out of range") {
    std::vector<Observation> obs{{1, 5, 1, 1.0, {}}, {1, 1, 1, 0.0, {}}};
    CHECK_THROWS_AS(TrialData(design, obs, seq, 0), std::out_of_range);
  }
  SUBCASE("unknown sequence") {
    std::vector<Observation> obs{{1, 1, 1, 1.0, {}}, {1, 2, 1, 0.0, {}}};
    std::map<int, int> bad{{1, 5}};
    CHECK_THROWS(TrialData(design, obs, bad, 0));
  }
  SUBCASE("z=0 only valid for PB") {
    std::vector<Observation> obs{{1, 1, 1, 1.0, {}}, {1, 2, 1, 0.0, {}}};
    std::map<int, int> z0{{1, 0}};
    CHECK_THROWS(TrialData(design, obs, z0, 0));
    auto pb = TrialDesign::parallel_baseline(4, 1);
    CHECK_NOTHROW(TrialData(pb, obs, z0, 0));
  }
  SUBCASE("degenerate cluster") {
    std::vector<Observation> obs{{1, 1, 1, 1.0, {}}};
    CHECK_THROWS(TrialData(design, obs, seq, 0));
  }
}

TEST_CASE("cluster view layout") {
  TrialData data = six_cluster_sw();
  auto blk = cluster_view(data, 1, TreatmentStructure::Constant);
  // columns: period[2..4] then treatment then covariate
  CHECK(blk.Q.cols() == 3 + 1 + 1);
  // first rows are period 1: no period indicator, z=2 untreated at j=1
  CHECK(blk.Q.row(0).head(3).norm() == 0.0);
  CHECK(blk.Q(0, 3) == 0.0);
  // a period-3 row for z=2 is treated
  int r3 = -1;
  for (size_t r = 0; r < blk.period.size(); ++r)
    if (blk.period[r] == 3) {
      r3 = static_cast<int>(r);
      break;
    }
  REQUIRE(r3 >= 0);
  CHECK(blk.Q(r3, 1) == 1.0);
  CHECK(blk.Q(r3, 3) == 1.0);
  // rows sorted by (period, individual)
  for (size_t r = 1; r < blk.period.size(); ++r) CHECK(blk.period[r] >= blk.period[r - 1]);
}

TEST_CASE("drop period") {
  TrialData data = six_cluster_sw();
  int before = data.n_rows();
  Matrix nij = data.period_size_matrix();
  TrialData dropped = drop_period(data, 4);
  CHECK(dropped.J() == 3);
  CHECK(before - dropped.n_rows() == static_cast<int>(nij.col(3).sum()));
  CHECK_THROWS(drop_period(data, 7));
  CHECK_THROWS(drop_period(data, 2));  // labels must stay consecutive
}

TEST_CASE("csv round trip and errors") {
  TrialData data = six_cluster_sw();
  std::string path = "wedgefe_test_roundtrip.csv";
  write_csv(data, path);
  TrialData back = load_csv(path, data.design());
  CHECK(back.n_rows() == data.n_rows());
  CHECK(back.m() == data.m());
  CHECK(back.outcomes().isApprox(data.outcomes()));
  CHECK(back.covariates().isApprox(data.covariates()));
  for (int i = 0; i < back.m(); ++i)
    CHECK(back.sequence_of(back.cluster_ids()[i]) == data.sequence_of(data.cluster_ids()[i]));
  // writing again reproduces the file byte for byte
  std::string path2 = "wedgefe_test_roundtrip2.csv";
  write_csv(back, path2);
  std::ifstream a(path), b(path2);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  std::remove(path.c_str());
  std::remove(path2.c_str());

  SUBCASE("row-level diagnostics") {
    std::string bad = "wedgefe_test_bad.csv";
    {
      std::ofstream out(bad);
      out << "cluster,period,y,z\n1,1,0.5,2\n1,7,0.25,2\n";
    }
    try {
      load_csv(bad, data.design());
      CHECK(false);
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
      CHECK(std::string(e.what()).find("period") != std::string::npos);
    }
    {
      std::ofstream out(bad);
      out << "cluster,period,y,z\n1,1,0.5,9\n1,2,0.25,9\n";
    }
    CHECK_THROWS(load_csv(bad, data.design()));
    {
      std::ofstream out(bad);
      out << "cluster,period,y\n1,1,0.5\n";
    }
    CHECK_THROWS(load_csv(bad, data.design()));  // missing z column
    {
      std::ofstream out(bad);
      out << "cluster,period,y,z\n1,1,abc,2\n1,2,0.25,2\n";
    }
    CHECK_THROWS(load_csv(bad, data.design()));
    std::remove(bad.c_str());
  }

  SUBCASE("clusters with fewer than two rows are dropped with a warning") {
    std::string one = "wedgefe_test_one.csv";
    {
      std::ofstream out(one);
      out << "cluster,period,y,z\n1,1,0.5,2\n1,2,0.25,2\n2,1,0.1,3\n";
    }
    TrialData d = load_csv(one, data.design());
    CHECK(d.m() == 1);
    CHECK(d.report().clusters_dropped == 1);
    CHECK(d.report().warnings.size() == 1);
    std::remove(one.c_str());
  }
}

TEST_CASE("covariate column permutation reorders the block columns only") {
  auto design = TrialDesign::parallel_baseline(3, 1);
  std::vector<int> z = {0, 2};
  auto data = testutil::make_data(
      design, z, [](int, int) { return 2; }, 2,
      [](int i, int j, int k) { return std::vector<double>{1.0 * i + j, 10.0 * k}; },
      [](int i, int j, int, const std::vector<double>&) { return i + j * 0.5; });
  std::string path = "wedgefe_test_perm.csv";
  write_csv(data, path);
  CsvSchema fwd;
  fwd.covariates = {"x1", "x2"};
  CsvSchema rev;
  rev.covariates = {"x2", "x1"};
  TrialData a = load_csv(path, design, fwd);
  TrialData b = load_csv(path, design, rev);
  CHECK(a.covariates().col(0).isApprox(b.covariates().col(1)));
  CHECK(a.covariates().col(1).isApprox(b.covariates().col(0)));
  std::remove(path.c_str());
}
