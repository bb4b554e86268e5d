#include <doctest.h>

#include <functional>
#include <numeric>
#include <sstream>

#include "saqe/csv.hpp"
#include "saqe/error.hpp"
#include "saqe/rng.hpp"
#include "saqe/simbench.hpp"

using namespace saqe;

namespace {

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("survey csv: minimal two-area file") {
  std::istringstream in("area,y,x\nA,1.0,2.0\nA,2.0,3.0\nB,3.0,4.0\nB,4.5,5.0\n");
  const SurveySample s = parse_survey_csv(in);
  CHECK(s.num_areas() == 2);
  CHECK(s.total_size() == 4);
  CHECK(s.dim() == 1);
  CHECK(s.area(1).area_id == "B");
  CHECK(s.area(1).y(1) == 4.5);
  CHECK(s.area(0).x(1, 0) == 3.0);
}

TEST_CASE("survey csv: area with one row is named in the error") {
  std::istringstream in("area,y,x\nA,1.0,2.0\nB,3.0,4.0\nB,4.0,5.0\n");
  const std::string msg = message_of([&] { parse_survey_csv(in); });
  CHECK(msg.find("'A'") != std::string::npos);
  std::istringstream again("area,y,x\nA,1.0,2.0\nB,3.0,4.0\nB,4.0,5.0\n");
  CHECK_THROWS_AS(parse_survey_csv(again), DataError);
}

TEST_CASE("survey csv: row-level diagnostics") {
  std::istringstream missing("area,x\nA,1\nA,2\n");
  CHECK(message_of([&] { parse_survey_csv(missing); }).find("missing column 'y'") != std::string::npos);
  std::istringstream bad("area,y,x\nA,1,2\nA,oops,3\n");
  const std::string msg = message_of([&] { parse_survey_csv(bad); });
  CHECK(msg.find("line 3") != std::string::npos);
  CHECK(msg.find("oops") != std::string::npos);
}

TEST_CASE("survey csv: areas keep first-appearance order and file order within area") {
  std::istringstream in("area,y,x\nZ,1,0\nA,2,0\nZ,3,1\nA,4,1\n");
  const SurveySample s = parse_survey_csv(in);
  CHECK(s.area(0).area_id == "Z");
  CHECK(s.area(0).y(1) == 3.0);
  CHECK(s.area(1).y(0) == 2.0);
}

TEST_CASE("survey csv: 20 x 30 design round-trips losslessly") {
  const Population pop = gen_population(ScenarioSpec{}, RngStream(5));
  const DrawnSample d = draw_sample(pop, 30, RngStream(6));
  std::ostringstream out;
  write_survey_csv(out, d.sample);
  std::istringstream in(out.str());
  const SurveySample back = parse_survey_csv(in);
  CHECK(back.num_areas() == 20);
  CHECK(back.total_size() == 600);
  CHECK(back.dim() == 3);
  for (std::size_t k = 0; k < 20; ++k) {
    CHECK(back.area(k).area_id == d.sample.area(k).area_id);
    CHECK((back.area(k).x.array() == d.sample.area(k).x.array()).all());
    CHECK((back.area(k).y.array() == d.sample.area(k).y.array()).all());
  }
}

TEST_CASE("sample invariants") {
  CHECK_THROWS_AS(SurveySample({AreaSample{"A", MatrixXd::Ones(2, 1), VectorXd::Ones(2)}}), DataError);
  CHECK_THROWS_AS(SurveySample({AreaSample{"A", MatrixXd::Ones(2, 1), VectorXd::Ones(2)},
                                AreaSample{"A", MatrixXd::Ones(2, 1), VectorXd::Ones(2)}}),
                  DataError);
  CHECK_THROWS_AS(SurveySample({AreaSample{"A", MatrixXd::Ones(2, 1), VectorXd::Ones(2)},
                                AreaSample{"B", MatrixXd::Ones(2, 2), VectorXd::Ones(2)}}),
                  DataError);
  MatrixXd x = MatrixXd::Ones(2, 1);
  x(0, 0) = std::nan("");
  CHECK_THROWS_AS(SurveySample({AreaSample{"A", x, VectorXd::Ones(2)},
                                AreaSample{"B", MatrixXd::Ones(2, 1), VectorXd::Ones(2)}}),
                  DataError);
}

TEST_CASE("rho sums to one") {
  std::vector<AreaSample> areas;
  for (int k = 0; k < 7; ++k) {
    const int n = 2 + 3 * k;
    areas.push_back(AreaSample{"a" + std::to_string(k), MatrixXd::Random(n, 1), VectorXd::Random(n)});
  }
  const SurveySample s(std::move(areas));
  const auto r = s.rho();
  // Counts are exact; the ratios carry one rounding each.
  CHECK(std::accumulate(r.begin(), r.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s.total_size() == 2 * 7 + 3 * 21);
}

TEST_CASE("census csv: full, means-only and sampled flags") {
  std::ostringstream full;
  full << "area,x1,x2,sampled\n";
  for (int k = 0; k < 20; ++k) {
    for (int j = 0; j < 1000; ++j) full << "a" << k << ',' << j << ',' << (j % 7) << ',' << (j < 30 ? 1 : 0) << '\n';
  }
  std::istringstream in(full.str());
  const CensusFrame c = parse_census_csv(in);
  CHECK(c.num_areas() == 20);
  CHECK(c.full());
  CHECK(c.area(3).population_size == 1000);
  CHECK(c.has_sample_link());
  CHECK(c.area(3).sample_link->size() == 30);
  CHECK((*c.area(3).sample_link)[29] == 29);
  CHECK(c.area(0).mean(0) == doctest::Approx(499.5));

  std::istringstream means("area,type,N,x1\nA,mean,10,2.5\nB,mean,12,3.5\n");
  const CensusFrame m = parse_census_csv(means);
  CHECK_FALSE(m.full());
  CHECK(m.area(1).population_size == 12);
  CHECK(m.area(1).mean(0) == 3.5);
}

TEST_CASE("census alignment checks N_k >= n_k") {
  std::istringstream s_in("area,y,x\nA,1,0\nA,2,1\nA,3,2\nB,1,0\nB,2,1\n");
  const SurveySample s = parse_survey_csv(s_in);
  std::istringstream c_in("area,type,N,x\nB,mean,5,0.5\nA,mean,2,1.0\n");
  const CensusFrame c = parse_census_csv(c_in);
  const std::string msg = message_of([&] { c.aligned_to(s); });
  CHECK(msg.find("'A'") != std::string::npos);
  std::istringstream ok_in("area,type,N,x\nB,mean,5,0.5\nA,mean,3,1.0\n");
  const CensusFrame aligned = parse_census_csv(ok_in).aligned_to(s);
  CHECK(aligned.area(0).area_id == "A");
}

TEST_CASE("rng streams reproduce and separate") {
  auto a = RngStream(42).child(3).engine();
  auto b = RngStream(42).child(3).engine();
  auto c = RngStream(42).child(4).engine();
  auto d = RngStream(43).child(3).engine();
  bool differ_c = false, differ_d = false;
  for (int i = 0; i < 16; ++i) {
    const auto va = a();
    CHECK(va == b());
    differ_c = differ_c || va != c();
    differ_d = differ_d || va != d();
  }
  CHECK(differ_c);
  CHECK(differ_d);
  CHECK(RngStream(1).child(2).key() != RngStream(1).child(2).child(0).key());
}
