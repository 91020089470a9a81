#include <doctest.h>

#include <cmath>
#include <sstream>
#include <string>

#include "commsim/algorithms.hpp"
#include "commsim/error.hpp"
#include "commsim/telemetry.hpp"
#include "commsim/tuning.hpp"
#include "helpers.hpp"

using namespace commsim;

namespace {

std::vector<TraceRecord> ramp(std::size_t len, double start, double factor, double cost) {
  std::vector<TraceRecord> out(len);
  double g = start;
  for (std::size_t t = 0; t < len; ++t) {
    out[t].t = t;
    out[t].grad_norm_sq = g;
    out[t].f = g;
    out[t].s2w_cum = cost * static_cast<double>(t);
    out[t].w2s_cum = 2.0 * cost * static_cast<double>(t);
    g *= factor;
  }
  return out;
}

}  // namespace

TEST_CASE("charge") {
  Stream rng = testing::rng_for(40);
  const CostModel coords;
  CostModel bits;
  bits.unit = CostUnit::Bits;

  const Vec x = testing::gaussian(300, rng);
  CHECK(charge(Direction::ServerToWorker, full_message(x), coords) == 300.0);
  CHECK(charge(Direction::ServerToWorker, full_message(x), bits) == 300.0 * 32.0);

  const auto spec = CompressorSpec::perm_k(300, 100);
  const SparseMessage perm = compress(spec, x, rng);
  CHECK(charge(Direction::ServerToWorker, perm, coords) == 3.0);

  const auto nat = CompressorSpec::compose(CompressorSpec::natural(300), spec);
  const SparseMessage pn = compress(nat, x, rng);
  CHECK(pn.encoding == Encoding::Natural);
  CHECK(charge(Direction::ServerToWorker, pn, bits) == 27.0);
  CHECK(charge(Direction::ServerToWorker, pn, coords) == 3.0);

  SparseMessage broken = perm;
  broken.indices.push_back(0);
  CHECK_THROWS_AS(charge(Direction::ServerToWorker, broken, coords), ParameterError);
}

TEST_CASE("cost model validation") {
  CostModel m;
  CHECK_NOTHROW(m.validate());
  m.natural_weight = 0.0;
  CHECK_THROWS_AS(m.validate(), ParameterError);
  m.natural_weight = 0.5;
  m.full_float_bits = -1.0;
  CHECK_THROWS_AS(m.validate(), ParameterError);
}

TEST_CASE("coords_to_target") {
  auto at_zero = ramp(5, 1e-6, 0.5, 10.0);
  const auto hit0 = coords_to_target(at_zero, 1e-4);
  REQUIRE(hit0);
  CHECK(hit0->t == 0);
  CHECK(hit0->total == 0.0);

  // 1, 0.5, ..., crossing 0.04 first at t = 5.
  const auto r = ramp(10, 1.0, 0.5, 4.0);
  const auto hit = coords_to_target(r, 0.04);
  REQUIRE(hit);
  CHECK(hit->t == 5);
  CHECK(hit->s2w == 20.0);
  CHECK(hit->w2s == 40.0);
  CHECK(hit->total == 60.0);
  CHECK_FALSE(coords_to_target(r, 1e-9));
  CHECK_THROWS_AS(coords_to_target(r, 0.0), ParameterError);
}

TEST_CASE("GD cost to target is d times the crossing index") {
  QuadraticGenerator gen;
  gen.n = 5;
  gen.d = 300;
  gen.sigma = 0.05;
  gen.v0 = 0.2;
  Stream prng = make_stream(2, StreamRole::Problem, 0);
  const QuadraticEnsemble ens = generate_het_quadratic(gen, prng);
  AlgoConfig cfg;
  cfg.gamma = step_gd(quad_constants(ens).L);
  RunOptions opts;
  opts.stop.max_iters = 100000;
  opts.stop.eps = 1e-2;
  const RunResult res = run_experiment(Algorithm::GD, ens, cfg, Vec::Zero(300), opts, 1);
  REQUIRE(res.reached);
  const auto hit = coords_to_target(res.trace, 1e-2);
  REQUIRE(hit);
  std::size_t first = 0;
  while (res.trace[first].grad_norm_sq > 1e-2) ++first;
  CHECK(hit->t == res.trace[first].t);
  CHECK(hit->s2w == 300.0 * static_cast<double>(hit->t));
  CHECK(hit->w2s == 300.0 * static_cast<double>(hit->t));
  CHECK(hit->t > 0);
}

TEST_CASE("average traces") {
  std::vector<TraceRecord> a = ramp(6, 2.0, 1.0, 3.0);
  std::vector<TraceRecord> b = ramp(4, 2.0, 1.0, 3.0);
  const auto avg = average_traces({a, b, a});
  REQUIRE(avg.size() == 4);
  for (std::size_t t = 0; t < 4; ++t) {
    CHECK(avg[t].grad_norm_sq == doctest::Approx(2.0));
    CHECK(avg[t].s2w_cum == doctest::Approx(3.0 * static_cast<double>(t)));
    CHECK(avg[t].t == t);
  }
  const auto mixed = average_traces({ramp(3, 1.0, 1.0, 1.0), ramp(3, 3.0, 1.0, 5.0)});
  CHECK(mixed[2].grad_norm_sq == 2.0);
  CHECK(mixed[2].w2s_cum == 12.0);
  CHECK(average_traces({}).empty());
}

TEST_CASE("trace CSV") {
  CHECK(format_double(0.1) == "0.10000000000000001");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
  std::vector<TraceRecord> tr(2);
  tr[1].t = 7;
  tr[1].f = M_PI;
  tr[1].grad_norm_sq = 0.1;
  tr[1].s2w_cum = 3.0;
  tr[1].w2s_cum = 2.5;
  std::ostringstream out;
  write_trace_csv(out, tr);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == kTraceHeader);
  std::getline(in, line);
  CHECK(line == "0,0,0,0,0");
  std::getline(in, line);
  CHECK(line == "7,3.1415926535897931,0.10000000000000001,3,2.5");

  std::ostringstream sum;
  SummaryRow row;
  row.label = "x";
  row.algorithm = "gd";
  row.n = 2;
  row.status = "max_iters";
  write_summary_csv(sum, {row});
  CHECK(sum.str() == std::string(kSummaryHeader) + "\nx,gd,2,0,0,0,max_iters,0,,,,\n");
}
