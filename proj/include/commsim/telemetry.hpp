#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "commsim/compressors.hpp"

namespace commsim {

enum class CostUnit { Coordinates, Bits };

struct CostModel {
  CostUnit unit = CostUnit::Coordinates;
  /// Multiplier for natural-compressed payloads in bits mode (sign + exponent).
  double natural_weight = 9.0 / 32.0;
  double full_float_bits = 32.0;

  void validate() const;
};

enum class Direction : std::uint8_t { ServerToWorker, WorkerToServer };

/// One transmission: `coords` coordinates encoded as `encoding`.
struct CommEvent {
  std::size_t t = 0;
  Direction direction = Direction::ServerToWorker;
  std::size_t worker = 0;
  double coords = 0.0;
  Encoding encoding = Encoding::Float;
};

double charge(const CommEvent& event, const CostModel& model);
double charge(Direction direction, const SparseMessage& payload, const CostModel& model);

struct TraceRecord {
  std::size_t t = 0;
  double f = 0.0;
  double grad_norm_sq = 0.0;
  /// Cumulative per-worker costs.
  double s2w_cum = 0.0;
  double w2s_cum = 0.0;
  /// Coin outcomes of the step that produced this point: -1 none, 0 tails, 1 heads.
  std::int8_t primal_coin = -1;
  std::int8_t dual_coin = -1;
  /// Lowest f seen so far (a proxy for f*).
  double f_min = 0.0;
};

struct CostsToTarget {
  double s2w = 0.0;
  double w2s = 0.0;
  double total = 0.0;
  std::size_t t = 0;
};

/// Costs at the first record with grad_norm_sq <= eps, nullopt if never reached.
std::optional<CostsToTarget> coords_to_target(const std::vector<TraceRecord>& trace, double eps);

/// Pointwise mean of several traces, truncated to the shortest one.
std::vector<TraceRecord> average_traces(const std::vector<std::vector<TraceRecord>>& traces);

inline constexpr const char* kTraceHeader = "t,f,grad_norm_sq,s2w_cum,w2s_cum";

/// 17 significant digits, so values round-trip exactly.
std::string format_double(double v);

void write_trace_csv(std::ostream& out, const std::vector<TraceRecord>& trace);
void write_trace_csv(const std::string& path, const std::vector<TraceRecord>& trace);

struct SummaryRow {
  std::string label;
  std::string algorithm;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  double gamma = 0.0;
  std::size_t iterations = 0;
  std::string status;
  std::optional<CostsToTarget> to_target;
};

inline constexpr const char* kSummaryHeader =
    "label,algorithm,n,seed,gamma,iterations,status,reached,t_target,s2w,w2s,total";

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);
void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows);

std::string to_string(CostUnit unit);
std::string to_string(Direction direction);

}  // namespace commsim
