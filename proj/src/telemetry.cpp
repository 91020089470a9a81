#include "commsim/telemetry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>

#include <fmt/format.h>

#include "commsim/error.hpp"

namespace commsim {

void CostModel::validate() const {
  if (unit != CostUnit::Coordinates && unit != CostUnit::Bits) {
    throw ParameterError("cost model: unknown unit");
  }
  if (!(natural_weight > 0.0) || !(full_float_bits > 0.0)) {
    throw ParameterError("cost model: weights must be positive");
  }
}

double charge(const CommEvent& event, const CostModel& model) {
  switch (model.unit) {
    case CostUnit::Coordinates:
      return event.coords;
    case CostUnit::Bits: {
      const double weight = event.encoding == Encoding::Natural ? model.natural_weight : 1.0;
      return event.coords * weight * model.full_float_bits;
    }
  }
  throw ParameterError("cost model: unknown unit");
}

double charge(Direction direction, const SparseMessage& payload, const CostModel& model) {
  if (!payload.valid()) throw ParameterError("charge: invalid payload");
  CommEvent event;
  event.direction = direction;
  event.coords = payload.cost;
  event.encoding = payload.encoding;
  return charge(event, model);
}

std::optional<CostsToTarget> coords_to_target(const std::vector<TraceRecord>& trace,
                                              double eps) {
  if (!(eps > 0.0)) throw ParameterError("coords_to_target: eps must be > 0");
  for (const auto& r : trace) {
    if (r.grad_norm_sq <= eps) {
      return CostsToTarget{r.s2w_cum, r.w2s_cum, r.s2w_cum + r.w2s_cum, r.t};
    }
  }
  return std::nullopt;
}

std::vector<TraceRecord> average_traces(const std::vector<std::vector<TraceRecord>>& traces) {
  if (traces.empty()) return {};
  std::size_t len = traces.front().size();
  for (const auto& tr : traces) len = std::min(len, tr.size());
  const double inv = 1.0 / static_cast<double>(traces.size());
  std::vector<TraceRecord> out(len);
  for (std::size_t k = 0; k < len; ++k) {
    TraceRecord& r = out[k];
    r.t = traces.front()[k].t;
    for (const auto& tr : traces) {
      r.f += tr[k].f;
      r.grad_norm_sq += tr[k].grad_norm_sq;
      r.s2w_cum += tr[k].s2w_cum;
      r.w2s_cum += tr[k].w2s_cum;
      r.f_min += tr[k].f_min;
    }
    r.f *= inv;
    r.grad_norm_sq *= inv;
    r.s2w_cum *= inv;
    r.w2s_cum *= inv;
    r.f_min *= inv;
  }
  return out;
}

std::string format_double(double v) { return fmt::format("{:.17g}", v); }

void write_trace_csv(std::ostream& out, const std::vector<TraceRecord>& trace) {
  out << kTraceHeader << '\n';
  for (const auto& r : trace) {
    out << r.t << ',' << format_double(r.f) << ',' << format_double(r.grad_norm_sq) << ','
        << format_double(r.s2w_cum) << ',' << format_double(r.w2s_cum) << '\n';
  }
}

namespace {

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  return out;
}

}  // namespace

void write_trace_csv(const std::string& path, const std::vector<TraceRecord>& trace) {
  auto out = open_output(path);
  write_trace_csv(out, trace);
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << kSummaryHeader << '\n';
  for (const auto& r : rows) {
    out << r.label << ',' << r.algorithm << ',' << r.n << ',' << r.seed << ','
        << format_double(r.gamma) << ',' << r.iterations << ',' << r.status << ',';
    if (r.to_target) {
      out << "1," << r.to_target->t << ',' << format_double(r.to_target->s2w) << ','
          << format_double(r.to_target->w2s) << ',' << format_double(r.to_target->total);
    } else {
      out << "0,,,,";
    }
    out << '\n';
  }
}

void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
  auto out = open_output(path);
  write_summary_csv(out, rows);
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::string to_string(CostUnit unit) {
  return unit == CostUnit::Bits ? "bits" : "coordinates";
}

std::string to_string(Direction direction) {
  return direction == Direction::ServerToWorker ? "s2w" : "w2s";
}

}  // namespace commsim
