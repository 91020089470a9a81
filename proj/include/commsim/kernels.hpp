#pragma once

#include <span>
#include <vector>

#include "commsim/compressors.hpp"
#include "commsim/linalg.hpp"
#include "commsim/parallel.hpp"
#include "commsim/problems.hpp"

namespace commsim {

// Per-worker loops of one iteration. Each worker writes its own column and
// reductions run serially in worker order, so Exec::Parallel reproduces
// Exec::Serial bit for bit.

/// out.col(i) = grad f_i(points.col(i)).
void worker_gradients(const Problem& problem, const Mat& points, Exec exec, Mat& out);

/// out.col(i) = grad f_i(x).
void worker_gradients_at(const Problem& problem, const Vec& x, Exec exec, Mat& out);

/// out = (1/n) sum_i m.col(i), summed in column order.
void column_mean(const Mat& m, Vec& out);

/// out = (1/n) sum_i grad f_i(points.col(i)); `scratch` holds the per-worker
/// gradients afterwards.
void mean_worker_gradient(const Problem& problem, const Mat& points, Exec exec, Mat& scratch,
                          Vec& out);

/// cols.col(i) += scale * densify(msgs[i]).
void add_messages(std::span<const SparseMessage> msgs, double scale, Exec exec, Mat& cols);

/// Reusable per-worker term lists for mean_hessian_messages.
struct HessianWorkspace {
  std::vector<std::vector<SparseTerm>> terms;
  Vec folded;
  std::vector<char> seen;
  std::vector<std::uint32_t> support;
  std::vector<double> values;
};

/// acc += (alpha / n) sum_i H_i densify(msgs[i]) for a constant-Hessian
/// problem. Each worker lists its (row, value) terms, then the terms are added
/// in worker order; work is O(n k band) rather than O(n d). Ensembles of the
/// form H_i = s_i X first fold sum_i s_i msgs[i] in worker order and apply X
/// once to the union of the supports.
void mean_hessian_messages(const Problem& problem, std::span<const SparseMessage> msgs,
                           double alpha, Exec exec, HessianWorkspace& ws, Vec& acc);

}  // namespace commsim
