#include "commsim/kernels.hpp"

#include "commsim/error.hpp"

namespace commsim {

namespace {

void shape_columns(Mat& out, std::size_t d, std::size_t n) {
  if (static_cast<std::size_t>(out.rows()) != d || static_cast<std::size_t>(out.cols()) != n) {
    out.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
  }
}

}  // namespace

void worker_gradients(const Problem& problem, const Mat& points, Exec exec, Mat& out) {
  const std::size_t n = problem.workers();
  const std::size_t d = problem.dim();
  if (static_cast<std::size_t>(points.rows()) != d ||
      static_cast<std::size_t>(points.cols()) != n) {
    throw DimensionError("worker_gradients: points must be d x n");
  }
  shape_columns(out, d, n);
  for_each_index(n, exec, [&](std::size_t i) {
    Vec g(d);
    problem.worker_grad(i, points.col(static_cast<Eigen::Index>(i)), g);
    out.col(static_cast<Eigen::Index>(i)) = g;
  });
}

void worker_gradients_at(const Problem& problem, const Vec& x, Exec exec, Mat& out) {
  const std::size_t n = problem.workers();
  const std::size_t d = problem.dim();
  shape_columns(out, d, n);
  for_each_index(n, exec, [&](std::size_t i) {
    Vec g(d);
    problem.worker_grad(i, x, g);
    out.col(static_cast<Eigen::Index>(i)) = g;
  });
}

void column_mean(const Mat& m, Vec& out) {
  out.setZero(m.rows());
  for (Eigen::Index i = 0; i < m.cols(); ++i) out += m.col(i);
  out /= static_cast<double>(m.cols());
}

void mean_worker_gradient(const Problem& problem, const Mat& points, Exec exec, Mat& scratch,
                          Vec& out) {
  worker_gradients(problem, points, exec, scratch);
  column_mean(scratch, out);
}

void add_messages(std::span<const SparseMessage> msgs, double scale, Exec exec, Mat& cols) {
  if (static_cast<std::size_t>(cols.cols()) != msgs.size()) {
    throw DimensionError("add_messages: one column per message expected");
  }
  for_each_index(msgs.size(), exec, [&](std::size_t i) {
    add_to(msgs[i], scale, cols.col(static_cast<Eigen::Index>(i)));
  });
}

void mean_hessian_messages(const Problem& problem, std::span<const SparseMessage> msgs,
                           double alpha, Exec exec, HessianWorkspace& ws, Vec& acc) {
  const std::size_t n = msgs.size();
  const auto* quad = dynamic_cast<const QuadraticEnsemble*>(&problem);
  if (quad != nullptr && quad->is_scaled()) {
    const std::size_t d = quad->dim();
    if (static_cast<std::size_t>(ws.folded.size()) != d) {
      ws.folded = Vec::Zero(static_cast<Eigen::Index>(d));
      ws.seen.assign(d, 0);
    }
    ws.support.clear();
    const auto& scales = quad->scales();
    for (std::size_t i = 0; i < n; ++i) {
      const SparseMessage& m = msgs[i];
      for (std::size_t k = 0; k < m.indices.size(); ++k) {
        const std::uint32_t j = m.indices[k];
        if (!ws.seen[j]) {
          ws.seen[j] = 1;
          ws.support.push_back(j);
        }
        ws.folded[j] += scales[i] * m.values[k];
      }
    }
    ws.values.resize(ws.support.size());
    for (std::size_t k = 0; k < ws.support.size(); ++k) {
      const std::uint32_t j = ws.support[k];
      ws.values[k] = ws.folded[j];
      ws.folded[j] = 0.0;
      ws.seen[j] = 0;
    }
    quad->base().apply_sparse_add(ws.support, ws.values, alpha / static_cast<double>(n), acc);
    return;
  }
  ws.terms.resize(n);
  for_each_index(n, exec, [&](std::size_t i) {
    ws.terms[i].clear();
    problem.hessian_sparse_terms(i, msgs[i].indices, msgs[i].values, 1.0, ws.terms[i]);
  });
  const double w = alpha / static_cast<double>(n);
  double* out = acc.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (const SparseTerm& term : ws.terms[i]) out[term.row] += w * term.value;
  }
}

}  // namespace commsim
