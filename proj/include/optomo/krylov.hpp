#pragma once

// Matrix-free restarted GMRES used to accelerate transport source iteration.

#include <Eigen/Dense>

#include <cmath>
#include <vector>

namespace optomo {

struct SolveTranscript {
  int iterations = 0;
  double residual = 0.0;  ///< final relative residual
  std::vector<double> history;
  bool converged = false;
};

/// Solves A x = b for an operator given as `apply(x) -> A x`. `x` holds the initial guess.
template <class Apply>
SolveTranscript gmres(Apply&& apply, const Eigen::VectorXd& b, Eigen::VectorXd& x, double tol, int max_iter,
                      int restart) {
  SolveTranscript out;
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    x.setZero(b.size());
    out.converged = true;
    return out;
  }
  if (x.size() != b.size()) x.setZero(b.size());
  const Eigen::Index n = b.size();
  const int m = restart;
  Eigen::MatrixXd basis(n, m + 1);
  Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(m + 1, m);
  Eigen::VectorXd cs(m), sn(m), g(m + 1);

  Eigen::VectorXd r = b - apply(x);
  double rel = r.norm() / bnorm;
  out.history.push_back(rel);
  while (rel > tol && out.iterations < max_iter) {
    const double beta = r.norm();
    basis.col(0) = r / beta;
    g.setZero();
    g[0] = beta;
    hess.setZero();
    int k = 0;
    for (; k < m && out.iterations < max_iter; ++k) {
      Eigen::VectorXd w = apply(basis.col(k));
      // modified Gram-Schmidt, one reorthogonalisation pass
      for (int pass = 0; pass < 2; ++pass) {
        for (int i = 0; i <= k; ++i) {
          const double hik = basis.col(i).dot(w);
          hess(i, k) += hik;
          w -= hik * basis.col(i);
        }
      }
      hess(k + 1, k) = w.norm();
      if (hess(k + 1, k) > 0.0) basis.col(k + 1) = w / hess(k + 1, k);
      for (int i = 0; i < k; ++i) {
        const double t = cs[i] * hess(i, k) + sn[i] * hess(i + 1, k);
        hess(i + 1, k) = -sn[i] * hess(i, k) + cs[i] * hess(i + 1, k);
        hess(i, k) = t;
      }
      const double d = std::hypot(hess(k, k), hess(k + 1, k));
      cs[k] = hess(k, k) / d;
      sn[k] = hess(k + 1, k) / d;
      hess(k, k) = d;
      hess(k + 1, k) = 0.0;
      g[k + 1] = -sn[k] * g[k];
      g[k] = cs[k] * g[k];
      ++out.iterations;
      rel = std::abs(g[k + 1]) / bnorm;
      out.history.push_back(rel);
      if (rel <= tol) {
        ++k;
        break;
      }
    }
    const Eigen::VectorXd y =
        hess.topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(g.head(k));
    x += basis.leftCols(k) * y;
    r = b - apply(x);
    rel = r.norm() / bnorm;
    out.history.back() = rel;
  }
  out.residual = rel;
  out.converged = rel <= tol;
  return out;
}

}  // namespace optomo
