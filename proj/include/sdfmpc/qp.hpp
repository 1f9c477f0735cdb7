#pragma once

// Dense convex QP solver: Mehrotra predictor-corrector interior point on the
// normal equations. Sized for the condensed receding-horizon subproblem
// (~150 variables, ~230 inequality rows), where one LDLT factorization per
// iteration is cheaper than maintaining an active set.
//
//   minimize   0.5 x'Px + q'x
//   subject to Gx <= h,  lb <= x <= ub
//
// Box bounds are kept out of G: their rows only touch the normal-equation
// diagonal, so they cost O(n) per iteration instead of a rank-1 update each.

#include "sdfmpc/core.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace sdfmpc {

enum class QpStatus { kConverged, kMaxIters, kInfeasible };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::kConverged: return "converged";
    case QpStatus::kMaxIters: return "max-iters";
    case QpStatus::kInfeasible: return "infeasible";
  }
  return "unknown";
}

struct QpProblem {
  MatX P;      // n x n, symmetric positive semidefinite (regularized upstream)
  VecX q;      // n
  MatX G;      // m x n general inequality rows (m may be 0)
  VecX h;      // m
  VecX lb, ub; // n, +-infinity where absent
};

struct QpConfig {
  int max_iters = 50;
  double tol = 1e-8;         // stop when the KKT residual reaches this
  double tol_accept = 1e-6;  // report convergence if at least this was reached
};

struct QpSolution {
  VecX x;
  VecX lambda;  // multipliers of the general rows
  QpStatus status = QpStatus::kMaxIters;
  double kkt = std::numeric_limits<double>::infinity();
  int iters = 0;
};

namespace detail {

// Largest alpha in (0, 1] keeping v + alpha*dv strictly positive, with the
// standard 0.99 fraction-to-boundary backoff applied by the caller.
inline double positive_step(const VecX& v, const VecX& dv) {
  double a = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv[i] < 0.0) a = std::min(a, -v[i] / dv[i]);
  return a;
}

}  // namespace detail

inline QpSolution solve_qp(const QpProblem& qp, const QpConfig& cfg = {},
                           const VecX* x_warm = nullptr) {
  const Eigen::Index n = qp.P.rows();
  const Eigen::Index m = qp.G.rows();
  if (qp.P.cols() != n || qp.q.size() != n || qp.lb.size() != n || qp.ub.size() != n)
    throw std::invalid_argument("solve_qp: inconsistent variable dimensions");
  if (qp.G.cols() != (m ? n : qp.G.cols()) || qp.h.size() != m)
    throw std::invalid_argument("solve_qp: inconsistent constraint dimensions");

  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<Eigen::Index> iu, il;  // variables with a finite upper / lower bound
  for (Eigen::Index i = 0; i < n; ++i) {
    if (qp.ub[i] < kInf) iu.push_back(i);
    if (qp.lb[i] > -kInf) il.push_back(i);
    if (qp.lb[i] > qp.ub[i]) throw std::invalid_argument("solve_qp: crossed bounds");
  }
  const Eigen::Index nu = static_cast<Eigen::Index>(iu.size());
  const Eigen::Index nl = static_cast<Eigen::Index>(il.size());
  const Eigen::Index mt = m + nu + nl;  // total inequality count

  QpSolution sol;
  sol.x = x_warm ? *x_warm : VecX::Zero(n);
  sol.lambda = VecX::Zero(m);

  if (mt == 0) {
    sol.x = qp.P.ldlt().solve(-qp.q);
    sol.kkt = (qp.P * sol.x + qp.q).cwiseAbs().maxCoeff();
    sol.status = sol.kkt <= cfg.tol_accept ? QpStatus::kConverged : QpStatus::kMaxIters;
    return sol;
  }

  // Strict interior start; slack rows open at their residual, tight rows at a
  // floor, multipliers centered so every product s*lambda begins near 1.
  for (Eigen::Index i = 0; i < n; ++i) {
    if (qp.lb[i] > -kInf && qp.ub[i] < kInf) {
      const double margin = std::min(0.1, 0.25 * (qp.ub[i] - qp.lb[i]));
      sol.x[i] = std::clamp(sol.x[i], qp.lb[i] + margin, qp.ub[i] - margin);
    } else if (qp.lb[i] > -kInf) {
      sol.x[i] = std::max(sol.x[i], qp.lb[i] + 0.1);
    } else if (qp.ub[i] < kInf) {
      sol.x[i] = std::min(sol.x[i], qp.ub[i] - 0.1);
    }
  }

  VecX s(mt), lam(mt);
  {
    VecX gx = m ? VecX(qp.G * sol.x) : VecX();
    for (Eigen::Index i = 0; i < m; ++i) s[i] = std::max(qp.h[i] - gx[i], 0.5);
    for (Eigen::Index k = 0; k < nu; ++k) s[m + k] = std::max(qp.ub[iu[k]] - sol.x[iu[k]], 1e-3);
    for (Eigen::Index k = 0; k < nl; ++k) s[m + nu + k] = std::max(sol.x[il[k]] - qp.lb[il[k]], 1e-3);
    for (Eigen::Index i = 0; i < mt; ++i) lam[i] = std::min(1.0 / s[i], 1e3);
  }

  VecX r_d(n), r_p(mt), d(mt), rhs(n), dx(n), ds(mt), dlam(mt), rc(mt), rcs(mt);
  MatX M(n, n), gw;
  Eigen::LDLT<MatX> ldlt;

  auto assemble_residuals = [&]() {
    r_d = qp.P * sol.x + qp.q;
    if (m) r_d.noalias() += qp.G.transpose() * lam.head(m);
    for (Eigen::Index k = 0; k < nu; ++k) r_d[iu[k]] += lam[m + k];
    for (Eigen::Index k = 0; k < nl; ++k) r_d[il[k]] -= lam[m + nu + k];
    if (m) r_p.head(m) = qp.G * sol.x + s.head(m) - qp.h;
    for (Eigen::Index k = 0; k < nu; ++k) r_p[m + k] = sol.x[iu[k]] + s[m + k] - qp.ub[iu[k]];
    for (Eigen::Index k = 0; k < nl; ++k)
      r_p[m + nu + k] = -sol.x[il[k]] + s[m + nu + k] + qp.lb[il[k]];
  };

  // Maps a complementarity target rc into a variable step via the normal
  // equations: (P + G'DG) dx = -r_d + G'S^{-1}rc - G'D r_p, with
  // ds = -r_p - G dx and dlam = -S^{-1}rc - D ds.
  // rc_in must not alias rcs: it is re-read after the scaled form is built.
  auto solve_direction = [&](const VecX& rc_in) {
    rhs = -r_d;
    for (Eigen::Index i = 0; i < mt; ++i) rcs[i] = rc_in[i] / s[i] - d[i] * r_p[i];
    if (m) rhs.noalias() += qp.G.transpose() * rcs.head(m);
    for (Eigen::Index k = 0; k < nu; ++k) rhs[iu[k]] += rcs[m + k];
    for (Eigen::Index k = 0; k < nl; ++k) rhs[il[k]] -= rcs[m + nu + k];
    dx = ldlt.solve(rhs);
    if (m) ds.head(m) = -r_p.head(m) - qp.G * dx;
    for (Eigen::Index k = 0; k < nu; ++k) ds[m + k] = -r_p[m + k] - dx[iu[k]];
    for (Eigen::Index k = 0; k < nl; ++k) ds[m + nu + k] = -r_p[m + nu + k] + dx[il[k]];
    for (Eigen::Index i = 0; i < mt; ++i) dlam[i] = -rc_in[i] / s[i] - d[i] * ds[i];
  };

  double mu = s.dot(lam) / static_cast<double>(mt);
  for (sol.iters = 0; sol.iters < cfg.max_iters; ++sol.iters) {
    assemble_residuals();
    mu = s.dot(lam) / static_cast<double>(mt);
    const double comp = (s.array() * lam.array()).abs().maxCoeff();
    sol.kkt = std::max({r_d.cwiseAbs().maxCoeff(), r_p.cwiseAbs().maxCoeff(), comp});
    if (sol.kkt <= cfg.tol) break;
    if (lam.maxCoeff() > 1e12) break;  // dual blowup: no feasible point

    for (Eigen::Index i = 0; i < mt; ++i) d[i] = std::min(lam[i] / std::max(s[i], 1e-14), 1e14);

    M = qp.P;
    if (m) {
      gw = d.head(m).asDiagonal() * qp.G;
      M.noalias() += qp.G.transpose() * gw;
    }
    for (Eigen::Index k = 0; k < nu; ++k) M(iu[k], iu[k]) += d[m + k];
    for (Eigen::Index k = 0; k < nl; ++k) M(il[k], il[k]) += d[m + nu + k];
    ldlt.compute(M);

    // Affine scaling step, then Mehrotra's corrector against sigma*mu.
    rc = s.array() * lam.array();
    solve_direction(rc);
    const double a_aff =
        std::min(detail::positive_step(s, ds), detail::positive_step(lam, dlam));
    const double mu_aff =
        (s + a_aff * ds).dot(lam + a_aff * dlam) / static_cast<double>(mt);
    const double sigma = std::pow(mu_aff / mu, 3.0);

    rc = s.array() * lam.array() + ds.array() * dlam.array() - sigma * mu;
    solve_direction(rc);
    const double alpha =
        std::min(1.0, 0.99 * std::min(detail::positive_step(s, ds),
                                      detail::positive_step(lam, dlam)));
    if (alpha < 1e-12) break;  // stalled

    sol.x += alpha * dx;
    s += alpha * ds;
    lam += alpha * dlam;
  }

  assemble_residuals();
  const double comp = (s.array() * lam.array()).abs().maxCoeff();
  const double primal = r_p.cwiseAbs().maxCoeff();
  sol.kkt = std::max({r_d.cwiseAbs().maxCoeff(), primal, comp});
  sol.lambda = lam.head(m);
  if (sol.kkt <= cfg.tol_accept) {
    sol.status = QpStatus::kConverged;
  } else if (primal > 1e-5 && (comp <= 1e-7 || lam.maxCoeff() > 1e10)) {
    // Complementarity closed but a residual row refuses to: the linearized
    // feasible set is empty (hard bounds conflict).
    sol.status = QpStatus::kInfeasible;
  } else {
    sol.status = QpStatus::kMaxIters;
  }
  return sol;
}

}  // namespace sdfmpc
