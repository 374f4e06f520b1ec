//! Barrier interior-point method for convex quadratic constraints.
//!
//! Works directly on `f_i(z) = z^T H_i z / 2 + q_i^T z + r_i <= 0` with the
//! log barrier `t f_0(z) - sum ln(-f_i(z))`: Newton centering with a
//! backtracking line search, then `t <- mu t` until the surrogate gap `m / t`
//! is below tolerance. A phase-I
//! problem (`min s` over `f_i(z) <= s`) supplies a strictly feasible start
//! when the caller has none.

use log::debug;

use super::{QcqpProblem, QcqpSolution, QcqpSolver, RealQuad, SolveStatus, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::linalg::{self, RMat, RVec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteriorPoint {
    /// Relative surrogate-gap tolerance.
    pub tol: f64,
    /// Cap on Newton steps.
    pub max_iter: usize,
    /// Barrier growth factor.
    pub mu: f64,
    /// Smallest relative gap assumed of a warm start.
    pub warm_gap: f64,
}

impl Default for InteriorPoint {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            mu: 30.0,
            warm_gap: 1e-2,
        }
    }
}

const ALPHA: f64 = 0.01;
const BETA: f64 = 0.5;
/// Centering stops when half the squared Newton decrement falls below this.
const CENTER_TOL: f64 = 1e-8;

struct Outcome {
    z: RVec,
    iterations: usize,
    gap: f64,
    converged: bool,
}

fn barrier(obj: &RealQuad, cons: &[RealQuad], z: &RVec, t: f64) -> Option<f64> {
    let mut acc = t * obj.value(z);
    for c in cons {
        let f = c.value(z);
        if !(f < 0.0) {
            return None;
        }
        acc -= (-f).ln();
    }
    Some(acc)
}

impl InteriorPoint {
    fn run(&self, obj: &RealQuad, cons: &[RealQuad], z0: RVec, stop_below: Option<f64>) -> Result<Outcome> {
        let n = z0.len();
        let m = cons.len() as f64;
        let mut z = z0;
        if cons.iter().any(|c| !(c.value(&z) < 0.0)) {
            return Err(Error::Solver("interior-point start is not strictly feasible".into()));
        }
        // Start on the point of the central path closest to z: t minimizing
        // |t g_0 + grad phi|.
        let g0 = obj.gradient(&z);
        let mut gphi = RVec::zeros(n);
        for c in cons {
            gphi.axpy(1.0 / -c.value(&z), &c.gradient(&z), 1.0);
        }
        let scale = obj.value(&z).abs().max(1.0);
        let t_floor = m / scale;
        let t_cap = m / (self.tol * scale);
        let mut t = -g0.dot(&gphi) / g0.norm_squared();
        if !(t.is_finite() && t > t_floor) {
            t = t_floor;
        }
        t = t.min(t_cap).min(m / (self.warm_gap * scale));

        let mut newton = 0;
        loop {
            // Centering.
            loop {
                if stop_below.is_some_and(|b| obj.value(&z) < b) {
                    return Ok(Outcome { z, iterations: newton, gap: m / t, converged: true });
                }
                if newton >= self.max_iter {
                    return Ok(Outcome { z, iterations: newton, gap: m / t, converged: false });
                }
                let mut h = match &obj.hess {
                    Some(h0) => h0 * t,
                    None => RMat::zeros(n, n),
                };
                let mut grad = obj.gradient(&z) * t;
                for c in cons {
                    let f = c.value(&z);
                    let g = c.gradient(&z);
                    if let Some(hc) = &c.hess {
                        h += hc * (1.0 / -f);
                    }
                    h.ger(1.0 / (f * f), &g, &g, 1.0);
                    grad.axpy(1.0 / -f, &g, 1.0);
                }
                let dz = linalg::solve_spd_regularized(&h, &(-&grad))
                    .ok_or_else(|| Error::Solver("Newton system could not be factorized".into()))?;
                newton += 1;
                let slope = grad.dot(&dz);
                let f_cur = barrier(obj, cons, &z, t).expect("iterate stays interior");
                // Below ~1e-13 |t f0| the decrement is rounding noise.
                if -slope / 2.0 <= CENTER_TOL.max(1e-13 * f_cur.abs()) {
                    break;
                }
                let mut s = 1.0;
                let mut moved = false;
                while s > 1e-14 {
                    let zt = &z + &dz * s;
                    if let Some(ft) = barrier(obj, cons, &zt, t) {
                        if ft <= f_cur + ALPHA * s * slope {
                            moved = ft < f_cur;
                            z = zt;
                            break;
                        }
                    }
                    s *= BETA;
                }
                if !moved {
                    // Rounding floor on the barrier value; the point is centered
                    // as well as it can be.
                    debug!("centering stalled at t = {t:.3e}");
                    break;
                }
            }
            let gap = m / t;
            if t >= t_cap || gap <= self.tol * obj.value(&z).abs().max(1.0) {
                return Ok(Outcome { z, iterations: newton, gap, converged: true });
            }
            t = (t * self.mu).min(t_cap);
        }
    }

    /// Finds a strictly feasible point by minimizing the largest constraint.
    fn phase_one(&self, cons: &[RealQuad], z0: &RVec) -> Result<Option<RVec>> {
        let n = z0.len();
        let lift = |q: &RealQuad| {
            let hess = q.hess.as_ref().map(|h| {
                let mut big = RMat::zeros(n + 1, n + 1);
                big.view_mut((0, 0), (n, n)).copy_from(h);
                big
            });
            let mut lin = RVec::zeros(n + 1);
            lin.rows_mut(0, n).copy_from(&q.lin);
            lin[n] = -1.0;
            RealQuad {
                hess,
                lin,
                constant: q.constant,
            }
        };
        let lifted: Vec<RealQuad> = cons.iter().map(lift).collect();
        let mut obj_lin = RVec::zeros(n + 1);
        obj_lin[n] = 1.0;
        let obj = RealQuad {
            hess: None,
            lin: obj_lin,
            constant: 0.0,
        };
        let worst = cons.iter().map(|c| c.value(z0)).fold(f64::NEG_INFINITY, f64::max);
        let mut start = RVec::zeros(n + 1);
        start.rows_mut(0, n).copy_from(z0);
        start[n] = worst + 1.0;
        let out = self.run(&obj, &lifted, start, Some(-1e-3))?;
        if out.z[n] < 0.0 {
            Ok(Some(out.z.rows(0, n).into_owned()))
        } else {
            Ok(None)
        }
    }
}

impl QcqpSolver for InteriorPoint {
    fn solve(&self, prob: &QcqpProblem) -> Result<QcqpSolution> {
        let cons = &prob.real_constraints;
        let start = match &prob.start {
            Some(z) if cons.iter().all(|c| c.value(z) < 0.0) => Some(z.clone()),
            _ => {
                let z0 = RVec::zeros(prob.dim());
                self.phase_one(cons, &z0)?
            }
        };
        let Some(z0) = start else {
            let (precoders, xhat) = prob.layout.unpack(&RVec::zeros(prob.dim()));
            return Ok(QcqpSolution {
                precoders,
                xhat,
                objective: f64::NAN,
                status: SolveStatus::Infeasible,
                iterations: 0,
                gap: f64::INFINITY,
                max_residual: f64::INFINITY,
            });
        };
        let out = self.run(&prob.real_objective, cons, z0, None)?;
        let (mut precoders, xhat) = prob.layout.unpack(&out.z);
        let pw = precoders.power();
        if pw > prob.power && pw <= prob.power * (1.0 + 1e-6) {
            precoders = precoders.normalized_to(prob.power);
        }
        let objective = prob.objective_at(&precoders, &xhat);
        let max_residual = prob.max_violation(&precoders, &xhat);
        Ok(QcqpSolution {
            precoders,
            xhat,
            objective,
            status: if out.converged { SolveStatus::Converged } else { SolveStatus::MaxIter },
            iterations: out.iterations,
            gap: out.gap,
            max_residual,
        })
    }
}
