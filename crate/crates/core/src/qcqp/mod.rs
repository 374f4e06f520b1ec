//! The precoder subproblem: a convex QCQP over the precoders and the
//! (negated) common-rate shares.
//!
//! ```text
//! min   sum_k mu_k (x_k + xi_p,k(P))
//! s.t.  xi_c,k(P) <= sum_i x_i + Qc      for every user k
//!       tr(P P^H) <= Pt
//!       x_k <= 0
//! ```
//!
//! `xi` are the sample-averaged AWMSE quadratics from [`crate::wmmse`]. The
//! problem is built as complex forms over the precoder blocks, then lifted to
//! real quadratics on `[Re vec(P_b); Im vec(P_b)]` for the solver.

mod dump;
mod ipm;

pub use dump::{problem_to_json, write_problem};
pub use ipm::InteriorPoint;

use log::warn;

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, CVec, RMat, RVec};
use crate::rates::PrecoderSet;
use crate::wmmse::{SafBlocks, StreamBlock};

/// Default relative duality-gap tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Eigenvalue floor beyond which a non-PSD block is reported.
const PSD_WARN: f64 = 1e-8;

/// Which users carry a common-rate share variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShareLayout {
    /// Rate splitting: every user.
    All,
    /// No common stream (MU-MIMO). Common precoder and shares are dropped.
    Disabled,
    /// One user owns the whole common stream (two-user NOMA).
    Only(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Common,
    Private(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub block: Block,
    pub cols: usize,
    /// Offset of `Re vec(P_b)` in the real decision vector.
    pub offset: usize,
}

/// Map between precoders/shares and the real decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub tx_antennas: usize,
    pub common_cols: usize,
    pub private_cols: Vec<usize>,
    pub slots: Vec<Slot>,
    /// User index of each share variable, in vector order.
    pub shares: Vec<usize>,
}

impl Layout {
    pub fn new(m: usize, common_cols: usize, private_cols: &[usize], shares: ShareLayout) -> Self {
        let k = private_cols.len();
        let share_users: Vec<usize> = match shares {
            ShareLayout::All => (0..k).collect(),
            ShareLayout::Disabled => vec![],
            ShareLayout::Only(u) => vec![u],
        };
        let mut slots = Vec::new();
        let mut off = 0;
        let mut push = |block, cols: usize| {
            if cols > 0 {
                slots.push(Slot { block, cols, offset: off });
                off += 2 * m * cols;
            }
        };
        if !share_users.is_empty() {
            push(Block::Common, common_cols);
        }
        for (i, &q) in private_cols.iter().enumerate() {
            push(Block::Private(i), q);
        }
        Self {
            tx_antennas: m,
            common_cols,
            private_cols: private_cols.to_vec(),
            slots,
            shares: share_users,
        }
    }

    pub fn has_common(&self) -> bool {
        self.slots.iter().any(|s| s.block == Block::Common)
    }

    pub fn precoder_dim(&self) -> usize {
        self.slots.iter().map(|s| 2 * self.tx_antennas * s.cols).sum()
    }

    pub fn dim(&self) -> usize {
        self.precoder_dim() + self.shares.len()
    }

    pub fn slot_of(&self, block: Block) -> Option<usize> {
        self.slots.iter().position(|s| s.block == block)
    }

    fn block_matrix<'a>(&self, p: &'a PrecoderSet, block: Block) -> &'a CMat {
        match block {
            Block::Common => &p.common,
            Block::Private(i) => &p.private[i],
        }
    }

    /// Packs precoders and the per-user shares `x` (length K) into `z`.
    pub fn pack(&self, p: &PrecoderSet, x: &[f64]) -> RVec {
        let mut z = RVec::zeros(self.dim());
        for s in &self.slots {
            let v = linalg::vec(self.block_matrix(p, s.block));
            let n = v.len();
            for (j, zj) in v.iter().enumerate() {
                z[s.offset + j] = zj.re;
                z[s.offset + n + j] = zj.im;
            }
        }
        let base = self.precoder_dim();
        for (j, &u) in self.shares.iter().enumerate() {
            z[base + j] = x[u];
        }
        z
    }

    /// Inverse of [`Layout::pack`]; dropped blocks come back as zeros.
    pub fn unpack(&self, z: &RVec) -> (PrecoderSet, Vec<f64>) {
        let m = self.tx_antennas;
        let mut p = PrecoderSet::zeros(m, self.common_cols, &self.private_cols);
        for s in &self.slots {
            let n = m * s.cols;
            let v: Vec<_> = (0..n).map(|j| c(z[s.offset + j], z[s.offset + n + j])).collect();
            let mat = linalg::unvec(&v, m, s.cols);
            match s.block {
                Block::Common => p.common = mat,
                Block::Private(i) => p.private[i] = mat,
            }
        }
        let mut x = vec![0.0; self.private_cols.len()];
        let base = self.precoder_dim();
        for (j, &u) in self.shares.iter().enumerate() {
            x[u] = z[base + j];
        }
        (p, x)
    }
}

/// `sum_b p_b^H A_b p_b - 2 Re sum_b a_b^H p_b + sum_j s_j x_j + r`, with
/// `p_b = vec(P_b)` for the slot `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexForm {
    pub quadratic: Vec<(usize, CMat)>,
    pub linear: Vec<(usize, CVec)>,
    pub shares: Vec<f64>,
    pub constant: f64,
}

impl ComplexForm {
    fn new(num_shares: usize) -> Self {
        Self {
            quadratic: vec![],
            linear: vec![],
            shares: vec![0.0; num_shares],
            constant: 0.0,
        }
    }

    fn add_quadratic(&mut self, slot: usize, a: CMat) {
        match self.quadratic.iter_mut().find(|(s, _)| *s == slot) {
            Some((_, acc)) => *acc += a,
            None => self.quadratic.push((slot, a)),
        }
    }

    fn add_linear(&mut self, slot: usize, a: CVec) {
        match self.linear.iter_mut().find(|(s, _)| *s == slot) {
            Some((_, acc)) => *acc += a,
            None => self.linear.push((slot, a)),
        }
    }

    /// Evaluates the form at precoders `p` and per-user shares `x`.
    pub fn evaluate(&self, layout: &Layout, p: &PrecoderSet, x: &[f64]) -> f64 {
        let vecs: Vec<CVec> = layout
            .slots
            .iter()
            .map(|s| linalg::vec(layout.block_matrix(p, s.block)))
            .collect();
        let mut acc = self.constant;
        for (s, a) in &self.quadratic {
            acc += (vecs[*s].adjoint() * a * &vecs[*s])[(0, 0)].re;
        }
        for (s, a) in &self.linear {
            acc -= 2.0 * (a.adjoint() * &vecs[*s])[(0, 0)].re;
        }
        for (j, &u) in layout.shares.iter().enumerate() {
            acc += self.shares[j] * x[u];
        }
        acc
    }

    /// Real lift on the layout's decision vector.
    pub fn realify(&self, layout: &Layout) -> RealQuad {
        let n = layout.dim();
        let mut hess: Option<RMat> = None;
        for (s, a) in &self.quadratic {
            let off = layout.slots[*s].offset;
            let r = linalg::realify_hermitian(a) * 2.0;
            let h = hess.get_or_insert_with(|| RMat::zeros(n, n));
            let d = r.nrows();
            let mut view = h.view_mut((off, off), (d, d));
            view += &r;
        }
        let mut q = RVec::zeros(n);
        for (s, a) in &self.linear {
            let off = layout.slots[*s].offset;
            let len = a.len();
            for (j, aj) in a.iter().enumerate() {
                q[off + j] -= 2.0 * aj.re;
                q[off + len + j] -= 2.0 * aj.im;
            }
        }
        let base = layout.precoder_dim();
        for (j, &sj) in self.shares.iter().enumerate() {
            q[base + j] += sj;
        }
        RealQuad {
            hess,
            lin: q,
            constant: self.constant,
        }
    }
}

/// `f(z) = z^T H z / 2 + q^T z + r`; `hess = None` for affine functions.
#[derive(Debug, Clone, PartialEq)]
pub struct RealQuad {
    pub hess: Option<RMat>,
    pub lin: RVec,
    pub constant: f64,
}

impl RealQuad {
    pub fn value(&self, z: &RVec) -> f64 {
        let quad = self.hess.as_ref().map_or(0.0, |h| 0.5 * z.dot(&(h * z)));
        quad + self.lin.dot(z) + self.constant
    }

    pub fn gradient(&self, z: &RVec) -> RVec {
        match &self.hess {
            Some(h) => h * z + &self.lin,
            None => self.lin.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lin.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// Common-stream decodability at user k.
    Common(usize),
    Power,
    /// `x_j <= 0` for share variable j.
    Sign(usize),
}

/// Assembled subproblem, in complex and lifted real form.
#[derive(Debug, Clone, PartialEq)]
pub struct QcqpProblem {
    pub layout: Layout,
    pub weights: Vec<f64>,
    pub power: f64,
    pub common_streams: usize,
    pub objective: ComplexForm,
    pub constraints: Vec<(ConstraintKind, ComplexForm)>,
    pub real_objective: RealQuad,
    pub real_constraints: Vec<RealQuad>,
    /// Strictly feasible point when one was found from the warm start.
    pub start: Option<RVec>,
}

impl QcqpProblem {
    /// Objective at precoders `p` and per-user shares `x`.
    pub fn objective_at(&self, p: &PrecoderSet, x: &[f64]) -> f64 {
        self.objective.evaluate(&self.layout, p, x)
    }

    /// Constraint values (`<= 0` means satisfied), in problem order.
    pub fn constraints_at(&self, p: &PrecoderSet, x: &[f64]) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|(_, f)| f.evaluate(&self.layout, p, x))
            .collect()
    }

    pub fn max_violation(&self, p: &PrecoderSet, x: &[f64]) -> f64 {
        self.constraints_at(p, x).into_iter().fold(0.0, f64::max)
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }
}

fn floored_core(core: &CMat, what: &str) -> CMat {
    let (out, worst) = linalg::psd_floor(core);
    if worst < -PSD_WARN {
        warn!("{what} block not PSD (min eigenvalue {worst:.3e}); floored at 0");
    }
    out
}

fn linear_vec(b: &StreamBlock) -> CVec {
    linalg::vec(&b.linear)
}

/// Builds the subproblem from the STEP-1 blocks.
///
/// `warm` is the previous precoder iterate. It seeds the strictly feasible
/// start and decides whether the common stream is usable at all: when it
/// carries no common rate (all common AWMSEs at `Qc`), the common constraints
/// have no interior and the problem is built without them.
pub fn assemble(
    blocks: &SafBlocks,
    weights: &[f64],
    power: f64,
    shares: ShareLayout,
    warm: &PrecoderSet,
) -> Result<QcqpProblem> {
    let k = blocks.num_users();
    if weights.len() != k || warm.private.len() != k {
        return Err(Error::Dimension(format!(
            "{} weights and {} private precoders for {k} users",
            weights.len(),
            warm.private.len()
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidConfig("weights must be finite and nonnegative".into()));
    }
    if let ShareLayout::Only(u) = shares {
        if u >= k {
            return Err(Error::Dimension(format!("share user {u} out of range")));
        }
    }
    if !(power > 0.0) {
        return Err(Error::InvalidConfig("power must be positive".into()));
    }
    if !blocks.is_finite() || !warm.is_finite() {
        return Err(Error::NonFinite("QCQP inputs"));
    }
    let m = warm.tx_antennas();
    let qc = warm.common_streams();
    let private_cols = warm.private_streams();
    for (u, ub) in blocks.users.iter().enumerate() {
        if ub.common.core.nrows() != m || ub.private.core.nrows() != m {
            return Err(Error::Dimension(format!("user {u} block size differs from M = {m}")));
        }
    }

    let mut shares = if qc == 0 { ShareLayout::Disabled } else { shares };
    if shares != ShareLayout::Disabled {
        let slack = (0..k)
            .map(|u| blocks.common_awmse(u, warm) - qc as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        if !(slack < -1e-10) {
            shares = ShareLayout::Disabled;
        }
    }
    let layout = Layout::new(m, qc, &private_cols, shares);
    let ns = layout.shares.len();

    let private_cores: Vec<CMat> = blocks
        .users
        .iter()
        .enumerate()
        .map(|(u, b)| floored_core(&b.private.core, &format!("private[{u}]")))
        .collect();

    let mut objective = ComplexForm::new(ns);
    for (u, b) in blocks.users.iter().enumerate() {
        let mu = weights[u];
        if let Some(j) = layout.shares.iter().position(|&s| s == u) {
            objective.shares[j] += mu;
        }
        objective.constant += mu * b.private.constant;
        for (s, slot) in layout.slots.iter().enumerate() {
            if let Block::Private(i) = slot.block {
                objective.add_quadratic(s, linalg::kron_identity(&private_cores[u], slot.cols) * c(mu, 0.0));
                if i == u {
                    objective.add_linear(s, linear_vec(&b.private) * c(mu, 0.0));
                }
            }
        }
    }

    let mut constraints = Vec::new();
    if layout.has_common() {
        let cs = layout.slot_of(Block::Common).expect("common slot");
        for (u, b) in blocks.users.iter().enumerate() {
            let core = floored_core(&b.common.core, &format!("common[{u}]"));
            let mut f = ComplexForm::new(ns);
            for (s, slot) in layout.slots.iter().enumerate() {
                f.add_quadratic(s, linalg::kron_identity(&core, slot.cols));
            }
            f.add_linear(cs, linear_vec(&b.common));
            f.shares.iter_mut().for_each(|x| *x = -1.0);
            f.constant = b.common.constant - qc as f64;
            constraints.push((ConstraintKind::Common(u), f));
        }
    }
    // Power is scaled by 1/Pt so its values are O(1) like the others.
    let mut pw = ComplexForm::new(ns);
    for (s, slot) in layout.slots.iter().enumerate() {
        pw.add_quadratic(s, linalg::identity(m * slot.cols) * c(1.0 / power, 0.0));
    }
    pw.constant = -1.0;
    constraints.push((ConstraintKind::Power, pw));
    for j in 0..ns {
        let mut f = ComplexForm::new(ns);
        f.shares[j] = 1.0;
        constraints.push((ConstraintKind::Sign(j), f));
    }

    let real_objective = objective.realify(&layout);
    let real_constraints: Vec<RealQuad> = constraints.iter().map(|(_, f)| f.realify(&layout)).collect();
    let mut prob = QcqpProblem {
        layout,
        weights: weights.to_vec(),
        power,
        common_streams: qc,
        objective,
        constraints,
        real_objective,
        real_constraints,
        start: None,
    };
    prob.start = warm_start(&prob, warm);
    Ok(prob)
}

/// Strictly feasible point near `warm`: power pulled just inside the budget,
/// shares at half of the tightest common-constraint slack.
fn warm_start(prob: &QcqpProblem, warm: &PrecoderSet) -> Option<RVec> {
    let cur = warm.power();
    let target = prob.power * (1.0 - 1e-3);
    let p = if cur > target { warm.scaled((target / cur).sqrt()) } else { warm.clone() };
    let k = p.private.len();
    let zeros = vec![0.0; k];
    let ns = prob.layout.shares.len();
    let mut x = vec![0.0; k];
    if ns > 0 {
        let worst = prob
            .constraints
            .iter()
            .filter(|(kind, _)| matches!(kind, ConstraintKind::Common(_)))
            .map(|(_, f)| f.evaluate(&prob.layout, &p, &zeros))
            .fold(f64::NEG_INFINITY, f64::max);
        if !(worst < 0.0) {
            return None;
        }
        for &u in &prob.layout.shares {
            x[u] = worst / (2.0 * ns as f64);
        }
    }
    let z = prob.layout.pack(&p, &x);
    if prob.real_constraints.iter().all(|f| f.value(&z) < 0.0) {
        Some(z)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcqpSolution {
    pub precoders: PrecoderSet,
    /// Per-user share variables `x_k <= 0` (zero for users without one).
    pub xhat: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Surrogate duality gap at the returned point.
    pub gap: f64,
    /// Largest constraint value at the returned point (`<= 0` is feasible).
    pub max_residual: f64,
}

/// Pluggable solver for the assembled subproblem.
pub trait QcqpSolver {
    fn solve(&self, prob: &QcqpProblem) -> Result<QcqpSolution>;
}

/// Solves with the built-in interior-point method.
pub fn solve(prob: &QcqpProblem, tol: f64, max_iter: usize) -> Result<QcqpSolution> {
    InteriorPoint {
        tol,
        max_iter,
        ..InteriorPoint::default()
    }
    .solve(prob)
}
