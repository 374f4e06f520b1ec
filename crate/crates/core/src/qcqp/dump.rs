//! JSON dump of an assembled problem for cross-checking elsewhere.
//!
//! ```text
//! {
//!   "tx_antennas": M, "common_streams": Qc, "power": Pt, "weights": [..],
//!   "slots": [{"block": "common" | "private:<k>", "cols": n, "offset": o}],
//!   "share_users": [k, ..],
//!   "objective": FORM,
//!   "constraints": [{"kind": "common:<k>" | "power" | "sign:<j>", "form": FORM}]
//! }
//! FORM = {
//!   "quadratic": [{"slot": s, "matrix": [[[re, im], ..], ..]}],   // row-major
//!   "linear":    [{"slot": s, "vector": [[re, im], ..]}],
//!   "shares": [..], "constant": r
//! }
//! ```
//!
//! A form reads `sum p_s^H A_s p_s - 2 Re sum a_s^H p_s + shares . x + r`
//! with `p_s = vec(P_s)` stacked column by column. Constraints are `<= 0`;
//! the power row is divided by Pt.

use std::path::Path;

use serde_json::{json, Value};

use super::{Block, ComplexForm, ConstraintKind, QcqpProblem};
use crate::error::Result;
use crate::linalg::{CMat, CVec};

fn matrix(a: &CMat) -> Value {
    Value::Array(
        (0..a.nrows())
            .map(|i| Value::Array((0..a.ncols()).map(|j| json!([a[(i, j)].re, a[(i, j)].im])).collect()))
            .collect(),
    )
}

fn vector(a: &CVec) -> Value {
    Value::Array(a.iter().map(|z| json!([z.re, z.im])).collect())
}

fn form(f: &ComplexForm) -> Value {
    json!({
        "quadratic": f.quadratic.iter().map(|(s, a)| json!({"slot": s, "matrix": matrix(a)})).collect::<Vec<_>>(),
        "linear": f.linear.iter().map(|(s, a)| json!({"slot": s, "vector": vector(a)})).collect::<Vec<_>>(),
        "shares": f.shares,
        "constant": f.constant,
    })
}

pub fn problem_to_json(prob: &QcqpProblem) -> Value {
    let slots: Vec<Value> = prob
        .layout
        .slots
        .iter()
        .map(|s| {
            let block = match s.block {
                Block::Common => "common".to_string(),
                Block::Private(k) => format!("private:{k}"),
            };
            json!({"block": block, "cols": s.cols, "offset": s.offset})
        })
        .collect();
    let constraints: Vec<Value> = prob
        .constraints
        .iter()
        .map(|(kind, f)| {
            let kind = match kind {
                ConstraintKind::Common(k) => format!("common:{k}"),
                ConstraintKind::Power => "power".to_string(),
                ConstraintKind::Sign(j) => format!("sign:{j}"),
            };
            json!({"kind": kind, "form": form(f)})
        })
        .collect();
    json!({
        "tx_antennas": prob.layout.tx_antennas,
        "common_streams": prob.common_streams,
        "power": prob.power,
        "weights": prob.weights,
        "slots": slots,
        "share_users": prob.layout.shares,
        "objective": form(&prob.objective),
        "constraints": constraints,
    })
}

pub fn write_problem(prob: &QcqpProblem, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(&problem_to_json(prob))?;
    std::fs::write(path, text)?;
    Ok(())
}
