//! Sparse linear / convex-quadratic model container with primal-dual solves
//! and interchange-format export.
//!
//! The quadratic objective is assembled exclusively from weighted squared
//! affine terms, so it is positive semidefinite by construction. Models parsed
//! back from MPS/LP text carry the expanded `1/2 x'Qx` triplets instead.

mod duality;
mod lptext;
mod mps;
mod solve;

pub use duality::{check_duality, DualityReport};
pub use lptext::{parse_lp_text, write_lp_text};
pub use mps::{parse_mps, write_mps};
pub use solve::{solve_lp, solve_qp};

/// Interchange formats understood by [`export_model`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Mps,
    LpText,
}

/// Render the model in the chosen format; output ordering is deterministic.
pub fn export_model(model: &LinearModel, format: ExportFormat) -> Result<String, LpError> {
    match format {
        ExportFormat::Mps => write_mps(model),
        ExportFormat::LpText => write_lp_text(model),
    }
}

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("bad variable name `{0}`: must be nonempty, without whitespace/comma/colon")]
    BadName(String),
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("variable bounds inverted: {name} has lower {lower} > upper {upper}")]
    BadBounds { name: String, lower: f64, upper: f64 },
    #[error("squared-term weight must be >= 0, got {0}")]
    NegativeSquareWeight(f64),
    #[error("model `{model}` contains integer variables; relax or fix them first")]
    HasBinaries { model: String },
    #[error("model `{model}` has a quadratic objective; use solve_qp")]
    HasQuadratic { model: String },
    #[error("numeric entry not finite in {0}")]
    NotFinite(String),
    #[error("solver failed: {0}")]
    Backend(String),
    #[error("export failed: {0}")]
    Export(String),
    #[error("parse failed at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Column {
    name: String,
    lower: f64,
    upper: f64,
    obj: f64,
    kind: VarKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Row {
    name: String,
    sense: Sense,
    rhs: f64,
}

/// `weight * (sum(coef * var) + constant)^2` added to the objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqTerm {
    pub weight: f64,
    pub lin: Vec<(VarId, f64)>,
    pub constant: f64,
}

/// Objective sense is always minimization; the objective reads
/// `c'x + 1/2 x'Qx + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub name: String,
    cols: Vec<Column>,
    rows: Vec<Row>,
    entries: Vec<(usize, usize, f64)>,
    sq_terms: Vec<SqTerm>,
    quad_triplets: Vec<(usize, usize, f64)>,
    obj_offset: f64,
}

fn name_ok(name: &str) -> bool {
    !name.is_empty()
        && !name
            .chars()
            .any(|c| c.is_whitespace() || c == ',' || c == ':')
}

impl LinearModel {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            cols: Vec::new(),
            rows: Vec::new(),
            entries: Vec::new(),
            sq_terms: Vec::new(),
            quad_triplets: Vec::new(),
            obj_offset: 0.0,
        }
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
    ) -> Result<VarId, LpError> {
        let name = name.into();
        if !name_ok(&name) {
            return Err(LpError::BadName(name));
        }
        if lower > upper {
            return Err(LpError::BadBounds { name, lower, upper });
        }
        if lower.is_nan() || upper.is_nan() {
            return Err(LpError::NotFinite(format!("bounds of {name}")));
        }
        self.cols.push(Column {
            name,
            lower,
            upper,
            obj: 0.0,
            kind: VarKind::Continuous,
        });
        Ok(VarId(self.cols.len() - 1))
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> Result<VarId, LpError> {
        let id = self.add_var(name, 0.0, 1.0)?;
        self.cols[id.0].kind = VarKind::Binary;
        Ok(id)
    }

    pub fn set_obj_coef(&mut self, var: VarId, coef: f64) {
        self.cols[var.0].obj = coef;
    }

    pub fn add_obj_offset(&mut self, offset: f64) {
        self.obj_offset += offset;
    }

    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        sense: Sense,
        rhs: f64,
        terms: &[(VarId, f64)],
    ) -> Result<RowId, LpError> {
        let name = name.into();
        if !name_ok(&name) {
            return Err(LpError::BadName(name));
        }
        if rhs.is_nan() {
            return Err(LpError::NotFinite(format!("rhs of {name}")));
        }
        let row = self.rows.len();
        self.rows.push(Row { name, sense, rhs });
        for (v, c) in terms {
            if !c.is_finite() {
                return Err(LpError::NotFinite(format!("coefficient in row {row}")));
            }
            self.entries.push((row, v.0, *c));
        }
        Ok(RowId(row))
    }

    /// Add `weight * (sum(coef * var) + constant)^2` to the objective.
    pub fn add_sq_term(
        &mut self,
        weight: f64,
        lin: Vec<(VarId, f64)>,
        constant: f64,
    ) -> Result<(), LpError> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(LpError::NegativeSquareWeight(weight));
        }
        if weight == 0.0 {
            return Ok(());
        }
        // Merge repeated variables so the a a' expansion stays exact.
        let mut lin = lin;
        lin.sort_by_key(|(v, _)| v.0);
        let mut merged: Vec<(VarId, f64)> = Vec::with_capacity(lin.len());
        for (v, a) in lin {
            match merged.last_mut() {
                Some((lv, la)) if *lv == v => *la += a,
                _ => merged.push((v, a)),
            }
        }
        self.sq_terms.push(SqTerm {
            weight,
            lin: merged,
            constant,
        });
        Ok(())
    }

    /// Raw `1/2 x'Qx` triplets (upper triangle), used by the format parsers.
    pub fn add_quad_triplet(&mut self, i: VarId, j: VarId, value: f64) {
        let (a, b) = if i.0 <= j.0 { (i.0, j.0) } else { (j.0, i.0) };
        self.quad_triplets.push((a, b, value));
    }

    pub fn num_vars(&self) -> usize {
        self.cols.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn var_name(&self, v: VarId) -> &str {
        &self.cols[v.0].name
    }

    pub fn var_bounds(&self, v: VarId) -> (f64, f64) {
        (self.cols[v.0].lower, self.cols[v.0].upper)
    }

    pub fn var_kind(&self, v: VarId) -> VarKind {
        self.cols[v.0].kind
    }

    pub fn set_var_bounds(&mut self, v: VarId, lower: f64, upper: f64) {
        self.cols[v.0].lower = lower;
        self.cols[v.0].upper = upper;
    }

    /// Pin a variable to an exact value.
    pub fn pin_var(&mut self, v: VarId, value: f64) {
        self.set_var_bounds(v, value, value);
    }

    pub fn row_name(&self, r: RowId) -> &str {
        &self.rows[r.0].name
    }

    pub fn row_sense(&self, r: RowId) -> Sense {
        self.rows[r.0].sense
    }

    pub fn row_rhs(&self, r: RowId) -> f64 {
        self.rows[r.0].rhs
    }

    pub fn set_row_sense(&mut self, r: RowId, sense: Sense) {
        self.rows[r.0].sense = sense;
    }

    pub fn obj_coef(&self, v: VarId) -> f64 {
        self.cols[v.0].obj
    }

    pub fn obj_offset(&self) -> f64 {
        self.obj_offset
    }

    pub fn has_binaries(&self) -> bool {
        self.cols.iter().any(|c| c.kind == VarKind::Binary)
    }

    pub fn has_quadratic(&self) -> bool {
        !self.sq_terms.is_empty() || !self.quad_triplets.is_empty()
    }

    pub fn sq_terms(&self) -> &[SqTerm] {
        &self.sq_terms
    }

    /// Constraint matrix as merged, column-sorted rows.
    pub fn matrix_rows(&self) -> Vec<Vec<(usize, f64)>> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.rows.len()];
        for &(r, c, v) in &self.entries {
            rows[r].push((c, v));
        }
        for row in &mut rows {
            row.sort_by_key(|(c, _)| *c);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for &(c, v) in row.iter() {
                match merged.last_mut() {
                    Some((lc, lv)) if *lc == c => *lv += v,
                    _ => merged.push((c, v)),
                }
            }
            merged.retain(|(_, v)| *v != 0.0);
            *row = merged;
        }
        rows
    }

    /// Effective linear objective and constant after folding squared terms:
    /// `w (a'x + k)^2` contributes `2wk a` to the gradient and `w k^2` to the
    /// constant.
    pub fn canonical_linear(&self) -> (Vec<f64>, f64) {
        let mut c: Vec<f64> = self.cols.iter().map(|col| col.obj).collect();
        let mut offset = self.obj_offset;
        for term in &self.sq_terms {
            for &(v, a) in &term.lin {
                c[v.0] += 2.0 * term.weight * term.constant * a;
            }
            offset += term.weight * term.constant * term.constant;
        }
        (c, offset)
    }

    /// Upper-triangular triplets of `Q` (objective term `1/2 x'Qx`), merged
    /// and sorted. Squared terms contribute `2 w a a'`.
    pub fn canonical_quad(&self) -> Vec<(usize, usize, f64)> {
        let mut trips: Vec<(usize, usize, f64)> = self.quad_triplets.clone();
        for term in &self.sq_terms {
            // w (a'x)^2 contributes Q = 2w a a'; each unordered off-diagonal
            // pair appears once in the upper triangle with the combined 2w a_i a_j
            // from both symmetric positions, matching the 1/2 x'Qx convention.
            for (idx, &(vi, ai)) in term.lin.iter().enumerate() {
                for &(vj, aj) in &term.lin[idx..] {
                    let (a, b) = if vi.0 <= vj.0 { (vi.0, vj.0) } else { (vj.0, vi.0) };
                    trips.push((a, b, 2.0 * term.weight * ai * aj));
                }
            }
        }
        trips.sort_by_key(|&(i, j, _)| (i, j));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(trips.len());
        for (i, j, v) in trips {
            match merged.last_mut() {
                Some((li, lj, lv)) if *li == i && *lj == j => *lv += v,
                _ => merged.push((i, j, v)),
            }
        }
        merged.retain(|&(_, _, v)| v != 0.0);
        merged
    }

    /// Full objective value at `x`.
    pub fn objective_at(&self, x: &[f64]) -> f64 {
        let (c, offset) = self.canonical_linear();
        let mut obj: f64 = offset + c.iter().zip(x).map(|(ci, xi)| ci * xi).sum::<f64>();
        for &(i, j, q) in &self.canonical_quad() {
            if i == j {
                obj += 0.5 * q * x[i] * x[i];
            } else {
                obj += q * x[i] * x[j];
            }
        }
        obj
    }

    /// Row activity `a_i' x`.
    pub fn row_activity(&self, rows: &[Vec<(usize, f64)>], r: usize, x: &[f64]) -> f64 {
        rows[r].iter().map(|&(c, v)| v * x[c]).sum()
    }

    /// Copy with all binaries fixed to the given values and downgraded to
    /// continuous, so the convex solvers accept the model.
    pub fn with_binaries_fixed(&self, assignment: &[(VarId, f64)]) -> LinearModel {
        let mut m = self.clone();
        for col in &mut m.cols {
            if col.kind == VarKind::Binary {
                col.kind = VarKind::Continuous;
            }
        }
        for &(v, val) in assignment {
            m.set_var_bounds(v, val, val);
        }
        m
    }

    pub fn var_names(&self) -> impl Iterator<Item = &str> {
        self.cols.iter().map(|c| c.name.as_str())
    }

    pub fn row_names(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|r| r.name.as_str())
    }
}

/// Structural identity on the canonical model data: dimensions, names, bounds,
/// kinds, row senses/rhs, merged matrix, folded objective, and `Q`. Returns a
/// description of the first difference.
pub fn models_identical(a: &LinearModel, b: &LinearModel) -> Result<(), String> {
    if a.name != b.name {
        return Err(format!("model names differ: `{}` vs `{}`", a.name, b.name));
    }
    if a.num_vars() != b.num_vars() {
        return Err(format!("var counts differ: {} vs {}", a.num_vars(), b.num_vars()));
    }
    if a.num_rows() != b.num_rows() {
        return Err(format!("row counts differ: {} vs {}", a.num_rows(), b.num_rows()));
    }
    for i in 0..a.num_vars() {
        let (ca, cb) = (&a.cols[i], &b.cols[i]);
        if ca.name != cb.name {
            return Err(format!("var {i} name: `{}` vs `{}`", ca.name, cb.name));
        }
        if ca.lower != cb.lower || ca.upper != cb.upper {
            return Err(format!("var `{}` bounds differ", ca.name));
        }
        if ca.kind != cb.kind {
            return Err(format!("var `{}` kind differs", ca.name));
        }
    }
    for i in 0..a.num_rows() {
        let (ra, rb) = (&a.rows[i], &b.rows[i]);
        if ra.name != rb.name || ra.sense != rb.sense || ra.rhs != rb.rhs {
            return Err(format!("row {i} (`{}`) differs", ra.name));
        }
    }
    if a.matrix_rows() != b.matrix_rows() {
        return Err("constraint matrices differ".into());
    }
    let (la, oa) = a.canonical_linear();
    let (lb, ob) = b.canonical_linear();
    if la != lb {
        return Err("linear objectives differ".into());
    }
    if oa != ob {
        return Err(format!("objective offsets differ: {oa} vs {ob}"));
    }
    if a.canonical_quad() != b.canonical_quad() {
        return Err("quadratic objectives differ".into());
    }
    Ok(())
}

/// Solver tolerances; the bilevel layer reuses these when it checks KKT
/// residuals of its own assemblies.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ToleranceConfig {
    pub feas_tol: f64,
    pub comp_tol: f64,
    pub duality_tol: f64,
    pub max_iter: u32,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            comp_tol: 1e-7,
            duality_tol: 1e-7,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

/// Primal-dual solution. Row duals follow the shadow-price convention for
/// minimization: positive on binding `>=` rows, negative on binding `<=`
/// rows. Reduced costs are positive at lower bounds, negative at upper.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: SolveStatus,
    pub primal: Vec<f64>,
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub objective: f64,
    /// Row multipliers certifying infeasibility (best effort).
    pub farkas: Option<Vec<f64>>,
    pub iterations: u32,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_names_and_bounds() {
        let mut m = LinearModel::new("t");
        assert!(m.add_var("x y", 0.0, 1.0).is_err());
        assert!(m.add_var("", 0.0, 1.0).is_err());
        assert!(m.add_var("x", 2.0, 1.0).is_err());
        assert!(m.add_var("x", 0.0, 1.0).is_ok());
    }

    #[test]
    fn sq_terms_fold_into_canonical_objective() {
        // (x - 2)^2 = x^2 - 4x + 4  ->  Q = [2], c = -4, offset = 4.
        let mut m = LinearModel::new("q");
        let x = m.add_var("x", 0.0, 5.0).unwrap();
        m.add_sq_term(1.0, vec![(x, 1.0)], -2.0).unwrap();
        let (c, off) = m.canonical_linear();
        assert_eq!(c, vec![-4.0]);
        assert_eq!(off, 4.0);
        assert_eq!(m.canonical_quad(), vec![(0, 0, 2.0)]);
        assert_eq!(m.objective_at(&[2.0]), 0.0);
        assert_eq!(m.objective_at(&[0.0]), 4.0);
    }

    #[test]
    fn cross_terms_expand_symmetrically() {
        // (x + y)^2: Q = [[2, 2], [2, 2]] upper-tri (0,0,2) (0,1,2) (1,1,2).
        let mut m = LinearModel::new("q2");
        let x = m.add_var("x", 0.0, 1.0).unwrap();
        let y = m.add_var("y", 0.0, 1.0).unwrap();
        m.add_sq_term(1.0, vec![(x, 1.0), (y, 1.0)], 0.0).unwrap();
        assert_eq!(
            m.canonical_quad(),
            vec![(0, 0, 2.0), (0, 1, 2.0), (1, 1, 2.0)]
        );
        assert_eq!(m.objective_at(&[1.0, 1.0]), 4.0);
        assert_eq!(m.objective_at(&[1.0, -1.0]), 0.0);
    }

    #[test]
    fn duplicate_matrix_entries_merge() {
        let mut m = LinearModel::new("dup");
        let x = m.add_var("x", 0.0, 1.0).unwrap();
        m.add_row("r", Sense::Le, 1.0, &[(x, 1.0), (x, 2.0)]).unwrap();
        assert_eq!(m.matrix_rows(), vec![vec![(0, 3.0)]]);
    }
}
