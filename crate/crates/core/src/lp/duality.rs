//! Primal/dual residual reporting for solved models.

use super::{LinearModel, LpSolution, Sense, ToleranceConfig};
use serde::Serialize;

/// Residuals of a primal-dual pair against the model. All quantities are
/// reported in unscaled model units.
#[derive(Debug, Clone, Serialize)]
pub struct DualityReport {
    /// Max violation of rows and variable bounds.
    pub primal_residual: f64,
    /// Max-norm of the stationarity residual `Qx + c - A'y - z`, including
    /// dual sign violations.
    pub dual_residual: f64,
    /// Largest `multiplier * slack` product over inequalities and bounds.
    pub complementarity: f64,
    /// `|primal objective - dual objective|`.
    pub duality_gap: f64,
    /// Gap relative to `1 + |primal objective|`.
    pub rel_gap: f64,
    pub objective_primal: f64,
    pub objective_dual: f64,
}

impl DualityReport {
    pub fn passes(&self, tol: &ToleranceConfig) -> bool {
        self.primal_residual <= tol.feas_tol
            && self.complementarity <= tol.comp_tol
            && self.rel_gap <= tol.duality_tol
    }
}

/// Evaluate feasibility, stationarity, complementarity, and the duality gap of
/// `sol` on `model`. Report only; never fails.
pub fn check_duality(model: &LinearModel, sol: &LpSolution) -> DualityReport {
    let n = model.num_vars();
    let rows = model.matrix_rows();
    let x = &sol.primal;
    let y = &sol.duals;
    let z = &sol.reduced_costs;

    let mut primal_res = 0.0_f64;
    let mut comp = 0.0_f64;
    let mut dual_obj = 0.0_f64;
    let mut dual_sign_viol = 0.0_f64;

    for r in 0..model.num_rows() {
        let act = model.row_activity(&rows, r, x);
        let rhs = model.row_rhs(super::RowId(r));
        match model.row_sense(super::RowId(r)) {
            Sense::Le => {
                primal_res = primal_res.max(act - rhs);
                // Shadow price on <= is nonpositive for minimization.
                dual_sign_viol = dual_sign_viol.max(y[r]);
                comp = comp.max((y[r] * (rhs - act)).abs());
            }
            Sense::Ge => {
                primal_res = primal_res.max(rhs - act);
                dual_sign_viol = dual_sign_viol.max(-y[r]);
                comp = comp.max((y[r] * (act - rhs)).abs());
            }
            Sense::Eq => {
                primal_res = primal_res.max((act - rhs).abs());
            }
        }
        dual_obj += y[r] * rhs;
    }

    let bound_mult_tol = 1e-7;
    for v in 0..n {
        let (lo, up) = model.var_bounds(super::VarId(v));
        if lo.is_finite() {
            primal_res = primal_res.max(lo - x[v]);
        }
        if up.is_finite() {
            primal_res = primal_res.max(x[v] - up);
        }
        let zl = z[v].max(0.0);
        let zu = (-z[v]).max(0.0);
        if lo.is_finite() {
            comp = comp.max(zl * (x[v] - lo).abs());
            dual_obj += zl * lo;
        } else if zl > bound_mult_tol {
            // Multiplier on a nonexistent bound: poison the gap.
            dual_obj = f64::NEG_INFINITY;
        }
        if up.is_finite() {
            comp = comp.max(zu * (up - x[v]).abs());
            dual_obj -= zu * up;
        } else if zu > bound_mult_tol {
            dual_obj = f64::NEG_INFINITY;
        }
    }

    // Stationarity: Qx + c - A'y - z = 0.
    let (c, offset) = model.canonical_linear();
    let mut grad = c.clone();
    for &(i, j, q) in &model.canonical_quad() {
        grad[i] += q * x[j];
        if i != j {
            grad[j] += q * x[i];
        }
    }
    let mut aty = vec![0.0_f64; n];
    for (r, row) in rows.iter().enumerate() {
        for &(col, coef) in row {
            aty[col] += coef * y[r];
        }
    }
    let mut dual_res = dual_sign_viol;
    for v in 0..n {
        dual_res = dual_res.max((grad[v] - aty[v] - z[v]).abs());
    }

    // QP dual objective subtracts the curvature term back out.
    let mut xqx = 0.0;
    for &(i, j, q) in &model.canonical_quad() {
        xqx += if i == j { q * x[i] * x[i] } else { 2.0 * q * x[i] * x[j] };
    }
    let objective_primal = model.objective_at(x);
    let objective_dual = dual_obj - 0.5 * xqx + offset;
    let duality_gap = (objective_primal - objective_dual).abs();
    DualityReport {
        primal_residual: primal_res.max(0.0),
        dual_residual: dual_res,
        complementarity: comp,
        duality_gap,
        rel_gap: duality_gap / (1.0 + objective_primal.abs()),
        objective_primal,
        objective_dual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{solve_lp, solve_qp};

    #[test]
    fn optimal_solution_passes() {
        let mut m = LinearModel::new("d1");
        let x = m.add_var("x", 0.0, 10.0).unwrap();
        let y = m.add_var("y", 0.0, 10.0).unwrap();
        m.set_obj_coef(x, 1.0);
        m.set_obj_coef(y, 2.0);
        m.add_row("cover", Sense::Ge, 3.0, &[(x, 1.0), (y, 1.0)]).unwrap();
        let tol = ToleranceConfig::default();
        let sol = solve_lp(&m, &tol).unwrap();
        let rep = check_duality(&m, &sol);
        assert!(rep.passes(&tol), "{rep:?}");
    }

    #[test]
    fn perturbed_primal_reports_residual() {
        let mut m = LinearModel::new("d2");
        let x = m.add_var("x", 0.0, 10.0).unwrap();
        m.set_obj_coef(x, 1.0);
        m.add_row("lo", Sense::Ge, 2.0, &[(x, 1.0)]).unwrap();
        let tol = ToleranceConfig::default();
        let mut sol = solve_lp(&m, &tol).unwrap();
        sol.primal[x.0] += 1.0;
        let rep = check_duality(&m, &sol);
        // Feasible but no longer complementary or stationary-consistent.
        assert!(rep.complementarity > 0.5, "{rep:?}");
        assert!(!rep.passes(&tol));
        sol.primal[x.0] -= 2.0;
        let rep2 = check_duality(&m, &sol);
        assert!(rep2.primal_residual > 0.5, "{rep2:?}");
    }

    #[test]
    fn qp_gap_matches_curvature_correction() {
        let mut m = LinearModel::new("d3");
        let x = m.add_var("x", 0.0, 1.0).unwrap();
        m.add_sq_term(1.0, vec![(x, 1.0)], -2.0).unwrap();
        let tol = ToleranceConfig::default();
        let sol = solve_qp(&m, &tol).unwrap();
        let rep = check_duality(&m, &sol);
        assert!(rep.passes(&tol), "{rep:?}");
    }
}
