//! Convex solve path: row/objective equilibration, conic assembly, and
//! primal-dual extraction in the model's own conventions.

use super::{LinearModel, LpError, LpSolution, Sense, SolveStatus, ToleranceConfig};
use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus,
    SupportedConeT::{NonnegativeConeT, ZeroConeT},
};

/// Solve a pure LP. Binaries and quadratic terms are rejected.
pub fn solve_lp(model: &LinearModel, tol: &ToleranceConfig) -> Result<LpSolution, LpError> {
    if model.has_binaries() {
        return Err(LpError::HasBinaries {
            model: model.name.clone(),
        });
    }
    if model.has_quadratic() {
        return Err(LpError::HasQuadratic {
            model: model.name.clone(),
        });
    }
    solve_convex(model, tol)
}

/// Solve a convex QP (or LP); binaries are rejected.
pub fn solve_qp(model: &LinearModel, tol: &ToleranceConfig) -> Result<LpSolution, LpError> {
    if model.has_binaries() {
        return Err(LpError::HasBinaries {
            model: model.name.clone(),
        });
    }
    solve_convex(model, tol)
}

/// Nearest power of two to `1/x`, clamped; powers of two keep unscaling exact.
fn pow2_recip(x: f64) -> f64 {
    if !(x.is_finite() && x > 0.0) {
        return 1.0;
    }
    let e = (-x.log2()).round().clamp(-40.0, 40.0);
    e.exp2()
}

struct ConicData {
    /// (row, col, value) of the conic constraint block, already scaled.
    trips: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
    n_eq: usize,
    n_ineq: usize,
    /// Per model row: conic slot and the dual sign multiplier back to the
    /// shadow-price convention.
    row_slot: Vec<(usize, f64)>,
    /// Per var: conic slot of the upper / lower bound rows.
    upper_slot: Vec<Option<usize>>,
    lower_slot: Vec<Option<usize>>,
    row_scale: Vec<f64>,
}

fn assemble(model: &LinearModel) -> ConicData {
    let rows = model.matrix_rows();
    let n_rows = model.num_rows();
    let mut row_scale = vec![1.0_f64; n_rows];
    for (r, row) in rows.iter().enumerate() {
        let maxabs = row.iter().fold(0.0_f64, |m, &(_, v)| m.max(v.abs()));
        row_scale[r] = pow2_recip(maxabs);
    }

    let mut trips = Vec::new();
    let mut rhs = Vec::new();
    let mut row_slot = vec![(usize::MAX, 1.0); n_rows];

    // Equalities first (zero cone), then all inequalities (nonnegative cone).
    let mut slot = 0;
    for (r, row) in rows.iter().enumerate() {
        if model.rows[r].sense == Sense::Eq {
            let s = row_scale[r];
            for &(c, v) in row {
                trips.push((slot, c, s * v));
            }
            rhs.push(s * model.rows[r].rhs);
            // Equality dual: shadow price y = -z (free either way).
            row_slot[r] = (slot, -1.0);
            slot += 1;
        }
    }
    let n_eq = slot;
    for (r, row) in rows.iter().enumerate() {
        let s = row_scale[r];
        match model.rows[r].sense {
            Sense::Eq => {}
            Sense::Le => {
                for &(c, v) in row {
                    trips.push((slot, c, s * v));
                }
                rhs.push(s * model.rows[r].rhs);
                row_slot[r] = (slot, -1.0);
                slot += 1;
            }
            Sense::Ge => {
                for &(c, v) in row {
                    trips.push((slot, c, -s * v));
                }
                rhs.push(-s * model.rows[r].rhs);
                row_slot[r] = (slot, 1.0);
                slot += 1;
            }
        }
    }

    let mut upper_slot = vec![None; model.num_vars()];
    let mut lower_slot = vec![None; model.num_vars()];
    for v in 0..model.num_vars() {
        let (lo, up) = (model.cols[v].lower, model.cols[v].upper);
        if up.is_finite() {
            trips.push((slot, v, 1.0));
            rhs.push(up);
            upper_slot[v] = Some(slot);
            slot += 1;
        }
        if lo.is_finite() {
            trips.push((slot, v, -1.0));
            rhs.push(-lo);
            lower_slot[v] = Some(slot);
            slot += 1;
        }
    }

    ConicData {
        trips,
        rhs,
        n_eq,
        n_ineq: slot - n_eq,
        row_slot,
        upper_slot,
        lower_slot,
        row_scale,
    }
}

fn csc_from_triplets(m: usize, n: usize, trips: &[(usize, usize, f64)]) -> CscMatrix<f64> {
    let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(r, c, v) in trips {
        by_col[c].push((r, v));
    }
    let mut colptr = Vec::with_capacity(n + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for col in &mut by_col {
        col.sort_by_key(|(r, _)| *r);
        for &(r, v) in col.iter() {
            rowval.push(r);
            nzval.push(v);
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}

fn solve_convex(model: &LinearModel, tol: &ToleranceConfig) -> Result<LpSolution, LpError> {
    let n = model.num_vars();
    let (c, _offset) = model.canonical_linear();
    let quad = model.canonical_quad();

    let max_obj = c
        .iter()
        .map(|v| v.abs())
        .chain(quad.iter().map(|&(_, _, v)| v.abs()))
        .fold(0.0_f64, f64::max);
    let sigma = pow2_recip(max_obj);

    let conic = assemble(model);
    let m_total = conic.n_eq + conic.n_ineq;
    let a = csc_from_triplets(m_total, n, &conic.trips);
    let p_trips: Vec<(usize, usize, f64)> = quad
        .iter()
        .map(|&(i, j, v)| (i, j, sigma * v))
        .collect();
    let p = csc_from_triplets(n, n, &p_trips);
    let q: Vec<f64> = c.iter().map(|v| sigma * v).collect();

    let cones = [ZeroConeT(conic.n_eq), NonnegativeConeT(conic.n_ineq)];
    // Tight gap ceiling: weakly active bounds pull interior-point iterates
    // about sqrt(gap) away from the boundary, and downstream equivalence
    // checks need elementwise accuracy near 1e-5.
    let solver_feas = (tol.feas_tol * 1e-2).clamp(1e-12, 1e-10);
    let solver_gap = (tol.duality_tol * 1e-4).clamp(1e-12, 1e-11);
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(tol.max_iter)
        .tol_feas(solver_feas)
        .tol_gap_abs(solver_gap)
        .tol_gap_rel(solver_gap)
        .tol_infeas_abs(1e-10)
        .tol_infeas_rel(1e-10)
        .build()
        .map_err(|e| LpError::Backend(format!("settings: {e}")))?;

    let mut solver = DefaultSolver::new(&p, &q, &a, &conic.rhs, &cones, settings)
        .map_err(|e| LpError::Backend(format!("setup: {e:?}")))?;
    solver.solve();

    let sol = &solver.solution;
    let iterations = solver.info.iterations;
    let status = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        SolverStatus::MaxIterations | SolverStatus::MaxTime | SolverStatus::InsufficientProgress => {
            SolveStatus::IterationLimit
        }
        other => {
            return Err(LpError::Backend(format!("solver ended with {other:?}")));
        }
    };

    match status {
        SolveStatus::Optimal => {
            let x = sol.x.clone();
            let mut duals = vec![0.0; model.num_rows()];
            for (r, &(slot, sign)) in conic.row_slot.iter().enumerate() {
                if slot != usize::MAX {
                    duals[r] = sign * sol.z[slot] * conic.row_scale[r] / sigma;
                }
            }
            let mut reduced = vec![0.0; n];
            for v in 0..n {
                let zl = conic.lower_slot[v].map_or(0.0, |s| sol.z[s]);
                let zu = conic.upper_slot[v].map_or(0.0, |s| sol.z[s]);
                reduced[v] = (zl - zu) / sigma;
            }
            let objective = model.objective_at(&x);
            Ok(LpSolution {
                status,
                primal: x,
                duals,
                reduced_costs: reduced,
                objective,
                farkas: None,
                iterations,
            })
        }
        SolveStatus::Infeasible => {
            // z holds the infeasibility certificate over the conic rows;
            // map the model-row part back through scaling and orientation.
            let mut farkas = vec![0.0; model.num_rows()];
            for (r, &(slot, sign)) in conic.row_slot.iter().enumerate() {
                if slot != usize::MAX {
                    farkas[r] = -sign * sol.z[slot] * conic.row_scale[r];
                }
            }
            Ok(LpSolution {
                status,
                primal: vec![0.0; n],
                duals: vec![0.0; model.num_rows()],
                reduced_costs: vec![0.0; n],
                objective: f64::INFINITY,
                farkas: Some(farkas),
                iterations,
            })
        }
        SolveStatus::Unbounded => Ok(LpSolution {
            status,
            primal: sol.x.clone(),
            duals: vec![0.0; model.num_rows()],
            reduced_costs: vec![0.0; n],
            objective: f64::NEG_INFINITY,
            farkas: None,
            iterations,
        }),
        SolveStatus::IterationLimit => Ok(LpSolution {
            status,
            primal: sol.x.clone(),
            duals: vec![0.0; model.num_rows()],
            reduced_costs: vec![0.0; n],
            objective: model.objective_at(&sol.x),
            farkas: None,
            iterations,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::check_duality;
    use approx::assert_abs_diff_eq;

    fn tol() -> ToleranceConfig {
        ToleranceConfig::default()
    }

    #[test]
    fn min_x_subject_to_x_ge_3() {
        let mut m = LinearModel::new("t1");
        let x = m.add_var("x", f64::NEG_INFINITY, f64::INFINITY).unwrap();
        m.set_obj_coef(x, 1.0);
        let r = m.add_row("c1", Sense::Ge, 3.0, &[(x, 1.0)]).unwrap();
        let sol = solve_lp(&m, &tol()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(sol.primal[x.0], 3.0, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.duals[r.0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.objective, 3.0, epsilon = 1e-7);
        let rep = check_duality(&m, &sol);
        assert!(rep.passes(&tol()), "{rep:?}");
    }

    #[test]
    fn degenerate_zero_cost_box() {
        let mut m = LinearModel::new("t2");
        m.add_var("x", 0.0, 1.0).unwrap();
        let sol = solve_lp(&m, &tol()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.primal[0] >= -1e-9 && sol.primal[0] <= 1.0 + 1e-9);
        assert_abs_diff_eq!(sol.objective, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn infeasible_with_certificate() {
        let mut m = LinearModel::new("t3");
        let x = m.add_var("x", 0.0, f64::INFINITY).unwrap();
        m.add_row("hi", Sense::Le, -1.0, &[(x, 1.0)]).unwrap();
        let sol = solve_lp(&m, &tol()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
        assert!(sol.farkas.is_some());
    }

    #[test]
    fn unbounded_detected() {
        let mut m = LinearModel::new("t4");
        let x = m.add_var("x", f64::NEG_INFINITY, f64::INFINITY).unwrap();
        m.set_obj_coef(x, 1.0);
        let sol = solve_lp(&m, &tol()).unwrap();
        assert_eq!(sol.status, SolveStatus::Unbounded);
    }

    #[test]
    fn qp_box_clamp() {
        // min (x-2)^2 on [0,1] -> x=1, objective 1.
        let mut m = LinearModel::new("q1");
        let x = m.add_var("x", 0.0, 1.0).unwrap();
        m.add_sq_term(1.0, vec![(x, 1.0)], -2.0).unwrap();
        let sol = solve_qp(&m, &tol()).unwrap();
        assert_abs_diff_eq!(sol.primal[x.0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.objective, 1.0, epsilon = 1e-7);
        // interior optimum when the box allows it
        let mut m2 = LinearModel::new("q2");
        let x2 = m2.add_var("x", 0.0, 5.0).unwrap();
        m2.add_sq_term(1.0, vec![(x2, 1.0)], -2.0).unwrap();
        let sol2 = solve_qp(&m2, &tol()).unwrap();
        assert_abs_diff_eq!(sol2.primal[x2.0], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol2.objective, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn lp_rejects_quadratic_and_binaries() {
        let mut m = LinearModel::new("g");
        let x = m.add_var("x", 0.0, 1.0).unwrap();
        m.add_sq_term(1.0, vec![(x, 1.0)], 0.0).unwrap();
        assert!(matches!(solve_lp(&m, &tol()), Err(LpError::HasQuadratic { .. })));
        let mut m2 = LinearModel::new("g2");
        m2.add_binary("z").unwrap();
        assert!(matches!(solve_lp(&m2, &tol()), Err(LpError::HasBinaries { .. })));
        assert!(matches!(solve_qp(&m2, &tol()), Err(LpError::HasBinaries { .. })));
    }
}
