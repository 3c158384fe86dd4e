//! MPS writer and reader.
//!
//! Emitted layout (see `docs/formats.md` for the grammar notes):
//! `NAME`, `OBJSENSE` (always `MIN`), `ROWS`, `COLUMNS` (with
//! `INTORG`/`INTEND` markers around binary columns), `RHS` (including the
//! negated objective constant on the objective row), `BOUNDS`, an optional
//! `QMATRIX` holding the full symmetric `Q` of the `1/2 x'Qx` objective term,
//! and `ENDATA`. `RANGES` is not used. One coefficient per `COLUMNS`/`RHS`
//! line; field order is deterministic (model order), so output is stable.

use super::{LinearModel, LpError, Sense, VarKind};
use std::collections::HashMap;
use std::fmt::Write as _;

const OBJ_ROW: &str = "COST";
const RHS_SET: &str = "RHS";
const BND_SET: &str = "BND";

fn fmt_num(v: f64) -> String {
    if v == f64::INFINITY {
        "1e+100".to_string()
    } else if v == f64::NEG_INFINITY {
        "-1e+100".to_string()
    } else {
        format!("{v}")
    }
}

/// Serialize to MPS. Fails if a row or column name collides with the
/// reserved objective row name.
pub fn write_mps(model: &LinearModel) -> Result<String, LpError> {
    for name in model.var_names().chain(model.row_names()) {
        if name == OBJ_ROW {
            return Err(LpError::Export(format!(
                "name `{OBJ_ROW}` is reserved for the objective row"
            )));
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "NAME          {}", model.name);
    out.push_str("OBJSENSE\n    MIN\nROWS\n");
    let _ = writeln!(out, " N  {OBJ_ROW}");
    for r in 0..model.num_rows() {
        let id = super::RowId(r);
        let tag = match model.row_sense(id) {
            Sense::Le => 'L',
            Sense::Eq => 'E',
            Sense::Ge => 'G',
        };
        let _ = writeln!(out, " {}  {}", tag, model.row_name(id));
    }

    out.push_str("COLUMNS\n");
    let rows = model.matrix_rows();
    // Entries per column, in row order.
    let mut col_entries: Vec<Vec<(usize, f64)>> = vec![Vec::new(); model.num_vars()];
    for (r, row) in rows.iter().enumerate() {
        for &(c, v) in row {
            col_entries[c].push((r, v));
        }
    }
    let (obj, _) = model.canonical_linear();
    let mut in_int = false;
    let mut marker_no = 0;
    for v in 0..model.num_vars() {
        let id = super::VarId(v);
        let is_int = model.var_kind(id) == VarKind::Binary;
        if is_int != in_int {
            let tag = if is_int { "'INTORG'" } else { "'INTEND'" };
            let _ = writeln!(
                out,
                "    MARKER{marker_no:04}                 'MARKER'                 {tag}"
            );
            marker_no += 1;
            in_int = is_int;
        }
        let name = model.var_name(id);
        if obj[v] != 0.0 || col_entries[v].is_empty() {
            // Columns with no entries still need a presence record so that
            // bounds and QMATRIX references resolve on re-parse.
            let _ = writeln!(out, "    {:<10}{:<10}{}", name, OBJ_ROW, fmt_num(obj[v]));
        }
        for &(r, coef) in &col_entries[v] {
            let _ = writeln!(
                out,
                "    {:<10}{:<10}{}",
                name,
                model.row_name(super::RowId(r)),
                fmt_num(coef)
            );
        }
    }
    if in_int {
        let _ = writeln!(
            out,
            "    MARKER{marker_no:04}                 'MARKER'                 'INTEND'"
        );
    }

    out.push_str("RHS\n");
    let (_, offset) = model.canonical_linear();
    if offset != 0.0 {
        let _ = writeln!(out, "    {:<10}{:<10}{}", RHS_SET, OBJ_ROW, fmt_num(-offset));
    }
    for r in 0..model.num_rows() {
        let id = super::RowId(r);
        if model.row_rhs(id) != 0.0 {
            let _ = writeln!(
                out,
                "    {:<10}{:<10}{}",
                RHS_SET,
                model.row_name(id),
                fmt_num(model.row_rhs(id))
            );
        }
    }

    out.push_str("BOUNDS\n");
    for v in 0..model.num_vars() {
        let id = super::VarId(v);
        let name = model.var_name(id);
        if model.var_kind(id) == VarKind::Binary {
            let _ = writeln!(out, " BV {:<10}{}", BND_SET, name);
            continue;
        }
        let (lo, up) = model.var_bounds(id);
        match (lo.is_finite(), up.is_finite()) {
            (true, true) if lo == up => {
                let _ = writeln!(out, " FX {:<10}{:<10}{}", BND_SET, name, fmt_num(lo));
            }
            (true, true) => {
                let _ = writeln!(out, " LO {:<10}{:<10}{}", BND_SET, name, fmt_num(lo));
                let _ = writeln!(out, " UP {:<10}{:<10}{}", BND_SET, name, fmt_num(up));
            }
            (true, false) => {
                if lo != 0.0 {
                    let _ = writeln!(out, " LO {:<10}{:<10}{}", BND_SET, name, fmt_num(lo));
                }
                // lo == 0, up == inf is the MPS default: nothing to emit.
            }
            (false, true) => {
                let _ = writeln!(out, " MI {:<10}{}", BND_SET, name);
                let _ = writeln!(out, " UP {:<10}{:<10}{}", BND_SET, name, fmt_num(up));
            }
            (false, false) => {
                let _ = writeln!(out, " FR {:<10}{}", BND_SET, name);
            }
        }
    }

    let quad = model.canonical_quad();
    if !quad.is_empty() {
        out.push_str("QMATRIX\n");
        for &(i, j, q) in &quad {
            let ni = model.var_name(super::VarId(i));
            let nj = model.var_name(super::VarId(j));
            let _ = writeln!(out, "    {:<10}{:<10}{}", ni, nj, fmt_num(q));
            if i != j {
                let _ = writeln!(out, "    {:<10}{:<10}{}", nj, ni, fmt_num(q));
            }
        }
    }
    out.push_str("ENDATA\n");
    Ok(out)
}

#[derive(PartialEq)]
enum Section {
    Start,
    ObjSense,
    Rows,
    Columns,
    Rhs,
    Bounds,
    Qmatrix,
    Done,
}

/// Parse MPS text emitted by [`write_mps`] back into a model.
pub fn parse_mps(text: &str) -> Result<LinearModel, LpError> {
    let mut model = LinearModel::new("");
    let mut section = Section::Start;
    let mut obj_row: Option<String> = None;
    let mut row_ids: HashMap<String, super::RowId> = HashMap::new();
    let mut row_sense: HashMap<String, Sense> = HashMap::new();
    // Row entries are buffered because MPS declares rows before coefficients.
    let mut row_terms: HashMap<String, Vec<(super::VarId, f64)>> = HashMap::new();
    let mut row_order: Vec<String> = Vec::new();
    let mut row_rhs: HashMap<String, f64> = HashMap::new();
    let mut var_ids: HashMap<String, super::VarId> = HashMap::new();
    let mut obj_coefs: Vec<(super::VarId, f64)> = Vec::new();
    let mut obj_offset = 0.0;
    let mut in_int = false;
    let mut binaries: Vec<super::VarId> = Vec::new();
    let mut quad_entries: Vec<(super::VarId, super::VarId, f64)> = Vec::new();
    // Explicit bound records applied after all columns exist.
    let mut bound_records: Vec<(String, String, f64)> = Vec::new();

    let err = |line: usize, msg: &str| LpError::Parse {
        line,
        msg: msg.to_string(),
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        if raw.trim().is_empty() || raw.starts_with('*') {
            continue;
        }
        let is_header = !raw.starts_with(' ');
        if is_header {
            let mut it = raw.split_whitespace();
            let head = it.next().unwrap_or("");
            section = match head {
                "NAME" => {
                    model.name = it.next().unwrap_or("").to_string();
                    Section::Start
                }
                "OBJSENSE" => Section::ObjSense,
                "ROWS" => Section::Rows,
                "COLUMNS" => Section::Columns,
                "RHS" => Section::Rhs,
                "RANGES" => return Err(err(line, "RANGES section is not supported")),
                "BOUNDS" => Section::Bounds,
                "QMATRIX" => Section::Qmatrix,
                "ENDATA" => Section::Done,
                other => return Err(err(line, &format!("unknown section `{other}`"))),
            };
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        match section {
            Section::Start | Section::Done => {
                return Err(err(line, "data outside any section"));
            }
            Section::ObjSense => {
                if fields != ["MIN"] && fields != ["MINIMIZE"] {
                    return Err(err(line, "only MIN objective sense is supported"));
                }
            }
            Section::Rows => {
                if fields.len() != 2 {
                    return Err(err(line, "ROWS entries need `<type> <name>`"));
                }
                match fields[0] {
                    "N" => {
                        if obj_row.is_some() {
                            return Err(err(line, "multiple objective rows"));
                        }
                        obj_row = Some(fields[1].to_string());
                    }
                    tag @ ("L" | "G" | "E") => {
                        let sense = match tag {
                            "L" => Sense::Le,
                            "G" => Sense::Ge,
                            _ => Sense::Eq,
                        };
                        let name = fields[1].to_string();
                        if row_sense.contains_key(&name) {
                            return Err(err(line, "duplicate row name"));
                        }
                        row_sense.insert(name.clone(), sense);
                        row_terms.insert(name.clone(), Vec::new());
                        row_order.push(name);
                    }
                    other => return Err(err(line, &format!("bad row type `{other}`"))),
                }
            }
            Section::Columns => {
                if fields.len() >= 3 && fields[1] == "'MARKER'" {
                    match *fields.last().unwrap() {
                        "'INTORG'" => in_int = true,
                        "'INTEND'" => in_int = false,
                        other => return Err(err(line, &format!("bad marker `{other}`"))),
                    }
                    continue;
                }
                if fields.len() != 3 && fields.len() != 5 {
                    return Err(err(line, "COLUMNS entries need `<col> <row> <value>` pairs"));
                }
                let col_name = fields[0];
                let var = *var_ids.entry(col_name.to_string()).or_insert_with(|| {
                    let v = model
                        .add_var(col_name, 0.0, f64::INFINITY)
                        .expect("valid var name");
                    if in_int {
                        binaries.push(v);
                    }
                    v
                });
                for chunk in fields[1..].chunks(2) {
                    let row = chunk[0];
                    let value: f64 = chunk[1]
                        .parse()
                        .map_err(|_| err(line, "bad numeric value"))?;
                    if Some(row) == obj_row.as_deref() {
                        obj_coefs.push((var, value));
                    } else if let Some(terms) = row_terms.get_mut(row) {
                        terms.push((var, value));
                    } else {
                        return Err(err(line, &format!("unknown row `{row}`")));
                    }
                }
            }
            Section::Rhs => {
                if fields.len() != 3 {
                    return Err(err(line, "RHS entries need `<set> <row> <value>`"));
                }
                let row = fields[1];
                let value: f64 = fields[2]
                    .parse()
                    .map_err(|_| err(line, "bad numeric value"))?;
                if Some(row) == obj_row.as_deref() {
                    obj_offset = -value;
                } else if row_sense.contains_key(row) {
                    row_rhs.insert(row.to_string(), value);
                } else {
                    return Err(err(line, &format!("unknown row `{row}`")));
                }
            }
            Section::Bounds => {
                let kind = fields[0];
                match kind {
                    "UP" | "LO" | "FX" => {
                        if fields.len() != 4 {
                            return Err(err(line, "bound needs `<type> <set> <col> <value>`"));
                        }
                        let value: f64 = fields[3]
                            .parse()
                            .map_err(|_| err(line, "bad numeric value"))?;
                        bound_records.push((kind.to_string(), fields[2].to_string(), value));
                    }
                    "FR" | "MI" | "PL" | "BV" => {
                        if fields.len() != 3 {
                            return Err(err(line, "bound needs `<type> <set> <col>`"));
                        }
                        bound_records.push((kind.to_string(), fields[2].to_string(), 0.0));
                    }
                    other => return Err(err(line, &format!("bound type `{other}` unsupported"))),
                }
            }
            Section::Qmatrix => {
                if fields.len() != 3 {
                    return Err(err(line, "QMATRIX entries need `<col> <col> <value>`"));
                }
                let a = *var_ids
                    .get(fields[0])
                    .ok_or_else(|| err(line, "unknown column in QMATRIX"))?;
                let b = *var_ids
                    .get(fields[1])
                    .ok_or_else(|| err(line, "unknown column in QMATRIX"))?;
                let value: f64 = fields[2]
                    .parse()
                    .map_err(|_| err(line, "bad numeric value"))?;
                quad_entries.push((a, b, value));
            }
        }
    }
    if section != Section::Done {
        return Err(err(0, "missing ENDATA"));
    }

    for (var, coef) in obj_coefs {
        model.set_obj_coef(var, coef);
    }
    model.add_obj_offset(obj_offset);
    for name in &row_order {
        let sense = row_sense[name];
        let rhs = row_rhs.get(name).copied().unwrap_or(0.0);
        let terms = row_terms.remove(name).unwrap();
        let id = model.add_row(name.clone(), sense, rhs, &terms)?;
        row_ids.insert(name.clone(), id);
    }
    for v in binaries {
        model.set_var_bounds(v, 0.0, 1.0);
        // Reaches into the column table; Binary kind is not settable through
        // the public builder on an existing var.
        model.cols[v.0].kind = VarKind::Binary;
    }
    for (kind, col, value) in bound_records {
        let var = *var_ids
            .get(&col)
            .ok_or_else(|| err(0, &format!("bound on unknown column `{col}`")))?;
        let (lo, up) = model.var_bounds(var);
        match kind.as_str() {
            "UP" => model.set_var_bounds(var, lo, value),
            "LO" => model.set_var_bounds(var, value, up),
            "FX" => model.set_var_bounds(var, value, value),
            "FR" => model.set_var_bounds(var, f64::NEG_INFINITY, f64::INFINITY),
            "MI" => model.set_var_bounds(var, f64::NEG_INFINITY, up),
            "PL" => model.set_var_bounds(var, lo, f64::INFINITY),
            "BV" => {
                model.set_var_bounds(var, 0.0, 1.0);
                model.cols[var.0].kind = VarKind::Binary;
            }
            _ => unreachable!(),
        }
    }

    // Fold the symmetric QMATRIX into upper-triangular 1/2 x'Qx triplets,
    // verifying symmetry on the way.
    let mut sym: HashMap<(usize, usize), (f64, f64, bool)> = HashMap::new();
    for (a, b, v) in quad_entries {
        if a.0 == b.0 {
            let e = sym.entry((a.0, b.0)).or_insert((0.0, 0.0, false));
            e.0 += v;
            e.1 += v;
        } else {
            let key = (a.0.min(b.0), a.0.max(b.0));
            let e = sym.entry(key).or_insert((0.0, 0.0, false));
            if a.0 < b.0 {
                e.0 += v;
            } else {
                e.1 += v;
                e.2 = true;
            }
        }
    }
    let mut keys: Vec<(usize, usize)> = sym.keys().copied().collect();
    keys.sort_unstable();
    for key in keys {
        let (upper, lower, saw_lower) = sym[&key];
        if key.0 != key.1 {
            if !saw_lower || (upper - lower).abs() > 1e-12 * upper.abs().max(1.0) {
                return Err(LpError::Parse {
                    line: 0,
                    msg: format!("QMATRIX asymmetric at ({}, {})", key.0, key.1),
                });
            }
            model.add_quad_triplet(super::VarId(key.0), super::VarId(key.1), upper);
        } else {
            model.add_quad_triplet(super::VarId(key.0), super::VarId(key.1), upper);
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::models_identical;

    fn toy() -> LinearModel {
        let mut m = LinearModel::new("toy");
        let x = m.add_var("x1", 0.0, 4.0).unwrap();
        let y = m.add_var("x2", f64::NEG_INFINITY, f64::INFINITY).unwrap();
        m.set_obj_coef(x, 1.0);
        m.set_obj_coef(y, -2.5);
        m.add_obj_offset(3.0);
        m.add_row("lim", Sense::Le, 10.0, &[(x, 2.0), (y, 1.0)]).unwrap();
        m.add_row("bal", Sense::Eq, 1.0, &[(x, 1.0), (y, -1.0)]).unwrap();
        m
    }

    #[test]
    fn round_trip_lp() {
        let m = toy();
        let text = write_mps(&m).unwrap();
        let back = parse_mps(&text).unwrap();
        models_identical(&m, &back).unwrap();
    }

    #[test]
    fn round_trip_binaries_and_quad() {
        let mut m = toy();
        let z = m.add_binary("z1").unwrap();
        let x = super::super::VarId(0);
        m.add_row("link", Sense::Ge, 0.0, &[(x, 1.0), (z, -4.0)]).unwrap();
        m.add_sq_term(2.0, vec![(x, 1.0), (super::super::VarId(1), -1.0)], 0.5).unwrap();
        let text = write_mps(&m).unwrap();
        assert!(text.contains("'INTORG'"), "{text}");
        assert!(text.contains("QMATRIX"));
        let back = parse_mps(&text).unwrap();
        // The parsed model stores folded Q/c, so compare canonical forms.
        assert_eq!(m.canonical_quad(), back.canonical_quad());
        assert_eq!(m.canonical_linear().0, back.canonical_linear().0);
        assert_eq!(m.canonical_linear().1, back.canonical_linear().1);
        assert_eq!(m.matrix_rows(), back.matrix_rows());
        assert_eq!(back.var_kind(z), VarKind::Binary);
        // Re-export is a fixed point.
        let text2 = write_mps(&back).unwrap();
        assert_eq!(text, text2);
    }

    #[test]
    fn deterministic_output() {
        assert_eq!(write_mps(&toy()).unwrap(), write_mps(&toy()).unwrap());
    }
}
