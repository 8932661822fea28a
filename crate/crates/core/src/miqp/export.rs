//! Plain-text sparse MIQP format.
//!
//! One record per line, keyword first, `#` starts a comment:
//!
//! ```text
//! ccto-miqp 1
//! dims <vars> <eq rows> <ineq rows> <pairs>
//! layout <nx> <nu> <nc> <horizon>
//! constant <c>
//! H <i> <j> <value>          upper triangle, i <= j
//! f <j> <value>
//! Aeq <row> <j> <value>
//! beq <row> <value>
//! Ain <row> <j> <value>
//! bin <row> <value>
//! bound <j> <lower> <upper>  inf / -inf when absent
//! pair <j0> <j1>             binaries with j0 + j1 = 1
//! var <j> <name>
//! eqname <row> <name>
//! inname <row> <name>
//! end
//! ```
//!
//! Solutions use `ccto-miqp-solution 1`, `objective <v>`, one `x <j> <value>`
//! per column and `end`. Objective is `½ v'Hv + f'v + constant`.

use std::fmt::Write as _;

use thiserror::Error;

use super::encode::{MiqpProblem, VarMap};
use super::sparse::CsrMatrix;

const PROBLEM_MAGIC: &str = "ccto-miqp 1";
const SOLUTION_MAGIC: &str = "ccto-miqp-solution 1";

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {message}")]
pub struct FormatError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError { line, message: message.into() }
}

pub fn write_problem(p: &MiqpProblem) -> String {
    let mut s = String::new();
    let vm = p.var_map;
    let _ = writeln!(s, "{PROBLEM_MAGIC}");
    let _ = writeln!(s, "dims {} {} {} {}", p.n_vars(), p.b_eq.len(), p.b_in.len(), p.binary_pairs.len());
    let _ = writeln!(s, "layout {} {} {} {}", vm.nx, vm.nu, vm.nc, vm.horizon);
    let _ = writeln!(s, "constant {:e}", p.constant);
    for (i, j, v) in p.h.triplets() {
        let _ = writeln!(s, "H {i} {j} {v:e}");
    }
    for (j, v) in p.f.iter().enumerate().filter(|(_, v)| **v != 0.0) {
        let _ = writeln!(s, "f {j} {v:e}");
    }
    for (r, j, v) in p.a_eq.triplets() {
        let _ = writeln!(s, "Aeq {r} {j} {v:e}");
    }
    for (r, v) in p.b_eq.iter().enumerate() {
        let _ = writeln!(s, "beq {r} {v:e}");
    }
    for (r, j, v) in p.a_in.triplets() {
        let _ = writeln!(s, "Ain {r} {j} {v:e}");
    }
    for (r, v) in p.b_in.iter().enumerate() {
        let _ = writeln!(s, "bin {r} {v:e}");
    }
    for j in 0..p.n_vars() {
        let _ = writeln!(s, "bound {j} {:e} {:e}", p.lb[j], p.ub[j]);
    }
    for (a, b) in &p.binary_pairs {
        let _ = writeln!(s, "pair {a} {b}");
    }
    for j in 0..p.n_vars() {
        let _ = writeln!(s, "var {j} {}", vm.name(j));
    }
    for (r, name) in p.eq_names.iter().enumerate() {
        let _ = writeln!(s, "eqname {r} {name}");
    }
    for (r, name) in p.in_names.iter().enumerate() {
        let _ = writeln!(s, "inname {r} {name}");
    }
    s.push_str("end\n");
    s
}

struct Fields<'a> {
    line: usize,
    it: std::str::SplitWhitespace<'a>,
}

impl Fields<'_> {
    fn index(&mut self, bound: usize, what: &str) -> Result<usize, FormatError> {
        let tok = self.it.next().ok_or_else(|| err(self.line, format!("missing {what}")))?;
        let v: usize = tok.parse().map_err(|_| err(self.line, format!("bad {what} {tok:?}")))?;
        if v >= bound {
            return Err(err(self.line, format!("{what} {v} out of range (< {bound})")));
        }
        Ok(v)
    }

    fn count(&mut self, what: &str) -> Result<usize, FormatError> {
        self.index(usize::MAX, what)
    }

    fn value(&mut self) -> Result<f64, FormatError> {
        let tok = self.it.next().ok_or_else(|| err(self.line, "missing value"))?;
        tok.parse().map_err(|_| err(self.line, format!("bad number {tok:?}")))
    }

    fn rest(&mut self) -> String {
        self.it.by_ref().collect::<Vec<_>>().join(" ")
    }

    fn done(&mut self) -> Result<(), FormatError> {
        match self.it.next() {
            Some(t) => Err(err(self.line, format!("unexpected trailing token {t:?}"))),
            None => Ok(()),
        }
    }
}

fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn read_problem(text: &str) -> Result<MiqpProblem, FormatError> {
    let mut lines = records(text);
    match lines.next() {
        Some((_, l)) if l == PROBLEM_MAGIC => {}
        Some((n, l)) => return Err(err(n, format!("expected {PROBLEM_MAGIC:?}, found {l:?}"))),
        None => return Err(err(0, "empty input")),
    }
    let mut dims: Option<(usize, usize, usize, usize)> = None;
    let mut layout: Option<VarMap> = None;
    let mut constant = 0.0;
    let (mut h, mut aeq, mut ain) = (vec![], vec![], vec![]);
    let (mut f, mut beq, mut bin, mut lb, mut ub) = (vec![], vec![], vec![], vec![], vec![]);
    let (mut pairs, mut eq_names, mut in_names) = (vec![], vec![], vec![]);
    let mut ended = false;
    for (line, l) in lines {
        if ended {
            return Err(err(line, "content after end"));
        }
        let mut it = l.split_whitespace();
        let key = it.next().unwrap_or("");
        let mut fl = Fields { line, it };
        if key == "dims" {
            let d = (fl.count("vars")?, fl.count("rows")?, fl.count("rows")?, fl.count("pairs")?);
            fl.done()?;
            f = vec![0.0; d.0];
            lb = vec![f64::NEG_INFINITY; d.0];
            ub = vec![f64::INFINITY; d.0];
            beq = vec![0.0; d.1];
            bin = vec![0.0; d.2];
            eq_names = vec![String::new(); d.1];
            in_names = vec![String::new(); d.2];
            dims = Some(d);
            continue;
        }
        if key == "end" {
            ended = true;
            continue;
        }
        let (nv, meq, min, _) = dims.ok_or_else(|| err(line, "dims must come first"))?;
        match key {
            "layout" => {
                layout = Some(VarMap {
                    nx: fl.count("nx")?,
                    nu: fl.count("nu")?,
                    nc: fl.count("nc")?,
                    horizon: fl.count("horizon")?,
                });
            }
            "constant" => constant = fl.value()?,
            "H" => {
                let (i, j) = (fl.index(nv, "column")?, fl.index(nv, "column")?);
                if j < i {
                    return Err(err(line, "H entries must be upper triangular"));
                }
                h.push((i, j, fl.value()?));
            }
            "f" => {
                let j = fl.index(nv, "column")?;
                f[j] = fl.value()?;
            }
            "Aeq" => aeq.push((fl.index(meq, "row")?, fl.index(nv, "column")?, fl.value()?)),
            "beq" => {
                let r = fl.index(meq, "row")?;
                beq[r] = fl.value()?;
            }
            "Ain" => ain.push((fl.index(min, "row")?, fl.index(nv, "column")?, fl.value()?)),
            "bin" => {
                let r = fl.index(min, "row")?;
                bin[r] = fl.value()?;
            }
            "bound" => {
                let j = fl.index(nv, "column")?;
                lb[j] = fl.value()?;
                ub[j] = fl.value()?;
            }
            "pair" => pairs.push((fl.index(nv, "column")?, fl.index(nv, "column")?)),
            "var" => {
                fl.index(nv, "column")?;
                fl.rest();
            }
            "eqname" => {
                let r = fl.index(meq, "row")?;
                eq_names[r] = fl.rest();
            }
            "inname" => {
                let r = fl.index(min, "row")?;
                in_names[r] = fl.rest();
            }
            other => return Err(err(line, format!("unknown record {other:?}"))),
        }
        fl.done()?;
    }
    if !ended {
        return Err(err(0, "missing end"));
    }
    let (nv, meq, min, np) = dims.ok_or_else(|| err(0, "missing dims"))?;
    let var_map = layout.ok_or_else(|| err(0, "missing layout"))?;
    if var_map.n_vars() != nv || var_map.n_pairs() != np || pairs.len() != np {
        return Err(err(0, "layout, dims and pair records disagree"));
    }
    Ok(MiqpProblem {
        h: CsrMatrix::from_triplets(nv, nv, &h),
        f,
        constant,
        a_eq: CsrMatrix::from_triplets(meq, nv, &aeq),
        b_eq: beq,
        a_in: CsrMatrix::from_triplets(min, nv, &ain),
        b_in: bin,
        lb,
        ub,
        binary_pairs: pairs,
        var_map,
        eq_names,
        in_names,
    })
}

pub fn write_solution(objective: f64, x: &[f64]) -> String {
    let mut s = format!("{SOLUTION_MAGIC}\nobjective {objective:e}\n");
    for (j, v) in x.iter().enumerate() {
        let _ = writeln!(s, "x {j} {v:e}");
    }
    s.push_str("end\n");
    s
}

/// Returns `(objective, x)`; every column must be present exactly once.
pub fn read_solution(text: &str, n_vars: usize) -> Result<(f64, Vec<f64>), FormatError> {
    let mut lines = records(text);
    match lines.next() {
        Some((_, l)) if l == SOLUTION_MAGIC => {}
        Some((n, l)) => return Err(err(n, format!("expected {SOLUTION_MAGIC:?}, found {l:?}"))),
        None => return Err(err(0, "empty input")),
    }
    let mut objective = None;
    let mut x: Vec<Option<f64>> = vec![None; n_vars];
    let mut ended = false;
    for (line, l) in lines {
        if ended {
            return Err(err(line, "content after end"));
        }
        let mut it = l.split_whitespace();
        let key = it.next().unwrap_or("");
        let mut fl = Fields { line, it };
        match key {
            "objective" => objective = Some(fl.value()?),
            "x" => {
                let j = fl.index(n_vars, "column")?;
                if x[j].replace(fl.value()?).is_some() {
                    return Err(err(line, format!("column {j} given twice")));
                }
            }
            "end" => ended = true,
            other => return Err(err(line, format!("unknown record {other:?}"))),
        }
        fl.done()?;
    }
    if !ended {
        return Err(err(0, "missing end"));
    }
    let objective = objective.ok_or_else(|| err(0, "missing objective"))?;
    let x = x
        .into_iter()
        .enumerate()
        .map(|(j, v)| v.ok_or_else(|| err(0, format!("column {j} missing"))))
        .collect::<Result<_, _>>()?;
    Ok((objective, x))
}
