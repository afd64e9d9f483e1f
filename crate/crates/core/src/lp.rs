//! Dense two-phase primal simplex, generic over [`Scalar`].
//!
//! Instantiated with `Rational` for the auditors (exact verdicts) and with
//! `f64` for the inner loops of the solvers. Variables are nonnegative unless
//! declared free; the objective is always maximized.

use thiserror::Error;

use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum LpError {
    #[error("infeasible")]
    Infeasible,
    #[error("unbounded")]
    Unbounded,
    #[error("iteration limit reached")]
    IterationLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Row<T> {
    pub coeffs: Vec<(usize, T)>,
    pub sense: Sense,
    pub rhs: T,
}

#[derive(Debug, Clone)]
pub struct LinearProgram<T> {
    free: Vec<bool>,
    objective: Vec<T>,
    rows: Vec<Row<T>>,
    max_iter: usize,
}

#[derive(Debug, Clone)]
pub struct LpSolution<T> {
    pub x: Vec<T>,
    pub objective: T,
}

const DEGENERATE_STREAK: usize = 30;

impl<T: Scalar> LinearProgram<T> {
    pub fn new(num_vars: usize) -> Self {
        Self {
            free: vec![false; num_vars],
            objective: vec![T::zero(); num_vars],
            rows: Vec::new(),
            max_iter: 200_000,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.free.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Appends a nonnegative variable and returns its index.
    pub fn add_var(&mut self) -> usize {
        self.free.push(false);
        self.objective.push(T::zero());
        self.free.len() - 1
    }

    /// Appends a sign-unrestricted variable and returns its index.
    pub fn add_free_var(&mut self) -> usize {
        let v = self.add_var();
        self.free[v] = true;
        v
    }

    pub fn set_free(&mut self, var: usize) {
        self.free[var] = true;
    }

    pub fn set_objective(&mut self, var: usize, coeff: T) {
        self.objective[var] = coeff;
    }

    pub fn clear_objective(&mut self) {
        for c in &mut self.objective {
            *c = T::zero();
        }
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, T)>, sense: Sense, rhs: T) {
        debug_assert!(coeffs.iter().all(|(v, _)| *v < self.free.len()));
        self.rows.push(Row { coeffs, sense, rhs });
    }

    pub fn rows(&self) -> &[Row<T>] {
        &self.rows
    }

    /// Checks a candidate point against every row (with the scalar's own comparison semantics).
    pub fn is_feasible(&self, x: &[T]) -> bool {
        if x.len() != self.free.len() {
            return false;
        }
        if x.iter().zip(&self.free).any(|(v, &f)| !f && v.is_neg()) {
            return false;
        }
        self.rows.iter().all(|row| {
            let lhs = row
                .coeffs
                .iter()
                .fold(T::zero(), |acc, (v, c)| acc + c.clone() * &x[*v]);
            let d = lhs - &row.rhs;
            match row.sense {
                Sense::Le => !d.is_pos(),
                Sense::Ge => !d.is_neg(),
                Sense::Eq => d.is_zeroish(),
            }
        })
    }

    pub fn solve(&self) -> Result<LpSolution<T>, LpError> {
        Tableau::build(self).run(self)
    }
}

struct Tableau<T> {
    // m rows of (ncols + 1) entries, last entry is the right-hand side
    a: Vec<Vec<T>>,
    basis: Vec<usize>,
    ncols: usize,
    // column -> (original var, sign)
    col_map: Vec<Option<(usize, bool)>>,
    first_artificial: usize,
}

impl<T: Scalar> Tableau<T> {
    fn build(lp: &LinearProgram<T>) -> Self {
        let mut col_map = Vec::new();
        let mut var_cols = Vec::with_capacity(lp.free.len());
        for (v, &free) in lp.free.iter().enumerate() {
            let pos = col_map.len();
            col_map.push(Some((v, true)));
            let neg = if free {
                col_map.push(Some((v, false)));
                Some(pos + 1)
            } else {
                None
            };
            var_cols.push((pos, neg));
        }
        let n_struct = col_map.len();
        let m = lp.rows.len();

        // normalize to nonnegative right-hand sides
        let mut norm: Vec<(Vec<(usize, T)>, Sense, T)> = Vec::with_capacity(m);
        for row in &lp.rows {
            let flip = row.rhs.is_neg();
            let mut coeffs = Vec::with_capacity(row.coeffs.len() * 2);
            for (v, c) in &row.coeffs {
                let c = if flip { -c.clone() } else { c.clone() };
                let (pos, neg) = var_cols[*v];
                if let Some(neg) = neg {
                    coeffs.push((neg, -c.clone()));
                }
                coeffs.push((pos, c));
            }
            let sense = match (row.sense, flip) {
                (Sense::Le, true) => Sense::Ge,
                (Sense::Ge, true) => Sense::Le,
                (s, _) => s,
            };
            let rhs = if flip { -row.rhs.clone() } else { row.rhs.clone() };
            norm.push((coeffs, sense, rhs));
        }

        let n_slack = norm.iter().filter(|r| r.1 != Sense::Eq).count();
        let n_art = norm.iter().filter(|r| r.1 != Sense::Le).count();
        let ncols = n_struct + n_slack + n_art;
        col_map.extend(std::iter::repeat_n(None, n_slack + n_art));
        let first_artificial = n_struct + n_slack;

        let mut a = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let mut slack = n_struct;
        let mut art = first_artificial;
        for (coeffs, sense, rhs) in norm {
            let mut row = vec![T::zero(); ncols + 1];
            for (c, val) in coeffs {
                row[c] = row[c].clone() + &val;
            }
            row[ncols] = rhs;
            match sense {
                Sense::Le => {
                    row[slack] = T::one();
                    basis.push(slack);
                    slack += 1;
                }
                Sense::Ge => {
                    row[slack] = -T::one();
                    slack += 1;
                    row[art] = T::one();
                    basis.push(art);
                    art += 1;
                }
                Sense::Eq => {
                    row[art] = T::one();
                    basis.push(art);
                    art += 1;
                }
            }
            a.push(row);
        }
        Self {
            a,
            basis,
            ncols,
            col_map,
            first_artificial,
        }
    }

    fn pivot(&mut self, obj: &mut [T], r: usize, c: usize) {
        let piv = self.a[r][c].clone();
        let width = self.ncols + 1;
        let nz: Vec<usize> = (0..width).filter(|&j| !self.a[r][j].is_zero()).collect();
        for &j in &nz {
            self.a[r][j] = self.a[r][j].clone() / &piv;
        }
        let prow: Vec<(usize, T)> = nz.iter().map(|&j| (j, self.a[r][j].clone())).collect();
        for i in 0..self.a.len() {
            if i == r {
                continue;
            }
            let f = self.a[i][c].clone();
            if f.is_zero() {
                continue;
            }
            let row = &mut self.a[i];
            for (j, pv) in &prow {
                row[*j] = row[*j].clone() - f.clone() * pv;
            }
            if !T::EXACT {
                row[c] = T::zero();
            }
        }
        let f = obj[c].clone();
        if !f.is_zero() {
            for (j, pv) in &prow {
                obj[*j] = obj[*j].clone() - f.clone() * pv;
            }
            if !T::EXACT {
                obj[c] = T::zero();
            }
        }
        self.basis[r] = c;
    }

    /// Maximizes with the given reduced-cost row over the first `active` columns.
    fn optimize(&mut self, obj: &mut [T], active: usize, max_iter: usize) -> Result<(), LpError> {
        let mut degenerate = 0usize;
        for _ in 0..max_iter {
            let bland = degenerate >= DEGENERATE_STREAK;
            let mut enter = None;
            for (j, rc) in obj.iter().enumerate().take(active) {
                if rc.is_neg() {
                    match enter {
                        None => enter = Some(j),
                        Some(e) if !bland && *rc < obj[e] => enter = Some(j),
                        _ => {}
                    }
                    if bland {
                        break;
                    }
                }
            }
            let Some(c) = enter else {
                return Ok(());
            };
            let mut leave: Option<(usize, T)> = None;
            for i in 0..self.a.len() {
                let aic = &self.a[i][c];
                if !aic.is_pos() {
                    continue;
                }
                if !T::EXACT && aic.as_f64() < 1e-9 {
                    continue;
                }
                let ratio = self.a[i][self.ncols].clone() / aic;
                let better = match &leave {
                    None => true,
                    Some((li, lr)) => {
                        ratio < *lr
                            || (matches!(ratio.partial_cmp(lr), Some(std::cmp::Ordering::Equal) | None)
                                && self.basis[i] < self.basis[*li])
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
            let Some((r, ratio)) = leave else {
                return Err(LpError::Unbounded);
            };
            if ratio.is_zeroish() {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(obj, r, c);
        }
        Err(LpError::IterationLimit)
    }

    fn run(mut self, lp: &LinearProgram<T>) -> Result<LpSolution<T>, LpError> {
        let width = self.ncols + 1;
        let max_iter = lp.max_iter;

        if self.first_artificial < self.ncols {
            // phase 1: maximize -(sum of artificials)
            let mut obj = vec![T::zero(); width];
            for o in obj.iter_mut().take(self.ncols).skip(self.first_artificial) {
                *o = T::one();
            }
            for i in 0..self.a.len() {
                if self.basis[i] >= self.first_artificial {
                    for (o, v) in obj.iter_mut().zip(&self.a[i]) {
                        *o = o.clone() - v;
                    }
                }
            }
            self.optimize(&mut obj, self.ncols, max_iter)?;
            // obj[rhs] holds the phase-1 objective value (= -sum of artificials)
            if obj[self.ncols].is_neg() {
                return Err(LpError::Infeasible);
            }
            // drive remaining artificials out of the basis
            let mut i = 0;
            while i < self.a.len() {
                if self.basis[i] >= self.first_artificial {
                    let col = (0..self.first_artificial).find(|&j| {
                        let v = &self.a[i][j];
                        if T::EXACT {
                            !v.is_zero()
                        } else {
                            v.as_f64().abs() > 1e-9
                        }
                    });
                    match col {
                        Some(j) => self.pivot(&mut obj, i, j),
                        None => {
                            self.a.remove(i);
                            self.basis.remove(i);
                            continue;
                        }
                    }
                }
                i += 1;
            }
        }

        // phase 2
        let active = self.first_artificial;
        let mut obj = vec![T::zero(); width];
        for (j, m) in self.col_map.iter().enumerate() {
            if let Some((v, pos)) = m {
                let c = lp.objective[*v].clone();
                obj[j] = if *pos { -c } else { c };
            }
        }
        for i in 0..self.a.len() {
            let b = self.basis[i];
            let f = obj[b].clone();
            if !f.is_zero() {
                for (o, v) in obj.iter_mut().zip(&self.a[i]) {
                    *o = o.clone() - f.clone() * v;
                }
            }
        }
        self.optimize(&mut obj, active, max_iter)?;

        let mut x = vec![T::zero(); lp.free.len()];
        for (i, &b) in self.basis.iter().enumerate() {
            if let Some(Some((v, pos))) = self.col_map.get(b) {
                let val = self.a[i][self.ncols].clone();
                x[*v] = if *pos { x[*v].clone() + val } else { x[*v].clone() - val };
            }
        }
        let objective = lp
            .objective
            .iter()
            .zip(&x)
            .fold(T::zero(), |acc, (c, v)| acc + c.clone() * v);
        Ok(LpSolution { x, objective })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{int, rat, Rational};

    #[test]
    fn textbook_max() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18  -> (2, 6), 36
        let mut lp = LinearProgram::<Rational>::new(2);
        lp.set_objective(0, int(3));
        lp.set_objective(1, int(5));
        lp.add_row(vec![(0, int(1))], Sense::Le, int(4));
        lp.add_row(vec![(1, int(2))], Sense::Le, int(12));
        lp.add_row(vec![(0, int(3)), (1, int(2))], Sense::Le, int(18));
        let s = lp.solve().unwrap();
        assert_eq!(s.x, vec![int(2), int(6)]);
        assert_eq!(s.objective, int(36));
    }

    #[test]
    fn equality_and_ge_rows() {
        // min x + y (max -x - y) s.t. x + y >= 1, x - y = 1/2
        let mut lp = LinearProgram::<Rational>::new(2);
        lp.set_objective(0, int(-1));
        lp.set_objective(1, int(-1));
        lp.add_row(vec![(0, int(1)), (1, int(1))], Sense::Ge, int(1));
        lp.add_row(vec![(0, int(1)), (1, int(-1))], Sense::Eq, rat(1, 2));
        let s = lp.solve().unwrap();
        assert_eq!(s.x, vec![rat(3, 4), rat(1, 4)]);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = LinearProgram::<Rational>::new(1);
        lp.add_row(vec![(0, int(1))], Sense::Ge, int(2));
        lp.add_row(vec![(0, int(1))], Sense::Le, int(1));
        assert_eq!(lp.solve().unwrap_err(), LpError::Infeasible);

        let mut lp = LinearProgram::<f64>::new(1);
        lp.set_objective(0, 1.0);
        assert_eq!(lp.solve().unwrap_err(), LpError::Unbounded);
    }

    #[test]
    fn free_variables_and_negative_rhs() {
        // max t s.t. t <= -3 (t free)
        let mut lp = LinearProgram::<Rational>::new(0);
        let t = lp.add_free_var();
        lp.set_objective(t, int(1));
        lp.add_row(vec![(t, int(1))], Sense::Le, int(-3));
        assert_eq!(lp.solve().unwrap().x[t], int(-3));
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::<Rational>::new(2);
        lp.set_objective(0, int(1));
        lp.add_row(vec![(0, int(1)), (1, int(1))], Sense::Eq, int(1));
        lp.add_row(vec![(0, int(2)), (1, int(2))], Sense::Eq, int(2));
        let s = lp.solve().unwrap();
        assert_eq!(s.objective, int(1));
        assert!(lp.is_feasible(&s.x));
    }

    #[test]
    fn float_matches_exact_on_small_instance() {
        let build = |f: &dyn Fn(i64) -> f64| {
            let mut lp = LinearProgram::<f64>::new(3);
            lp.set_objective(0, f(2));
            lp.set_objective(1, f(3));
            lp.set_objective(2, f(1));
            lp.add_row(vec![(0, f(1)), (1, f(1)), (2, f(1))], Sense::Le, f(4));
            lp.add_row(vec![(0, f(1)), (1, f(3))], Sense::Le, f(6));
            lp.add_row(vec![(2, f(1))], Sense::Ge, f(1));
            lp
        };
        let s = build(&|v| v as f64).solve().unwrap();
        // optimum: z = 1, x + y = 3, x + 3y = 6 -> x = 1.5, y = 1.5 -> 3 + 4.5 + 1
        assert!((s.objective - 8.5).abs() < 1e-9);
    }
}
