//! Dense two-phase simplex for the small linear programs of the common
//! precoder design. Bland's rule is used throughout, so the pivoting sequence
//! (and therefore the returned vertex) is deterministic.

use crate::error::{Result, SimError};

const EPS: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

/// `maximize c^T x  s.t.  rows, x >= 0`.
#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<(Vec<f64>, Relation, f64)>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
}

struct Tableau {
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        self.t[r][self.cols]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[row][col];
        for v in self.t[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[row].clone();
        for (r, line) in self.t.iter_mut().enumerate() {
            if r == row {
                continue;
            }
            let f = line[col];
            if f != 0.0 {
                for (v, pv) in line.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        self.basis[row] = col;
    }

    /// Runs simplex iterations maximizing `cost`; `allowed[j]` gates entering
    /// columns.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> Result<()> {
        let max_iter = 50 * (self.cols + self.t.len()) + 1000;
        for _ in 0..max_iter {
            let entering = (0..self.cols).find(|&j| {
                if !allowed[j] || self.basis.contains(&j) {
                    return false;
                }
                let reduced = cost[j] - self.basis.iter().enumerate().map(|(r, &b)| cost[b] * self.t[r][j]).sum::<f64>();
                reduced > EPS
            });
            let Some(col) = entering else {
                return Ok(());
            };
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.t.len() {
                let a = self.t[r][col];
                if a > EPS {
                    let ratio = self.rhs(r) / a;
                    best = match best {
                        None => Some((r, ratio)),
                        Some((br, bv)) => {
                            if ratio < bv - EPS || ((ratio - bv).abs() <= EPS && self.basis[r] < self.basis[br]) {
                                Some((r, ratio))
                            } else {
                                Some((br, bv))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = best else {
                return Err(SimError::Lp("unbounded objective".into()));
            };
            self.pivot(row, col);
        }
        Err(SimError::Lp("iteration limit reached".into()))
    }
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        Self {
            objective,
            rows: Vec::new(),
        }
    }

    pub fn constrain(&mut self, coeffs: Vec<f64>, rel: Relation, rhs: f64) -> &mut Self {
        self.rows.push((coeffs, rel, rhs));
        self
    }

    pub fn maximize(&self) -> Result<LpSolution> {
        let n = self.objective.len();
        if self.rows.iter().any(|(c, _, _)| c.len() != n) {
            return Err(SimError::Lp("constraint width does not match objective".into()));
        }
        // Normalize to non-negative right-hand sides.
        let rows: Vec<(Vec<f64>, Relation, f64)> = self
            .rows
            .iter()
            .map(|(c, rel, b)| {
                if *b < 0.0 {
                    let flipped = match rel {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (c.iter().map(|v| -v).collect(), flipped, -b)
                } else {
                    (c.clone(), *rel, *b)
                }
            })
            .collect();
        let slack_count = rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let art_count = rows.iter().filter(|r| r.1 != Relation::Le).count();
        let cols = n + slack_count + art_count;
        let mut t = vec![vec![0.0; cols + 1]; rows.len()];
        let mut basis = vec![0; rows.len()];
        let mut is_art = vec![false; cols];
        let (mut s, mut a) = (n, n + slack_count);
        for (r, (c, rel, b)) in rows.iter().enumerate() {
            t[r][..n].copy_from_slice(c);
            t[r][cols] = *b;
            match rel {
                Relation::Le => {
                    t[r][s] = 1.0;
                    basis[r] = s;
                    s += 1;
                }
                Relation::Ge => {
                    t[r][s] = -1.0;
                    s += 1;
                    t[r][a] = 1.0;
                    is_art[a] = true;
                    basis[r] = a;
                    a += 1;
                }
                Relation::Eq => {
                    t[r][a] = 1.0;
                    is_art[a] = true;
                    basis[r] = a;
                    a += 1;
                }
            }
        }
        let mut tab = Tableau { t, basis, cols };

        if art_count > 0 {
            let cost1: Vec<f64> = (0..cols).map(|j| if is_art[j] { -1.0 } else { 0.0 }).collect();
            tab.optimize(&cost1, &vec![true; cols])?;
            let infeas: f64 = tab.basis.iter().enumerate().filter(|(_, &b)| is_art[b]).map(|(r, _)| tab.rhs(r)).sum();
            if infeas > FEAS_TOL {
                return Err(SimError::Lp(format!("infeasible (phase-one residual {infeas:e})")));
            }
            // Drive zero-level artificials out of the basis; drop redundant rows.
            let mut r = 0;
            while r < tab.t.len() {
                if is_art[tab.basis[r]] {
                    match (0..cols).find(|&j| !is_art[j] && tab.t[r][j].abs() > EPS) {
                        Some(j) => {
                            tab.pivot(r, j);
                            r += 1;
                        }
                        None => {
                            tab.t.remove(r);
                            tab.basis.remove(r);
                        }
                    }
                } else {
                    r += 1;
                }
            }
        }

        let mut cost2 = vec![0.0; cols];
        cost2[..n].copy_from_slice(&self.objective);
        let allowed: Vec<bool> = is_art.iter().map(|a| !a).collect();
        tab.optimize(&cost2, &allowed)?;

        let mut x = vec![0.0; n];
        for (r, &b) in tab.basis.iter().enumerate() {
            if b < n {
                x[b] = tab.rhs(r).max(0.0);
            }
        }
        let value = x.iter().zip(&self.objective).map(|(a, b)| a * b).sum();
        Ok(LpSolution { x, value })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let mut lp = LinearProgram::new(vec![3.0, 5.0]);
        lp.constrain(vec![1.0, 0.0], Relation::Le, 4.0)
            .constrain(vec![0.0, 2.0], Relation::Le, 12.0)
            .constrain(vec![3.0, 2.0], Relation::Le, 18.0);
        let s = lp.maximize().unwrap();
        assert!((s.value - 36.0).abs() < 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_constraints() {
        // max x s.t. x + y = 1, y >= 0.25 -> x = 0.75
        let mut lp = LinearProgram::new(vec![1.0, 0.0]);
        lp.constrain(vec![1.0, 1.0], Relation::Eq, 1.0)
            .constrain(vec![0.0, 1.0], Relation::Ge, 0.25);
        let s = lp.maximize().unwrap();
        assert!((s.x[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn infeasible_is_reported() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.constrain(vec![1.0], Relation::Ge, 2.0).constrain(vec![1.0], Relation::Le, 1.0);
        assert!(lp.maximize().is_err());
    }

    #[test]
    fn unbounded_is_reported() {
        let mut lp = LinearProgram::new(vec![1.0, 0.0]);
        lp.constrain(vec![0.0, 1.0], Relation::Le, 1.0);
        assert!(lp.maximize().is_err());
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let mut lp = LinearProgram::new(vec![1.0, 2.0]);
        lp.constrain(vec![1.0, 1.0], Relation::Eq, 1.0)
            .constrain(vec![2.0, 2.0], Relation::Eq, 2.0);
        let s = lp.maximize().unwrap();
        assert!((s.value - 2.0).abs() < 1e-12);
    }
}
