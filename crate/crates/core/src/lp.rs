//! Small dense linear programs: two-phase tableau simplex with Bland's rule.
//!
//! The decoy-state programs have about ten variables and a dozen rows, so a
//! dense tableau is both simplest and fast. All variables are non-negative;
//! optional upper bounds are added as ordinary rows.

use thiserror::Error;

use crate::scalar::Real;

const MAX_PIVOTS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("linear program is infeasible (phase-one residual {0:e})")]
    Infeasible(f64),
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex iteration limit reached")]
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint<T> {
    pub coeffs: Vec<T>,
    pub relation: Relation,
    pub rhs: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution<T> {
    pub objective: T,
    pub x: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram<T> {
    num_vars: usize,
    objective: Vec<T>,
    sense: Sense,
    constraints: Vec<Constraint<T>>,
}

impl<T: Real> LinearProgram<T> {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![T::zero(); num_vars],
            sense: Sense::Minimize,
            constraints: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn set_objective(&mut self, sense: Sense, coeffs: Vec<T>) -> &mut Self {
        assert_eq!(coeffs.len(), self.num_vars, "objective length");
        self.sense = sense;
        self.objective = coeffs;
        self
    }

    pub fn add_constraint(&mut self, coeffs: Vec<T>, relation: Relation, rhs: T) -> &mut Self {
        assert_eq!(coeffs.len(), self.num_vars, "constraint length");
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
        self
    }

    pub fn add_upper_bound(&mut self, var: usize, ub: T) -> &mut Self {
        let mut coeffs = vec![T::zero(); self.num_vars];
        coeffs[var] = T::one();
        self.add_constraint(coeffs, Relation::Le, ub)
    }

    pub fn constraints(&self) -> &[Constraint<T>] {
        &self.constraints
    }

    /// Check a point against every constraint within `tol`.
    pub fn is_feasible(&self, x: &[T], tol: T) -> bool {
        x.iter().all(|&v| v >= -tol)
            && self.constraints.iter().all(|c| {
                let lhs: T = c.coeffs.iter().zip(x).map(|(&a, &v)| a * v).sum();
                match c.relation {
                    Relation::Le => lhs <= c.rhs + tol,
                    Relation::Ge => lhs >= c.rhs - tol,
                    Relation::Eq => (lhs - c.rhs).abs() <= tol,
                }
            })
    }

    pub fn solve(&self) -> Result<Solution<T>, LpError> {
        Tableau::build(self).solve(self)
    }
}

struct Tableau<T> {
    /// `rows × (cols + 1)`, last column is the right-hand side.
    a: Vec<Vec<T>>,
    basis: Vec<usize>,
    cols: usize,
    first_artificial: usize,
    tol: T,
    pivot_tol: T,
}

impl<T: Real> Tableau<T> {
    fn build(lp: &LinearProgram<T>) -> Self {
        let n = lp.num_vars;
        let m = lp.constraints.len();
        let tol = T::epsilon().powf(T::lit(0.75));

        // normalize rows and make every right-hand side non-negative
        let mut rows: Vec<(Vec<T>, Relation, T)> = lp
            .constraints
            .iter()
            .map(|c| {
                let scale = c
                    .coeffs
                    .iter()
                    .fold(T::zero(), |acc, v| acc.max(v.abs()));
                let scale = if scale > T::zero() { scale } else { T::one() };
                let coeffs: Vec<T> = c.coeffs.iter().map(|&v| v / scale).collect();
                (coeffs, c.relation, c.rhs / scale)
            })
            .collect();
        for (coeffs, rel, rhs) in rows.iter_mut() {
            if *rhs < T::zero() {
                coeffs.iter_mut().for_each(|v| *v = -*v);
                *rhs = -*rhs;
                *rel = match *rel {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
            }
        }

        let n_slack = rows
            .iter()
            .filter(|r| r.1 != Relation::Eq)
            .count();
        let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
        let cols = n + n_slack + n_art;
        let first_artificial = n + n_slack;

        let mut a = vec![vec![T::zero(); cols + 1]; m];
        let mut basis = vec![0; m];
        let (mut s, mut art) = (n, first_artificial);
        for (i, (coeffs, rel, rhs)) in rows.into_iter().enumerate() {
            a[i][..n].copy_from_slice(&coeffs);
            a[i][cols] = rhs;
            match rel {
                Relation::Le => {
                    a[i][s] = T::one();
                    basis[i] = s;
                    s += 1;
                }
                Relation::Ge => {
                    a[i][s] = -T::one();
                    s += 1;
                    a[i][art] = T::one();
                    basis[i] = art;
                    art += 1;
                }
                Relation::Eq => {
                    a[i][art] = T::one();
                    basis[i] = art;
                    art += 1;
                }
            }
        }
        Self {
            a,
            basis,
            cols,
            first_artificial,
            tol,
            pivot_tol: T::epsilon().sqrt(),
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let width = self.cols + 1;
        let p = self.a[row][col];
        for j in 0..width {
            self.a[row][j] /= p;
        }
        let pivot_row = self.a[row].clone();
        for (i, r) in self.a.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let f = r[col];
            if f != T::zero() {
                for j in 0..width {
                    r[j] -= f * pivot_row[j];
                }
            }
        }
        self.basis[row] = col;
    }

    /// Minimize `cost · x` over the current feasible basis; columns at or past
    /// `col_limit` may not enter.
    fn optimize(&mut self, cost: &[T], col_limit: usize) -> Result<T, LpError> {
        for _ in 0..MAX_PIVOTS {
            // reduced costs d_j = c_j - c_B · a_j; Bland: first improving column
            let entering = (0..col_limit).find(|&j| {
                if self.basis.contains(&j) {
                    return false;
                }
                let mut d = cost[j];
                for (i, r) in self.a.iter().enumerate() {
                    d -= cost[self.basis[i]] * r[j];
                }
                d < -self.tol
            });
            let Some(col) = entering else {
                let value = self
                    .a
                    .iter()
                    .enumerate()
                    .map(|(i, r)| cost[self.basis[i]] * r[self.cols])
                    .sum();
                return Ok(value);
            };
            let mut best: Option<(usize, T)> = None;
            for (i, r) in self.a.iter().enumerate() {
                if r[col] > self.pivot_tol {
                    let ratio = r[self.cols].max(T::zero()) / r[col];
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br || (ratio == br && self.basis[i] < self.basis[bi]) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = best else {
                return Err(LpError::Unbounded);
            };
            self.pivot(row, col);
        }
        Err(LpError::IterationLimit)
    }

    fn solve(mut self, lp: &LinearProgram<T>) -> Result<Solution<T>, LpError> {
        let n = lp.num_vars;
        if self.first_artificial < self.cols {
            let mut phase1 = vec![T::zero(); self.cols];
            for c in phase1.iter_mut().skip(self.first_artificial) {
                *c = T::one();
            }
            let residual = self.optimize(&phase1, self.cols)?;
            let scale = self
                .a
                .iter()
                .fold(T::one(), |acc, r| acc.max(r[self.cols].abs()));
            if residual > self.tol * scale {
                return Err(LpError::Infeasible(residual.to_f64().unwrap_or(f64::NAN)));
            }
            // drive zero-valued artificials out of the basis where possible
            for row in 0..self.basis.len() {
                if self.basis[row] >= self.first_artificial {
                    let col = (0..self.first_artificial).max_by(|&i, &j| {
                        let (x, y) = (self.a[row][i].abs(), self.a[row][j].abs());
                        x.partial_cmp(&y).unwrap_or(std::cmp::Ordering::Equal)
                    });
                    if let Some(col) = col.filter(|&j| self.a[row][j].abs() > self.pivot_tol) {
                        self.pivot(row, col);
                    }
                }
            }
        }

        let mut cost = vec![T::zero(); self.cols];
        for (c, &v) in cost.iter_mut().zip(&lp.objective) {
            *c = match lp.sense {
                Sense::Minimize => v,
                Sense::Maximize => -v,
            };
        }
        let value = self.optimize(&cost, self.first_artificial)?;
        let mut x = vec![T::zero(); n];
        for (i, &b) in self.basis.iter().enumerate() {
            if b < n {
                x[b] = self.a[i][self.cols].max(T::zero());
            }
        }
        let objective = match lp.sense {
            Sense::Minimize => value,
            Sense::Maximize => -value,
        };
        Ok(Solution { objective, x })
    }
}
