//! Dense two-phase primal simplex with Bland's anti-cycling rule.
//!
//! Problems are stated as
//!
//! ```text
//!   minimize    c^T x
//!   subject to  A_eq x  = b_eq
//!               A_le x <= b_le
//!               x_j >= 0   unless x_j is declared free
//! ```
//!
//! Free variables are split into positive and negative parts. Pivoting is
//! fully deterministic: the entering column is the lowest-index column with a
//! negative reduced cost and ties in the ratio test go to the lowest basis
//! index.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 50_000;

#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub cost: Vec<f64>,
    pub eq: Vec<(Vec<f64>, f64)>,
    pub le: Vec<(Vec<f64>, f64)>,
    pub free: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

impl LinearProgram {
    pub fn new(cost: Vec<f64>) -> Self {
        let n = cost.len();
        Self {
            cost,
            eq: Vec::new(),
            le: Vec::new(),
            free: vec![false; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn equality(mut self, row: Vec<f64>, rhs: f64) -> Self {
        self.eq.push((row, rhs));
        self
    }

    pub fn inequality(mut self, row: Vec<f64>, rhs: f64) -> Self {
        self.le.push((row, rhs));
        self
    }

    pub fn free_var(mut self, j: usize) -> Self {
        self.free[j] = true;
        self
    }

    pub fn minimize(&self) -> Result<LpSolution> {
        solve(self)
    }

    /// Maximizes `cost^T x` by minimizing its negation.
    pub fn maximize(&self) -> Result<LpSolution> {
        let mut neg = self.clone();
        neg.cost.iter_mut().for_each(|c| *c = -*c);
        let mut sol = solve(&neg)?;
        sol.objective = -sol.objective;
        Ok(sol)
    }
}

struct Tableau {
    // each row holds `ncols` coefficients followed by the right-hand side
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    ncols: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.ncols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        self.rows[r].iter_mut().for_each(|v| *v /= p);
        let prow = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                row.iter_mut().zip(&prow).for_each(|(v, pv)| *v -= f * pv);
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    fn reduced_cost(&self, cost: &[f64], j: usize) -> f64 {
        let mut d = cost[j];
        for (i, &b) in self.basis.iter().enumerate() {
            d -= cost[b] * self.rows[i][j];
        }
        d
    }

    fn objective(&self, cost: &[f64]) -> f64 {
        self.basis
            .iter()
            .enumerate()
            .map(|(i, &b)| cost[b] * self.rhs(i))
            .sum()
    }

    /// Runs primal simplex iterations over the columns marked `allowed`.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> Result<()> {
        for _ in 0..MAX_PIVOTS {
            let entering =
                (0..self.ncols).find(|&j| allowed[j] && self.reduced_cost(cost, j) < -PIVOT_TOL);
            let Some(c) = entering else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][c];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-14
                                || (ratio <= lr + 1e-14 && self.basis[i] < self.basis[li])
                            {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, c),
                None => return Err(Error::Unbounded),
            }
        }
        Err(Error::NonConvergence("simplex pivot limit reached".into()))
    }
}

fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    let n = lp.n_vars();
    for (row, _) in lp.eq.iter().chain(&lp.le) {
        if row.len() != n {
            return Err(Error::Dimension(format!(
                "constraint row has {} entries, expected {n}",
                row.len()
            )));
        }
    }

    // column layout: [x+ (n) | x- for free vars | slacks | artificials]
    let free_idx: Vec<usize> = (0..n).filter(|&j| lp.free[j]).collect();
    let n_split = n + free_idx.len();
    let n_slack = lp.le.len();
    let m = lp.eq.len() + lp.le.len();
    let n_struct = n_split + n_slack;
    let ncols = n_struct + m;

    let mut rows = Vec::with_capacity(m);
    for (k, (row, rhs)) in lp.eq.iter().chain(&lp.le).enumerate() {
        let mut t = vec![0.0; ncols + 1];
        t[..n].copy_from_slice(row);
        for (f, &j) in free_idx.iter().enumerate() {
            t[n + f] = -row[j];
        }
        if k >= lp.eq.len() {
            t[n_split + (k - lp.eq.len())] = 1.0;
        }
        t[ncols] = *rhs;
        if *rhs < 0.0 {
            t.iter_mut().for_each(|v| *v = -*v);
        }
        t[n_struct + k] = 1.0;
        rows.push(t);
    }
    let mut tab = Tableau {
        rows,
        basis: (n_struct..ncols).collect(),
        ncols,
    };

    // phase I: minimize the sum of artificials
    let mut phase1 = vec![0.0; ncols];
    phase1[n_struct..].iter_mut().for_each(|c| *c = 1.0);
    let all = vec![true; ncols];
    tab.optimize(&phase1, &all)?;
    let scale = 1.0
        + lp.eq
            .iter()
            .chain(&lp.le)
            .map(|(_, b)| b.abs())
            .fold(0.0, f64::max);
    if tab.objective(&phase1) > FEAS_TOL * scale {
        return Err(Error::Infeasible);
    }

    // drive zero-level artificials out of the basis; drop redundant rows
    let mut i = 0;
    while i < tab.rows.len() {
        if tab.basis[i] >= n_struct {
            let col = (0..n_struct).find(|&j| tab.rows[i][j].abs() > 1e-9);
            match col {
                Some(c) => {
                    tab.pivot(i, c);
                    i += 1;
                }
                None => {
                    tab.rows.remove(i);
                    tab.basis.remove(i);
                }
            }
        } else {
            i += 1;
        }
    }

    let mut cost = vec![0.0; ncols];
    cost[..n].copy_from_slice(&lp.cost);
    for (f, &j) in free_idx.iter().enumerate() {
        cost[n + f] = -lp.cost[j];
    }
    let mut allowed = vec![true; ncols];
    allowed[n_struct..].iter_mut().for_each(|a| *a = false);
    tab.optimize(&cost, &allowed)?;

    let mut split = vec![0.0; ncols];
    for (r, &b) in tab.basis.iter().enumerate() {
        split[b] = tab.rhs(r);
    }
    let mut x = split[..n].to_vec();
    for (f, &j) in free_idx.iter().enumerate() {
        x[j] -= split[n + f];
    }
    let objective = x.iter().zip(&lp.cost).map(|(a, c)| a * c).sum();
    Ok(LpSolution { x, objective })
}
