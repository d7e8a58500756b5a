//! Dense two-phase simplex for small standard-form programs
//! `min c·x  s.t.  A x = b, x ≥ 0`.
//!
//! Bland's rule is used for both entering and leaving variables, so the
//! method terminates on degenerate problems (the dual Bell-functional LP is
//! highly degenerate).

const PIVOT_EPS: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub struct StandardForm {
    /// Row-major constraint matrix, one `Vec` per row.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal point; for `Infeasible` this is the phase-one point.
    pub x: Vec<f64>,
    pub objective: f64,
    /// Sum of artificial variables at the end of phase one (L1 infeasibility).
    pub infeasibility: f64,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.width]
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let p = self.rows[r][col];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[col];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        let f = self.obj[col];
        if f != 0.0 {
            for (v, pv) in self.obj.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
        }
        self.basis[r] = col;
    }

    /// Runs simplex iterations over columns `0..allowed`; returns `false` if unbounded.
    fn optimize(&mut self, allowed: usize) -> bool {
        loop {
            let entering = (0..allowed).find(|&j| self.obj[j] < -PIVOT_EPS);
            let Some(col) = entering else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][col];
                if a > PIVOT_EPS {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((r, best)) => {
                            if ratio < best - 1e-15
                                || (ratio <= best + 1e-15 && self.basis[i] < self.basis[r])
                            {
                                Some((i, ratio))
                            } else {
                                Some((r, best))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return false,
                Some((r, _)) => self.pivot(r, col),
            }
        }
    }

    fn primal(&self, n: usize) -> Vec<f64> {
        let mut x = vec![0.0; n];
        for (i, &j) in self.basis.iter().enumerate() {
            if j < n {
                x[j] = self.rhs(i).max(0.0);
            }
        }
        x
    }
}

/// Solves the program; `feas_tol` bounds the phase-one objective accepted as feasible.
pub fn solve(lp: &StandardForm, feas_tol: f64) -> LpSolution {
    let m = lp.a.len();
    let n = lp.c.len();
    let width = n + m;
    let mut rows = Vec::with_capacity(m);
    for (i, row) in lp.a.iter().enumerate() {
        debug_assert_eq!(row.len(), n);
        let flip = if lp.b[i] < 0.0 { -1.0 } else { 1.0 };
        let mut t: Vec<f64> = row.iter().map(|v| v * flip).collect();
        t.extend((0..m).map(|k| if k == i { 1.0 } else { 0.0 }));
        t.push(lp.b[i] * flip);
        rows.push(t);
    }
    // Phase one: minimise the sum of artificials.
    let mut obj = vec![0.0; width + 1];
    for j in n..width {
        obj[j] = 1.0;
    }
    for row in &rows {
        for (o, v) in obj.iter_mut().zip(row) {
            *o -= v;
        }
    }
    for j in n..width {
        obj[j] = 0.0;
    }
    let mut tab = Tableau {
        rows,
        obj,
        basis: (n..width).collect(),
        width,
    };
    tab.optimize(width);
    let infeasibility = -tab.obj[width];
    if infeasibility > feas_tol {
        let x = tab.primal(n);
        return LpSolution {
            status: LpStatus::Infeasible,
            objective: dot(&lp.c, &x),
            x,
            infeasibility,
        };
    }
    // Drive remaining artificials out of the basis, dropping redundant rows.
    let mut i = 0;
    while i < tab.rows.len() {
        if tab.basis[i] >= n {
            let col = (0..n).find(|&j| tab.rows[i][j].abs() > PIVOT_EPS);
            match col {
                Some(j) => tab.pivot(i, j),
                None => {
                    tab.rows.remove(i);
                    tab.basis.remove(i);
                    continue;
                }
            }
        }
        i += 1;
    }
    // Phase two objective row: reduced costs of c.
    let mut obj = vec![0.0; width + 1];
    obj[..n].copy_from_slice(&lp.c);
    for (row, &j) in tab.rows.iter().zip(&tab.basis) {
        let cb = lp.c[j];
        if cb != 0.0 {
            for (o, v) in obj.iter_mut().zip(row) {
                *o -= cb * v;
            }
        }
    }
    tab.obj = obj;
    let bounded = tab.optimize(n);
    let x = tab.primal(n);
    LpSolution {
        status: if bounded {
            LpStatus::Optimal
        } else {
            LpStatus::Unbounded
        },
        objective: dot(&lp.c, &x),
        x,
        infeasibility,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_optimum() {
        // min -x - y  s.t. x + 2y + s1 = 4, 3x + y + s2 = 6
        let lp = StandardForm {
            a: vec![vec![1.0, 2.0, 1.0, 0.0], vec![3.0, 1.0, 0.0, 1.0]],
            b: vec![4.0, 6.0],
            c: vec![-1.0, -1.0, 0.0, 0.0],
        };
        let sol = solve(&lp, 1e-12);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 1.6).abs() < 1e-12 && (sol.x[1] - 1.2).abs() < 1e-12);
        assert!((sol.objective + 2.8).abs() < 1e-12);
    }

    #[test]
    fn infeasible_program() {
        // x + y = 1 and x + y = 2
        let lp = StandardForm {
            a: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            b: vec![1.0, 2.0],
            c: vec![0.0, 0.0],
        };
        let sol = solve(&lp, 1e-12);
        assert_eq!(sol.status, LpStatus::Infeasible);
        assert!((sol.infeasibility - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unbounded_program() {
        // min -x  s.t. x - y = 0
        let lp = StandardForm {
            a: vec![vec![1.0, -1.0]],
            b: vec![0.0],
            c: vec![-1.0, 0.0],
        };
        assert_eq!(solve(&lp, 1e-12).status, LpStatus::Unbounded);
    }

    #[test]
    fn redundant_rows_are_dropped() {
        // x + y = 1 stated twice, plus negated RHS row.
        let lp = StandardForm {
            a: vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![-1.0, -1.0]],
            b: vec![1.0, 1.0, -1.0],
            c: vec![1.0, 2.0],
        };
        let sol = solve(&lp, 1e-12);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-12 && sol.x[1].abs() < 1e-12);
    }
}
