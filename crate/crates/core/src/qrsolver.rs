//! Quantile regression by a bounded-variable simplex on the dual program.
//!
//! The primal problem is `min_g sum_i rho_tau(y_i - z_i' g)`. Its dual is
//!
//! ```text
//! max_a  y' a   subject to  Z' a = (1 - tau) Z' 1,  0 <= a <= 1,
//! ```
//!
//! whose solution is the vector of regression rank-scores. Working with
//! `d = a - (1 - tau)` the box becomes `tau - 1 <= d <= tau` and the equality
//! `Z' d = 0`. A basis is a set of `p` observations fitted exactly by the
//! primal; every other `d_i` sits at a bound matching the sign of its
//! residual. The solver is a dual simplex in the style of Barrodale and
//! Roberts: it drops a basic observation whose `d` leaves the box and walks
//! the primal along the resulting edge through as many residual sign changes
//! as keep the loss decreasing (a weighted-median line search). Ties are
//! broken by lowest observation index.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::Lu;

/// Primal and dual solution at one quantile level.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFit {
    pub tau: f64,
    /// Coefficients on the columns of the design.
    pub gamma_hat: Vec<f64>,
    /// Regression rank-scores, each in `[0, 1]`.
    pub a_hat: Vec<f64>,
    /// Quantile loss at `gamma_hat`.
    pub objective: f64,
    /// Observations fitted exactly at the optimal vertex, ascending.
    pub basis: Vec<usize>,
    pub pivots: usize,
}

impl QuantileFit {
    /// Max-norm of `Z' a - (1 - tau) Z' 1`.
    pub fn dual_residual(&self, z: &DMatrix<f64>) -> f64 {
        let p = z.ncols();
        (0..p)
            .map(|j| {
                z.column(j)
                    .iter()
                    .zip(&self.a_hat)
                    .map(|(zij, a)| zij * (a - (1.0 - self.tau)))
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max)
    }

    /// Dual objective `y' a - (1 - tau) y' 1`, equal to the primal loss at
    /// optimality.
    pub fn dual_objective(&self, y: &[f64]) -> f64 {
        y.iter().zip(&self.a_hat).map(|(yi, a)| yi * (a - (1.0 - self.tau))).sum()
    }
}

/// Quantile check loss `u (tau - 1{u < 0})`.
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// Score function `b_i = a_i - (1 - tau)`, each entry in `[-(1 - tau), tau]`.
pub fn rank_score_function(fit: &QuantileFit) -> Vec<f64> {
    fit.a_hat.iter().map(|a| a - (1.0 - fit.tau)).collect()
}

/// Fits the `tau`-th regression quantile of `y` on the columns of `z`.
pub fn fit(z: &DMatrix<f64>, y: &[f64], tau: f64) -> Result<QuantileFit> {
    let n = z.nrows();
    let p = z.ncols();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("y has {} entries, Z has {n} rows", y.len())));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("tau = {tau} is not in (0, 1)")));
    }
    if p == 0 || n < p {
        return Err(Error::Degenerate(format!("need at least p = {p} > 0 observations, got {n}")));
    }
    let mut distinct = y.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < p + 1 {
        return Err(Error::Degenerate(format!(
            "response has {} distinct values, at least p + 1 = {} required",
            distinct.len(),
            p + 1
        )));
    }

    let rows: Vec<f64> = (0..n).flat_map(|i| (0..p).map(move |j| (i, j))).map(|(i, j)| z[(i, j)]).collect();
    let mut solver = Simplex::new(&rows, n, p, y, tau)?;
    solver.run(50 * n)?;
    Ok(solver.into_fit())
}

struct Simplex<'a> {
    rows: &'a [f64],
    n: usize,
    p: usize,
    y: &'a [f64],
    tau: f64,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    /// Bound status of nonbasic observations: true means `d_i = tau`.
    upper: Vec<bool>,
    gamma: Vec<f64>,
    resid: Vec<f64>,
    d: Vec<f64>,
    lu: Option<Lu>,
    pivots: usize,
    zero_tol: f64,
}

const PIVOT_TOL: f64 = 1e-11;
const DUAL_TOL: f64 = 1e-10;

impl<'a> Simplex<'a> {
    fn new(rows: &'a [f64], n: usize, p: usize, y: &'a [f64], tau: f64) -> Result<Self> {
        let y_scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let basis = initial_basis(rows, n, p, y, tau)?;
        let mut in_basis = vec![false; n];
        for &i in &basis {
            in_basis[i] = true;
        }
        let mut s = Simplex {
            rows,
            n,
            p,
            y,
            tau,
            basis,
            in_basis,
            upper: vec![true; n],
            gamma: vec![0.0; p],
            resid: vec![0.0; n],
            d: vec![0.0; n],
            lu: None,
            pivots: 0,
            zero_tol: 1e-12 * y_scale,
        };
        s.refresh()?;
        // Zero-residual nonbasic points start at the bound that minimizes the
        // initial dual infeasibility; any choice is valid.
        Ok(s)
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.p..(i + 1) * self.p]
    }

    fn basis_matrix(&self) -> Vec<f64> {
        self.basis.iter().flat_map(|&i| self.row(i).iter().copied()).collect()
    }

    /// Recomputes the primal vertex, residuals and basic duals.
    fn refresh(&mut self) -> Result<()> {
        let p = self.p;
        let lu = Lu::factor(self.basis_matrix(), p, PIVOT_TOL)
            .ok_or_else(|| Error::Degenerate("basis became singular".into()))?;
        let yb: Vec<f64> = self.basis.iter().map(|&i| self.y[i]).collect();
        self.gamma = lu.solve(&yb);
        for i in 0..self.n {
            if self.in_basis[i] {
                self.resid[i] = 0.0;
                continue;
            }
            let fitted: f64 = self.row(i).iter().zip(&self.gamma).map(|(a, b)| a * b).sum();
            let r = self.y[i] - fitted;
            self.resid[i] = r;
            if r > self.zero_tol {
                self.upper[i] = true;
            } else if r < -self.zero_tol {
                self.upper[i] = false;
            }
        }
        // Z_h' d_h = -sum_{i not in h} z_i d_i
        let mut rhs = vec![0.0; p];
        for i in 0..self.n {
            if self.in_basis[i] {
                continue;
            }
            let di = if self.upper[i] { self.tau } else { self.tau - 1.0 };
            self.d[i] = di;
            for (r, zij) in rhs.iter_mut().zip(self.row(i)) {
                *r -= zij * di;
            }
        }
        let dh = lu.solve_transpose(&rhs);
        for (k, &i) in self.basis.iter().enumerate() {
            self.d[i] = dh[k];
        }
        self.lu = Some(lu);
        Ok(())
    }

    fn run(&mut self, max_pivots: usize) -> Result<()> {
        loop {
            // Bland: lowest observation index among infeasible basic duals.
            let leaving = self
                .basis
                .iter()
                .enumerate()
                .filter(|&(_, &i)| self.d[i] > self.tau + DUAL_TOL || self.d[i] < self.tau - 1.0 - DUAL_TOL)
                .min_by_key(|&(_, &i)| i)
                .map(|(k, &i)| (k, i));
            let Some((pos, obs)) = leaving else {
                return Ok(());
            };
            if self.pivots >= max_pivots {
                return Err(Error::NotConverged(max_pivots));
            }
            self.pivot(pos, obs)?;
            self.pivots += 1;
            self.refresh()?;
        }
    }

    fn pivot(&mut self, pos: usize, obs: usize) -> Result<()> {
        let p = self.p;
        let to_upper = self.d[obs] > self.tau;
        let sign = if to_upper { 1.0 } else { -1.0 };
        // Edge direction: residual of `obs` grows as sign * t, other basic
        // residuals stay at zero.
        let mut e = vec![0.0; p];
        e[pos] = -sign;
        let delta = self.lu.as_ref().expect("factored").solve(&e);
        let mut slope = if to_upper { self.d[obs] - self.tau } else { self.tau - 1.0 - self.d[obs] };

        let scale = delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut candidates: Vec<(f64, usize, f64)> = Vec::new();
        for i in 0..self.n {
            if self.in_basis[i] {
                continue;
            }
            let c: f64 = self.row(i).iter().zip(&delta).map(|(a, b)| a * b).sum();
            let row_scale = self.row(i).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if c.abs() <= 1e-12 * scale * row_scale.max(1.0) {
                continue;
            }
            let r = self.resid[i];
            if self.upper[i] && c > 0.0 {
                candidates.push((r.max(0.0) / c, i, c));
            } else if !self.upper[i] && c < 0.0 {
                candidates.push((r.min(0.0) / c, i, c));
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut entering = None;
        for &(_, i, c) in &candidates {
            slope -= c.abs();
            if slope <= DUAL_TOL {
                entering = Some(i);
                break;
            }
            // Crossed without stopping: residual changes sign.
            self.upper[i] = !self.upper[i];
        }
        let Some(entering) = entering else {
            return Err(Error::Degenerate("no entering observation; design may be rank deficient".into()));
        };

        self.in_basis[obs] = false;
        self.upper[obs] = to_upper;
        self.in_basis[entering] = true;
        self.basis[pos] = entering;
        Ok(())
    }

    fn into_fit(self) -> QuantileFit {
        let tau = self.tau;
        let a_hat: Vec<f64> = self.d.iter().map(|d| (d + 1.0 - tau).clamp(0.0, 1.0)).collect();
        let objective = self.resid.iter().map(|&r| check_loss(r, tau)).sum();
        let mut basis = self.basis.clone();
        basis.sort_unstable();
        QuantileFit { tau, gamma_hat: self.gamma, a_hat, objective, basis, pivots: self.pivots }
    }
}

/// Starting vertex: observations closest to the `tau`-quantile of the
/// least-squares residuals, taken greedily while linearly independent.
/// Depends on `y` only through least-squares residuals, so it is unchanged
/// by `y -> c y + Z b` up to ordering ties.
fn initial_basis(rows: &[f64], n: usize, p: usize, y: &[f64], tau: f64) -> Result<Vec<usize>> {
    let resid = least_squares_residuals(rows, n, p, y)?;
    let mut sorted = resid.clone();
    sorted.sort_by(f64::total_cmp);
    let q = sorted[((tau * n as f64).floor() as usize).min(n - 1)];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| (resid[a] - q).abs().total_cmp(&(resid[b] - q).abs()).then(a.cmp(&b)));

    let mut basis = Vec::with_capacity(p);
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(p);
    for &i in &order {
        let row = &rows[i * p..(i + 1) * p];
        let norm0 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            continue;
        }
        let mut v: Vec<f64> = row.to_vec();
        for _ in 0..2 {
            for u in &ortho {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (vk, uk) in v.iter_mut().zip(u) {
                    *vk -= dot * uk;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 * norm0 {
            for vk in v.iter_mut() {
                *vk /= norm;
            }
            ortho.push(v);
            basis.push(i);
            if basis.len() == p {
                return Ok(basis);
            }
        }
    }
    Err(Error::Degenerate(format!("design has rank {} < p = {p}", basis.len())))
}

fn least_squares_residuals(rows: &[f64], n: usize, p: usize, y: &[f64]) -> Result<Vec<f64>> {
    let z = DMatrix::from_row_slice(n, p, rows);
    let svd = z.clone().svd(true, true);
    let yv = nalgebra::DVector::from_column_slice(y);
    let coef = svd
        .solve(&yv, 1e-12 * svd.singular_values.max())
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    let fitted = z * coef;
    Ok(y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect())
}
