//! Regularized multi-peak nonlinear least squares for (water, fat, R2*).
//!
//! Objective on magnitude-normalized echoes `y_m = S_m / max|S|`:
//!
//! ```text
//! sum_m |y_m - (W + F c_m) e^{-R t_m}|^2 + lambda (R * dt)^2
//! ```
//!
//! with `c_m` the unit-fat phasor of the spectrum, `dt` the mean echo spacing
//! (so the penalty is on a dimensionless decay) and `lambda = lambda_per_echo * M`.
//! Subject to `W, F >= 0` and `R` inside the configured bounds.
//!
//! Solve: variable projection over an R2* grid (for each grid value W and F
//! are the non-negative linear least-squares solution), then box-constrained
//! Levenberg-Marquardt on all three parameters from the best grid start.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{ComplexSignal, EchoSchedule, FatSpectrum};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NllsConfig {
    /// R2* starting values (1/s).
    pub r2star_init_grid: Vec<f64>,
    pub max_iterations: usize,
    /// Relative parameter-step tolerance.
    pub tolerance: f64,
    /// Penalty weight per echo; the total weight is this times the echo count.
    pub lambda_per_echo: f64,
    pub r2star_bounds: [f64; 2],
    pub damping_init: f64,
}

impl Default for NllsConfig {
    fn default() -> Self {
        NllsConfig {
            r2star_init_grid: (0..=8).map(|k| 50.0 * k as f64).collect(),
            max_iterations: 50,
            tolerance: 1e-8,
            lambda_per_echo: 1e-6,
            r2star_bounds: [0.0, 1000.0],
            damping_init: 1e-3,
        }
    }
}

impl NllsConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.r2star_bounds;
        if self.r2star_init_grid.is_empty() {
            return Err(Error::invalid("nlls: empty R2* start grid"));
        }
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::invalid(format!("nlls: bad R2* bounds [{lo}, {hi}]")));
        }
        if self.r2star_init_grid.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("nlls: non-finite grid value"));
        }
        if !(self.tolerance > 0.0 && self.damping_init > 0.0) {
            return Err(Error::invalid("nlls: tolerance and damping must be positive"));
        }
        if !(self.lambda_per_echo >= 0.0 && self.lambda_per_echo.is_finite()) {
            return Err(Error::invalid("nlls: regularization weight must be non-negative"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("nlls: max_iterations must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub water: f64,
    pub fat: f64,
    pub r2star: f64,
    /// Percent.
    pub pdff: f64,
    /// Data residual `||S - model||` in signal units.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Empty or all-zero signal; every estimate is 0.
    pub degenerate: bool,
}

impl FitResult {
    fn degenerate() -> Self {
        FitResult {
            water: 0.0,
            fat: 0.0,
            r2star: 0.0,
            pdff: 0.0,
            residual_norm: 0.0,
            converged: true,
            iterations: 0,
            degenerate: true,
        }
    }
}

/// Objective values seen by one fit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NllsTrace {
    pub start_r2star: f64,
    /// Objective at the start and after every accepted step.
    pub objectives: Vec<f64>,
}

struct GridStart {
    r2star: f64,
    decay: Vec<f64>,
    fat_basis: Vec<Complex64>,
    aa: f64,
    ab: f64,
    bb: f64,
}

/// Precomputed fit state for one (schedule, spectrum, config); reuse across voxels.
pub struct NllsSolver {
    times: Vec<f64>,
    phasors: Vec<Complex64>,
    reg_weight: f64,
    grid: Vec<GridStart>,
    cfg: NllsConfig,
}

type Theta = [f64; 3];

impl NllsSolver {
    pub fn new(sched: &EchoSchedule, spec: &FatSpectrum, cfg: &NllsConfig) -> Result<Self> {
        cfg.validate()?;
        if sched.len() < 3 {
            return Err(Error::invalid(format!(
                "nlls needs at least 3 echoes, got {}",
                sched.len()
            )));
        }
        let times = sched.times().to_vec();
        let m = times.len();
        let phasors: Vec<Complex64> = times.iter().map(|&t| spec.phasor(t)).collect();
        let mean_spacing = (times[m - 1] - times[0]) / (m - 1) as f64;
        let lambda = cfg.lambda_per_echo * m as f64;
        let reg_weight = lambda.sqrt() * mean_spacing;

        let [lo, hi] = cfg.r2star_bounds;
        let mut grid_values: Vec<f64> = cfg.r2star_init_grid.iter().map(|r| r.clamp(lo, hi)).collect();
        grid_values.sort_by(|a, b| a.total_cmp(b));
        grid_values.dedup();
        let grid = grid_values
            .into_iter()
            .map(|r| {
                let decay: Vec<f64> = times.iter().map(|&t| (-r * t).exp()).collect();
                let fat_basis: Vec<Complex64> = phasors.iter().zip(&decay).map(|(c, &e)| c * e).collect();
                GridStart {
                    r2star: r,
                    aa: decay.iter().map(|e| e * e).sum(),
                    ab: decay.iter().zip(&fat_basis).map(|(e, b)| e * b.re).sum(),
                    bb: fat_basis.iter().map(|b| b.norm_sqr()).sum(),
                    decay,
                    fat_basis,
                }
            })
            .collect();
        Ok(NllsSolver {
            times,
            phasors,
            reg_weight,
            grid,
            cfg: cfg.clone(),
        })
    }

    pub fn echo_count(&self) -> usize {
        self.times.len()
    }

    pub fn config(&self) -> &NllsConfig {
        &self.cfg
    }

    /// Residual vector `[Re(y - model); Im(y - model); reg]` of length `2M + 1`.
    pub fn residuals(&self, y: &[ComplexSignal], theta: Theta) -> Vec<f64> {
        let m = self.times.len();
        let mut r = vec![0.0; 2 * m + 1];
        self.fill_residuals(y, theta, &mut r);
        r
    }

    fn fill_residuals(&self, y: &[ComplexSignal], [w, f, rate]: Theta, out: &mut [f64]) {
        let m = self.times.len();
        for k in 0..m {
            let model = (w + f * self.phasors[k]) * (-rate * self.times[k]).exp();
            let d = y[k] - model;
            out[k] = d.re;
            out[m + k] = d.im;
        }
        out[2 * m] = self.reg_weight * rate;
    }

    /// Jacobian of [`Self::residuals`] with respect to `(W, F, R2*)`.
    pub fn jacobian(&self, theta: Theta) -> Vec<[f64; 3]> {
        let m = self.times.len();
        let mut j = vec![[0.0; 3]; 2 * m + 1];
        self.fill_jacobian(theta, &mut j);
        j
    }

    fn fill_jacobian(&self, [w, f, rate]: Theta, out: &mut [[f64; 3]]) {
        let m = self.times.len();
        for k in 0..m {
            let t = self.times[k];
            let e = (-rate * t).exp();
            let fat = self.phasors[k] * e;
            let model = w * e + f * fat;
            // r = y - model; d model/dR = -t model
            out[k] = [-e, -fat.re, t * model.re];
            out[m + k] = [0.0, -fat.im, t * model.im];
        }
        out[2 * m] = [0.0, 0.0, self.reg_weight];
    }

    fn objective(&self, y: &[ComplexSignal], theta: Theta, scratch: &mut [f64]) -> f64 {
        self.fill_residuals(y, theta, scratch);
        scratch.iter().map(|v| v * v).sum()
    }

    /// Non-negative linear solve for (W, F) at a grid R2*; returns `(W, F, objective)`.
    fn project(&self, y: &[ComplexSignal], g: &GridStart) -> (f64, f64, f64) {
        let yy: f64 = y.iter().map(|v| v.norm_sqr()).sum();
        let rw: f64 = y.iter().zip(&g.decay).map(|(v, e)| v.re * e).sum();
        let rf: f64 = y.iter().zip(&g.fat_basis).map(|(v, b)| v.re * b.re + v.im * b.im).sum();
        let resid = |w: f64, f: f64| {
            (yy - 2.0 * (w * rw + f * rf) + w * w * g.aa + 2.0 * w * f * g.ab + f * f * g.bb).max(0.0)
        };
        let det = g.aa * g.bb - g.ab * g.ab;
        let mut best = None;
        if det > 1e-14 * g.aa * g.bb {
            let w = (g.bb * rw - g.ab * rf) / det;
            let f = (g.aa * rf - g.ab * rw) / det;
            if w >= 0.0 && f >= 0.0 {
                best = Some((w, f, resid(w, f)));
            }
        }
        let (w, f, data) = best.unwrap_or_else(|| {
            let w_only = if g.aa > 0.0 { (rw / g.aa).max(0.0) } else { 0.0 };
            let f_only = if g.bb > 0.0 { (rf / g.bb).max(0.0) } else { 0.0 };
            let (rw_only, rf_only) = (resid(w_only, 0.0), resid(0.0, f_only));
            if rw_only <= rf_only {
                (w_only, 0.0, rw_only)
            } else {
                (0.0, f_only, rf_only)
            }
        });
        let reg = self.reg_weight * g.r2star;
        (w, f, data + reg * reg)
    }

    pub fn fit(&self, echoes: &[ComplexSignal]) -> Result<FitResult> {
        self.fit_inner(echoes, None)
    }

    /// Like [`Self::fit`] but records the objective after every accepted step.
    pub fn fit_traced(&self, echoes: &[ComplexSignal]) -> Result<(FitResult, NllsTrace)> {
        let mut trace = NllsTrace::default();
        let res = self.fit_inner(echoes, Some(&mut trace))?;
        Ok((res, trace))
    }

    fn fit_inner(&self, echoes: &[ComplexSignal], mut trace: Option<&mut NllsTrace>) -> Result<FitResult> {
        let m = self.times.len();
        if echoes.len() != m {
            return Err(Error::invalid(format!(
                "{} echoes for a {m}-echo schedule",
                echoes.len()
            )));
        }
        if echoes.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
            return Err(Error::invalid("non-finite echo signal"));
        }
        let scale = echoes.iter().map(|s| s.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            return Ok(FitResult::degenerate());
        }
        let y: Vec<ComplexSignal> = echoes.iter().map(|s| s / scale).collect();

        // Grid is sorted ascending, so strict improvement keeps the lowest R2* on ties.
        let mut start = (0.0, 0.0, 0.0, f64::INFINITY);
        for g in &self.grid {
            let (w, f, obj) = self.project(&y, g);
            if obj < start.3 {
                start = (w, f, g.r2star, obj);
            }
        }
        let theta0 = [start.0, start.1, start.2];
        if let Some(t) = trace.as_deref_mut() {
            t.start_r2star = start.2;
        }
        let (theta, data_sq, converged, iterations) = self.levenberg_marquardt(&y, theta0, trace);

        let [w, f, rate] = theta;
        let (water, fat) = (w * scale, f * scale);
        let ff = super::dixon::dixon_fat_fraction_with_eps(water, fat, 1e-9 * scale);
        Ok(FitResult {
            water,
            fat,
            r2star: rate,
            pdff: ff.pdff,
            residual_norm: data_sq.sqrt() * scale,
            converged,
            iterations,
            degenerate: ff.degenerate,
        })
    }

    fn levenberg_marquardt(
        &self,
        y: &[ComplexSignal],
        mut theta: Theta,
        mut trace: Option<&mut NllsTrace>,
    ) -> (Theta, f64, bool, usize) {
        let m = self.times.len();
        let lower = [0.0, 0.0, self.cfg.r2star_bounds[0]];
        let upper = [f64::INFINITY, f64::INFINITY, self.cfg.r2star_bounds[1]];
        let mut r = vec![0.0; 2 * m + 1];
        let mut jac = vec![[0.0; 3]; 2 * m + 1];
        let mut scratch = vec![0.0; 2 * m + 1];

        let mut phi = self.objective(y, theta, &mut r);
        if let Some(t) = trace.as_deref_mut() {
            t.objectives.push(phi);
        }
        let mut mu = self.cfg.damping_init;
        let mut converged = false;
        let mut iterations = 0;

        'outer: while iterations < self.cfg.max_iterations {
            iterations += 1;
            self.fill_residuals(y, theta, &mut r);
            self.fill_jacobian(theta, &mut jac);
            let mut grad = [0.0; 3];
            let mut hess = [[0.0; 3]; 3];
            for (ri, ji) in r.iter().zip(&jac) {
                for a in 0..3 {
                    grad[a] += ji[a] * ri;
                    for b in 0..3 {
                        hess[a][b] += ji[a] * ji[b];
                    }
                }
            }
            // Bound-active coordinates whose descent direction leaves the box stay fixed.
            let free: [bool; 3] = std::array::from_fn(|i| {
                !((theta[i] <= lower[i] && grad[i] > 0.0) || (theta[i] >= upper[i] && grad[i] < 0.0))
            });
            if phi == 0.0 || (0..3).all(|i| !free[i] || grad[i] == 0.0) {
                converged = true;
                break;
            }
            loop {
                let step = match solve_damped(&hess, &grad, mu, &free) {
                    Some(s) => s,
                    None => {
                        mu *= 4.0;
                        if mu > 1e16 {
                            converged = true;
                            break 'outer;
                        }
                        continue;
                    }
                };
                let candidate: Theta = std::array::from_fn(|i| (theta[i] + step[i]).clamp(lower[i], upper[i]));
                let moved: f64 = (0..3).map(|i| (candidate[i] - theta[i]).powi(2)).sum::<f64>().sqrt();
                let size: f64 = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
                if moved == 0.0 {
                    converged = true;
                    break 'outer;
                }
                let phi_new = self.objective(y, candidate, &mut scratch);
                if phi_new < phi {
                    theta = candidate;
                    phi = phi_new;
                    if let Some(t) = trace.as_deref_mut() {
                        t.objectives.push(phi);
                    }
                    mu = (mu / 3.0).max(1e-15);
                    if moved <= self.cfg.tolerance * (size + self.cfg.tolerance) {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                if moved <= self.cfg.tolerance * (size + self.cfg.tolerance) {
                    // Cannot improve at the resolution we care about.
                    converged = true;
                    break 'outer;
                }
                mu *= 4.0;
                if mu > 1e16 {
                    converged = true;
                    break 'outer;
                }
            }
        }

        self.fill_residuals(y, theta, &mut r);
        let data_sq: f64 = r[..2 * m].iter().map(|v| v * v).sum();
        (theta, data_sq, converged, iterations)
    }
}

/// Solves `(H + mu diag(H)) d = -g` over the free coordinates.
fn solve_damped(hess: &[[f64; 3]; 3], grad: &[f64; 3], mu: f64, free: &[bool; 3]) -> Option<[f64; 3]> {
    let idx: Vec<usize> = (0..3).filter(|&i| free[i]).collect();
    let n = idx.len();
    let mut a = [[0.0; 4]; 3];
    for (p, &i) in idx.iter().enumerate() {
        for (q, &j) in idx.iter().enumerate() {
            a[p][q] = hess[i][j];
        }
        a[p][p] += mu * hess[i][i].max(1e-12);
        a[p][n] = -grad[i];
    }
    // Gaussian elimination with partial pivoting.
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..=n {
                a[row][k] -= factor * a[col][k];
            }
        }
    }
    let mut x = [0.0; 3];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (a[row][n] - tail) / a[row][row];
    }
    let mut step = [0.0; 3];
    for (p, &i) in idx.iter().enumerate() {
        if !x[p].is_finite() {
            return None;
        }
        step[i] = x[p];
    }
    Some(step)
}

/// One-off voxel fit; build an [`NllsSolver`] to fit many voxels.
pub fn nlls_fit_voxel(
    echoes: &[ComplexSignal],
    sched: &EchoSchedule,
    spec: &FatSpectrum,
    cfg: &NllsConfig,
) -> Result<FitResult> {
    NllsSolver::new(sched, spec, cfg)?.fit(echoes)
}
