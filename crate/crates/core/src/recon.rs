//! Reconstruction of the reflectivity map from measurements.
//!
//! All iterative solvers work on the (optionally damped) normal equations
//! `(HᴴH + λI) σ = Hᴴ g`, starting from `σ = 0`. The residual history holds
//! `‖Hᴴg − (HᴴH + λI)σ_k‖ / ‖Hᴴg‖`, beginning with the initial value 1.

use log::warn;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::pearson;
use crate::geometry::Vec3;
use crate::scalar::{narrow, norm_sqr, widen, Real};
use crate::scene::{ImageGrid, TargetMap};
use crate::sensing::{Measurement, SensingMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Conjugate gradient on the normal equations (CGLS recurrences).
    Cgnr,
    /// Conjugate residual on the normal equations; `‖Hᴴr‖` never increases.
    Crnr,
    /// Conjugate gradient squared on the normal equations.
    Cgs,
    /// Column-normalized back-projection `Hᴴg`.
    MatchedFilter,
    /// Dense minimum-norm least squares via SVD.
    LeastSquaresOracle,
}

impl SolverKind {
    pub fn label(self) -> &'static str {
        match self {
            SolverKind::Cgnr => "cgnr",
            SolverKind::Crnr => "crnr",
            SolverKind::Cgs => "cgs",
            SolverKind::MatchedFilter => "matched_filter",
            SolverKind::LeastSquaresOracle => "least_squares",
        }
    }
}

/// Iterative solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub kind: SolverKind,
    /// Relative normal-equation residual at which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Tikhonov weight relative to the mean squared column norm of `H`.
    pub tikhonov: f64,
    /// Discrepancy-principle factor `τ`: iteration stops once `‖g − Hσ‖² ≤ τ²·M·E|n|²`.
    /// Zero disables it; it has no effect on noiseless measurements.
    pub discrepancy: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kind: SolverKind::Cgnr,
            tol: 1e-6,
            max_iter: 200,
            tikhonov: 0.0,
            discrepancy: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult<T> {
    pub sigma_est: Vec<Complex<T>>,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub method: SolverKind,
    pub converged: bool,
}

impl<T: Real> ReconResult<T> {
    /// `|σ̃|` normalized to a maximum of 1.
    pub fn normalized_magnitude(&self) -> Vec<T> {
        normalized_magnitude(&self.sigma_est)
    }
}

/// `|v|` scaled so the largest entry is 1 (all zeros stay zero).
pub fn normalized_magnitude<T: Real>(v: &[Complex<T>]) -> Vec<T> {
    let mags: Vec<T> = v.iter().map(|z| z.norm()).collect();
    let max = mags.iter().copied().fold(T::zero(), T::max);
    if max > T::zero() {
        mags.into_iter().map(|m| m / max).collect()
    } else {
        mags
    }
}

type CVec<T> = Vec<Complex<T>>;

fn zeros<T: Real>(n: usize) -> CVec<T> {
    vec![Complex::new(T::zero(), T::zero()); n]
}

fn dot<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
    a.iter()
        .zip(b)
        .fold(Complex::new(T::zero(), T::zero()), |acc, (x, y)| acc + x.conj() * y)
}

fn norm2<T: Real>(a: &[Complex<T>]) -> T {
    a.iter().fold(T::zero(), |acc, x| acc + norm_sqr(*x))
}

// y ← y + a·x
fn axpy<T: Real>(y: &mut [Complex<T>], a: Complex<T>, x: &[Complex<T>]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

/// Normal-equation operator `x ↦ HᴴHx + λx`.
struct NormalOperator<'a, T> {
    h: &'a SensingMatrix<T>,
    lambda: T,
}

impl<'a, T: Real> NormalOperator<'a, T> {
    fn new(h: &'a SensingMatrix<T>, tikhonov: f64) -> Self {
        let lambda = if tikhonov > 0.0 {
            let fro: T = norm2(&h.entries);
            T::lit(tikhonov) * fro / T::lit(h.cols.max(1) as f64)
        } else {
            T::zero()
        };
        Self { h, lambda }
    }

    fn apply(&self, x: &[Complex<T>]) -> CVec<T> {
        let mut out = self.h.apply_adjoint(&self.h.apply(x));
        if self.lambda > T::zero() {
            let l = Complex::new(self.lambda, T::zero());
            axpy(&mut out, l, x);
        }
        out
    }
}

fn check_dims<T: Real>(h: &SensingMatrix<T>, g: &[Complex<T>]) -> Result<()> {
    if g.len() != h.rows {
        return Err(Error::Dimension {
            what: "measurement vector",
            expected: h.rows,
            actual: g.len(),
        });
    }
    Ok(())
}

fn check_options(opts: &SolverOptions) -> Result<()> {
    if !(opts.tol > 0.0) {
        return Err(Error::Config("solver tolerance must be positive".into()));
    }
    if !(opts.discrepancy >= 0.0) {
        return Err(Error::Config("discrepancy factor must be non-negative".into()));
    }
    if !(opts.tikhonov >= 0.0) {
        return Err(Error::Config("Tikhonov weight must be non-negative".into()));
    }
    Ok(())
}

/// Dispatches on `opts.kind`.
///
/// The discrepancy stop (`opts.discrepancy`) applies to the iterative solvers.
pub fn reconstruct<T: Real>(h: &SensingMatrix<T>, g: &Measurement<T>, opts: &SolverOptions) -> Result<ReconResult<T>> {
    let floor = opts.discrepancy * opts.discrepancy * g.noise_power * g.g.len() as f64;
    match opts.kind {
        SolverKind::Cgnr => cgnr(h, &g.g, opts, floor),
        SolverKind::Crnr => crnr(h, &g.g, opts, floor),
        SolverKind::Cgs => cgs(h, &g.g, opts, floor),
        SolverKind::MatchedFilter => reconstruct_matched_filter(h, &g.g),
        SolverKind::LeastSquaresOracle => reconstruct_least_squares(h, &g.g),
    }
}

fn finish<T: Real>(
    method: SolverKind,
    sigma_est: CVec<T>,
    iterations: usize,
    residual_history: Vec<f64>,
    converged: bool,
) -> ReconResult<T> {
    if !converged {
        warn!(
            "{} stopped after {iterations} iterations at relative residual {:.3e}",
            method.label(),
            residual_history.last().copied().unwrap_or(f64::NAN)
        );
    }
    ReconResult {
        sigma_est,
        iterations,
        residual_history,
        method,
        converged,
    }
}

/// Conjugate gradient on the normal equations, CGLS form (never forms `HᴴH`).
pub fn reconstruct_cgnr<T: Real>(h: &SensingMatrix<T>, g: &[Complex<T>], opts: &SolverOptions) -> Result<ReconResult<T>> {
    cgnr(h, g, opts, 0.0)
}

// `residual_floor` is the absolute `‖g − Hσ‖²` at which iteration stops early.
fn cgnr<T: Real>(h: &SensingMatrix<T>, g: &[Complex<T>], opts: &SolverOptions, residual_floor: f64) -> Result<ReconResult<T>> {
    check_dims(h, g)?;
    check_options(opts)?;
    let op = NormalOperator::new(h, opts.tikhonov);
    let lambda = Complex::new(op.lambda, T::zero());
    let mut x = zeros::<T>(h.cols);
    let mut r = g.to_vec();
    let mut s = h.apply_adjoint(&r);
    let norm0 = norm2(&s).sqrt();
    let mut history = vec![1.0];
    if norm0 == T::zero() {
        return Ok(finish(SolverKind::Cgnr, x, 0, history, true));
    }
    let mut p = s.clone();
    let mut gamma = norm2(&s);
    let tol = T::lit(opts.tol);
    for it in 1..=opts.max_iter {
        let q = h.apply(&p);
        let delta = norm2(&q) + op.lambda * norm2(&p);
        if delta <= T::zero() {
            return Ok(finish(SolverKind::Cgnr, x, it - 1, history, false));
        }
        let alpha = Complex::new(gamma / delta, T::zero());
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &q);
        s = h.apply_adjoint(&r);
        if op.lambda > T::zero() {
            axpy(&mut s, -lambda, &x);
        }
        let gamma_new = norm2(&s);
        let rel = gamma_new.sqrt() / norm0;
        history.push(rel.to_f64_lossy());
        if rel <= tol || norm2(&r).to_f64_lossy() <= residual_floor {
            return Ok(finish(SolverKind::Cgnr, x, it, history, true));
        }
        let beta = gamma_new / gamma;
        gamma = gamma_new;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = *si + *pi * beta;
        }
    }
    Ok(finish(SolverKind::Cgnr, x, opts.max_iter, history, false))
}

/// Conjugate residual on the normal equations (MINRES-like; equivalent to LSMR in exact arithmetic).
pub fn reconstruct_crnr<T: Real>(h: &SensingMatrix<T>, g: &[Complex<T>], opts: &SolverOptions) -> Result<ReconResult<T>> {
    crnr(h, g, opts, 0.0)
}

/// True when `‖g − Hx‖²` has reached `floor` (never when `floor` is zero).
fn below_floor<T: Real>(h: &SensingMatrix<T>, g: &[Complex<T>], x: &[Complex<T>], floor: f64) -> bool {
    if floor <= 0.0 {
        return false;
    }
    let hx = h.apply(x);
    let r: T = g.iter().zip(&hx).fold(T::zero(), |acc, (a, b)| acc + norm_sqr(*a - *b));
    r.to_f64_lossy() <= floor
}

fn crnr<T: Real>(h: &SensingMatrix<T>, g: &[Complex<T>], opts: &SolverOptions, residual_floor: f64) -> Result<ReconResult<T>> {
    check_dims(h, g)?;
    check_options(opts)?;
    let op = NormalOperator::new(h, opts.tikhonov);
    let mut x = zeros::<T>(h.cols);
    let mut r = h.apply_adjoint(g);
    let norm0 = norm2(&r).sqrt();
    let mut history = vec![1.0];
    if norm0 == T::zero() {
        return Ok(finish(SolverKind::Crnr, x, 0, history, true));
    }
    let mut ar = op.apply(&r);
    let mut p = r.clone();
    let mut ap = ar.clone();
    let mut rho = dot(&r, &ar).re;
    let tol = T::lit(opts.tol);
    for it in 1..=opts.max_iter {
        let denom = norm2(&ap);
        if denom <= T::zero() || rho <= T::zero() {
            return Ok(finish(SolverKind::Crnr, x, it - 1, history, false));
        }
        let alpha = Complex::new(rho / denom, T::zero());
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &ap);
        let rel = norm2(&r).sqrt() / norm0;
        history.push(rel.to_f64_lossy());
        if rel <= tol || below_floor(h, g, &x, residual_floor) {
            return Ok(finish(SolverKind::Crnr, x, it, history, true));
        }
        ar = op.apply(&r);
        let rho_new = dot(&r, &ar).re;
        let beta = rho_new / rho;
        rho = rho_new;
        for i in 0..p.len() {
            p[i] = r[i] + p[i] * beta;
            ap[i] = ar[i] + ap[i] * beta;
        }
    }
    Ok(finish(SolverKind::Crnr, x, opts.max_iter, history, false))
}

/// Conjugate gradient squared (Sonneveld) applied to the normal equations.
pub fn reconstruct_cgs<T: Real>(h: &SensingMatrix<T>, g: &[Complex<T>], opts: &SolverOptions) -> Result<ReconResult<T>> {
    cgs(h, g, opts, 0.0)
}

fn cgs<T: Real>(h: &SensingMatrix<T>, g: &[Complex<T>], opts: &SolverOptions, residual_floor: f64) -> Result<ReconResult<T>> {
    check_dims(h, g)?;
    check_options(opts)?;
    let op = NormalOperator::new(h, opts.tikhonov);
    let b = h.apply_adjoint(g);
    let norm0 = norm2(&b).sqrt();
    let mut x = zeros::<T>(h.cols);
    let mut history = vec![1.0];
    if norm0 == T::zero() {
        return Ok(finish(SolverKind::Cgs, x, 0, history, true));
    }
    let shadow = b.clone();
    let mut r = b;
    let mut u = r.clone();
    let mut p = r.clone();
    let mut rho = dot(&shadow, &r);
    let tol = T::lit(opts.tol);
    let tiny = T::min_positive_value();
    for it in 1..=opts.max_iter {
        let v = op.apply(&p);
        let sigma = dot(&shadow, &v);
        if sigma.norm() <= tiny || rho.norm() <= tiny {
            return Ok(finish(SolverKind::Cgs, x, it - 1, history, false));
        }
        let alpha = rho / sigma;
        let q: CVec<T> = u.iter().zip(&v).map(|(ui, vi)| ui - alpha * vi).collect();
        let w: CVec<T> = u.iter().zip(&q).map(|(ui, qi)| ui + qi).collect();
        axpy(&mut x, alpha, &w);
        let aw = op.apply(&w);
        axpy(&mut r, -alpha, &aw);
        let rel = norm2(&r).sqrt() / norm0;
        history.push(rel.to_f64_lossy());
        if !rel.is_finite() {
            return Ok(finish(SolverKind::Cgs, x, it, history, false));
        }
        if rel <= tol || below_floor(h, g, &x, residual_floor) {
            return Ok(finish(SolverKind::Cgs, x, it, history, true));
        }
        let rho_new = dot(&shadow, &r);
        let beta = rho_new / rho;
        rho = rho_new;
        for i in 0..u.len() {
            u[i] = r[i] + beta * q[i];
            p[i] = u[i] + beta * (q[i] + beta * p[i]);
        }
    }
    Ok(finish(SolverKind::Cgs, x, opts.max_iter, history, false))
}

/// `σ_j = h_jᴴ g / ‖h_j‖`; zero columns give zero.
pub fn reconstruct_matched_filter<T: Real>(h: &SensingMatrix<T>, g: &[Complex<T>]) -> Result<ReconResult<T>> {
    check_dims(h, g)?;
    let back = h.apply_adjoint(g);
    let norms = h.column_norms();
    let sigma = back
        .into_iter()
        .zip(norms)
        .map(|(v, n)| {
            if n > T::zero() {
                v / n
            } else {
                Complex::new(T::zero(), T::zero())
            }
        })
        .collect();
    Ok(ReconResult {
        sigma_est: sigma,
        iterations: 1,
        residual_history: vec![1.0],
        method: SolverKind::MatchedFilter,
        converged: true,
    })
}

/// Minimum-norm least-squares solution via a dense SVD in double precision.
pub fn reconstruct_least_squares<T: Real>(h: &SensingMatrix<T>, g: &[Complex<T>]) -> Result<ReconResult<T>> {
    check_dims(h, g)?;
    let a = to_dmatrix(h);
    let b = DVector::from_iterator(g.len(), g.iter().map(|z| widen(*z)));
    let svd = a.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = smax * f64::EPSILON * (h.rows.max(h.cols) as f64);
    let x = svd
        .solve(&b, eps)
        .map_err(|e| Error::Config(format!("least-squares solve failed: {e}")))?;
    let sigma: CVec<T> = x.iter().map(|z| narrow(*z)).collect();
    let r = h.apply(&sigma);
    let resid: CVec<T> = r.iter().zip(g).map(|(a, b)| b - a).collect();
    let nb = norm2(&h.apply_adjoint(g)).sqrt();
    let nr = norm2(&h.apply_adjoint(&resid)).sqrt();
    let rel = if nb > T::zero() { (nr / nb).to_f64_lossy() } else { 0.0 };
    Ok(ReconResult {
        sigma_est: sigma,
        iterations: 1,
        residual_history: vec![1.0, rel],
        method: SolverKind::LeastSquaresOracle,
        converged: true,
    })
}

/// Copies a sensing matrix into an `f64` nalgebra matrix.
pub fn to_dmatrix<T: Real>(h: &SensingMatrix<T>) -> DMatrix<Complex<f64>> {
    DMatrix::from_row_iterator(h.rows, h.cols, h.entries.iter().map(|z| widen(*z)))
}

/// Image-quality figures of a reconstruction against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    /// Pearson correlation of `|σ̃|` with the rasterized truth.
    pub normalized_correlation: f64,
    /// Mean distance from each true scatterer to the nearest of the top-K peaks, meters.
    pub peak_localization_error: f64,
    /// Share of `Σ|σ̃|²` outside the cells within one grid cell of a true scatterer.
    pub background_energy_ratio: f64,
}

/// Accumulates `|reflectivity|` of every target scatterer into its nearest grid cell.
pub fn rasterize_truth<T: Real>(truth: &TargetMap<T>, grid: &ImageGrid<T>) -> Vec<T> {
    let mut img = vec![T::zero(); grid.len()];
    for s in truth.targets() {
        let j = grid.nearest(s.position);
        img[j] = img[j] + s.reflectivity.norm();
    }
    img
}

/// Indices of the `k` strongest local maxima (8-neighbourhood, ties allowed) of `values`.
pub fn find_peaks<T: Real>(values: &[T], grid: &ImageGrid<T>, k: usize) -> Vec<usize> {
    assert_eq!(values.len(), grid.len());
    let (nx, ny) = (grid.nx, grid.ny);
    let mut peaks: Vec<usize> = Vec::new();
    for iy in 0..ny {
        for ix in 0..nx {
            let i = iy * nx + ix;
            let v = values[i];
            let mut is_max = true;
            'nb: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (jx, jy) = (ix as i64 + dx, iy as i64 + dy);
                    if jx < 0 || jy < 0 || jx >= nx as i64 || jy >= ny as i64 {
                        continue;
                    }
                    if values[jy as usize * nx + jx as usize] > v {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                peaks.push(i);
            }
        }
    }
    peaks.sort_by(|a, b| values[*b].partial_cmp(&values[*a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(b)));
    peaks.truncate(k);
    peaks
}

/// Computes [`ImageMetrics`] for `sigma_est` on `grid`.
pub fn compute_metrics<T: Real>(sigma_est: &[Complex<T>], truth: &TargetMap<T>, grid: &ImageGrid<T>) -> Result<ImageMetrics> {
    if sigma_est.len() != grid.len() {
        return Err(Error::Dimension {
            what: "reconstruction vs grid",
            expected: grid.len(),
            actual: sigma_est.len(),
        });
    }
    let mags: Vec<T> = sigma_est.iter().map(|z| z.norm()).collect();
    let reference = rasterize_truth(truth, grid);
    let correlation = pearson(&mags, &reference).to_f64_lossy();

    let targets: Vec<Vec3<T>> = truth.targets().map(|s| s.position).collect();
    let peaks = find_peaks(&mags, grid, targets.len());
    let localization = if targets.is_empty() || peaks.is_empty() {
        0.0
    } else {
        targets
            .iter()
            .map(|t| {
                peaks
                    .iter()
                    .map(|&p| grid.points[p].distance(*t).to_f64_lossy())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / targets.len() as f64
    };

    let cell = grid.cell() * T::lit(1.0 + 1e-9);
    let mut total = T::zero();
    let mut background = T::zero();
    for (p, m) in grid.points.iter().zip(&mags) {
        let e = *m * *m;
        total = total + e;
        if !targets.iter().any(|t| p.distance(*t) <= cell) {
            background = background + e;
        }
    }
    let background_ratio = if total > T::zero() {
        (background / total).to_f64_lossy()
    } else {
        0.0
    };
    Ok(ImageMetrics {
        normalized_correlation: correlation,
        peak_localization_error: localization,
        background_energy_ratio: background_ratio,
    })
}

/// Counts how many of the top-K peaks lie within one grid cell of a true
/// scatterer, and how many distinct scatterers those peaks cover.
pub fn peak_match<T: Real>(sigma_est: &[Complex<T>], truth: &TargetMap<T>, grid: &ImageGrid<T>) -> (usize, usize) {
    let mags: Vec<T> = sigma_est.iter().map(|z| z.norm()).collect();
    let targets: Vec<Vec3<T>> = truth.targets().map(|s| s.position).collect();
    let peaks = find_peaks(&mags, grid, targets.len());
    let cell = grid.cell() * T::lit(1.0 + 1e-9);
    let mut hit = 0;
    let mut covered = vec![false; targets.len()];
    for p in peaks {
        let q = grid.points[p];
        let mut any = false;
        for (i, t) in targets.iter().enumerate() {
            if q.distance(*t) <= cell {
                any = true;
                covered[i] = true;
            }
        }
        if any {
            hit += 1;
        }
    }
    (hit, covered.iter().filter(|c| **c).count())
}
