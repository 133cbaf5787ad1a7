//! Forward/inverse sensing matrices and simulated measurements (first-Born model).
//!
//! Row `i` of a sensing matrix corresponds to one (mask, frequency) pair, in
//! mask-major, frequency-minor order: row `= mask_index · n_freq + freq_index`.
//! Entry `(i, j)` is the product of the aggregate Tx and Rx fields at grid
//! point `j` for that configuration.

use log::warn;
use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::Excitation;
use crate::geometry::Vec3;
use crate::masks::{Mask, SeedRecord};
use crate::scalar::{norm_sqr, Real};
use crate::scene::{nearest_index, Scatterer, ScattererKind, Scene, Side, TargetMap};

/// Which configuration produced a matrix row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowMeta {
    pub mask_index: usize,
    pub frequency: f64,
}

/// Dense complex `M × K` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<Complex<T>>,
    pub row_meta: Vec<RowMeta>,
    pub grid: Vec<Vec3<T>>,
}

impl<T: Real> SensingMatrix<T> {
    /// Wraps raw entries; `entries.len()` must equal `rows · cols`.
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<Complex<T>>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Dimension {
                what: "matrix entries",
                expected: rows * cols,
                actual: entries.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            entries,
            row_meta: (0..rows)
                .map(|i| RowMeta {
                    mask_index: i,
                    frequency: 0.0,
                })
                .collect(),
            grid: Vec::new(),
        })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex<T> {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[Complex<T>] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    /// `H x`.
    pub fn apply(&self, x: &[Complex<T>]) -> Vec<Complex<T>> {
        assert_eq!(x.len(), self.cols, "H·x dimension");
        self.entries
            .par_chunks(self.cols.max(1))
            .map(|row| {
                row.iter()
                    .zip(x)
                    .fold(Complex::new(T::zero(), T::zero()), |acc, (h, v)| acc + h * v)
            })
            .collect()
    }

    /// `Hᴴ y`, accumulated row by row (deterministic).
    pub fn apply_adjoint(&self, y: &[Complex<T>]) -> Vec<Complex<T>> {
        assert_eq!(y.len(), self.rows, "Hᴴ·y dimension");
        let mut out = vec![Complex::new(T::zero(), T::zero()); self.cols];
        for (row, v) in self.entries.chunks(self.cols.max(1)).zip(y) {
            for (o, h) in out.iter_mut().zip(row) {
                *o = *o + h.conj() * v;
            }
        }
        out
    }

    /// Euclidean norm of every column.
    pub fn column_norms(&self) -> Vec<T> {
        let mut acc = vec![T::zero(); self.cols];
        for row in self.entries.chunks(self.cols.max(1)) {
            for (a, h) in acc.iter_mut().zip(row) {
                *a = *a + norm_sqr(*h);
            }
        }
        acc.into_iter().map(|v| v.sqrt()).collect()
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut entries = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            entries.extend_from_slice(self.row(r));
        }
        Self {
            rows: rows.len(),
            cols: self.cols,
            entries,
            row_meta: rows.iter().map(|&r| self.row_meta[r]).collect(),
            grid: self.grid.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Assembles `H` for `masks × scene.frequencies` rows over `grid_points`.
///
/// The same routine builds the forward matrix (scatterer positions) and the
/// inverse matrix (ROI voxels).
pub fn build_sensing_matrix<T: Real>(scene: &Scene<T>, masks: &[Mask<T>], grid_points: &[Vec3<T>]) -> Result<SensingMatrix<T>> {
    if masks.is_empty() {
        return Err(Error::Config("sensing matrix needs at least one mask".into()));
    }
    if grid_points.is_empty() {
        return Err(Error::Config("sensing matrix needs at least one grid point".into()));
    }
    let nf = scene.frequencies.len();
    let configs: Vec<(usize, usize)> = (0..masks.len())
        .flat_map(|m| (0..nf).map(move |f| (m, f)))
        .collect();
    let rows: Vec<Vec<Complex<T>>> = configs
        .par_iter()
        .map(|&(m, f)| sensing_row(scene, &masks[m], scene.frequencies[f], grid_points))
        .collect();
    let cols = grid_points.len();
    let mut entries = Vec::with_capacity(rows.len() * cols);
    for r in &rows {
        entries.extend_from_slice(r);
    }
    Ok(SensingMatrix {
        rows: rows.len(),
        cols,
        entries,
        row_meta: configs
            .iter()
            .map(|&(m, f)| RowMeta {
                mask_index: masks[m].index,
                frequency: scene.frequencies[f].to_f64_lossy(),
            })
            .collect(),
        grid: grid_points.to_vec(),
    })
}

/// One row: `E_Tx(r_j) · E_Rx(r_j)` for every grid point.
pub fn sensing_row<T: Real>(scene: &Scene<T>, mask: &Mask<T>, frequency: T, points: &[Vec3<T>]) -> Vec<Complex<T>> {
    let tx = Excitation::side(scene, mask, Side::Tx, frequency);
    let rx = Excitation::side(scene, mask, Side::Rx, frequency);
    points.iter().map(|p| tx.field_at(*p) * rx.field_at(*p)).collect()
}

/// How measurement noise is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum NoiseSpec {
    Noiseless,
    /// `10·log10(mean|Hσ|² / noise power)`; the reference is the signal itself.
    SnrDb(f64),
    /// Fixed per-sample noise power (shared noise floor between methods).
    Power(f64),
}

/// Simulated measurement vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement<T> {
    pub g: Vec<Complex<T>>,
    /// Requested SNR in dB (`+∞` when noiseless, `NaN` for an absolute noise power).
    pub snr_db: f64,
    /// Per-sample noise power `E|n_i|²`.
    pub noise_power: f64,
    pub noise_seed: SeedRecord,
}

/// Mean per-row signal power `‖Hσ‖² / M`.
pub fn signal_power<T: Real>(signal: &[Complex<T>]) -> f64 {
    if signal.is_empty() {
        return 0.0;
    }
    signal.iter().map(|v| norm_sqr(*v).to_f64_lossy()).sum::<f64>() / signal.len() as f64
}

/// Noise power that realizes `snr_db` for a signal of mean power `power`.
///
/// A zero signal uses unit reference power, so `σ = 0` yields noise of power `10^{−snr/10}`.
pub fn noise_power_for(power: f64, snr_db: f64) -> f64 {
    let reference = if power > 0.0 { power } else { 1.0 };
    reference / 10f64.powf(snr_db / 10.0)
}

/// Circular complex Gaussian samples with `E|n|² = power`.
pub fn complex_noise<T: Real, R: Rng + ?Sized>(len: usize, power: f64, rng: &mut R) -> Vec<Complex<T>> {
    let scale = (power / 2.0).sqrt();
    (0..len)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex::new(T::lit(re * scale), T::lit(im * scale))
        })
        .collect()
}

/// `g = H σ + n` for a reflectivity vector aligned with the columns of `h`.
pub fn measure<T: Real>(h: &SensingMatrix<T>, sigma: &[Complex<T>], noise: NoiseSpec, noise_seed: SeedRecord) -> Result<Measurement<T>> {
    if sigma.len() != h.cols {
        return Err(Error::Dimension {
            what: "reflectivity vector",
            expected: h.cols,
            actual: sigma.len(),
        });
    }
    let clean = h.apply(sigma);
    let (snr_db, power) = match noise {
        NoiseSpec::Noiseless => (f64::INFINITY, 0.0),
        NoiseSpec::SnrDb(db) if db == f64::INFINITY => (f64::INFINITY, 0.0),
        NoiseSpec::SnrDb(db) => (db, noise_power_for(signal_power(&clean), db)),
        NoiseSpec::Power(p) => {
            if !(p >= 0.0) {
                return Err(Error::Config("noise power must be non-negative".into()));
            }
            (f64::NAN, p)
        }
    };
    let g = if power > 0.0 {
        let mut rng = noise_seed.rng();
        let n: Vec<Complex<T>> = complex_noise(clean.len(), power, &mut rng);
        clean.iter().zip(&n).map(|(s, e)| s + e).collect()
    } else {
        clean
    };
    Ok(Measurement {
        g,
        snr_db,
        noise_power: power,
        noise_seed,
    })
}

/// Maps scatterers onto the columns of `h` by nearest grid point.
///
/// A scatterer farther than one grid cell from every column is dropped with a
/// warning; an error is returned when nothing can be mapped.
pub fn project_target<T: Real>(target: &TargetMap<T>, grid: &[Vec3<T>]) -> Result<Vec<Complex<T>>> {
    if grid.is_empty() {
        return Err(Error::Config("forward grid is empty".into()));
    }
    let reach = snap_radius(grid);
    let mut sigma = vec![Complex::new(T::zero(), T::zero()); grid.len()];
    let mut mapped = 0usize;
    for s in &target.scatterers {
        let j = nearest_index(grid, s.position);
        let d = grid[j].distance(s.position);
        if d > reach {
            warn!("scatterer at {:?} lies outside forward grid coverage; ignored", s.position.to_f64());
            continue;
        }
        if d > T::zero() {
            warn!("scatterer at {:?} snapped to nearest grid point ({} m away)", s.position.to_f64(), d);
        }
        sigma[j] = sigma[j] + s.reflectivity;
        mapped += 1;
    }
    if mapped == 0 && !target.is_empty() {
        return Err(Error::Geometry("target lies entirely outside the forward grid".into()));
    }
    Ok(sigma)
}

// Largest nearest-neighbour distance in the grid; tiny for a single point.
fn snap_radius<T: Real>(grid: &[Vec3<T>]) -> T {
    if grid.len() < 2 {
        return T::lit(1e-9);
    }
    let mut worst = T::zero();
    for (i, p) in grid.iter().enumerate() {
        let mut best = T::infinity();
        for (j, q) in grid.iter().enumerate() {
            if i != j {
                best = best.min(p.distance(*q));
            }
        }
        worst = worst.max(best);
    }
    worst * T::lit(1.0 + 1e-9)
}

/// `g = H_fwd σ + n` where σ is obtained by projecting `target` onto the forward grid.
pub fn simulate_measurement<T: Real>(h_fwd: &SensingMatrix<T>, target: &TargetMap<T>, noise: NoiseSpec, noise_seed: SeedRecord) -> Result<Measurement<T>> {
    let sigma = project_target(target, &h_fwd.grid)?;
    measure(h_fwd, &sigma, noise, noise_seed)
}

/// Appends a unit clutter scatterer at `(0, clutter_y, 8)` m.
pub fn add_clutter<T: Real>(target: &TargetMap<T>, clutter_y: T) -> TargetMap<T> {
    add_clutter_at(target, Vec3::new(T::zero(), clutter_y, T::lit(8.0)), Complex::new(T::one(), T::zero()))
}

/// Appends a clutter scatterer at an arbitrary position.
pub fn add_clutter_at<T: Real>(target: &TargetMap<T>, position: Vec3<T>, reflectivity: Complex<T>) -> TargetMap<T> {
    let mut out = target.clone();
    out.scatterers.push(Scatterer {
        position,
        reflectivity,
        kind: ScattererKind::Clutter,
    });
    out
}

/// Drops every clutter scatterer.
pub fn remove_clutter<T: Real>(target: &TargetMap<T>) -> TargetMap<T> {
    TargetMap {
        scatterers: target
            .scatterers
            .iter()
            .filter(|s| s.kind != ScattererKind::Clutter)
            .copied()
            .collect(),
    }
}
