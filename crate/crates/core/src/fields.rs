//! Scalar-wave propagation from phased RIS panels.
//!
//! Every element is an isotropic point re-radiator. The antenna illuminates it
//! with a unit-amplitude spherical wave `e^{−ik d}/d`; the element multiplies
//! that by `e^{iφ}` (its programmed phase) and re-radiates another spherical
//! wave. Fields at a point are the coherent sum over elements, accumulated in
//! element order so results do not depend on the number of threads.

use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::masks::Mask;
use crate::scalar::{norm_sqr, wavenumber, Real};
use crate::scene::{RisPanel, RoiBox, Scene, Side};

/// Spherical wave `e^{−ik d}/d` from `source` evaluated at `point`.
#[inline]
pub fn spherical_wave<T: Real>(source: Vec3<T>, point: Vec3<T>, k: T) -> Complex<T> {
    let d = source.distance(point);
    let (s, c) = (k * d).sin_cos();
    Complex::new(c / d, -s / d)
}

/// Field re-radiated by one element: `incident · e^{iφ} · e^{−ik d}/d`.
pub fn element_field<T: Real>(
    element_pos: Vec3<T>,
    applied_phase: T,
    incident: Complex<T>,
    point: Vec3<T>,
    frequency: T,
) -> Complex<T> {
    let k = wavenumber(frequency);
    incident * Complex::from_polar(T::one(), applied_phase) * spherical_wave(element_pos, point, k)
}

/// Complex element weights (incident field times programmed phase) of a set of elements.
#[derive(Debug, Clone)]
pub struct Excitation<T> {
    pub positions: Vec<Vec3<T>>,
    pub weights: Vec<Complex<T>>,
    pub wavenumber: T,
}

impl<T: Real> Excitation<T> {
    fn empty(k: T) -> Self {
        Self {
            positions: Vec::new(),
            weights: Vec::new(),
            wavenumber: k,
        }
    }

    fn push_panel(&mut self, panel: &RisPanel<T>, phases: &[T], source: Vec3<T>) {
        for (e, phase) in panel.elements().iter().zip(phases) {
            let incident = spherical_wave(source, e.position, self.wavenumber);
            self.positions.push(e.position);
            self.weights.push(incident * Complex::from_polar(T::one(), *phase));
        }
    }

    /// Excitation of a single panel under `mask` at `frequency`.
    pub fn panel(scene: &Scene<T>, mask: &Mask<T>, panel: &RisPanel<T>, frequency: T) -> Self {
        let mut ex = Self::empty(wavenumber(frequency));
        ex.push_panel(panel, &mask.profile(panel.id).phases, scene.antenna(panel.side));
        ex
    }

    /// Excitation of every panel on `side`.
    pub fn side(scene: &Scene<T>, mask: &Mask<T>, side: Side, frequency: T) -> Self {
        let mut ex = Self::empty(wavenumber(frequency));
        let source = scene.antenna(side);
        for panel in scene.panels(side) {
            ex.push_panel(panel, &mask.profile(panel.id).phases, source);
        }
        ex
    }

    /// Coherent field at one point.
    #[inline]
    pub fn field_at(&self, point: Vec3<T>) -> Complex<T> {
        let k = self.wavenumber;
        let mut re = T::zero();
        let mut im = T::zero();
        for (pos, w) in self.positions.iter().zip(&self.weights) {
            let dx = point.x - pos.x;
            let dy = point.y - pos.y;
            let dz = point.z - pos.z;
            let d = (dx * dx + dy * dy + dz * dz).sqrt();
            let inv = d.recip();
            let (s, c) = (k * d).sin_cos();
            // w · (cos − i sin) / d
            re = re + (w.re * c + w.im * s) * inv;
            im = im + (w.im * c - w.re * s) * inv;
        }
        Complex::new(re, im)
    }

    /// Fields at many points, evaluated in parallel.
    pub fn fields_at(&self, points: &[Vec3<T>]) -> Vec<Complex<T>> {
        points.par_iter().map(|p| self.field_at(*p)).collect()
    }
}

/// Identifies what a [`FieldMap`] was computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldMeta<T> {
    pub mask_index: usize,
    pub frequency: T,
    pub side: Side,
    /// `Some` for a single-panel field, `None` for the aggregate of a side.
    pub panel_id: Option<usize>,
}

/// Complex field samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap<T> {
    pub sample_points: Vec<Vec3<T>>,
    pub values: Vec<Complex<T>>,
    pub meta: FieldMeta<T>,
}

impl<T: Real> FieldMap<T> {
    pub fn magnitudes(&self) -> Vec<T> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    /// Index and magnitude of the strongest sample.
    pub fn peak(&self) -> (usize, T) {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.norm()))
            .fold((0, T::neg_infinity()), |best, cur| if cur.1 > best.1 { cur } else { best })
    }

    /// Fraction of `Σ|E|²` carried by samples laterally inside `roi`.
    pub fn energy_fraction_inside(&self, roi: &RoiBox<T>) -> T {
        let mut inside = T::zero();
        let mut total = T::zero();
        for (p, v) in self.sample_points.iter().zip(&self.values) {
            let e = norm_sqr(*v);
            total = total + e;
            if roi.contains_xy(*p) {
                inside = inside + e;
            }
        }
        if total > T::zero() {
            inside / total
        } else {
            T::zero()
        }
    }

    /// Intensity-weighted mean position of the samples.
    pub fn energy_centroid(&self) -> Vec3<T> {
        let mut acc = Vec3::zero();
        let mut total = T::zero();
        for (p, v) in self.sample_points.iter().zip(&self.values) {
            let e = norm_sqr(*v);
            acc = acc + *p * e;
            total = total + e;
        }
        if total > T::zero() {
            acc * total.recip()
        } else {
            acc
        }
    }
}

fn check_points<T>(points: &[Vec3<T>]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Config("field evaluation needs at least one sample point".into()));
    }
    Ok(())
}

/// Field radiated by a single panel.
pub fn panel_field<T: Real>(
    scene: &Scene<T>,
    mask: &Mask<T>,
    panel_id: usize,
    points: &[Vec3<T>],
    frequency: T,
) -> Result<FieldMap<T>> {
    check_points(points)?;
    let panel = scene
        .panel(panel_id)
        .ok_or_else(|| Error::Config(format!("no panel with id {panel_id}")))?;
    let ex = Excitation::panel(scene, mask, panel, frequency);
    Ok(FieldMap {
        sample_points: points.to_vec(),
        values: ex.fields_at(points),
        meta: FieldMeta {
            mask_index: mask.index,
            frequency,
            side: panel.side,
            panel_id: Some(panel_id),
        },
    })
}

/// Interference pattern of all panels of one side.
pub fn aggregate_field<T: Real>(
    scene: &Scene<T>,
    mask: &Mask<T>,
    side: Side,
    points: &[Vec3<T>],
    frequency: T,
) -> Result<FieldMap<T>> {
    check_points(points)?;
    let ex = Excitation::side(scene, mask, side, frequency);
    Ok(FieldMap {
        sample_points: points.to_vec(),
        values: ex.fields_at(points),
        meta: FieldMeta {
            mask_index: mask.index,
            frequency,
            side,
            panel_id: None,
        },
    })
}

/// Pearson correlation of two magnitude patterns; 0 when either is constant.
pub fn pattern_correlation<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> T {
    let ma: Vec<T> = a.iter().map(|v| v.norm()).collect();
    let mb: Vec<T> = b.iter().map(|v| v.norm()).collect();
    pearson(&ma, &mb)
}

/// Pearson correlation coefficient; 0 when either input has zero variance.
pub fn pearson<T: Real>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len());
    let n = T::lit(a.len() as f64);
    let mean_a = a.iter().copied().sum::<T>() / n;
    let mean_b = b.iter().copied().sum::<T>() / n;
    let mut sab = T::zero();
    let mut saa = T::zero();
    let mut sbb = T::zero();
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (*x - mean_a, *y - mean_b);
        sab = sab + dx * dy;
        saa = saa + dx * dx;
        sbb = sbb + dy * dy;
    }
    if saa <= T::zero() || sbb <= T::zero() {
        return T::zero();
    }
    (sab / (saa.sqrt() * sbb.sqrt())).max(-T::one()).min(T::one())
}
