//! Physical configuration: RIS panels, antennas, region of interest, targets.
//!
//! All panels lie in the `z = 0` aperture plane and face `+z`. The Tx panels
//! and the Rx panels are each tiled as an edge-to-edge block; the two blocks
//! sit next to each other and the whole aperture is centered on the origin.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scalar::Real;

/// Which antenna a panel serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Tx,
    Rx,
}

impl Side {
    pub fn label(self) -> &'static str {
        match self {
            Side::Tx => "tx",
            Side::Rx => "rx",
        }
    }
}

/// One reflecting element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RisElement<T> {
    pub position: Vec3<T>,
    pub panel_id: usize,
    /// `(row, col)` inside the panel.
    pub local_index: (usize, usize),
}

/// A rectangular RIS panel with a regular element grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RisPanel<T> {
    pub id: usize,
    pub rows: usize,
    pub cols: usize,
    pub element_spacing: T,
    /// Panel center.
    pub origin: Vec3<T>,
    pub side: Side,
    elements: Vec<RisElement<T>>,
}

impl<T: Real> RisPanel<T> {
    /// Creates a panel whose element grid is centered on `origin`.
    pub fn new(id: usize, rows: usize, cols: usize, spacing: T, origin: Vec3<T>, side: Side) -> Self {
        let half_r = T::lit((rows as f64 - 1.0) / 2.0);
        let half_c = T::lit((cols as f64 - 1.0) / 2.0);
        let mut elements = Vec::with_capacity(rows * cols);
        for m in 0..rows {
            for n in 0..cols {
                let dx = (T::lit(n as f64) - half_c) * spacing;
                let dy = (T::lit(m as f64) - half_r) * spacing;
                elements.push(RisElement {
                    position: Vec3::new(origin.x + dx, origin.y + dy, origin.z),
                    panel_id: id,
                    local_index: (m, n),
                });
            }
        }
        Self {
            id,
            rows,
            cols,
            element_spacing: spacing,
            origin,
            side,
            elements,
        }
    }

    /// Elements in row-major order.
    pub fn elements(&self) -> &[RisElement<T>] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Physical extent `(x, y)` of the aperture.
    pub fn extent(&self) -> (T, T) {
        (
            T::lit(self.cols as f64) * self.element_spacing,
            T::lit(self.rows as f64) * self.element_spacing,
        )
    }
}

/// Box-shaped region of interest. `extent_z == 0` means a planar ROI at `center.z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiBox<T> {
    pub center: Vec3<T>,
    pub extent_x: T,
    pub extent_y: T,
    #[serde(default)]
    pub extent_z: T,
}

impl<T: Real> RoiBox<T> {
    pub fn planar(center: Vec3<T>, extent_x: T, extent_y: T) -> Self {
        Self {
            center,
            extent_x,
            extent_y,
            extent_z: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.extent_x > T::zero() && self.extent_y > T::zero()) {
            return Err(Error::Config("ROI extents must be strictly positive".into()));
        }
        if !(self.extent_z >= T::zero()) || !self.center.is_finite() {
            return Err(Error::Config("ROI depth must be non-negative and finite".into()));
        }
        Ok(())
    }

    pub fn x_range(&self) -> (T, T) {
        let h = self.extent_x / T::lit(2.0);
        (self.center.x - h, self.center.x + h)
    }

    pub fn y_range(&self) -> (T, T) {
        let h = self.extent_y / T::lit(2.0);
        (self.center.y - h, self.center.y + h)
    }

    pub fn z_range(&self) -> (T, T) {
        let h = self.extent_z / T::lit(2.0);
        (self.center.z - h, self.center.z + h)
    }

    /// Lateral containment test (x, y only).
    pub fn contains_xy(&self, p: Vec3<T>) -> bool {
        let (x0, x1) = self.x_range();
        let (y0, y1) = self.y_range();
        p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1
    }

    /// Same center, lateral extents multiplied by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        Self {
            extent_x: self.extent_x * factor,
            extent_y: self.extent_y * factor,
            ..*self
        }
    }

    /// Uniform `nx × ny` grid spanning the ROI edges (inclusive) in the plane `z = center.z`.
    pub fn grid(&self, nx: usize, ny: usize) -> ImageGrid<T> {
        ImageGrid::spanning(self.x_range(), self.y_range(), self.center.z, nx, ny)
    }

    /// Centers of an `nx × ny` partition of the ROI.
    pub fn cell_centers(&self, nx: usize, ny: usize) -> Vec<Vec3<T>> {
        let (x0, _) = self.x_range();
        let (y0, _) = self.y_range();
        let dx = self.extent_x / T::lit(nx as f64);
        let dy = self.extent_y / T::lit(ny as f64);
        let half = T::lit(0.5);
        let mut out = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                out.push(Vec3::new(
                    x0 + (T::lit(ix as f64) + half) * dx,
                    y0 + (T::lit(iy as f64) + half) * dy,
                    self.center.z,
                ));
            }
        }
        out
    }
}

/// Regular 2-D sample grid in a constant-z plane, stored row-major (`index = iy * nx + ix`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid<T> {
    pub nx: usize,
    pub ny: usize,
    pub spacing_x: T,
    pub spacing_y: T,
    pub points: Vec<Vec3<T>>,
}

impl<T: Real> ImageGrid<T> {
    /// Grid whose outermost samples sit on the range endpoints.
    pub fn spanning(xr: (T, T), yr: (T, T), z: T, nx: usize, ny: usize) -> Self {
        let step = |(a, b): (T, T), n: usize| {
            if n > 1 {
                (b - a) / T::lit((n - 1) as f64)
            } else {
                T::zero()
            }
        };
        let sx = step(xr, nx);
        let sy = step(yr, ny);
        let start = |(a, b): (T, T), n: usize| if n > 1 { a } else { (a + b) / T::lit(2.0) };
        let (x0, y0) = (start(xr, nx), start(yr, ny));
        let mut points = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                points.push(Vec3::new(
                    x0 + T::lit(ix as f64) * sx,
                    y0 + T::lit(iy as f64) * sy,
                    z,
                ));
            }
        }
        Self {
            nx,
            ny,
            spacing_x: sx,
            spacing_y: sy,
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest of the two grid spacings (one "grid cell").
    pub fn cell(&self) -> T {
        self.spacing_x.max(self.spacing_y)
    }

    /// Index of the sample closest to `p`.
    pub fn nearest(&self, p: Vec3<T>) -> usize {
        nearest_index(&self.points, p)
    }
}

/// Index of the point in `points` closest to `p` (first one on ties).
pub fn nearest_index<T: Real>(points: &[Vec3<T>], p: Vec3<T>) -> usize {
    let mut best = 0;
    let mut best_d = T::infinity();
    for (i, q) in points.iter().enumerate() {
        let d = q.distance(p);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Whether a scatterer belongs to the imaged target or is deliberate clutter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScattererKind {
    Target,
    Clutter,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer<T> {
    pub position: Vec3<T>,
    pub reflectivity: Complex<T>,
    pub kind: ScattererKind,
}

/// Ground-truth point scatterers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TargetMap<T> {
    pub scatterers: Vec<Scatterer<T>>,
}

impl<T: Real> TargetMap<T> {
    pub fn positions(&self) -> Vec<Vec3<T>> {
        self.scatterers.iter().map(|s| s.position).collect()
    }

    pub fn reflectivities(&self) -> Vec<Complex<T>> {
        self.scatterers.iter().map(|s| s.reflectivity).collect()
    }

    /// Scatterers that are part of the target (clutter excluded).
    pub fn targets(&self) -> impl Iterator<Item = &Scatterer<T>> {
        self.scatterers.iter().filter(|s| s.kind == ScattererKind::Target)
    }

    pub fn len(&self) -> usize {
        self.scatterers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scatterers.is_empty()
    }
}

/// Nine unit scatterers on a 3×3 grid, 0.5 m pitch, centered at (0, 1.9) m in the z = 8 m plane.
pub fn reference_target<T: Real>() -> TargetMap<T> {
    let mut scatterers = Vec::with_capacity(9);
    for y in [1.4, 1.9, 2.4] {
        for x in [-0.5, 0.0, 0.5] {
            scatterers.push(Scatterer {
                position: Vec3::from_f64([x, y, 8.0]),
                reflectivity: Complex::new(T::one(), T::zero()),
                kind: ScattererKind::Target,
            });
        }
    }
    TargetMap { scatterers }
}

/// Arrangement of the Tx block relative to the Rx block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BlockArrangement {
    /// Tx block on the -x side, Rx block on the +x side.
    #[default]
    SideBySide,
    /// Tx block below (-y), Rx block above (+y).
    Stacked,
}

/// ROI as written in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiConfig {
    pub center: [f64; 3],
    pub extent_x: f64,
    pub extent_y: f64,
    #[serde(default)]
    pub extent_z: f64,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self {
            center: [0.0, 1.9, 8.0],
            extent_x: 2.0,
            extent_y: 2.0,
            extent_z: 0.0,
        }
    }
}

impl RoiConfig {
    pub fn to_roi<T: Real>(&self) -> RoiBox<T> {
        RoiBox {
            center: Vec3::from_f64(self.center),
            extent_x: T::lit(self.extent_x),
            extent_y: T::lit(self.extent_y),
            extent_z: T::lit(self.extent_z),
        }
    }
}

/// Declarative scene description. Defaults reproduce the reference configuration:
/// 6 + 6 panels of 20×20 elements at 2 cm pitch, collocated antennas at
/// (0, −3, 3) m, five frequencies from 5.9 to 6.1 GHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub panel_rows: usize,
    pub panel_cols: usize,
    pub element_spacing: f64,
    /// Panels per block along x.
    pub block_cols: usize,
    /// Panels per block along y.
    pub block_rows: usize,
    pub arrangement: BlockArrangement,
    /// Edge-to-edge gaps `(S_x, S_y)` between neighbouring panels, meters.
    pub panel_gap: [f64; 2],
    pub tx_antenna: [f64; 3],
    pub rx_antenna: [f64; 3],
    /// Frequency at which mask phase profiles are designed, Hz.
    pub design_frequency: f64,
    pub frequencies: Vec<f64>,
    pub roi: RoiConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            panel_rows: 20,
            panel_cols: 20,
            element_spacing: 0.02,
            block_cols: 3,
            block_rows: 2,
            arrangement: BlockArrangement::SideBySide,
            panel_gap: [0.0, 0.0],
            tx_antenna: [0.0, -3.0, 3.0],
            rx_antenna: [0.0, -3.0, 3.0],
            design_frequency: 6.0e9,
            frequencies: vec![5.9e9, 5.95e9, 6.0e9, 6.05e9, 6.1e9],
            roi: RoiConfig::default(),
        }
    }
}

/// Fully materialized geometry. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene<T> {
    pub tx_panels: Vec<RisPanel<T>>,
    pub rx_panels: Vec<RisPanel<T>>,
    pub tx_antenna: Vec3<T>,
    pub rx_antenna: Vec3<T>,
    pub panel_gap: (T, T),
    pub roi: RoiBox<T>,
    pub frequencies: Vec<T>,
    pub design_frequency: T,
}

impl<T: Real> Scene<T> {
    pub fn panels(&self, side: Side) -> &[RisPanel<T>] {
        match side {
            Side::Tx => &self.tx_panels,
            Side::Rx => &self.rx_panels,
        }
    }

    /// All panels, Tx first; position in this iterator equals the panel id.
    pub fn all_panels(&self) -> impl Iterator<Item = &RisPanel<T>> {
        self.tx_panels.iter().chain(self.rx_panels.iter())
    }

    pub fn panel(&self, id: usize) -> Option<&RisPanel<T>> {
        self.all_panels().nth(id)
    }

    pub fn panel_count(&self) -> usize {
        self.tx_panels.len() + self.rx_panels.len()
    }

    pub fn antenna(&self, side: Side) -> Vec3<T> {
        match side {
            Side::Tx => self.tx_antenna,
            Side::Rx => self.rx_antenna,
        }
    }

    pub fn element_count(&self, side: Side) -> usize {
        self.panels(side).iter().map(RisPanel::len).sum()
    }

    /// Copy of the scene with a different ROI.
    pub fn with_roi(&self, roi: RoiBox<T>) -> Result<Self> {
        roi.validate()?;
        check_roi_in_front(&roi)?;
        Ok(Self { roi, ..self.clone() })
    }

    /// Copy of the scene restricted to a subset of frequencies.
    pub fn with_frequencies(&self, frequencies: Vec<T>) -> Result<Self> {
        check_frequencies(&frequencies)?;
        Ok(Self {
            frequencies,
            ..self.clone()
        })
    }
}

fn check_frequencies<T: Real>(frequencies: &[T]) -> Result<()> {
    if frequencies.is_empty() {
        return Err(Error::Config("at least one frequency is required".into()));
    }
    if frequencies.iter().any(|f| !(*f > T::zero()) || !f.is_finite()) {
        return Err(Error::Config("frequencies must be positive and finite".into()));
    }
    if frequencies.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("frequencies must be strictly increasing".into()));
    }
    Ok(())
}

fn check_roi_in_front<T: Real>(roi: &RoiBox<T>) -> Result<()> {
    let (z0, _) = roi.z_range();
    if !(z0 > T::zero()) {
        return Err(Error::Geometry(
            "ROI must lie strictly in front of the aperture plane (z > 0)".into(),
        ));
    }
    Ok(())
}

/// Materializes a [`SceneConfig`] into panel and element geometry.
pub fn build_scene<T: Real>(config: &SceneConfig) -> Result<Scene<T>> {
    if config.panel_rows == 0 || config.panel_cols == 0 {
        return Err(Error::Config("panel element counts must be positive".into()));
    }
    if config.block_rows == 0 || config.block_cols == 0 {
        return Err(Error::Config("panel block dimensions must be positive".into()));
    }
    if !(config.element_spacing > 0.0) || !config.element_spacing.is_finite() {
        return Err(Error::Config("element spacing must be positive".into()));
    }
    if config.panel_gap.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(Error::Config("panel gaps must be non-negative".into()));
    }
    if !(config.design_frequency > 0.0) || !config.design_frequency.is_finite() {
        return Err(Error::Config("design frequency must be positive".into()));
    }
    let frequencies: Vec<T> = config.frequencies.iter().map(|&f| T::lit(f)).collect();
    check_frequencies(&frequencies)?;
    let roi: RoiBox<T> = config.roi.to_roi();
    roi.validate()?;
    check_roi_in_front(&roi)?;

    let tx_antenna = Vec3::from_f64(config.tx_antenna);
    let rx_antenna = Vec3::from_f64(config.rx_antenna);
    if !tx_antenna.is_finite() || !rx_antenna.is_finite() {
        return Err(Error::Config("antenna positions must be finite".into()));
    }

    let pw = config.panel_cols as f64 * config.element_spacing;
    let ph = config.panel_rows as f64 * config.element_spacing;
    let [sx, sy] = config.panel_gap;
    let bc = config.block_cols as f64;
    let br = config.block_rows as f64;
    let block_w = bc * pw + (bc - 1.0) * sx;
    let block_h = br * ph + (br - 1.0) * sy;

    // lower-left corner of each block
    let (tx_corner, rx_corner) = match config.arrangement {
        BlockArrangement::SideBySide => {
            let total_w = 2.0 * block_w + sx;
            let x0 = -total_w / 2.0;
            ((x0, -block_h / 2.0), (x0 + block_w + sx, -block_h / 2.0))
        }
        BlockArrangement::Stacked => {
            let total_h = 2.0 * block_h + sy;
            let y0 = -total_h / 2.0;
            ((-block_w / 2.0, y0), (-block_w / 2.0, y0 + block_h + sy))
        }
    };

    let per_side = config.block_rows * config.block_cols;
    let make_block = |corner: (f64, f64), side: Side, first_id: usize| {
        let mut panels = Vec::with_capacity(per_side);
        for r in 0..config.block_rows {
            for c in 0..config.block_cols {
                let cx = corner.0 + pw / 2.0 + c as f64 * (pw + sx);
                let cy = corner.1 + ph / 2.0 + r as f64 * (ph + sy);
                panels.push(RisPanel::new(
                    first_id + panels.len(),
                    config.panel_rows,
                    config.panel_cols,
                    T::lit(config.element_spacing),
                    Vec3::from_f64([cx, cy, 0.0]),
                    side,
                ));
            }
        }
        panels
    };

    let tx_panels = make_block(tx_corner, Side::Tx, 0);
    let rx_panels = make_block(rx_corner, Side::Rx, per_side);

    Ok(Scene {
        tx_panels,
        rx_panels,
        tx_antenna,
        rx_antenna,
        panel_gap: (T::lit(sx), T::lit(sy)),
        roi,
        frequencies,
        design_frequency: T::lit(config.design_frequency),
    })
}

/// Steering-angle intervals subtended by a ROI as seen from a panel center.
///
/// `phi` bounds are unwrapped around the azimuth of the ROI center, so
/// `phi_min` may be below `-π` or `phi_max` above `π`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleBounds<T> {
    pub theta_min: T,
    pub theta_max: T,
    pub phi_min: T,
    pub phi_max: T,
}

impl<T: Real> AngleBounds<T> {
    pub fn theta_width(&self) -> T {
        self.theta_max - self.theta_min
    }

    pub fn phi_width(&self) -> T {
        self.phi_max - self.phi_min
    }

    pub fn contains_theta(&self, theta: T, slack: T) -> bool {
        theta >= self.theta_min - slack && theta <= self.theta_max + slack
    }

    /// Azimuth test modulo 2π.
    pub fn contains_phi(&self, phi: T, slack: T) -> bool {
        if self.phi_width() >= T::TAU() {
            return true;
        }
        let tau = T::TAU();
        let shifted = phi - tau * ((phi - self.phi_min) / tau).floor();
        shifted <= self.phi_max + slack || shifted - tau >= self.phi_min - slack
    }

    pub fn contains(&self, theta: T, phi: T, slack: T) -> bool {
        self.contains_theta(theta, slack) && self.contains_phi(phi, slack)
    }

    /// True when `other` lies inside `self`.
    pub fn encloses(&self, other: &Self, slack: T) -> bool {
        self.theta_min <= other.theta_min + slack
            && self.theta_max >= other.theta_max - slack
            && self.phi_width() + slack >= other.phi_width()
            && self.contains_phi(other.phi_min, slack)
            && self.contains_phi(other.phi_max, slack)
    }
}

/// Computes the elevation/azimuth bounds of `roi` seen from the panel center.
pub fn angle_bounds<T: Real>(panel: &RisPanel<T>, roi: &RoiBox<T>) -> Result<AngleBounds<T>> {
    angle_bounds_from(panel.origin, roi)
}

/// [`angle_bounds`] for an arbitrary reference point on the aperture plane.
pub fn angle_bounds_from<T: Real>(reference: Vec3<T>, roi: &RoiBox<T>) -> Result<AngleBounds<T>> {
    let (x0, x1) = roi.x_range();
    let (y0, y1) = roi.y_range();
    let (z0, z1) = roi.z_range();
    let dz_min = z0 - reference.z;
    let dz_max = z1 - reference.z;
    if !(dz_min > T::zero()) {
        return Err(Error::Geometry("ROI is not in front of the panel".into()));
    }
    let (ax, bx) = (x0 - reference.x, x1 - reference.x);
    let (ay, by) = (y0 - reference.y, y1 - reference.y);

    // closest lateral offset of the rectangle to the panel axis
    let clamp0 = |a: T, b: T| {
        if a > T::zero() {
            a
        } else if b < T::zero() {
            b
        } else {
            T::zero()
        }
    };
    let rho_min = clamp0(ax, bx).hypot(clamp0(ay, by));
    let rho_max = ax.abs().max(bx.abs()).hypot(ay.abs().max(by.abs()));
    let theta_min = rho_min.atan2(dz_max);
    let theta_max = rho_max.atan2(dz_min);

    let (phi_min, phi_max) = if rho_min == T::zero() {
        (-T::PI(), T::PI())
    } else {
        let cx = (ax + bx) / T::lit(2.0);
        let cy = (ay + by) / T::lit(2.0);
        let phi_c = cy.atan2(cx);
        let mut lo = T::zero();
        let mut hi = T::zero();
        for (px, py) in [(ax, ay), (ax, by), (bx, ay), (bx, by)] {
            let d = crate::scalar::wrap_phase(py.atan2(px) - phi_c);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (phi_c + lo, phi_c + hi)
    };

    let bounds = AngleBounds {
        theta_min,
        theta_max,
        phi_min,
        phi_max,
    };
    if !(bounds.theta_width() > T::zero()) || !(bounds.phi_width() > T::zero()) {
        return Err(Error::Geometry(
            "ROI subtends a degenerate angular interval".into(),
        ));
    }
    Ok(bounds)
}

/// Steering angles pointing from `from` toward `to`.
pub fn direction_angles<T: Real>(from: Vec3<T>, to: Vec3<T>) -> (T, T) {
    (to - from).spherical_angles()
}
