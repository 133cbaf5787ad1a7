//! Per-panel phase profiles and measurement masks.
//!
//! A focused-speckle profile is the sum of three terms, wrapped to `(-π, π]`:
//!
//! * the compensation phase `+k0·|r_source − r_mn|`, which cancels the
//!   spherical phase the antenna wave accumulates on its way to each element;
//! * a linear steering gradient toward `(θ, φ)`;
//! * one scalar offset per panel.
//!
//! Propagation uses the `e^{−ikd}` convention, so a beam leaves the panel in
//! direction `û(θ, φ)` when the element phases vary as `−k0·û·r_mn`. The
//! steering gradient therefore carries a minus sign relative to the usual
//! `k0(x sinθ cosφ + y sinθ sinφ)` magnitude.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scalar::{wavenumber, wrap_phase, Real};
use crate::scene::{angle_bounds, direction_angles, AngleBounds, RisPanel, Scene, Side};

/// RNG stream descriptor: a mask (or noise draw) is a pure function of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub stream: u64,
}

impl SeedRecord {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Derives an independent seed for sub-case `index` of a run seeded with `root`.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = root ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Phase profile of one panel, row-major, wrapped to `(-π, π]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseProfile<T> {
    pub panel_id: usize,
    pub rows: usize,
    pub cols: usize,
    pub phases: Vec<T>,
}

impl<T: Real> PhaseProfile<T> {
    fn from_fn(panel: &RisPanel<T>, f: impl Fn(Vec3<T>) -> T) -> Self {
        Self {
            panel_id: panel.id,
            rows: panel.rows,
            cols: panel.cols,
            phases: panel
                .elements()
                .iter()
                .map(|e| wrap_phase(f(e.position)))
                .collect(),
        }
    }

    pub fn get(&self, m: usize, n: usize) -> T {
        self.phases[m * self.cols + n]
    }

    /// Entry-wise sum, re-wrapped.
    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.phases.len(), other.phases.len());
        Self {
            phases: self
                .phases
                .iter()
                .zip(&other.phases)
                .map(|(a, b)| wrap_phase(*a + *b))
                .collect(),
            ..self.clone()
        }
    }

    /// Adds the same phase to every element.
    pub fn shifted(&self, offset: T) -> Self {
        Self {
            phases: self.phases.iter().map(|p| wrap_phase(*p + offset)).collect(),
            ..self.clone()
        }
    }
}

/// `+k0·|source − r_mn|` for every element: the negation of the phase picked up
/// by the incident spherical wave.
pub fn compensation_phase<T: Real>(panel: &RisPanel<T>, source: Vec3<T>, frequency: T) -> PhaseProfile<T> {
    let k = wavenumber(frequency);
    PhaseProfile::from_fn(panel, |r| k * source.distance(r))
}

/// Linear phase that steers the re-radiated beam toward `(theta, phi)`.
///
/// Entry `(m, n)` is `−k0·(x_mn sinθ cosφ + y_mn sinθ sinφ)` in global coordinates.
pub fn steering_gradient<T: Real>(panel: &RisPanel<T>, theta: T, phi: T, frequency: T) -> PhaseProfile<T> {
    let k = wavenumber(frequency);
    let (st, _) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let (ux, uy) = (st * cp, st * sp);
    PhaseProfile::from_fn(panel, |r| -k * (r.x * ux + r.y * uy))
}

/// Scalar offset that makes a panel steered toward `target` arrive there with zero phase.
///
/// With the gradient referenced to global coordinates, panel `p` centered at
/// `c` contributes `≈ exp(−ik0(û·c + |target − c|))` at the target; this
/// returns the opposite phase so several panels add coherently.
pub fn focusing_offset<T: Real>(panel: &RisPanel<T>, target: Vec3<T>, frequency: T) -> T {
    let k = wavenumber(frequency);
    let c = panel.origin;
    let (theta, phi) = direction_angles(c, target);
    let u = Vec3::from_spherical(theta, phi);
    wrap_phase(k * (u.dot(c) + target.distance(c)))
}

/// Commanded beam direction of one panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Steering<T> {
    pub theta: T,
    pub phi: T,
}

/// Outcome of one randomized redirection draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Redirection<T> {
    pub theta: T,
    pub phi: T,
    /// Magnitudes `C·(max − min)` of the applied perturbations.
    pub theta_rnd: T,
    pub phi_rnd: T,
}

/// Perturbs `nominal` by `C·(max − min)` on each axis with `C ~ U[0, c_max]`.
///
/// The sign of each perturbation is drawn uniformly; when the chosen sign
/// would leave the bounds the opposite sign is used. For `c_max ≤ 0.5` and a
/// nominal direction inside the bounds one of the two signs always fits, so
/// the perturbation magnitude is never altered. Larger `c_max` falls back to
/// clamping.
pub fn random_redirection<T: Real, R: Rng + ?Sized>(
    bounds: &AngleBounds<T>,
    nominal: Steering<T>,
    c_max: T,
    rng: &mut R,
) -> Redirection<T> {
    let theta_rnd = T::lit(rng.random::<f64>()) * c_max * bounds.theta_width();
    let theta_sign = rng.random::<bool>();
    let phi_rnd = T::lit(rng.random::<f64>()) * c_max * bounds.phi_width();
    let phi_sign = rng.random::<bool>();
    let place = |nominal: T, delta: T, positive: bool, lo: T, hi: T| {
        let signed = if positive { delta } else { -delta };
        let first = nominal + signed;
        if first >= lo && first <= hi {
            return first;
        }
        let second = nominal - signed;
        if second >= lo && second <= hi {
            return second;
        }
        first.max(lo).min(hi)
    };
    Redirection {
        theta: place(nominal.theta, theta_rnd, theta_sign, bounds.theta_min, bounds.theta_max),
        phi: place(nominal.phi, phi_rnd, phi_sign, bounds.phi_min, bounds.phi_max),
        theta_rnd,
        phi_rnd,
    }
}

/// How the masks of a measurement campaign are generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskStrategy {
    /// All panels aim at the ROI with randomized angles and offsets.
    FocusedSpeckle {
        #[serde(default = "default_c_max")]
        c_max: f64,
        #[serde(default = "yes")]
        randomize_angles: bool,
        #[serde(default = "yes")]
        randomize_offsets: bool,
    },
    /// Every panel of a side focuses on one point of an `nx × ny` scan grid.
    RasterScan { nx: usize, ny: usize },
    /// Independent uniform phase on every element.
    RandomPattern,
}

fn default_c_max() -> f64 {
    0.25
}

fn yes() -> bool {
    true
}

impl MaskStrategy {
    pub fn focused_speckle() -> Self {
        MaskStrategy::FocusedSpeckle {
            c_max: default_c_max(),
            randomize_angles: true,
            randomize_offsets: true,
        }
    }

    /// Focused speckle with fixed (nominal) angles; only the offsets vary.
    pub fn offsets_only() -> Self {
        MaskStrategy::FocusedSpeckle {
            c_max: default_c_max(),
            randomize_angles: false,
            randomize_offsets: true,
        }
    }

    /// Raster scan whose grid holds exactly `count` points, as square as possible with `nx ≥ ny`.
    pub fn raster_for_count(count: usize) -> Self {
        let (nx, ny) = scan_grid_for(count);
        MaskStrategy::RasterScan { nx, ny }
    }

    pub fn kind(&self) -> StrategyKind {
        match self {
            MaskStrategy::FocusedSpeckle { .. } => StrategyKind::FocusedSpeckle,
            MaskStrategy::RasterScan { .. } => StrategyKind::RasterScan,
            MaskStrategy::RandomPattern => StrategyKind::RandomPattern,
        }
    }
}

/// Factorization `count = nx · ny` with `nx ≥ ny` and `ny` as large as possible.
pub fn scan_grid_for(count: usize) -> (usize, usize) {
    let mut ny = (count as f64).sqrt().floor() as usize;
    while ny > 1 && !count.is_multiple_of(ny) {
        ny -= 1;
    }
    let ny = ny.max(1);
    (count / ny, ny)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    FocusedSpeckle,
    RasterScan,
    RandomPattern,
}

impl StrategyKind {
    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::FocusedSpeckle => "proposed",
            StrategyKind::RasterScan => "raster",
            StrategyKind::RandomPattern => "random",
        }
    }
}

/// One measurement configuration: a phase profile for every panel of the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask<T> {
    pub index: usize,
    pub kind: StrategyKind,
    /// Indexed by panel id (Tx panels first).
    pub profiles: Vec<PhaseProfile<T>>,
    /// `None` for random patterns.
    pub steering: Vec<Option<Steering<T>>>,
    pub offsets: Vec<T>,
    pub seed_record: SeedRecord,
}

impl<T: Real> Mask<T> {
    pub fn profile(&self, panel_id: usize) -> &PhaseProfile<T> {
        &self.profiles[panel_id]
    }
}

/// Nominal per-panel steering toward the ROI center.
pub fn nominal_steering<T: Real>(panel: &RisPanel<T>, scene: &Scene<T>) -> Steering<T> {
    let (theta, phi) = direction_angles(panel.origin, scene.roi.center);
    Steering { theta, phi }
}

/// Generates `count` masks; mask `i` draws from stream `i` of `seed`.
pub fn make_masks<T: Real>(scene: &Scene<T>, strategy: &MaskStrategy, count: usize, seed: u64) -> Result<Vec<Mask<T>>> {
    if count == 0 {
        return Err(Error::Config("mask count must be at least 1".into()));
    }
    if let MaskStrategy::RasterScan { nx, ny } = strategy {
        if nx * ny != count {
            return Err(Error::Config(format!(
                "raster scan grid {nx}×{ny} holds {} points but {count} masks were requested",
                nx * ny
            )));
        }
    }
    if let MaskStrategy::FocusedSpeckle { c_max, .. } = strategy {
        if !(0.0..=1.0).contains(c_max) {
            return Err(Error::Config(format!("c_max must lie in [0, 1], got {c_max}")));
        }
    }
    (0..count)
        .map(|i| make_mask(scene, strategy, i, SeedRecord::new(seed, i as u64)))
        .collect()
}

/// Builds mask number `index` from its seed record; replaying the record reproduces the mask.
pub fn make_mask<T: Real>(scene: &Scene<T>, strategy: &MaskStrategy, index: usize, seed_record: SeedRecord) -> Result<Mask<T>> {
    let mut rng = seed_record.rng();
    let f0 = scene.design_frequency;
    let n = scene.panel_count();
    let mut profiles = Vec::with_capacity(n);
    let mut steering = Vec::with_capacity(n);
    let mut offsets = Vec::with_capacity(n);

    match *strategy {
        MaskStrategy::FocusedSpeckle {
            c_max,
            randomize_angles,
            randomize_offsets,
        } => {
            let c_max = T::lit(c_max);
            for panel in scene.all_panels() {
                let source = scene.antenna(panel.side);
                let nominal = nominal_steering(panel, scene);
                let aim = if randomize_angles {
                    let bounds = angle_bounds(panel, &scene.roi)?;
                    let r = random_redirection(&bounds, nominal, c_max, &mut rng);
                    Steering { theta: r.theta, phi: r.phi }
                } else {
                    nominal
                };
                let offset = if randomize_offsets {
                    T::lit(rng.random::<f64>()) * T::TAU()
                } else {
                    T::zero()
                };
                let profile = compensation_phase(panel, source, f0)
                    .add(&steering_gradient(panel, aim.theta, aim.phi, f0))
                    .shifted(offset);
                profiles.push(profile);
                steering.push(Some(aim));
                offsets.push(offset);
            }
        }
        MaskStrategy::RasterScan { nx, ny } => {
            let points = scene.roi.cell_centers(nx, ny);
            let target = *points.get(index).ok_or_else(|| {
                Error::Config(format!("raster mask index {index} outside the {nx}×{ny} scan grid"))
            })?;
            for panel in scene.all_panels() {
                let mask = focus_profile(scene, panel, target);
                profiles.push(mask.0);
                steering.push(Some(mask.1));
                offsets.push(mask.2);
            }
        }
        MaskStrategy::RandomPattern => {
            for panel in scene.all_panels() {
                let phases = (0..panel.len())
                    .map(|_| wrap_phase(T::lit(rng.random::<f64>()) * T::TAU()))
                    .collect();
                profiles.push(PhaseProfile {
                    panel_id: panel.id,
                    rows: panel.rows,
                    cols: panel.cols,
                    phases,
                });
                steering.push(None);
                offsets.push(T::zero());
            }
        }
    }

    Ok(Mask {
        index,
        kind: strategy.kind(),
        profiles,
        steering,
        offsets,
        seed_record,
    })
}

fn focus_profile<T: Real>(scene: &Scene<T>, panel: &RisPanel<T>, target: Vec3<T>) -> (PhaseProfile<T>, Steering<T>, T) {
    let f0 = scene.design_frequency;
    let (theta, phi) = direction_angles(panel.origin, target);
    let offset = focusing_offset(panel, target, f0);
    let profile = compensation_phase(panel, scene.antenna(panel.side), f0)
        .add(&steering_gradient(panel, theta, phi, f0))
        .shifted(offset);
    (profile, Steering { theta, phi }, offset)
}

/// Mask in which every panel of both sides focuses coherently on `target`.
pub fn focus_mask<T: Real>(scene: &Scene<T>, target: Vec3<T>) -> Mask<T> {
    let mut profiles = Vec::new();
    let mut steering = Vec::new();
    let mut offsets = Vec::new();
    for panel in scene.all_panels() {
        let (p, s, o) = focus_profile(scene, panel, target);
        profiles.push(p);
        steering.push(Some(s));
        offsets.push(o);
    }
    Mask {
        index: 0,
        kind: StrategyKind::RasterScan,
        profiles,
        steering,
        offsets,
        seed_record: SeedRecord::new(0, 0),
    }
}

/// Panels of one side together with their profiles in `mask`.
pub fn side_profiles<'a, T: Real>(
    scene: &'a Scene<T>,
    mask: &'a Mask<T>,
    side: Side,
) -> impl Iterator<Item = (&'a RisPanel<T>, &'a PhaseProfile<T>)> + 'a {
    scene
        .panels(side)
        .iter()
        .map(move |p| (p, mask.profile(p.id)))
}
