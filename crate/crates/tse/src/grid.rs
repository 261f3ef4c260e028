//! Space-time grid, point sets, detector layouts, and seeded sampling of
//! training points.
//!
//! The grid is node-centered: `n_t x n_x` nodes spaced `dt = (t_max-t_min)/(n_t-1)`
//! and `dx = (x_max-x_min)/(n_x-1)`, so both domain endpoints are grid nodes.
//! All sampling uses `ChaCha8Rng` seeded with a caller-provided `u64`; points are
//! returned in draw order, so a fixed seed reproduces the exact same set.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TseError};
use crate::godunov::DensityField;

/// A rectangular node-centered space-time grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub t_min: f64,
    pub t_max: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub n_t: usize,
    pub n_x: usize,
}

impl Grid {
    pub fn new(
        t_min: f64,
        t_max: f64,
        x_min: f64,
        x_max: f64,
        n_t: usize,
        n_x: usize,
    ) -> Result<Self> {
        let g = Grid {
            t_min,
            t_max,
            x_min,
            x_max,
            n_t,
            n_x,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_min.is_finite() && self.t_max.is_finite())
            || !(self.x_min.is_finite() && self.x_max.is_finite())
        {
            return Err(TseError::invalid("grid", "non-finite bounds"));
        }
        if self.n_t < 2 || self.n_x < 2 {
            return Err(TseError::invalid(
                "grid",
                format!("need n_t >= 2 and n_x >= 2, got {}x{}", self.n_t, self.n_x),
            ));
        }
        if self.t_max <= self.t_min {
            return Err(TseError::invalid("grid", "t_max must exceed t_min"));
        }
        if self.x_max <= self.x_min {
            return Err(TseError::invalid("grid", "x_max must exceed x_min"));
        }
        Ok(())
    }

    /// Total number of grid nodes.
    pub fn n_points(&self) -> usize {
        self.n_t * self.n_x
    }

    /// Node spacing in time.
    pub fn dt(&self) -> f64 {
        (self.t_max - self.t_min) / (self.n_t - 1) as f64
    }

    /// Node spacing in space.
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_x - 1) as f64
    }

    /// Time coordinate of row `it`. Endpoints are hit exactly.
    pub fn t_at(&self, it: usize) -> f64 {
        debug_assert!(it < self.n_t);
        self.t_min + (self.t_max - self.t_min) * it as f64 / (self.n_t - 1) as f64
    }

    /// Space coordinate of column `ix`. Endpoints are hit exactly.
    pub fn x_at(&self, ix: usize) -> f64 {
        debug_assert!(ix < self.n_x);
        self.x_min + (self.x_max - self.x_min) * ix as f64 / (self.n_x - 1) as f64
    }

    /// All grid nodes in row-major (time-major) order.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.n_points());
        for it in 0..self.n_t {
            let t = self.t_at(it);
            for ix in 0..self.n_x {
                out.push((t, self.x_at(ix)));
            }
        }
        out
    }

    /// Column index nearest to `x`; exact ties break toward the smaller index.
    pub fn nearest_column(&self, x: f64) -> Result<usize> {
        if !x.is_finite() || x < self.x_min || x > self.x_max {
            return Err(TseError::invalid(
                "detector position",
                format!("x = {x} outside [{}, {}]", self.x_min, self.x_max),
            ));
        }
        let u = (x - self.x_min) / (self.x_max - self.x_min) * (self.n_x - 1) as f64;
        let lo = u.floor();
        let frac = u - lo;
        let idx = if frac > 0.5 { lo as usize + 1 } else { lo as usize };
        Ok(idx.min(self.n_x - 1))
    }
}

/// What a set of points is used for during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    Observation,
    Auxiliary,
    /// Points come in (t, x_min)/(t, x_max) pairs sharing t, stored adjacently.
    BoundaryPair,
}

/// A list of (t, x) points with a role tag.
#[derive(Debug, Clone)]
pub struct PointSet {
    pub kind: PointKind,
    pub points: Vec<(f64, f64)>,
}

impl PointSet {
    pub fn empty(kind: PointKind) -> Self {
        PointSet {
            kind,
            points: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Loop-detector positions along the road.
#[derive(Debug, Clone)]
pub struct DetectorLayout {
    positions: Vec<f64>,
}

impl DetectorLayout {
    /// Validates that positions are sorted, distinct, and inside `[x_min, x_max]`.
    pub fn new(positions: Vec<f64>, x_min: f64, x_max: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(TseError::invalid("detector layout", "no positions"));
        }
        for w in positions.windows(2) {
            if w[0] >= w[1] {
                return Err(TseError::invalid(
                    "detector layout",
                    "positions must be strictly increasing",
                ));
            }
        }
        for &p in &positions {
            if !p.is_finite() || p < x_min || p > x_max {
                return Err(TseError::invalid(
                    "detector layout",
                    format!("position {p} outside [{x_min}, {x_max}]"),
                ));
            }
        }
        Ok(DetectorLayout { positions })
    }

    /// `m` detectors evenly spaced including both endpoints (for `m >= 2`);
    /// a single detector sits at `x_min`.
    pub fn evenly_spaced(m: usize, x_min: f64, x_max: f64) -> Result<Self> {
        if m == 0 {
            return Err(TseError::invalid("detector layout", "m must be >= 1"));
        }
        let positions = if m == 1 {
            vec![x_min]
        } else {
            (0..m)
                .map(|k| x_min + (x_max - x_min) * k as f64 / (m - 1) as f64)
                .collect()
        };
        Ok(DetectorLayout { positions })
    }

    pub fn m(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Grid column index for each detector (nearest column, ties to smaller).
    pub fn column_indices(&self, grid: &Grid) -> Result<Vec<usize>> {
        self.positions
            .iter()
            .map(|&x| grid.nearest_column(x))
            .collect()
    }
}

/// Observation points at the detector columns for every time row, with the
/// true densities at those nodes as targets.
///
/// Points are emitted detector-major: all rows of detector 0, then detector 1, ...
pub fn sample_observations(
    grid: &Grid,
    layout: &DetectorLayout,
    truth: &DensityField,
) -> Result<(PointSet, Vec<f64>)> {
    if truth.grid() != grid {
        return Err(TseError::SizeMismatch(
            "truth field grid differs from sampling grid".into(),
        ));
    }
    let cols = layout.column_indices(grid)?;
    let mut points = Vec::with_capacity(cols.len() * grid.n_t);
    let mut targets = Vec::with_capacity(cols.len() * grid.n_t);
    for &ix in &cols {
        for it in 0..grid.n_t {
            points.push((grid.t_at(it), grid.x_at(ix)));
            targets.push(truth.get(it, ix));
        }
    }
    Ok((
        PointSet {
            kind: PointKind::Observation,
            points,
        },
        targets,
    ))
}

/// The whole initial row (t = t_min) as observation points with targets.
pub fn observe_initial_row(grid: &Grid, truth: &DensityField) -> Result<(PointSet, Vec<f64>)> {
    if truth.grid() != grid {
        return Err(TseError::SizeMismatch(
            "truth field grid differs from sampling grid".into(),
        ));
    }
    let t0 = grid.t_at(0);
    let points = (0..grid.n_x).map(|ix| (t0, grid.x_at(ix))).collect();
    let targets = (0..grid.n_x).map(|ix| truth.get(0, ix)).collect();
    Ok((
        PointSet {
            kind: PointKind::Observation,
            points,
        },
        targets,
    ))
}

/// `n_a` distinct grid nodes drawn uniformly without replacement.
pub fn sample_auxiliary(grid: &Grid, n_a: usize, seed: u64) -> Result<PointSet> {
    let n_g = grid.n_points();
    if n_a > n_g {
        return Err(TseError::invalid(
            "auxiliary sample",
            format!("n_a = {n_a} exceeds grid size {n_g}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = rand::seq::index::sample(&mut rng, n_g, n_a);
    let points = idx
        .iter()
        .map(|flat| {
            let it = flat / grid.n_x;
            let ix = flat % grid.n_x;
            (grid.t_at(it), grid.x_at(ix))
        })
        .collect();
    Ok(PointSet {
        kind: PointKind::Auxiliary,
        points,
    })
}

/// `n_b` time rows drawn without replacement; each contributes the pair
/// (t, x_min), (t, x_max), stored adjacently.
pub fn sample_boundary_pairs(grid: &Grid, n_b: usize, seed: u64) -> Result<PointSet> {
    if n_b > grid.n_t {
        return Err(TseError::invalid(
            "boundary sample",
            format!("n_b = {n_b} exceeds n_t = {}", grid.n_t),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = rand::seq::index::sample(&mut rng, grid.n_t, n_b);
    let mut points = Vec::with_capacity(2 * n_b);
    for it in idx.iter() {
        let t = grid.t_at(it);
        points.push((t, grid.x_min));
        points.push((t, grid.x_max));
    }
    Ok(PointSet {
        kind: PointKind::BoundaryPair,
        points,
    })
}
