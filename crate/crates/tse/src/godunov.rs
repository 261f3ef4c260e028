//! Godunov finite-volume solver for the (diffusively corrected) LWR equation,
//! and the density-field container shared across the crate.
//!
//! The field exposes one value per grid node. On a ring road the first and
//! last columns are the same physical point, so the solver advances
//! `n_x - 1` unique cells of width `dx` and mirrors column 0 into the last
//! column of every row. Open (non-ring) segments advance all `n_x` columns
//! with zero-gradient ghost cells.
//!
//! Each output row is advanced with internal sub-steps chosen so that the
//! combined explicit stability number `max|Q'| * dt_sub / dx +
//! 2 * epsilon * dt_sub / dx^2` stays <= 0.9. That bound keeps the update a
//! monotone average of neighboring cells and implies the individual advective
//! CFL <= 0.9 and diffusion number <= 0.45 limits.

use crate::error::{Result, TseError};
use crate::flux::FluxModel;
use crate::grid::Grid;

/// Upper bound for `max|Q'| dt/dx + 2 eps dt/dx^2` per sub-step.
const STABILITY_LIMIT: f64 = 0.9;

/// Discrete density values on a space-time grid, row-major (time-major).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    grid: Grid,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.n_points() {
            return Err(TseError::SizeMismatch(format!(
                "field has {} values for a {}x{} grid",
                values.len(),
                grid.n_t,
                grid.n_x
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(TseError::NonFinite("density field".into()));
        }
        Ok(DensityField { grid, values })
    }

    pub fn constant(grid: &Grid, value: f64) -> Result<Self> {
        DensityField::new(*grid, vec![value; grid.n_points()])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, it: usize, ix: usize) -> f64 {
        self.values[it * self.grid.n_x + ix]
    }

    pub fn row(&self, it: usize) -> &[f64] {
        let nx = self.grid.n_x;
        &self.values[it * nx..(it + 1) * nx]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), &v| (lo.min(v), hi.max(v)),
        )
    }
}

/// Initial density profile.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// `base + (peak - base) * exp(-(x - center)^2 / (2 width^2))`.
    BellShape {
        center: f64,
        width: f64,
        base: f64,
        peak: f64,
    },
    /// Explicit node values; length must equal `n_x`.
    FromRow(Vec<f64>),
}

impl InitialCondition {
    /// The default bell profile: peak 0.9 over base 0.1, centered mid-road.
    pub fn default_bell() -> Self {
        InitialCondition::BellShape {
            center: 0.5,
            width: 0.1,
            base: 0.1,
            peak: 0.9,
        }
    }

    fn validate(&self, grid: &Grid, rho_max: f64) -> Result<()> {
        match self {
            InitialCondition::BellShape {
                center,
                width,
                base,
                peak,
            } => {
                if !(center.is_finite() && width.is_finite() && *width > 0.0) {
                    return Err(TseError::invalid("initial condition", "bad bell geometry"));
                }
                if !(0.0 <= *base && base <= peak && *peak <= rho_max) {
                    return Err(TseError::invalid(
                        "initial condition",
                        format!("need 0 <= base <= peak <= rho_max, got base={base}, peak={peak}"),
                    ));
                }
                Ok(())
            }
            InitialCondition::FromRow(row) => {
                if row.len() != grid.n_x {
                    return Err(TseError::SizeMismatch(format!(
                        "initial row has {} values for n_x = {}",
                        row.len(),
                        grid.n_x
                    )));
                }
                if !row.iter().all(|v| v.is_finite()) {
                    return Err(TseError::NonFinite("initial row".into()));
                }
                Ok(())
            }
        }
    }

    fn sample(&self, grid: &Grid, n_cells: usize) -> Vec<f64> {
        match self {
            InitialCondition::BellShape {
                center,
                width,
                base,
                peak,
            } => (0..n_cells)
                .map(|i| {
                    let x = grid.x_at(i);
                    base + (peak - base) * (-(x - center).powi(2) / (2.0 * width * width)).exp()
                })
                .collect(),
            InitialCondition::FromRow(row) => row[..n_cells].to_vec(),
        }
    }
}

/// Godunov numerical flux at a cell interface: the demand/supply minimum for
/// a concave flux. Inputs are clamped to `[0, rho_max]` before evaluation.
pub fn godunov_flux(model: &FluxModel, rho_left: f64, rho_right: f64) -> f64 {
    let rm = model.rho_max();
    let rc = model.critical_density();
    let l = rho_left.clamp(0.0, rm);
    let r = rho_right.clamp(0.0, rm);
    let demand = model.flux_raw(l.min(rc));
    let supply = model.flux_raw(r.max(rc));
    demand.min(supply)
}

/// Advance `state` by `dt`, sub-stepping internally to satisfy the advective
/// and diffusive stability limits. `state` holds unique cells (ring) or all
/// columns (open segment).
pub(crate) fn advance(
    model: &FluxModel,
    state: &mut [f64],
    fluxes: &mut Vec<f64>,
    dt: f64,
    dx: f64,
    ring: bool,
) -> Result<()> {
    let eps = model.epsilon();
    let wave = model.max_wave_speed();
    let number = |dt_sub: f64| wave * dt_sub / dx + 2.0 * eps * dt_sub / (dx * dx);
    let mut k = (number(dt) / STABILITY_LIMIT).ceil().max(1.0) as usize;
    while number(dt / k as f64) > STABILITY_LIMIT {
        k += 1;
    }
    let dts = dt / k as f64;
    let rc = model.critical_density();
    let rm = model.rho_max();
    let n = state.len();
    fluxes.resize(n + 1, 0.0);
    let lam = dts / dx;
    let mu = eps * dts / (dx * dx);

    for _ in 0..k {
        // fluxes[i] = F_{i-1/2}; ghost cells copy the edge value on open roads.
        for i in 0..=n {
            let left = match i {
                0 if ring => state[n - 1],
                0 => state[0],
                _ => state[i - 1],
            };
            let right = if i == n {
                if ring {
                    state[0]
                } else {
                    state[n - 1]
                }
            } else {
                state[i]
            };
            let l = left.clamp(0.0, rm);
            let r = right.clamp(0.0, rm);
            fluxes[i] = model.flux_raw(l.min(rc)).min(model.flux_raw(r.max(rc)));
        }

        let first = state[0];
        let mut prev = if ring { state[n - 1] } else { first };
        for i in 0..n {
            let here = state[i];
            let next = if i + 1 < n {
                state[i + 1]
            } else if ring {
                first
            } else {
                here
            };
            state[i] = here - lam * (fluxes[i + 1] - fluxes[i]) + mu * (next - 2.0 * here + prev);
            prev = here;
        }
    }
    Ok(())
}

/// Ground-truth solve: row 0 is the initial condition; each later row advances
/// by the conservative Godunov update plus explicit central diffusion.
pub fn solve(
    model: &FluxModel,
    ic: &InitialCondition,
    grid: &Grid,
    ring: bool,
) -> Result<DensityField> {
    model.validate()?;
    grid.validate()?;
    ic.validate(grid, model.rho_max())?;

    let n_x = grid.n_x;
    let n_cells = if ring { n_x - 1 } else { n_x };
    let dx = grid.dx();
    let dt = grid.dt();
    let rm = model.rho_max();

    let mut state = ic.sample(grid, n_cells);
    let mut scratch = Vec::new();
    let mut values = Vec::with_capacity(grid.n_points());
    let push_row = |values: &mut Vec<f64>, state: &[f64]| {
        values.extend_from_slice(state);
        if ring {
            values.push(state[0]);
        }
    };
    push_row(&mut values, &state);

    for row in 1..grid.n_t {
        advance_checked(model, &mut state, &mut scratch, dt, dx, ring, rm, row)?;
        push_row(&mut values, &state);
    }
    DensityField::new(*grid, values)
}

fn advance_checked(
    model: &FluxModel,
    state: &mut [f64],
    scratch: &mut Vec<f64>,
    dt: f64,
    dx: f64,
    ring: bool,
    rho_max: f64,
    row: usize,
) -> Result<()> {
    advance(model, state, scratch, dt, dx, ring)?;
    for &v in state.iter() {
        if !v.is_finite() || v.abs() > 10.0 * rho_max {
            return Err(TseError::Unstable {
                row,
                detail: format!("density reached {v} (rho_max = {rho_max})"),
            });
        }
    }
    Ok(())
}
