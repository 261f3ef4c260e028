//! The estimation network: a fully-connected tanh MLP `rho_hat(t, x; theta)`
//! together with its differentiation engine.
//!
//! Input derivatives (d/dt, d/dx, d2/dx2) propagate exactly through every
//! layer alongside the values: for a hidden layer `a = tanh(z)` with
//! `s = 1 - a^2`,
//!
//! ```text
//! z   = W a0 + b        a   = tanh(z)
//! zt  = W at0           at  = s zt
//! zx  = W ax0           ax  = s zx
//! zxx = W axx0          axx = s zxx - 2 a s zx^2
//! ```
//!
//! Parameter gradients come from a hand-written reverse sweep over that
//! extended computation, so adjoints seeded on any of the four output
//! channels flow back into every weight and bias. Points are processed in
//! fixed-width batches; tail lanes are zero-filled and zero-seeded, which
//! keeps them inert in both sweeps.
//!
//! Derivatives here are with respect to the *raw network inputs*; converting
//! to physical units (when inputs are normalized coordinates) is the caller's
//! concern.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TseError};

/// Lanes per batch; inner loops are written against this fixed width.
pub const BATCH: usize = 32;

/// Architecture of the estimation network. Inputs are (t, x), the output is
/// a single density value, hidden activations are tanh, the output layer is
/// linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetSpec {
    pub hidden_layers: usize,
    pub width: usize,
}

impl NetSpec {
    /// The architecture used throughout the experiments: 8 hidden layers of
    /// 20 tanh units.
    pub fn default_punn() -> Self {
        NetSpec {
            hidden_layers: 8,
            width: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers < 1 || self.width < 1 {
            return Err(TseError::invalid(
                "net spec",
                "need hidden_layers >= 1 and width >= 1",
            ));
        }
        Ok(())
    }

    /// (in_dim, out_dim) for every layer, output layer last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut input = 2;
        for _ in 0..self.hidden_layers {
            dims.push((input, self.width));
            input = self.width;
        }
        dims.push((input, 1));
        dims
    }

    pub fn n_params(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|(i, o)| i * o + o)
            .sum()
    }
}

/// Flat parameter vector theta with the layer layout `[W row-major, b]` per
/// layer, hidden layers first.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    spec: NetSpec,
    data: Vec<f64>,
}

impl NetParams {
    pub fn zeros(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        Ok(NetParams {
            spec,
            data: vec![0.0; spec.n_params()],
        })
    }

    /// Xavier-uniform weights, zero biases. Weights are drawn layer by layer
    /// in row-major order from a ChaCha8 stream, so a seed pins theta exactly.
    pub fn init_xavier(spec: NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(spec.n_params());
        for (fan_in, fan_out) in spec.layer_dims() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            data.extend((0..fan_in * fan_out).map(|_| dist.sample(&mut rng)));
            data.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Ok(NetParams { spec, data })
    }

    pub fn from_vec(spec: NetSpec, data: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if data.len() != spec.n_params() {
            return Err(TseError::SizeMismatch(format!(
                "theta has {} entries, spec needs {}",
                data.len(),
                spec.n_params()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TseError::NonFinite("network parameters".into()));
        }
        Ok(NetParams { spec, data })
    }

    pub fn spec(&self) -> NetSpec {
        self.spec
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Network value and input derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalBundle {
    pub rho_hat: f64,
    pub d_dt: f64,
    pub d_dx: f64,
    pub d2_dx2: f64,
}

/// Adjoint seeds for the four output channels of one point.
#[derive(Debug, Clone, Copy, Default)]
pub struct BundleAdjoint {
    pub rho_hat: f64,
    pub d_dt: f64,
    pub d_dx: f64,
    pub d2_dx2: f64,
}

/// Reusable batch buffers for the forward trace and the reverse sweep.
///
/// Level `k` holds the outputs of layer `k`; level 0 holds the inputs. Every
/// buffer is laid out `[neuron][lane]` with the fixed stride [`BATCH`].
pub struct Workspace {
    spec: NetSpec,
    n_batch: usize,
    // Channel values per level (0..=L).
    a: Vec<Vec<f64>>,
    at: Vec<Vec<f64>>,
    ax: Vec<Vec<f64>>,
    axx: Vec<Vec<f64>>,
    // Hidden-layer trace (level 1..=H): activation slope and z-channels.
    s: Vec<Vec<f64>>,
    zt: Vec<Vec<f64>>,
    zx: Vec<Vec<f64>>,
    zxx: Vec<Vec<f64>>,
    // Adjoint accumulators per level.
    a_bar: Vec<Vec<f64>>,
    at_bar: Vec<Vec<f64>>,
    ax_bar: Vec<Vec<f64>>,
    axx_bar: Vec<Vec<f64>>,
    // Per-layer scratch for z-channel adjoints.
    z_bar: Vec<f64>,
    zt_bar: Vec<f64>,
    zx_bar: Vec<f64>,
    zxx_bar: Vec<f64>,
}

impl Workspace {
    pub fn new(spec: NetSpec) -> Self {
        let levels = spec.hidden_layers + 2; // inputs + hidden + output
        let width_at = |k: usize| -> usize {
            if k == 0 {
                2
            } else if k <= spec.hidden_layers {
                spec.width
            } else {
                1
            }
        };
        let buf = |k: usize| vec![0.0; width_at(k) * BATCH];
        let per_level = |f: &dyn Fn(usize) -> Vec<f64>| (0..levels).map(f).collect::<Vec<_>>();

        let mut at0 = buf(0);
        let ax0 = {
            let mut b = buf(0);
            for j in 0..BATCH {
                b[BATCH + j] = 1.0; // d x / d x
            }
            b
        };
        for j in 0..BATCH {
            at0[j] = 1.0; // d t / d t
        }

        let mut ws = Workspace {
            spec,
            n_batch: 0,
            a: per_level(&buf),
            at: per_level(&buf),
            ax: per_level(&buf),
            axx: per_level(&buf),
            s: per_level(&buf),
            zt: per_level(&buf),
            zx: per_level(&buf),
            zxx: per_level(&buf),
            a_bar: per_level(&buf),
            at_bar: per_level(&buf),
            ax_bar: per_level(&buf),
            axx_bar: per_level(&buf),
            z_bar: vec![0.0; spec.width.max(1) * BATCH],
            zt_bar: vec![0.0; spec.width.max(1) * BATCH],
            zx_bar: vec![0.0; spec.width.max(1) * BATCH],
            zxx_bar: vec![0.0; spec.width.max(1) * BATCH],
        };
        ws.at[0] = at0;
        ws.ax[0] = ax0;
        ws
    }

    fn load_inputs(&mut self, pts: &[(f64, f64)]) {
        assert!(pts.len() <= BATCH, "batch too large");
        self.n_batch = pts.len();
        let a0 = &mut self.a[0];
        a0.fill(0.0);
        for (j, &(t, x)) in pts.iter().enumerate() {
            a0[j] = t;
            a0[BATCH + j] = x;
        }
    }

    /// Bundle of lane `j` after [`forward_extended`].
    pub fn bundle(&self, j: usize) -> EvalBundle {
        debug_assert!(j < self.n_batch);
        let last = self.spec.hidden_layers + 1;
        EvalBundle {
            rho_hat: self.a[last][j],
            d_dt: self.at[last][j],
            d_dx: self.ax[last][j],
            d2_dx2: self.axx[last][j],
        }
    }

    /// Output value of lane `j` after [`forward_values`] or [`forward_extended`].
    pub fn value(&self, j: usize) -> f64 {
        debug_assert!(j < self.n_batch);
        self.a[self.spec.hidden_layers + 1][j]
    }
}

struct LayerView<'a> {
    w: &'a [f64],
    b: &'a [f64],
    in_dim: usize,
    out_dim: usize,
}

fn layer_view(params: &NetParams, layer: usize) -> LayerView<'_> {
    let dims = params.spec.layer_dims();
    let mut off = 0;
    for l in 0..layer {
        let (i, o) = dims[l];
        off += i * o + o;
    }
    let (in_dim, out_dim) = dims[layer];
    LayerView {
        w: &params.data[off..off + in_dim * out_dim],
        b: &params.data[off + in_dim * out_dim..off + in_dim * out_dim + out_dim],
        in_dim,
        out_dim,
    }
}

fn layer_offset(spec: &NetSpec, layer: usize) -> usize {
    let dims = spec.layer_dims();
    dims[..layer].iter().map(|(i, o)| i * o + o).sum()
}

/// `out[o][*] = bias[o] + sum_i w[o][i] * input[i][*]` over full lanes.
#[inline]
fn linear(w: &[f64], bias: Option<&[f64]>, input: &[f64], out: &mut [f64], in_dim: usize, out_dim: usize) {
    for o in 0..out_dim {
        let row = &mut out[o * BATCH..(o + 1) * BATCH];
        match bias {
            Some(b) => row.fill(b[o]),
            None => row.fill(0.0),
        }
        for i in 0..in_dim {
            let c = w[o * in_dim + i];
            let inp = &input[i * BATCH..(i + 1) * BATCH];
            for j in 0..BATCH {
                row[j] += c * inp[j];
            }
        }
    }
}

/// `acc[i][*] += sum_o w[o][i] * src[o][*]` (transpose apply).
#[inline]
fn linear_transpose_add(w: &[f64], src: &[f64], acc: &mut [f64], in_dim: usize, out_dim: usize) {
    for o in 0..out_dim {
        let s = &src[o * BATCH..(o + 1) * BATCH];
        for i in 0..in_dim {
            let c = w[o * in_dim + i];
            let row = &mut acc[i * BATCH..(i + 1) * BATCH];
            for j in 0..BATCH {
                row[j] += c * s[j];
            }
        }
    }
}

/// `w_bar[o][i] += dot(src[o][*], input[i][*])`.
#[inline]
fn outer_accumulate(w_bar: &mut [f64], src: &[f64], input: &[f64], in_dim: usize, out_dim: usize) {
    for o in 0..out_dim {
        let s = &src[o * BATCH..(o + 1) * BATCH];
        for i in 0..in_dim {
            let inp = &input[i * BATCH..(i + 1) * BATCH];
            let mut acc = 0.0;
            for j in 0..BATCH {
                acc += s[j] * inp[j];
            }
            w_bar[o * in_dim + i] += acc;
        }
    }
}

#[inline]
fn bias_accumulate(b_bar: &mut [f64], src: &[f64], out_dim: usize) {
    for o in 0..out_dim {
        let s = &src[o * BATCH..(o + 1) * BATCH];
        b_bar[o] += s.iter().sum::<f64>();
    }
}

/// Forward pass with exact derivative channels for up to [`BATCH`] points.
pub fn forward_extended(params: &NetParams, pts: &[(f64, f64)], ws: &mut Workspace) {
    debug_assert_eq!(params.spec, ws.spec);
    ws.load_inputs(pts);
    let h = params.spec.hidden_layers;
    for k in 1..=h {
        let lv = layer_view(params, k - 1);
        let (prev_a, rest_a) = ws.a.split_at_mut(k);
        let (prev_at, rest_at) = ws.at.split_at_mut(k);
        let (prev_ax, rest_ax) = ws.ax.split_at_mut(k);
        let (prev_axx, rest_axx) = ws.axx.split_at_mut(k);
        let a = &mut rest_a[0];
        let at = &mut rest_at[0];
        let ax = &mut rest_ax[0];
        let axx = &mut rest_axx[0];

        // z goes into `a` and is transformed in place.
        linear(lv.w, Some(lv.b), &prev_a[k - 1], a, lv.in_dim, lv.out_dim);
        linear(lv.w, None, &prev_at[k - 1], &mut ws.zt[k], lv.in_dim, lv.out_dim);
        linear(lv.w, None, &prev_ax[k - 1], &mut ws.zx[k], lv.in_dim, lv.out_dim);
        linear(lv.w, None, &prev_axx[k - 1], &mut ws.zxx[k], lv.in_dim, lv.out_dim);

        let s = &mut ws.s[k];
        let zt = &ws.zt[k];
        let zx = &ws.zx[k];
        let zxx = &ws.zxx[k];
        for e in 0..lv.out_dim * BATCH {
            let t = a[e].tanh();
            let sl = 1.0 - t * t;
            a[e] = t;
            s[e] = sl;
            at[e] = sl * zt[e];
            ax[e] = sl * zx[e];
            axx[e] = sl * zxx[e] - 2.0 * t * sl * zx[e] * zx[e];
        }
    }
    // Linear output layer.
    let lv = layer_view(params, h);
    let (prev, out) = ws.a.split_at_mut(h + 1);
    linear(lv.w, Some(lv.b), &prev[h], &mut out[0], lv.in_dim, lv.out_dim);
    let (prev, out) = ws.at.split_at_mut(h + 1);
    linear(lv.w, None, &prev[h], &mut out[0], lv.in_dim, lv.out_dim);
    let (prev, out) = ws.ax.split_at_mut(h + 1);
    linear(lv.w, None, &prev[h], &mut out[0], lv.in_dim, lv.out_dim);
    let (prev, out) = ws.axx.split_at_mut(h + 1);
    linear(lv.w, None, &prev[h], &mut out[0], lv.in_dim, lv.out_dim);
}

/// Value-only forward pass (stores the trace needed for [`backward_values`]).
pub fn forward_values(params: &NetParams, pts: &[(f64, f64)], ws: &mut Workspace) {
    debug_assert_eq!(params.spec, ws.spec);
    ws.load_inputs(pts);
    let h = params.spec.hidden_layers;
    for k in 1..=h {
        let lv = layer_view(params, k - 1);
        let (prev, rest) = ws.a.split_at_mut(k);
        let a = &mut rest[0];
        linear(lv.w, Some(lv.b), &prev[k - 1], a, lv.in_dim, lv.out_dim);
        let s = &mut ws.s[k];
        for e in 0..lv.out_dim * BATCH {
            let t = a[e].tanh();
            a[e] = t;
            s[e] = 1.0 - t * t;
        }
    }
    let lv = layer_view(params, h);
    let (prev, out) = ws.a.split_at_mut(h + 1);
    linear(lv.w, Some(lv.b), &prev[h], &mut out[0], lv.in_dim, lv.out_dim);
}

/// Reverse sweep over the extended trace left by [`forward_extended`].
/// Adds d(sum_j seeds_j . channels_j)/d(theta) into `grad`.
pub fn backward_extended(
    params: &NetParams,
    ws: &mut Workspace,
    seeds: &[BundleAdjoint],
    grad: &mut [f64],
) {
    debug_assert_eq!(seeds.len(), ws.n_batch);
    debug_assert_eq!(grad.len(), params.spec.n_params());
    let h = params.spec.hidden_layers;
    for k in 0..=h + 1 {
        ws.a_bar[k].fill(0.0);
        ws.at_bar[k].fill(0.0);
        ws.ax_bar[k].fill(0.0);
        ws.axx_bar[k].fill(0.0);
    }
    for (j, s) in seeds.iter().enumerate() {
        ws.a_bar[h + 1][j] = s.rho_hat;
        ws.at_bar[h + 1][j] = s.d_dt;
        ws.ax_bar[h + 1][j] = s.d_dx;
        ws.axx_bar[h + 1][j] = s.d2_dx2;
    }

    // Output layer: z-channel adjoints are the seeds themselves.
    {
        let lv = layer_view(params, h);
        let off = layer_offset(&params.spec, h);
        let (w_bar, b_bar) = grad[off..off + lv.in_dim * lv.out_dim + lv.out_dim]
            .split_at_mut(lv.in_dim * lv.out_dim);
        outer_accumulate(w_bar, &ws.a_bar[h + 1], &ws.a[h], lv.in_dim, lv.out_dim);
        outer_accumulate(w_bar, &ws.at_bar[h + 1], &ws.at[h], lv.in_dim, lv.out_dim);
        outer_accumulate(w_bar, &ws.ax_bar[h + 1], &ws.ax[h], lv.in_dim, lv.out_dim);
        outer_accumulate(w_bar, &ws.axx_bar[h + 1], &ws.axx[h], lv.in_dim, lv.out_dim);
        bias_accumulate(b_bar, &ws.a_bar[h + 1], lv.out_dim);

        let (below, above) = ws.a_bar.split_at_mut(h + 1);
        linear_transpose_add(lv.w, &above[0], &mut below[h], lv.in_dim, lv.out_dim);
        let (below, above) = ws.at_bar.split_at_mut(h + 1);
        linear_transpose_add(lv.w, &above[0], &mut below[h], lv.in_dim, lv.out_dim);
        let (below, above) = ws.ax_bar.split_at_mut(h + 1);
        linear_transpose_add(lv.w, &above[0], &mut below[h], lv.in_dim, lv.out_dim);
        let (below, above) = ws.axx_bar.split_at_mut(h + 1);
        linear_transpose_add(lv.w, &above[0], &mut below[h], lv.in_dim, lv.out_dim);
    }

    for k in (1..=h).rev() {
        let lv = layer_view(params, k - 1);
        let n = lv.out_dim * BATCH;
        let a = &ws.a[k];
        let s = &ws.s[k];
        let zt = &ws.zt[k];
        let zx = &ws.zx[k];
        let zxx = &ws.zxx[k];
        // Elementwise reversal of
        //   at = s zt, ax = s zx, axx = s zxx - 2 a s zx^2, s = 1 - a^2, a = tanh(z).
        for e in 0..n {
            let axx_b = ws.axx_bar[k][e];
            let ax_b = ws.ax_bar[k][e];
            let at_b = ws.at_bar[k][e];
            let mut a_b = ws.a_bar[k][e];
            let s_b = axx_b * (zxx[e] - 2.0 * a[e] * zx[e] * zx[e]) + ax_b * zx[e] + at_b * zt[e];
            a_b += axx_b * (-2.0 * s[e] * zx[e] * zx[e]);
            a_b += s_b * (-2.0 * a[e]);
            ws.zxx_bar[e] = axx_b * s[e];
            ws.zx_bar[e] = axx_b * (-4.0 * a[e] * s[e] * zx[e]) + ax_b * s[e];
            ws.zt_bar[e] = at_b * s[e];
            ws.z_bar[e] = a_b * s[e];
        }

        let off = layer_offset(&params.spec, k - 1);
        let (w_bar, b_bar) = grad[off..off + lv.in_dim * lv.out_dim + lv.out_dim]
            .split_at_mut(lv.in_dim * lv.out_dim);
        outer_accumulate(w_bar, &ws.z_bar[..n], &ws.a[k - 1], lv.in_dim, lv.out_dim);
        outer_accumulate(w_bar, &ws.zt_bar[..n], &ws.at[k - 1], lv.in_dim, lv.out_dim);
        outer_accumulate(w_bar, &ws.zx_bar[..n], &ws.ax[k - 1], lv.in_dim, lv.out_dim);
        outer_accumulate(w_bar, &ws.zxx_bar[..n], &ws.axx[k - 1], lv.in_dim, lv.out_dim);
        bias_accumulate(b_bar, &ws.z_bar[..n], lv.out_dim);

        if k > 1 {
            linear_transpose_add(lv.w, &ws.z_bar[..n], &mut ws.a_bar[k - 1], lv.in_dim, lv.out_dim);
            linear_transpose_add(lv.w, &ws.zt_bar[..n], &mut ws.at_bar[k - 1], lv.in_dim, lv.out_dim);
            linear_transpose_add(lv.w, &ws.zx_bar[..n], &mut ws.ax_bar[k - 1], lv.in_dim, lv.out_dim);
            linear_transpose_add(lv.w, &ws.zxx_bar[..n], &mut ws.axx_bar[k - 1], lv.in_dim, lv.out_dim);
        }
    }
}

/// Reverse sweep over the value trace left by [`forward_values`].
pub fn backward_values(params: &NetParams, ws: &mut Workspace, seeds: &[f64], grad: &mut [f64]) {
    debug_assert_eq!(seeds.len(), ws.n_batch);
    let h = params.spec.hidden_layers;
    for k in 0..=h + 1 {
        ws.a_bar[k].fill(0.0);
    }
    for (j, &s) in seeds.iter().enumerate() {
        ws.a_bar[h + 1][j] = s;
    }
    {
        let lv = layer_view(params, h);
        let off = layer_offset(&params.spec, h);
        let (w_bar, b_bar) = grad[off..off + lv.in_dim * lv.out_dim + lv.out_dim]
            .split_at_mut(lv.in_dim * lv.out_dim);
        outer_accumulate(w_bar, &ws.a_bar[h + 1], &ws.a[h], lv.in_dim, lv.out_dim);
        bias_accumulate(b_bar, &ws.a_bar[h + 1], lv.out_dim);
        let (below, above) = ws.a_bar.split_at_mut(h + 1);
        linear_transpose_add(lv.w, &above[0], &mut below[h], lv.in_dim, lv.out_dim);
    }
    for k in (1..=h).rev() {
        let lv = layer_view(params, k - 1);
        let n = lv.out_dim * BATCH;
        for e in 0..n {
            ws.z_bar[e] = ws.a_bar[k][e] * ws.s[k][e];
        }
        let off = layer_offset(&params.spec, k - 1);
        let (w_bar, b_bar) = grad[off..off + lv.in_dim * lv.out_dim + lv.out_dim]
            .split_at_mut(lv.in_dim * lv.out_dim);
        outer_accumulate(w_bar, &ws.z_bar[..n], &ws.a[k - 1], lv.in_dim, lv.out_dim);
        bias_accumulate(b_bar, &ws.z_bar[..n], lv.out_dim);
        if k > 1 {
            linear_transpose_add(lv.w, &ws.z_bar[..n], &mut ws.a_bar[k - 1], lv.in_dim, lv.out_dim);
        }
    }
}

/// Single-point forward pass.
pub fn forward(params: &NetParams, t: f64, x: f64) -> Result<f64> {
    if !t.is_finite() || !x.is_finite() {
        return Err(TseError::NonFinite("network input".into()));
    }
    let mut ws = Workspace::new(params.spec);
    forward_values(params, &[(t, x)], &mut ws);
    let v = ws.value(0);
    if !v.is_finite() {
        return Err(TseError::NonFinite("network output".into()));
    }
    Ok(v)
}

/// Single-point value plus exact input derivatives.
pub fn eval_with_input_derivs(params: &NetParams, t: f64, x: f64) -> Result<EvalBundle> {
    if !t.is_finite() || !x.is_finite() {
        return Err(TseError::NonFinite("network input".into()));
    }
    let mut ws = Workspace::new(params.spec);
    forward_extended(params, &[(t, x)], &mut ws);
    Ok(ws.bundle(0))
}

/// Batched field evaluation; returns one value per point.
pub fn forward_many(params: &NetParams, pts: &[(f64, f64)]) -> Vec<f64> {
    let mut ws = Workspace::new(params.spec);
    let mut out = Vec::with_capacity(pts.len());
    for chunk in pts.chunks(BATCH) {
        forward_values(params, chunk, &mut ws);
        out.extend((0..chunk.len()).map(|j| ws.value(j)));
    }
    out
}
