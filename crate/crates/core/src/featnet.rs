//! Feature network: spectral heat diffusion followed by a per-vertex MLP,
//! with hand-written reverse mode and an Adam optimizer.
//!
//! Each block maps `X (n×c_in)` to
//! `H = Φ diag(e^{-λ t_c}) Φᵀ A X`, `Y = relu(H W1 + b1) W2 + b2 (+ H)`,
//! where the residual is present when `c_in == c_out` and the per-channel
//! diffusion time is `t = softplus(raw)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Shape;
use crate::spectral::SpectralBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arch {
    pub in_dim: usize,
    pub width: usize,
    pub out_dim: usize,
    pub n_blocks: usize,
}

impl Arch {
    /// Four blocks of width 128.
    pub fn full() -> Arch {
        Arch {
            in_dim: 3,
            width: 128,
            out_dim: 128,
            n_blocks: 4,
        }
    }

    /// Desk-scale preset: four blocks of width 32.
    pub fn desk() -> Arch {
        Arch {
            in_dim: 3,
            width: 32,
            out_dim: 32,
            n_blocks: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.width == 0 || self.out_dim == 0 || self.n_blocks == 0 {
            return Err(Error::InvalidArgument(format!(
                "invalid architecture {self:?}"
            )));
        }
        Ok(())
    }

    fn block_dims(&self, b: usize) -> BlockDims {
        BlockDims {
            c_in: if b == 0 { self.in_dim } else { self.width },
            hidden: self.width,
            c_out: if b + 1 == self.n_blocks {
                self.out_dim
            } else {
                self.width
            },
        }
    }

    fn layout(&self) -> Vec<BlockLayout> {
        let mut off = 0;
        (0..self.n_blocks)
            .map(|b| {
                let dims = self.block_dims(b);
                let l = BlockLayout::new(dims, off);
                off = l.end;
                l
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layout().last().map_or(0, |l| l.end)
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockDims {
    c_in: usize,
    hidden: usize,
    c_out: usize,
}

impl BlockDims {
    fn residual(&self) -> bool {
        self.c_in == self.c_out
    }
}

/// Offsets of one block's tensors inside the flat parameter vector.
/// Matrices are stored column-major.
#[derive(Debug, Clone, Copy)]
struct BlockLayout {
    dims: BlockDims,
    times: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    end: usize,
}

impl BlockLayout {
    fn new(dims: BlockDims, start: usize) -> Self {
        let times = start;
        let w1 = times + dims.c_in;
        let b1 = w1 + dims.c_in * dims.hidden;
        let w2 = b1 + dims.hidden;
        let b2 = w2 + dims.hidden * dims.c_out;
        let end = b2 + dims.c_out;
        BlockLayout {
            dims,
            times,
            w1,
            b1,
            w2,
            b2,
            end,
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Diffusion time assigned to every channel at initialization.
pub const INIT_DIFFUSION_TIME: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNet {
    arch: Arch,
    seed: u64,
    params: Vec<f64>,
}

impl FeatureNet {
    /// Kaiming-style uniform weights, zero biases, diffusion times ≈ 1e-2.
    pub fn init_random(arch: Arch, seed: u64) -> Result<FeatureNet> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; arch.n_params()];
        let raw_t = softplus_inverse(INIT_DIFFUSION_TIME);
        for l in arch.layout() {
            let d = l.dims;
            params[l.times..l.w1].fill(raw_t);
            let bound1 = (6.0 / d.c_in as f64).sqrt();
            for p in &mut params[l.w1..l.b1] {
                *p = rng.random_range(-bound1..bound1);
            }
            let bound2 = (3.0 / d.hidden as f64).sqrt();
            for p in &mut params[l.w2..l.b2] {
                *p = rng.random_range(-bound2..bound2);
            }
        }
        Ok(FeatureNet { arch, seed, params })
    }

    pub fn from_params(arch: Arch, seed: u64, params: Vec<f64>) -> Result<FeatureNet> {
        arch.validate()?;
        if params.len() != arch.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for an architecture needing {}",
                params.len(),
                arch.n_params()
            )));
        }
        Ok(FeatureNet { arch, seed, params })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Current per-channel diffusion times of every block.
    pub fn diffusion_times(&self) -> Vec<Vec<f64>> {
        self.arch
            .layout()
            .iter()
            .map(|l| {
                self.params[l.times..l.w1]
                    .iter()
                    .map(|&r| softplus(r))
                    .collect()
            })
            .collect()
    }

    /// Order-sensitive fingerprint of the parameter bits.
    fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            h ^= p.to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3).rotate_left(17);
        }
        h
    }

    fn mat(&self, off: usize, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(rows, cols, &self.params[off..off + rows * cols])
    }

    /// Network input: vertex coordinates centered at the centroid.
    pub fn input_features(shape: &Shape) -> DMatrix<f64> {
        let c = shape.centroid();
        DMatrix::from_fn(shape.n_vertices(), 3, |i, j| shape.vertices()[i][j] - c[j])
    }

    pub fn forward(
        &self,
        shape: &Shape,
        basis: &SpectralBasis,
    ) -> Result<(DMatrix<f64>, ForwardCache)> {
        if basis.n() != shape.n_vertices() {
            return Err(Error::DimensionMismatch(format!(
                "basis has {} rows, shape has {} vertices",
                basis.n(),
                shape.n_vertices()
            )));
        }
        self.forward_features(&Self::input_features(shape), basis)
    }

    /// Forward pass from an explicit n×in_dim input.
    pub fn forward_features(
        &self,
        input: &DMatrix<f64>,
        basis: &SpectralBasis,
    ) -> Result<(DMatrix<f64>, ForwardCache)> {
        if input.ncols() != self.arch.in_dim || input.nrows() != basis.n() {
            return Err(Error::DimensionMismatch(format!(
                "input is {}x{}, expected {}x{}",
                input.nrows(),
                input.ncols(),
                basis.n(),
                self.arch.in_dim
            )));
        }
        let pinv = basis.pinv();
        let mut x = input.clone();
        let mut blocks = Vec::with_capacity(self.arch.n_blocks);
        for l in self.arch.layout() {
            let d = l.dims;
            let times: Vec<f64> = self.params[l.times..l.w1]
                .iter()
                .map(|&r| softplus(r))
                .collect();
            let coeffs = &pinv * &x;
            let decay =
                DMatrix::from_fn(basis.k(), d.c_in, |j, c| (-basis.evals[j] * times[c]).exp());
            let h = &basis.phi * coeffs.component_mul(&decay);
            let w1 = self.mat(l.w1, d.c_in, d.hidden);
            let b1 = DVector::from_column_slice(&self.params[l.b1..l.w2]);
            let w2 = self.mat(l.w2, d.hidden, d.c_out);
            let b2 = DVector::from_column_slice(&self.params[l.b2..l.end]);
            let mut z1 = &h * &w1;
            for mut row in z1.row_iter_mut() {
                row += b1.transpose();
            }
            let a1 = z1.map(|v| v.max(0.0));
            let mut y = &a1 * &w2;
            for mut row in y.row_iter_mut() {
                row += b2.transpose();
            }
            if d.residual() {
                y += &h;
            }
            blocks.push(BlockCache {
                coeffs,
                decay,
                h,
                z1,
                a1,
            });
            x = y;
        }
        Ok((
            x,
            ForwardCache {
                fingerprint: self.fingerprint(),
                n: basis.n(),
                blocks,
            },
        ))
    }

    /// Reverse mode: gradient of a scalar loss w.r.t. every parameter, in the
    /// flat parameter order, plus the gradient w.r.t. the network input.
    pub fn backward(
        &self,
        basis: &SpectralBasis,
        cache: &ForwardCache,
        d_out: &DMatrix<f64>,
    ) -> Result<(Vec<f64>, DMatrix<f64>)> {
        if cache.fingerprint != self.fingerprint() || cache.blocks.len() != self.arch.n_blocks {
            return Err(Error::StaleCache(
                "forward cache was produced by different parameters".into(),
            ));
        }
        if cache.n != basis.n() || d_out.nrows() != cache.n || d_out.ncols() != self.arch.out_dim {
            return Err(Error::DimensionMismatch(format!(
                "output gradient is {}x{}, expected {}x{}",
                d_out.nrows(),
                d_out.ncols(),
                cache.n,
                self.arch.out_dim
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let layout = self.arch.layout();
        let mut dy = d_out.clone();
        for (l, bc) in layout.iter().zip(&cache.blocks).rev() {
            let d = l.dims;
            let w1 = self.mat(l.w1, d.c_in, d.hidden);
            let w2 = self.mat(l.w2, d.hidden, d.c_out);

            let dw2 = bc.a1.tr_mul(&dy);
            grads[l.w2..l.b2].copy_from_slice(dw2.as_slice());
            for (c, col) in dy.column_iter().enumerate() {
                grads[l.b2 + c] = col.sum();
            }
            let mut dz1 = &dy * w2.transpose();
            dz1.zip_apply(&bc.z1, |g, z| {
                if z <= 0.0 {
                    *g = 0.0
                }
            });
            let dw1 = bc.h.tr_mul(&dz1);
            grads[l.w1..l.b1].copy_from_slice(dw1.as_slice());
            for (c, col) in dz1.column_iter().enumerate() {
                grads[l.b1 + c] = col.sum();
            }
            let mut dh = &dz1 * w1.transpose();
            if d.residual() {
                dh += &dy;
            }
            let dscaled = basis.phi.tr_mul(&dh);
            for c in 0..d.c_in {
                let raw = self.params[l.times + c];
                let dt: f64 = (0..basis.k())
                    .map(|j| {
                        dscaled[(j, c)] * bc.coeffs[(j, c)] * (-basis.evals[j]) * bc.decay[(j, c)]
                    })
                    .sum();
                grads[l.times + c] = dt * sigmoid(raw);
            }
            let dcoeffs = dscaled.component_mul(&bc.decay);
            let mut dx = &basis.phi * dcoeffs;
            for (i, mut row) in dx.row_iter_mut().enumerate() {
                row *= basis.mass[i];
            }
            dy = dx;
        }
        Ok((grads, dy))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            arch: self.arch,
            seed: self.seed,
            params: self.params.clone(),
        };
        let text = serde_json::to_string(&ck).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<FeatureNet> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        FeatureNet::from_params(ck.arch, ck.seed, ck.params)
    }
}

const CHECKPOINT_FORMAT: &str = "ncp-featnet";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    arch: Arch,
    seed: u64,
    params: Vec<f64>,
}

#[derive(Debug, Clone)]
struct BlockCache {
    coeffs: DMatrix<f64>,
    decay: DMatrix<f64>,
    h: DMatrix<f64>,
    z1: DMatrix<f64>,
    a1: DMatrix<f64>,
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    n: usize,
    blocks: Vec<BlockCache>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimState {
    pub fn new(n_params: usize, config: AdamConfig) -> OptimState {
        OptimState {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut OptimState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

pub fn adam_step(net: &mut FeatureNet, grads: &[f64], state: &mut OptimState) -> Result<()> {
    adam_update(&mut net.params, grads, state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::normalize;
    use crate::spectral::{cotan_laplacian, eigenbasis};
    use crate::synth::icosphere;

    fn setup() -> (Shape, SpectralBasis) {
        let s = normalize(&icosphere(2)).unwrap();
        let b = eigenbasis(&cotan_laplacian(&s).unwrap(), 20).unwrap();
        (s, b)
    }

    #[test]
    fn softplus_inverse_roundtrip() {
        for y in [1e-4, 1e-2, 0.5, 3.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = FeatureNet::init_random(Arch::desk(), 1).unwrap();
        let b = FeatureNet::init_random(Arch::desk(), 1).unwrap();
        let c = FeatureNet::init_random(Arch::desk(), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
        for ts in a.diffusion_times() {
            assert!(ts.iter().all(|t| (t - INIT_DIFFUSION_TIME).abs() < 1e-12));
        }
    }

    #[test]
    fn zero_mlp_returns_diffused_input() {
        let (s, b) = setup();
        let arch = Arch {
            in_dim: 3,
            width: 3,
            out_dim: 3,
            n_blocks: 1,
        };
        let mut net = FeatureNet::init_random(arch, 0).unwrap();
        let l = arch.layout()[0];
        net.params[l.w1..l.end].fill(0.0);
        let (out, _) = net.forward(&s, &b).unwrap();
        let x = FeatureNet::input_features(&s);
        let expected = b.heat_diffuse(&x, &[INIT_DIFFUSION_TIME; 3]).unwrap();
        assert!((out - expected).amax() < 1e-12);
    }

    #[test]
    fn stale_cache_rejected() {
        let (s, b) = setup();
        let mut net = FeatureNet::init_random(Arch::desk(), 0).unwrap();
        let (out, cache) = net.forward(&s, &b).unwrap();
        net.params_mut()[0] += 1.0;
        assert!(matches!(
            net.backward(&b, &cache, &out),
            Err(Error::StaleCache(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let (s, b) = setup();
        let net = FeatureNet::init_random(Arch::desk(), 0).unwrap();
        let (out, cache) = net.forward(&s, &b).unwrap();
        let (g, dx) = net.backward(&b, &cache, &(out * 0.0)).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
        assert!(dx.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradients_linear_in_upstream() {
        let (s, b) = setup();
        let net = FeatureNet::init_random(Arch::desk(), 3).unwrap();
        let (out, cache) = net.forward(&s, &b).unwrap();
        let up = out.map(|x| x.sin());
        let (g1, _) = net.backward(&b, &cache, &up).unwrap();
        let (g2, _) = net.backward(&b, &cache, &(&up * 2.0)).unwrap();
        for (a, c) in g1.iter().zip(&g2) {
            assert!((2.0 * a - c).abs() <= 1e-12 * c.abs().max(1.0));
        }
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut x = [1.0];
        let mut st = OptimState::new(1, AdamConfig::default());
        adam_update(&mut x, &[2.0], &mut st).unwrap();
        // m̂ = 2, √v̂ = 2 on the first step.
        let expected = 1.0 - 1e-3 * 2.0 / (2.0 + 1e-8);
        assert!((x[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut x = [0.3, -2.0];
        let mut st = OptimState::new(2, AdamConfig::default());
        adam_update(&mut x, &[0.0, 0.0], &mut st).unwrap();
        assert_eq!(x, [0.3, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_minimizes_parabola() {
        // Scalar recurrence written out directly, as an oracle.
        fn oracle(steps: i32) -> f64 {
            let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
            for t in 1..=steps {
                let g = 2.0 * x;
                m = 0.9 * m + 0.1 * g;
                v = 0.999 * v + 0.001 * g * g;
                let mh = m / (1.0 - 0.9f64.powi(t));
                let vh = v / (1.0 - 0.999f64.powi(t));
                x -= 1e-3 * mh / (vh.sqrt() + 1e-8);
            }
            x
        }
        let mut x = [1.0];
        let mut st = OptimState::new(1, AdamConfig::default());
        let mut at_2000 = 0.0;
        for step in 1..=3000 {
            let g = [2.0 * x[0]];
            adam_update(&mut x, &g, &mut st).unwrap();
            if step == 2000 {
                at_2000 = x[0];
            }
        }
        assert!((at_2000 - oracle(2000)).abs() < 1e-12);
        assert!(at_2000.abs() < 0.03, "x = {at_2000}");
        assert!((x[0] - oracle(3000)).abs() < 1e-12);
        assert!(x[0].abs() < 1e-3, "x = {}", x[0]);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let (s, b) = setup();
        let net = FeatureNet::init_random(Arch::desk(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("net.json");
        net.save(&p).unwrap();
        let back = FeatureNet::load(&p).unwrap();
        assert_eq!(back, net);
        let (f1, _) = net.forward(&s, &b).unwrap();
        let (f2, _) = back.forward(&s, &b).unwrap();
        assert_eq!(f1, f2);
    }
}
