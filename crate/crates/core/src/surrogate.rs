//! Two-layer ReLU surrogates of the boundary-to-boundary maps.
//!
//! `Q(phi) = W2 relu(W1 phi + b1) + b2`, optionally wrapped in input/output
//! normalization. A net can start from the truncated SVD `U_r S_r V_r^T` of
//! the linearized map: with `W1 = [V sqrt(S), -V sqrt(S)]^T` and
//! `W2 = [U sqrt(S), -U sqrt(S)]` the identity `relu(x) - relu(-x) = x` makes
//! the untrained net exactly linear.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::decomposition::{Decomposition, PatchIndex};
use crate::error::{Error, Result};
use crate::grid::BoundaryTrace;
use crate::local_solver::{LocalSolver, SolveOptions};
use crate::problems::ProblemSpec;
use crate::sampling::TrainingSet;

/// Floor of the normalization scale.
pub const NORM_EPS: f64 = 1e-8;

/// Input normalization of a trace: `(mean, scale)` with
/// `scale = max(sqrt(dx * sum phi_i^2), eps1)`.
pub fn normalization(phi: &[f64], dx: f64, eps1: f64) -> (f64, f64) {
    let mean = phi.iter().sum::<f64>() / phi.len() as f64;
    let scale = (dx * phi.iter().map(|v| v * v).sum::<f64>()).sqrt().max(eps1);
    (mean, scale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerNet {
    /// `h x d`
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// `p x h`
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub normalize: bool,
    pub eps1: f64,
    /// Mesh width used by the normalization norm.
    pub dx: f64,
}

/// Activations of one batch, kept for the backward pass.
struct Cache {
    /// Network input after normalization, `d x B`.
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    a: DMatrix<f64>,
    /// `(mean, scale)` per column when normalizing.
    norms: Vec<(f64, f64)>,
}

/// Gradient with the same block layout as the net.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrad {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl NetGrad {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len());
        v.extend_from_slice(self.w1.as_slice());
        v.extend_from_slice(self.b1.as_slice());
        v.extend_from_slice(self.w2.as_slice());
        v.extend_from_slice(self.b2.as_slice());
        v
    }
}

impl TwoLayerNet {
    pub fn zeros(d: usize, h: usize, p: usize, dx: f64) -> Self {
        Self {
            w1: DMatrix::zeros(h, d),
            b1: DVector::zeros(h),
            w2: DMatrix::zeros(p, h),
            b2: DVector::zeros(p),
            normalize: false,
            eps1: NORM_EPS,
            dx,
        }
    }

    /// Weights and biases uniform on `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn random(d: usize, h: usize, p: usize, dx: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let uniform = |fan_in: usize| {
            let b = 1.0 / (fan_in.max(1) as f64).sqrt();
            move |rng: &mut ChaCha8Rng| rng.random_range(-b..b)
        };
        let (u1, u2) = (uniform(d), uniform(h));
        let w1 = DMatrix::from_fn(h, d, |_, _| u1(&mut rng));
        let b1 = DVector::from_fn(h, |_, _| u1(&mut rng));
        let w2 = DMatrix::from_fn(p, h, |_, _| u2(&mut rng));
        let b2 = DVector::from_fn(p, |_, _| u2(&mut rng));
        Self { w1, b1, w2, b2, normalize: false, eps1: NORM_EPS, dx }
    }

    pub fn with_normalization(mut self, on: bool) -> Self {
        self.normalize = on;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, d, p) = (self.w1.nrows(), self.w1.ncols(), self.w2.nrows());
        if self.b1.len() != h || self.w2.ncols() != h || self.b2.len() != p || d == 0 {
            return Err(Error::Dimension(format!(
                "inconsistent net: W1 {h}x{d}, b1 {}, W2 {}x{}, b2 {}",
                self.b1.len(),
                self.w2.nrows(),
                self.w2.ncols(),
                self.b2.len()
            )));
        }
        if self.flatten().iter().any(|v| !v.is_finite()) {
            return Err(Error::Dimension("net has non-finite parameters".into()));
        }
        Ok(())
    }

    /// Parameters in the order W1 (column-major), b1, W2 (column-major), b2.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(self.w1.as_slice());
        v.extend_from_slice(self.b1.as_slice());
        v.extend_from_slice(self.w2.as_slice());
        v.extend_from_slice(self.b2.as_slice());
        v
    }

    pub fn set_flat(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.param_count());
        let mut off = 0;
        for block in
            [self.w1.as_mut_slice(), self.b1.as_mut_slice(), self.w2.as_mut_slice(), self.b2.as_mut_slice()]
        {
            let n = block.len();
            block.copy_from_slice(&theta[off..off + n]);
            off += n;
        }
    }

    fn check_input(&self, d: usize) -> Result<()> {
        if d != self.input_dim() {
            return Err(Error::Dimension(format!(
                "net expects inputs of length {}, got {d}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn forward_cached(&self, inputs: &DMatrix<f64>) -> (DMatrix<f64>, Cache) {
        let mut x = inputs.clone();
        let mut norms = Vec::new();
        if self.normalize {
            for mut col in x.column_iter_mut() {
                let (mean, scale) = normalization(col.as_slice(), self.dx, self.eps1);
                col.apply(|v| *v = (*v - mean) / scale);
                norms.push((mean, scale));
            }
        }
        let mut z = &self.w1 * &x;
        for mut col in z.column_iter_mut() {
            col += &self.b1;
        }
        let a = z.map(|v| v.max(0.0));
        let mut y = &self.w2 * &a;
        for (b, mut col) in y.column_iter_mut().enumerate() {
            col += &self.b2;
            if self.normalize {
                let (mean, scale) = norms[b];
                col.apply(|v| *v = scale * *v + mean);
            }
        }
        (y, Cache { x, z, a, norms })
    }

    /// Forward pass on a batch stored column-wise (`d x B`).
    pub fn forward_batch(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(inputs.nrows())?;
        Ok(self.forward_cached(inputs).0)
    }

    pub fn forward(&self, phi: &[f64]) -> Result<Vec<f64>> {
        self.check_input(phi.len())?;
        let (mean, scale) = if self.normalize { normalization(phi, self.dx, self.eps1) } else { (0.0, 1.0) };
        let x = DVector::from_iterator(phi.len(), phi.iter().map(|v| (v - mean) / scale));
        let mut z = &self.w1 * x;
        z += &self.b1;
        z.apply(|v| *v = v.max(0.0));
        let mut y = &self.w2 * z;
        y += &self.b2;
        Ok(y.iter().map(|v| scale * v + mean).collect())
    }

    pub fn forward_trace(&self, phi: &BoundaryTrace) -> Result<Vec<f64>> {
        self.forward(&phi.values)
    }

    fn backward(&self, cache: &Cache, mut gy: DMatrix<f64>) -> NetGrad {
        if self.normalize {
            for (b, mut col) in gy.column_iter_mut().enumerate() {
                col *= cache.norms[b].1;
            }
        }
        let w2 = &gy * cache.a.transpose();
        let b2 = row_sums(&gy);
        let mut gz = self.w2.transpose() * &gy;
        gz.zip_apply(&cache.z, |g, z| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
        let w1 = &gz * cache.x.transpose();
        let b1 = row_sums(&gz);
        NetGrad { w1, b1, w2, b2 }
    }
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(m.nrows());
    for col in m.column_iter() {
        out += col;
    }
    out
}

/// Output-space loss: `dx`-weighted squared misfit plus `mu` times the
/// misfit of forward differences within each output segment.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub dx: f64,
    pub mu: f64,
    pub segments: Vec<Range<usize>>,
}

impl LossSpec {
    pub fn for_patch(decomp: &Decomposition, m: PatchIndex, mu: f64) -> Self {
        Self {
            dx: decomp.global().dx,
            mu,
            segments: decomp.segments(m).iter().map(|s| s.range.clone()).collect(),
        }
    }

    /// Loss of one residual `r = prediction - target`, and optionally its
    /// gradient with respect to the prediction (without the batch mean).
    fn pair(&self, r: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let dx = self.dx;
        let mut loss = dx * r.iter().map(|v| v * v).sum::<f64>();
        let mut deriv = 0.0;
        let inv_h = 1.0 / dx;
        for seg in &self.segments {
            for k in seg.start..seg.end.saturating_sub(1) {
                let dd = (r[k + 1] - r[k]) * inv_h;
                deriv += dd * dd;
            }
        }
        loss += self.mu * dx * deriv;
        if let Some(g) = grad {
            for (gk, rk) in g.iter_mut().zip(r) {
                *gk = 2.0 * dx * rk;
            }
            if self.mu != 0.0 {
                let c = 2.0 * self.mu * dx * inv_h;
                for seg in &self.segments {
                    for k in seg.start..seg.end.saturating_sub(1) {
                        let dd = (r[k + 1] - r[k]) * inv_h;
                        g[k + 1] += c * dd;
                        g[k] -= c * dd;
                    }
                }
            }
        }
        loss
    }
}

fn check_batch(net: &TwoLayerNet, inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<()> {
    if inputs.ncols() == 0 {
        return Err(Error::EmptyBatch);
    }
    net.check_input(inputs.nrows())?;
    if targets.nrows() != net.output_dim() || targets.ncols() != inputs.ncols() {
        return Err(Error::Dimension(format!(
            "targets {}x{} for a net with {} outputs and {} samples",
            targets.nrows(),
            targets.ncols(),
            net.output_dim(),
            inputs.ncols()
        )));
    }
    Ok(())
}

/// Mean loss over a batch stored column-wise.
pub fn loss(
    net: &TwoLayerNet,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    spec: &LossSpec,
) -> Result<f64> {
    check_batch(net, inputs, targets)?;
    let y = net.forward_cached(inputs).0;
    let r = y - targets;
    let total: f64 = r.column_iter().map(|c| spec.pair(c.as_slice(), None)).sum();
    Ok(total / inputs.ncols() as f64)
}

/// Mean batch loss and its exact gradient (ReLU derivative 0 at 0).
pub fn loss_and_grad(
    net: &TwoLayerNet,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    spec: &LossSpec,
) -> Result<(f64, NetGrad)> {
    check_batch(net, inputs, targets)?;
    let (y, cache) = net.forward_cached(inputs);
    let r = y - targets;
    let inv_b = 1.0 / inputs.ncols() as f64;
    let mut gy = DMatrix::zeros(r.nrows(), r.ncols());
    let mut total = 0.0;
    for (rc, mut gc) in r.column_iter().zip(gy.column_iter_mut()) {
        total += spec.pair(rc.as_slice(), Some(gc.as_mut_slice()));
        gc *= inv_b;
    }
    Ok((total * inv_b, net.backward(&cache, gy)))
}

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(theta.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for k in 0..theta.len() {
            let g = grad[k];
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g;
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g;
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            theta[k] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_fraction: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// The learning rate is multiplied by `decay` every `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
    pub mu: f64,
    pub seed: u64,
    /// Test loss is evaluated every this many epochs (and after the last one).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5000,
            batch_fraction: 0.05,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 0.9,
            decay_every: 200,
            mu: 1e-3,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.batch_fraction > 0.0 && self.batch_fraction <= 1.0) {
            return Err(Error::Config(format!("batch fraction {} not in (0, 1]", self.batch_fraction)));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::Config("Adam betas must lie in (0, 1)".into()));
        }
        if !(self.lr > 0.0 && self.eps > 0.0 && self.decay > 0.0 && self.mu >= 0.0) {
            return Err(Error::Config("learning rate, eps and decay must be positive, mu >= 0".into()));
        }
        if self.decay_every == 0 || self.eval_every == 0 {
            return Err(Error::Config("decay and evaluation intervals must be at least 1".into()));
        }
        Ok(())
    }

    /// Learning rate used during epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.decay.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial_train_loss: f64,
    pub initial_test_loss: Option<f64>,
    pub curve: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn final_train_loss(&self) -> f64 {
        self.curve.last().map_or(self.initial_train_loss, |r| r.train_loss)
    }

    pub fn final_test_loss(&self) -> Option<f64> {
        self.curve.iter().rev().find_map(|r| r.test_loss).or(self.initial_test_loss)
    }
}

/// Dataset rows as columns of `(inputs, outputs)` matrices.
pub fn as_columns(set: &TrainingSet) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = set.len();
    (DMatrix::from_column_slice(set.d, n, &set.inputs), DMatrix::from_column_slice(set.p, n, &set.outputs))
}

fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let r = m.nrows();
    let mut out = DMatrix::zeros(r, idx.len());
    for (c, &i) in idx.iter().enumerate() {
        out.column_mut(c).copy_from(&m.column(i));
    }
    out
}

/// Shuffled mini-batch Adam. Single-threaded and deterministic given
/// `config.seed`.
pub fn train(
    net: &mut TwoLayerNet,
    train_set: &TrainingSet,
    test_set: &TrainingSet,
    spec: &LossSpec,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (xt, yt) = as_columns(train_set);
    let test = (!test_set.is_empty()).then(|| as_columns(test_set));
    let test_loss = |net: &TwoLayerNet| -> Result<Option<f64>> {
        test.as_ref().map(|(x, y)| loss(net, x, y, spec)).transpose()
    };
    let initial_train_loss = loss(net, &xt, &yt, spec)?;
    let initial_test_loss = test_loss(net)?;

    let n = train_set.len();
    let batch = ((config.batch_fraction * n as f64).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam = Adam::new(net.param_count(), config.beta1, config.beta2, config.eps);
    let mut theta = net.flatten();
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(batch) {
            let xb = select_columns(&xt, chunk);
            let yb = select_columns(&yt, chunk);
            let (l, g) = loss_and_grad(net, &xb, &yb, spec)?;
            if !l.is_finite() {
                return Err(Error::Divergence { epoch: epoch + 1 });
            }
            sum += l * chunk.len() as f64;
            adam.step(&mut theta, &g.flatten(), lr);
            net.set_flat(&theta);
        }
        let train_loss = sum / n as f64;
        let last = epoch + 1 == config.epochs;
        let test_loss = if (epoch + 1) % config.eval_every == 0 || last {
            let t = test_loss(net)?;
            if t.is_some_and(|v| !v.is_finite()) {
                return Err(Error::Divergence { epoch: epoch + 1 });
            }
            t
        } else {
            None
        };
        curve.push(EpochRecord { epoch: epoch + 1, train_loss, test_loss, lr });
    }
    Ok(TrainReport { initial_train_loss, initial_test_loss, curve })
}

/// Matrix of the linearized boundary-to-boundary map of one patch.
#[derive(Debug, Clone)]
pub struct LinearBtB {
    pub patch: PatchIndex,
    /// `p x d`
    pub matrix: DMatrix<f64>,
}

/// Singular triplets kept after truncation, in descending order.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// `p x r`
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    /// `d x r`
    pub v: DMatrix<f64>,
    /// All singular values, descending.
    pub spectrum: Vec<f64>,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `U_r S_r V_r^T`
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (k, mut col) in us.column_iter_mut().enumerate() {
            col *= self.sigma[k];
        }
        us * self.v.transpose()
    }
}

/// Column `j` is the response to the nodal hat at trace entry `j`. The two
/// entries of a corner node share the response of the joint hat equally, so
/// that the matrix maps every corner-consistent trace correctly.
pub fn q_linear_matrix(problem: &ProblemSpec, decomp: &Decomposition, m: PatchIndex) -> Result<LinearBtB> {
    let lin = problem.linearized();
    let grid = decomp.patch(m).grid;
    let solver = LocalSolver::new(grid, lin);
    let layout = grid.trace_layout();
    let (d, p) = (layout.len(), decomp.output_len(m));
    let opts = SolveOptions::default();
    let columns: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|j| {
            let mut hat = BoundaryTrace::zeros(layout);
            hat.values[j] = 1.0;
            let twin = layout.corner_twin(j);
            if let Some(t) = twin {
                hat.values[t] = 1.0;
            }
            let mut col = decomp.q_exact(&solver, m, &hat, &opts)?;
            if twin.is_some() {
                col.iter_mut().for_each(|v| *v *= 0.5);
            }
            Ok(col)
        })
        .collect::<Result<_>>()?;
    let mut matrix = DMatrix::zeros(p, d);
    for (j, col) in columns.iter().enumerate() {
        matrix.column_mut(j).copy_from_slice(col);
    }
    Ok(LinearBtB { patch: m, matrix })
}

impl LinearBtB {
    pub fn apply(&self, phi: &[f64]) -> Result<Vec<f64>> {
        if phi.len() != self.matrix.ncols() {
            return Err(Error::Dimension(format!(
                "linear map expects {} inputs, got {}",
                self.matrix.ncols(),
                phi.len()
            )));
        }
        Ok((&self.matrix * DVector::from_column_slice(phi)).as_slice().to_vec())
    }

    /// Thin SVD `(U, sigma, V)` with `sigma` descending.
    fn svd(&self) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
        if self.matrix.is_empty() {
            return Err(Error::ZeroRank);
        }
        let a = &self.matrix;
        let fa = faer::MatRef::from_column_major_slice(a.as_slice(), a.nrows(), a.ncols());
        let svd = fa.thin_svd().map_err(|e| Error::LinearAlgebra(format!("SVD did not converge: {e:?}")))?;
        let (u, v) = (svd.U(), svd.V());
        let k = u.ncols();
        let sigma: Vec<f64> = (0..k).map(|i| svd.S()[i]).collect();
        let u = DMatrix::from_fn(u.nrows(), k, |i, j| u[(i, j)]);
        let v = DMatrix::from_fn(v.nrows(), k, |i, j| v[(i, j)]);
        // Guard the descending order the truncation relies on.
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
        if order.iter().enumerate().all(|(i, &o)| i == o) {
            return Ok((u, sigma, v));
        }
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), k, |i, j| m[(i, order[j])]);
        Ok((pick(&u), order.iter().map(|&o| sigma[o]).collect(), pick(&v)))
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> Result<Vec<f64>> {
        Ok(self.svd()?.1)
    }

    /// Keeps every singular value with `sigma_k / sigma_1 > delta1`.
    pub fn truncate(&self, delta1: f64) -> Result<TruncatedSvd> {
        if !(delta1 > 0.0) {
            return Err(Error::Config(format!("truncation threshold must be positive, got {delta1}")));
        }
        let (u, spectrum, v) = self.svd()?;
        let s1 = spectrum.first().copied().unwrap_or(0.0);
        if !(s1 > 0.0) {
            return Err(Error::ZeroRank);
        }
        let r = spectrum.iter().take_while(|&&s| s / s1 > delta1).count();
        let u = u.columns(0, r).into_owned();
        let v = v.columns(0, r).into_owned();
        Ok(TruncatedSvd { u, sigma: DVector::from_column_slice(&spectrum[..r]), v, spectrum })
    }
}

/// Relative spectrum `sigma_k / sigma_1` of the linearized map of `m`.
pub fn svd_spectrum(problem: &ProblemSpec, decomp: &Decomposition, m: PatchIndex) -> Result<Vec<f64>> {
    let sv = q_linear_matrix(problem, decomp, m)?.singular_values()?;
    let s1 = sv.first().copied().unwrap_or(0.0);
    if !(s1 > 0.0) {
        return Err(Error::ZeroRank);
    }
    Ok(sv.iter().map(|s| s / s1).collect())
}

/// Net of width `2r` that reproduces `U_r S_r V_r^T` exactly.
pub fn init_from_svd(svd: &TruncatedSvd, dx: f64) -> TwoLayerNet {
    let r = svd.rank();
    let (d, p) = (svd.v.nrows(), svd.u.nrows());
    let mut w1 = DMatrix::zeros(2 * r, d);
    let mut w2 = DMatrix::zeros(p, 2 * r);
    for k in 0..r {
        let s = svd.sigma[k].sqrt();
        for i in 0..d {
            w1[(k, i)] = s * svd.v[(i, k)];
            w1[(r + k, i)] = -s * svd.v[(i, k)];
        }
        for i in 0..p {
            w2[(i, k)] = s * svd.u[(i, k)];
            w2[(i, r + k)] = -s * svd.u[(i, k)];
        }
    }
    TwoLayerNet {
        w1,
        b1: DVector::zeros(2 * r),
        w2,
        b2: DVector::zeros(p),
        normalize: false,
        eps1: NORM_EPS,
        dx,
    }
}

#[cfg(test)]
#[allow(clippy::single_range_in_vec_init)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::problems::Medium;
    use crate::sampling::SampleLaw;

    fn rand_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn spec(p: usize, mu: f64) -> LossSpec {
        LossSpec { dx: 0.1, mu, segments: vec![0..p / 2, p / 2..p] }
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let mut adam = Adam::new(1, 0.9, 0.999, 1e-8);
        let mut th = [0.0];
        adam.step(&mut th, &[1.0], 0.1);
        assert!((th[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        let mut adam = Adam::new(3, 0.9, 0.999, 1e-8);
        let mut th = [1.0, -2.0, 3.0];
        for _ in 0..5 {
            adam.step(&mut th, &[0.0; 3], 0.1);
        }
        assert_eq!(th, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_three_steps_by_hand() {
        // g = 1, -2, 0.5 with lr = 0.1.
        // t=1: m = 0.1,      v = 0.001;      mh = 1,             vh = 1
        // t=2: m = -0.11,    v = 0.004999;   mh = -0.11/0.19,    vh = 0.004999/0.001999
        // t=3: m = -0.049,   v = 0.005244001; mh = -0.049/0.271, vh = 0.005244001/0.002997001
        let mut adam = Adam::new(1, 0.9, 0.999, 1e-8);
        let mut th = [0.0];
        let mut want = 0.0;
        let steps = [
            (1.0, 1.0, 1.0),
            (-2.0, -0.11 / 0.19, 0.004999 / 0.001999),
            (0.5, -0.049 / 0.271, 0.005244001 / 0.002997001),
        ];
        for (g, mh, vh) in steps {
            adam.step(&mut th, &[g], 0.1);
            want -= 0.1 * mh / (f64::sqrt(vh) + 1e-8);
            assert!((th[0] - want).abs() <= 1e-12, "{} vs {want}", th[0]);
        }
    }

    #[test]
    fn loss_of_constant_offset() {
        let net = TwoLayerNet::zeros(3, 2, 5, 0.25);
        let x = DMatrix::from_element(3, 1, 1.0);
        let y = DMatrix::from_element(5, 1, -0.5);
        let l = loss(&net, &x, &y, &LossSpec { dx: 0.25, mu: 0.0, segments: vec![0..5] }).unwrap();
        assert!((l - 0.25 * 5.0 * 0.25).abs() < 1e-15);
        // A constant offset has no derivative misfit.
        let l = loss(&net, &x, &y, &LossSpec { dx: 0.25, mu: 7.0, segments: vec![0..2, 2..5] }).unwrap();
        assert!((l - 0.25 * 5.0 * 0.25).abs() < 1e-15);
        assert!(matches!(
            loss(&net, &DMatrix::zeros(3, 0), &DMatrix::zeros(5, 0), &spec(5, 0.0)),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = TwoLayerNet::random(6, 4, 8, 0.1, 3);
        let x = rand_matrix(6, 5, &mut rng);
        let y = net.forward_batch(&x).unwrap();
        assert_eq!(loss(&net, &x, &y, &spec(8, 1e-3)).unwrap(), 0.0);
    }

    fn fd_check(normalize: bool, mu: f64, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h, p) = (12, 8, 10);
        let net = TwoLayerNet::random(d, h, p, 0.1, seed).with_normalization(normalize);
        let x = rand_matrix(d, 6, &mut rng).map(|v| 3.0 * v + 0.5);
        let y = rand_matrix(p, 6, &mut rng);
        let sp = spec(p, mu);
        let (_, g) = loss_and_grad(&net, &x, &y, &sp).unwrap();
        let g = g.flatten();
        let theta = net.flatten();
        let mut fd = vec![0.0; theta.len()];
        let step = 1e-6;
        let mut probe = net.clone();
        for k in 0..theta.len() {
            let mut t = theta.clone();
            t[k] += step;
            probe.set_flat(&t);
            let lp = loss(&probe, &x, &y, &sp).unwrap();
            t[k] -= 2.0 * step;
            probe.set_flat(&t);
            let lm = loss(&probe, &x, &y, &sp).unwrap();
            fd[k] = (lp - lm) / (2.0 * step);
        }
        let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        num / den
    }

    #[test]
    fn gradient_matches_central_differences() {
        for normalize in [false, true] {
            for mu in [0.0, 1e-3] {
                for seed in 0..3 {
                    let e = fd_check(normalize, mu, seed);
                    assert!(e <= 1e-5, "normalize={normalize} mu={mu}: {e:e}");
                }
            }
        }
    }

    #[test]
    fn normalization_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // The identity net: W2 W1 = I with split rails.
        let d = 7;
        let mut net = TwoLayerNet::zeros(d, 2 * d, d, 0.05).with_normalization(true);
        for i in 0..d {
            net.w1[(i, i)] = 1.0;
            net.w1[(d + i, i)] = -1.0;
            net.w2[(i, i)] = 1.0;
            net.w2[(i, d + i)] = -1.0;
        }
        for _ in 0..50 {
            let phi: Vec<f64> = (0..d).map(|_| 100.0 * rng.random_range(-1.0..1.0)).collect();
            let out = net.forward(&phi).unwrap();
            for (a, b) in out.iter().zip(&phi) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn bias_only_net_is_constant() {
        let mut net = TwoLayerNet::zeros(4, 3, 5, 0.1);
        net.b2.fill(2.5);
        assert_eq!(net.forward(&[1.0, -3.0, 2.0, 9.0]).unwrap(), vec![2.5; 5]);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn svd_init_by_hand() {
        let svd = TruncatedSvd {
            u: DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]),
            sigma: DVector::from_element(1, 4.0),
            v: DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]),
            spectrum: vec![4.0],
        };
        let net = init_from_svd(&svd, 0.1);
        assert_eq!(net.w1.row(0).iter().copied().collect::<Vec<_>>(), vec![2.0, 0.0, 0.0]);
        assert_eq!(net.w1.row(1).iter().copied().collect::<Vec<_>>(), vec![-2.0, 0.0, 0.0]);
        assert_eq!(net.forward(&[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert_eq!(net.forward(&[-1.5, 2.0, 3.0]).unwrap(), vec![-6.0, 0.0, 0.0]);
    }

    #[test]
    fn truncation_of_identity_and_zero() {
        let lin = LinearBtB { patch: PatchIndex::new(2, 2), matrix: DMatrix::identity(5, 5) };
        assert_eq!(lin.truncate(0.5).unwrap().rank(), 5);
        let zero = LinearBtB { patch: PatchIndex::new(2, 2), matrix: DMatrix::zeros(4, 5) };
        assert!(matches!(zero.truncate(0.5), Err(Error::ZeroRank)));
    }

    fn small_decomp() -> Decomposition {
        Decomposition::new(GridSpec::unit_square(1.0 / 32.0).unwrap(), 4, 4, 1.0 / 16.0, 1.0 / 16.0).unwrap()
    }

    #[test]
    fn linear_matrix_properties() {
        let decomp = small_decomp();
        let m = PatchIndex::new(2, 2);
        let problem = ProblemSpec::semilinear(0.125);
        let lin = q_linear_matrix(&problem, &decomp, m).unwrap();
        assert_eq!(lin.matrix.shape(), (decomp.output_len(m), decomp.input_len(m)));
        let ones = lin.apply(&vec![1.0; decomp.input_len(m)]).unwrap();
        assert!(ones.iter().all(|v| (v - 1.0).abs() <= 1e-9));

        // Matrix-vector product equals the exact linear map on smooth data.
        let grid = decomp.patch(m).grid;
        let phi = BoundaryTrace::from_fn(&grid, |x, y| (5.0 * x).sin() + y * y);
        let solver = LocalSolver::new(grid, problem.linearized());
        let q = decomp.q_exact(&solver, m, &phi, &SolveOptions::default()).unwrap();
        let qa = lin.apply(&phi.values).unwrap();
        for (a, b) in q.iter().zip(&qa) {
            assert!((a - b).abs() <= 1e-10);
        }

        let svd = lin.truncate(1e-2).unwrap();
        assert!(svd.spectrum.windows(2).all(|w| w[0] >= w[1]));
        let ut = svd.u.transpose() * &svd.u;
        let vt = svd.v.transpose() * &svd.v;
        assert!((ut - DMatrix::identity(svd.rank(), svd.rank())).amax() <= 1e-10);
        assert!((vt - DMatrix::identity(svd.rank(), svd.rank())).amax() <= 1e-10);
        let resid = &lin.matrix - svd.reconstruct();
        let resid_norm = LinearBtB { patch: m, matrix: resid }.singular_values().unwrap()[0];
        assert!(resid_norm <= 1e-2 * svd.spectrum[0] * (1.0 + 1e-10));

        let net = init_from_svd(&svd, decomp.global().dx);
        assert_eq!(net.hidden_dim(), 2 * svd.rank());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let recon = svd.reconstruct();
        for _ in 0..100 {
            let x: Vec<f64> = (0..net.input_dim()).map(|_| 50.0 * rng.random_range(-1.0..1.0)).collect();
            let want = &recon * DVector::from_column_slice(&x);
            let got = net.forward(&x).unwrap();
            for (a, b) in got.iter().zip(want.iter()) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn linear_matrix_matches_dense_schur_complement() {
        // Single 8x8 patch: eliminate interior unknowns of the dense system.
        let g = GridSpec::unit_square(0.125).unwrap();
        let decomp = Decomposition::new(g, 2, 2, 0.125, 0.0).unwrap();
        let m = PatchIndex::new(1, 1);
        let medium = Medium::Semilinear { epsilon: 0.25 };
        let lin = q_linear_matrix(&ProblemSpec::linear(medium), &decomp, m).unwrap();
        let pg = decomp.patch(m).grid;
        let n = pg.node_count();
        // Dense 5-point FV operator with face-midpoint coefficients.
        let mut a = DMatrix::zeros(n, n);
        let h = pg.dx / 2.0;
        for j in 0..=pg.ny {
            for i in 0..=pg.nx {
                let (x, y) = pg.coords(i, j);
                if i < pg.nx {
                    let c = medium.kappa(x + h, y);
                    let (p, q) = (pg.index(i, j), pg.index(i + 1, j));
                    a[(p, p)] += c;
                    a[(q, q)] += c;
                    a[(p, q)] -= c;
                    a[(q, p)] -= c;
                }
                if j < pg.ny {
                    let c = medium.kappa(x, y + h);
                    let (p, q) = (pg.index(i, j), pg.index(i, j + 1));
                    a[(p, p)] += c;
                    a[(q, q)] += c;
                    a[(p, q)] -= c;
                    a[(q, p)] -= c;
                }
            }
        }
        let layout = pg.trace_layout();
        let interior: Vec<usize> =
            (0..n).filter(|&k| !pg.is_boundary(k % (pg.nx + 1), k / (pg.nx + 1))).collect();
        let bnodes: Vec<usize> = (0..layout.len())
            .map(|e| {
                let (i, j) = layout.entry_node(e);
                pg.index(i, j)
            })
            .collect();
        let aii = DMatrix::from_fn(interior.len(), interior.len(), |r, c| a[(interior[r], interior[c])]);
        // Coupling to trace entries; a duplicated corner splits its column.
        let aib = DMatrix::from_fn(interior.len(), layout.len(), |r, e| {
            let w = if layout.corner_twin(e).is_some() { 0.5 } else { 1.0 };
            w * a[(interior[r], bnodes[e])]
        });
        let ui = -aii.lu().solve(&aib).unwrap();
        // Full nodal response to each trace entry.
        let mut full = DMatrix::zeros(n, layout.len());
        for (r, &k) in interior.iter().enumerate() {
            full.row_mut(k).copy_from(&ui.row(r));
        }
        for (e, &k) in bnodes.iter().enumerate() {
            full[(k, e)] = if layout.corner_twin(e).is_some() { 0.5 } else { 1.0 };
        }
        let mut row = 0;
        for seg in decomp.segments(m) {
            for &(gi, gj) in &seg.nodes {
                let k = pg.index(gi, gj);
                for e in 0..layout.len() {
                    assert!((lin.matrix[(row, e)] - full[(k, e)]).abs() <= 1e-10);
                }
                row += 1;
            }
        }
    }

    #[test]
    fn svd_init_fits_exact_linear_data() {
        let decomp = small_decomp();
        let m = PatchIndex::new(2, 2);
        let problem = ProblemSpec::linear(Medium::Semilinear { epsilon: 0.125 });
        let lin = q_linear_matrix(&problem, &decomp, m).unwrap();
        let svd = lin.truncate(1e-12).unwrap();
        let law = SampleLaw { radius: 10.0, power: 3.0, seed: 1 };
        let set =
            crate::sampling::gen_dataset(&problem, &decomp, m, 40, &law, &SolveOptions::default(), false)
                .unwrap();
        let (train_set, test_set) = crate::sampling::split_dataset(&set, 0.25, 0).unwrap();
        let mut net = init_from_svd(&svd, decomp.global().dx);
        let spec = LossSpec::for_patch(&decomp, m, 1e-3);
        let cfg = TrainConfig { epochs: 5, batch_fraction: 0.25, ..Default::default() };
        let report = train(&mut net, &train_set, &test_set, &spec, &cfg).unwrap();
        // The SVD net reproduces the exact linear map before any update.
        assert!(report.initial_train_loss < 1e-18, "{}", report.initial_train_loss);
        assert!(report.initial_test_loss.unwrap() < 1e-18);
        assert!(report.curve.iter().all(|r| r.train_loss.is_finite()));
    }

    #[test]
    fn svd_init_on_synthetic_linear_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (d, p, r) = (10, 8, 3);
        let a = rand_matrix(p, r, &mut rng) * rand_matrix(r, d, &mut rng);
        let law = SampleLaw { radius: 1.0, power: 0.0, seed: 0 };
        let make = |n: usize, rng: &mut ChaCha8Rng| {
            let mut set = TrainingSet::empty(PatchIndex::new(2, 2), d, p, law, false);
            for _ in 0..n {
                let x = rand_matrix(d, 1, rng);
                set.push(x.as_slice(), (&a * &x).as_slice()).unwrap();
            }
            set
        };
        let (train_set, test_set) = (make(60, &mut rng), make(20, &mut rng));
        let lin = LinearBtB { patch: PatchIndex::new(2, 2), matrix: a.clone() };
        let svd = lin.truncate(1e-8).unwrap();
        assert_eq!(svd.rank(), r);
        let mut net = init_from_svd(&svd, 0.1);
        let spec = LossSpec { dx: 0.1, mu: 1e-3, segments: vec![0..4, 4..8] };
        let cfg = TrainConfig { epochs: 50, batch_fraction: 0.1, ..Default::default() };
        let report = train(&mut net, &train_set, &test_set, &spec, &cfg).unwrap();
        assert!(report.initial_train_loss < 1e-28);
        assert!(report.initial_test_loss.unwrap() < 1e-28);
        // Adam's scale-free step leaves the exact minimum once the gradient
        // exceeds eps; the iterates then stay at a small noise floor.
        let random = TwoLayerNet::random(d, 2 * r, p, 0.1, 1);
        let (xt, yt) = as_columns(&test_set);
        let baseline = loss(&random, &xt, &yt, &spec).unwrap();
        assert!(report.final_test_loss().unwrap() < 1e-3 * baseline);
    }

    fn toy_data(n: usize, seed: u64) -> TrainingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let law = SampleLaw { radius: 1.0, power: 0.0, seed };
        let mut set = TrainingSet::empty(PatchIndex::new(2, 2), 4, 3, law, false);
        for _ in 0..n {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = [x[0] + x[1], (x[2] - x[3]).abs(), x[0].max(0.0)];
            set.push(&x, &y).unwrap();
        }
        set
    }

    #[test]
    fn training_is_deterministic_and_decreases_loss() {
        let train_set = toy_data(200, 1);
        let test_set = toy_data(50, 2);
        let spec = LossSpec { dx: 0.25, mu: 1e-3, segments: vec![0..3] };
        let cfg = TrainConfig { epochs: 60, lr: 1e-2, decay_every: 20, seed: 4, ..Default::default() };
        let mut a = TwoLayerNet::random(4, 16, 3, 0.25, 7);
        let mut b = a.clone();
        let ra = train(&mut a, &train_set, &test_set, &spec, &cfg).unwrap();
        let rb = train(&mut b, &train_set, &test_set, &spec, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(ra.final_test_loss().unwrap() < 0.5 * ra.initial_test_loss.unwrap());
        assert_eq!(ra.curve.len(), 60);
        assert!((ra.curve[59].lr - 1e-2 * 0.81).abs() < 1e-15);
        assert!(ra.curve[20].lr < ra.curve[19].lr);
    }

    #[test]
    fn zero_epochs_leave_the_net_unchanged() {
        let set = toy_data(20, 1);
        let mut net = TwoLayerNet::random(4, 5, 3, 0.25, 1);
        let before = net.clone();
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let spec = LossSpec { dx: 0.25, mu: 0.0, segments: vec![0..3] };
        let r = train(&mut net, &set, &set, &spec, &cfg).unwrap();
        assert_eq!(net, before);
        assert!(r.curve.is_empty());
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let set = toy_data(20, 1);
        let mut net = TwoLayerNet::random(4, 5, 3, 0.25, 1);
        net.b2[0] = f64::INFINITY;
        let cfg = TrainConfig { epochs: 3, ..Default::default() };
        let spec = LossSpec { dx: 0.25, mu: 0.0, segments: vec![0..3] };
        let empty = TrainingSet::empty(set.patch, 4, 3, set.law, false);
        assert!(matches!(train(&mut net, &set, &empty, &spec, &cfg), Err(Error::Divergence { epoch: 1 })));
        assert!(matches!(train(&mut net, &empty, &empty, &spec, &cfg), Err(Error::EmptyBatch)));
    }
}
