//! Neural structural equation model over labels.
//!
//! Every ordered label pair `(i, j)`, `i != j`, owns a two-layer rectifier
//! network `h_ij(x)`. The probability of label `i` is
//!
//! ```text
//! y_i = sigmoid( sum_{j != i} W[i][j] * h_ij(x) + b[i] )
//! ```
//!
//! `W[i][j]` is the causal weight of label `j` on label `i`. Gradients are
//! hand-derived reverse mode for this fixed architecture; see [`Tape`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CcgError, Result};
use crate::matrix::{dot, sigmoid, Mask, Matrix};
use crate::players::PlayerEncoder;

/// `forward(x) = w2 . relu(w1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMlp {
    pub hidden: usize,
    pub dim: usize,
    /// Row-major `hidden x dim`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl PairwiseMlp {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            hidden,
            dim,
            w1: vec![0.0; hidden * dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    fn random(dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let a1 = (6.0 / (dim + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + 1) as f64).sqrt();
        Self {
            hidden,
            dim,
            w1: (0..hidden * dim).map(|_| rng.random_range(-a1..a1)).collect(),
            b1: vec![0.0; hidden],
            w2: (0..hidden).map(|_| rng.random_range(-a2..a2)).collect(),
            b2: 0.0,
        }
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut pre = vec![0.0; self.hidden];
        self.forward_into(x, &mut pre)
    }

    /// Forward pass that leaves the hidden pre-activations in `pre`.
    fn forward_into(&self, x: &[f64], pre: &mut [f64]) -> f64 {
        let mut out = self.b2;
        for (k, p) in pre.iter_mut().enumerate() {
            let row = &self.w1[k * self.dim..(k + 1) * self.dim];
            *p = dot(row, x) + self.b1[k];
            if *p > 0.0 {
                out += self.w2[k] * *p;
            }
        }
        out
    }

    fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }
}

/// All parameters of the label predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemModel {
    pub dim: usize,
    pub num_labels: usize,
    pub hidden: usize,
    /// Off-diagonal pairs in row-major order, see [`SemModel::pair_slot`].
    pub pair_mlps: Vec<PairwiseMlp>,
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl SemModel {
    pub fn zeros(dim: usize, num_labels: usize, hidden: usize) -> Self {
        let pairs = num_labels * num_labels.saturating_sub(1);
        Self {
            dim,
            num_labels,
            hidden,
            pair_mlps: vec![PairwiseMlp::zeros(dim, hidden); pairs],
            weights: Matrix::square(num_labels),
            bias: vec![0.0; num_labels],
        }
    }

    /// Index of `h_ij` in `pair_mlps`. Requires `i != j`.
    pub fn pair_slot(&self, i: usize, j: usize) -> usize {
        debug_assert_ne!(i, j);
        i * (self.num_labels - 1) + if j < i { j } else { j - 1 }
    }

    pub fn mlp(&self, i: usize, j: usize) -> &PairwiseMlp {
        &self.pair_mlps[self.pair_slot(i, j)]
    }

    pub fn mlp_mut(&mut self, i: usize, j: usize) -> &mut PairwiseMlp {
        let slot = self.pair_slot(i, j);
        &mut self.pair_mlps[slot]
    }

    pub fn param_count(&self) -> usize {
        self.pair_mlps.iter().map(PairwiseMlp::param_count).sum::<usize>()
            + self.num_labels * self.num_labels
            + self.num_labels
    }

    pub fn project_diagonal(&mut self) {
        self.weights.fill_diagonal(0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite()
            && self.bias.iter().all(|v| v.is_finite())
            && self
                .pair_mlps
                .iter()
                .all(|m| m.b2.is_finite() && m.w1.iter().chain(&m.b1).chain(&m.w2).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(CcgError::Dimension(format!(
                "model expects {} features, got {}",
                self.dim,
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CcgError::Dimension("non-finite input feature".into()));
        }
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.predict_masked(x, &Mask::full(self.num_labels))
    }

    /// Prediction with `W` replaced by `W ⊙ mask`.
    pub fn predict_masked(&self, x: &[f64], mask: &Mask) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if mask.size() != self.num_labels {
            return Err(CcgError::Dimension(format!(
                "mask is {0}x{0}, model has {1} labels",
                mask.size(),
                self.num_labels
            )));
        }
        let l = self.num_labels;
        let mut pre = vec![0.0; self.hidden];
        Ok((0..l)
            .map(|i| {
                let mut z = 0.0;
                for j in (0..l).filter(|&j| j != i) {
                    let w = self.weights[(i, j)] * f64::from(u8::from(mask.get(i, j)));
                    if w != 0.0 {
                        z += w * self.mlp(i, j).forward_into(x, &mut pre);
                    }
                }
                sigmoid(z + self.bias[i])
            })
            .collect())
    }

    /// Runs every pairwise network selected by `needed` on `x`.
    pub fn tape(&self, x: &[f64], needed: &Mask) -> Tape {
        let l = self.num_labels;
        let slots = self.pair_mlps.len();
        let mut tape = Tape {
            active: vec![false; slots],
            h: vec![0.0; slots],
            pre: vec![0.0; slots * self.hidden],
        };
        for i in 0..l {
            for j in (0..l).filter(|&j| j != i && needed.get(i, j)) {
                let s = self.pair_slot(i, j);
                let pre = &mut tape.pre[s * self.hidden..(s + 1) * self.hidden];
                tape.h[s] = self.pair_mlps[s].forward_into(x, pre);
                tape.active[s] = true;
            }
        }
        tape
    }

    /// Logits `z_i = sum_j W[i][j] m[i][j] h_ij + b[i]` from a tape.
    pub fn logits(&self, tape: &Tape, mask: &Mask) -> Vec<f64> {
        let l = self.num_labels;
        (0..l)
            .map(|i| {
                let mut z = 0.0;
                for j in (0..l).filter(|&j| j != i && mask.get(i, j)) {
                    let s = self.pair_slot(i, j);
                    debug_assert!(tape.active[s], "pair ({i},{j}) missing from tape");
                    z += self.weights[(i, j)] * tape.h[s];
                }
                z + self.bias[i]
            })
            .collect()
    }

    /// Accumulates parameter gradients given `dlogits` (one vector of
    /// `dLoss/dz` per mask) for the pass recorded in `tape` on input `x`.
    pub fn backward(&self, x: &[f64], tape: &Tape, dlogits: &[(&Mask, &[f64])], grads: &mut SemModel) {
        let l = self.num_labels;
        let mut dh = vec![0.0; self.pair_mlps.len()];
        for (mask, dz) in dlogits {
            for i in 0..l {
                if dz[i] == 0.0 {
                    continue;
                }
                grads.bias[i] += dz[i];
                for j in (0..l).filter(|&j| j != i && mask.get(i, j)) {
                    let s = self.pair_slot(i, j);
                    grads.weights[(i, j)] += dz[i] * tape.h[s];
                    dh[s] += dz[i] * self.weights[(i, j)];
                }
            }
        }
        for (s, &g) in dh.iter().enumerate() {
            if g == 0.0 || !tape.active[s] {
                continue;
            }
            let mlp = &self.pair_mlps[s];
            let gm = &mut grads.pair_mlps[s];
            let pre = &tape.pre[s * self.hidden..(s + 1) * self.hidden];
            gm.b2 += g;
            for k in 0..self.hidden {
                if pre[k] <= 0.0 {
                    continue;
                }
                gm.w2[k] += g * pre[k];
                let dpre = g * mlp.w2[k];
                gm.b1[k] += dpre;
                let row = &mut gm.w1[k * self.dim..(k + 1) * self.dim];
                for (r, &xv) in row.iter_mut().zip(x) {
                    *r += dpre * xv;
                }
            }
        }
    }

    /// `dLoss/dx` given `dLoss/dz` under `mask`.
    pub fn input_gradient(&self, tape: &Tape, mask: &Mask, dz: &[f64]) -> Vec<f64> {
        let l = self.num_labels;
        let mut dx = vec![0.0; self.dim];
        for i in 0..l {
            for j in (0..l).filter(|&j| j != i && mask.get(i, j)) {
                let s = self.pair_slot(i, j);
                let g = dz[i] * self.weights[(i, j)];
                if g == 0.0 {
                    continue;
                }
                let mlp = &self.pair_mlps[s];
                let pre = &tape.pre[s * self.hidden..(s + 1) * self.hidden];
                for k in (0..self.hidden).filter(|&k| pre[k] > 0.0) {
                    let dpre = g * mlp.w2[k];
                    let row = &mlp.w1[k * self.dim..(k + 1) * self.dim];
                    for (d, &w) in dx.iter_mut().zip(row) {
                        *d += dpre * w;
                    }
                }
            }
        }
        dx
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    active: Vec<bool>,
    h: Vec<f64>,
    pre: Vec<f64>,
}

impl Tape {
    pub fn h(&self, slot: usize) -> f64 {
        self.h[slot]
    }
}

/// Fan-scaled uniform pairwise networks, `W ~ N(0, 0.01)` off the diagonal, zero bias.
pub fn init_model(dim: usize, num_labels: usize, hidden: usize, seed: u64) -> Result<SemModel> {
    if dim == 0 || num_labels == 0 || hidden == 0 {
        return Err(CcgError::InvalidArgument(
            "dim, labels and hidden must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = SemModel::zeros(dim, num_labels, hidden);
    for mlp in &mut model.pair_mlps {
        *mlp = PairwiseMlp::random(dim, hidden, &mut rng);
    }
    let normal = Normal::new(0.0, 0.01).expect("valid std");
    for i in 0..num_labels {
        for j in 0..num_labels {
            if i != j {
                model.weights[(i, j)] = normal.sample(&mut rng);
            }
        }
    }
    Ok(model)
}

/// Which learning-rate group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Pairwise networks and player encoders.
    Main,
    /// Causal weights `W` and label biases `b`.
    Aux,
}

/// Every trainable parameter: the label predictor plus the player encoders.
///
/// Also used as the gradient container, one real per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcgParams {
    pub sem: SemModel,
    pub encoders: Vec<PlayerEncoder>,
}

/// Gradients share the parameter layout.
pub type GradientBundle = CcgParams;

impl CcgParams {
    pub fn zeros_like(&self) -> Self {
        let sem = SemModel::zeros(self.sem.dim, self.sem.num_labels, self.sem.hidden);
        let encoders = self
            .encoders
            .iter()
            .map(|e| PlayerEncoder::zeros(e.in_dim, e.out_dim))
            .collect();
        Self { sem, encoders }
    }

    /// Visits every parameter in a fixed order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(ParamGroup, &mut f64)) {
        for m in &mut self.sem.pair_mlps {
            for v in m.w1.iter_mut().chain(&mut m.b1).chain(&mut m.w2) {
                f(ParamGroup::Main, v);
            }
            f(ParamGroup::Main, &mut m.b2);
        }
        for e in &mut self.encoders {
            for v in e.weight.iter_mut().chain(&mut e.bias) {
                f(ParamGroup::Main, v);
            }
        }
        for v in self.sem.weights.as_mut_slice() {
            f(ParamGroup::Aux, v);
        }
        for v in &mut self.sem.bias {
            f(ParamGroup::Aux, v);
        }
    }

    /// Same order as [`CcgParams::for_each_mut`].
    pub fn for_each(&self, mut f: impl FnMut(ParamGroup, f64)) {
        for m in &self.sem.pair_mlps {
            for v in m.w1.iter().chain(&m.b1).chain(&m.w2) {
                f(ParamGroup::Main, *v);
            }
            f(ParamGroup::Main, m.b2);
        }
        for e in &self.encoders {
            for v in e.weight.iter().chain(&e.bias) {
                f(ParamGroup::Main, *v);
            }
        }
        for v in self.sem.weights.as_slice().iter().chain(&self.sem.bias) {
            f(ParamGroup::Aux, *v);
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        self.for_each(|_, v| out.push(v));
        out
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        let mut out = Vec::with_capacity(self.len());
        self.for_each(|g, _| out.push(g));
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let mut it = values.iter();
        self.for_each_mut(|_, v| *v = *it.next().expect("flat vector too short"));
        assert!(it.next().is_none(), "flat vector too long");
    }

    pub fn len(&self) -> usize {
        self.sem.param_count()
            + self
                .encoders
                .iter()
                .map(|e| e.weight.len() + e.bias.len())
                .sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `self += other * scale`.
    pub fn add_scaled(&mut self, other: &CcgParams, scale: f64) {
        let flat = other.to_flat();
        let mut it = flat.iter();
        self.for_each_mut(|_, v| *v += scale * it.next().expect("shape mismatch"));
    }

    pub fn is_finite(&self) -> bool {
        self.sem.is_finite()
            && self
                .encoders
                .iter()
                .all(|e| e.weight.iter().chain(&e.bias).all(|v| v.is_finite()))
    }
}
