//! The dense classifier head and its non-iterative recomputation pass.
//!
//! Indexing convention: `H^0` is the frozen input feature matrix,
//! `H^i = relu(a^i·H^{i-1})` for the hidden layers and the last layer
//! produces unactivated logits. Residuals are always `desired − actual`
//! and updates are added.

use std::borrow::Cow;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, ensure_finite, Matrix};

/// One dense layer. With `bias` set, the weight matrix carries an extra
/// trailing column that multiplies a constant-1 input row.
#[derive(Debug, Clone, PartialEq)]
pub struct FcLayer {
    weights: Matrix,
    bias: bool,
}

impl FcLayer {
    pub fn new(weights: Matrix, bias: bool) -> Result<Self> {
        let min_cols = 1 + usize::from(bias);
        if weights.nrows() == 0 || weights.ncols() < min_cols {
            return Err(Error::shape(
                "FcLayer::new",
                format!(
                    "weights {}x{} leave no input or output units",
                    weights.nrows(),
                    weights.ncols()
                ),
            ));
        }
        ensure_finite(&weights, "layer weights")?;
        Ok(FcLayer { weights, bias })
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn has_bias(&self) -> bool {
        self.bias
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Input width, not counting the constant bias row.
    pub fn in_dim(&self) -> usize {
        self.weights.ncols() - usize::from(self.bias)
    }

    /// Weights acting on real inputs only (the bias column dropped).
    pub fn input_weights(&self) -> Matrix {
        self.weights.columns(0, self.in_dim()).into_owned()
    }

    /// The matrix this layer actually multiplies: `h`, plus a row of ones
    /// when the layer has a bias.
    pub fn layer_input<'a>(&self, h: &'a Matrix) -> Cow<'a, Matrix> {
        if self.bias {
            Cow::Owned(h.clone().insert_row(h.nrows(), 1.0))
        } else {
            Cow::Borrowed(h)
        }
    }

    /// Pre-activation output `a·h`.
    pub fn linear(&self, h: &Matrix) -> Result<Matrix> {
        if h.nrows() != self.in_dim() {
            return Err(Error::shape(
                "FcLayer::linear",
                format!(
                    "layer expects {} input rows, got {}",
                    self.in_dim(),
                    h.nrows()
                ),
            ));
        }
        Ok(&self.weights * self.layer_input(h).as_ref())
    }

    pub(crate) fn with_weights(&self, weights: Matrix) -> Self {
        debug_assert_eq!(weights.shape(), self.weights.shape());
        FcLayer {
            weights,
            bias: self.bias,
        }
    }
}

/// Architecture of a head: `widths[0]` is the feature dimension, the last
/// entry the class count, anything in between a ReLU hidden layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub widths: Vec<usize>,
    #[serde(default)]
    pub bias: bool,
}

impl HeadSpec {
    pub fn new(widths: Vec<usize>) -> Self {
        HeadSpec {
            widths,
            bias: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::param(
                "widths",
                "need at least an input width and a class count",
            ));
        }
        if self.widths.contains(&0) {
            return Err(Error::param("widths", "every width must be >= 1"));
        }
        Ok(())
    }

    /// He-normal initialization, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<FcHead> {
        self.validate()?;
        let layers = self
            .widths
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                let cols = fan_in + usize::from(self.bias);
                let w = Matrix::from_fn(fan_out, cols, |_, c| {
                    if c < fan_in {
                        normal.sample(rng)
                    } else {
                        0.0
                    }
                });
                FcLayer::new(w, self.bias)
            })
            .collect::<Result<Vec<_>>>()?;
        FcHead::new(layers)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcHead {
    layers: Vec<FcLayer>,
}

impl FcHead {
    pub fn new(layers: Vec<FcLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("FcHead needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(Error::shape(
                    "FcHead::new",
                    format!(
                        "layer {} outputs {} units but layer {} takes {}",
                        i + 1,
                        pair[0].out_dim(),
                        i + 2,
                        pair[1].in_dim()
                    ),
                ));
            }
        }
        Ok(FcHead { layers })
    }

    pub fn layers(&self) -> &[FcLayer] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<FcLayer> {
        self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Widths from input to classes.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(FcLayer::out_dim))
            .collect()
    }

    pub fn spec(&self) -> HeadSpec {
        HeadSpec {
            widths: self.widths(),
            bias: self.layers[0].has_bias(),
        }
    }

    pub(crate) fn replace_layer(&mut self, idx: usize, layer: FcLayer) {
        self.layers[idx] = layer;
    }
}

/// Activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `[H^0, H^1, .., H^n]`; `H^0` is the input.
    pub activations: Vec<Matrix>,
    pub logits: Matrix,
}

impl ForwardTrace {
    pub fn num_samples(&self) -> usize {
        self.logits.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecomputeConfig {
    /// Ridge coefficient; the regularizer is `(1/C)·I`.
    #[serde(rename = "C")]
    pub c: f64,
    /// Step size on the pseudoinverse update, in `(0, 1]`.
    pub mu: f64,
    /// Fraction of neurons that keep their old parameters.
    pub dropout_rate: f64,
    pub rng_seed: u64,
}

impl Default for RecomputeConfig {
    fn default() -> Self {
        RecomputeConfig {
            c: 100.0,
            mu: 1.0,
            dropout_rate: 0.0,
            rng_seed: 0,
        }
    }
}

impl RecomputeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::param("C", format!("must be > 0, got {}", self.c)));
        }
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(Error::param(
                "mu",
                format!("must be in (0, 1], got {}", self.mu),
            ));
        }
        check_rate(self.dropout_rate)
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::param(
            "dropout_rate",
            format!("must be in [0, 1), got {rate}"),
        ))
    }
}

pub fn forward(head: &FcHead, h0: &Matrix) -> Result<ForwardTrace> {
    if h0.nrows() != head.input_dim() {
        return Err(Error::shape(
            "forward",
            format!(
                "head expects {} feature rows, got {}",
                head.input_dim(),
                h0.nrows()
            ),
        ));
    }
    let (hidden, last) = head.layers.split_at(head.layers.len() - 1);
    let mut activations = Vec::with_capacity(hidden.len() + 1);
    activations.push(h0.clone());
    for layer in hidden {
        let mut z = layer.linear(activations.last().unwrap())?;
        linalg::relu_in_place(&mut z);
        activations.push(z);
    }
    let logits = last[0].linear(activations.last().unwrap())?;
    Ok(ForwardTrace {
        activations,
        logits,
    })
}

/// Copies `round(rate·u)` randomly chosen rows from `old`, the rest from
/// `new`.
pub fn dropout_mix<R: Rng + ?Sized>(
    old: &Matrix,
    new: &Matrix,
    rate: f64,
    rng: &mut R,
) -> Result<Matrix> {
    if old.shape() != new.shape() {
        return Err(Error::shape(
            "dropout_mix",
            format!("old is {:?}, new is {:?}", old.shape(), new.shape()),
        ));
    }
    check_rate(rate)?;
    let rows = old.nrows();
    let keep = kept_rows(rate, rows);
    let mut out = new.clone();
    if keep > 0 {
        for r in index::sample(rng, rows, keep) {
            out.set_row(r, &old.row(r));
        }
    }
    Ok(out)
}

/// Number of neurons retaining old parameters: `rate·u`, rounded half up.
pub fn kept_rows(rate: f64, rows: usize) -> usize {
    ((rate * rows as f64 + 0.5).floor() as usize).min(rows)
}

fn check_targets(o: &Matrix, logits: &Matrix) -> Result<()> {
    if o.shape() != logits.shape() {
        return Err(Error::shape(
            "targets",
            format!(
                "targets are {:?}, logits are {:?}",
                o.shape(),
                logits.shape()
            ),
        ));
    }
    Ok(())
}

/// Output-layer update: `a ← mix(a, a + μ·(O − y)·Hᵀ((1/C)I + HHᵀ)^{-1})`.
pub fn recompute_output_layer<R: Rng + ?Sized>(
    head: &FcHead,
    trace: &ForwardTrace,
    o: &Matrix,
    cfg: &RecomputeConfig,
    rng: &mut R,
) -> Result<FcHead> {
    cfg.validate()?;
    check_targets(o, &trace.logits)?;
    let last_idx = head.layers.len() - 1;
    let layer = &head.layers[last_idx];
    let h = trace.activations.last().ok_or(Error::Empty("trace"))?;
    let residual = o - &trace.logits;
    let updated = update_layer(layer, &residual, h, cfg, rng)?;
    let mut out = head.clone();
    out.replace_layer(last_idx, updated);
    Ok(out)
}

/// Ridge pull-back of a residual through `w`, optionally projected onto
/// the non-negative orthant.
pub fn pullback_target(w: &Matrix, residual: &Matrix, c: f64, apply_relu: bool) -> Result<Matrix> {
    let mut p = linalg::ridge_pullback(w, residual, c)?;
    if apply_relu {
        linalg::relu_in_place(&mut p);
    }
    Ok(p)
}

/// Hidden-layer update toward the desired output change `p`.
pub fn recompute_hidden_layer<R: Rng + ?Sized>(
    layer: &FcLayer,
    p: &Matrix,
    h_in: &Matrix,
    cfg: &RecomputeConfig,
    rng: &mut R,
) -> Result<FcLayer> {
    cfg.validate()?;
    if p.nrows() != layer.out_dim() || h_in.nrows() != layer.in_dim() || p.ncols() != h_in.ncols() {
        return Err(Error::shape(
            "recompute_hidden_layer",
            format!(
                "layer {}x{}, P {:?}, H_in {:?}",
                layer.out_dim(),
                layer.in_dim(),
                p.shape(),
                h_in.shape()
            ),
        ));
    }
    update_layer(layer, p, h_in, cfg, rng)
}

fn update_layer<R: Rng + ?Sized>(
    layer: &FcLayer,
    change: &Matrix,
    h_in: &Matrix,
    cfg: &RecomputeConfig,
    rng: &mut R,
) -> Result<FcLayer> {
    let input = layer.layer_input(h_in);
    let delta = linalg::ridge_right_solve(change, &input, cfg.c)?;
    let candidate = layer.weights() + delta * cfg.mu;
    let mixed = dropout_mix(layer.weights(), &candidate, cfg.dropout_rate, rng)?;
    Ok(layer.with_weights(mixed))
}

/// One top-down recomputation sweep over activations frozen at the start
/// of the pass.
pub fn recompute_pass<R: Rng + ?Sized>(
    head: &FcHead,
    h0: &Matrix,
    o: &Matrix,
    cfg: &RecomputeConfig,
    rng: &mut R,
) -> Result<FcHead> {
    cfg.validate()?;
    let trace = forward(head, h0)?;
    recompute_pass_on_trace(head, &trace, o, cfg, rng)
}

/// [`recompute_pass`] with an externally supplied trace.
pub fn recompute_pass_on_trace<R: Rng + ?Sized>(
    head: &FcHead,
    trace: &ForwardTrace,
    o: &Matrix,
    cfg: &RecomputeConfig,
    rng: &mut R,
) -> Result<FcHead> {
    let mut out = recompute_output_layer(head, trace, o, cfg, rng)?;
    let hidden = head.layers.len() - 1;
    if hidden == 0 {
        return Ok(out);
    }

    let acts = &trace.activations;
    let top = &out.layers[hidden];
    let residual = o - top.linear(&acts[hidden])?;
    let mut target = pullback_target(&top.input_weights(), &residual, cfg.c, true)?;

    // Layer i (1-based) has index i-1, input acts[i-1] and output acts[i].
    for i in (1..=hidden).rev() {
        let old = &out.layers[i - 1];
        let updated = recompute_hidden_layer(old, &target, &acts[i - 1], cfg, rng)?;
        if i > 1 {
            // Desired pre-activation minus the updated one:
            // (a_old·H + P) − a_new·H = P − (a_new − a_old)·H.
            let applied = updated.weights() - old.weights();
            let residual = &target - applied * old.layer_input(&acts[i - 1]).as_ref();
            target = pullback_target(&updated.input_weights(), &residual, cfg.c, true)?;
        }
        out.replace_layer(i - 1, updated);
    }
    Ok(out)
}

/// Row index of the largest entry per column; ties go to the lowest index.
pub fn argmax_columns(m: &Matrix) -> Vec<usize> {
    m.column_iter()
        .map(|col| {
            let mut best = 0;
            for (i, &v) in col.iter().enumerate() {
                if v > col[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn predict(head: &FcHead, h0: &Matrix) -> Result<Vec<usize>> {
    Ok(argmax_columns(&forward(head, h0)?.logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::relative_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn head_of(ws: Vec<Matrix>) -> FcHead {
        FcHead::new(
            ws.into_iter()
                .map(|w| FcLayer::new(w, false).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn one_hot_cols(labels: &[usize], c: usize) -> Matrix {
        Matrix::from_fn(c, labels.len(), |r, j| f64::from(u8::from(labels[j] == r)))
    }

    fn cfg(c: f64, mu: f64, dropout_rate: f64) -> RecomputeConfig {
        RecomputeConfig {
            c,
            mu,
            dropout_rate,
            rng_seed: 0,
        }
    }

    // Straight-line scalar evaluation, independent of nalgebra products.
    fn forward_oracle(ws: &[Matrix], x: &Matrix) -> Matrix {
        let mut cur: Vec<Vec<f64>> = (0..x.ncols())
            .map(|j| x.column(j).iter().copied().collect())
            .collect();
        for (li, w) in ws.iter().enumerate() {
            let last = li + 1 == ws.len();
            cur = cur
                .iter()
                .map(|v| {
                    (0..w.nrows())
                        .map(|r| {
                            let mut s = 0.0;
                            for k in 0..w.ncols() {
                                s += w[(r, k)] * v[k];
                            }
                            if last {
                                s
                            } else {
                                s.max(0.0)
                            }
                        })
                        .collect()
                })
                .collect();
        }
        Matrix::from_fn(cur[0].len(), cur.len(), |r, c| cur[c][r])
    }

    #[test]
    fn forward_identity_single_layer() {
        let head = head_of(vec![Matrix::identity(2, 2)]);
        let h0 = Matrix::from_row_slice(2, 2, &[1.0, -1.0, 2.0, 0.0]);
        let t = forward(&head, &h0).unwrap();
        assert_eq!(t.logits, h0);
        assert_eq!(t.activations, vec![h0]);
    }

    #[test]
    fn forward_relu_kills_negative_hidden() {
        let head = head_of(vec![
            Matrix::from_element(1, 1, -1.0),
            Matrix::from_element(1, 1, 3.0),
        ]);
        let t = forward(&head, &Matrix::from_element(1, 1, 2.0)).unwrap();
        assert_eq!(t.activations[1][(0, 0)], 0.0);
        assert_eq!(t.logits[(0, 0)], 0.0);
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        let mut r = rng(11);
        let ws = vec![
            random(6, 4, &mut r),
            random(5, 6, &mut r),
            random(3, 5, &mut r),
        ];
        let x = random(4, 5, &mut r);
        let t = forward(&head_of(ws.clone()), &x).unwrap();
        assert!(relative_error(&t.logits, &forward_oracle(&ws, &x)) < 1e-14);
        for h in &t.activations[1..] {
            assert!(h.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn forward_shape_error() {
        let head = head_of(vec![Matrix::identity(2, 2)]);
        assert!(matches!(
            forward(&head, &Matrix::zeros(3, 1)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn head_rejects_incompatible_layers() {
        let layers = vec![
            FcLayer::new(Matrix::zeros(3, 2), false).unwrap(),
            FcLayer::new(Matrix::zeros(2, 4), false).unwrap(),
        ];
        assert!(matches!(FcHead::new(layers), Err(Error::Shape { .. })));
        assert!(FcHead::new(vec![]).is_err());
    }

    #[test]
    fn bias_layer_uses_constant_row() {
        let w = Matrix::from_row_slice(1, 2, &[2.0, 5.0]);
        let layer = FcLayer::new(w, true).unwrap();
        assert_eq!(layer.in_dim(), 1);
        let out = layer
            .linear(&Matrix::from_row_slice(1, 2, &[1.0, -1.0]))
            .unwrap();
        assert_eq!(out, Matrix::from_row_slice(1, 2, &[7.0, 3.0]));
    }

    #[test]
    fn output_update_zero_residual_is_noop() {
        let mut r = rng(1);
        let head = head_of(vec![random(4, 3, &mut r), random(2, 4, &mut r)]);
        let x = random(3, 6, &mut r);
        let t = forward(&head, &x).unwrap();
        let o = t.logits.clone();
        for rate in [0.0, 0.5] {
            let got = recompute_output_layer(&head, &t, &o, &cfg(10.0, 0.7, rate), &mut r).unwrap();
            assert_eq!(got, head);
        }
    }

    #[test]
    fn output_update_from_zero_is_ridge_fit() {
        let mut r = rng(2);
        let head = head_of(vec![random(5, 3, &mut r), Matrix::zeros(3, 5)]);
        let x = random(3, 12, &mut r);
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let o = one_hot_cols(&labels, 3);
        let t = forward(&head, &x).unwrap();
        let got = recompute_output_layer(&head, &t, &o, &cfg(50.0, 1.0, 0.0), &mut r).unwrap();
        let h = &t.activations[1];
        let gram = h * h.transpose() + Matrix::identity(5, 5) / 50.0;
        let want = &o * h.transpose() * gram.try_inverse().unwrap();
        assert!(relative_error(got.layers()[1].weights(), &want) < 1e-9);
        assert_eq!(got.layers()[0], head.layers()[0]);
    }

    #[test]
    fn output_update_contracts_residual() {
        for seed in 0..20 {
            let mut r = rng(100 + seed);
            let head = head_of(vec![random(6, 4, &mut r), random(3, 6, &mut r)]);
            let x = random(4, 15, &mut r);
            let o = random(3, 15, &mut r);
            let t = forward(&head, &x).unwrap();
            let before = (&o - &t.logits).norm();
            let new = recompute_output_layer(&head, &t, &o, &cfg(10.0, 1.0, 0.0), &mut r).unwrap();
            let after = (&o - new.layers()[1].weights() * &t.activations[1]).norm();
            assert!(after <= before * (1.0 + 1e-12));
        }
    }

    #[test]
    fn pullback_target_cases() {
        let z = pullback_target(&Matrix::identity(2, 2), &Matrix::zeros(2, 3), 1.0, true).unwrap();
        assert_eq!(z, Matrix::zeros(2, 3));

        let w = Matrix::from_element(1, 1, 1.0);
        let res = Matrix::from_element(1, 1, -2.0);
        let raw = pullback_target(&w, &res, 1.0, false).unwrap();
        assert!((raw[(0, 0)] + 1.0).abs() < 1e-15);
        let proj = pullback_target(&w, &res, 1.0, true).unwrap();
        assert_eq!(proj[(0, 0)], 0.0);

        let mut r = rng(3);
        let w = random(3, 4, &mut r);
        let res = random(3, 6, &mut r);
        let p = pullback_target(&w, &res, 10.0, false).unwrap();
        assert_eq!(p, linalg::ridge_pullback(&w, &res, 10.0).unwrap());
    }

    #[test]
    fn hidden_update_cases() {
        let mut r = rng(4);
        let layer = FcLayer::new(random(4, 3, &mut r), false).unwrap();
        let h_in = random(3, 9, &mut r);
        let same = recompute_hidden_layer(
            &layer,
            &Matrix::zeros(4, 9),
            &h_in,
            &cfg(5.0, 1.0, 0.0),
            &mut r,
        )
        .unwrap();
        assert_eq!(same, layer);

        let zero = FcLayer::new(Matrix::zeros(4, 3), false).unwrap();
        let p = random(4, 9, &mut r);
        let fit = recompute_hidden_layer(&zero, &p, &h_in, &cfg(5.0, 1.0, 0.0), &mut r).unwrap();
        let gram = &h_in * h_in.transpose() + Matrix::identity(3, 3) / 5.0;
        let want = &p * h_in.transpose() * gram.try_inverse().unwrap();
        assert!(relative_error(fit.weights(), &want) < 1e-9);

        let bad = recompute_hidden_layer(
            &layer,
            &Matrix::zeros(3, 9),
            &h_in,
            &cfg(5.0, 1.0, 0.0),
            &mut r,
        );
        assert!(matches!(bad, Err(Error::Shape { .. })));
    }

    #[test]
    fn hidden_update_half_dropout_keeps_ten_of_twenty() {
        let mut r = rng(5);
        let layer = FcLayer::new(random(20, 6, &mut r), false).unwrap();
        let h_in = random(6, 30, &mut r);
        let p = random(20, 30, &mut r);
        let c = cfg(5.0, 1.0, 0.5);
        let full = recompute_hidden_layer(
            &layer,
            &p,
            &h_in,
            &RecomputeConfig {
                dropout_rate: 0.0,
                ..c
            },
            &mut r,
        )
        .unwrap();
        let mixed = recompute_hidden_layer(&layer, &p, &h_in, &c, &mut r).unwrap();
        let mut old = 0;
        let mut new = 0;
        for i in 0..20 {
            let row = mixed.weights().row(i);
            if row == layer.weights().row(i) {
                old += 1;
            } else if row == full.weights().row(i) {
                new += 1;
            }
        }
        assert_eq!((old, new), (10, 10));
    }

    #[test]
    fn dropout_mix_rate_zero_takes_new() {
        let mut r = rng(6);
        let old = random(7, 3, &mut r);
        let new = random(7, 3, &mut r);
        assert_eq!(dropout_mix(&old, &new, 0.0, &mut r).unwrap(), new);
    }

    #[test]
    fn dropout_mix_validates() {
        let mut r = rng(7);
        let a = Matrix::zeros(2, 2);
        assert!(dropout_mix(&a, &Matrix::zeros(3, 2), 0.1, &mut r).is_err());
        assert!(dropout_mix(&a, &a, 1.0, &mut r).is_err());
        assert!(dropout_mix(&a, &a, -0.1, &mut r).is_err());
    }

    #[test]
    fn dropout_mix_seed_behavior() {
        let old = Matrix::zeros(100, 2);
        let new = Matrix::from_element(100, 2, 1.0);
        let pick = |seed| dropout_mix(&old, &new, 0.3, &mut rng(seed)).unwrap();
        assert_eq!(pick(9), pick(9));
        let base = pick(0);
        let differing = (1..=50).filter(|&s| pick(s) != base).count();
        assert_eq!(differing, 50);
    }

    #[test]
    fn kept_rows_rounds_half_up() {
        assert_eq!(kept_rows(0.5, 20), 10);
        assert_eq!(kept_rows(0.25, 2), 1);
        assert_eq!(kept_rows(0.0, 9), 0);
        assert_eq!(kept_rows(0.3, 5), 2);
    }

    #[test]
    fn pass_at_fixed_point_is_noop() {
        let mut r = rng(8);
        let head = head_of(vec![
            random(5, 3, &mut r),
            random(4, 5, &mut r),
            random(2, 4, &mut r),
        ]);
        let x = random(3, 10, &mut r);
        let o = forward(&head, &x).unwrap().logits;
        let out = recompute_pass(&head, &x, &o, &cfg(10.0, 1.0, 0.0), &mut r).unwrap();
        assert_eq!(out, head);
    }

    #[test]
    fn single_layer_pass_equals_output_update() {
        let mut r = rng(9);
        let head = head_of(vec![random(3, 4, &mut r)]);
        let x = random(4, 8, &mut r);
        let o = random(3, 8, &mut r);
        let c = cfg(20.0, 0.5, 0.0);
        let t = forward(&head, &x).unwrap();
        let a = recompute_pass(&head, &x, &o, &c, &mut rng(1)).unwrap();
        let b = recompute_output_layer(&head, &t, &o, &c, &mut rng(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pass_preserves_shapes_with_bias() {
        let mut r = rng(10);
        let spec = HeadSpec {
            widths: vec![4, 6, 5, 3],
            bias: true,
        };
        let head = spec.init(&mut r).unwrap();
        let x = random(4, 20, &mut r);
        let labels: Vec<usize> = (0..20).map(|i| i % 3).collect();
        let o = one_hot_cols(&labels, 3);
        let out = recompute_pass(&head, &x, &o, &cfg(10.0, 1.0, 0.2), &mut r).unwrap();
        for (a, b) in head.layers().iter().zip(out.layers()) {
            assert_eq!(a.weights().shape(), b.weights().shape());
            assert!(b.has_bias());
        }
        assert_eq!(out.spec(), spec);
    }

    #[test]
    fn argmax_tie_breaks_low() {
        let m = Matrix::from_column_slice(3, 1, &[0.1, 0.9, 0.0]);
        assert_eq!(argmax_columns(&m), vec![1]);
        let m = Matrix::from_column_slice(2, 1, &[0.5, 0.5]);
        assert_eq!(argmax_columns(&m), vec![0]);
    }

    #[test]
    fn predict_is_argmax_of_forward() {
        let mut r = rng(12);
        let head = head_of(vec![random(6, 4, &mut r), random(3, 6, &mut r)]);
        let x = random(4, 25, &mut r);
        let logits = forward_oracle(
            &[
                head.layers()[0].weights().clone(),
                head.layers()[1].weights().clone(),
            ],
            &x,
        );
        let want: Vec<usize> = (0..25)
            .map(|j| {
                let col: Vec<f64> = logits.column(j).iter().copied().collect();
                let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                col.iter().position(|&v| v == max).unwrap()
            })
            .collect();
        assert_eq!(predict(&head, &x).unwrap(), want);
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0.0, 1.0, 0.0).validate().is_err());
        assert!(cfg(1.0, 0.0, 0.0).validate().is_err());
        assert!(cfg(1.0, 1.5, 0.0).validate().is_err());
        assert!(cfg(1.0, 1.0, 1.0).validate().is_err());
        assert!(cfg(1.0, 1.0, 0.99).validate().is_ok());
    }
}
