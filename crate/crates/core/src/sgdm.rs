//! Softmax cross-entropy, exact backprop through the head, and minibatch
//! SGD with momentum.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{forward, FcHead};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdmConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

impl Default for SgdmConfig {
    fn default() -> Self {
        SgdmConfig {
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 128,
            shuffle_seed: 0,
        }
    }
}

impl SgdmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::param(
                "learning_rate",
                format!("must be finite and >= 0, got {}", self.learning_rate),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param(
                "momentum",
                format!("must be in [0, 1), got {}", self.momentum),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be >= 1"));
        }
        Ok(())
    }
}

/// Velocity buffers plus the shuffle stream.
#[derive(Debug, Clone)]
pub struct SgdmState {
    pub config: SgdmConfig,
    velocity: Vec<Matrix>,
    shuffle_rng: ChaCha8Rng,
}

impl SgdmState {
    pub fn new(head: &FcHead, config: SgdmConfig) -> Result<Self> {
        config.validate()?;
        Ok(SgdmState {
            velocity: head
                .layers()
                .iter()
                .map(|l| Matrix::zeros(l.weights().nrows(), l.weights().ncols()))
                .collect(),
            shuffle_rng: ChaCha8Rng::seed_from_u64(config.shuffle_seed),
            config,
        })
    }

    pub fn velocity(&self) -> &[Matrix] {
        &self.velocity
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Draws the next epoch's visiting order, a permutation of `0..n`.
    pub fn next_order(&mut self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.shuffle_rng);
        order
    }
}

/// Mean categorical cross-entropy over columns and its gradient with
/// respect to the logits, `(softmax − O)/N`.
pub fn softmax_cross_entropy(logits: &Matrix, o: &Matrix) -> Result<(f64, Matrix)> {
    if logits.shape() != o.shape() {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("logits {:?}, targets {:?}", logits.shape(), o.shape()),
        ));
    }
    let n = logits.ncols();
    if n == 0 {
        return Err(Error::Empty("softmax_cross_entropy: no samples"));
    }
    let mut grad = Matrix::zeros(logits.nrows(), n);
    let mut total = 0.0;
    for j in 0..n {
        let target = one_hot_index(o, j)?;
        let col = logits.column(j);
        let max = col.max();
        let sum: f64 = col.iter().map(|&z| (z - max).exp()).sum();
        let log_sum = max + sum.ln();
        total += log_sum - col[target];
        for (i, &z) in col.iter().enumerate() {
            grad[(i, j)] = ((z - log_sum).exp() - o[(i, j)]) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

fn one_hot_index(o: &Matrix, col: usize) -> Result<usize> {
    let mut hot = None;
    for (i, &v) in o.column(col).iter().enumerate() {
        if v == 1.0 && hot.is_none() {
            hot = Some(i);
        } else if v != 0.0 {
            return Err(Error::param(
                "targets",
                format!("column {col} is not one-hot"),
            ));
        }
    }
    hot.ok_or_else(|| Error::param("targets", format!("column {col} is not one-hot")))
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    /// One matrix per layer, shaped like its weights.
    pub layers: Vec<Matrix>,
}

/// Exact gradients of mean softmax cross-entropy with respect to every
/// layer's weights. The ReLU derivative at zero is taken as 0.
pub fn head_gradients(head: &FcHead, h0: &Matrix, o: &Matrix) -> Result<Gradients> {
    let trace = forward(head, h0)?;
    let (loss, mut delta) = softmax_cross_entropy(&trace.logits, o)?;
    let layers = head.layers();
    let mut grads = vec![Matrix::zeros(0, 0); layers.len()];
    for idx in (0..layers.len()).rev() {
        let layer = &layers[idx];
        let input = &trace.activations[idx];
        grads[idx] = &delta * layer.layer_input(input).transpose();
        if idx > 0 {
            let mut back = layer.input_weights().transpose() * &delta;
            back.zip_apply(input, |d, h| {
                if h <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = back;
        }
    }
    Ok(Gradients {
        loss,
        layers: grads,
    })
}

/// One pass over shuffled minibatches. Returns the updated head and the
/// sample-weighted mean of the batch losses.
pub fn sgdm_epoch(
    head: &FcHead,
    state: &mut SgdmState,
    h0: &Matrix,
    o: &Matrix,
) -> Result<(FcHead, f64)> {
    state.config.validate()?;
    let n = h0.ncols();
    if o.ncols() != n {
        return Err(Error::shape(
            "sgdm_epoch",
            format!("{} feature columns, {} target columns", n, o.ncols()),
        ));
    }
    if n == 0 {
        return Err(Error::Empty("sgdm_epoch: no samples"));
    }
    if state.config.batch_size > n {
        return Err(Error::param(
            "batch_size",
            format!("{} exceeds sample count {n}", state.config.batch_size),
        ));
    }
    if state.velocity.len() != head.layers().len()
        || state
            .velocity
            .iter()
            .zip(head.layers())
            .any(|(v, l)| v.shape() != l.weights().shape())
    {
        return Err(Error::shape("sgdm_epoch", "velocity does not mirror head"));
    }

    let order = state.next_order(n);

    let SgdmConfig {
        learning_rate,
        momentum,
        batch_size,
        ..
    } = state.config;
    let mut weights: Vec<Matrix> = head.layers().iter().map(|l| l.weights().clone()).collect();
    let mut current = head.clone();
    let mut loss_sum = 0.0;

    for batch in order.chunks(batch_size) {
        let xb = h0.select_columns(batch);
        let ob = o.select_columns(batch);
        let grads = head_gradients(&current, &xb, &ob)?;
        loss_sum += grads.loss * batch.len() as f64;
        if learning_rate == 0.0 && momentum == 0.0 {
            continue;
        }
        for ((w, v), g) in weights
            .iter_mut()
            .zip(&mut state.velocity)
            .zip(&grads.layers)
        {
            *v *= momentum;
            *v -= g * learning_rate;
            *w += &*v;
        }
        current = rebuild(head, &weights)?;
    }
    Ok((current, loss_sum / n as f64))
}

fn rebuild(template: &FcHead, weights: &[Matrix]) -> Result<FcHead> {
    let layers = template
        .layers()
        .iter()
        .zip(weights)
        .map(|(l, w)| crate::head::FcLayer::new(w.clone(), l.has_bias()))
        .collect::<Result<Vec<_>>>()?;
    FcHead::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::{FcLayer, HeadSpec};
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn one_hot(labels: &[usize], c: usize) -> Matrix {
        Matrix::from_fn(c, labels.len(), |r, j| f64::from(u8::from(labels[j] == r)))
    }

    #[test]
    fn saturated_correct_logits() {
        let logits = Matrix::from_column_slice(2, 1, &[1000.0, -1000.0]);
        let (loss, grad) = softmax_cross_entropy(&logits, &one_hot(&[0], 2)).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.amax() < 1e-12);
    }

    #[test]
    fn uniform_logits_hand_values() {
        let logits = Matrix::zeros(2, 2);
        let (loss, grad) = softmax_cross_entropy(&logits, &one_hot(&[0, 0], 2)).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((grad[(0, 0)] + 0.25).abs() < 1e-15);
        assert!((grad[(1, 0)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut r = rng(1);
        let logits = random(4, 8, &mut r) * 3.0;
        let labels: Vec<usize> = (0..8).map(|_| r.random_range(0..4)).collect();
        let o = one_hot(&labels, 4);
        let (_, grad) = softmax_cross_entropy(&logits, &o).unwrap();
        let step = 1e-5;
        for i in 0..4 {
            for j in 0..8 {
                let mut up = logits.clone();
                up[(i, j)] += step;
                let mut down = logits.clone();
                down[(i, j)] -= step;
                let fd = (softmax_cross_entropy(&up, &o).unwrap().0
                    - softmax_cross_entropy(&down, &o).unwrap().0)
                    / (2.0 * step);
                assert!((fd - grad[(i, j)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cross_entropy_rejects_bad_targets() {
        let logits = Matrix::zeros(2, 1);
        let bad = Matrix::from_column_slice(2, 1, &[0.5, 0.5]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &bad),
            Err(Error::Parameter { .. })
        ));
        let two = Matrix::from_column_slice(2, 1, &[1.0, 1.0]);
        assert!(softmax_cross_entropy(&logits, &two).is_err());
        assert!(matches!(
            softmax_cross_entropy(&logits, &Matrix::zeros(3, 1)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn zero_head_gradient_hand_case() {
        // 1 feature, 2 classes, one sample x = 2, class 1.
        let head = FcHead::new(vec![FcLayer::new(Matrix::zeros(2, 1), false).unwrap()]).unwrap();
        let x = Matrix::from_element(1, 1, 2.0);
        let g = head_gradients(&head, &x, &one_hot(&[1], 2)).unwrap();
        // (softmax(0) − o)·xᵀ = ([0.5, −0.5])·2
        assert!((g.layers[0][(0, 0)] - 1.0).abs() < 1e-15);
        assert!((g.layers[0][(1, 0)] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn dead_relu_zeroes_lower_gradients() {
        let w1 = Matrix::from_element(3, 2, -1.0);
        let w2 = Matrix::from_element(2, 3, 0.7);
        let head = FcHead::new(vec![
            FcLayer::new(w1, false).unwrap(),
            FcLayer::new(w2, false).unwrap(),
        ])
        .unwrap();
        let x = Matrix::from_element(2, 4, 1.0);
        let g = head_gradients(&head, &x, &one_hot(&[0, 1, 0, 1], 2)).unwrap();
        assert_eq!(g.layers[0], Matrix::zeros(3, 2));
    }

    #[test]
    fn null_step_keeps_head() {
        let mut r = rng(2);
        let head = HeadSpec::new(vec![3, 4, 2]).init(&mut r).unwrap();
        let x = random(3, 10, &mut r);
        let o = one_hot(&[0, 1, 0, 1, 0, 1, 0, 1, 0, 1], 2);
        let mut state = SgdmState::new(
            &head,
            SgdmConfig {
                learning_rate: 0.0,
                momentum: 0.0,
                batch_size: 3,
                shuffle_seed: 1,
            },
        )
        .unwrap();
        let (out, loss) = sgdm_epoch(&head, &mut state, &x, &o).unwrap();
        assert_eq!(out, head);
        assert!(state.velocity().iter().all(|v| v.iter().all(|&x| x == 0.0)));
        let direct = softmax_cross_entropy(&forward(&head, &x).unwrap().logits, &o)
            .unwrap()
            .0;
        assert!((loss - direct).abs() < 1e-12);
    }

    #[test]
    fn one_vanilla_step_hand_checked() {
        let head = FcHead::new(vec![FcLayer::new(Matrix::zeros(2, 1), false).unwrap()]).unwrap();
        let x = Matrix::from_element(1, 1, 2.0);
        let o = one_hot(&[1], 2);
        let mut state = SgdmState::new(
            &head,
            SgdmConfig {
                learning_rate: 0.1,
                momentum: 0.0,
                batch_size: 1,
                shuffle_seed: 0,
            },
        )
        .unwrap();
        let (out, loss) = sgdm_epoch(&head, &mut state, &x, &o).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        let w = out.layers()[0].weights();
        assert!((w[(0, 0)] + 0.1).abs() < 1e-15);
        assert!((w[(1, 0)] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn epoch_is_deterministic_under_seed() {
        let mut r = rng(3);
        let head = HeadSpec::new(vec![5, 7, 3]).init(&mut r).unwrap();
        let x = random(5, 40, &mut r);
        let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let o = one_hot(&labels, 3);
        let cfg = SgdmConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 7,
            shuffle_seed: 42,
        };
        let run = || {
            let mut s = SgdmState::new(&head, cfg).unwrap();
            let (h1, _) = sgdm_epoch(&head, &mut s, &x, &o).unwrap();
            sgdm_epoch(&h1, &mut s, &x, &o).unwrap().0
        };
        let (a, b) = (run(), run());
        for (la, lb) in a.layers().iter().zip(b.layers()) {
            assert_eq!(la.weights().as_slice(), lb.weights().as_slice());
        }
    }

    #[test]
    fn full_batch_small_step_decreases_loss() {
        let mut r = rng(4);
        let head = HeadSpec::new(vec![4, 3]).init(&mut r).unwrap();
        let x = random(4, 30, &mut r);
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let o = one_hot(&labels, 3);
        let mut state = SgdmState::new(
            &head,
            SgdmConfig {
                learning_rate: 0.05,
                momentum: 0.0,
                batch_size: 30,
                shuffle_seed: 0,
            },
        )
        .unwrap();
        let mut cur = head;
        let mut prev = f64::INFINITY;
        for _ in 0..10 {
            let (next, loss) = sgdm_epoch(&cur, &mut state, &x, &o).unwrap();
            assert!(loss <= prev);
            prev = loss;
            cur = next;
        }
    }

    #[test]
    fn epoch_rejects_oversized_batch() {
        let mut r = rng(5);
        let head = HeadSpec::new(vec![2, 2]).init(&mut r).unwrap();
        let mut state = SgdmState::new(
            &head,
            SgdmConfig {
                batch_size: 10,
                ..Default::default()
            },
        )
        .unwrap();
        let x = Matrix::zeros(2, 4);
        let o = one_hot(&[0, 1, 0, 1], 2);
        assert!(matches!(
            sgdm_epoch(&head, &mut state, &x, &o),
            Err(Error::Parameter { .. })
        ));
    }
}
