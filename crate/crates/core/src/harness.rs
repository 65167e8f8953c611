//! Training schedules, evaluation and paired comparisons.
//!
//! An `alternating` epoch is one SGDM epoch followed by one recompute pass
//! over the whole training set. The other two modes drop one of the phases.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split, Dataset};
use crate::error::{Error, Result};
use crate::head::{self, argmax_columns, forward, FcHead, HeadSpec, RecomputeConfig};
use crate::sgdm::{self, softmax_cross_entropy, SgdmConfig, SgdmState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SgdmOnly,
    RecomputeOnly,
    Alternating,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::SgdmOnly => "sgdm_only",
            Mode::RecomputeOnly => "recompute_only",
            Mode::Alternating => "alternating",
        }
    }

    fn runs_sgdm(self) -> bool {
        matches!(self, Mode::SgdmOnly | Mode::Alternating)
    }

    fn runs_recompute(self) -> bool {
        matches!(self, Mode::RecomputeOnly | Mode::Alternating)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgdm_only" | "sgdm" => Ok(Mode::SgdmOnly),
            "recompute_only" | "recompute" => Ok(Mode::RecomputeOnly),
            "alternating" => Ok(Mode::Alternating),
            other => Err(Error::param(
                "mode",
                format!("expected sgdm_only, recompute_only or alternating, got {other:?}"),
            )),
        }
    }
}

/// SGDM learning rate for an inclusive, 1-based range of epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrGroup {
    pub first_epoch: usize,
    pub last_epoch: usize,
    pub learning_rate: f64,
}

/// 1e-3, 1e-4, 1e-5 over consecutive thirds of the budget. Empty groups
/// (short budgets) are dropped.
pub fn default_lr_schedule(epochs: usize) -> Vec<LrGroup> {
    let bound = |k: usize| (k * epochs).div_ceil(3);
    [1e-3, 1e-4, 1e-5]
        .into_iter()
        .enumerate()
        .filter_map(|(k, lr)| {
            let first = bound(k) + 1;
            let last = bound(k + 1);
            (first <= last).then_some(LrGroup {
                first_epoch: first,
                last_epoch: last,
                learning_rate: lr,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub mode: Mode,
    pub epochs: usize,
    /// Must cover `1..=epochs` exactly once. Empty means
    /// [`default_lr_schedule`].
    #[serde(default)]
    pub lr_schedule: Vec<LrGroup>,
    #[serde(default)]
    pub recompute: RecomputeConfig,
    /// `learning_rate` here is overridden per epoch by the schedule.
    #[serde(default)]
    pub sgdm: SgdmConfig,
    /// Evaluate train/test metrics every this many epochs (the last epoch
    /// is always evaluated).
    #[serde(default = "one")]
    pub eval_every: usize,
}

fn one() -> usize {
    1
}

impl TrainPlan {
    pub fn new(mode: Mode, epochs: usize) -> Self {
        TrainPlan {
            mode,
            epochs,
            lr_schedule: Vec::new(),
            recompute: RecomputeConfig::default(),
            sgdm: SgdmConfig::default(),
            eval_every: 1,
        }
    }

    pub fn with_constant_lr(mut self, lr: f64) -> Self {
        self.lr_schedule = vec![LrGroup {
            first_epoch: 1,
            last_epoch: self.epochs,
            learning_rate: lr,
        }];
        self
    }

    /// The schedule actually used, one rate per epoch.
    pub fn learning_rates(&self) -> Result<Vec<f64>> {
        let groups = if self.lr_schedule.is_empty() {
            default_lr_schedule(self.epochs)
        } else {
            self.lr_schedule.clone()
        };
        let mut rates = vec![None; self.epochs];
        for g in &groups {
            if g.first_epoch == 0 || g.first_epoch > g.last_epoch || g.last_epoch > self.epochs {
                return Err(Error::param(
                    "lr_schedule",
                    format!(
                        "group {}..={} is outside 1..={}",
                        g.first_epoch, g.last_epoch, self.epochs
                    ),
                ));
            }
            for slot in &mut rates[g.first_epoch - 1..g.last_epoch] {
                if slot.replace(g.learning_rate).is_some() {
                    return Err(Error::param("lr_schedule", "epoch groups overlap"));
                }
            }
        }
        rates
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                r.ok_or_else(|| {
                    Error::param(
                        "lr_schedule",
                        format!("epoch {} has no learning rate", i + 1),
                    )
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::param("eval_every", "must be >= 1"));
        }
        self.recompute.validate()?;
        self.sgdm.validate()?;
        for lr in self.learning_rates()? {
            SgdmConfig {
                learning_rate: lr,
                ..self.sgdm
            }
            .validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub sgdm_seconds: f64,
    pub recompute_seconds: f64,
    pub epoch_seconds: f64,
    /// Mean minibatch loss reported by the SGDM phase.
    pub sgdm_loss: Option<f64>,
    pub train_loss: Option<f64>,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalSummary {
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: Option<f64>,
    pub test_acc: Option<f64>,
    pub total_sgdm_seconds: f64,
    pub total_recompute_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: Mode,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    #[serde(rename = "final")]
    pub summary: FinalSummary,
    /// Effective configuration, filled in by callers that have one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl RunRecord {
    /// Copy with every timing field zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> RunRecord {
        let mut r = self.clone();
        for e in &mut r.epochs {
            e.sgdm_seconds = 0.0;
            e.recompute_seconds = 0.0;
            e.epoch_seconds = 0.0;
        }
        r.summary.total_sgdm_seconds = 0.0;
        r.summary.total_recompute_seconds = 0.0;
        r.summary.total_seconds = 0.0;
        r
    }
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub record: RunRecord,
    pub head: FcHead,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loss: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate(head: &FcHead, ds: &Dataset) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::Empty("evaluation set has no samples"));
    }
    if head.num_classes() != ds.num_classes {
        return Err(Error::shape(
            "evaluate",
            format!(
                "head predicts {} classes, dataset has {}",
                head.num_classes(),
                ds.num_classes
            ),
        ));
    }
    let trace = forward(head, &ds.features)?;
    let (mean_loss, _) = softmax_cross_entropy(&trace.logits, &ds.targets())?;
    let predicted = argmax_columns(&trace.logits);
    let mut confusion = vec![vec![0usize; ds.num_classes]; ds.num_classes];
    let mut correct = 0usize;
    for (&t, &p) in ds.labels.iter().zip(&predicted) {
        confusion[t][p] += 1;
        correct += usize::from(t == p);
    }
    Ok(Evaluation {
        accuracy: correct as f64 / ds.len() as f64,
        mean_loss,
        confusion,
    })
}

/// Independent streams derived from one run seed.
fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn numeric_in(err: Error, epoch: usize, phase: &'static str) -> Error {
    if err.is_numeric() {
        Error::NonFiniteLoss { epoch, phase }
    } else {
        err
    }
}

fn finite_or(v: f64, epoch: usize, phase: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss { epoch, phase })
    }
}

fn check_data(spec: &HeadSpec, ds: &Dataset, which: &str) -> Result<()> {
    let widths = &spec.widths;
    if widths[0] != ds.dim() || widths[widths.len() - 1] != ds.num_classes {
        return Err(Error::shape(
            "run",
            format!(
                "head {:?} does not fit {which} data with {} features and {} classes",
                widths,
                ds.dim(),
                ds.num_classes
            ),
        ));
    }
    Ok(())
}

/// Trains a freshly initialized head. All randomness (initialization,
/// shuffling, dropout selection) derives from `seed` and the plan's own
/// seeds.
pub fn run(
    plan: &TrainPlan,
    spec: &HeadSpec,
    train: &Dataset,
    test: &Dataset,
    seed: u64,
) -> Result<TrainedRun> {
    plan.validate()?;
    spec.validate()?;
    check_data(spec, train, "training")?;
    if !test.is_empty() {
        check_data(spec, test, "test")?;
    }
    if train.is_empty() {
        return Err(Error::Empty("training set has no samples"));
    }
    let rates = plan.learning_rates()?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut head = spec.init(&mut init_rng)?;
    let mut state = SgdmState::new(
        &head,
        SgdmConfig {
            shuffle_seed: derive_seed(seed, 2 ^ plan.sgdm.shuffle_seed.rotate_left(8)),
            ..plan.sgdm
        },
    )?;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        3 ^ plan.recompute.rng_seed.rotate_left(8),
    ));

    let targets = train.targets();
    let mut epochs = Vec::with_capacity(plan.epochs);
    let started = Instant::now();

    for (idx, &lr) in rates.iter().enumerate() {
        let epoch = idx + 1;
        let epoch_start = Instant::now();
        let mut record = EpochRecord {
            epoch,
            learning_rate: lr,
            sgdm_seconds: 0.0,
            recompute_seconds: 0.0,
            epoch_seconds: 0.0,
            sgdm_loss: None,
            train_loss: None,
            train_acc: None,
            test_acc: None,
        };

        if plan.mode.runs_sgdm() {
            state.set_learning_rate(lr);
            let t = Instant::now();
            let (next, loss) = sgdm::sgdm_epoch(&head, &mut state, &train.features, &targets)
                .map_err(|e| numeric_in(e, epoch, "sgdm"))?;
            record.sgdm_seconds = t.elapsed().as_secs_f64();
            record.sgdm_loss = Some(finite_or(loss, epoch, "sgdm")?);
            head = next;
        }

        if plan.mode.runs_recompute() {
            let t = Instant::now();
            head = head::recompute_pass(
                &head,
                &train.features,
                &targets,
                &plan.recompute,
                &mut dropout_rng,
            )
            .map_err(|e| numeric_in(e, epoch, "recompute"))?;
            record.recompute_seconds = t.elapsed().as_secs_f64();
        }

        if epoch % plan.eval_every == 0 || epoch == plan.epochs {
            let ev = evaluate(&head, train).map_err(|e| numeric_in(e, epoch, "evaluate"))?;
            record.train_loss = Some(finite_or(ev.mean_loss, epoch, "evaluate")?);
            record.train_acc = Some(ev.accuracy);
            if !test.is_empty() {
                record.test_acc = Some(evaluate(&head, test)?.accuracy);
            }
        }
        record.epoch_seconds = epoch_start.elapsed().as_secs_f64();
        epochs.push(record);
    }

    let train_eval = evaluate(&head, train)?;
    let test_eval = if test.is_empty() {
        None
    } else {
        Some(evaluate(&head, test)?)
    };
    let summary = FinalSummary {
        train_loss: finite_or(train_eval.mean_loss, plan.epochs, "evaluate")?,
        train_acc: train_eval.accuracy,
        test_loss: test_eval.as_ref().map(|e| e.mean_loss),
        test_acc: test_eval.as_ref().map(|e| e.accuracy),
        total_sgdm_seconds: epochs.iter().map(|e| e.sgdm_seconds).sum(),
        total_recompute_seconds: epochs.iter().map(|e| e.recompute_seconds).sum(),
        total_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(TrainedRun {
        record: RunRecord {
            mode: plan.mode,
            seed,
            epochs,
            summary,
            config: None,
        },
        head,
    })
}

/// Where each seed's train/test pair comes from.
#[derive(Debug, Clone)]
pub enum Splits<'a> {
    /// The same fixed pair for every seed.
    Fixed {
        train: &'a Dataset,
        test: &'a Dataset,
    },
    /// A stratified split of `data`, re-drawn per seed.
    Stratified {
        data: &'a Dataset,
        train_fraction: f64,
    },
}

impl Splits<'_> {
    fn for_seed(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        match self {
            Splits::Fixed { train, test } => Ok(((*train).clone(), (*test).clone())),
            Splits::Stratified {
                data,
                train_fraction,
            } => split(data, *train_fraction, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedEntry {
    pub seed: u64,
    pub test_acc_a: f64,
    pub test_acc_b: f64,
    /// `b − a`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub mode: Mode,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
    pub total_sgdm_seconds: f64,
    pub total_recompute_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub a: PlanSummary,
    pub b: PlanSummary,
    pub entries: Vec<PairedEntry>,
    pub mean_delta: f64,
    pub runs_a: Vec<RunRecord>,
    pub runs_b: Vec<RunRecord>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs both plans on identical data and seeds; reports test accuracy
/// of `b` relative to `a`.
pub fn compare(
    plan_a: &TrainPlan,
    spec_a: &HeadSpec,
    plan_b: &TrainPlan,
    spec_b: &HeadSpec,
    splits: &Splits<'_>,
    seeds: &[u64],
) -> Result<ComparisonReport> {
    if seeds.is_empty() {
        return Err(Error::Empty("compare needs at least one seed"));
    }
    let mut runs_a = Vec::with_capacity(seeds.len());
    let mut runs_b = Vec::with_capacity(seeds.len());
    let mut entries = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let (train, test) = splits.for_seed(seed)?;
        if test.is_empty() {
            return Err(Error::Empty("compare needs a non-empty test set"));
        }
        let a = run(plan_a, spec_a, &train, &test, seed)?.record;
        let b = run(plan_b, spec_b, &train, &test, seed)?.record;
        let (acc_a, acc_b) = (
            a.summary.test_acc.expect("test set is non-empty"),
            b.summary.test_acc.expect("test set is non-empty"),
        );
        entries.push(PairedEntry {
            seed,
            test_acc_a: acc_a,
            test_acc_b: acc_b,
            delta: acc_b - acc_a,
        });
        runs_a.push(a);
        runs_b.push(b);
    }
    let summarize = |plan: &TrainPlan, runs: &[RunRecord]| {
        let accs: Vec<f64> = runs.iter().map(|r| r.summary.test_acc.unwrap()).collect();
        let (mean, std) = mean_std(&accs);
        PlanSummary {
            mode: plan.mode,
            mean_test_acc: mean,
            std_test_acc: std,
            total_sgdm_seconds: runs.iter().map(|r| r.summary.total_sgdm_seconds).sum(),
            total_recompute_seconds: runs.iter().map(|r| r.summary.total_recompute_seconds).sum(),
        }
    };
    let deltas: Vec<f64> = entries.iter().map(|e| e.delta).collect();
    Ok(ComparisonReport {
        a: summarize(plan_a, &runs_a),
        b: summarize(plan_b, &runs_b),
        mean_delta: mean_std(&deltas).0,
        entries,
        runs_a,
        runs_b,
    })
}
