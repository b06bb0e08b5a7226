//! Learned augmentation policy, optimized jointly with model training.
//!
//! A policy holds `K` sub-policies, each an ordered list of `J` operations
//! with a learnable application probability and magnitude. Augmenting a
//! sample draws one sub-policy from the softmax over selection logits, then
//! fires each of its ops independently with probability `sigmoid(p_logit)` at
//! magnitude level `30 * sigmoid(m)` where `m` is drawn from
//! `Normal(m_logit, explore_std^2)`.
//!
//! Because several transforms are not differentiable in their magnitude
//! (permutation, the window ops), the policy parameters are trained with a
//! score-function estimator instead of a relaxed gradient: every sampled
//! trace contributes `grad log P(trace)` scaled by `-(val_loss - baseline)`,
//! with an exponential-moving-average baseline (decay 0.9) for variance
//! reduction. The estimator is unbiased and works uniformly for all eight
//! ops; probabilities and magnitudes stay in their open ranges by
//! construction, never by clamping.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::augment::{apply, AugOpKind, MagnitudeTable, LEVEL_MAX};
use crate::error::{Error, Result};
use crate::model::{
    softmax_cross_entropy, stack_batch, Adam, Batch, EpochRecord, Model, TrainConfig, TrainReport,
};
use crate::rng::RngStream;
use crate::series::{Dataset, TimeSeries};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One operation inside a sub-policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubPolicyOp {
    pub kind: AugOpKind,
    /// Application probability is `sigmoid(p_logit)`.
    pub p_logit: f64,
    /// Magnitude level is `30 * sigmoid(m)` with `m ~ Normal(m_logit, s^2)`.
    pub m_logit: f64,
}

impl SubPolicyOp {
    pub fn probability(&self) -> f64 {
        sigmoid(self.p_logit)
    }

    /// Mean magnitude level implied by the current logit.
    pub fn level(&self) -> f64 {
        LEVEL_MAX * sigmoid(self.m_logit)
    }
}

/// An ordered list of `J` parameterized operations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubPolicy {
    pub ops: Vec<SubPolicyOp>,
}

/// `K` sub-policies plus selection logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub subpolicies: Vec<SubPolicy>,
    /// Selection logits; the selection distribution is their softmax.
    pub weights: Vec<f64>,
}

/// Record of the random choices made while augmenting one sample; the
/// score-function gradient is a function of the trace alone.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Which sub-policy was selected.
    pub subpolicy: usize,
    /// Bernoulli outcome per op of the selected sub-policy.
    pub fired: Vec<bool>,
    /// Sampled magnitude logit per fired op (`None` for ops that did not
    /// fire; their magnitude was never used).
    pub m_samples: Vec<Option<f64>>,
}

/// Gradient of a trace's log-probability w.r.t. every policy parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad {
    pub weights: Vec<f64>,
    pub p_logits: Vec<Vec<f64>>,
    pub m_logits: Vec<Vec<f64>>,
}

impl PolicyGrad {
    fn zeros_like(policy: &Policy) -> PolicyGrad {
        PolicyGrad {
            weights: vec![0.0; policy.weights.len()],
            p_logits: policy.subpolicies.iter().map(|s| vec![0.0; s.ops.len()]).collect(),
            m_logits: policy.subpolicies.iter().map(|s| vec![0.0; s.ops.len()]).collect(),
        }
    }

    fn add_scaled(&mut self, other: &PolicyGrad, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += scale * b;
        }
        for (row_a, row_b) in self.p_logits.iter_mut().zip(&other.p_logits) {
            for (a, b) in row_a.iter_mut().zip(row_b) {
                *a += scale * b;
            }
        }
        for (row_a, row_b) in self.m_logits.iter_mut().zip(&other.m_logits) {
            for (a, b) in row_a.iter_mut().zip(row_b) {
                *a += scale * b;
            }
        }
    }
}

/// Build a policy of `K` random sub-policies of `J` ops each.
///
/// Op kinds are drawn uniformly from `pool` and stay fixed; all selection
/// logits start at zero (uniform softmax), application probabilities at 0.5,
/// and magnitude levels at 15.
pub fn init_policy(
    ops_per_subpolicy: usize,
    num_subpolicies: usize,
    pool: &[AugOpKind],
    stream: RngStream,
) -> Result<Policy> {
    if ops_per_subpolicy == 0 || num_subpolicies == 0 {
        return Err(Error::InvalidParameter(
            "policy needs at least one sub-policy of one op".into(),
        ));
    }
    if pool.is_empty() {
        return Err(Error::InvalidParameter("op pool is empty".into()));
    }
    let mut rng = stream.rng();
    let subpolicies = (0..num_subpolicies)
        .map(|_| SubPolicy {
            ops: (0..ops_per_subpolicy)
                .map(|_| SubPolicyOp {
                    kind: pool[rng.random_range(0..pool.len())],
                    p_logit: 0.0,
                    m_logit: 0.0,
                })
                .collect(),
        })
        .collect();
    Ok(Policy {
        subpolicies,
        weights: vec![0.0; num_subpolicies],
    })
}

impl Policy {
    pub fn validate(&self) -> Result<()> {
        if self.subpolicies.is_empty() || self.weights.len() != self.subpolicies.len() {
            return Err(Error::InvalidParameter(
                "policy weights must match its sub-policies".into(),
            ));
        }
        if self.subpolicies.iter().any(|s| s.ops.is_empty()) {
            return Err(Error::InvalidParameter("empty sub-policy".into()));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("policy weights".into()));
        }
        Ok(())
    }

    pub fn num_subpolicies(&self) -> usize {
        self.subpolicies.len()
    }

    /// Softmax of the selection logits; non-negative and sums to one.
    pub fn selection_probs(&self) -> Vec<f64> {
        let max = self.weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.weights.iter().map(|w| (w - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    /// Draw a trace: sub-policy index, Bernoulli outcome per op, and a
    /// Gaussian magnitude logit per fired op. Draw order: selection uniform,
    /// then per op the Bernoulli followed (if fired) by the magnitude.
    pub fn sample_trace(&self, rng: &mut impl Rng, explore_std: f64) -> Trace {
        let probs = self.selection_probs();
        let u: f64 = rng.random();
        let mut k = probs.len() - 1;
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                k = i;
                break;
            }
        }
        let sub = &self.subpolicies[k];
        let mut fired = Vec::with_capacity(sub.ops.len());
        let mut m_samples = Vec::with_capacity(sub.ops.len());
        for op in &sub.ops {
            let fire = rng.random_bool(op.probability());
            fired.push(fire);
            if fire {
                let dist = Normal::new(op.m_logit, explore_std).unwrap();
                m_samples.push(Some(dist.sample(rng)));
            } else {
                m_samples.push(None);
            }
        }
        Trace { subpolicy: k, fired, m_samples }
    }

    /// Apply the ops a trace fired, left to right, to one sample.
    pub fn apply_trace(&self, x: &TimeSeries, trace: &Trace, stream: RngStream) -> Result<TimeSeries> {
        let table = MagnitudeTable::builtin();
        let sub = &self.subpolicies[trace.subpolicy];
        let mut out = x.clone();
        for (j, op) in sub.ops.iter().enumerate() {
            if trace.fired[j] {
                let m = trace.m_samples[j].expect("fired op has a sampled magnitude");
                let level = LEVEL_MAX * sigmoid(m);
                let params = table.params_for_level(op.kind, level)?;
                out = apply(op.kind, &out, &params, stream.derive(j as u64))?;
            }
        }
        Ok(out)
    }

    /// Sample a trace and apply it to `x`.
    ///
    /// Child stream 0 drives the trace draws, child 1 the op applications.
    pub fn sample_and_apply(
        &self,
        x: &TimeSeries,
        stream: RngStream,
        explore_std: f64,
    ) -> Result<(TimeSeries, Trace)> {
        let trace = self.sample_trace(&mut stream.derive(0).rng(), explore_std);
        let out = self.apply_trace(x, &trace, stream.derive(1))?;
        Ok((out, trace))
    }

    /// Log-probability of a trace under the current parameters.
    pub fn trace_log_prob(&self, trace: &Trace, explore_std: f64) -> f64 {
        let probs = self.selection_probs();
        let mut lp = probs[trace.subpolicy].ln();
        let sub = &self.subpolicies[trace.subpolicy];
        for (j, op) in sub.ops.iter().enumerate() {
            let p = op.probability();
            lp += if trace.fired[j] { p.ln() } else { (1.0 - p).ln() };
            if let Some(m) = trace.m_samples[j] {
                let z = (m - op.m_logit) / explore_std;
                lp += -0.5 * z * z
                    - explore_std.ln()
                    - 0.5 * (2.0 * std::f64::consts::PI).ln();
            }
        }
        lp
    }

    /// Gradient of [`trace_log_prob`](Self::trace_log_prob) w.r.t. the
    /// selection logits, application logits, and magnitude logits.
    ///
    /// Selection: `1[i = k] - softmax_i`. Application: `fired - sigmoid(p)`.
    /// Magnitude (fired ops only): `(m_sampled - m_logit) / s^2`.
    pub fn trace_grad(&self, trace: &Trace, explore_std: f64) -> PolicyGrad {
        let mut grad = PolicyGrad::zeros_like(self);
        let probs = self.selection_probs();
        for (i, p) in probs.iter().enumerate() {
            grad.weights[i] = if i == trace.subpolicy { 1.0 - p } else { -p };
        }
        let k = trace.subpolicy;
        let sub = &self.subpolicies[k];
        for (j, op) in sub.ops.iter().enumerate() {
            let fired = trace.fired[j];
            grad.p_logits[k][j] = f64::from(fired) - op.probability();
            if let Some(m) = trace.m_samples[j] {
                grad.m_logits[k][j] = (m - op.m_logit) / (explore_std * explore_std);
            }
        }
        grad
    }

    /// One score-function update from a batch of traces sharing one
    /// advantage: every logit moves by `-lr * advantage * mean(grad log P)`.
    /// A zero advantage leaves the policy untouched.
    pub fn apply_score_step(&mut self, traces: &[Trace], advantage: f64, lr: f64, explore_std: f64) {
        if traces.is_empty() || advantage == 0.0 {
            return;
        }
        let mut mean_grad = PolicyGrad::zeros_like(self);
        let scale = 1.0 / traces.len() as f64;
        for trace in traces {
            let g = self.trace_grad(trace, explore_std);
            mean_grad.add_scaled(&g, scale);
        }
        let step = -lr * advantage;
        for (w, g) in self.weights.iter_mut().zip(&mean_grad.weights) {
            *w += step * g;
        }
        for (sub, (gp, gm)) in self
            .subpolicies
            .iter_mut()
            .zip(mean_grad.p_logits.iter().zip(&mean_grad.m_logits))
        {
            for (op, (dp, dm)) in sub.ops.iter_mut().zip(gp.iter().zip(gm)) {
                op.p_logit += step * dp;
                op.m_logit += step * dm;
            }
        }
    }
}

/// Settings for the joint policy/model optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicySearchConfig {
    /// Constant learning rate for the policy logits.
    pub policy_lr: f64,
    /// EMA decay of the validation-loss baseline.
    pub baseline_decay: f64,
    /// Standard deviation of the magnitude-logit exploration noise.
    pub explore_std: f64,
}

impl Default for PolicySearchConfig {
    fn default() -> Self {
        PolicySearchConfig {
            policy_lr: 0.05,
            baseline_decay: 0.9,
            explore_std: 0.5,
        }
    }
}

/// EMA baseline state carried across policy steps.
#[derive(Debug, Clone, Default)]
pub struct PolicyOptState {
    baseline: Option<f64>,
}

impl PolicyOptState {
    pub fn baseline(&self) -> Option<f64> {
        self.baseline
    }
}

/// Outcome of one joint step.
#[derive(Debug, Clone, Copy)]
pub struct PolicyStepStats {
    pub train_loss: f64,
    pub val_loss: f64,
    pub advantage: f64,
    pub train_correct: usize,
}

// Branches under the per-step stream.
const BRANCH_SAMPLE: u64 = 0;
const BRANCH_DROPOUT: u64 = 1;

/// One joint optimization step.
///
/// The model takes an Adam step on the loss over the policy-augmented train
/// batch; the policy logits take a score-function step scaled by
/// `-(val_loss - baseline)` where the baseline is the EMA of past validation
/// losses (initialized to the first observation, so the first step moves the
/// model but not the policy). A non-finite loss rejects the whole step: model
/// parameters, optimizer moments, batch-norm statistics, the policy, and the
/// baseline are all left unchanged and the error is surfaced.
#[allow(clippy::too_many_arguments)]
pub fn policy_step(
    policy: &mut Policy,
    model: &mut Model,
    adam: &mut Adam,
    train_batch: &[&TimeSeries],
    val_batch: &Batch,
    model_lr: f64,
    cfg: &PolicySearchConfig,
    state: &mut PolicyOptState,
    stream: RngStream,
) -> Result<PolicyStepStats> {
    policy.validate()?;
    if train_batch.is_empty() {
        return Err(Error::InvalidParameter("empty training batch".into()));
    }

    let params_snapshot = model.params();
    let buffers_snapshot = model.buffers();
    let adam_snapshot = adam.state();

    let sample_root = stream.derive(BRANCH_SAMPLE);
    let mut traces = Vec::with_capacity(train_batch.len());
    let mut augmented = Vec::with_capacity(train_batch.len());
    for (i, sample) in train_batch.iter().enumerate() {
        let (out, trace) = policy.sample_and_apply(sample, sample_root.derive(i as u64), cfg.explore_std)?;
        augmented.push(out);
        traces.push(trace);
    }
    let refs: Vec<&TimeSeries> = augmented.iter().collect();
    let mut batch = stack_batch(&refs);
    batch.labels = train_batch.iter().map(|s| s.label().unwrap_or(0)).collect();

    let rollback = |model: &mut Model, adam: &mut Adam| -> Result<()> {
        model.set_params(&params_snapshot)?;
        model.set_buffers(&buffers_snapshot)?;
        adam.restore(adam_snapshot.clone());
        Ok(())
    };

    let (logits, cache) = model.forward_train(&batch.inputs, stream.derive(BRANCH_DROPOUT))?;
    let (train_loss, dlogits) = softmax_cross_entropy(&logits, &batch.labels);
    if !train_loss.is_finite() {
        rollback(model, adam)?;
        return Err(Error::NonFinite("training loss in policy step".into()));
    }
    let grads = model.backward(&cache, &dlogits);
    if grads.iter().any(|g| !g.is_finite()) {
        rollback(model, adam)?;
        return Err(Error::NonFinite("gradient in policy step".into()));
    }
    let train_correct = logits
        .rows()
        .into_iter()
        .zip(&batch.labels)
        .filter(|(row, label)| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best == **label
        })
        .count();

    let mut params = params_snapshot.clone();
    adam.step(&mut params, &grads, model_lr);
    model.set_params(&params)?;

    let val_logits = model.forward_eval(&val_batch.inputs)?;
    let (val_loss, _) = softmax_cross_entropy(&val_logits, &val_batch.labels);
    if !val_loss.is_finite() {
        rollback(model, adam)?;
        return Err(Error::NonFinite("validation loss in policy step".into()));
    }

    let baseline = state.baseline.unwrap_or(val_loss);
    let advantage = val_loss - baseline;
    policy.apply_score_step(&traces, advantage, cfg.policy_lr, cfg.explore_std);
    state.baseline = Some(cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * val_loss);

    Ok(PolicyStepStats {
        train_loss,
        val_loss,
        advantage,
        train_correct,
    })
}

/// Snapshot of one op's learned state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpState {
    pub kind: AugOpKind,
    pub p: f64,
    pub level: f64,
}

/// Per-epoch snapshot of the selection distribution and op states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub probs: Vec<f64>,
    pub ops: Vec<Vec<OpState>>,
}

impl PolicySnapshot {
    fn of(policy: &Policy) -> PolicySnapshot {
        PolicySnapshot {
            probs: policy.selection_probs(),
            ops: policy
                .subpolicies
                .iter()
                .map(|s| {
                    s.ops
                        .iter()
                        .map(|o| OpState {
                            kind: o.kind,
                            p: o.probability(),
                            level: o.level(),
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

/// Selection-probability trajectory over a training run: the snapshot at
/// index 0 is the initial (uniform) state, snapshot `e + 1` follows epoch `e`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PolicyTrajectory {
    pub snapshots: Vec<PolicySnapshot>,
}

impl PolicyTrajectory {
    /// Rows of normalized selection probabilities, one per snapshot; each row
    /// sums to one.
    pub fn probability_matrix(&self) -> Vec<Vec<f64>> {
        self.snapshots.iter().map(|s| s.probs.clone()).collect()
    }
}

/// Per-epoch training report plus the recorded policy trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTrainReport {
    pub report: TrainReport,
    pub trajectory: PolicyTrajectory,
}

// Branches under the search root stream.
const BRANCH_SEARCH_SHUFFLE: u64 = 0;
const BRANCH_SEARCH_STEP: u64 = 1;

/// Jointly train the model and the policy.
///
/// Runs the standard epoch/batch schedule; every training batch takes one
/// [`policy_step`], consuming validation batches cycled in order from
/// `val_set`. Returns the per-epoch report together with the policy
/// trajectory (initial snapshot plus one per epoch).
pub fn train_with_policy(
    model: &mut Model,
    policy: &mut Policy,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    search: &PolicySearchConfig,
) -> Result<PolicyTrainReport> {
    cfg.validate()?;
    policy.validate()?;
    let started = std::time::Instant::now();

    let root = RngStream::new(cfg.seed);
    let shuffle_root = root.derive(BRANCH_SEARCH_SHUFFLE);
    let step_root = root.derive(BRANCH_SEARCH_STEP);

    let val_batches: Vec<Batch> = val_set
        .samples()
        .chunks(cfg.batch_size)
        .map(|chunk| {
            let refs: Vec<&TimeSeries> = chunk.iter().collect();
            let mut b = stack_batch(&refs);
            b.labels = chunk.iter().map(|s| s.label().unwrap_or(0)).collect();
            b
        })
        .collect();

    let mut adam = Adam::new(model.num_params(), cfg.beta1, cfg.beta2, cfg.eps);
    let mut state = PolicyOptState::default();
    let mut trajectory = PolicyTrajectory::default();
    trajectory.snapshots.push(PolicySnapshot::of(policy));

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut val_cursor = 0usize;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng = shuffle_root.derive(epoch as u64).rng();
            order.shuffle(&mut rng);
        }

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<&TimeSeries> = chunk.iter().map(|&i| &train_set.samples()[i]).collect();
            let val_batch = &val_batches[val_cursor % val_batches.len()];
            val_cursor += 1;
            let stats = policy_step(
                policy,
                model,
                &mut adam,
                &samples,
                val_batch,
                lr,
                search,
                &mut state,
                step_root.derive(epoch as u64).derive(batch_idx as u64),
            )?;
            loss_sum += stats.train_loss * samples.len() as f64;
            correct += stats.train_correct;
        }

        epochs.push(EpochRecord {
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            val_acc: crate::model::evaluate(model, val_set)?,
        });
        trajectory.snapshots.push(PolicySnapshot::of(policy));
    }

    let final_train_loss = epochs.last().map(|e| e.train_loss).unwrap_or(f64::NAN);
    Ok(PolicyTrainReport {
        report: crate::model::TrainReport {
            epochs,
            final_train_loss,
            wall_time_secs: started.elapsed().as_secs_f64(),
        },
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn toy_policy() -> Policy {
        Policy {
            subpolicies: vec![
                SubPolicy {
                    ops: vec![SubPolicyOp { kind: AugOpKind::Jitter, p_logit: 0.3, m_logit: -0.2 }],
                },
                SubPolicy {
                    ops: vec![SubPolicyOp { kind: AugOpKind::Scale, p_logit: -0.5, m_logit: 0.4 }],
                },
            ],
            weights: vec![0.2, -0.1],
        }
    }

    #[test]
    fn init_policy_starts_uniform() {
        let p = init_policy(2, 14, &AugOpKind::ALL, RngStream::new(1)).unwrap();
        assert_eq!(p.num_subpolicies(), 14);
        for prob in p.selection_probs() {
            assert!((prob - 1.0 / 14.0).abs() < 1e-12);
        }
        for sub in &p.subpolicies {
            assert_eq!(sub.ops.len(), 2);
            for op in &sub.ops {
                assert!((op.probability() - 0.5).abs() < 1e-12);
                assert!((op.level() - 15.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn init_policy_singleton_weight_is_one() {
        let p = init_policy(1, 1, &[AugOpKind::Rotate], RngStream::new(0)).unwrap();
        assert_eq!(p.selection_probs(), vec![1.0]);
    }

    #[test]
    fn init_policy_is_deterministic() {
        let a = init_policy(2, 6, &AugOpKind::ALL, RngStream::new(9)).unwrap();
        let b = init_policy(2, 6, &AugOpKind::ALL, RngStream::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn suppressed_probabilities_mean_no_ops_fire() {
        let mut policy = toy_policy();
        for sub in &mut policy.subpolicies {
            for op in &mut sub.ops {
                op.p_logit = -40.0;
            }
        }
        let x = TimeSeries::new(
            Array2::from_shape_fn((8, 1), |(i, _)| i as f64),
            Some(0),
        )
        .unwrap();
        for seed in 0..16 {
            let (out, trace) = policy
                .sample_and_apply(&x, RngStream::new(seed), 0.5)
                .unwrap();
            assert!(trace.fired.iter().all(|f| !f));
            assert_eq!(out, x);
        }
    }

    #[test]
    fn forced_rotate_flips_the_sample() {
        let policy = Policy {
            subpolicies: vec![SubPolicy {
                ops: vec![SubPolicyOp { kind: AugOpKind::Rotate, p_logit: 40.0, m_logit: 0.0 }],
            }],
            weights: vec![0.0],
        };
        let x = TimeSeries::new(
            Array2::from_shape_fn((6, 1), |(i, _)| i as f64 + 1.0),
            Some(0),
        )
        .unwrap();
        let (out, trace) = policy.sample_and_apply(&x, RngStream::new(3), 0.5).unwrap();
        assert_eq!(trace.subpolicy, 0);
        assert_eq!(trace.fired, vec![true]);
        for (a, b) in out.values().iter().zip(x.values().iter()) {
            assert_eq!(*a, -b);
        }
    }

    #[test]
    fn selection_frequencies_match_softmax() {
        let policy = toy_policy();
        let probs = policy.selection_probs();
        let mut rng = RngStream::new(123).rng();
        let n = 100_000;
        let mut counts = [0usize; 2];
        for _ in 0..n {
            let t = policy.sample_trace(&mut rng, 0.5);
            counts[t.subpolicy] += 1;
        }
        // Chi-square with 1 degree of freedom; 10.83 is the 0.001 critical value.
        let mut chi2 = 0.0;
        for (c, p) in counts.iter().zip(&probs) {
            let expected = p * n as f64;
            chi2 += (*c as f64 - expected).powi(2) / expected;
        }
        assert!(chi2 < 10.83, "chi2 {chi2} too large; counts {counts:?} probs {probs:?}");
    }

    #[test]
    fn zero_advantage_leaves_policy_unchanged() {
        let mut policy = toy_policy();
        let before = policy.clone();
        let mut rng = RngStream::new(7).rng();
        let traces: Vec<Trace> = (0..32).map(|_| policy.sample_trace(&mut rng, 0.5)).collect();
        policy.apply_score_step(&traces, 0.0, 0.05, 0.5);
        assert_eq!(policy, before);
    }

    #[test]
    fn score_step_moves_against_positive_advantage() {
        // With a positive advantage (worse than baseline), the selected
        // sub-policy's weight must fall relative to the other.
        let mut policy = toy_policy();
        let trace = Trace {
            subpolicy: 0,
            fired: vec![true],
            m_samples: vec![Some(0.1)],
        };
        let before = policy.selection_probs();
        policy.apply_score_step(std::slice::from_ref(&trace), 1.0, 0.1, 0.5);
        let after = policy.selection_probs();
        assert!(after[0] < before[0]);
        assert!(after[1] > before[1]);
    }

    #[test]
    fn trace_log_prob_gradient_matches_finite_differences() {
        let policy = toy_policy();
        let mut rng = RngStream::new(5).rng();
        let explore = 0.5;
        for _ in 0..20 {
            let trace = policy.sample_trace(&mut rng, explore);
            let grad = policy.trace_grad(&trace, explore);
            let h = 1e-6;

            for i in 0..policy.weights.len() {
                let mut plus = policy.clone();
                plus.weights[i] += h;
                let mut minus = policy.clone();
                minus.weights[i] -= h;
                let fd = (plus.trace_log_prob(&trace, explore)
                    - minus.trace_log_prob(&trace, explore))
                    / (2.0 * h);
                let denom = grad.weights[i].abs().max(1.0);
                assert!(
                    ((fd - grad.weights[i]) / denom).abs() < 1e-4,
                    "weight {i}: fd {fd} vs analytic {}",
                    grad.weights[i]
                );
            }
            for k in 0..policy.subpolicies.len() {
                for j in 0..policy.subpolicies[k].ops.len() {
                    let mut plus = policy.clone();
                    plus.subpolicies[k].ops[j].p_logit += h;
                    let mut minus = policy.clone();
                    minus.subpolicies[k].ops[j].p_logit -= h;
                    let fd = (plus.trace_log_prob(&trace, explore)
                        - minus.trace_log_prob(&trace, explore))
                        / (2.0 * h);
                    assert!((fd - grad.p_logits[k][j]).abs() < 1e-4);

                    let mut plus = policy.clone();
                    plus.subpolicies[k].ops[j].m_logit += h;
                    let mut minus = policy.clone();
                    minus.subpolicies[k].ops[j].m_logit -= h;
                    let fd = (plus.trace_log_prob(&trace, explore)
                        - minus.trace_log_prob(&trace, explore))
                        / (2.0 * h);
                    assert!((fd - grad.m_logits[k][j]).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn policy_json_round_trips_and_samples_identically() {
        let policy = init_policy(2, 5, &AugOpKind::ALL, RngStream::new(31)).unwrap();
        let json = serde_json::to_string(&policy).unwrap();
        let reloaded: Policy = serde_json::from_str(&json).unwrap();
        assert_eq!(policy, reloaded);

        let x = TimeSeries::new(
            Array2::from_shape_fn((16, 2), |(i, j)| (i * 2 + j) as f64),
            Some(0),
        )
        .unwrap();
        for seed in 0..8 {
            let a = policy.sample_and_apply(&x, RngStream::new(seed), 0.5).unwrap();
            let b = reloaded.sample_and_apply(&x, RngStream::new(seed), 0.5).unwrap();
            assert_eq!(a.0, b.0);
            assert_eq!(a.1, b.1);
        }
    }
}
