//! Online replay training: AFS, the plain ER baseline, the incremental
//! reference model used for intransigence, and an i.i.d. offline oracle.
//!
//! For every stream batch `B_k` the replay loop retrieves `B_M` from memory,
//! optionally appends an augmented copy of it, takes one SGD step on the mean
//! loss over the union, and only then offers `B_k` to the reservoir. After
//! each task (or every `rv_every` iterations) the review pass fine-tunes on
//! the whole memory for one epoch with the class loss alone.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynmu::{MuSchedule, ScoreHistogram};
use crate::error::{Error, Result};
use crate::losses::{ClassLoss, LossConfig, Objective};
use crate::memory::MemoryBuffer;
use crate::metrics::{bias_diagnostics, AccuracyMatrix, DiagnosticsRecord};
use crate::model::{Gradients, Network, NetworkSpec};
use crate::stream::{augment, batches, AugmentKind, Dataset, Sample, TaskSplit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Stream batch size.
    pub stream_batch: usize,
    /// Replay batch size drawn from memory.
    pub retrieve_batch: usize,
    pub lr: f64,
    /// Learning rate of the review pass.
    pub rv_lr: f64,
    pub rv_batch: usize,
    /// Run the review pass every this many stream iterations instead of at
    /// task boundaries.
    pub rv_every: Option<usize>,
    /// Whether the review pass runs at all.
    pub review: bool,
    pub loss: LossConfig,
    pub augment: AugmentKind,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(loss: LossConfig) -> Self {
        Self {
            stream_batch: 10,
            retrieve_batch: 100,
            lr: 0.1,
            rv_lr: 0.01,
            rv_batch: 10,
            rv_every: None,
            review: true,
            loss,
            augment: AugmentKind::None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stream_batch == 0 || self.retrieve_batch == 0 || self.rv_batch == 0 {
            return Err(Error::config("batch sizes must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be positive"));
        }
        if !(self.rv_lr >= 0.0 && self.rv_lr.is_finite()) {
            return Err(Error::config("rv_lr must be non-negative"));
        }
        if self.rv_every == Some(0) {
            return Err(Error::config("rv_every must be positive"));
        }
        self.loss.validate()
    }
}

/// Training and test samples of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub classes: Vec<usize>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn task_streams(train: &Dataset, test: &Dataset, split: &TaskSplit) -> Vec<TaskData> {
    split
        .tasks
        .iter()
        .map(|classes| TaskData {
            classes: classes.clone(),
            train: train.subset(classes),
            test: test.subset(classes),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub accuracy: AccuracyMatrix,
    /// One snapshot per task from the second task on.
    pub diagnostics: Vec<DiagnosticsRecord>,
    pub wall_time: f64,
    /// Stream samples that contributed to a gradient step (replay excluded).
    pub stream_updates: u64,
    pub review_steps: usize,
}

const SHUFFLE_STREAM: u64 = 0x5354_5245_414d;
const REPLAY_STREAM: u64 = 0x5245_504c_4159;
const AUGMENT_STREAM: u64 = 0x4155_474d;
const REVIEW_STREAM: u64 = 0x5245_5649_4557;

/// Independent RNG seeds derived from the run seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One SGD step on the mean objective over `batch`. Returns the mean loss.
pub fn sgd_on_batch(
    model: &mut Network,
    batch: &[Sample],
    objective: &Objective,
    lr: f64,
) -> Result<f64> {
    sgd_on_batch_with(model, batch, lr, |z, s| objective.evaluate(z, s.label))
}

fn sgd_on_batch_with(
    model: &mut Network,
    batch: &[Sample],
    lr: f64,
    mut loss: impl FnMut(&[f64], &Sample) -> Result<crate::losses::LossOutput>,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut grads = Gradients::zeros_like(model);
    let mut total = 0.0;
    for s in batch {
        let (logits, trace) = model.forward(&s.features)?;
        let out = loss(&logits, s)?;
        total += out.value;
        grads.add_scaled(&model.backward(&trace, &out.grad_logits)?, 1.0)?;
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    model.sgd_step(&grads, lr)?;
    Ok(total / n)
}

/// Fraction of argmax-correct predictions over all classes.
pub fn evaluate(model: &Network, test: &[Sample]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::input("cannot evaluate on an empty test set"));
    }
    let mut correct = 0usize;
    for s in test {
        if model.predict(&s.features)? == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// One epoch over a shuffled copy of the memory in batches of `rv_batch`.
/// Returns the number of SGD steps taken; an empty memory is a no-op.
pub fn review_pass(
    model: &mut Network,
    memory: &MemoryBuffer,
    rv_lr: f64,
    rv_batch: usize,
    objective: &Objective,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    if rv_batch == 0 {
        return Err(Error::config("rv_batch must be positive"));
    }
    if memory.is_empty() {
        return Ok(0);
    }
    let mut order: Vec<&Sample> = memory.slots().iter().collect();
    order.shuffle(rng);
    let mut steps = 0;
    for chunk in order.chunks(rv_batch) {
        let batch: Vec<Sample> = chunk.iter().map(|s| (*s).clone()).collect();
        sgd_on_batch(model, &batch, objective, rv_lr)?;
        steps += 1;
    }
    Ok(steps)
}

fn check_dims(model: &Network, tasks: &[TaskData], config: &TrainConfig) -> Result<()> {
    config.validate()?;
    if tasks.is_empty() {
        return Err(Error::input("no tasks to train on"));
    }
    if model.num_classes() != config.loss.num_classes {
        return Err(Error::config(format!(
            "network has {} outputs but the loss expects {} classes",
            model.num_classes(),
            config.loss.num_classes
        )));
    }
    for (i, t) in tasks.iter().enumerate() {
        if t.test.is_empty() {
            return Err(Error::input(format!("task {i} has an empty test set")));
        }
        if let Some(s) = t.train.iter().chain(&t.test).find(|s| s.features.len() != model.input_dim()) {
            return Err(Error::input(format!(
                "sample {} has dimension {}, network expects {}",
                s.id,
                s.features.len(),
                model.input_dim()
            )));
        }
        if let Some(s) = t.train.iter().chain(&t.test).find(|s| !t.classes.contains(&s.label)) {
            return Err(Error::input(format!(
                "sample {} with label {} does not belong to task {i}",
                s.id, s.label
            )));
        }
    }
    Ok(())
}

/// The replay loop shared by AFS, ER and the ablation variants.
///
/// `objective` is used on `B_k ∪ B_A`; the review pass uses the same class
/// loss without its regularizer. With `AugmentKind::None` no augmented copy
/// is appended, so `B_A = B_M`.
pub fn train_replay(
    model: &mut Network,
    memory: &mut MemoryBuffer,
    tasks: &[TaskData],
    config: &TrainConfig,
    objective: &Objective,
) -> Result<RunRecord> {
    check_dims(model, tasks, config)?;
    if objective.config.num_classes != model.num_classes() {
        return Err(Error::config("objective and network disagree on the class count"));
    }
    let start = Instant::now();
    let review_objective = objective.without_regularizer();
    let mut replay_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, REPLAY_STREAM, 0));
    let mut augment_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, AUGMENT_STREAM, 0));
    let mut review_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, REVIEW_STREAM, 0));

    let mut accuracy = AccuracyMatrix::new(tasks.len());
    let mut diagnostics = Vec::new();
    let mut stream_updates = 0u64;
    let mut review_steps = 0usize;
    let mut iteration = 0usize;

    for (task_id, task) in tasks.iter().enumerate() {
        let stream = batches(
            &task.train,
            task_id,
            config.stream_batch,
            derive_seed(config.seed, SHUFFLE_STREAM, task_id as u64),
        )?;
        for b in &stream {
            let replay = memory.random_retrieve(config.retrieve_batch, &mut replay_rng);
            let mut joint = b.samples.clone();
            if !replay.is_empty() && !config.augment.is_none() {
                let augmented = augment(&replay, config.augment, &mut augment_rng)?;
                joint.extend(replay);
                joint.extend(augmented);
            } else {
                joint.extend(replay);
            }
            sgd_on_batch(model, &joint, objective, config.lr)?;
            stream_updates += b.samples.len() as u64;
            memory.reservoir_update(&b.samples, &mut replay_rng);

            iteration += 1;
            if config.review && config.rv_every.is_some_and(|n| iteration.is_multiple_of(n)) {
                review_steps += review_pass(
                    model,
                    memory,
                    config.rv_lr,
                    config.rv_batch,
                    &review_objective,
                    &mut review_rng,
                )?;
            }
        }
        if config.review && config.rv_every.is_none() {
            review_steps += review_pass(
                model,
                memory,
                config.rv_lr,
                config.rv_batch,
                &review_objective,
                &mut review_rng,
            )?;
        }
        for (j, seen) in tasks.iter().enumerate().take(task_id + 1) {
            accuracy.set(task_id, j, evaluate(model, &seen.test)?)?;
        }
        if task_id > 0 {
            diagnostics.push(task_diagnostics(model, tasks, task_id)?);
        }
    }

    Ok(RunRecord {
        accuracy,
        diagnostics,
        wall_time: start.elapsed().as_secs_f64(),
        stream_updates,
        review_steps,
    })
}

/// Bias snapshot after `task_id`: old classes are those of earlier tasks,
/// logits are pooled over the training samples of every task seen so far and
/// the difficulty counts cover the current task's training samples.
pub fn task_diagnostics(
    model: &Network,
    tasks: &[TaskData],
    task_id: usize,
) -> Result<DiagnosticsRecord> {
    let old: Vec<usize> = tasks[..task_id]
        .iter()
        .flat_map(|t| t.classes.iter().copied())
        .collect();
    let seen: Vec<Sample> = tasks[..=task_id]
        .iter()
        .flat_map(|t| t.train.iter().cloned())
        .collect();
    bias_diagnostics(model, &seen, &old, &tasks[task_id].classes, task_id)
}

/// Revised focal loss plus virtual distillation, with augmentation and
/// review as configured.
pub fn train_afs(
    model: &mut Network,
    memory: &mut MemoryBuffer,
    tasks: &[TaskData],
    config: &TrainConfig,
) -> Result<RunRecord> {
    train_replay(model, memory, tasks, config, &Objective::afs(config.loss))
}

/// Experience replay with cross-entropy, no augmentation and no review.
pub fn train_er_baseline(
    model: &mut Network,
    memory: &mut MemoryBuffer,
    tasks: &[TaskData],
    config: &TrainConfig,
) -> Result<RunRecord> {
    let er = TrainConfig {
        augment: AugmentKind::None,
        review: false,
        ..config.clone()
    };
    train_replay(model, memory, tasks, &er, &Objective::cross_entropy(config.loss))
}

/// Accuracy `a*_j` of a memory-free model fine-tuned task by task with
/// cross-entropy, measured on task `j` right after training it.
pub fn train_reference(
    spec: &NetworkSpec,
    tasks: &[TaskData],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    let mut model = Network::init(spec)?;
    check_dims(&model, tasks, config)?;
    let objective = Objective::cross_entropy(config.loss);
    let mut out = Vec::with_capacity(tasks.len());
    for (task_id, task) in tasks.iter().enumerate() {
        let stream = batches(
            &task.train,
            task_id,
            config.stream_batch,
            derive_seed(config.seed, SHUFFLE_STREAM, task_id as u64),
        )?;
        for b in &stream {
            sgd_on_batch(&mut model, &b.samples, &objective, config.lr)?;
        }
        out.push(evaluate(&model, &task.test)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineResult {
    /// Accuracy on every task's test set after training.
    pub per_task: Vec<f64>,
    pub average: f64,
    /// Per-class revised-focal centers after the last epoch, when a dynamic
    /// schedule was used.
    pub final_mu: Option<Vec<f64>>,
}

/// Multi-epoch i.i.d. training on the pooled data of all tasks, the upper
/// bound for online training. With `dynamic_mu = Some(b)` and a revised
/// focal objective, each class's center is re-estimated after every epoch
/// from a histogram of its target scores (all zero in the first epoch).
pub fn train_offline(
    model: &mut Network,
    tasks: &[TaskData],
    config: &TrainConfig,
    objective: &Objective,
    epochs: usize,
    dynamic_mu: Option<f64>,
) -> Result<OfflineResult> {
    check_dims(model, tasks, config)?;
    if dynamic_mu.is_some() && objective.class_loss != ClassLoss::Revised {
        return Err(Error::config("a dynamic center needs the revised focal loss"));
    }
    let pooled: Vec<Sample> = tasks.iter().flat_map(|t| t.train.iter().cloned()).collect();
    let classes = model.num_classes();
    let mut schedule = MuSchedule::new(classes);
    let mut hist = match dynamic_mu {
        Some(b) => Some(ScoreHistogram::new(classes, b)?),
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SHUFFLE_STREAM, u64::MAX));
    let mut order: Vec<&Sample> = pooled.iter().collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.stream_batch) {
            let batch: Vec<Sample> = chunk.iter().map(|s| (*s).clone()).collect();
            sgd_on_batch_with(model, &batch, config.lr, |z, s| {
                let out = match hist {
                    Some(_) => objective.evaluate_with_mu(z, s.label, schedule.get(s.label))?,
                    None => objective.evaluate(z, s.label)?,
                };
                if let Some(h) = hist.as_mut() {
                    h.record_scores(s.label, &[out.p_target.clamp(0.0, 1.0)])?;
                }
                Ok(out)
            })?;
        }
        if let Some(h) = hist.as_mut() {
            schedule.update(h)?;
            h.reset_epoch();
        }
    }
    let per_task = tasks
        .iter()
        .map(|t| evaluate(model, &t.test))
        .collect::<Result<Vec<_>>>()?;
    let average = per_task.iter().sum::<f64>() / per_task.len() as f64;
    Ok(OfflineResult {
        per_task,
        average,
        final_mu: hist.map(|_| schedule.mu),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{gen_synthetic, SyntheticSpec};

    fn toy_tasks(num_tasks: usize, per_class: usize, seed: u64) -> Vec<TaskData> {
        let spec = SyntheticSpec {
            num_classes: 2 * num_tasks,
            dim: 6,
            train_per_class: per_class,
            test_per_class: 10,
            spread: 0.2,
            seed,
        };
        let (train, test) = gen_synthetic(&spec).unwrap();
        let split = TaskSplit::in_order(2 * num_tasks, num_tasks).unwrap();
        task_streams(&train, &test, &split)
    }

    fn config(classes: usize) -> TrainConfig {
        TrainConfig::new(LossConfig::new(classes))
    }

    #[test]
    fn evaluate_examples() {
        let net = Network::from_layers(vec![crate::model::Layer::zeros(2, 2)]).unwrap();
        let test = vec![
            Sample::new(0, vec![1.0, 0.0], 0),
            Sample::new(1, vec![0.0, 1.0], 1),
        ];
        assert_eq!(evaluate(&net, &test).unwrap(), 0.5);
        let mut id = crate::model::Layer::zeros(2, 2);
        id.weights = vec![1.0, 0.0, 0.0, 1.0];
        let lookup = Network::from_layers(vec![id]).unwrap();
        assert_eq!(evaluate(&lookup, &test).unwrap(), 1.0);
        let reversed: Vec<Sample> = test.iter().rev().cloned().collect();
        assert_eq!(evaluate(&lookup, &reversed).unwrap(), 1.0);
        assert!(evaluate(&lookup, &[]).is_err());
    }

    #[test]
    fn review_pass_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Network::init(&NetworkSpec::new(vec![6, 8, 4], 1)).unwrap();
        let obj = Objective::new(ClassLoss::Revised, crate::losses::Regularizer::None, LossConfig::new(4));
        let empty = MemoryBuffer::new(50).unwrap();
        let before = net.clone();
        assert_eq!(review_pass(&mut net, &empty, 0.01, 10, &obj, &mut rng).unwrap(), 0);
        assert_eq!(net, before);

        let tasks = toy_tasks(2, 10, 3);
        let mut memory = MemoryBuffer::new(50).unwrap();
        let all: Vec<Sample> = tasks.iter().flat_map(|t| t.train.clone()).collect();
        memory.reservoir_update(&all, &mut rng);
        assert_eq!(memory.len(), 40);
        let snapshot = memory.clone();

        assert_eq!(review_pass(&mut net, &memory, 0.0, 10, &obj, &mut rng).unwrap(), 4);
        assert_eq!(net, before);

        let mut twenty = MemoryBuffer::new(20).unwrap();
        twenty.reservoir_update(&all[..20], &mut rng);
        assert_eq!(review_pass(&mut net, &twenty, 0.01, 10, &obj, &mut rng).unwrap(), 2);
        assert_ne!(net, before);
        assert_eq!(memory, snapshot);
    }

    #[test]
    fn one_task_with_large_memory_stores_everything() {
        let tasks = toy_tasks(1, 15, 5);
        let mut cfg = config(2);
        cfg.seed = 3;
        let mut net = Network::init(&NetworkSpec::new(vec![6, 8, 2], 3)).unwrap();
        let mut memory = MemoryBuffer::new(100).unwrap();
        let rec = train_afs(&mut net, &mut memory, &tasks, &cfg).unwrap();
        assert_eq!(memory.len(), 30);
        assert_eq!(memory.seen(), 30);
        let mut ids: Vec<u64> = memory.slots().iter().map(|s| s.id).collect();
        ids.sort();
        let mut expect: Vec<u64> = tasks[0].train.iter().map(|s| s.id).collect();
        expect.sort();
        assert_eq!(ids, expect);
        assert_eq!(rec.stream_updates, 30);
        assert!(rec.diagnostics.is_empty());
        assert!(rec.accuracy.get(0, 0).is_some());
    }

    #[test]
    fn each_stream_sample_is_used_once() {
        let tasks = toy_tasks(3, 12, 8);
        let cfg = config(6);
        let mut net = Network::init(&NetworkSpec::new(vec![6, 8, 6], 0)).unwrap();
        let mut memory = MemoryBuffer::new(10).unwrap();
        let rec = train_afs(&mut net, &mut memory, &tasks, &cfg).unwrap();
        let total: usize = tasks.iter().map(|t| t.train.len()).sum();
        assert_eq!(rec.stream_updates, total as u64);
        assert_eq!(memory.seen(), total as u64);
        assert_eq!(rec.diagnostics.len(), 2);
        // three reviews of a full 10-slot memory, one step each
        assert_eq!(rec.review_steps, 3);
    }

    #[test]
    fn runs_are_deterministic() {
        let tasks = toy_tasks(2, 20, 1);
        let mut cfg = config(4);
        cfg.augment = AugmentKind::Vector { sigma: 0.1 };
        cfg.seed = 17;
        let run = || {
            let mut net = Network::init(&NetworkSpec::new(vec![6, 8, 4], 17)).unwrap();
            let mut memory = MemoryBuffer::new(15).unwrap();
            let rec = train_afs(&mut net, &mut memory, &tasks, &cfg).unwrap();
            (net, rec.accuracy, rec.diagnostics)
        };
        assert_eq!(run(), run());
        let er = || {
            let mut net = Network::init(&NetworkSpec::new(vec![6, 8, 4], 17)).unwrap();
            let mut memory = MemoryBuffer::new(15).unwrap();
            train_er_baseline(&mut net, &mut memory, &tasks, &cfg).unwrap().accuracy
        };
        assert_eq!(er(), er());
    }

    /// ER is AFS with the weight flattened to 1 (α=1, σ huge), β=0, no
    /// augmentation and no review.
    #[test]
    fn er_matches_afs_with_components_disabled() {
        let tasks = toy_tasks(2, 20, 4);
        let mut cfg = config(4);
        cfg.seed = 9;
        let mut flat = cfg.clone();
        flat.loss.alpha = 1.0;
        flat.loss.sigma = 1e300;
        flat.loss.beta = 0.0;
        flat.review = false;
        flat.augment = AugmentKind::None;

        let spec = NetworkSpec::new(vec![6, 8, 4], 9);
        let mut a = Network::init(&spec).unwrap();
        let mut ma = MemoryBuffer::new(25).unwrap();
        let ra = train_afs(&mut a, &mut ma, &tasks, &flat).unwrap();
        let mut b = Network::init(&spec).unwrap();
        let mut mb = MemoryBuffer::new(25).unwrap();
        let rb = train_er_baseline(&mut b, &mut mb, &tasks, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.accuracy, rb.accuracy);
        assert_eq!(ma, mb);
    }

    /// Two stream batches on a 2→2 linear model, with the revised focal
    /// gradient taken by finite differences of its scalar formula and the
    /// update applied by hand.
    #[test]
    fn afs_without_extras_matches_hand_stepped_rfl() {
        let samples = vec![
            Sample::new(0, vec![0.5, -1.0], 0),
            Sample::new(1, vec![1.5, 0.2], 1),
            Sample::new(2, vec![-0.3, 0.8], 0),
            Sample::new(3, vec![0.9, 0.9], 1),
        ];
        let tasks = vec![TaskData {
            classes: vec![0, 1],
            train: samples.clone(),
            test: samples.clone(),
        }];
        let mut cfg = config(2);
        cfg.stream_batch = 2;
        cfg.loss.beta = 0.0;
        cfg.review = false;
        cfg.seed = 5;

        let spec = NetworkSpec::new(vec![2, 2], 5);
        let mut net = Network::init(&spec).unwrap();
        let mut memory = MemoryBuffer::new(10).unwrap();
        train_afs(&mut net, &mut memory, &tasks, &cfg).unwrap();

        // replicate the stream order
        let order = batches(&samples, 0, 2, derive_seed(5, SHUFFLE_STREAM, 0)).unwrap();
        let (alpha, mu, sigma) = (0.25, 0.3, 0.5);
        let rfl_value = |z: &[f64], t: usize| {
            let m = z[0].max(z[1]);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let p = e[t] / (e[0] + e[1]);
            -alpha * (-(p - mu) * (p - mu) / sigma).exp() * p.ln()
        };
        let init = Network::init(&spec).unwrap();
        let mut w = init.layers[0].weights.clone();
        let mut b = init.layers[0].bias.clone();
        let mut seen: Vec<Sample> = Vec::new();
        for batch in &order {
            let mut joint = batch.samples.clone();
            joint.extend(seen.iter().cloned());
            let mut gw = [0.0; 4];
            let mut gb = [0.0; 2];
            for s in &joint {
                let z = [
                    w[0] * s.features[0] + w[1] * s.features[1] + b[0],
                    w[2] * s.features[0] + w[3] * s.features[1] + b[1],
                ];
                for k in 0..2 {
                    let h = 1e-6;
                    let mut up = z;
                    up[k] += h;
                    let mut down = z;
                    down[k] -= h;
                    let dz = (rfl_value(&up, s.label) - rfl_value(&down, s.label)) / (2.0 * h);
                    gw[2 * k] += dz * s.features[0];
                    gw[2 * k + 1] += dz * s.features[1];
                    gb[k] += dz;
                }
            }
            let n = joint.len() as f64;
            for i in 0..4 {
                w[i] -= 0.1 * gw[i] / n;
            }
            for k in 0..2 {
                b[k] -= 0.1 * gb[k] / n;
            }
            seen.extend(batch.samples.iter().cloned());
        }
        for (x, y) in net.layers[0].weights.iter().zip(&w) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
        for (x, y) in net.layers[0].bias.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn reference_accuracies() {
        let tasks = toy_tasks(3, 20, 2);
        let cfg = config(6);
        let spec = NetworkSpec::new(vec![6, 8, 6], 2);
        let a = train_reference(&spec, &tasks, &cfg).unwrap();
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|x| (0.0..=1.0).contains(x)));
        assert_eq!(a, train_reference(&spec, &tasks, &cfg).unwrap());

        // with one task the reference is plain single-pass CE training
        let single = &tasks[..1];
        let a1 = train_reference(&spec, single, &cfg).unwrap();
        let mut net = Network::init(&spec).unwrap();
        let obj = Objective::cross_entropy(cfg.loss);
        for b in batches(&single[0].train, 0, 10, derive_seed(0, SHUFFLE_STREAM, 0)).unwrap() {
            sgd_on_batch(&mut net, &b.samples, &obj, 0.1).unwrap();
        }
        assert_eq!(a1, vec![evaluate(&net, &single[0].test).unwrap()]);
    }

    #[test]
    fn boundary_free_review_fires_on_schedule() {
        let tasks = toy_tasks(2, 20, 6);
        let mut cfg = config(4);
        cfg.rv_every = Some(3);
        cfg.rv_batch = 100;
        let mut net = Network::init(&NetworkSpec::new(vec![6, 8, 4], 0)).unwrap();
        let mut memory = MemoryBuffer::new(200).unwrap();
        let rec = train_afs(&mut net, &mut memory, &tasks, &cfg).unwrap();
        // 8 stream iterations -> reviews after iterations 3 and 6
        assert_eq!(rec.review_steps, 2);
    }

    #[test]
    fn rejects_mismatched_dimensions() {
        let tasks = toy_tasks(1, 5, 0);
        let cfg = config(2);
        let mut net = Network::init(&NetworkSpec::new(vec![5, 2], 0)).unwrap();
        let mut memory = MemoryBuffer::new(5).unwrap();
        assert!(train_afs(&mut net, &mut memory, &tasks, &cfg).is_err());
        let mut wide = Network::init(&NetworkSpec::new(vec![6, 3], 0)).unwrap();
        assert!(train_afs(&mut wide, &mut memory, &tasks, &cfg).is_err());
    }

    #[test]
    fn offline_dynamic_mu_moves_centers() {
        let tasks = toy_tasks(2, 30, 11);
        let cfg = config(4);
        let obj = Objective::new(ClassLoss::Revised, crate::losses::Regularizer::None, cfg.loss);
        let mut net = Network::init(&NetworkSpec::new(vec![6, 8, 4], 0)).unwrap();
        let out = train_offline(&mut net, &tasks, &cfg, &obj, 60, Some(0.25)).unwrap();
        let mu = out.final_mu.clone().unwrap();
        assert_eq!(mu.len(), 4);
        assert!(mu.iter().all(|&m| m > 0.3));
        assert!(out.average > 0.8, "{out:?}");

        let ce = Objective::cross_entropy(cfg.loss);
        assert!(train_offline(&mut net, &tasks, &cfg, &ce, 1, Some(0.25)).is_err());
    }
}
