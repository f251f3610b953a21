//! Datasets, disjoint-class task splits, single-pass stream batches,
//! synthetic Gaussian class data and replay augmentation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A labeled feature vector with an id that stays stable across copies.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: usize,
}

impl Sample {
    pub fn new(id: u64, features: Vec<f64>, label: usize) -> Self {
        Self { id, features, label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize, split: Split) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::config("dataset needs at least one class"));
        }
        if let Some(s) = samples.iter().find(|s| s.label >= num_classes) {
            return Err(Error::input(format!(
                "sample {} has label {} but the dataset has {num_classes} classes",
                s.id, s.label
            )));
        }
        if let Some(first) = samples.first() {
            let dim = first.features.len();
            if samples.iter().any(|s| s.features.len() != dim) {
                return Err(Error::input("feature dimension is not uniform"));
            }
        }
        Ok(Self {
            samples,
            num_classes,
            split,
        })
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map(|s| s.features.len()).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples whose label is in `classes`, in dataset order.
    pub fn subset(&self, classes: &[usize]) -> Vec<Sample> {
        self.samples
            .iter()
            .filter(|s| classes.contains(&s.label))
            .cloned()
            .collect()
    }
}

/// Class sets of the tasks, in stream order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSplit {
    pub tasks: Vec<Vec<usize>>,
}

impl TaskSplit {
    /// Task `i` receives classes `[i·C/N, (i+1)·C/N)`.
    pub fn in_order(num_classes: usize, num_tasks: usize) -> Result<Self> {
        if num_tasks == 0 || num_classes == 0 || !num_classes.is_multiple_of(num_tasks) {
            return Err(Error::config(format!(
                "{num_classes} classes cannot be split evenly into {num_tasks} tasks"
            )));
        }
        let per = num_classes / num_tasks;
        Ok(Self {
            tasks: (0..num_tasks)
                .map(|i| (i * per..(i + 1) * per).collect())
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task_of(&self, class: usize) -> Option<usize> {
        self.tasks.iter().position(|t| t.contains(&class))
    }
}

pub fn split_tasks(dataset: &Dataset, num_tasks: usize) -> Result<TaskSplit> {
    TaskSplit::in_order(dataset.num_classes, num_tasks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamBatch {
    pub samples: Vec<Sample>,
    pub task_id: usize,
    pub batch_index: usize,
}

/// Cuts one task's samples into single-pass batches after a seeded shuffle.
/// The last batch may be short.
pub fn batches(
    samples: &[Sample],
    task_id: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<StreamBatch>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let mut order: Vec<&Sample> = samples.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .chunks(batch_size)
        .enumerate()
        .map(|(batch_index, chunk)| StreamBatch {
            samples: chunk.iter().map(|s| (*s).clone()).collect(),
            task_id,
            batch_index,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Per-coordinate standard deviation around each class mean.
    pub spread: f64,
    pub seed: u64,
}

/// Isotropic Gaussian classes around random unit-norm means. Train and test
/// samples are independent draws; sample ids are unique across both.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    if spec.num_classes == 0 || spec.dim == 0 || spec.train_per_class == 0 {
        return Err(Error::config("synthetic data needs classes, dimensions and samples"));
    }
    if spec.spread < 0.0 || !spec.spread.is_finite() {
        return Err(Error::config("spread must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect();

    let mut next_id = 0u64;
    let mut draw = |per_class: usize, rng: &mut ChaCha8Rng| -> Vec<Sample> {
        let mut out = Vec::with_capacity(per_class * spec.num_classes);
        for (label, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                let features = mean
                    .iter()
                    .map(|m| {
                        let n: f64 = rng.sample(StandardNormal);
                        m + spec.spread * n
                    })
                    .collect();
                out.push(Sample::new(next_id, features, label));
                next_id += 1;
            }
        }
        out
    };
    let train = draw(spec.train_per_class, &mut rng);
    let test = draw(spec.test_per_class, &mut rng);
    Ok((
        Dataset::new(train, spec.num_classes, Split::Train)?,
        Dataset::new(test, spec.num_classes, Split::Test)?,
    ))
}

/// Augmentation applied to batches retrieved from memory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AugmentKind {
    None,
    /// Square single-channel images: random horizontal flip, then a random
    /// crop after zero-padding by `pad` pixels on every side.
    Image { pad: usize },
    /// Additive Gaussian jitter with standard deviation `sigma`.
    Vector { sigma: f64 },
}

impl AugmentKind {
    pub fn is_none(&self) -> bool {
        matches!(self, AugmentKind::None)
    }
}

fn image_side(len: usize) -> Result<usize> {
    let side = (len as f64).sqrt().round() as usize;
    if side * side != len {
        return Err(Error::config(format!(
            "image augmentation needs square inputs, got length {len}"
        )));
    }
    Ok(side)
}

/// Mirrors a square image left to right.
pub fn hflip(pixels: &[f64]) -> Result<Vec<f64>> {
    let side = image_side(pixels.len())?;
    Ok(pixels
        .chunks(side)
        .flat_map(|row| row.iter().rev().copied())
        .collect())
}

/// Shifts a square image by `(dx, dy)` inside a zero border of width `pad`,
/// which is what cropping the padded image at offset `(pad+dx, pad+dy)` does.
fn shifted_crop(pixels: &[f64], side: usize, dx: isize, dy: isize) -> Vec<f64> {
    let mut out = vec![0.0; pixels.len()];
    for r in 0..side {
        let sr = r as isize + dy;
        if sr < 0 || sr >= side as isize {
            continue;
        }
        for c in 0..side {
            let sc = c as isize + dx;
            if sc >= 0 && sc < side as isize {
                out[r * side + c] = pixels[sr as usize * side + sc as usize];
            }
        }
    }
    out
}

/// Returns an augmented copy of `batch` with the same labels and ids.
pub fn augment<R: Rng + ?Sized>(
    batch: &[Sample],
    kind: AugmentKind,
    rng: &mut R,
) -> Result<Vec<Sample>> {
    match kind {
        AugmentKind::None => Ok(batch.to_vec()),
        AugmentKind::Vector { sigma } => {
            if sigma < 0.0 || !sigma.is_finite() {
                return Err(Error::config("jitter sigma must be non-negative"));
            }
            if sigma == 0.0 {
                return Ok(batch.to_vec());
            }
            let noise = Normal::new(0.0, sigma).map_err(|e| Error::config(e.to_string()))?;
            Ok(batch
                .iter()
                .map(|s| {
                    let features = s.features.iter().map(|x| x + noise.sample(rng)).collect();
                    Sample::new(s.id, features, s.label)
                })
                .collect())
        }
        AugmentKind::Image { pad } => batch
            .iter()
            .map(|s| {
                let side = image_side(s.features.len())?;
                let flipped = if rng.random_bool(0.5) {
                    hflip(&s.features)?
                } else {
                    s.features.clone()
                };
                let p = pad as i64;
                let dx = rng.random_range(-p..=p) as isize;
                let dy = rng.random_range(-p..=p) as isize;
                Ok(Sample::new(
                    s.id,
                    shifted_crop(&flipped, side, dx, dy),
                    s.label,
                ))
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::ce_loss;
    use crate::model::{Gradients, Network, NetworkSpec};

    fn toy(n: usize, label: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample::new(i as u64, vec![i as f64; 4], label))
            .collect()
    }

    #[test]
    fn split_examples() {
        let s = TaskSplit::in_order(10, 5).unwrap();
        assert_eq!(
            s.tasks,
            vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7], vec![8, 9]]
        );
        let s = TaskSplit::in_order(10, 10).unwrap();
        assert_eq!(s.tasks, (0..10).map(|c| vec![c]).collect::<Vec<_>>());
        assert!(matches!(
            TaskSplit::in_order(10, 3),
            Err(Error::InvalidConfig(_))
        ));
        assert_eq!(s.task_of(7), Some(7));
    }

    #[test]
    fn batch_sizes_and_single_pass() {
        let samples = toy(25, 0);
        let b = batches(&samples, 0, 10, 7).unwrap();
        assert_eq!(
            b.iter().map(|x| x.samples.len()).collect::<Vec<_>>(),
            vec![10, 10, 5]
        );
        let mut ids: Vec<u64> = b.iter().flat_map(|x| x.samples.iter().map(|s| s.id)).collect();
        ids.sort();
        assert_eq!(ids, (0..25).collect::<Vec<_>>());
        assert_eq!(b, batches(&samples, 0, 10, 7).unwrap());
        assert_ne!(b, batches(&samples, 0, 10, 8).unwrap());
        assert!(batches(&samples, 0, 0, 7).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(toy(3, 2), 2, Split::Train).is_err());
        let mut mixed = toy(2, 0);
        mixed[1].features.pop();
        assert!(Dataset::new(mixed, 2, Split::Train).is_err());
    }

    #[test]
    fn synthetic_zero_spread_is_the_mean() {
        let spec = SyntheticSpec {
            num_classes: 3,
            dim: 8,
            train_per_class: 5,
            test_per_class: 2,
            spread: 0.0,
            seed: 4,
        };
        let (train, test) = gen_synthetic(&spec).unwrap();
        assert_eq!(train.len(), 15);
        assert_eq!(test.len(), 6);
        for class in 0..3 {
            let members = train.subset(&[class]);
            assert!(members.iter().all(|s| s.features == members[0].features));
            let norm: f64 = members[0].features.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        let mut ids: Vec<u64> = train.samples.iter().chain(&test.samples).map(|s| s.id).collect();
        ids.dedup();
        assert_eq!(ids.len(), 21);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec {
            num_classes: 4,
            dim: 6,
            train_per_class: 10,
            test_per_class: 3,
            spread: 0.2,
            seed: 9,
        };
        assert_eq!(gen_synthetic(&spec).unwrap(), gen_synthetic(&spec).unwrap());
    }

    /// Full-batch softmax regression on the pooled training data.
    #[test]
    fn synthetic_classes_are_learnable_offline() {
        let spec = SyntheticSpec {
            num_classes: 4,
            dim: 16,
            train_per_class: 100,
            test_per_class: 100,
            spread: 0.1,
            seed: 21,
        };
        let (train, test) = gen_synthetic(&spec).unwrap();
        let mut net = Network::init(&NetworkSpec::new(vec![16, 4], 0)).unwrap();
        for _ in 0..200 {
            let mut g = Gradients::zeros_like(&net);
            for s in &train.samples {
                let (z, trace) = net.forward(&s.features).unwrap();
                let out = ce_loss(&z, s.label).unwrap();
                g.add_scaled(&net.backward(&trace, &out.grad_logits).unwrap(), 1.0)
                    .unwrap();
            }
            g.scale(1.0 / train.len() as f64);
            net.sgd_step(&g, 1.0).unwrap();
        }
        let correct = test
            .samples
            .iter()
            .filter(|s| net.predict(&s.features).unwrap() == s.label)
            .count();
        assert!(correct as f64 / test.len() as f64 >= 0.99);
    }

    #[test]
    fn augmentation_kinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = toy(3, 1);
        assert_eq!(augment(&batch, AugmentKind::None, &mut rng).unwrap(), batch);
        assert_eq!(
            augment(&batch, AugmentKind::Vector { sigma: 0.0 }, &mut rng).unwrap(),
            batch
        );
        let jittered = augment(&batch, AugmentKind::Vector { sigma: 0.5 }, &mut rng).unwrap();
        assert_eq!(jittered.len(), batch.len());
        assert!(jittered.iter().zip(&batch).all(|(a, b)| a.label == b.label && a.id == b.id));
        assert_ne!(jittered, batch);

        let odd = vec![Sample::new(0, vec![0.0; 5], 0)];
        assert!(augment(&odd, AugmentKind::Image { pad: 4 }, &mut rng).is_err());
    }

    #[test]
    fn flip_is_an_involution() {
        let img: Vec<f64> = (0..9).map(f64::from).collect();
        let once = hflip(&img).unwrap();
        assert_eq!(once, vec![2.0, 1.0, 0.0, 5.0, 4.0, 3.0, 8.0, 7.0, 6.0]);
        assert_eq!(hflip(&once).unwrap(), img);
    }

    #[test]
    fn image_crop_preserves_shape_and_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img: Vec<f64> = (1..=64).map(f64::from).collect();
        let batch = vec![Sample::new(0, img.clone(), 3)];
        for _ in 0..20 {
            let out = augment(&batch, AugmentKind::Image { pad: 2 }, &mut rng).unwrap();
            assert_eq!(out[0].features.len(), 64);
            assert!(out[0].features.iter().all(|v| *v == 0.0 || img.contains(v)));
        }
        let unchanged = augment(&batch, AugmentKind::Image { pad: 0 }, &mut rng).unwrap();
        let f = &unchanged[0].features;
        assert!(*f == img || *f == hflip(&img).unwrap());
    }
}
