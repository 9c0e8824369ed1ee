//! Experimental protocol: stratified split, mini-batch training with Adam,
//! evaluation, the repeated-trial harness and online prediction.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, FeatureConfig, MssiImage, Signal, CNN_SIDE};
use crate::nn::{softmax, AdamConfig, AdamState, Architecture, CnnModel, Mode, Tensor};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub images: Vec<MssiImage>,
    pub class_names: Vec<String>,
}

impl LabeledDataset {
    /// Every image must carry a label below the class count.
    pub fn new(images: Vec<MssiImage>, class_names: Vec<String>) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::Dataset(format!("need at least 2 classes, got {}", class_names.len())));
        }
        for (i, img) in images.iter().enumerate() {
            match img.label {
                Some(l) if (l as usize) < class_names.len() => {}
                Some(l) => {
                    return Err(Error::Dataset(format!(
                        "image {i} has label {l} but only {} classes",
                        class_names.len()
                    )))
                }
                None => return Err(Error::Dataset(format!("image {i} is unlabeled"))),
            }
        }
        Ok(Self { images, class_names })
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.images.iter().map(|m| m.label.expect("validated") as usize).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for l in self.labels() {
            counts[l] += 1;
        }
        counts
    }

    pub fn require_every_class(&self) -> Result<()> {
        if let Some(c) = self.class_counts().iter().position(|&n| n == 0) {
            return Err(Error::Dataset(format!("class '{}' has no images", self.class_names[c])));
        }
        Ok(())
    }

    fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub split_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 10,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            dropout: 0.5,
            split_ratio: 0.7,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(format!("split ratio must lie in (0,1), got {}", self.split_ratio));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0,1), got {}", self.dropout));
        }
        let lr_ok = self.learning_rate.is_finite() && self.learning_rate > 0.0;
        let wd_ok = self.weight_decay.is_finite() && self.weight_decay >= 0.0;
        if !lr_ok || !wd_ok {
            return bad("learning rate must be positive and weight decay non-negative".into());
        }
        Ok(())
    }
}

/// Per class, `floor(ratio·n_c)` shuffled indices go to train and the rest to
/// test. Returns `(train, test)` index lists in class-then-shuffle order.
pub fn split_indices(labels: &[usize], classes: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must lie in (0,1), got {ratio}")));
    }
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class.get_mut(l).ok_or(Error::LabelOutOfRange { label: l, classes })?.push(i);
    }
    let mut rng = rng_for(seed, "split");
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (c, mut members) in by_class.into_iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::Dataset(format!("class {c} has {} item(s); splitting needs at least 2", members.len())));
        }
        members.shuffle(&mut rng);
        let n_train = ((ratio * members.len() as f64).floor() as usize).min(members.len() - 1);
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    Ok((train, test))
}

pub fn split_dataset(ds: &LabeledDataset, ratio: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, test) = split_indices(&ds.labels(), ds.classes(), ratio, seed)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// 128×128×1 network input for an image.
pub fn network_input(img: &MssiImage) -> Tensor<f32> {
    let data = img.upscale().into_iter().map(|v| v as f32).collect();
    Tensor::from_vec(&[CNN_SIDE, CNN_SIDE, 1], data).expect("upscale yields 128x128")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Running accuracy of train-mode predictions over the epoch.
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

/// Trains a fresh network. When `monitor` is given its eval-mode accuracy is
/// recorded after every epoch; it never influences training.
pub fn train(
    ds_train: &LabeledDataset,
    cfg: &TrainConfig,
    monitor: Option<&LabeledDataset>,
) -> Result<(CnnModel<f32>, Vec<EpochStats>)> {
    cfg.validate()?;
    if ds_train.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let mut init_rng = rng_for(cfg.seed, "init");
    let mut shuffle_rng = rng_for(cfg.seed, "shuffle");
    let mut dropout_rng = rng_for(cfg.seed, "dropout");

    let mut model = CnnModel::<f32>::new(Architecture::standard(ds_train.classes()), &mut init_rng)?;
    model.dropout_rate = cfg.dropout;
    let adam = AdamConfig { learning_rate: cfg.learning_rate, ..AdamConfig::default() };
    let mut state = AdamState::new(adam, model.params());

    let inputs: Vec<Tensor<f32>> = ds_train.images.par_iter().map(network_input).collect();
    let labels = ds_train.labels();
    let monitor_inputs: Option<Vec<Tensor<f32>>> = monitor.map(|m| m.images.par_iter().map(network_input).collect());

    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<&Tensor<f32>> = batch.iter().map(|&i| &inputs[i]).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let out = model.batch_gradients(&xs, &ys, cfg.weight_decay, Mode::Train, &mut dropout_rng)?;
            if !out.loss.is_finite() {
                return Err(Error::Config(format!("training diverged at epoch {epoch}: loss {}", out.loss)));
            }
            loss_sum += out.loss * batch.len() as f64;
            correct += out.predictions.iter().zip(&ys).filter(|(p, y)| p == y).count();
            model.apply_adam(&out.grads, &mut state)?;
        }
        let test_accuracy = match (&monitor_inputs, monitor) {
            (Some(xs), Some(m)) => Some(accuracy_of(&model, xs, &m.labels())?),
            _ => None,
        };
        history.push(EpochStats {
            epoch,
            mean_loss: loss_sum / inputs.len() as f64,
            train_accuracy: correct as f64 / inputs.len() as f64,
            test_accuracy,
        });
    }
    Ok((model, history))
}

fn predictions(model: &CnnModel<f32>, inputs: &[Tensor<f32>]) -> Result<Vec<usize>> {
    inputs.par_iter().map(|x| model.predict_class(x)).collect()
}

fn accuracy_of(model: &CnnModel<f32>, inputs: &[Tensor<f32>], labels: &[usize]) -> Result<f64> {
    let preds = predictions(model, inputs)?;
    Ok(preds.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

/// Eval-mode accuracy and confusion matrix; prediction is the arg-max
/// logit, lowest index on ties.
pub fn evaluate(model: &CnnModel<f32>, ds_test: &LabeledDataset) -> Result<Evaluation> {
    if model.classes() != ds_test.classes() {
        return Err(Error::Dataset(format!(
            "model predicts {} classes but dataset has {}",
            model.classes(),
            ds_test.classes()
        )));
    }
    let inputs: Vec<Tensor<f32>> = ds_test.images.par_iter().map(network_input).collect();
    let preds = predictions(model, &inputs)?;
    let c = ds_test.classes();
    let mut confusion = vec![vec![0u64; c]; c];
    for (&y, &p) in ds_test.labels().iter().zip(&preds) {
        confusion[y][p] += 1;
    }
    Ok(Evaluation { accuracy: confusion_accuracy(&confusion), confusion, class_names: ds_test.class_names.clone() })
}

pub fn confusion_accuracy(confusion: &[Vec<u64>]) -> f64 {
    let total: u64 = confusion.iter().flatten().sum();
    let trace: u64 = confusion.iter().enumerate().map(|(i, row)| row[i]).sum();
    if total == 0 {
        0.0
    } else {
        trace as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    #[serde(rename = "per_trial")]
    pub per_trial_accuracy: Vec<f64>,
    #[serde(rename = "mean")]
    pub mean_accuracy: f64,
    /// Population standard deviation of the per-trial accuracies.
    #[serde(rename = "std")]
    pub std_deviation: f64,
    /// Confusion counts pooled over all trials.
    #[serde(rename = "confusion")]
    pub confusion_matrix: Vec<Vec<u64>>,
    pub per_class_accuracy: Vec<f64>,
    pub class_names: Vec<String>,
}

impl TrialReport {
    pub fn from_trials(evals: &[Evaluation], class_names: Vec<String>) -> Self {
        let per_trial: Vec<f64> = evals.iter().map(|e| e.accuracy).collect();
        let n = per_trial.len().max(1) as f64;
        let mean = per_trial.iter().sum::<f64>() / n;
        let var = per_trial.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        let c = class_names.len();
        let mut pooled = vec![vec![0u64; c]; c];
        for e in evals {
            for (row, erow) in pooled.iter_mut().zip(&e.confusion) {
                for (x, y) in row.iter_mut().zip(erow) {
                    *x += y;
                }
            }
        }
        let per_class = pooled
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let total: u64 = row.iter().sum();
                if total == 0 {
                    0.0
                } else {
                    row[i] as f64 / total as f64
                }
            })
            .collect();
        Self {
            per_trial_accuracy: per_trial,
            mean_accuracy: mean,
            std_deviation: var.sqrt(),
            confusion_matrix: pooled,
            per_class_accuracy: per_class,
            class_names,
        }
    }
}

/// One split/train/evaluate cycle using `seed` for every random choice.
pub fn run_trial(ds: &LabeledDataset, cfg: &TrainConfig, seed: u64) -> Result<Evaluation> {
    let cfg = TrainConfig { seed, ..*cfg };
    let (train_set, test_set) = split_dataset(ds, cfg.split_ratio, seed)?;
    let (model, _) = train(&train_set, &cfg, None)?;
    evaluate(&model, &test_set)
}

/// Runs one trial per seed (in parallel when threads allow) and aggregates
/// them in seed order.
pub fn run_trials_with_seeds(ds: &LabeledDataset, cfg: &TrainConfig, seeds: &[u64]) -> Result<TrialReport> {
    if seeds.is_empty() {
        return Err(Error::Config("need at least one trial".into()));
    }
    cfg.validate()?;
    ds.require_every_class()?;
    let evals: Vec<Evaluation> = seeds.par_iter().map(|&s| run_trial(ds, cfg, s)).collect::<Result<_>>()?;
    Ok(TrialReport::from_trials(&evals, ds.class_names.clone()))
}

/// Trial `i` uses seed `cfg.seed + i` for both its split and its training.
pub fn run_trials(ds: &LabeledDataset, cfg: &TrainConfig, n_trials: usize) -> Result<TrialReport> {
    let seeds: Vec<u64> = (0..n_trials as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    run_trials_with_seeds(ds, cfg, &seeds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPrediction {
    pub segment: usize,
    pub class: usize,
    pub probabilities: Vec<f64>,
}

/// Online diagnosis: featurizes every segment of `signal` and classifies it.
pub fn predict(model: &CnnModel<f32>, signal: &Signal, cfg: &FeatureConfig) -> Result<Vec<SegmentPrediction>> {
    signal.validate()?;
    let segments = features::segment_signal(signal, cfg.seg_len)?;
    segments
        .par_iter()
        .enumerate()
        .map(|(i, seg)| {
            let img = features::build_mssi(seg, cfg)?;
            let probabilities = softmax(&model.logits(&network_input(&img))?);
            let class = crate::nn::argmax(&probabilities);
            Ok(SegmentPrediction { segment: i, class, probabilities })
        })
        .collect()
}

/// Most frequent predicted class, lowest index on ties.
pub fn majority_class(preds: &[SegmentPrediction], classes: usize) -> Option<usize> {
    if preds.is_empty() {
        return None;
    }
    let mut votes = vec![0usize; classes];
    for p in preds {
        votes[p.class] += 1;
    }
    Some(crate::nn::argmax(&votes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::MSSI_LEN;

    fn image(label: u32, fill: f64) -> MssiImage {
        MssiImage::new(vec![fill; MSSI_LEN], Some(label)).unwrap()
    }

    fn dataset(classes: usize, per_class: usize) -> LabeledDataset {
        let images = (0..classes * per_class)
            .map(|i| image((i / per_class) as u32, (i as f64 / (classes * per_class) as f64).min(1.0)))
            .collect();
        LabeledDataset::new(images, (0..classes).map(|c| format!("C{c}")).collect()).unwrap()
    }

    #[test]
    fn split_matches_table_counts() {
        let ds = dataset(10, 60);
        let (tr, te) = split_indices(&ds.labels(), 10, 0.7, 3).unwrap();
        assert_eq!(tr.len(), 420);
        assert_eq!(te.len(), 180);
        let (a, b) = split_dataset(&ds, 0.7, 3).unwrap();
        assert!(a.class_counts().iter().all(|&n| n == 42));
        assert!(b.class_counts().iter().all(|&n| n == 18));

        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..600).collect::<Vec<_>>());
    }

    #[test]
    fn split_small_and_deterministic() {
        let ds = dataset(3, 2);
        let (tr, te) = split_indices(&ds.labels(), 3, 0.5, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (3, 3));
        assert_eq!(split_indices(&ds.labels(), 3, 0.5, 9).unwrap(), split_indices(&ds.labels(), 3, 0.5, 9).unwrap());
        assert!(split_indices(&ds.labels(), 3, 1.0, 1).is_err());
        assert!(split_indices(&[0, 0, 1], 2, 0.5, 1).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(LabeledDataset::new(vec![image(2, 0.0)], vec!["a".into(), "b".into()]).is_err());
        assert!(LabeledDataset::new(vec![], vec!["a".into()]).is_err());
        let unl = MssiImage::new(vec![0.0; MSSI_LEN], None).unwrap();
        assert!(LabeledDataset::new(vec![unl], vec!["a".into(), "b".into()]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { split_ratio: 1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn constant_predictor_scores_one_over_c() {
        let ds = dataset(4, 5);
        let mut rng = <crate::nn::NnRng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = CnnModel::<f32>::new(Architecture::standard(4), &mut rng).unwrap();
        model.fc2_weights.data_mut().iter_mut().for_each(|v| *v = 0.0);
        model.fc2_bias.data_mut()[0] = 1.0;
        let e = evaluate(&model, &ds).unwrap();
        assert!((e.accuracy - 0.25).abs() < 1e-12);
        assert!((confusion_accuracy(&e.confusion) - e.accuracy).abs() < 1e-15);
        assert!(e.confusion.iter().all(|row| row[0] == 5));

        let wrong = dataset(3, 2);
        assert!(evaluate(&model, &wrong).is_err());
    }

    #[test]
    fn report_statistics() {
        let mk = |acc_hits: u64| Evaluation {
            accuracy: acc_hits as f64 / 4.0,
            confusion: vec![
                vec![acc_hits.min(2), 2 - acc_hits.min(2)],
                vec![2 - (acc_hits - acc_hits.min(2)), acc_hits - acc_hits.min(2)],
            ],
            class_names: vec!["a".into(), "b".into()],
        };
        let r = TrialReport::from_trials(&[mk(4), mk(4)], vec!["a".into(), "b".into()]);
        assert_eq!(r.std_deviation, 0.0);
        assert_eq!(r.mean_accuracy, 1.0);
        let r = TrialReport::from_trials(&[mk(4), mk(2)], vec!["a".into(), "b".into()]);
        assert!((r.mean_accuracy - 0.75).abs() < 1e-12);
        assert!((r.std_deviation - 0.25).abs() < 1e-12);
        assert_eq!(r.confusion_matrix, vec![vec![4, 0], vec![2, 2]]);
        assert_eq!(r.per_class_accuracy, vec![1.0, 0.5]);
        let json = serde_json::to_value(&r).unwrap();
        for key in ["per_trial", "mean", "std", "confusion", "class_names"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
