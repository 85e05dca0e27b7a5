//! Adam optimization and the training loop: seeded epoch shuffles, batch
//! loss, per-epoch validation accuracy, confusion-matrix evaluation, and
//! loss-curve CSV export.

use crate::dataset::{DatasetManifest, Label, Split, SyntheticSample};
use crate::imaging::{decode_pgm, resize_bilinear, ImageError};
use crate::models::{build_deep_convnet, build_resnet18, predict, Arch, ModelError, NetworkSpec};
use crate::nn::{softmax_cross_entropy, Mode, Network, NnError, Parameter, Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("{which} split is empty")]
    EmptySplit { which: &'static str },
    #[error("no trainable batches: {n} samples at batch size {batch} (batches under 2 are dropped)")]
    NoBatches { n: usize, batch: usize },
    #[error("{path}: {source}")]
    Image { path: String, source: ImageError },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("optimizer slot {index} holds {expected:?} but was stepped with {found:?}")]
    SlotMismatch {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("optimizer tracks {slots} tensors but was stepped with {params}")]
    SlotCount { slots: usize, params: usize },
    #[error("curves line {line}: {reason}")]
    BadCurves { line: usize, reason: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Class order used across training, evaluation, and checkpoints.
pub const CLASS_NAMES: [&str; 2] = ["Normal", "TB"];

pub fn class_index(label: Label) -> usize {
    match label {
        Label::Normal => 0,
        Label::TB => 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} not positive", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(TrainError::Config(format!("{name} {b} outside [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(TrainError::Config(format!("epsilon {} not positive", self.eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Slot<T> {
    name: String,
    m: Vec<T>,
    v: Vec<T>,
}

/// Adam with bias correction. First- and second-moment slots are keyed by
/// parameter name and created lazily on the first step; the step count
/// starts at zero and is incremented before the update, so step one uses
/// bias corrections `1 - beta^1`. Gradients are zeroed after each step.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    hyper: AdamHyper,
    t: u64,
    slots: Vec<Slot<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(hyper: AdamHyper) -> Result<Self, TrainError> {
        hyper.validate()?;
        Ok(Adam {
            hyper,
            t: 0,
            slots: Vec::new(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut Parameter<T>]) -> Result<(), TrainError> {
        if self.slots.is_empty() && !params.is_empty() {
            self.slots = params
                .iter()
                .map(|p| Slot {
                    name: p.name.clone(),
                    m: vec![T::zero(); p.value.numel()],
                    v: vec![T::zero(); p.value.numel()],
                })
                .collect();
        }
        if self.slots.len() != params.len() {
            return Err(TrainError::SlotCount {
                slots: self.slots.len(),
                params: params.len(),
            });
        }
        self.t += 1;
        let bc1 = T::from_f64(1.0 - self.hyper.beta1.powi(self.t as i32));
        let bc2 = T::from_f64(1.0 - self.hyper.beta2.powi(self.t as i32));
        let b1 = T::from_f64(self.hyper.beta1);
        let b2 = T::from_f64(self.hyper.beta2);
        let lr = T::from_f64(self.hyper.lr);
        let eps = T::from_f64(self.hyper.eps);
        let one = T::one();
        for (index, (slot, p)) in self.slots.iter_mut().zip(params.iter_mut()).enumerate() {
            if slot.name != p.name || slot.m.len() != p.value.numel() {
                return Err(TrainError::SlotMismatch {
                    index,
                    expected: slot.name.clone(),
                    found: p.name.clone(),
                });
            }
            let Parameter { value, grad, .. } = &mut **p;
            let w = value.data_mut();
            let g = grad.data();
            for i in 0..w.len() {
                let gi = g[i];
                slot.m[i] = b1 * slot.m[i] + (one - b1) * gi;
                slot.v[i] = b2 * slot.v[i] + (one - b2) * gi * gi;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                w[i] = w[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            grad.data_mut().fill(T::zero());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hyper: AdamHyper,
    /// Which augmentation case the manifest was built with; echoed into
    /// run summaries, not consulted by the loop itself.
    pub case_id: String,
    pub network: Arch,
    pub resolution: usize,
    pub width_mult: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 50,
            epochs: 10,
            seed: 0,
            hyper: AdamHyper::default(),
            case_id: "original".into(),
            network: Arch::Convnet,
            resolution: 64,
            width_mult: 0.25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 2 {
            return Err(TrainError::Config(format!(
                "batch size {} below the minimum of 2 (batch norm needs multiple samples)",
                self.batch_size
            )));
        }
        if self.epochs < 1 {
            return Err(TrainError::Config("epoch count must be at least 1".into()));
        }
        self.hyper.validate()
    }

    pub fn build_spec(&self) -> Result<NetworkSpec, ModelError> {
        let input = (1, self.resolution, self.resolution);
        match self.network {
            Arch::Convnet => build_deep_convnet(input, CLASS_NAMES.len()),
            Arch::Resnet18 => build_resnet18(input, CLASS_NAMES.len(), self.width_mult),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
}

/// Images decoded, resized, and held in memory as flat `res*res` rows.
#[derive(Debug, Clone)]
pub struct SampleSet {
    res: usize,
    images: Vec<Vec<f32>>,
    labels: Vec<usize>,
    paths: Vec<String>,
}

impl SampleSet {
    pub fn from_parts(
        res: usize,
        images: Vec<Vec<f32>>,
        labels: Vec<usize>,
        paths: Vec<String>,
    ) -> Result<Self, TrainError> {
        if images.len() != labels.len() || images.len() != paths.len() {
            return Err(TrainError::Config(format!(
                "sample set columns disagree: {} images, {} labels, {} paths",
                images.len(),
                labels.len(),
                paths.len()
            )));
        }
        for (img, path) in images.iter().zip(&paths) {
            if img.len() != res * res {
                return Err(TrainError::Config(format!(
                    "{path}: {} values, expected {res}x{res}",
                    img.len()
                )));
            }
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= CLASS_NAMES.len()) {
            return Err(TrainError::Config(format!("label index {bad} out of range")));
        }
        Ok(SampleSet {
            res,
            images,
            labels,
            paths,
        })
    }

    pub fn from_synthetic(samples: &[SyntheticSample], res: usize) -> Result<Self, TrainError> {
        let mut images = Vec::with_capacity(samples.len());
        let mut labels = Vec::with_capacity(samples.len());
        let mut paths = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            let path = format!("synthetic:{i}");
            let img = if (s.image.width(), s.image.height()) == (res, res) {
                s.image.clone()
            } else {
                resize_bilinear(&s.image, res, res).map_err(|source| TrainError::Image {
                    path: path.clone(),
                    source,
                })?
            };
            images.push(img.data().to_vec());
            labels.push(class_index(s.label));
            paths.push(path);
        }
        SampleSet::from_parts(res, images, labels, paths)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn paths(&self) -> &[String] {
        &self.paths
    }

    fn batch(&self, idxs: &[usize]) -> Tensor<f32> {
        let mut data = Vec::with_capacity(idxs.len() * self.res * self.res);
        for &i in idxs {
            data.extend_from_slice(&self.images[i]);
        }
        Tensor::from_vec(&[idxs.len(), 1, self.res, self.res], data)
            .expect("row lengths validated at construction")
    }
}

/// Loads every record of `manifest` assigned to `split`, decoding each PGM
/// and resizing to `res x res`. Relative paths resolve against `root`.
pub fn load_split(
    manifest: &DatasetManifest,
    split: Split,
    res: usize,
    root: &Path,
) -> Result<SampleSet, TrainError> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut paths = Vec::new();
    for rec in manifest.records.iter().filter(|r| r.split == split) {
        let p = Path::new(&rec.path);
        let full = if p.is_absolute() {
            p.to_path_buf()
        } else {
            root.join(p)
        };
        let bytes = std::fs::read(&full).map_err(|source| TrainError::Io {
            path: full.display().to_string(),
            source,
        })?;
        let img = decode_pgm(&bytes).map_err(|source| TrainError::Image {
            path: full.display().to_string(),
            source,
        })?;
        let img = if (img.width(), img.height()) == (res, res) {
            img
        } else {
            resize_bilinear(&img, res, res).map_err(|source| TrainError::Image {
                path: full.display().to_string(),
                source,
            })?
        };
        images.push(img.data().to_vec());
        labels.push(class_index(rec.label));
        paths.push(rec.path.clone());
    }
    SampleSet::from_parts(res, images, labels, paths)
}

pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub network: Network<f32>,
    pub spec: NetworkSpec,
}

/// Runs the full loop: a fresh seeded network, one shuffle per epoch
/// (seeded by `seed + epoch`), Adam updates per batch, and eval-mode
/// validation accuracy after each epoch. Epoch train loss is the
/// sample-weighted mean of batch losses. Trailing batches with fewer than
/// two samples are dropped.
pub fn train(
    config: &TrainConfig,
    train_set: &SampleSet,
    val_set: &SampleSet,
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit { which: "train" });
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySplit { which: "val" });
    }
    for set in [train_set, val_set] {
        if set.res() != config.resolution {
            return Err(TrainError::Config(format!(
                "sample set at {} px but the network expects {}",
                set.res(),
                config.resolution
            )));
        }
    }
    let n = train_set.len();
    if n / config.batch_size == 0 && n % config.batch_size < 2 {
        return Err(TrainError::NoBatches {
            n,
            batch: config.batch_size,
        });
    }

    let spec = config.build_spec()?;
    let mut net = spec.instantiate::<f32>(config.seed)?;
    let mut adam = Adam::new(config.hyper)?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let x = train_set.batch(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let logits = net.forward(&x, Mode::Train)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            net.backward(&grad)?;
            let mut params = net.params_mut();
            adam.step(&mut params)?;
            loss_sum += loss.to_f64() * chunk.len() as f64;
            seen += chunk.len();
        }
        let val = evaluate(&mut net, val_set)?;
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_accuracy: val.accuracy,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainReport {
        records,
        network: net,
        spec,
    })
}

/// Accuracy in percent plus the confusion matrix with TB as the positive
/// class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

pub fn evaluate(net: &mut Network<f32>, set: &SampleSet) -> Result<EvalReport, TrainError> {
    if set.is_empty() {
        return Err(TrainError::EmptySplit { which: "eval" });
    }
    const EVAL_BATCH: usize = 64;
    let idxs: Vec<usize> = (0..set.len()).collect();
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for chunk in idxs.chunks(EVAL_BATCH) {
        let x = set.batch(chunk);
        let logits = net.forward(&x, Mode::Eval)?;
        let preds = predict(&logits)?;
        for (&i, &pred) in chunk.iter().zip(&preds) {
            match (set.labels[i] == 1, pred == 1) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (false, false) => tn += 1,
                (true, false) => fn_ += 1,
            }
        }
    }
    Ok(EvalReport {
        accuracy: 100.0 * (tp + tn) as f64 / set.len() as f64,
        tp,
        fp,
        tn,
        fn_,
    })
}

pub const CURVES_HEADER: &str = "epoch,train_loss,val_accuracy,seconds";

pub fn curves_to_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from(CURVES_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{:.9},{:.9},{:.9}\n",
            r.epoch, r.train_loss, r.val_accuracy, r.seconds
        ));
    }
    out
}

pub fn export_curves(records: &[EpochRecord], path: &Path) -> Result<(), TrainError> {
    if records.is_empty() {
        return Err(TrainError::Config("no epochs to export".into()));
    }
    std::fs::write(path, curves_to_csv(records)).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn curves_from_csv(text: &str) -> Result<Vec<EpochRecord>, TrainError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CURVES_HEADER => {}
        other => {
            return Err(TrainError::BadCurves {
                line: 1,
                reason: format!("bad header {:?}", other.map(|(_, h)| h).unwrap_or("")),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(TrainError::BadCurves {
                line: i + 1,
                reason: format!("{} fields, expected 4", fields.len()),
            });
        }
        let bad = |what: &str| TrainError::BadCurves {
            line: i + 1,
            reason: format!("unparsable {what}"),
        };
        out.push(EpochRecord {
            epoch: fields[0].parse().map_err(|_| bad("epoch"))?,
            train_loss: fields[1].parse().map_err(|_| bad("train_loss"))?,
            val_accuracy: fields[2].parse().map_err(|_| bad("val_accuracy"))?,
            seconds: fields[3].parse().map_err(|_| bad("seconds"))?,
        });
    }
    Ok(out)
}
