//! SGD training against synthetic embedding-space probes.
//!
//! Classes are Gaussian clusters. The four probe kinds each yield a triplet
//! whose negative differs from the anchor in one controlled way:
//!
//! - recall: positive from the anchor's cluster, negative from another
//! - semantic: negative is the anchor moved onto another cluster's centre
//! - precision: negative carries much more additive noise than the positive
//! - structural: negative has its coordinate blocks permuted

use serde::{Deserialize, Serialize};

use super::losses::{native_loss_and_grad, triplet_loss_and_grad, TripletBatch};
use super::{AdapterError, AdapterParams, Result};
use crate::linalg::{Matrix, Rng};
use crate::metrics::SinkhornConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeKind {
    Recall,
    Semantic,
    Precision,
    Structural,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 4] = [Self::Recall, Self::Semantic, Self::Precision, Self::Structural];

    fn needs_two_clusters(self) -> bool {
        matches!(self, Self::Recall | Self::Semantic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSource {
    /// One cluster centre per row.
    pub centers: Matrix,
    pub cluster_std: f64,
    /// Noise on positives and on the clean side of native batches.
    pub small_noise: f64,
    /// Noise on precision-probe negatives.
    pub large_noise: f64,
    /// Coordinate block width for structural negatives.
    pub block: usize,
    /// Kinds drawn round-robin.
    pub kinds: Vec<ProbeKind>,
}

impl ProbeSource {
    /// `k` clusters with centres drawn from `N(0, separation²/d · I)`.
    pub fn clusters(d: usize, k: usize, separation: f64, cluster_std: f64, rng: &mut Rng) -> Result<Self> {
        let s = separation / (d as f64).sqrt();
        Self::from_centers(Matrix::from_fn(k, d, |_, _| rng.normal() * s), cluster_std)
    }

    /// Two clusters at `±separation/2` along the first axis; recall probes only.
    pub fn two_clusters(d: usize, separation: f64, cluster_std: f64) -> Result<Self> {
        let centers = Matrix::from_fn(2, d, |c, k| match (c, k) {
            (0, 0) => -separation / 2.0,
            (1, 0) => separation / 2.0,
            _ => 0.0,
        });
        let mut src = Self::from_centers(centers, cluster_std)?;
        src.kinds = vec![ProbeKind::Recall];
        Ok(src)
    }

    pub fn from_centers(centers: Matrix, cluster_std: f64) -> Result<Self> {
        if centers.rows() == 0 || centers.cols() == 0 {
            return Err(AdapterError::InvalidConfig("probe source needs at least one centre".into()));
        }
        let d = centers.cols();
        Ok(Self {
            centers,
            cluster_std,
            small_noise: 0.1 * cluster_std,
            large_noise: 2.0 * cluster_std,
            block: (d / 4).max(1),
            kinds: ProbeKind::ALL.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }

    fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(AdapterError::InvalidConfig("no probe kinds enabled".into()));
        }
        if self.centers.rows() < 2 && self.kinds.iter().any(|k| k.needs_two_clusters()) {
            return Err(AdapterError::InvalidConfig("recall and semantic probes need two clusters".into()));
        }
        Ok(())
    }

    fn other_cluster(&self, c: usize, rng: &mut Rng) -> usize {
        let k = self.centers.rows();
        (c + 1 + rng.below(k - 1)) % k
    }

    fn sample(&self, cluster: usize, rng: &mut Rng) -> Vec<f64> {
        self.centers.row(cluster).iter().map(|&m| m + self.cluster_std * rng.normal()).collect()
    }

    fn jitter(&self, z: &[f64], scale: f64, rng: &mut Rng) -> Vec<f64> {
        z.iter().map(|&v| v + scale * rng.normal()).collect()
    }

    fn shuffle_blocks(&self, z: &[f64], rng: &mut Rng) -> Vec<f64> {
        let blocks: Vec<&[f64]> = z.chunks(self.block).collect();
        let mut order: Vec<usize> = (0..blocks.len()).collect();
        if order.len() > 1 {
            // force a non-identity order
            while order.iter().enumerate().all(|(i, &o)| i == o) {
                rng.shuffle(&mut order);
            }
        }
        let mut out = Vec::with_capacity(z.len());
        for &o in &order {
            out.extend_from_slice(blocks[o]);
        }
        // a ragged final block can change the length-preserving layout; keep it stable
        out.truncate(z.len());
        out
    }

    pub fn triplet(&self, kind: ProbeKind, rng: &mut Rng) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let c = rng.below(self.centers.rows());
        let a = self.sample(c, rng);
        match kind {
            ProbeKind::Recall => {
                let p = self.sample(c, rng);
                let other = self.other_cluster(c, rng);
                let n = self.sample(other, rng);
                (a, p, n)
            }
            ProbeKind::Semantic => {
                let p = self.jitter(&a, self.small_noise, rng);
                let other = self.other_cluster(c, rng);
                let n = a
                    .iter()
                    .zip(self.centers.row(c))
                    .zip(self.centers.row(other))
                    .map(|((v, from), to)| v - from + to)
                    .collect();
                (a, p, n)
            }
            ProbeKind::Precision => {
                let p = self.jitter(&a, self.small_noise, rng);
                let n = self.jitter(&a, self.large_noise, rng);
                (a, p, n)
            }
            ProbeKind::Structural => {
                let p = self.jitter(&a, self.small_noise, rng);
                let n = self.shuffle_blocks(&a, rng);
                (a, p, n)
            }
        }
    }

    /// `size` triplets cycling through the enabled kinds.
    pub fn triplet_batch(&self, size: usize, rng: &mut Rng) -> Result<TripletBatch> {
        self.validate()?;
        let d = self.dim();
        let (mut a, mut p, mut n) = (Matrix::zeros(size, d), Matrix::zeros(size, d), Matrix::zeros(size, d));
        for t in 0..size {
            let (ta, tp, tn) = self.triplet(self.kinds[t % self.kinds.len()], rng);
            a.row_mut(t).copy_from_slice(&ta);
            p.row_mut(t).copy_from_slice(&tp);
            n.row_mut(t).copy_from_slice(&tn);
        }
        TripletBatch::new(a, p, n)
    }

    /// Clean reference batch and a lightly jittered copy of a fresh clean draw.
    pub fn native_batches(&self, size: usize, rng: &mut Rng) -> (Matrix, Matrix) {
        let d = self.dim();
        let k = self.centers.rows();
        let mut x = Matrix::zeros(size, d);
        let mut y = Matrix::zeros(size, d);
        for i in 0..size {
            let c = rng.below(k);
            x.row_mut(i).copy_from_slice(&self.sample(c, rng));
        }
        for i in 0..size {
            let c = rng.below(k);
            let clean = self.sample(c, rng);
            y.row_mut(i).copy_from_slice(&self.jitter(&clean, self.small_noise, rng));
        }
        (x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainLoss {
    TripletAgnostic,
    SinkhornNative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub margin: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub seed: u64,
    pub loss: TrainLoss,
    /// Native loss only.
    pub eps_reg: f64,
    /// Size of the fixed held-out batch the per-epoch loss is measured on.
    pub eval_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            margin: 1.0,
            batch_size: 64,
            epochs: 50,
            steps_per_epoch: 8,
            seed: 0,
            loss: TrainLoss::TripletAgnostic,
            eps_reg: 0.05,
            eval_size: 256,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(AdapterError::InvalidConfig(format!("learning rate {}", self.learning_rate)));
        }
        if !(self.margin >= 0.0) {
            return Err(AdapterError::InvalidConfig(format!("margin {}", self.margin)));
        }
        if self.batch_size == 0 || self.eval_size == 0 {
            return Err(AdapterError::InvalidConfig("batch and eval sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: AdapterParams,
    /// Held-out loss before the first step.
    pub initial_loss: f64,
    /// Held-out loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Plain SGD on the batch-mean gradient. Deterministic given `cfg.seed`.
pub fn train_adapter(init: &AdapterParams, probes: &ProbeSource, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    init.validate()?;
    probes.validate()?;
    if probes.dim() != init.dim() {
        return Err(AdapterError::DimensionMismatch {
            expected: init.dim(),
            found: probes.dim(),
        });
    }
    let mut rng = Rng::new(cfg.seed);
    let mut eval_rng = Rng::substream(cfg.seed, u64::MAX);
    let sinkhorn = SinkhornConfig::new(cfg.eps_reg);

    enum Held {
        Triplets(TripletBatch),
        Sets(Matrix, Matrix),
    }
    let held = match cfg.loss {
        TrainLoss::TripletAgnostic => Held::Triplets(probes.triplet_batch(cfg.eval_size, &mut eval_rng)?),
        TrainLoss::SinkhornNative => {
            let (x, y) = probes.native_batches(cfg.eval_size, &mut eval_rng);
            Held::Sets(x, y)
        }
    };
    let evaluate = |p: &AdapterParams| -> Result<f64> {
        Ok(match &held {
            Held::Triplets(b) => triplet_loss_and_grad(p, b, cfg.margin, None)?.0,
            Held::Sets(x, y) => native_loss_and_grad(p, x, y, &sinkhorn, None)?.0,
        })
    };

    let mut params = init.clone();
    let initial_loss = evaluate(&params)?;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        for _ in 0..cfg.steps_per_epoch {
            let (loss, mut grads) = match cfg.loss {
                TrainLoss::TripletAgnostic => {
                    let batch = probes.triplet_batch(cfg.batch_size, &mut rng)?;
                    triplet_loss_and_grad(&params, &batch, cfg.margin, Some(&mut rng))?
                }
                TrainLoss::SinkhornNative => {
                    let (x, y) = probes.native_batches(cfg.batch_size, &mut rng);
                    native_loss_and_grad(&params, &x, &y, &sinkhorn, Some(&mut rng))?
                }
            };
            grads.scale(1.0 / cfg.batch_size as f64);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(AdapterError::DivergedLoss { epoch });
            }
            params.sgd_step(&grads, cfg.learning_rate);
        }
        let loss = evaluate(&params)?;
        if !loss.is_finite() {
            return Err(AdapterError::DivergedLoss { epoch });
        }
        epoch_losses.push(loss);
    }
    Ok(TrainOutcome {
        params,
        initial_loss,
        epoch_losses,
    })
}
