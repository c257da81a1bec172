use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{contaminated_count, HarnessError, Result};
use crate::linalg::{sym_eigen, Rng};
use crate::metrics::{
    exact_ot, fad, fit_moments, kad, sinkhorn_divergence_with, CostPower, EmbeddingSet, GaussianMoments,
    KadConfig, SinkhornConfig,
};

/// Amplitude of rank-1 outliers in units of the leading standard deviation.
pub const RANK_ONE_AMPLITUDE: f64 = 5.0;
/// Full-rank response used to self-normalise every metric.
pub const REFERENCE_EPSILON: f64 = 0.20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ContaminationKind {
    FullRankGaussian,
    RankOneDirac,
    /// Dirac at `c₀·σ_max` along the leading direction.
    TheoremOne(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub kind: ContaminationKind,
    pub epsilon: f64,
    /// Full-rank only; `None` means the root-mean eigenvalue of the base.
    pub noise_scale: Option<f64>,
}

impl ContaminationSpec {
    pub fn new(kind: ContaminationKind, epsilon: f64) -> Self {
        Self {
            kind,
            epsilon,
            noise_scale: None,
        }
    }

    pub fn with_noise_scale(mut self, scale: f64) -> Self {
        self.noise_scale = Some(scale);
        self
    }
}

/// Empirical mean and principal axes of a base set.
#[derive(Debug, Clone)]
pub struct BasePca {
    pub moments: GaussianMoments,
    pub leading_value: f64,
    pub leading_vector: Vec<f64>,
    pub mean_eigenvalue: f64,
}

impl BasePca {
    pub fn fit(base: &EmbeddingSet) -> Result<Self> {
        let moments = fit_moments(base)?;
        let eig = sym_eigen(&moments.cov)?;
        Ok(Self {
            leading_value: eig.eigenvalues[0],
            leading_vector: eig.vector(0),
            mean_eigenvalue: moments.cov.trace() / base.dim() as f64,
            moments,
        })
    }

    fn dirac(&self, amplitude: f64) -> Vec<f64> {
        let s = amplitude * self.leading_value.sqrt();
        self.moments
            .mean
            .iter()
            .zip(&self.leading_vector)
            .map(|(m, v)| m + s * v)
            .collect()
    }

    /// Replaces `⌈εn⌉` randomly chosen rows; returns the new set and the mask
    /// of replaced rows.
    pub fn contaminate(
        &self,
        base: &EmbeddingSet,
        spec: &ContaminationSpec,
        rng: &mut Rng,
    ) -> Result<(EmbeddingSet, Vec<bool>)> {
        let n = base.len();
        let k = contaminated_count(spec.epsilon, n)?;
        let mut rows = rng.choose_indices(n, k);
        rows.sort_unstable();
        let mut pts = base.points().clone();
        let mut mask = vec![false; n];
        match spec.kind {
            ContaminationKind::RankOneDirac | ContaminationKind::TheoremOne(_) => {
                let amplitude = match spec.kind {
                    ContaminationKind::TheoremOne(c0) => c0,
                    _ => RANK_ONE_AMPLITUDE,
                };
                let o = self.dirac(amplitude);
                for &i in &rows {
                    pts.row_mut(i).copy_from_slice(&o);
                }
            }
            ContaminationKind::FullRankGaussian => {
                let scale = spec.noise_scale.unwrap_or_else(|| self.mean_eigenvalue.sqrt());
                for &i in &rows {
                    for (x, m) in pts.row_mut(i).iter_mut().zip(&self.moments.mean) {
                        *x = m + scale * rng.normal();
                    }
                }
            }
        }
        for &i in &rows {
            mask[i] = true;
        }
        Ok((base.map_points(pts)?, mask))
    }
}

pub fn contaminate(base: &EmbeddingSet, spec: &ContaminationSpec, rng: &mut Rng) -> Result<(EmbeddingSet, Vec<bool>)> {
    BasePca::fit(base)?.contaminate(base, spec, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    Fad,
    Kad,
    Sinkhorn,
    ExactOt,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [Self::Fad, Self::Kad, Self::Sinkhorn, Self::ExactOt];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fad => "fad",
            Self::Kad => "kad",
            Self::Sinkhorn => "sinkhorn",
            Self::ExactOt => "exact_ot",
        }
    }

    /// Raw metric between a reference set and an evaluation set.
    pub fn evaluate(self, reference: &EmbeddingSet, eval: &EmbeddingSet, eps_reg: f64) -> Result<f64> {
        Ok(match self {
            Self::Fad => fad(&fit_moments(reference)?, &fit_moments(eval)?)?,
            Self::Kad => kad(reference, eval, &KadConfig::default())?,
            Self::Sinkhorn => sinkhorn_divergence_with(reference, eval, &SinkhornConfig::new(eps_reg))?.divergence,
            Self::ExactOt => exact_ot(reference, eval, CostPower::Squared)?.total_cost,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rank1Config {
    pub eps_grid: Vec<f64>,
    pub eps_reg: f64,
    pub metrics: Vec<MetricKind>,
    /// Full-rank noise scale; `None` uses the base's root-mean eigenvalue.
    pub noise_scale: Option<f64>,
}

impl Rank1Config {
    pub fn new(eps_grid: Vec<f64>, eps_reg: f64) -> Self {
        Self {
            eps_grid,
            eps_reg,
            metrics: MetricKind::ALL.to_vec(),
            noise_scale: None,
        }
    }
}

/// Raw responses of one metric at one contamination rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub metric: MetricKind,
    pub epsilon: f64,
    pub rank_one: f64,
    pub full_rank: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rank1Row {
    pub metric: MetricKind,
    pub epsilon: f64,
    pub raw_rank_one: f64,
    pub raw_full_rank: f64,
    /// Rank-1 response over the same metric's full-rank response at ε = 0.20.
    pub normalised_rank_one: f64,
    pub normalised_full_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rank1Table {
    pub rows: Vec<Rank1Row>,
    /// `(ε, log₁₀(Sinkhorn/FAD))` of the normalised rank-1 responses, when
    /// both metrics were run.
    pub log_sinkhorn_over_fad: Vec<(f64, f64)>,
}

impl Rank1Table {
    pub fn get(&self, metric: MetricKind, epsilon: f64) -> Option<&Rank1Row> {
        self.rows.iter().find(|r| r.metric == metric && r.epsilon == epsilon)
    }
}

/// Divides each metric's responses by its own full-rank response at
/// [`REFERENCE_EPSILON`], which must be among the raw rows.
pub fn self_normalise(raw: &[RawResponse]) -> Result<Rank1Table> {
    let mut rows = Vec::with_capacity(raw.len());
    for r in raw {
        let reference = raw
            .iter()
            .find(|q| q.metric == r.metric && q.epsilon == REFERENCE_EPSILON)
            .ok_or_else(|| HarnessError::InvalidParameter(format!("no ε = 0.20 response for {}", r.metric.name())))?
            .full_rank;
        rows.push(Rank1Row {
            metric: r.metric,
            epsilon: r.epsilon,
            raw_rank_one: r.rank_one,
            raw_full_rank: r.full_rank,
            normalised_rank_one: r.rank_one / reference,
            normalised_full_rank: r.full_rank / reference,
        });
    }
    let mut log_ratio = Vec::new();
    for s in rows.iter().filter(|r| r.metric == MetricKind::Sinkhorn) {
        if let Some(f) = rows.iter().find(|r| r.metric == MetricKind::Fad && r.epsilon == s.epsilon) {
            log_ratio.push((s.epsilon, (s.normalised_rank_one / f.normalised_rank_one).log10()));
        }
    }
    Ok(Rank1Table {
        rows,
        log_sinkhorn_over_fad: log_ratio,
    })
}

/// Raw rank-1 and full-rank responses of each metric against the clean base,
/// over the grid plus ε = 0.20. A zero rate compares the base with itself.
pub fn rank1_responses(base: &EmbeddingSet, cfg: &Rank1Config, rng: &mut Rng) -> Result<Vec<RawResponse>> {
    if base.len() < 100 {
        return Err(HarnessError::InvalidParameter(format!("base has {} rows, need 100", base.len())));
    }
    let pca = BasePca::fit(base)?;
    let mut grid = cfg.eps_grid.clone();
    if !grid.contains(&REFERENCE_EPSILON) {
        grid.push(REFERENCE_EPSILON);
    }
    // contaminated sets are drawn sequentially so the stream order is fixed
    let mut sets = Vec::with_capacity(grid.len());
    for &eps in &grid {
        if eps == 0.0 {
            sets.push((eps, base.clone(), base.clone()));
            continue;
        }
        let (r1, _) = pca.contaminate(base, &ContaminationSpec::new(ContaminationKind::RankOneDirac, eps), rng)?;
        let full = ContaminationSpec {
            noise_scale: cfg.noise_scale,
            ..ContaminationSpec::new(ContaminationKind::FullRankGaussian, eps)
        };
        let (fr, _) = pca.contaminate(base, &full, rng)?;
        sets.push((eps, r1, fr));
    }
    let cells: Vec<(MetricKind, usize)> = cfg
        .metrics
        .iter()
        .flat_map(|&m| (0..sets.len()).map(move |g| (m, g)))
        .collect();
    cells
        .par_iter()
        .map(|&(metric, g)| {
            let (eps, r1, fr) = &sets[g];
            Ok(RawResponse {
                metric,
                epsilon: *eps,
                rank_one: metric.evaluate(base, r1, cfg.eps_reg)?,
                full_rank: metric.evaluate(base, fr, cfg.eps_reg)?,
            })
        })
        .collect()
}

pub fn rank1_sensitivity(base: &EmbeddingSet, cfg: &Rank1Config, rng: &mut Rng) -> Result<Rank1Table> {
    self_normalise(&rank1_responses(base, cfg, rng)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::SpectrumSpec;
    use crate::linalg::dot;

    fn base(n: usize, d: usize, seed: u64) -> EmbeddingSet {
        EmbeddingSet::new(SpectrumSpec::flat(d, 1.0).sample(n, &mut Rng::new(seed)).unwrap()).unwrap()
    }

    #[test]
    fn counts_and_dirac_rows() {
        let b = base(200, 6, 1);
        let spec = ContaminationSpec::new(ContaminationKind::RankOneDirac, 0.05);
        let (c, mask) = contaminate(&b, &spec, &mut Rng::new(2)).unwrap();
        let hit: Vec<usize> = (0..200).filter(|&i| mask[i]).collect();
        assert_eq!(hit.len(), 10);
        for &i in &hit {
            assert_eq!(c.row(i), c.row(hit[0]));
        }
        for i in (0..200).filter(|&i| !mask[i]) {
            assert_eq!(c.row(i), b.row(i));
        }
        assert!(matches!(
            contaminate(&b, &ContaminationSpec::new(ContaminationKind::RankOneDirac, 0.0), &mut Rng::new(2)),
            Err(HarnessError::EpsilonTooSmall { .. })
        ));
    }

    #[test]
    fn dirac_sits_five_deviations_out() {
        let b = base(500, 5, 3);
        let pca = BasePca::fit(&b).unwrap();
        let spec = ContaminationSpec::new(ContaminationKind::RankOneDirac, 0.1);
        let (c, mask) = pca.contaminate(&b, &spec, &mut Rng::new(4)).unwrap();
        let i = mask.iter().position(|&m| m).unwrap();
        let shift: Vec<f64> = c.row(i).iter().zip(&pca.moments.mean).map(|(x, m)| x - m).collect();
        let along = dot(&shift, &pca.leading_vector);
        assert!((along - 5.0 * pca.leading_value.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn full_rank_rows_are_distinct_and_scaled() {
        let b = base(400, 8, 5);
        let spec = ContaminationSpec::new(ContaminationKind::FullRankGaussian, 0.5).with_noise_scale(3.0);
        let (c, mask) = contaminate(&b, &spec, &mut Rng::new(6)).unwrap();
        let hit: Vec<usize> = (0..400).filter(|&i| mask[i]).collect();
        assert_ne!(c.row(hit[0]), c.row(hit[1]));
        let var: f64 = hit.iter().map(|&i| c.row(i).iter().map(|x| x * x).sum::<f64>()).sum::<f64>()
            / (hit.len() * 8) as f64;
        assert!((var - 9.0).abs() < 1.0, "{var}");
    }

    #[test]
    fn normalisation_ignores_metric_scale() {
        let raw = vec![
            RawResponse { metric: MetricKind::Fad, epsilon: 0.05, rank_one: 0.3, full_rank: 0.1 },
            RawResponse { metric: MetricKind::Fad, epsilon: 0.2, rank_one: 0.9, full_rank: 2.0 },
            RawResponse { metric: MetricKind::Sinkhorn, epsilon: 0.05, rank_one: 7.0, full_rank: 1.0 },
            RawResponse { metric: MetricKind::Sinkhorn, epsilon: 0.2, rank_one: 30.0, full_rank: 10.0 },
        ];
        let t = self_normalise(&raw).unwrap();
        for k in [1e-3, 7.0, 1e6] {
            let scaled: Vec<RawResponse> = raw
                .iter()
                .map(|r| match r.metric {
                    MetricKind::Sinkhorn => RawResponse { rank_one: r.rank_one * k, full_rank: r.full_rank * k, ..*r },
                    _ => *r,
                })
                .collect();
            let s = self_normalise(&scaled).unwrap();
            for (a, b) in t.rows.iter().zip(&s.rows) {
                assert!((a.normalised_rank_one - b.normalised_rank_one).abs() <= 1e-15 * a.normalised_rank_one.abs());
                assert!((a.normalised_full_rank - b.normalised_full_rank).abs() <= 1e-15 * a.normalised_full_rank.abs());
            }
        }
        let r1 = t.get(MetricKind::Sinkhorn, 0.05).unwrap().normalised_rank_one;
        assert!((r1 - 0.7).abs() < 1e-15);
        let (_, lr) = t.log_sinkhorn_over_fad[0];
        assert!((lr - (0.7f64 / 0.15).log10()).abs() < 1e-12);
    }

    #[test]
    fn clean_row_is_zero() {
        let b = base(100, 4, 7);
        let cfg = Rank1Config::new(vec![0.0], 0.05);
        let raw = rank1_responses(&b, &cfg, &mut Rng::new(8)).unwrap();
        for r in raw.iter().filter(|r| r.epsilon == 0.0) {
            assert!(r.rank_one.abs() < 1e-9 && r.full_rank.abs() < 1e-9, "{r:?}");
        }
        assert_eq!(raw.len(), 8);
    }
}
