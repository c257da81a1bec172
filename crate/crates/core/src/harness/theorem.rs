//! Rank-1 Dirac contamination of a centred Gaussian: exact moments, the
//! closed-form Fréchet value, and Monte Carlo checks of the upper bound on
//! FAD against the lower bound on empirical W₂².

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spectrum::SpectrumSpec;
use super::{contaminated_count, ContaminationKind, ContaminationSpec, HarnessError, Result};
use crate::linalg::{sq_dist, Matrix, Rng};
use crate::metrics::{exact_ot, CostPower, EmbeddingSet, GaussianMoments};

/// Constant of the lower bound `W₂² ≥ c₁·ε·T`.
pub const LOWER_BOUND_CONSTANT: f64 = 0.25;

fn check_eps_c0(epsilon: f64, c0: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(HarnessError::InvalidParameter(format!("epsilon {epsilon} outside (0,1)")));
    }
    if !(c0 >= 1.0 && c0.is_finite()) {
        return Err(HarnessError::InvalidParameter(format!("c0 {c0} below 1")));
    }
    Ok(())
}

/// Moments of `(1−ε)·N(0,Σ) + ε·δ_o` with `o = c₀σ_max·v₁`.
pub fn contaminated_moments(spectrum: &SpectrumSpec, spec: &ContaminationSpec) -> Result<GaussianMoments> {
    let ContaminationKind::TheoremOne(c0) = spec.kind else {
        return Err(HarnessError::WrongKind);
    };
    let eps = spec.epsilon;
    if !(0.0..1.0).contains(&eps) {
        return Err(HarnessError::InvalidParameter(format!("epsilon {eps} outside [0,1)")));
    }
    let lambda = spectrum.eigenvalues()?;
    let (top, smax2) = spectrum.leading()?;
    let l2 = c0 * c0 * smax2;
    let mut mean = vec![0.0; spectrum.d];
    mean[top] = eps * l2.sqrt();
    let mut cov = Matrix::from_diagonal(&lambda.iter().map(|v| (1.0 - eps) * v).collect::<Vec<_>>());
    cov[(top, top)] += eps * (1.0 - eps) * l2;
    Ok(GaussianMoments::new(mean, cov)?)
}

/// Fréchet distance between `N(0,Σ)` and the Gaussian fit of the contaminated
/// mixture, in closed form. Differences of square roots are rationalised so
/// small `ε` does not cancel.
pub fn fad_rank1_closed_form(spectrum: &SpectrumSpec, epsilon: f64, c0: f64) -> Result<f64> {
    if epsilon == 0.0 {
        return Ok(0.0);
    }
    check_eps_c0(epsilon, c0)?;
    let t = spectrum.trace()?;
    let (_, s1sq) = spectrum.leading()?;
    let s1 = s1sq.sqrt();
    let l2 = c0 * c0 * s1sq;
    let eps_p = epsilon * (1.0 - epsilon);
    let top_var = (1.0 - epsilon) * s1sq + eps_p * l2;
    let lead = (epsilon * s1sq - eps_p * l2) / (s1 + top_var.sqrt());
    let shrink = epsilon / (1.0 + (1.0 - epsilon).sqrt());
    Ok(epsilon * epsilon * l2 + lead * lead + shrink * shrink * (t - s1sq))
}

/// `ε²((2 + c₀²)L² + T/2)`.
pub fn fad_upper_bound(spectrum: &SpectrumSpec, epsilon: f64, c0: f64) -> Result<f64> {
    let t = spectrum.trace()?;
    let l2 = c0 * c0 * spectrum.leading()?.1;
    Ok(epsilon * epsilon * ((2.0 + c0 * c0) * l2 + 0.5 * t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremOneConfig {
    pub spectrum: SpectrumSpec,
    pub epsilon: f64,
    pub c0: f64,
    pub n: usize,
    pub seeds: usize,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremOneReport {
    pub fad_value: f64,
    pub fad_upper_bound: f64,
    /// Mean exact W₂² over seeds.
    pub w2_empirical: f64,
    pub w2_lower_bound: f64,
    pub bound_i_holds: bool,
    /// Whether the empirical frequency reaches the guaranteed ½.
    pub bound_ii_holds: bool,
    pub bound_ii_frequency: f64,
    /// `fad_value / w2_empirical`.
    pub ratio: f64,
    pub r_eff: f64,
    /// Seeds where the exact cost fell below the order-statistic bound.
    pub order_statistic_violations: usize,
    /// Per-seed exact W₂², in seed order.
    pub w2_samples: Vec<f64>,
}

/// One Monte Carlo draw: exact W₂² between `P_n` and `Q_n`, and the
/// order-statistic lower bound `(1/n)·Σ_{k ≤ ⌈εn⌉} D_(k)`.
pub fn theorem1_draw(cfg: &TheoremOneConfig, rng: &mut Rng) -> Result<(f64, f64)> {
    let n = cfg.n;
    let k = contaminated_count(cfg.epsilon, n)?;
    let (top, smax2) = cfg.spectrum.leading()?;
    let mut o = vec![0.0; cfg.spectrum.d];
    o[top] = cfg.c0 * smax2.sqrt();

    let p = cfg.spectrum.sample(n, rng)?;
    let fresh = cfg.spectrum.sample(n - k, rng)?;
    let q = Matrix::from_fn(n, cfg.spectrum.d, |i, j| if i < k { o[j] } else { fresh[(i - k, j)] });

    let mut dist: Vec<f64> = p.row_iter().map(|x| sq_dist(x, &o)).collect();
    dist.sort_by(f64::total_cmp);
    let order_bound = dist[..k].iter().sum::<f64>() / n as f64;

    let plan = exact_ot(&EmbeddingSet::new(p)?, &EmbeddingSet::new(q)?, CostPower::Squared)?;
    Ok((plan.total_cost, order_bound))
}

pub fn check_theorem1(cfg: &TheoremOneConfig) -> Result<TheoremOneReport> {
    check_eps_c0(cfg.epsilon, cfg.c0)?;
    if cfg.epsilon > 0.5 {
        return Err(HarnessError::InvalidParameter(format!("epsilon {} above 1/2", cfg.epsilon)));
    }
    if cfg.seeds == 0 {
        return Err(HarnessError::InvalidParameter("zero seeds".into()));
    }
    contaminated_count(cfg.epsilon, cfg.n)?;
    let t = cfg.spectrum.trace()?;
    let fad_value = fad_rank1_closed_form(&cfg.spectrum, cfg.epsilon, cfg.c0)?;
    let upper = fad_upper_bound(&cfg.spectrum, cfg.epsilon, cfg.c0)?;
    let lower = LOWER_BOUND_CONSTANT * cfg.epsilon * t;

    let draws: Vec<(f64, f64)> = (0..cfg.seeds as u64)
        .into_par_iter()
        .map(|s| theorem1_draw(cfg, &mut Rng::substream(cfg.base_seed, s)))
        .collect::<Result<_>>()?;

    let hits = draws.iter().filter(|(w, _)| *w >= lower).count();
    let violations = draws
        .iter()
        .filter(|(w, b)| *w < b - 1e-9 * b.max(1.0))
        .count();
    let w2_samples: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let w2_mean = w2_samples.iter().sum::<f64>() / cfg.seeds as f64;
    let frequency = hits as f64 / cfg.seeds as f64;
    Ok(TheoremOneReport {
        fad_value,
        fad_upper_bound: upper,
        w2_empirical: w2_mean,
        w2_lower_bound: lower,
        bound_i_holds: fad_value <= upper,
        bound_ii_holds: frequency >= 0.5,
        bound_ii_frequency: frequency,
        ratio: fad_value / w2_mean,
        r_eff: cfg.spectrum.effective_rank()?,
        order_statistic_violations: violations,
        w2_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{fad, fit_population_moments};

    fn theorem_spec(eps: f64, c0: f64) -> ContaminationSpec {
        ContaminationSpec::new(ContaminationKind::TheoremOne(c0), eps)
    }

    #[test]
    fn mixture_moments_by_hand() {
        let m = contaminated_moments(&SpectrumSpec::flat(2, 1.0), &theorem_spec(0.5, 3.0)).unwrap();
        assert_eq!(m.mean, vec![1.5, 0.0]);
        assert!((m.cov[(0, 0)] - 2.75).abs() < 1e-15);
        assert!((m.cov[(1, 1)] - 0.5).abs() < 1e-15);
        assert_eq!(m.cov[(0, 1)], 0.0);
        let clean = contaminated_moments(&SpectrumSpec::flat(3, 2.0), &theorem_spec(0.0, 3.0)).unwrap();
        assert_eq!(clean.mean, vec![0.0; 3]);
        assert_eq!(clean.cov, Matrix::from_diagonal(&[2.0; 3]));
        let wrong = ContaminationSpec::new(ContaminationKind::RankOneDirac, 0.1);
        assert!(matches!(
            contaminated_moments(&SpectrumSpec::flat(2, 1.0), &wrong),
            Err(HarnessError::WrongKind)
        ));
    }

    #[test]
    fn mixture_moments_match_samples() {
        let spectrum = SpectrumSpec::flat(2, 1.0);
        let m = contaminated_moments(&spectrum, &theorem_spec(0.5, 3.0)).unwrap();
        let n = 100_000;
        let mut rng = Rng::new(11);
        let mut mixed = spectrum.sample(n, &mut rng).unwrap();
        let mut coin = Rng::new(12);
        for i in 0..n {
            if coin.uniform() < 0.5 {
                mixed.row_mut(i).copy_from_slice(&[3.0, 0.0]);
            }
        }
        let emp = fit_population_moments(&EmbeddingSet::new(mixed).unwrap());
        // standard errors: mean ≤ √(2.75/n), variance ≤ √(Var((x−μ)²)/n)
        let se_mean = (2.75 / n as f64).sqrt();
        assert!((emp.mean[0] - m.mean[0]).abs() < 3.0 * se_mean);
        assert!((emp.mean[1] - m.mean[1]).abs() < 3.0 * se_mean);
        // fourth central moment of the first coordinate is 13.3125; of the second 1.5
        let se_v0 = ((13.3125 - 2.75 * 2.75) / n as f64).sqrt();
        let se_v1 = ((1.5 - 0.25) / n as f64).sqrt();
        assert!((emp.cov[(0, 0)] - m.cov[(0, 0)]).abs() < 3.0 * se_v0, "{}", emp.cov[(0, 0)]);
        assert!((emp.cov[(1, 1)] - m.cov[(1, 1)]).abs() < 3.0 * se_v1, "{}", emp.cov[(1, 1)]);
    }

    #[test]
    fn closed_form_agrees_with_general_fad() {
        for spectrum in [
            SpectrumSpec::flat(16, 1.0),
            SpectrumSpec::spike(16, 50.0),
            SpectrumSpec::explicit(vec![0.5, 3.0, 1.0, 0.25]),
        ] {
            for eps in [0.01, 0.1, 0.5] {
                for c0 in [1.0, 4.0] {
                    let closed = fad_rank1_closed_form(&spectrum, eps, c0).unwrap();
                    let base = GaussianMoments::new(
                        vec![0.0; spectrum.d],
                        Matrix::from_diagonal(&spectrum.eigenvalues().unwrap()),
                    )
                    .unwrap();
                    let mixed = contaminated_moments(&spectrum, &theorem_spec(eps, c0)).unwrap();
                    let general = fad(&base, &mixed).unwrap();
                    assert!((closed - general).abs() < 1e-10, "{closed} vs {general}");
                }
            }
        }
        assert_eq!(fad_rank1_closed_form(&SpectrumSpec::flat(4, 1.0), 0.0, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn monte_carlo_report_is_reproducible() {
        let cfg = TheoremOneConfig {
            spectrum: SpectrumSpec::flat(8, 1.0),
            epsilon: 0.1,
            c0: 8.0,
            n: 40,
            seeds: 6,
            base_seed: 9,
        };
        let a = check_theorem1(&cfg).unwrap();
        let b = check_theorem1(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.bound_i_holds);
        assert_eq!(a.order_statistic_violations, 0);
        assert!((0.0..=1.0).contains(&a.bound_ii_frequency));
        let bad = TheoremOneConfig { epsilon: 0.6, ..cfg };
        assert!(check_theorem1(&bad).is_err());
    }
}
