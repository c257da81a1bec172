//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any fails. Pass criterion numbers as arguments to run
//! a subset, e.g. `cargo test --test acceptance -- 3 7`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use otward_cli::format::{read_embeddings, write_embeddings};
use otward_core::adapter::{native_loss_and_grad, triplet_loss_and_grad, AdapterParams, TripletBatch};
use otward_core::diagnostics::diagnose;
use otward_core::harness::{
    check_theorem1, contaminate, contaminated_moments, eps_sweep, factorial_decomposition, fad_rank1_closed_form,
    fad_upper_bound, run_factorial, BasePca, ContaminationKind, ContaminationSpec, MetricKind, SpectrumSpec,
    TheoremOneConfig, SWEEP_GRID,
};
use otward_core::linalg::{sq_dist, sym_eigen, Matrix, Rng};
use otward_core::metrics::{
    exact_ot, fad, fit_population_moments, kad, resolve_bandwidth, sinkhorn_divergence_with, BandwidthRule,
    CostPower, EmbeddingSet, GaussianMoments, KadConfig, SinkhornConfig,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn cloud(rng: &mut Rng, n: usize, d: usize, shift: f64, scale: f64) -> EmbeddingSet {
    EmbeddingSet::new(Matrix::from_fn(n, d, |_, k| scale * rng.normal() + if k == 0 { shift } else { 0.0 })).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn gaussian_oracle() -> Outcome {
    let mut rng = Rng::new(101);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = 1 + rng.below(256);
        let (mut m1, mut m2, mut v1, mut v2) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        for i in 0..d {
            m1[i] = rng.normal();
            m2[i] = rng.normal();
            v1[i] = 0.05 + 4.0 * rng.uniform();
            v2[i] = 0.05 + 4.0 * rng.uniform();
        }
        let want: f64 = (0..d)
            .map(|i| (v1[i].sqrt() - v2[i].sqrt()).powi(2) + (m1[i] - m2[i]).powi(2))
            .sum();
        let a = GaussianMoments::new(m1, Matrix::from_diagonal(&v1)).unwrap();
        let b = GaussianMoments::new(m2, Matrix::from_diagonal(&v2)).unwrap();
        let got = fad(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max(rel(got, want));
    }
    ensure!(worst <= 1e-9, "worst relative error {worst:.3e}");
    Ok(format!("worst relative error {worst:.2e}"))
}

fn permutations(n: usize, f: &mut impl FnMut(&[usize])) {
    fn go(k: usize, p: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if k == p.len() {
            f(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            go(k + 1, p, f);
            p.swap(k, i);
        }
    }
    go(0, &mut (0..n).collect(), f);
}

fn exact_ot_oracle() -> Outcome {
    let mut rng = Rng::new(202);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = 2 + rng.below(7);
        let d = 1 + rng.below(4);
        let x = cloud(&mut rng, n, d, 0.0, 1.0);
        let y = cloud(&mut rng, n, d, 0.7, 1.3);
        let mut best = f64::INFINITY;
        permutations(n, &mut |p| {
            let c: f64 = (0..n).map(|i| sq_dist(x.row(i), y.row(p[i]))).sum();
            best = best.min(c / n as f64);
        });
        let got = exact_ot(&x, &y, CostPower::Squared).map_err(|e| e.to_string())?.total_cost;
        worst = worst.max((got - best).abs());
    }
    ensure!(worst <= 1e-10, "worst absolute gap {worst:.3e}");
    Ok(format!("worst gap to brute force {worst:.2e}"))
}

fn sinkhorn_convergence() -> Outcome {
    let mut rng = Rng::new(303);
    let (mut worst, mut worst_self) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let x = cloud(&mut rng, 50, 2, 0.0, 1.0);
        let y = cloud(&mut rng, 50, 2, 1.5, 0.8);
        let cfg = SinkhornConfig::new(1e-3);
        let s = sinkhorn_divergence_with(&x, &y, &cfg).map_err(|e| e.to_string())?;
        let w = exact_ot(&x, &y, CostPower::Squared).map_err(|e| e.to_string())?.total_cost;
        worst = worst.max(rel(s.divergence, w));
        for z in [&x, &y] {
            let own = sinkhorn_divergence_with(z, z, &cfg).map_err(|e| e.to_string())?.divergence;
            worst_self = worst_self.max(own.abs());
        }
    }
    ensure!(worst <= 0.05, "worst relative gap to exact OT {worst:.4}");
    ensure!(worst_self <= 1e-9, "self divergence {worst_self:.3e}");
    Ok(format!("worst gap {:.2}%, max |S(x,x)| {worst_self:.1e}", 100.0 * worst))
}

fn ceiling_inequalities() -> Outcome {
    let mut rng = Rng::new(404);
    let (mut fad_viol, mut kad_viol) = (0, 0);
    let (mut fad_slack, mut kad_slack) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..100 {
        let n = 20 + rng.below(41);
        let d = 1 + rng.below(12);
        let shift = 3.0 * rng.uniform();
        let scale = 0.3 + 2.0 * rng.uniform();
        let x = cloud(&mut rng, n, d, 0.0, 1.0);
        let y = cloud(&mut rng, n, d, shift, scale);
        let f = fad(&fit_population_moments(&x), &fit_population_moments(&y)).map_err(|e| e.to_string())?;
        let w2 = exact_ot(&x, &y, CostPower::Squared).map_err(|e| e.to_string())?.total_cost;
        let w1 = exact_ot(&x, &y, CostPower::Linear).map_err(|e| e.to_string())?.total_cost;
        let sigma = resolve_bandwidth(&x, &y, BandwidthRule::EvalMedian).map_err(|e| e.to_string())?;
        let k = kad(&x, &y, &KadConfig::fixed(sigma)).map_err(|e| e.to_string())?;
        if f > w2 + 1e-6 {
            fad_viol += 1;
        }
        if k.max(0.0).sqrt() > w1 / sigma + 1e-6 {
            kad_viol += 1;
        }
        fad_slack = fad_slack.min(w2 - f);
        kad_slack = kad_slack.min(w1 / sigma - k.max(0.0).sqrt());
    }
    ensure!(fad_viol == 0 && kad_viol == 0, "violations: fad {fad_viol}, kad {kad_viol}");
    Ok(format!("0 violations; min slack fad {fad_slack:.2e}, kad {kad_slack:.2e}"))
}

const EPS_GRID: [f64; 9] = [0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5];
const C0_GRID: [f64; 4] = [1.0, 2.0, 5.0, 10.0];
const D_GRID: [usize; 3] = [8, 32, 128];

fn theorem_grid() -> Vec<(SpectrumSpec, f64, f64)> {
    let mut cells = Vec::new();
    for d in D_GRID {
        for spectrum in [SpectrumSpec::flat(d, 1.0), SpectrumSpec::spike(d, 1e4)] {
            for eps in EPS_GRID {
                for c0 in C0_GRID {
                    cells.push((spectrum.clone(), eps, c0));
                }
            }
        }
    }
    cells
}

fn theorem_upper_bound() -> Outcome {
    let cells = theorem_grid();
    let mut violations = 0;
    let mut tightest = f64::INFINITY;
    for (spectrum, eps, c0) in &cells {
        let f = fad_rank1_closed_form(spectrum, *eps, *c0).map_err(|e| e.to_string())?;
        let u = fad_upper_bound(spectrum, *eps, *c0).map_err(|e| e.to_string())?;
        if f > u {
            violations += 1;
        }
        tightest = tightest.min(u / f);
    }
    ensure!(violations == 0, "{violations} of {} cells violate", cells.len());
    Ok(format!("{} cells, 0 violations, tightest bound/value {tightest:.3}", cells.len()))
}

fn theorem_frequency() -> Outcome {
    let r = check_theorem1(&TheoremOneConfig {
        spectrum: SpectrumSpec::flat(64, 1.0),
        epsilon: 0.1,
        c0: 8.0,
        n: 500,
        seeds: 200,
        base_seed: 6,
    })
    .map_err(|e| e.to_string())?;
    ensure!(r.bound_ii_frequency >= 0.4, "frequency {}", r.bound_ii_frequency);
    ensure!(
        r.order_statistic_violations == 0,
        "{} order-statistic violations",
        r.order_statistic_violations
    );
    Ok(format!(
        "frequency {:.3} (W2² mean {:.3} vs εT/4 {:.3})",
        r.bound_ii_frequency, r.w2_empirical, r.w2_lower_bound
    ))
}

fn dimension_trend() -> Outcome {
    let ratio = |spectrum: SpectrumSpec| -> Result<f64, String> {
        let r = check_theorem1(&TheoremOneConfig {
            spectrum,
            epsilon: 0.05,
            c0: 5.0,
            n: 200,
            seeds: 10,
            base_seed: 7,
        })
        .map_err(|e| e.to_string())?;
        Ok(r.ratio)
    };
    let (flat16, flat256) = (ratio(SpectrumSpec::flat(16, 1.0))?, ratio(SpectrumSpec::flat(256, 1.0))?);
    let (spike16, spike256) = (ratio(SpectrumSpec::spike(16, 1e4))?, ratio(SpectrumSpec::spike(256, 1e4))?);
    let flat_drop = flat256 / flat16;
    let spike_change = (spike256 / spike16).max(spike16 / spike256);
    ensure!(flat_drop <= 0.125, "flat ratio shrank only to {flat_drop:.4} of its d=16 value");
    ensure!(spike_change <= 3.0, "spike ratio changed {spike_change:.2}×");
    Ok(format!(
        "flat {flat16:.4} → {flat256:.5} (×{flat_drop:.4}); spike {spike16:.3} → {spike256:.3} (×{spike_change:.2})"
    ))
}

/// Full-rank noise scale for the dilution check. At this scale FAD's rank-1
/// response sits between 0.1% and 0.9% of its full-rank response, which the
/// check asserts before comparing metrics. With unit-variance data the default
/// scale makes full-rank outliers indistinguishable from clean rows.
const DILUTION_NOISE_SCALE: f64 = 4.0;

fn rank1_dilution() -> Outcome {
    let (d, n, seeds) = (128, 1000, 10u64);
    let (mut fad_sum, mut sink_sum) = (0.0, 0.0);
    for seed in 0..seeds {
        let mut rng = Rng::new(800 + seed);
        let base = EmbeddingSet::new(SpectrumSpec::flat(d, 1.0).sample(n, &mut rng).unwrap()).unwrap();
        let pca = BasePca::fit(&base).map_err(|e| e.to_string())?;
        let (r1, _) = pca
            .contaminate(&base, &ContaminationSpec::new(ContaminationKind::RankOneDirac, 0.05), &mut rng)
            .map_err(|e| e.to_string())?;
        let full = ContaminationSpec::new(ContaminationKind::FullRankGaussian, 0.20).with_noise_scale(DILUTION_NOISE_SCALE);
        let (fr, _) = pca.contaminate(&base, &full, &mut rng).map_err(|e| e.to_string())?;
        let response = |m: MetricKind| -> Result<f64, String> {
            let a = m.evaluate(&base, &r1, 0.05).map_err(|e| e.to_string())?;
            let b = m.evaluate(&base, &fr, 0.05).map_err(|e| e.to_string())?;
            Ok(a / b)
        };
        fad_sum += response(MetricKind::Fad)?;
        sink_sum += response(MetricKind::Sinkhorn)?;
    }
    let (fad_r, sink_r) = (fad_sum / seeds as f64, sink_sum / seeds as f64);
    ensure!(
        (0.001..=0.009).contains(&fad_r),
        "calibration off: FAD R1/FR {:.3}% outside 0.1–0.9%",
        100.0 * fad_r
    );
    let factor = sink_r / fad_r;
    ensure!(factor >= 1.9, "Sinkhorn/FAD R1/FR factor {factor:.2} < 1.9");
    Ok(format!(
        "R1/FR FAD {:.3}%, Sinkhorn {:.3}%, factor {factor:.2}",
        100.0 * fad_r,
        100.0 * sink_r
    ))
}

fn dual_route() -> Outcome {
    let mut worst = 0.0f64;
    for (spectrum, eps, c0) in theorem_grid() {
        let closed = fad_rank1_closed_form(&spectrum, eps, c0).map_err(|e| e.to_string())?;
        let base = GaussianMoments::new(
            vec![0.0; spectrum.d],
            Matrix::from_diagonal(&spectrum.eigenvalues().unwrap()),
        )
        .unwrap();
        let mixed = contaminated_moments(&spectrum, &ContaminationSpec::new(ContaminationKind::TheoremOne(c0), eps))
            .map_err(|e| e.to_string())?;
        let general = fad(&base, &mixed).map_err(|e| e.to_string())?;
        worst = worst.max((closed - general).abs() / general.abs().max(1.0));
    }
    ensure!(worst <= 1e-10, "worst gap {worst:.3e}");
    Ok(format!("worst gap {worst:.2e}"))
}

fn perturbed(d: usize, seed: u64, scale: f64) -> AdapterParams {
    let mut rng = Rng::new(seed);
    let mut p = AdapterParams::new(d, &mut rng).unwrap();
    let flat: Vec<f64> = (0..p.num_params()).map(|_| scale * rng.normal()).collect();
    p.set_flat(&flat).unwrap();
    p
}

fn finite_difference(p: &AdapterParams, h: f64, f: impl Fn(&AdapterParams) -> f64) -> Vec<f64> {
    let base = p.flatten();
    let mut q = p.clone();
    (0..base.len())
        .map(|k| {
            let mut v = base.clone();
            v[k] += h;
            q.set_flat(&v).unwrap();
            let up = f(&q);
            v[k] -= 2.0 * h;
            q.set_flat(&v).unwrap();
            (up - f(&q)) / (2.0 * h)
        })
        .collect()
}

/// Relative error with a 1e-3 floor so components that vanish analytically
/// are compared on an absolute scale.
fn grad_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

fn adapter_gradients() -> Outcome {
    let d = 8;
    let p = perturbed(d, 10, 0.4);
    let mut rng = Rng::new(11);
    let mk = |rng: &mut Rng| Matrix::from_fn(12, d, |_, _| rng.normal());
    let batch = TripletBatch::new(mk(&mut rng), mk(&mut rng), mk(&mut rng)).unwrap();
    let (loss, g) = triplet_loss_and_grad(&p, &batch, 2.0, None).map_err(|e| e.to_string())?;
    ensure!(loss > 0.0, "all triplets satisfied, gradient check is vacuous");
    let fd = finite_difference(&p, 1e-5, |q| triplet_loss_and_grad(q, &batch, 2.0, None).unwrap().0);
    let triplet = grad_err(&g.flatten(), &fd);

    let x = Matrix::from_fn(10, d, |_, _| rng.normal());
    let y = Matrix::from_fn(10, d, |_, k| rng.normal() + if k < 2 { 0.8 } else { 0.0 });
    let cfg = SinkhornConfig::new(0.2).with_tol(1e-13).with_max_iter(100_000);
    let (_, g) = native_loss_and_grad(&p, &x, &y, &cfg, None).map_err(|e| e.to_string())?;
    let fd = finite_difference(&p, 1e-5, |q| native_loss_and_grad(q, &x, &y, &cfg, None).unwrap().0);
    let native = grad_err(&g.flatten(), &fd);

    ensure!(triplet <= 1e-4, "triplet gradient error {triplet:.3e}");
    ensure!(native <= 5e-3, "native gradient error {native:.3e}");
    Ok(format!("{} parameters; triplet {triplet:.1e}, native {native:.1e}", p.num_params()))
}

fn quad_remainder(p: &AdapterParams, z: &[f64], u: &[f64], t: f64) -> f64 {
    let m = p.jacobian_probe(z).unwrap().pullback;
    let moved: Vec<f64> = z.iter().zip(u).map(|(a, b)| a + t * b).collect();
    let diff = sq_dist(&p.apply(&moved).unwrap(), &p.apply(z).unwrap());
    let delta: Vec<f64> = u.iter().map(|v| t * v).collect();
    let quad: f64 = (0..z.len())
        .map(|i| (0..z.len()).map(|j| delta[i] * m[(i, j)] * delta[j]).sum::<f64>())
        .sum();
    (diff - quad).abs()
}

fn op_norm(m: &Matrix) -> f64 {
    let gram = m.transpose().matmul(m).unwrap();
    sym_eigen(&gram).unwrap().eigenvalues[0].max(0.0).sqrt()
}

/// Newton iteration for `g(z) = w`; fine while `‖J_f‖ < 1`.
fn invert(p: &AdapterParams, w: &[f64]) -> Vec<f64> {
    let mut z = w.to_vec();
    for _ in 0..50 {
        let r: Vec<f64> = p.apply(&z).unwrap().iter().zip(w).map(|(g, w)| g - w).collect();
        if r.iter().all(|v| v.abs() < 1e-13) {
            break;
        }
        let j = p.jacobian_probe(&z).unwrap().jacobian;
        let det = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)];
        z[0] -= (j[(1, 1)] * r[0] - j[(0, 1)] * r[1]) / det;
        z[1] -= (j[(0, 0)] * r[1] - j[(1, 0)] * r[0]) / det;
    }
    z
}

fn adapter_propositions() -> Outcome {
    let d = 8;
    let mut rng = Rng::new(12);

    // second-order expansion of the pullback metric
    let mut worst_factor = f64::INFINITY;
    for seed in 0..20 {
        let p = perturbed(d, 100 + seed, 0.4);
        let z: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let mut u: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.iter_mut().for_each(|v| *v /= norm);
        let factor = quad_remainder(&p, &z, &u, 1e-2) / quad_remainder(&p, &z, &u, 5e-3);
        worst_factor = worst_factor.min(factor);
    }
    ensure!(worst_factor >= 6.0, "remainder shrank only {worst_factor:.2}× under halving");

    // determinant expansion for small residuals
    let mut worst_det = 0.0f64;
    for seed in 0..20 {
        let p = perturbed(d, 200 + seed, 0.05);
        let z: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let probe = p.jacobian_probe(&z).unwrap();
        let jf = probe.residual_jacobian.clone();
        let op = op_norm(&jf);
        ensure!(op < 0.05, "residual not small: ‖J_f‖ = {op}");
        let gap = (probe.det_estimate - 1.0 - probe.trace_jf).abs();
        worst_det = worst_det.max(gap / (2.0 * op * op * d as f64));
    }
    ensure!(worst_det <= 1.0, "determinant remainder at {worst_det:.3} of its bound");

    // analytic Jacobian against central differences
    let mut worst_jac = 0.0f64;
    for seed in 0..5 {
        let p = perturbed(d, 300 + seed, 0.5);
        let z: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let jac = p.jacobian_probe(&z).unwrap().jacobian;
        let h = 1e-6;
        for j in 0..d {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[j] += h;
            zm[j] -= h;
            let (gp, gm) = (p.apply(&zp).unwrap(), p.apply(&zm).unwrap());
            for i in 0..d {
                worst_jac = worst_jac.max((jac[(i, j)] - (gp[i] - gm[i]) / (2.0 * h)).abs());
            }
        }
    }
    ensure!(worst_jac <= 1e-5, "Jacobian error {worst_jac:.3e}");

    // change of variables for a near-identity planar warp
    let mut p = AdapterParams::with_hidden(2, 4, &mut Rng::new(13)).unwrap();
    let flat: Vec<f64> = (0..p.num_params()).map(|_| 0.35 * rng.normal()).collect();
    p.set_flat(&flat).unwrap();
    let samples = 400_000;
    let (lo, width, bins) = (-2.0, 0.25, 16usize);
    let mut counts = vec![0usize; bins * bins];
    let mut max_jf = 0.0f64;
    for s in 0..samples {
        let z = [rng.normal(), rng.normal()];
        if s % 100 == 0 {
            max_jf = max_jf.max(op_norm(&p.jacobian_probe(&z).unwrap().residual_jacobian));
        }
        let w = p.apply(&z).unwrap();
        let (bx, by) = (((w[0] - lo) / width).floor(), ((w[1] - lo) / width).floor());
        if (0.0..bins as f64).contains(&bx) && (0.0..bins as f64).contains(&by) {
            counts[by as usize * bins + bx as usize] += 1;
        }
    }
    ensure!(max_jf < 0.9, "planar warp is not a contraction perturbation: ‖J_f‖ = {max_jf:.2}");
    let (mut worst_density, mut used, mut det_spread) = (0.0f64, 0, 0.0f64);
    for by in 0..bins {
        for bx in 0..bins {
            let c = counts[by * bins + bx];
            if c < 500 {
                continue;
            }
            let centre = [lo + (bx as f64 + 0.5) * width, lo + (by as f64 + 0.5) * width];
            let z = invert(&p, &centre);
            let det = p.jacobian_probe(&z).unwrap().det_estimate.abs();
            let prior = (-(z[0] * z[0] + z[1] * z[1]) / 2.0).exp() / (2.0 * std::f64::consts::PI);
            let predicted = prior / det;
            let empirical = c as f64 / (samples as f64 * width * width);
            worst_density = worst_density.max((empirical - predicted).abs() / predicted);
            det_spread = det_spread.max((det - 1.0).abs());
            used += 1;
        }
    }
    ensure!(used >= 20, "only {used} bins reached 500 samples");
    ensure!(worst_density <= 0.15, "pushforward density off by {:.1}%", 100.0 * worst_density);
    Ok(format!(
        "remainder factor ≥ {worst_factor:.2}; det remainder ≤ {:.1e} of bound; Jacobian err {worst_jac:.1e}; \
         density err {:.1}% over {used} bins (max |det−1| {det_spread:.2})",
        worst_det,
        100.0 * worst_density
    ))
}

fn per_sample_diagnostics() -> Outcome {
    let spectrum = SpectrumSpec::flat(2, 1.0);
    let mut rng = Rng::new(5);
    let reference = EmbeddingSet::new(spectrum.sample(400, &mut rng).unwrap()).unwrap();
    let eval = EmbeddingSet::new(spectrum.sample(400, &mut rng).unwrap()).unwrap();
    let (planted, mask) = contaminate(&eval, &ContaminationSpec::new(ContaminationKind::RankOneDirac, 0.05), &mut rng)
        .map_err(|e| e.to_string())?;
    let mut report = diagnose(&reference, &planted, 0.05).map_err(|e| e.to_string())?;
    report.score_against(&mask).map_err(|e| e.to_string())?;
    let (auroc, sep) = (report.auroc.unwrap(), report.separation_ratio.unwrap());
    let gap = (report.costs.iter().sum::<f64>() - report.total_cost).abs();
    ensure!(auroc == 1.0, "AUROC {auroc}");
    ensure!(sep > 10.0, "separation ratio {sep:.2}");
    ensure!(gap <= 1e-8, "Σc_j off plan cost by {gap:.3e}");
    Ok(format!("AUROC {auroc}, separation {sep:.1}, Σc_j gap {gap:.1e}"))
}

fn factorial_algebra() -> Outcome {
    let mut rng = Rng::new(1313);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let v: Vec<f64> = (0..4).map(|_| rng.uniform() * 10f64.powf(4.0 * rng.uniform() - 2.0)).collect();
        let f = factorial_decomposition(v[0], v[1], v[2], v[3]);
        worst = worst.max((f.d_n - f.a_n - f.delta_cost - f.delta_meas).abs());
    }
    ensure!(worst <= 1e-12, "identity off by {worst:.3e}");
    let x = cloud(&mut rng, 60, 8, 0.0, 1.0);
    let y = cloud(&mut rng, 60, 8, 1.0, 1.2);
    let identity = AdapterParams::new(8, &mut rng).unwrap();
    let f = run_factorial(&x, &y, &identity, 0.05).map_err(|e| e.to_string())?;
    ensure!(f.delta_syn == 0.0, "identity adapter gives Δ_syn = {}", f.delta_syn);
    ensure!(f.a_raw == f.c_raw && f.b_raw == f.d_raw, "identity adapter changed a condition: {f:?}");
    Ok(format!("identity gap {worst:.1e}; identity adapter Δ_syn = 0"))
}

fn sweep_monotone() -> Outcome {
    let spectrum = SpectrumSpec::flat(8, 1.0);
    let mut rng = Rng::new(7);
    let x = EmbeddingSet::new(spectrum.sample(200, &mut rng).unwrap()).unwrap();
    let mut y = spectrum.sample(200, &mut rng).unwrap();
    for i in 0..200 {
        y[(i, 0)] += 1.0;
    }
    let rows = eps_sweep(&x, &EmbeddingSet::new(y).unwrap(), &SWEEP_GRID).map_err(|e| e.to_string())?;
    let values: Vec<f64> = rows.iter().map(|r| r.divergence).collect();
    ensure!(values.windows(2).all(|w| w[1] <= w[0]), "not monotone: {values:?}");
    let shown: Vec<String> = values.iter().map(|v| format!("{v:.3}")).collect();
    Ok(format!("divergence {}", shown.join(" ≥ ")))
}

fn otward(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_otward"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn cli_contract() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let run = |args: &[&str]| -> Result<Vec<u8>, String> {
        let out = otward(args);
        ensure!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        Ok(out.stdout)
    };
    let read = |p: &str| std::fs::read(p).unwrap();

    for name in ["r1.otem", "r2.otem"] {
        run(&["gen", "--d", "6", "--n", "120", "--spectrum", "spike:20", "--seed", "3", "--out", &path(name)])?;
    }
    ensure!(read(&path("r1.otem")) == read(&path("r2.otem")), "gen is not byte-identical");
    run(&["gen", "--d", "6", "--n", "120", "--seed", "4", "--shift", "0.5", "--out", &path("e.otem")])?;

    let scored: Vec<(Vec<u8>, Vec<u8>)> = (0..2)
        .map(|_| {
            let out = run(&[
                "score", "--ref", &path("r1.otem"), "--eval", &path("e.otem"), "--metric", "otad-raw", "--json",
                &path("s.json"),
            ])?;
            Ok((out, read(&path("s.json"))))
        })
        .collect::<Result<_, String>>()?;
    ensure!(scored[0] == scored[1], "score output differs between identical runs");

    let mut repeat = Vec::new();
    for tag in ["1", "2"] {
        run(&[
            "contaminate", "--input", &path("e.otem"), "--kind", "rank1", "--epsilon", "0.1", "--seed", "9", "--out",
            &path(&format!("c{tag}.otem")), "--mask-out", &path(&format!("m{tag}.csv")),
        ])?;
        let diag = run(&["diagnose", "--ref", &path("r1.otem"), "--eval", &path(&format!("c{tag}.otem")), "--top-k", "5"])?;
        repeat.push((read(&path(&format!("c{tag}.otem"))), read(&path(&format!("m{tag}.csv"))), diag));
    }
    ensure!(repeat[0] == repeat[1], "contaminate/diagnose differ between identical runs");

    let loaded = read_embeddings(Path::new(&path("e.otem"))).map_err(|e| e.to_string())?;
    write_embeddings(path("copy.otem"), &loaded).map_err(|e| e.to_string())?;
    ensure!(read(&path("copy.otem")) == read(&path("e.otem")), "binary round trip changed bytes");

    let code = |args: &[&str]| otward(args).status.code();
    let wide = path("w.otem");
    run(&["gen", "--d", "3", "--n", "10", "--out", &wide])?;
    let checks = [
        (code(&["score", "--ref", &path("e.otem"), "--eval", &path("e.otem"), "--metric", "fad"]), 0),
        (code(&["score", "--ref", &path("e.otem"), "--eval", &path("e.otem"), "--metric", "bogus"]), 2),
        (code(&["score", "--ref", &path("missing.otem"), "--eval", &path("e.otem"), "--metric", "fad"]), 2),
        (code(&["score", "--ref", &path("m1.csv"), "--eval", &path("e.otem"), "--metric", "fad"]), 2),
        (code(&["score", "--ref", &path("e.otem"), "--eval", &wide, "--metric", "otad-raw"]), 3),
    ];
    for (i, (got, want)) in checks.iter().enumerate() {
        ensure!(*got == Some(*want), "exit-code case {i}: got {got:?}, want {want}");
    }
    Ok("byte-identical reruns, bit-exact round trip, exit codes 0/2/3".into())
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    check: fn() -> Outcome,
}

const fn criterion(id: u32, name: &'static str, secs: u64, check: fn() -> Outcome) -> Criterion {
    Criterion {
        id,
        name,
        budget: Duration::from_secs(secs),
        check,
    }
}

const CRITERIA: [Criterion; 15] = [
    criterion(1, "gaussian oracle", 10, gaussian_oracle),
    criterion(2, "exact OT oracle", 30, exact_ot_oracle),
    criterion(3, "sinkhorn convergence", 60, sinkhorn_convergence),
    criterion(4, "ceiling inequalities", 120, ceiling_inequalities),
    criterion(5, "rank-1 FAD upper bound", 10, theorem_upper_bound),
    criterion(6, "rank-1 W2 lower-bound frequency", 300, theorem_frequency),
    criterion(7, "dimension trend of FAD/W2", 300, dimension_trend),
    criterion(8, "rank-1 dilution", 600, rank1_dilution),
    criterion(9, "closed form vs general FAD", 10, dual_route),
    criterion(10, "adapter gradients", 60, adapter_gradients),
    criterion(11, "adapter jacobian identities", 60, adapter_propositions),
    criterion(12, "per-sample diagnostics", 60, per_sample_diagnostics),
    criterion(13, "factorial algebra", 10, factorial_algebra),
    criterion(14, "regularisation sweep monotonicity", 60, sweep_monotone),
    criterion(15, "cli round trip and determinism", 30, cli_contract),
];

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in CRITERIA.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let start = Instant::now();
        let result = std::panic::catch_unwind(c.check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > c.budget => Err(format!("{detail}; over the {:?} budget", c.budget)),
            other => other,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(e) => {
                failed += 1;
                ("FAIL", e)
            }
        };
        println!("criterion {:>2} {tag} {} ({:.1}s): {detail}", c.id, c.name, elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
