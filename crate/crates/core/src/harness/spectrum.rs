use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::linalg::{Matrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SpectrumKind {
    /// Every eigenvalue equal to `K`.
    Flat(f64),
    /// Leading eigenvalue 1, the other `d − 1` equal to `1/ratio`.
    Spike(f64),
    /// Eigenvalues as given; `d` must match the length.
    Explicit(Vec<f64>),
}

/// Axis-aligned covariance spectrum. Eigenvectors are the standard basis, so
/// the leading eigenvector is `e_k` for the first index of the largest value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSpec {
    pub kind: SpectrumKind,
    pub d: usize,
}

impl SpectrumSpec {
    pub fn flat(d: usize, k: f64) -> Self {
        Self {
            kind: SpectrumKind::Flat(k),
            d,
        }
    }

    pub fn spike(d: usize, ratio: f64) -> Self {
        Self {
            kind: SpectrumKind::Spike(ratio),
            d,
        }
    }

    pub fn explicit(values: Vec<f64>) -> Self {
        Self {
            d: values.len(),
            kind: SpectrumKind::Explicit(values),
        }
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        if self.d == 0 {
            return Err(HarnessError::InvalidSpectrum("dimension is zero".into()));
        }
        let values = match &self.kind {
            SpectrumKind::Flat(k) => vec![*k; self.d],
            SpectrumKind::Spike(ratio) => {
                if !(*ratio >= 1.0) {
                    return Err(HarnessError::InvalidSpectrum(format!("spike ratio {ratio} below 1")));
                }
                let mut v = vec![1.0 / ratio; self.d];
                v[0] = 1.0;
                v
            }
            SpectrumKind::Explicit(v) => {
                if v.len() != self.d {
                    return Err(HarnessError::InvalidSpectrum(format!(
                        "{} eigenvalues for d = {}",
                        v.len(),
                        self.d
                    )));
                }
                v.clone()
            }
        };
        if let Some(bad) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(HarnessError::InvalidSpectrum(format!("eigenvalue {bad} is not positive")));
        }
        Ok(values)
    }

    pub fn trace(&self) -> Result<f64> {
        Ok(self.eigenvalues()?.iter().sum())
    }

    /// `(index, σ_max²)` of the leading eigenvalue.
    pub fn leading(&self) -> Result<(usize, f64)> {
        let v = self.eigenvalues()?;
        let mut best = 0;
        for (i, &x) in v.iter().enumerate() {
            if x > v[best] {
                best = i;
            }
        }
        Ok((best, v[best]))
    }

    /// `Tr(Σ) / σ_max²`.
    pub fn effective_rank(&self) -> Result<f64> {
        Ok(self.trace()? / self.leading()?.1)
    }

    /// `n` draws from `N(0, diag(λ))`, one row per draw.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Matrix> {
        let scales: Vec<f64> = self.eigenvalues()?.iter().map(|l| l.sqrt()).collect();
        Ok(Matrix::from_fn(n, self.d, |_, k| scales[k] * rng.normal()))
    }

    /// Parses `flat:K`, `spike:R` or `explicit:l1,l2,...` for dimension `d`.
    pub fn parse(text: &str, d: usize) -> Result<Self> {
        let (name, arg) = text
            .split_once(':')
            .ok_or_else(|| HarnessError::InvalidSpectrum(format!("expected kind:value, got {text:?}")))?;
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| HarnessError::InvalidSpectrum(format!("not a number: {s:?}")))
        };
        let spec = match name {
            "flat" => Self::flat(d, num(arg)?),
            "spike" => Self::spike(d, num(arg)?),
            "explicit" => Self::explicit(arg.split(',').map(num).collect::<Result<_>>()?),
            other => return Err(HarnessError::InvalidSpectrum(format!("unknown spectrum kind {other:?}"))),
        };
        spec.eigenvalues()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_ranks() {
        assert_eq!(SpectrumSpec::flat(64, 2.0).effective_rank().unwrap(), 64.0);
        let spike = SpectrumSpec::spike(101, 1e4).effective_rank().unwrap();
        assert!((spike - 1.01).abs() < 1e-12);
        let e = SpectrumSpec::explicit(vec![1.0, 4.0, 2.0]);
        assert_eq!(e.leading().unwrap(), (1, 4.0));
    }

    #[test]
    fn parse_round() {
        assert_eq!(SpectrumSpec::parse("flat:1.5", 4).unwrap(), SpectrumSpec::flat(4, 1.5));
        assert_eq!(SpectrumSpec::parse("explicit:3,1", 9).unwrap().d, 2);
        assert!(SpectrumSpec::parse("flat:-1", 4).is_err());
        assert!(SpectrumSpec::parse("spike:0.5", 4).is_err());
        assert!(SpectrumSpec::parse("wavy:1", 4).is_err());
    }
}
