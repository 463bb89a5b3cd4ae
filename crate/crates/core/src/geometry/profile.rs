//! Radial conformal factor c₀(r) given as uniform samples on [0, 1], interpolated by a natural cubic spline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", try_from = "Vec<f64>")]
pub struct ConformalProfile {
    samples: Vec<f64>,
    second: Vec<f64>,
}

/// Smallest admissible value of c₀.
pub const C_MIN: f64 = 0.1;

impl ConformalProfile {
    pub fn flat() -> Self {
        Self { samples: vec![1.0, 1.0], second: vec![0.0, 0.0] }
    }

    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidGeometry("conformal profile needs at least two samples".into()));
        }
        if let Some(bad) = samples.iter().find(|v| !v.is_finite() || **v < C_MIN) {
            return Err(Error::InvalidGeometry(format!("conformal sample {bad} below {C_MIN} or non-finite")));
        }
        let second = natural_spline_second_derivatives(&samples);
        Ok(Self { samples, second })
    }

    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_samples((0..n).map(|i| f(i as f64 / (n - 1) as f64)).collect())
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn is_flat(&self) -> bool {
        self.samples.iter().all(|&v| v == 1.0)
    }

    pub fn max_deviation(&self) -> f64 {
        self.samples.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max)
    }

    /// (c₀, c₀′, c₀″) at radius r; r is clamped to [0, 1].
    pub fn eval(&self, r: f64) -> (f64, f64, f64) {
        if self.is_flat() {
            return (1.0, 0.0, 0.0);
        }
        let n = self.samples.len() - 1;
        let step = 1.0 / n as f64;
        let r = r.clamp(0.0, 1.0);
        let k = ((r / step) as usize).min(n - 1);
        let a = (r - k as f64 * step) / step;
        let b = 1.0 - a;
        let (y0, y1) = (self.samples[k], self.samples[k + 1]);
        let (m0, m1) = (self.second[k], self.second[k + 1]);
        let value = b * y0 + a * y1 + ((b * b * b - b) * m0 + (a * a * a - a) * m1) * step * step / 6.0;
        let slope = (y1 - y0) / step + ((1.0 - 3.0 * b * b) * m0 + (3.0 * a * a - 1.0) * m1) * step / 6.0;
        let curvature = b * m0 + a * m1;
        (value, slope, curvature)
    }

    pub fn value(&self, r: f64) -> f64 {
        self.eval(r).0
    }

    /// Gauss curvature of c₀(r)(dx² + dy²) at radius r: −Δ(½ ln c₀)/c₀.
    pub fn gauss_curvature(&self, r: f64) -> f64 {
        if self.is_flat() {
            return 0.0;
        }
        let (c, dc, ddc) = self.eval(r);
        let w1 = 0.5 * dc / c;
        let w2 = 0.5 * (ddc / c - dc * dc / (c * c));
        let lap = if r < 1e-9 { 2.0 * w2 } else { w2 + w1 / r };
        -lap / c
    }
}

impl From<ConformalProfile> for Vec<f64> {
    fn from(p: ConformalProfile) -> Self {
        p.samples
    }
}

impl TryFrom<Vec<f64>> for ConformalProfile {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::from_samples(v)
    }
}

fn natural_spline_second_derivatives(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let step = 1.0 / (n - 1) as f64;
    // Thomas algorithm on the interior equations m[i-1] + 4 m[i] + m[i+1] = 6 Δ²y / step².
    let k = n - 2;
    let mut c = vec![0.0; k];
    let mut d = vec![0.0; k];
    for i in 0..k {
        let rhs = 6.0 * (y[i] - 2.0 * y[i + 1] + y[i + 2]) / (step * step);
        let denom = if i == 0 { 4.0 } else { 4.0 - c[i - 1] };
        c[i] = 1.0 / denom;
        d[i] = if i == 0 { rhs / denom } else { (rhs - d[i - 1]) / denom };
    }
    for i in (0..k).rev() {
        m[i + 1] = if i + 1 == k { d[i] } else { d[i] - c[i] * m[i + 2] };
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spline_interpolates_samples() {
        let p = ConformalProfile::from_fn(11, |r| 1.0 + 0.05 * (1.0 - r * r)).unwrap();
        for i in 0..=10 {
            let r = i as f64 / 10.0;
            assert!((p.value(r) - (1.0 + 0.05 * (1.0 - r * r))).abs() < 1e-14);
        }
        assert!((p.value(0.55) - (1.0 + 0.05 * (1.0 - 0.3025))).abs() < 1e-4);
    }

    #[test]
    fn flat_profile_has_zero_curvature() {
        let p = ConformalProfile::flat();
        assert_eq!(p.gauss_curvature(0.3), 0.0);
        assert_eq!(p.eval(0.7), (1.0, 0.0, 0.0));
    }

    #[test]
    fn rejects_small_samples() {
        assert!(ConformalProfile::from_samples(vec![1.0, 0.01]).is_err());
    }
}
