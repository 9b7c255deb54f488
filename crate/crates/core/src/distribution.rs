//! Univariate prior distributions.

use serde::{Deserialize, Serialize};

use crate::log_density::LogDensity;
use crate::rng::RngStream;

/// `-0.5 * ln(2π)`
pub const NEG_HALF_LN_2PI: f64 = -0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DistributionKind {
    Normal { mean: f64, sigma: f64 },
    Uniform { minimum: f64, maximum: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub name: String,
    pub kind: DistributionKind,
}

impl Distribution {
    /// Returns `None` when the parameters are invalid (`sigma <= 0`,
    /// `minimum >= maximum`, or non-finite values).
    pub fn normal(name: impl Into<String>, mean: f64, sigma: f64) -> Option<Self> {
        (mean.is_finite() && sigma.is_finite() && sigma > 0.0).then(|| Distribution {
            name: name.into(),
            kind: DistributionKind::Normal { mean, sigma },
        })
    }

    pub fn uniform(name: impl Into<String>, minimum: f64, maximum: f64) -> Option<Self> {
        (minimum.is_finite() && maximum.is_finite() && minimum < maximum).then(|| Distribution {
            name: name.into(),
            kind: DistributionKind::Uniform { minimum, maximum },
        })
    }

    /// Natural log density; the rejection sentinel outside the support.
    pub fn log_pdf(&self, x: f64) -> LogDensity {
        if !x.is_finite() {
            return LogDensity::REJECTED;
        }
        match self.kind {
            DistributionKind::Normal { mean, sigma } => {
                let z = (x - mean) / sigma;
                LogDensity::new(-0.5 * z * z - sigma.ln() + NEG_HALF_LN_2PI)
            }
            DistributionKind::Uniform { minimum, maximum } => {
                if x < minimum || x > maximum {
                    LogDensity::REJECTED
                } else {
                    LogDensity::new(-(maximum - minimum).ln())
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        match self.kind {
            DistributionKind::Normal { mean, sigma } => mean + sigma * rng.standard_normal(),
            DistributionKind::Uniform { minimum, maximum } => {
                minimum + (maximum - minimum) * rng.uniform()
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self.kind {
            DistributionKind::Normal { mean, .. } => mean,
            DistributionKind::Uniform { minimum, maximum } => 0.5 * (minimum + maximum),
        }
    }

    pub fn std_dev(&self) -> f64 {
        match self.kind {
            DistributionKind::Normal { sigma, .. } => sigma,
            DistributionKind::Uniform { minimum, maximum } => (maximum - minimum) / 12f64.sqrt(),
        }
    }

    /// A finite interval that carries all but a negligible fraction of the
    /// mass (±10σ for the normal).
    pub fn covering_interval(&self) -> (f64, f64) {
        match self.kind {
            DistributionKind::Normal { mean, sigma } => (mean - 10.0 * sigma, mean + 10.0 * sigma),
            DistributionKind::Uniform { minimum, maximum } => (minimum, maximum),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn constant_matches_definition() {
        assert!(close(NEG_HALF_LN_2PI, -0.5 * (2.0 * PI).ln(), 1e-15));
    }

    #[test]
    fn normal_log_pdf_at_mean() {
        let d = Distribution::normal("D", 0.0, 1.0).unwrap();
        assert!(close(d.log_pdf(0.0).value(), -0.9189385, 1e-7));
    }

    #[test]
    fn uniform_log_pdf_inside_and_outside() {
        let d = Distribution::uniform("U", 0.0, 5.0).unwrap();
        assert!(close(d.log_pdf(2.0).value(), -1.6094379, 1e-7));
        assert!(d.log_pdf(6.0).is_rejected());
        assert!(d.log_pdf(-1e-12).is_rejected());
        assert!(d.log_pdf(f64::NAN).is_rejected());
    }

    #[test]
    fn invalid_parameters_are_refused() {
        assert!(Distribution::normal("D", 0.0, 0.0).is_none());
        assert!(Distribution::normal("D", 0.0, -1.0).is_none());
        assert!(Distribution::uniform("U", 1.0, 1.0).is_none());
        assert!(Distribution::uniform("U", 0.0, f64::INFINITY).is_none());
    }

    #[test]
    fn uniform_samples_stay_in_support() {
        let d = Distribution::uniform("U", 0.0, 5.0).unwrap();
        let mut rng = RngStream::new(3, "t");
        for _ in 0..10_000 {
            let x = d.sample(&mut rng);
            assert!((0.0..=5.0).contains(&x));
        }
    }

    #[test]
    fn normal_sampling_replays_for_fixed_seed() {
        let d = Distribution::normal("D", 0.0, 1.0).unwrap();
        let a: Vec<f64> = {
            let mut rng = RngStream::new(11, "prior");
            (0..5).map(|_| d.sample(&mut rng)).collect()
        };
        let b: Vec<f64> = {
            let mut rng = RngStream::new(11, "prior");
            (0..5).map(|_| d.sample(&mut rng)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn normal_empirical_mean_within_five_sigma() {
        // sd of the mean is 1/sqrt(n); 5 sd at n = 1e5 is ~0.0158 < 0.02
        let d = Distribution::normal("D", 3.0, 1.0).unwrap();
        let mut rng = RngStream::new(5, "lln");
        let n = 100_000;
        let mean = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!(close(mean, 3.0, 0.02), "mean {mean}");
    }

    /// Composite Simpson quadrature, independent of the density's own
    /// normalisation constant.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = if n % 2 == 1 { n + 1 } else { n };
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn densities_integrate_to_one() {
        let cases = [
            Distribution::normal("a", 0.0, 1.0).unwrap(),
            Distribution::normal("b", -3.0, 0.25).unwrap(),
            Distribution::normal("c", 10.0, 7.0).unwrap(),
            Distribution::uniform("d", 0.0, 5.0).unwrap(),
            Distribution::uniform("e", -2.5, -1.0).unwrap(),
        ];
        for d in &cases {
            let (a, b) = d.covering_interval();
            let mass = simpson(|x| d.log_pdf(x).value().exp(), a, b, 20_000);
            assert!(close(mass, 1.0, 1e-6), "{}: {mass}", d.name);
        }
    }
}
