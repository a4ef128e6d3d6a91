//! Scalar special functions and seeded samplers underlying the
//! Dirichlet-multinomial machinery: `ln Γ`, `Ψ`, stable log-weight
//! normalization, and Gamma/Dirichlet/categorical sampling on a
//! deterministic 64-bit stream.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::DirichletParams;

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;

/// A probability vector: K ≥ 1 non-negative entries summing to 1 within 1e-12.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>")]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::shape("simplex vector must have K >= 1 entries"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::domain("simplex entries must be finite and >= 0"));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!(
                "simplex entries sum to {sum}, expected 1 within 1e-12"
            )));
        }
        Ok(SimplexVector(values))
    }

    /// The uniform distribution over `k` outcomes.
    pub fn uniform(k: usize) -> Self {
        assert!(k >= 1, "uniform simplex needs k >= 1");
        SimplexVector(vec![1.0 / k as f64; k])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for SimplexVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        SimplexVector::new(values)
    }
}

/// Deterministic splitmix64 stream. `next_u64` is the only primitive; every
/// other draw documents how many primitives it consumes, so a stream's state
/// after any sampling sequence is reproducible from the seed alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    state: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1). One primitive draw.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1]; safe under `ln`. One primitive draw.
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi). One primitive draw.
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Two independent standard normals via Box-Muller. Two primitive draws.
    pub fn next_normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.next_open01();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * theta.cos(), r * theta.sin())
    }

    /// One standard normal; a full pair is drawn and the second discarded,
    /// so this always consumes exactly two primitive draws.
    pub fn next_normal(&mut self) -> f64 {
        self.next_normal_pair().0
    }

    /// Gamma(shape, 1) via Marsaglia-Tsang squeeze; shapes below 1 use the
    /// boost Gamma(a) = Gamma(a+1) * U^(1/a). Each rejection attempt consumes
    /// three primitive draws (one normal pair + one uniform); the boost adds
    /// one more uniform.
    pub fn next_gamma(&mut self, shape: f64) -> f64 {
        assert!(shape > 0.0 && shape.is_finite(), "gamma shape must be positive");
        if shape >= 1.0 {
            self.gamma_core(shape)
        } else {
            let g = self.gamma_core(shape + 1.0);
            let u = self.next_open01();
            g * u.powf(1.0 / shape)
        }
    }

    /// ln of a Gamma(shape, 1) draw. For shape < 1 the boost is applied in
    /// log space, which stays finite even when the draw itself underflows.
    fn log_gamma_variate(&mut self, shape: f64) -> f64 {
        if shape >= 1.0 {
            self.gamma_core(shape).ln()
        } else {
            let g = self.gamma_core(shape + 1.0);
            let u = self.next_open01();
            g.ln() + u.ln() / shape
        }
    }

    // Marsaglia-Tsang for shape >= 1.
    fn gamma_core(&mut self, shape: f64) -> f64 {
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.next_normal();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v3 = v * v * v;
            let u = self.next_open01();
            if u < 1.0 - 0.0331 * x * x * x * x {
                return d * v3;
            }
            if u.ln() < 0.5 * x * x + d * (1.0 - v3 + v3.ln()) {
                return d * v3;
            }
        }
    }
}

fn check_positive(x: f64, name: &str) -> Result<()> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::domain(format!("{name} requires finite x > 0, got {x}")));
    }
    Ok(())
}

/// ln Γ(x) for x > 0: upward recurrence shifts the argument above 10, then a
/// Stirling series with Bernoulli corrections through x⁻¹¹ (the first
/// truncated term is below 1e-15 there). Absolute error is a few ulp of the
/// result across the working range.
pub fn log_gamma(x: f64) -> Result<f64> {
    check_positive(x, "log_gamma")?;
    let mut acc = 0.0;
    let mut x = x;
    // ln Γ(x) = ln Γ(x+1) − ln x
    while x < 10.0 {
        acc -= x.ln();
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            - inv2
                * (1.0 / 360.0
                    - inv2
                        * (1.0 / 1260.0
                            - inv2
                                * (1.0 / 1680.0
                                    - inv2 * (1.0 / 1188.0 - inv2 * (691.0 / 360360.0))))));
    Ok(acc + (x - 0.5) * x.ln() - x + HALF_LN_TWO_PI + series)
}

/// Ψ(x) = d/dx ln Γ(x) for x > 0: upward recurrence above 10, then the
/// asymptotic expansion with Bernoulli terms through x⁻¹² (first truncated
/// term below 1e-15 at the threshold).
pub fn digamma(x: f64) -> Result<f64> {
    check_positive(x, "digamma")?;
    let mut acc = 0.0;
    let mut x = x;
    // Ψ(x) = Ψ(x+1) − 1/x
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0))))));
    Ok(acc + x.ln() - 0.5 * inv - series)
}

/// exp-normalize a vector of log weights onto the simplex, shifting by the
/// maximum first so the largest term exponentiates to 1. Entries of −∞ are
/// allowed (zero weight); NaN/+∞ are rejected, as is an all-−∞ input.
pub fn normalize_log_weights(logw: &[f64]) -> Result<SimplexVector> {
    if logw.is_empty() {
        return Err(Error::shape("normalize_log_weights on empty input"));
    }
    if logw.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite("normalize_log_weights input".into()));
    }
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::domain("all log weights are -inf"));
    }
    let mut w: Vec<f64> = logw.iter().map(|lw| (lw - m).exp()).collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    SimplexVector::new(w)
}

/// One draw from Dir(α), computed from K log-Gamma variates normalized in
/// log space so that very small concentrations cannot underflow to 0/0.
pub fn sample_dirichlet(alpha: &DirichletParams, rng: &mut RngStream) -> SimplexVector {
    let lg: Vec<f64> = alpha
        .values()
        .iter()
        .map(|&a| rng.log_gamma_variate(a))
        .collect();
    normalize_log_weights(&lg).expect("gamma variates are finite")
}

/// One index drawn with the probabilities of `p`. One primitive draw.
pub fn sample_categorical(p: &SimplexVector, rng: &mut RngStream) -> usize {
    let u = rng.next_f64();
    let mut cum = 0.0;
    for (i, &pi) in p.values().iter().enumerate() {
        cum += pi;
        if u < cum {
            return i;
        }
    }
    p.len() - 1 // cumulative rounding: u landed in the final sliver
}

#[cfg(test)]
mod tests {
    use super::*;

    const PSI_1: f64 = -0.577_215_664_901_532_9;
    const PSI_HALF: f64 = -1.963_510_026_021_423_5;
    const PSI_2: f64 = 0.422_784_335_098_467_14;
    const LN_GAMMA_HALF: f64 = 0.572_364_942_924_700_1;

    #[test]
    fn log_gamma_anchors() {
        assert!(log_gamma(1.0).unwrap().abs() < 1e-12);
        assert!(log_gamma(2.0).unwrap().abs() < 1e-12);
        assert!((log_gamma(0.5).unwrap() - LN_GAMMA_HALF).abs() < 1e-12);
        // ln Γ(1.5) and ln Γ(24.5), fixed by recurrence from the half-integer anchor
        assert!((log_gamma(1.5).unwrap() - (-0.120_782_237_635_245_22)).abs() < 1e-12);
        assert!((log_gamma(24.5).unwrap() - 53.190_494_526_169_265).abs() < 1e-10);
    }

    #[test]
    fn digamma_anchors() {
        assert!((digamma(1.0).unwrap() - PSI_1).abs() < 1e-12);
        assert!((digamma(0.5).unwrap() - PSI_HALF).abs() < 1e-12);
        assert!((digamma(2.0).unwrap() - PSI_2).abs() < 1e-12);
        assert!((digamma(24.5).unwrap() - 3.178_126_146_353_307_5).abs() < 1e-11);
    }

    #[test]
    fn recurrences_hold_on_grid() {
        for &x in &[0.1, 0.5, 1.0, 2.0, 10.0, 100.0] {
            let dg = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
            assert!((dg - 1.0 / x).abs() < 1e-9, "digamma recurrence at {x}");
            let lg = log_gamma(x + 1.0).unwrap() - log_gamma(x).unwrap();
            assert!((lg - x.ln()).abs() < 1e-9, "log_gamma recurrence at {x}");
        }
    }

    #[test]
    fn digamma_is_derivative_of_log_gamma() {
        let h = 1e-5;
        for &x in &[0.3, 0.9, 1.7, 4.2, 11.0, 77.0] {
            let fd = (log_gamma(x + h).unwrap() - log_gamma(x - h).unwrap()) / (2.0 * h);
            let dg = digamma(x).unwrap();
            assert!(
                ((fd - dg) / dg.abs().max(1.0)).abs() < 1e-5,
                "derivative mismatch at {x}: fd={fd} dg={dg}"
            );
        }
    }

    #[test]
    fn domain_errors() {
        assert!(digamma(0.0).is_err());
        assert!(digamma(-1.0).is_err());
        assert!(digamma(f64::NAN).is_err());
        assert!(digamma(f64::INFINITY).is_err());
        assert!(log_gamma(0.0).is_err());
        assert!(log_gamma(-3.0).is_err());
    }

    #[test]
    fn normalize_log_weights_basics() {
        let w = normalize_log_weights(&[0.0, 0.0]).unwrap();
        assert!((w.values()[0] - 0.5).abs() < 1e-15);

        // ratio 1:3 independent of the shared constant
        for &c in &[0.0, -500.0, 300.0] {
            let w = normalize_log_weights(&[c, c + 3f64.ln()]).unwrap();
            assert!((w.values()[0] - 0.25).abs() < 1e-12);
            assert!((w.values()[1] - 0.75).abs() < 1e-12);
        }

        let w = normalize_log_weights(&[-1000.0, -1001.0, -1002.0]).unwrap();
        assert!(w.values().iter().all(|v| v.is_finite()));
        assert!((w.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);

        assert!(normalize_log_weights(&[]).is_err());
        assert!(normalize_log_weights(&[f64::NEG_INFINITY; 3]).is_err());
        assert!(normalize_log_weights(&[0.0, f64::NAN]).is_err());
        // a single -inf entry is a zero weight, not an error
        let w = normalize_log_weights(&[0.0, f64::NEG_INFINITY]).unwrap();
        assert_eq!(w.values()[1], 0.0);
    }

    #[test]
    fn simplex_validation() {
        assert!(SimplexVector::new(vec![]).is_err());
        assert!(SimplexVector::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexVector::new(vec![-0.1, 1.1]).is_err());
        assert!(SimplexVector::new(vec![0.25; 4]).is_ok());
        let u = SimplexVector::uniform(8);
        assert_eq!(u.len(), 8);
        assert!((u.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rng_is_deterministic() {
        let mut a = RngStream::new(42);
        let mut b = RngStream::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = RngStream::new(43);
        assert_ne!(a.next_u64(), c.next_u64());
    }

    #[test]
    fn uniform_ranges() {
        let mut rng = RngStream::new(7);
        for _ in 0..10_000 {
            let u = rng.next_f64();
            assert!((0.0..1.0).contains(&u));
            let o = rng.next_open01();
            assert!(o > 0.0 && o <= 1.0);
            let r = rng.next_range(-1.0, 1.0);
            assert!((-1.0..1.0).contains(&r));
        }
    }

    #[test]
    fn normal_moments() {
        let mut rng = RngStream::new(11);
        let n = 20_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let (a, b) = rng.next_normal_pair();
            sum += a + b;
            sq += a * a + b * b;
        }
        let m = sum / (2 * n) as f64;
        let v = sq / (2 * n) as f64 - m * m;
        assert!(m.abs() < 0.022, "normal mean {m}"); // 3 standard errors
        assert!((v - 1.0).abs() < 0.05, "normal variance {v}");
    }

    #[test]
    fn gamma_moments() {
        let mut rng = RngStream::new(13);
        let n = 20_000;
        for &shape in &[0.5, 1.0, 3.0] {
            let (mut sum, mut sq) = (0.0, 0.0);
            for _ in 0..n {
                let g = rng.next_gamma(shape);
                assert!(g > 0.0);
                sum += g;
                sq += g * g;
            }
            let m = sum / n as f64;
            let v = sq / n as f64 - m * m;
            // mean = shape, var = shape; 5 standard errors of the mean
            let se = (shape / n as f64).sqrt();
            assert!((m - shape).abs() < 5.0 * se, "gamma({shape}) mean {m}");
            let var_se = (2.0 * shape * shape / n as f64).sqrt() * 3.0; // loose
            assert!((v - shape).abs() < 5.0 * var_se + 0.05, "gamma({shape}) var {v}");
        }
    }

    #[test]
    fn dirichlet_moments() {
        let mut rng = RngStream::new(17);
        let n = 100_000;
        for alpha in [vec![1.0, 1.0], vec![8.0, 4.0]] {
            let params = DirichletParams::new(alpha.clone()).unwrap();
            let a0: f64 = alpha.iter().sum();
            let k = alpha.len();
            let mut mean = vec![0.0; k];
            let mut sq = vec![0.0; k];
            for _ in 0..n {
                let s = sample_dirichlet(&params, &mut rng);
                for (i, &v) in s.values().iter().enumerate() {
                    mean[i] += v;
                    sq[i] += v * v;
                }
            }
            for i in 0..k {
                mean[i] /= n as f64;
                let var = sq[i] / n as f64 - mean[i] * mean[i];
                let true_mean = alpha[i] / a0;
                let true_var = alpha[i] * (a0 - alpha[i]) / (a0 * a0 * (a0 + 1.0));
                let se_mean = (true_var / n as f64).sqrt();
                assert!(
                    (mean[i] - true_mean).abs() < 3.0 * se_mean,
                    "dirichlet mean[{i}] = {} vs {true_mean}",
                    mean[i]
                );
                // standard error of a variance estimate ~ var * sqrt(2/n)
                let se_var = true_var * (2.0 / n as f64).sqrt();
                assert!(
                    (var - true_var).abs() < 5.0 * se_var,
                    "dirichlet var[{i}] = {var} vs {true_var}"
                );
            }
        }
    }

    #[test]
    fn dirichlet_small_alpha_stays_on_simplex() {
        let mut rng = RngStream::new(19);
        let params = DirichletParams::new(vec![1e-3, 1e-3, 1e-3]).unwrap();
        for _ in 0..1000 {
            let s = sample_dirichlet(&params, &mut rng);
            assert!((s.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn categorical_degenerate_and_frequencies() {
        let mut rng = RngStream::new(23);
        let p = SimplexVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        for _ in 0..100 {
            assert_eq!(sample_categorical(&p, &mut rng), 0);
        }

        let p = SimplexVector::new(vec![0.5, 0.5]).unwrap();
        let n = 100_000;
        let zeros = (0..n)
            .filter(|_| sample_categorical(&p, &mut rng) == 0)
            .count();
        let f = zeros as f64 / n as f64;
        let se = (0.25f64 / n as f64).sqrt();
        assert!((f - 0.5).abs() < 3.0 * se, "frequency {f}");
    }

    #[test]
    fn categorical_chi_square() {
        let mut rng = RngStream::new(29);
        let probs = [0.2, 0.3, 0.5];
        let p = SimplexVector::new(probs.to_vec()).unwrap();
        let n = 100_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_categorical(&p, &mut rng)] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(probs.iter())
            .map(|(&c, &pi)| {
                let e = pi * n as f64;
                (c as f64 - e) * (c as f64 - e) / e
            })
            .sum();
        // chi-square with 2 dof: CDF(x) = 1 - exp(-x/2); p > 0.001 <=> x < -2 ln 0.001
        assert!(chi2 < 13.815_510_557_964_274, "chi2 = {chi2}");
    }
}
