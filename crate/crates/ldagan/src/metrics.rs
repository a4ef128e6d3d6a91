//! Mode-coverage and sample-quality diagnostics for 2-D mixtures: how many
//! modes a sample cloud reaches, how tightly it concentrates, and how
//! cleanly the generators specialize.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset2D, GaussianMixtureSpec};
use crate::error::{Error, Result};
use crate::gan::FakeBatch;
use crate::neural::Matrix;
use crate::special_math::SimplexVector;

/// Capture radius in per-axis standard deviations; 3σ holds 1 − e^(−9/2) ≈
/// 98.9% of an isotropic 2-D Gaussian's mass.
pub const DEFAULT_CAPTURE_SIGMAS: f64 = 3.0;

/// Five samples per mode at the 512-sample reference evaluation, scaled
/// proportionally and floored at one.
pub fn default_min_count(n_samples: usize) -> usize {
    (n_samples * 5 / 512).max(1)
}

/// Joint diagnostic over one fake batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub modes_covered: usize,
    pub hq_ratio: f64,
    pub per_mode_counts: Vec<usize>,
    pub usage_entropy: f64,
    pub purity: Vec<f64>,
}

impl CoverageReport {
    pub fn compute(
        fakes: &FakeBatch,
        spec: &GaussianMixtureSpec,
        capture_radius_sigmas: f64,
        min_count: usize,
    ) -> Result<CoverageReport> {
        let (modes_covered, per_mode_counts) =
            mode_coverage(&fakes.samples, spec, capture_radius_sigmas, min_count)?;
        let hq_ratio = high_quality_ratio(&fakes.samples, spec, capture_radius_sigmas)?;
        let (_, usage_entropy) = generator_usage(fakes)?;
        let purity = assignment_purity(fakes, spec)?;
        Ok(CoverageReport { modes_covered, hq_ratio, per_mode_counts, usage_entropy, purity })
    }
}

// Index of the closest center, lowest index on ties.
fn nearest_center(spec: &GaussianMixtureSpec, x: f64, y: f64) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (j, c) in spec.centers.iter().enumerate() {
        let d2 = (x - c[0]).powi(2) + (y - c[1]).powi(2);
        if d2 < best.1 {
            best = (j, d2);
        }
    }
    (best.0, best.1.sqrt())
}

/// Assign each sample to its nearest center; a mode counts as covered when
/// at least `min_count` of its assigned samples lie within
/// `capture_radius_sigmas`·σ of it. Returns (modes covered, in-radius count
/// per mode).
pub fn mode_coverage(
    samples: &Matrix,
    spec: &GaussianMixtureSpec,
    capture_radius_sigmas: f64,
    min_count: usize,
) -> Result<(usize, Vec<usize>)> {
    if samples.rows() == 0 || samples.cols() != 2 {
        return Err(Error::shape("samples must be a non-empty Nx2 matrix"));
    }
    if !(capture_radius_sigmas > 0.0) || min_count == 0 {
        return Err(Error::domain("capture radius and min_count must be positive"));
    }
    let radius = capture_radius_sigmas * spec.sigma();
    let mut counts = vec![0usize; spec.n_modes()];
    for r in 0..samples.rows() {
        let (j, dist) = nearest_center(spec, samples.at(r, 0), samples.at(r, 1));
        if dist <= radius {
            counts[j] += 1;
        }
    }
    let covered = counts.iter().filter(|&&c| c >= min_count).count();
    Ok((covered, counts))
}

/// Fraction of samples within `radius_sigmas`·σ of their nearest center.
pub fn high_quality_ratio(
    samples: &Matrix,
    spec: &GaussianMixtureSpec,
    radius_sigmas: f64,
) -> Result<f64> {
    if samples.rows() == 0 || samples.cols() != 2 {
        return Err(Error::shape("samples must be a non-empty Nx2 matrix"));
    }
    let radius = radius_sigmas * spec.sigma();
    let near = (0..samples.rows())
        .filter(|&r| nearest_center(spec, samples.at(r, 0), samples.at(r, 1)).1 <= radius)
        .count();
    Ok(near as f64 / samples.rows() as f64)
}

/// Mode-id histogram (length max id + 1) and its Shannon entropy in nats,
/// with 0·ln 0 = 0.
pub fn generator_usage(fakes: &FakeBatch) -> Result<(Vec<usize>, f64)> {
    if fakes.mode_ids.is_empty() {
        return Err(Error::shape("empty fake batch"));
    }
    let k = fakes.mode_ids.iter().max().expect("non-empty") + 1;
    let mut hist = vec![0usize; k];
    for &id in &fakes.mode_ids {
        hist[id] += 1;
    }
    let n = fakes.mode_ids.len() as f64;
    let entropy = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    Ok((hist, entropy))
}

/// Per generator: the fraction of its samples whose nearest center equals
/// the generator's plurality center (lowest center index on ties). A
/// generator with no samples in the batch scores 0.
pub fn assignment_purity(fakes: &FakeBatch, spec: &GaussianMixtureSpec) -> Result<Vec<f64>> {
    if fakes.mode_ids.is_empty() {
        return Err(Error::shape("empty fake batch"));
    }
    let k = fakes.mode_ids.iter().max().expect("non-empty") + 1;
    // assignment_counts[g][j]: generator g's samples whose nearest center is j
    let mut assignment_counts = vec![vec![0usize; spec.n_modes()]; k];
    for (r, &g) in fakes.mode_ids.iter().enumerate() {
        let (j, _) = nearest_center(spec, fakes.samples.at(r, 0), fakes.samples.at(r, 1));
        assignment_counts[g][j] += 1;
    }
    Ok(assignment_counts
        .iter()
        .map(|counts| {
            let total: usize = counts.iter().sum();
            if total == 0 {
                return 0.0;
            }
            let plurality = *counts.iter().max().expect("non-empty");
            plurality as f64 / total as f64
        })
        .collect())
}

/// Recover a mixture spec from a labeled dataset: per-label sample means as
/// centers, label frequencies as weights, and the per-axis variance pooled
/// over every component. Every label in 0..=max must occur.
pub fn estimate_spec_from_labeled(dataset: &Dataset2D) -> Result<GaussianMixtureSpec> {
    let labels = dataset
        .labels()
        .ok_or_else(|| Error::domain("spec estimation needs a labeled dataset"))?;
    let k = labels.iter().max().expect("non-empty dataset") + 1;
    let mut counts = vec![0usize; k];
    let mut sums = vec![[0.0f64; 2]; k];
    for (r, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        sums[l][0] += dataset.samples().at(r, 0);
        sums[l][1] += dataset.samples().at(r, 1);
    }
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::domain(format!("label {j} has no samples")));
    }
    let centers: Vec<[f64; 2]> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| [s[0] / c as f64, s[1] / c as f64])
        .collect();

    let mut sq = 0.0;
    for (r, &l) in labels.iter().enumerate() {
        sq += (dataset.samples().at(r, 0) - centers[l][0]).powi(2);
        sq += (dataset.samples().at(r, 1) - centers[l][1]).powi(2);
    }
    let variance = sq / (2.0 * labels.len() as f64);
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / labels.len() as f64).collect();
    GaussianMixtureSpec::new(centers, variance, SimplexVector::new(weights)?)
}
