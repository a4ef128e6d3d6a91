//! Synthetic 2-D training data: isotropic Gaussian ring mixtures, the
//! hierarchical (Dirichlet-weighted) variant, and CSV import/export.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::inference::DirichletParams;
use crate::neural::Matrix;
use crate::special_math::{sample_categorical, sample_dirichlet, RngStream, SimplexVector};

/// Mixture of isotropic 2-D Gaussians: common variance σ² per axis
/// (covariance σ²·I), one weight per center.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureSpec {
    pub centers: Vec<[f64; 2]>,
    pub variance: f64,
    pub weights: SimplexVector,
}

impl GaussianMixtureSpec {
    pub fn new(centers: Vec<[f64; 2]>, variance: f64, weights: SimplexVector) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::shape("mixture needs at least one center"));
        }
        if centers.len() != weights.len() {
            return Err(Error::shape(format!(
                "{} centers vs {} weights",
                centers.len(),
                weights.len()
            )));
        }
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::domain("mixture variance must be positive"));
        }
        if centers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mixture centers".into()));
        }
        Ok(GaussianMixtureSpec { centers, variance, weights })
    }

    pub fn n_modes(&self) -> usize {
        self.centers.len()
    }

    /// Per-axis standard deviation.
    pub fn sigma(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Equal-weight centers at angles 2πj/n_modes, counterclockwise from the
/// positive x axis.
pub fn ring_spec(n_modes: usize, radius: f64, variance: f64) -> GaussianMixtureSpec {
    assert!(n_modes >= 1, "ring needs at least one mode");
    assert!(radius > 0.0 && radius.is_finite(), "ring radius must be positive");
    let centers = (0..n_modes)
        .map(|j| {
            let angle = 2.0 * std::f64::consts::PI * j as f64 / n_modes as f64;
            [radius * angle.cos(), radius * angle.sin()]
        })
        .collect();
    GaussianMixtureSpec::new(centers, variance, SimplexVector::uniform(n_modes))
        .expect("ring construction is valid")
}

/// Point cloud with optional per-sample component labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset2D {
    samples: Matrix,
    labels: Option<Vec<usize>>,
}

impl Dataset2D {
    pub fn new(samples: Matrix, labels: Option<Vec<usize>>) -> Result<Self> {
        if samples.rows() == 0 {
            return Err(Error::shape("dataset must be non-empty"));
        }
        if samples.cols() != 2 {
            return Err(Error::shape(format!("samples must be Nx2, got {} cols", samples.cols())));
        }
        if !samples.all_finite() {
            return Err(Error::NonFinite("dataset samples".into()));
        }
        if let Some(l) = &labels {
            if l.len() != samples.rows() {
                return Err(Error::shape(format!(
                    "{} labels for {} samples",
                    l.len(),
                    samples.rows()
                )));
            }
        }
        Ok(Dataset2D { samples, labels })
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }
}

/// Per sample: component ~ weights (one primitive draw), then both point
/// coordinates from one Box-Muller pair (two draws) — three primitive draws
/// per sample, so streams can be advanced analytically.
pub fn sample_mixture(spec: &GaussianMixtureSpec, n: usize, rng: &mut RngStream) -> Dataset2D {
    assert!(n >= 1, "sample count must be positive");
    let sigma = spec.sigma();
    let mut samples = Matrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for r in 0..n {
        let j = sample_categorical(&spec.weights, rng);
        let (gx, gy) = rng.next_normal_pair();
        let c = spec.centers[j];
        samples.set(r, 0, c[0] + sigma * gx);
        samples.set(r, 1, c[1] + sigma * gy);
        labels.push(j);
    }
    Dataset2D::new(samples, Some(labels)).expect("constructed valid")
}

/// Hierarchical draw per sample: π ~ Dir(α), component ~ Mult(π), point ~
/// Normal(center, σ²I). Marginally, components appear with frequencies α/α₀.
pub fn sample_lda_mixture(
    alpha: &DirichletParams,
    spec: &GaussianMixtureSpec,
    n: usize,
    rng: &mut RngStream,
) -> Result<Dataset2D> {
    if alpha.len() != spec.n_modes() {
        return Err(Error::shape(format!(
            "alpha has {} components, mixture has {}",
            alpha.len(),
            spec.n_modes()
        )));
    }
    assert!(n >= 1, "sample count must be positive");
    let sigma = spec.sigma();
    let mut samples = Matrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for r in 0..n {
        let pi = sample_dirichlet(alpha, rng);
        let j = sample_categorical(&pi, rng);
        let (gx, gy) = rng.next_normal_pair();
        let c = spec.centers[j];
        samples.set(r, 0, c[0] + sigma * gx);
        samples.set(r, 1, c[1] + sigma * gy);
        labels.push(j);
    }
    Ok(Dataset2D::new(samples, Some(labels)).expect("constructed valid"))
}

/// `x,y,label` with an empty label column when the dataset is unlabeled.
/// Floats use the shortest representation that parses back bit-exactly.
pub fn write_dataset_csv(dataset: &Dataset2D, path: &Path) -> Result<()> {
    let mut out = String::from("x,y,label\n");
    for r in 0..dataset.len() {
        let row = dataset.samples().row(r);
        match dataset.labels() {
            Some(l) => writeln!(out, "{},{},{}", row[0], row[1], l[r]).expect("string write"),
            None => writeln!(out, "{},{},", row[0], row[1]).expect("string write"),
        }
    }
    std::fs::write(path, out).map_err(crate::error::annotate_io(path))?;
    Ok(())
}

/// Inverse of `write_dataset_csv`. Labels must be present on every row or on
/// none; line numbers in errors count from the header as line 1.
pub fn read_dataset_csv(path: &Path) -> Result<Dataset2D> {
    let text = std::fs::read_to_string(path).map_err(crate::error::annotate_io(path))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "x,y,label" => {}
        Some((_, h)) => {
            return Err(Error::Csv { line: 1, detail: format!("expected header x,y,label, got {h:?}") })
        }
        None => return Err(Error::Csv { line: 1, detail: "empty file".into() }),
    }

    let mut rows = Vec::new();
    let mut labels: Vec<Option<usize>> = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let mut parts = line.split(',');
        let (x, y, label) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(x), Some(y), Some(l), None) => (x, y, l),
            _ => {
                return Err(Error::Csv { line: lineno, detail: "expected 3 comma-separated fields".into() })
            }
        };
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| Error::Csv {
                line: lineno,
                detail: format!("bad {what} value {s:?}"),
            })
        };
        rows.push(vec![parse(x, "x")?, parse(y, "y")?]);
        let label = label.trim();
        if label.is_empty() {
            labels.push(None);
        } else {
            labels.push(Some(label.parse::<usize>().map_err(|_| Error::Csv {
                line: lineno,
                detail: format!("bad label value {label:?}"),
            })?));
        }
    }
    if rows.is_empty() {
        return Err(Error::Csv { line: 1, detail: "no data rows".into() });
    }

    let n_labeled = labels.iter().filter(|l| l.is_some()).count();
    let labels = if n_labeled == labels.len() {
        Some(labels.into_iter().map(|l| l.expect("checked")).collect())
    } else if n_labeled == 0 {
        None
    } else {
        return Err(Error::Csv {
            line: 1,
            detail: "labels must be present on every row or on none".into(),
        });
    };
    Dataset2D::new(Matrix::from_rows(rows)?, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_geometry_eight_modes() {
        let spec = ring_spec(8, 2.0, 0.08);
        assert_eq!(spec.n_modes(), 8);
        assert!(spec.weights.values().iter().all(|&w| w == 0.125));
        assert_eq!(spec.centers[0], [2.0, 0.0]);
        assert!((spec.centers[2][0]).abs() < 1e-15);
        assert!((spec.centers[2][1] - 2.0).abs() < 1e-15);
        // adjacent-center spacing is constant: 2 r sin(π/8)
        let gap = 2.0 * 2.0 * (std::f64::consts::PI / 8.0).sin();
        for j in 0..8 {
            let a = spec.centers[j];
            let b = spec.centers[(j + 1) % 8];
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            assert!((d - gap).abs() < 1e-12);
        }
    }

    #[test]
    fn small_ring_geometry() {
        let spec = ring_spec(8, 0.5, 0.02);
        let max_norm = spec
            .centers
            .iter()
            .map(|c| (c[0] * c[0] + c[1] * c[1]).sqrt())
            .fold(0.0_f64, f64::max);
        assert!((max_norm - 0.5).abs() < 1e-15);
        assert_eq!(spec.variance, 0.02);
    }

    #[test]
    fn degenerate_variance_collapses_to_centers() {
        let spec = ring_spec(8, 2.0, 1e-12);
        let mut rng = RngStream::new(5);
        let ds = sample_mixture(&spec, 200, &mut rng);
        let labels = ds.labels().unwrap();
        for r in 0..ds.len() {
            let c = spec.centers[labels[r]];
            let row = ds.samples().row(r);
            assert!((row[0] - c[0]).abs() < 1e-5 && (row[1] - c[1]).abs() < 1e-5);
        }
    }

    #[test]
    fn mixture_component_statistics() {
        let spec = ring_spec(8, 2.0, 0.08);
        let mut rng = RngStream::new(11);
        let n = 100_000;
        let ds = sample_mixture(&spec, n, &mut rng);
        let labels = ds.labels().unwrap();

        // frequencies: 0.125 ± 3 se
        let se_f = (0.125 * 0.875 / n as f64).sqrt();
        let mut counts = [0usize; 8];
        for &l in labels {
            counts[l] += 1;
        }
        for &c in &counts {
            assert!((c as f64 / n as f64 - 0.125).abs() < 3.0 * se_f, "count {c}");
        }

        // per-component means within 3 se, per-axis stddev within 5 se
        let sigma = 0.08f64.sqrt();
        for j in 0..8 {
            let rows: Vec<usize> = (0..n).filter(|&r| labels[r] == j).collect();
            let nc = rows.len() as f64;
            for axis in 0..2 {
                let mean = rows.iter().map(|&r| ds.samples().at(r, axis)).sum::<f64>() / nc;
                assert!(
                    (mean - spec.centers[j][axis]).abs() < 3.0 * sigma / nc.sqrt(),
                    "mode {j} axis {axis} mean {mean}"
                );
                let var = rows
                    .iter()
                    .map(|&r| (ds.samples().at(r, axis) - mean).powi(2))
                    .sum::<f64>()
                    / (nc - 1.0);
                let sd = var.sqrt();
                assert!(
                    (sd - sigma).abs() < 5.0 * sigma / (2.0 * nc).sqrt(),
                    "mode {j} axis {axis} sd {sd}"
                );
            }
        }
    }

    #[test]
    fn mixture_uses_three_draws_per_sample() {
        let spec = ring_spec(8, 2.0, 0.08);
        let mut a = RngStream::new(99);
        sample_mixture(&spec, 1000, &mut a);
        let mut b = RngStream::new(99);
        for _ in 0..3000 {
            b.next_u64();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn lda_mixture_marginals_follow_alpha() {
        let alpha = DirichletParams::new(vec![8.0, 4.0, 8.0, 4.0, 8.0, 4.0, 8.0, 4.0]).unwrap();
        let spec = ring_spec(8, 2.0, 0.08);
        let mut rng = RngStream::new(21);
        let n = 100_000;
        let ds = sample_lda_mixture(&alpha, &spec, n, &mut rng).unwrap();
        let mut counts = [0usize; 8];
        for &l in ds.labels().unwrap() {
            counts[l] += 1;
        }
        for (j, &c) in counts.iter().enumerate() {
            let p = alpha.values()[j] / 48.0;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - p).abs() < 3.0 * se, "mode {j}: {c}");
        }
    }

    #[test]
    fn lda_mixture_rejects_length_mismatch() {
        let alpha = DirichletParams::new(vec![1.0, 1.0]).unwrap();
        let spec = ring_spec(8, 2.0, 0.08);
        assert!(sample_lda_mixture(&alpha, &spec, 10, &mut RngStream::new(1)).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = ring_spec(8, 2.0, 0.08);
        let a = sample_mixture(&spec, 500, &mut RngStream::new(7));
        let b = sample_mixture(&spec, 500, &mut RngStream::new(7));
        assert_eq!(a, b);
        let c = sample_mixture(&spec, 500, &mut RngStream::new(8));
        assert!(a != c);
    }

    fn tmp_path(tag: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("ldagan_data_{}_{}.csv", tag, std::process::id()))
    }

    #[test]
    fn csv_round_trips_bitwise() {
        let spec = ring_spec(8, 2.0, 0.08);
        let ds = sample_mixture(&spec, 64, &mut RngStream::new(31));
        let path = tmp_path("rt");
        write_dataset_csv(&ds, &path).unwrap();
        let back = read_dataset_csv(&path).unwrap();
        assert_eq!(ds, back);

        let unlabeled = Dataset2D::new(ds.samples().clone(), None).unwrap();
        write_dataset_csv(&unlabeled, &path).unwrap();
        assert_eq!(read_dataset_csv(&path).unwrap(), unlabeled);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn csv_reports_offending_line() {
        let path = tmp_path("bad");
        std::fs::write(&path, "x,y,label\n1.0,2.0,0\noops,3.0,1\n").unwrap();
        match read_dataset_csv(&path) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected csv error, got {other:?}"),
        }
        std::fs::write(&path, "x,y,label\n1.0,2.0,0\n1.0,2.0,\n").unwrap();
        assert!(read_dataset_csv(&path).is_err(), "mixed labels must be rejected");
        std::fs::write(&path, "wrong,header\n").unwrap();
        match read_dataset_csv(&path) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected header error, got {other:?}"),
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset2D::new(Matrix::zeros(0, 2), None).is_err());
        assert!(Dataset2D::new(Matrix::zeros(3, 3), None).is_err());
        assert!(Dataset2D::new(Matrix::zeros(3, 2), Some(vec![0, 1])).is_err());
        assert!(Dataset2D::new(Matrix::zeros(3, 2), Some(vec![0, 1, 2])).is_ok());
    }
}
