//! Verification suites runnable from the command line: the variational
//! E-step checked against the exact conjugate-pair posterior, every bound
//! inequality, and central finite differences for every analytic gradient.

use std::fmt;
use std::time::Instant;

use crate::error::Result;
use crate::gan::{
    bank_forward, discriminator_loss_and_grads, generator_loss_and_grads, DiscriminatorNet,
    FakeBatch, GeneratorBank, NoiseBatch,
};
use crate::inference::{
    alpha_gradient, alpha_objective, e_step, exact_log_marginal, exact_mode_posterior, kl_gap,
    lower_bound, update_gamma, update_omega, DirichletParams, LikelihoodVector, VariationalState,
};
use crate::neural::{
    forward_layers, init_mlp, mlp_backward, mlp_forward, Activation, InitScheme, LayerParams,
    Matrix, MlpParams,
};
use crate::special_math::{RngStream, SimplexVector};

/// Outcome of one suite: pass iff no failure lines were recorded.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: String,
    pub checks: usize,
    pub failures: Vec<String>,
    pub notes: Vec<String>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "[{}] {} checks in {:.2}s — {}",
            self.name,
            self.checks,
            self.seconds,
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        for n in &self.notes {
            writeln!(f, "  {n}")?;
        }
        for (i, fail) in self.failures.iter().enumerate() {
            if i == 10 {
                writeln!(f, "  ... {} more failures", self.failures.len() - 10)?;
                break;
            }
            writeln!(f, "  FAIL: {fail}")?;
        }
        Ok(())
    }
}

/// Random conjugate-pair instance: K uniform in {2..10}, α_k in [0.5, 10],
/// D_k in [0.01, 0.99].
pub fn random_instance(rng: &mut RngStream) -> (LikelihoodVector, DirichletParams) {
    let k = 2 + (rng.next_u64() % 9) as usize;
    let alpha: Vec<f64> = (0..k).map(|_| rng.next_range(0.5, 10.0)).collect();
    let d: Vec<f64> = (0..k).map(|_| rng.next_range(0.01, 0.99)).collect();
    (
        LikelihoodVector::new(d).expect("scores in range"),
        DirichletParams::new(alpha).expect("alpha in range"),
    )
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn top_two_gap(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sorted[0] - sorted[1]
}

/// Fixed-point E-step vs. the exact posterior: on instances whose exact
/// top-two posterior gap is at least 0.05, the variational argmax must agree
/// in at least 99% of cases; every run must converge to a simplex ω with
/// γ = α + ω exactly.
pub fn estep_suite(instances: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = RngStream::new(seed);
    let mut failures = Vec::new();
    let mut eligible = 0usize;
    let mut agree = 0usize;
    for i in 0..instances {
        let (like, alpha) = random_instance(&mut rng);
        let (state, report) = e_step(&like, &alpha, 1e-12, 500)?;
        if !report.converged {
            failures.push(format!("instance {i}: no convergence after {} sweeps", report.iterations));
            continue;
        }
        let sum: f64 = state.omega.values().iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            failures.push(format!("instance {i}: omega sums to {sum}"));
        }
        for ((g, a), w) in state.gamma.iter().zip(alpha.values()).zip(state.omega.values()) {
            if *g != a + w {
                failures.push(format!("instance {i}: gamma != alpha + omega"));
                break;
            }
        }
        let exact = exact_mode_posterior(&like, &alpha)?;
        if top_two_gap(exact.values()) >= 0.05 {
            eligible += 1;
            agree += (argmax(state.omega.values()) == argmax(exact.values())) as usize;
        }
    }
    let fidelity = agree as f64 / eligible.max(1) as f64;
    let mut notes =
        vec![format!("fidelity {agree}/{eligible} = {:.2}% on gap >= 0.05", fidelity * 100.0)];
    if fidelity < 0.99 {
        failures.push(format!("argmax fidelity {:.4} below 0.99", fidelity));
    }
    if eligible == 0 {
        failures.push("no eligible instances (top-two gap filter removed everything)".into());
    }
    notes.push(format!("{instances} random instances, seed {seed}"));
    Ok(SuiteReport {
        name: "estep".into(),
        checks: instances,
        failures,
        notes,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Bound inequalities on random instances: the lower bound never exceeds the
/// exact log marginal (slack 1e-9), each coordinate half-update is
/// non-decreasing (slack 1e-12), and the final KL gap is non-negative.
pub fn bounds_suite(instances: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = RngStream::new(seed);
    let mut failures = Vec::new();
    let mut checks = 0usize;
    for i in 0..instances {
        let (like, alpha) = random_instance(&mut rng);
        let exact = exact_log_marginal(&like, &alpha)?;
        let mut omega = SimplexVector::uniform(alpha.len());
        let mut prev = f64::NEG_INFINITY;
        for sweep in 0..40 {
            let gamma = update_gamma(&alpha, &omega)?;
            // after the gamma half-update
            let st = VariationalState::new(omega.clone(), gamma.clone())?;
            let b1 = lower_bound(&like, &alpha, &st)?;
            omega = update_omega(&like, &gamma)?;
            // after the omega half-update
            let st = VariationalState::new(omega.clone(), gamma)?;
            let b2 = lower_bound(&like, &alpha, &st)?;
            checks += 2;
            for (tag, b) in [("gamma", b1), ("omega", b2)] {
                if b > exact + 1e-9 {
                    failures.push(format!(
                        "instance {i} sweep {sweep}: bound {b} exceeds marginal {exact} after {tag} update"
                    ));
                }
            }
            if b1 < prev - 1e-12 || b2 < b1 - 1e-12 {
                failures.push(format!(
                    "instance {i} sweep {sweep}: bound fell ({prev} -> {b1} -> {b2})"
                ));
            }
            prev = b2;
        }
        let gamma = update_gamma(&alpha, &omega)?;
        let st = VariationalState::new(omega, gamma)?;
        let gap = kl_gap(&like, &alpha, &st)?;
        if gap < -1e-9 {
            failures.push(format!("instance {i}: kl gap {gap} is negative"));
        }
        if failures.len() > 50 {
            break;
        }
    }
    Ok(SuiteReport {
        name: "bounds".into(),
        checks,
        failures,
        notes: vec![format!("{instances} random instances, 40 sweeps each, seed {seed}")],
        seconds: start.elapsed().as_secs_f64(),
    })
}

const FD_STEP: f64 = 1e-5;
const NET_TOL: f64 = 1e-4;
const ALPHA_TOL: f64 = 1e-6;
// FD probes must keep every ReLU pre-activation this far from its kink,
// where the relu'(0) = 0 convention and one-sided difference slopes differ.
const KINK_MARGIN: f64 = 1e-3;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn jitter_biases(layers: &mut [LayerParams], rng: &mut RngStream) {
    for l in layers {
        for b in l.bias.iter_mut() {
            *b = rng.next_range(0.05, 0.4);
        }
    }
}

fn relu_margin_of(layers: &[LayerParams], pres: &[Matrix]) -> f64 {
    let mut margin = f64::INFINITY;
    for (pre, l) in pres.iter().zip(layers) {
        if l.activation == Activation::Relu {
            for &v in pre.data() {
                margin = margin.min(v.abs());
            }
        }
    }
    margin
}

// Walks every weight and bias of one layer stack: perturb ± h, rebuild the
// scalar objective, compare the centered slope against the analytic entry.
fn fd_layers<F>(
    layers: &mut [LayerParams],
    analytic: &[(Matrix, Vec<f64>)],
    mut objective: F,
    tol: f64,
    label: &str,
    checks: &mut usize,
    failures: &mut Vec<String>,
) -> Result<()>
where
    F: FnMut(&[LayerParams]) -> Result<f64>,
{
    for li in 0..layers.len() {
        let (rows, cols) = (layers[li].weights.rows(), layers[li].weights.cols());
        for r in 0..rows {
            for c in 0..cols {
                let orig = layers[li].weights.row(r)[c];
                layers[li].weights.set(r, c, orig + FD_STEP);
                let hi = objective(layers)?;
                layers[li].weights.set(r, c, orig - FD_STEP);
                let lo = objective(layers)?;
                layers[li].weights.set(r, c, orig);
                let fd = (hi - lo) / (2.0 * FD_STEP);
                let an = analytic[li].0.row(r)[c];
                *checks += 1;
                if rel_err(fd, an) > tol {
                    failures.push(format!(
                        "{label} layer {li} weight ({r},{c}): analytic {an} vs fd {fd}"
                    ));
                }
            }
        }
        for bi in 0..layers[li].bias.len() {
            let orig = layers[li].bias[bi];
            layers[li].bias[bi] = orig + FD_STEP;
            let hi = objective(layers)?;
            layers[li].bias[bi] = orig - FD_STEP;
            let lo = objective(layers)?;
            layers[li].bias[bi] = orig;
            let fd = (hi - lo) / (2.0 * FD_STEP);
            let an = analytic[li].1[bi];
            *checks += 1;
            if rel_err(fd, an) > tol {
                failures.push(format!("{label} layer {li} bias {bi}: analytic {an} vs fd {fd}"));
            }
        }
    }
    Ok(())
}

fn grads_as_pairs(buf: &crate::neural::GradientBuffer) -> Vec<(Matrix, Vec<f64>)> {
    buf.layers.iter().map(|g| (g.weights.clone(), g.bias.clone())).collect()
}

fn check_mlp_backward(seed: u64, checks: &mut usize, failures: &mut Vec<String>) -> Result<()> {
    let mut rng = RngStream::new(seed);
    let dims = [3, 6, 5, 2];
    let acts = [Activation::Relu, Activation::Sigmoid, Activation::Identity];
    let mut mlp = init_mlp(&dims, &acts, InitScheme::XavierUniform, &mut rng)?;
    jitter_biases(&mut mlp.layers, &mut rng);
    let mut x = Matrix::zeros(4, dims[0]);
    for v in x.data_mut() {
        *v = rng.next_range(-1.5, 1.5);
    }
    let mut coeff = Matrix::zeros(4, dims[dims.len() - 1]);
    for v in coeff.data_mut() {
        *v = rng.next_range(-1.0, 1.0);
    }

    let trace = mlp_forward(&mlp, &x)?;
    let margin = relu_margin_of(&mlp.layers, &trace.pre);
    if margin <= KINK_MARGIN {
        failures.push(format!("mlp fd probe sits on a relu kink (margin {margin:.2e})"));
        return Ok(());
    }
    let (grads, _) = mlp_backward(&mlp, &trace, &coeff)?;
    let analytic = grads_as_pairs(&grads);

    // scalar objective: coefficient-weighted sum of outputs
    let obj = |layers: &[LayerParams]| -> Result<f64> {
        let t = forward_layers(layers, &x)?;
        Ok(t.output().data().iter().zip(coeff.data()).map(|(o, c)| o * c).sum())
    };
    let mut layers = std::mem::take(&mut mlp.layers);
    fd_layers(&mut layers, &analytic, obj, NET_TOL, "mlp_backward", checks, failures)?;
    mlp.layers = layers;
    Ok(())
}

fn check_discriminator_grads(seed: u64, checks: &mut usize, failures: &mut Vec<String>) -> Result<()> {
    let mut rng = RngStream::new(seed);
    let mut disc = DiscriminatorNet::init(&[6, 5], InitScheme::XavierUniform, &mut rng)?;
    jitter_biases(&mut disc.net.layers, &mut rng);
    let mut real = Matrix::zeros(4, 2);
    for v in real.data_mut() {
        *v = rng.next_range(-2.0, 2.0);
    }
    let mut fake_pts = Matrix::zeros(4, 2);
    for v in fake_pts.data_mut() {
        *v = rng.next_range(-2.0, 2.0);
    }
    let fake = FakeBatch {
        samples: fake_pts,
        mode_ids: vec![0; 4],
        noise: NoiseBatch::new(Matrix::from_rows(vec![vec![0.0]; 4])?)?,
    };

    let margin = relu_margin_of(&disc.net.layers, &forward_layers(&disc.net.layers, &real)?.pre)
        .min(relu_margin_of(
            &disc.net.layers,
            &forward_layers(&disc.net.layers, &fake.samples)?.pre,
        ));
    if margin <= KINK_MARGIN {
        failures.push(format!("disc fd probe sits on a relu kink (margin {margin:.2e})"));
        return Ok(());
    }

    let (_, grads) = discriminator_loss_and_grads(&disc, &real, &fake)?;
    let analytic = grads_as_pairs(&grads);
    let obj = |layers: &[LayerParams]| -> Result<f64> {
        let d = DiscriminatorNet::new(MlpParams { layers: layers.to_vec() })?;
        Ok(discriminator_loss_and_grads(&d, &real, &fake)?.0)
    };
    let mut layers = std::mem::take(&mut disc.net.layers);
    fd_layers(&mut layers, &analytic, obj, NET_TOL, "discriminator", checks, failures)?;
    disc.net.layers = layers;
    Ok(())
}

fn check_generator_grads(seed: u64, checks: &mut usize, failures: &mut Vec<String>) -> Result<()> {
    let mut rng = RngStream::new(seed);
    let k = 3;
    let mut bank = GeneratorBank::init(k, 4, 5, InitScheme::XavierUniform, &mut rng)?;
    jitter_biases(&mut bank.heads, &mut rng);
    jitter_biases(&mut bank.trunk.layers, &mut rng);
    let mut disc = DiscriminatorNet::init(&[6], InitScheme::XavierUniform, &mut rng)?;
    jitter_biases(&mut disc.net.layers, &mut rng);
    let noise = NoiseBatch::uniform(3, 4, &mut rng)?;
    let mut weights = Matrix::zeros(3, k);
    for r in 0..3 {
        let raw: Vec<f64> = (0..k).map(|_| rng.next_range(0.1, 1.0)).collect();
        let total: f64 = raw.iter().sum();
        for (c, v) in raw.iter().enumerate() {
            weights.set(r, c, v / total);
        }
    }

    let fwd = bank_forward(&bank, &disc, &noise)?;
    // every trace's pre list pairs with its own layer stack; flatten both in
    // the same order so relu layers line up with their pre-activations
    let mut flat_layers = Vec::new();
    for h in &bank.heads {
        flat_layers.push(h.clone());
    }
    for _ in 0..k {
        flat_layers.extend(bank.trunk.layers.iter().cloned());
    }
    for _ in 0..k {
        flat_layers.extend(disc.net.layers.iter().cloned());
    }
    let mut flat_pres = Vec::new();
    for t in &fwd.head_traces {
        flat_pres.extend(t.pre.iter().cloned());
    }
    for t in &fwd.trunk_traces {
        flat_pres.extend(t.pre.iter().cloned());
    }
    for t in &fwd.disc_traces {
        flat_pres.extend(t.pre.iter().cloned());
    }
    let margin = relu_margin_of(&flat_layers, &flat_pres);
    if margin <= KINK_MARGIN {
        failures.push(format!("generator fd probe sits on a relu kink (margin {margin:.2e})"));
        return Ok(());
    }

    let (losses, head_grads, trunk_grads) =
        generator_loss_and_grads(&bank, &disc, &noise, &weights)?;
    let _ = losses;

    let total = |b: &GeneratorBank| -> Result<f64> {
        let (l, _, _) = generator_loss_and_grads(b, &disc, &noise, &weights)?;
        Ok(l.iter().sum())
    };

    // heads: gradient of the summed objective (head k only feeds loss k)
    let head_analytic: Vec<(Matrix, Vec<f64>)> =
        head_grads.iter().map(|g| (g.weights.clone(), g.bias.clone())).collect();
    {
        let mut heads = std::mem::take(&mut bank.heads);
        let obj = |layers: &[LayerParams]| -> Result<f64> {
            let b = GeneratorBank::new(layers.to_vec(), bank.trunk.clone())?;
            total(&b)
        };
        fd_layers(&mut heads, &head_analytic, obj, NET_TOL, "generator heads", checks, failures)?;
        bank.heads = heads;
    }

    // trunk: shared across all modes
    let trunk_analytic = grads_as_pairs(&trunk_grads);
    {
        let mut tl = std::mem::take(&mut bank.trunk.layers);
        let heads = bank.heads.clone();
        let obj = |layers: &[LayerParams]| -> Result<f64> {
            let b = GeneratorBank::new(heads.clone(), MlpParams { layers: layers.to_vec() })?;
            total(&b)
        };
        fd_layers(&mut tl, &trunk_analytic, obj, NET_TOL, "generator trunk", checks, failures)?;
        bank.trunk.layers = tl;
    }
    Ok(())
}

fn check_alpha_gradient(seed: u64, checks: &mut usize, failures: &mut Vec<String>) -> Result<()> {
    let mut rng = RngStream::new(seed);
    for inst in 0..20 {
        let k = 2 + (rng.next_u64() % 7) as usize;
        let alpha =
            DirichletParams::new((0..k).map(|_| rng.next_range(0.5, 10.0)).collect())?;
        let m = 1 + (rng.next_u64() % 5) as usize;
        let gammas: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..k).map(|_| rng.next_range(0.6, 9.0)).collect())
            .collect();
        let analytic = alpha_gradient(&gammas, &alpha)?;
        for j in 0..k {
            let mut hi = alpha.values().to_vec();
            hi[j] += FD_STEP;
            let mut lo = alpha.values().to_vec();
            lo[j] -= FD_STEP;
            let fhi = alpha_objective(&gammas, &DirichletParams::new(hi)?)?;
            let flo = alpha_objective(&gammas, &DirichletParams::new(lo)?)?;
            let fd = (fhi - flo) / (2.0 * FD_STEP);
            *checks += 1;
            if rel_err(fd, analytic[j]) > ALPHA_TOL {
                failures.push(format!(
                    "alpha instance {inst} component {j}: analytic {} vs fd {fd}",
                    analytic[j]
                ));
            }
        }
    }
    Ok(())
}

/// Central finite differences against every analytic gradient: plain MLP
/// backprop, both adversarial losses, and the Dirichlet-parameter gradient.
pub fn gradients_suite(seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut checks = 0usize;
    let mut failures = Vec::new();
    check_mlp_backward(seed ^ 0x11, &mut checks, &mut failures)?;
    check_discriminator_grads(seed ^ 0x22, &mut checks, &mut failures)?;
    check_generator_grads(seed ^ 0x33, &mut checks, &mut failures)?;
    check_alpha_gradient(seed ^ 0x44, &mut checks, &mut failures)?;
    Ok(SuiteReport {
        name: "gradients".into(),
        checks,
        failures,
        notes: vec![format!(
            "network tolerance {NET_TOL:.0e}, alpha tolerance {ALPHA_TOL:.0e}, step {FD_STEP:.0e}, seed {seed}"
        )],
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estep_suite_passes_and_is_fast() {
        let r = estep_suite(1000, 99).unwrap();
        assert!(r.passed(), "{r}");
        assert!(r.seconds < 5.0, "took {}s", r.seconds);
        assert!(r.notes[0].contains("fidelity"));
    }

    #[test]
    fn bounds_suite_passes_and_is_fast() {
        let r = bounds_suite(1000, 99).unwrap();
        assert!(r.passed(), "{r}");
        assert!(r.seconds < 5.0, "took {}s", r.seconds);
    }

    #[test]
    fn gradients_suite_passes() {
        let r = gradients_suite(99).unwrap();
        assert!(r.passed(), "{r}");
        assert!(r.checks > 200, "only {} comparisons", r.checks);
        assert!(r.seconds < 30.0, "took {}s", r.seconds);
    }

    #[test]
    fn random_instances_stay_in_their_boxes() {
        let mut rng = RngStream::new(5);
        for _ in 0..200 {
            let (like, alpha) = random_instance(&mut rng);
            assert!((2..=10).contains(&alpha.len()));
            assert_eq!(like.len(), alpha.len());
            assert!(alpha.values().iter().all(|&a| (0.5..=10.0).contains(&a)));
            assert!(like.values().iter().all(|&d| (0.01..=0.99).contains(&d)));
        }
    }

    #[test]
    fn report_display_marks_failures() {
        let mut r = SuiteReport {
            name: "demo".into(),
            checks: 3,
            failures: vec![],
            notes: vec!["note".into()],
            seconds: 0.01,
        };
        assert!(r.passed());
        assert!(format!("{r}").contains("PASS"));
        r.failures.push("broken".into());
        assert!(!r.passed());
        let s = format!("{r}");
        assert!(s.contains("FAIL") && s.contains("broken"));
    }
}
