//! The variational EM engine: fixed-point E-step for the per-sample
//! variational parameters (γ, ω), evidence-lower-bound evaluation, exact
//! closed-form oracles for the marginal and the mode posterior, and the
//! gradient-ascent M-step for the Dirichlet concentration α.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special_math::{digamma, log_gamma, normalize_log_weights, SimplexVector};

/// Realness scores are clamped into [PROB_EPS, 1-PROB_EPS] before any log,
/// so discriminator saturation can never produce -inf. Shared with the
/// adversarial losses.
pub const PROB_EPS: f64 = 1e-7;

/// Default positivity floor for concentration parameters.
pub const DEFAULT_ALPHA_MIN: f64 = 1e-3;

/// Dirichlet concentration vector α with a configured positivity floor.
/// Every α_k ≥ floor > 0 and finite; K ≥ 1 (K = 1 is degenerate but legal so
/// a single-generator bank can be driven through the same code paths).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDirichlet")]
pub struct DirichletParams {
    alpha: Vec<f64>,
    floor: f64,
}

#[derive(Deserialize)]
struct RawDirichlet {
    alpha: Vec<f64>,
    floor: f64,
}

impl TryFrom<RawDirichlet> for DirichletParams {
    type Error = Error;

    fn try_from(raw: RawDirichlet) -> Result<Self> {
        DirichletParams::with_floor(raw.alpha, raw.floor)
    }
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        Self::with_floor(alpha, DEFAULT_ALPHA_MIN)
    }

    pub fn with_floor(alpha: Vec<f64>, floor: f64) -> Result<Self> {
        if !(floor.is_finite() && floor > 0.0) {
            return Err(Error::domain(format!("alpha floor must be positive, got {floor}")));
        }
        if alpha.is_empty() {
            return Err(Error::shape("alpha must have K >= 1 entries"));
        }
        if alpha.iter().any(|a| !a.is_finite() || *a < floor) {
            return Err(Error::domain(format!(
                "every alpha entry must be finite and >= the floor {floor}"
            )));
        }
        Ok(DirichletParams { alpha, floor })
    }

    pub fn symmetric(k: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; k])
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// α₀ = ∑ α_k.
    pub fn total(&self) -> f64 {
        self.alpha.iter().sum()
    }
}

/// Realness scores D(G_k(z')) for one fixed noise draw, one entry per
/// generator, clamped away from {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodVector {
    d: Vec<f64>,
}

impl LikelihoodVector {
    /// Accepts raw probabilities in [0, 1] and clamps them into
    /// [PROB_EPS, 1-PROB_EPS].
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::shape("likelihood vector must have K >= 1 entries"));
        }
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0 || *s > 1.0) {
            return Err(Error::domain("likelihood entries must be probabilities in [0, 1]"));
        }
        let d = scores
            .into_iter()
            .map(|s| s.clamp(PROB_EPS, 1.0 - PROB_EPS))
            .collect();
        Ok(LikelihoodVector { d })
    }

    pub fn values(&self) -> &[f64] {
        &self.d
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }
}

/// Variational parameters for one noise draw: q(π|γ) q(z|ω). States emitted
/// by `e_step` satisfy γ = α + ω bitwise, hence ∑γ = ∑α + 1.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub omega: SimplexVector,
    pub gamma: Vec<f64>,
}

impl VariationalState {
    pub fn new(omega: SimplexVector, gamma: Vec<f64>) -> Result<Self> {
        if omega.len() != gamma.len() {
            return Err(Error::shape(format!(
                "omega has {} entries but gamma has {}",
                omega.len(),
                gamma.len()
            )));
        }
        if gamma.iter().any(|g| !g.is_finite() || *g <= 0.0) {
            return Err(Error::domain("gamma entries must be finite and positive"));
        }
        Ok(VariationalState { omega, gamma })
    }
}

/// Convergence diagnostics for one E-step run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EStepReport {
    pub iterations: usize,
    pub final_delta: f64,
    pub converged: bool,
}

fn check_same_k(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{what}: lengths {a} vs {b}")));
    }
    Ok(())
}

/// Optimal ω given γ: ω_k ∝ D_k · exp(Ψ(γ_k) − Ψ(∑γ_j)), evaluated entirely
/// in the log domain and exp-normalized.
pub fn update_omega(like: &LikelihoodVector, gamma: &[f64]) -> Result<SimplexVector> {
    check_same_k(like.len(), gamma.len(), "update_omega")?;
    if gamma.iter().any(|g| !g.is_finite() || *g <= 0.0) {
        return Err(Error::domain("update_omega requires positive gamma"));
    }
    let psi_total = digamma(gamma.iter().sum())?;
    let mut logw = Vec::with_capacity(gamma.len());
    for (d, g) in like.values().iter().zip(gamma) {
        logw.push(d.ln() + digamma(*g)? - psi_total);
    }
    normalize_log_weights(&logw)
}

/// Optimal γ given ω: γ_k = α_k + ω_k.
pub fn update_gamma(alpha: &DirichletParams, omega: &SimplexVector) -> Result<Vec<f64>> {
    check_same_k(alpha.len(), omega.len(), "update_gamma")?;
    Ok(alpha
        .values()
        .iter()
        .zip(omega.values())
        .map(|(a, w)| a + w)
        .collect())
}

/// Alternate γ- and ω-updates from a uniform ω start until max_k |Δω_k| ≤ tol
/// or `max_iter` sweeps. Non-convergence is reported, not fatal. The returned
/// state's γ is recomputed from the final ω, so γ − α = ω holds bitwise.
pub fn e_step(
    like: &LikelihoodVector,
    alpha: &DirichletParams,
    tol: f64,
    max_iter: usize,
) -> Result<(VariationalState, EStepReport)> {
    check_same_k(like.len(), alpha.len(), "e_step")?;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::domain(format!("e_step tol must be positive, got {tol}")));
    }
    if max_iter < 1 {
        return Err(Error::domain("e_step max_iter must be >= 1"));
    }

    let mut omega = SimplexVector::uniform(alpha.len());
    let mut report = EStepReport { iterations: 0, final_delta: f64::INFINITY, converged: false };
    for sweep in 1..=max_iter {
        let gamma = update_gamma(alpha, &omega)?;
        let next = update_omega(like, &gamma)?;
        let delta = next
            .values()
            .iter()
            .zip(omega.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        omega = next;
        report.iterations = sweep;
        report.final_delta = delta;
        if delta <= tol {
            report.converged = true;
            break;
        }
    }
    let gamma = update_gamma(alpha, &omega)?;
    Ok((VariationalState { omega, gamma }, report))
}

/// Ground-truth log marginal: the integrand is linear in π, so integrating
/// the Dirichlet prior and summing over modes collapses to
/// log(∑_k D_k α_k / α₀).
pub fn exact_log_marginal(like: &LikelihoodVector, alpha: &DirichletParams) -> Result<f64> {
    check_same_k(like.len(), alpha.len(), "exact_log_marginal")?;
    let weighted: f64 = like
        .values()
        .iter()
        .zip(alpha.values())
        .map(|(d, a)| d * a)
        .sum();
    Ok((weighted / alpha.total()).ln())
}

/// Ground-truth mode posterior p(z_k = 1 | y = 1, z') ∝ α_k D_k.
pub fn exact_mode_posterior(
    like: &LikelihoodVector,
    alpha: &DirichletParams,
) -> Result<SimplexVector> {
    check_same_k(like.len(), alpha.len(), "exact_mode_posterior")?;
    let logw: Vec<f64> = like
        .values()
        .iter()
        .zip(alpha.values())
        .map(|(d, a)| d.ln() + a.ln())
        .collect();
    normalize_log_weights(&logw)
}

// E_q[log p(π|α)] or E_q[log q(π|γ)]: the Dirichlet log-density expectation
// lnΓ(∑c) − ∑lnΓ(c_k) + ∑(c_k − 1)(Ψ(γ_k) − Ψ(∑γ)), with `elog_pi`
// precomputed from the γ that defines q.
fn dirichlet_expectation_term(conc: &[f64], elog_pi: &[f64]) -> Result<f64> {
    let total: f64 = conc.iter().sum();
    let mut t = log_gamma(total)?;
    for (c, e) in conc.iter().zip(elog_pi) {
        t -= log_gamma(*c)?;
        t += (c - 1.0) * e;
    }
    Ok(t)
}

/// The evidence lower bound L(γ, ω; α) =
/// E_q[log p(π|α)] + E_q[log p(z|π)] + E_q[log p(y=1|z,z')]
/// − E_q[log q(π|γ)] − E_q[log q(z|ω)], with E_q[log π_k] = Ψ(γ_k) − Ψ(∑γ)
/// and the convention 0·log 0 = 0.
pub fn lower_bound(
    like: &LikelihoodVector,
    alpha: &DirichletParams,
    state: &VariationalState,
) -> Result<f64> {
    check_same_k(like.len(), alpha.len(), "lower_bound")?;
    check_same_k(like.len(), state.gamma.len(), "lower_bound state")?;
    if state.gamma.iter().any(|g| !g.is_finite() || *g <= 0.0) {
        return Err(Error::domain("lower_bound requires positive gamma"));
    }

    let psi_total = digamma(state.gamma.iter().sum())?;
    let mut elog_pi = Vec::with_capacity(state.gamma.len());
    for g in &state.gamma {
        elog_pi.push(digamma(*g)? - psi_total);
    }

    let prior_term = dirichlet_expectation_term(alpha.values(), &elog_pi)?;
    let entropy_pi_term = dirichlet_expectation_term(&state.gamma, &elog_pi)?;

    let mut assignment = 0.0; // E_q[log p(z|π)]
    let mut likelihood = 0.0; // E_q[log p(y=1|z,z')]
    let mut entropy_z = 0.0; // E_q[log q(z|ω)]
    for ((w, e), d) in state.omega.values().iter().zip(&elog_pi).zip(like.values()) {
        assignment += w * e;
        likelihood += w * d.ln();
        if *w > 0.0 {
            entropy_z += w * w.ln();
        }
    }

    Ok(prior_term + assignment + likelihood - entropy_pi_term - entropy_z)
}

/// exact_log_marginal − lower_bound: the KL divergence from q to the true
/// posterior. Non-negative up to floating-point slack.
pub fn kl_gap(
    like: &LikelihoodVector,
    alpha: &DirichletParams,
    state: &VariationalState,
) -> Result<f64> {
    Ok(exact_log_marginal(like, alpha)? - lower_bound(like, alpha, state)?)
}

fn check_gamma_batch(gamma_batch: &[Vec<f64>], k: usize, what: &str) -> Result<()> {
    if gamma_batch.is_empty() {
        return Err(Error::shape(format!("{what}: empty gamma batch")));
    }
    for g in gamma_batch {
        check_same_k(g.len(), k, what)?;
        if g.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::domain(format!("{what}: gamma entries must be positive")));
        }
    }
    Ok(())
}

/// The α part of the bound, with the expectation over noise draws replaced
/// by the batch mean:
/// lnΓ(∑α) − ∑lnΓ(α_k) + mean_batch ∑_k (α_k − 1)(Ψ(γ_k) − Ψ(∑γ)).
pub fn alpha_objective(gamma_batch: &[Vec<f64>], alpha: &DirichletParams) -> Result<f64> {
    check_gamma_batch(gamma_batch, alpha.len(), "alpha_objective")?;
    let mut base = log_gamma(alpha.total())?;
    for a in alpha.values() {
        base -= log_gamma(*a)?;
    }
    let mut data = 0.0;
    for gamma in gamma_batch {
        let psi_total = digamma(gamma.iter().sum())?;
        for (a, g) in alpha.values().iter().zip(gamma) {
            data += (a - 1.0) * (digamma(*g)? - psi_total);
        }
    }
    Ok(base + data / gamma_batch.len() as f64)
}

/// Exact gradient of `alpha_objective`:
/// ∂/∂α_k = Ψ(∑α) − Ψ(α_k) + mean_batch[Ψ(γ_k) − Ψ(∑γ)].
pub fn alpha_gradient(gamma_batch: &[Vec<f64>], alpha: &DirichletParams) -> Result<Vec<f64>> {
    check_gamma_batch(gamma_batch, alpha.len(), "alpha_gradient")?;
    let psi_alpha_total = digamma(alpha.total())?;
    let mut grad = Vec::with_capacity(alpha.len());
    for a in alpha.values() {
        grad.push(psi_alpha_total - digamma(*a)?);
    }
    let scale = 1.0 / gamma_batch.len() as f64;
    for gamma in gamma_batch {
        let psi_total = digamma(gamma.iter().sum())?;
        for (g, out) in gamma.iter().zip(grad.iter_mut()) {
            *out += scale * (digamma(*g)? - psi_total);
        }
    }
    Ok(grad)
}

/// One plain ascent step α_k ← max(α_k + lr·grad_k, floor), keeping the
/// configured floor.
pub fn alpha_step(alpha: &DirichletParams, grad: &[f64], lr: f64) -> Result<DirichletParams> {
    check_same_k(alpha.len(), grad.len(), "alpha_step")?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("alpha_step gradient".into()));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::domain(format!("alpha_step lr must be positive, got {lr}")));
    }
    let next: Vec<f64> = alpha
        .values()
        .iter()
        .zip(grad)
        .map(|(a, g)| (a + lr * g).max(alpha.floor()))
        .collect();
    DirichletParams::with_floor(next, alpha.floor())
}
