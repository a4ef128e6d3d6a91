//! The training loop: per iteration, one discriminator ascent step on real
//! vs. sampled fakes, a per-noise-row variational E-step under the current
//! discriminator, responsibility-weighted ascent for every generator head
//! and the shared trunk, and one ascent step on the Dirichlet parameter —
//! with divergence guards, deterministic evaluation, and checkpointing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset2D;
use crate::error::{Error, Result};
use crate::gan::{
    ancestral_sample_fakes, bank_forward, discriminator_loss_and_grads, stratified_sample_fakes,
    weighted_generator_grads, DiscriminatorNet, GeneratorBank, NoiseBatch,
};
use crate::inference::{
    alpha_gradient, alpha_step, e_step, DirichletParams, LikelihoodVector, DEFAULT_ALPHA_MIN,
};
use crate::metrics::{
    default_min_count, estimate_spec_from_labeled, generator_usage, high_quality_ratio,
    mode_coverage, DEFAULT_CAPTURE_SIGMAS,
};
use crate::neural::{adam_update, adam_update_layers, AdamState, InitScheme, Matrix};
use crate::special_math::RngStream;

pub const CHECKPOINT_VERSION: u32 = 1;

// Arbitrary odd constants decorrelating the evaluation stream from the
// training stream; evaluation draws never advance the training RNG.
const EVAL_STREAM_SALT: u64 = 0xA076_1D64_78BD_642F;
const EVAL_ITER_MIX: u64 = 0xE703_7ED1_A0B4_28DB;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FakeSampling {
    /// Per fake: π ~ Dir(α), mode ~ Cat(π); count = real_batch.
    Ancestral,
    /// per_gen fakes from every head; count = K · per_gen.
    Stratified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaOptimizer {
    Sgd,
    Adam,
}

fn d_noise_dim() -> usize {
    256
}
fn d_gen_hidden() -> usize {
    128
}
fn d_disc_hidden() -> Vec<usize> {
    vec![128, 128]
}
fn d_lr_net() -> f64 {
    3e-4
}
fn d_lr_alpha() -> f64 {
    1e-3
}
fn d_beta1() -> f64 {
    0.5
}
fn d_beta2() -> f64 {
    0.999
}
fn d_epsilon() -> f64 {
    1e-8
}
fn d_real_batch() -> usize {
    64
}
fn d_per_gen() -> usize {
    12
}
fn d_m_noise() -> usize {
    64
}
fn d_fake_sampling() -> FakeSampling {
    FakeSampling::Stratified
}
fn d_alpha_optimizer() -> AlphaOptimizer {
    AlphaOptimizer::Adam
}
fn d_e_step_tol() -> f64 {
    1e-10
}
fn d_e_step_max_iter() -> usize {
    200
}
fn d_warmup() -> u64 {
    0
}
fn d_alpha_init() -> f64 {
    2.0
}
fn d_alpha_min() -> f64 {
    DEFAULT_ALPHA_MIN
}
fn d_total_iterations() -> u64 {
    10_000
}
fn d_eval_interval() -> u64 {
    100
}
fn d_eval_samples() -> usize {
    512
}
fn d_seed() -> u64 {
    0
}

/// Full training configuration. Only `K` is required in a config document;
/// every other field carries the synthetic-experiment default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default = "d_noise_dim")]
    pub noise_dim: usize,
    #[serde(default = "d_gen_hidden")]
    pub gen_hidden: usize,
    #[serde(default = "d_disc_hidden")]
    pub disc_hidden: Vec<usize>,
    #[serde(default = "d_lr_net")]
    pub lr_d: f64,
    #[serde(default = "d_lr_net")]
    pub lr_g: f64,
    #[serde(default = "d_lr_alpha")]
    pub lr_alpha: f64,
    #[serde(default = "d_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "d_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "d_epsilon")]
    pub adam_epsilon: f64,
    #[serde(default = "d_real_batch")]
    pub real_batch: usize,
    #[serde(default = "d_per_gen")]
    pub per_gen: usize,
    /// Noise rows per generator-phase update (the E-step batch size).
    #[serde(default = "d_m_noise")]
    pub m_noise: usize,
    #[serde(default = "d_fake_sampling")]
    pub fake_sampling: FakeSampling,
    #[serde(default = "d_alpha_optimizer")]
    pub alpha_optimizer: AlphaOptimizer,
    #[serde(default = "d_e_step_tol")]
    pub e_step_tol: f64,
    #[serde(default = "d_e_step_max_iter")]
    pub e_step_max_iter: usize,
    /// Iterations with responsibilities frozen at ω = 1/K, γ = α + 1/K.
    #[serde(default = "d_warmup")]
    pub warmup_iterations: u64,
    #[serde(default = "d_alpha_init")]
    pub alpha_init: f64,
    #[serde(default = "d_alpha_min")]
    pub alpha_min: f64,
    #[serde(default = "d_total_iterations")]
    pub total_iterations: u64,
    #[serde(default = "d_eval_interval")]
    pub eval_interval: u64,
    /// Stratified sample count per coverage evaluation (rounded down to a
    /// multiple of K).
    #[serde(default = "d_eval_samples")]
    pub eval_samples: usize,
    #[serde(default = "d_seed")]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 8,
            noise_dim: d_noise_dim(),
            gen_hidden: d_gen_hidden(),
            disc_hidden: d_disc_hidden(),
            lr_d: d_lr_net(),
            lr_g: d_lr_net(),
            lr_alpha: d_lr_alpha(),
            adam_beta1: d_beta1(),
            adam_beta2: d_beta2(),
            adam_epsilon: d_epsilon(),
            real_batch: d_real_batch(),
            per_gen: d_per_gen(),
            m_noise: d_m_noise(),
            fake_sampling: d_fake_sampling(),
            alpha_optimizer: d_alpha_optimizer(),
            e_step_tol: d_e_step_tol(),
            e_step_max_iter: d_e_step_max_iter(),
            warmup_iterations: d_warmup(),
            alpha_init: d_alpha_init(),
            alpha_min: d_alpha_min(),
            total_iterations: d_total_iterations(),
            eval_interval: d_eval_interval(),
            eval_samples: d_eval_samples(),
            seed: d_seed(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            (self.k, "K"),
            (self.noise_dim, "noise_dim"),
            (self.gen_hidden, "gen_hidden"),
            (self.real_batch, "real_batch"),
            (self.per_gen, "per_gen"),
            (self.m_noise, "m_noise"),
            (self.e_step_max_iter, "e_step_max_iter"),
            (self.eval_samples, "eval_samples"),
        ];
        for (v, name) in counts {
            if v == 0 {
                return Err(Error::domain(format!("{name} must be at least 1")));
            }
        }
        if self.disc_hidden.iter().any(|&w| w == 0) {
            return Err(Error::domain("disc_hidden widths must be at least 1"));
        }
        if self.eval_interval == 0 {
            return Err(Error::domain("eval_interval must be at least 1"));
        }
        let rates = [(self.lr_d, "lr_d"), (self.lr_g, "lr_g"), (self.lr_alpha, "lr_alpha")];
        for (v, name) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive")));
            }
        }
        if !(self.adam_beta1 >= 0.0 && self.adam_beta1 < 1.0)
            || !(self.adam_beta2 >= 0.0 && self.adam_beta2 < 1.0)
        {
            return Err(Error::domain("adam betas must lie in [0, 1)"));
        }
        if !(self.adam_epsilon > 0.0 && self.adam_epsilon.is_finite()) {
            return Err(Error::domain("adam_epsilon must be positive"));
        }
        if !(self.e_step_tol > 0.0 && self.e_step_tol.is_finite()) {
            return Err(Error::domain("e_step_tol must be positive"));
        }
        if !(self.alpha_min > 0.0 && self.alpha_min.is_finite()) {
            return Err(Error::domain("alpha_min must be positive"));
        }
        if !(self.alpha_init >= self.alpha_min && self.alpha_init.is_finite()) {
            return Err(Error::domain("alpha_init must be at least alpha_min"));
        }
        Ok(())
    }
}

/// Adam accumulators over a plain vector (used for α); congruent with the
/// network optimizer: bias-corrected, one step count per update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VecAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl VecAdam {
    pub fn new(n: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        VecAdam { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1, beta2, epsilon }
    }

    /// Bias-corrected ascent direction for this gradient (advances t).
    pub fn direction(&mut self, grad: &[f64]) -> Result<Vec<f64>> {
        if grad.len() != self.m.len() {
            return Err(Error::shape("adam direction: gradient length mismatch"));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("alpha gradient".into()));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut dir = Vec::with_capacity(grad.len());
        for i in 0..grad.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            dir.push((self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + self.epsilon));
        }
        Ok(dir)
    }
}

/// Everything a run owns; serializing this is the checkpoint body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config: TrainConfig,
    pub bank: GeneratorBank,
    pub disc: DiscriminatorNet,
    pub alpha: DirichletParams,
    pub adam_disc: AdamState,
    pub adam_heads: AdamState,
    pub adam_trunk: AdamState,
    pub alpha_adam: Option<VecAdam>,
    pub iteration: u64,
    pub rng: RngStream,
}

/// Per-iteration log line. The coverage fields are filled at evaluation
/// boundaries (and are null when the dataset carries no labels to estimate
/// a mixture from).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub d_loss: f64,
    pub g_losses: Vec<f64>,
    pub alpha: Vec<f64>,
    pub modes_covered: Option<usize>,
    pub hq_ratio: Option<f64>,
    pub usage_entropy: Option<f64>,
}

/// Coverage diagnostics from one deterministic evaluation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub modes_covered: Option<usize>,
    pub hq_ratio: Option<f64>,
    pub usage_entropy: f64,
}

/// Fresh state from a validated config. Draw order from the seed: generator
/// heads in mode order, then the trunk, then the discriminator.
pub fn init_state(cfg: &TrainConfig) -> Result<TrainState> {
    cfg.validate()?;
    let mut rng = RngStream::new(cfg.seed);
    let bank =
        GeneratorBank::init(cfg.k, cfg.noise_dim, cfg.gen_hidden, InitScheme::XavierUniform, &mut rng)?;
    let disc = DiscriminatorNet::init(&cfg.disc_hidden, InitScheme::XavierUniform, &mut rng)?;
    let alpha = DirichletParams::with_floor(vec![cfg.alpha_init; cfg.k], cfg.alpha_min)?;
    let adam_disc =
        AdamState::for_mlp(&disc.net, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, cfg.lr_d);
    let adam_heads =
        AdamState::for_layers(&bank.heads, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, cfg.lr_g);
    let adam_trunk =
        AdamState::for_mlp(&bank.trunk, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, cfg.lr_g);
    let alpha_adam = match cfg.alpha_optimizer {
        AlphaOptimizer::Adam => {
            Some(VecAdam::new(cfg.k, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon))
        }
        AlphaOptimizer::Sgd => None,
    };
    Ok(TrainState {
        config: cfg.clone(),
        bank,
        disc,
        alpha,
        adam_disc,
        adam_heads,
        adam_trunk,
        alpha_adam,
        iteration: 0,
        rng,
    })
}

fn guard<T>(iteration: u64, phase: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Divergence { iteration, detail: format!("{phase}: {e}") })
}

// Per-row responsibilities ω and Dirichlet posteriors γ for the generator
// and α phases. Frozen rows use ω = 1/K and γ = α + 1/K exactly.
pub(crate) fn responsibilities(
    scores: &Matrix,
    alpha: &DirichletParams,
    tol: f64,
    max_iter: usize,
    frozen: bool,
) -> Result<(Matrix, Vec<Vec<f64>>)> {
    let (m, k) = (scores.rows(), scores.cols());
    let mut weights = Matrix::zeros(m, k);
    let mut gammas = Vec::with_capacity(m);
    if frozen {
        let u = 1.0 / k as f64;
        let g: Vec<f64> = alpha.values().iter().map(|a| a + u).collect();
        for r in 0..m {
            weights.row_mut(r).fill(u);
            gammas.push(g.clone());
        }
        return Ok((weights, gammas));
    }
    for r in 0..m {
        let like = LikelihoodVector::new(scores.row(r).to_vec())?;
        let (vs, _) = e_step(&like, alpha, tol, max_iter)?;
        weights.row_mut(r).copy_from_slice(vs.omega.values());
        gammas.push(vs.gamma);
    }
    Ok((weights, gammas))
}

// A zero rate freezes α bitwise (useful as a null-step diagnostic); the
// floor clamp applies on every taken step.
fn apply_alpha_update(
    alpha: &DirichletParams,
    grad: &[f64],
    lr: f64,
    adam: Option<&mut VecAdam>,
) -> Result<DirichletParams> {
    if lr == 0.0 {
        return Ok(alpha.clone());
    }
    match adam {
        None => alpha_step(alpha, grad, lr),
        Some(st) => {
            let dir = st.direction(grad)?;
            let floor = alpha.floor();
            let next: Vec<f64> =
                alpha.values().iter().zip(&dir).map(|(a, d)| (a + lr * d).max(floor)).collect();
            DirichletParams::with_floor(next, floor)
        }
    }
}

/// Deterministic coverage evaluation: stratified fakes from a stream salted
/// with the config seed and the iteration index, never touching the
/// training RNG. Coverage needs a labeled dataset to estimate the mixture;
/// without labels those fields are None.
pub fn eval_state(state: &TrainState, dataset: &Dataset2D) -> Result<EvalSummary> {
    let cfg = &state.config;
    let mut rng = RngStream::new(
        cfg.seed ^ EVAL_STREAM_SALT ^ state.iteration.wrapping_mul(EVAL_ITER_MIX),
    );
    let per_gen = (cfg.eval_samples / cfg.k).max(1);
    let fakes = stratified_sample_fakes(&state.bank, per_gen, &mut rng)?;
    let (_, usage_entropy) = generator_usage(&fakes)?;
    let (modes_covered, hq_ratio) = match estimate_spec_from_labeled(dataset) {
        Ok(spec) => {
            let min_count = default_min_count(fakes.samples.rows());
            let (covered, _) =
                mode_coverage(&fakes.samples, &spec, DEFAULT_CAPTURE_SIGMAS, min_count)?;
            let hq = high_quality_ratio(&fakes.samples, &spec, DEFAULT_CAPTURE_SIGMAS)?;
            (Some(covered), Some(hq))
        }
        Err(_) => (None, None),
    };
    Ok(EvalSummary { modes_covered, hq_ratio, usage_entropy })
}

/// One full iteration, in order: (1) sample fakes (stratified or ancestral)
/// then a uniform-with-replacement real batch, ascend the discriminator;
/// (2) fresh generator noise, per-row E-step responsibilities under the
/// just-updated discriminator (frozen at 1/K during warmup), ascend every
/// head and the trunk on the weighted objective; (3) ascend α on the
/// batch's Dirichlet posteriors with the floor clamp. Any non-finite value
/// aborts with the offending sub-step named. Coverage metrics are attached
/// when the post-step iteration lands on an evaluation boundary.
pub fn train_step(mut state: TrainState, dataset: &Dataset2D) -> Result<(TrainState, MetricsRecord)> {
    let cfg = state.config.clone();
    let it = state.iteration;

    // discriminator phase
    let fakes = guard(
        it,
        "fake sampling",
        match cfg.fake_sampling {
            FakeSampling::Stratified => {
                stratified_sample_fakes(&state.bank, cfg.per_gen, &mut state.rng)
            }
            FakeSampling::Ancestral => {
                ancestral_sample_fakes(&state.bank, &state.alpha, cfg.real_batch, &mut state.rng)
            }
        },
    )?;
    let n = dataset.len() as u64;
    let mut real = Matrix::zeros(cfg.real_batch, 2);
    for r in 0..cfg.real_batch {
        let idx = (state.rng.next_u64() % n) as usize;
        real.row_mut(r).copy_from_slice(dataset.samples().row(idx));
    }
    let (d_loss, d_grads) = guard(
        it,
        "discriminator objective",
        discriminator_loss_and_grads(&state.disc, &real, &fakes),
    )?;
    guard(
        it,
        "discriminator update",
        adam_update(&mut state.adam_disc, &mut state.disc.net, &d_grads, true),
    )?;
    if !state.disc.net.all_finite() {
        return Err(Error::Divergence {
            iteration: it,
            detail: "discriminator parameters became non-finite".into(),
        });
    }

    // generator phase: one bank forward serves both the E-step and the update
    let noise = guard(
        it,
        "generator noise",
        NoiseBatch::uniform(cfg.m_noise, cfg.noise_dim, &mut state.rng),
    )?;
    let fwd = guard(it, "generator forward", bank_forward(&state.bank, &state.disc, &noise))?;
    let frozen = it < cfg.warmup_iterations;
    let (weights, gammas) = guard(
        it,
        "responsibilities",
        responsibilities(&fwd.scores, &state.alpha, cfg.e_step_tol, cfg.e_step_max_iter, frozen),
    )?;
    let (g_losses, head_grads, trunk_grads) = guard(
        it,
        "generator objective",
        weighted_generator_grads(&state.bank, &state.disc, &fwd, &weights),
    )?;
    guard(
        it,
        "head update",
        adam_update_layers(&mut state.adam_heads, &mut state.bank.heads, &head_grads, true),
    )?;
    guard(
        it,
        "trunk update",
        adam_update(&mut state.adam_trunk, &mut state.bank.trunk, &trunk_grads, true),
    )?;
    if !state.bank.all_finite() {
        return Err(Error::Divergence {
            iteration: it,
            detail: "generator parameters became non-finite".into(),
        });
    }

    // alpha phase on this batch's posteriors
    let grad = guard(it, "alpha gradient", alpha_gradient(&gammas, &state.alpha))?;
    state.alpha = guard(
        it,
        "alpha update",
        apply_alpha_update(&state.alpha, &grad, cfg.lr_alpha, state.alpha_adam.as_mut()),
    )?;

    state.iteration += 1;
    let mut record = MetricsRecord {
        iteration: state.iteration,
        d_loss,
        g_losses,
        alpha: state.alpha.values().to_vec(),
        modes_covered: None,
        hq_ratio: None,
        usage_entropy: None,
    };
    if state.iteration % cfg.eval_interval == 0 {
        let summary = guard(state.iteration, "evaluation", eval_state(&state, dataset))?;
        record.modes_covered = summary.modes_covered;
        record.hq_ratio = summary.hq_ratio;
        record.usage_entropy = Some(summary.usage_entropy);
    }
    Ok((state, record))
}

/// Run total_iterations steps from a fresh state, keeping the records that
/// land on evaluation boundaries plus a final evaluated record when the run
/// length is not a multiple of the interval.
pub fn train(cfg: &TrainConfig, dataset: &Dataset2D) -> Result<(TrainState, Vec<MetricsRecord>)> {
    let mut state = init_state(cfg)?;
    let mut records = Vec::new();
    for _ in 0..cfg.total_iterations {
        let (next, record) = train_step(state, dataset)?;
        state = next;
        if state.iteration % cfg.eval_interval == 0 {
            records.push(record);
        } else if state.iteration == cfg.total_iterations {
            let summary = eval_state(&state, dataset)?;
            records.push(MetricsRecord {
                modes_covered: summary.modes_covered,
                hq_ratio: summary.hq_ratio,
                usage_entropy: Some(summary.usage_entropy),
                ..record
            });
        }
    }
    Ok((state, records))
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    version: u32,
    state: TrainState,
}

/// Single JSON document: version, config echo, parameters, optimizer
/// accumulators, iteration counter, and the RNG state — everything needed
/// to resume bit-exactly.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let doc = CheckpointDoc { version: CHECKPOINT_VERSION, state: state.clone() };
    let mut body = serde_json::to_string(&doc)?;
    body.push('\n');
    std::fs::write(path, body).map_err(crate::error::annotate_io(path))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let text = std::fs::read_to_string(path).map_err(crate::error::annotate_io(path))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == CHECKPOINT_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::Checkpoint(format!(
                "version {v} is not supported (expected {CHECKPOINT_VERSION})"
            )))
        }
        None => return Err(Error::Checkpoint("missing version field".into())),
    }
    let mut de = serde_json::Deserializer::from_str(&text);
    // path-qualified errors: "state.bank.heads[3].weights[10]: ..."
    let doc: CheckpointDoc = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| Error::Checkpoint(format!("{} at {}: {}", path.display(), e.path(), e.inner())))?;
    Ok(doc.state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ring_spec, sample_mixture};
    use crate::inference::alpha_objective;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            k: 2,
            noise_dim: 4,
            gen_hidden: 4,
            disc_hidden: vec![8],
            real_batch: 8,
            per_gen: 3,
            m_noise: 8,
            eval_samples: 16,
            e_step_tol: 1e-8,
            e_step_max_iter: 100,
            total_iterations: 6,
            eval_interval: 2,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    fn tiny_dataset(seed: u64) -> Dataset2D {
        sample_mixture(&ring_spec(2, 2.0, 0.08), 64, &mut RngStream::new(seed))
    }

    fn state_fingerprint(state: &TrainState) -> String {
        serde_json::to_string(state).unwrap()
    }

    #[test]
    fn zero_rates_leave_parameters_bitwise_unchanged() {
        let mut cfg = tiny_config();
        cfg.lr_d = 0.0;
        cfg.lr_g = 0.0;
        cfg.lr_alpha = 0.0;
        // bypass validate(): zero rates are a diagnostic mode for train_step
        let state = {
            let mut ok = cfg.clone();
            ok.lr_d = 1.0;
            ok.lr_g = 1.0;
            ok.lr_alpha = 1.0;
            let mut s = init_state(&ok).unwrap();
            s.config = cfg;
            s.adam_disc.lr = 0.0;
            s.adam_heads.lr = 0.0;
            s.adam_trunk.lr = 0.0;
            s
        };
        let ds = tiny_dataset(1);
        let before_bank = serde_json::to_string(&state.bank).unwrap();
        let before_disc = serde_json::to_string(&state.disc).unwrap();
        let before_alpha = serde_json::to_string(&state.alpha).unwrap();
        let (after, record) = train_step(state, &ds).unwrap();
        assert_eq!(serde_json::to_string(&after.bank).unwrap(), before_bank);
        assert_eq!(serde_json::to_string(&after.disc).unwrap(), before_disc);
        assert_eq!(serde_json::to_string(&after.alpha).unwrap(), before_alpha);
        assert_eq!(record.g_losses.len(), 2, "E-step and losses still reported");
        assert!(record.d_loss.is_finite());
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let mut cfg = tiny_config();
        cfg.k = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.lr_d = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.alpha_init = 1e-5;
        cfg.alpha_min = 1e-3;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.adam_beta1 = 1.0;
        assert!(cfg.validate().is_err());
        assert!(tiny_config().validate().is_ok());
    }

    #[test]
    fn config_json_requires_only_k() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"K": 8}"#).unwrap();
        assert_eq!(cfg, TrainConfig::default());

        let err = serde_json::from_str::<TrainConfig>("{}").unwrap_err();
        assert!(err.to_string().contains("K"), "error should name the missing key: {err}");

        let err = serde_json::from_str::<TrainConfig>(r#"{"K": 8, "typo_key": 1}"#).unwrap_err();
        assert!(err.to_string().contains("typo_key"));
    }

    #[test]
    fn frozen_responsibilities_are_exactly_uniform() {
        let alpha = DirichletParams::new(vec![2.0, 3.0, 4.0]).unwrap();
        let scores = Matrix::from_rows(vec![vec![0.9, 0.1, 0.4], vec![0.2, 0.8, 0.6]]).unwrap();
        let (w, gammas) = responsibilities(&scores, &alpha, 1e-10, 100, true).unwrap();
        let third = 1.0 / 3.0;
        assert!(w.data().iter().all(|&v| v == third));
        for g in &gammas {
            assert_eq!(g, &vec![2.0 + third, 3.0 + third, 4.0 + third]);
        }

        // unfrozen rows sit at the E-step fixed point instead
        let (w2, _) = responsibilities(&scores, &alpha, 1e-10, 100, false).unwrap();
        assert!(w2.data().iter().any(|&v| (v - third).abs() > 0.05));
        for r in 0..2 {
            assert!((w2.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn step_isolation_between_phases() {
        // zero generator/alpha rates: discriminator moves, bank and α do not
        let mut s = init_state(&tiny_config()).unwrap();
        s.adam_heads.lr = 0.0;
        s.adam_trunk.lr = 0.0;
        s.config.lr_alpha = 0.0;
        let ds = tiny_dataset(2);
        let bank_before = serde_json::to_string(&s.bank).unwrap();
        let alpha_before = serde_json::to_string(&s.alpha).unwrap();
        let disc_before = serde_json::to_string(&s.disc).unwrap();
        let (s, _) = train_step(s, &ds).unwrap();
        assert_eq!(serde_json::to_string(&s.bank).unwrap(), bank_before);
        assert_eq!(serde_json::to_string(&s.alpha).unwrap(), alpha_before);
        assert_ne!(serde_json::to_string(&s.disc).unwrap(), disc_before);

        // zero discriminator rate: bank moves, discriminator does not
        let mut s = init_state(&tiny_config()).unwrap();
        s.adam_disc.lr = 0.0;
        let disc_before = serde_json::to_string(&s.disc).unwrap();
        let bank_before = serde_json::to_string(&s.bank).unwrap();
        let (s, _) = train_step(s, &ds).unwrap();
        assert_eq!(serde_json::to_string(&s.disc).unwrap(), disc_before);
        assert_ne!(serde_json::to_string(&s.bank).unwrap(), bank_before);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_config();
        let ds = tiny_dataset(3);
        let (s1, r1) = train(&cfg, &ds).unwrap();
        let (s2, r2) = train(&cfg, &ds).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(state_fingerprint(&s1), state_fingerprint(&s2));

        let mut other = cfg.clone();
        other.seed = 8;
        let (s3, _) = train(&other, &ds).unwrap();
        assert_ne!(state_fingerprint(&s1), state_fingerprint(&s3));
    }

    #[test]
    fn zero_iterations_returns_initial_state() {
        let mut cfg = tiny_config();
        cfg.total_iterations = 0;
        let ds = tiny_dataset(4);
        let (state, records) = train(&cfg, &ds).unwrap();
        assert_eq!(state.iteration, 0);
        assert!(records.is_empty());
        assert_eq!(state_fingerprint(&state), state_fingerprint(&init_state(&cfg).unwrap()));
    }

    #[test]
    fn metrics_cadence_and_final_record() {
        let mut cfg = tiny_config();
        cfg.total_iterations = 7;
        cfg.eval_interval = 3;
        let ds = tiny_dataset(5);
        let (_, records) = train(&cfg, &ds).unwrap();
        let iters: Vec<u64> = records.iter().map(|r| r.iteration).collect();
        assert_eq!(iters, vec![3, 6, 7]);
        for r in &records {
            assert!(r.usage_entropy.is_some(), "boundary records carry eval fields");
            assert!(r.modes_covered.is_some());
            assert!(r.hq_ratio.is_some());
        }
    }

    #[test]
    fn alpha_stays_above_floor_and_ascends_objective() {
        // trajectory: every reported α respects the floor
        let mut cfg = tiny_config();
        cfg.total_iterations = 20;
        cfg.eval_interval = 1;
        cfg.lr_alpha = 0.5;
        let ds = tiny_dataset(6);
        let (_, records) = train(&cfg, &ds).unwrap();
        for r in &records {
            assert!(r.alpha.iter().all(|&a| a >= cfg.alpha_min));
        }

        // plain ascent on a fixed γ batch is monotone at lr ≤ 1e-3
        let alpha0 = DirichletParams::new(vec![2.0, 2.0, 2.0]).unwrap();
        let gammas = vec![
            vec![2.9, 2.2, 2.05],
            vec![2.1, 2.8, 2.25],
            vec![2.4, 2.3, 2.45],
        ];
        let mut alpha = alpha0;
        let mut prev = alpha_objective(&gammas, &alpha).unwrap();
        for _ in 0..100 {
            let g = alpha_gradient(&gammas, &alpha).unwrap();
            alpha = alpha_step(&alpha, &g, 1e-3).unwrap();
            let obj = alpha_objective(&gammas, &alpha).unwrap();
            assert!(obj >= prev - 1e-12, "objective fell from {prev} to {obj}");
            prev = obj;
        }
    }

    #[test]
    fn warmup_freezes_until_the_threshold() {
        let mut cfg = tiny_config();
        cfg.warmup_iterations = u64::MAX;
        cfg.total_iterations = 3;
        cfg.eval_interval = 1;
        let ds = tiny_dataset(7);
        // with frozen uniform weights every generator's loss is the plain
        // mean scaled by 1/K, so the per-mode losses relate through their
        // score sums; cheap observable: α still moves on the frozen γ, and
        // the run completes without an E-step ever executing
        let (state, records) = train(&cfg, &ds).unwrap();
        assert_eq!(state.iteration, 3);
        assert_eq!(records.len(), 3);

        // direct check of the freeze rule at the weights level
        let s = init_state(&cfg).unwrap();
        let noise = NoiseBatch::uniform(4, cfg.noise_dim, &mut RngStream::new(9)).unwrap();
        let fwd = bank_forward(&s.bank, &s.disc, &noise).unwrap();
        let (w, _) = responsibilities(&fwd.scores, &s.alpha, 1e-10, 100, true).unwrap();
        assert!(w.data().iter().all(|&v| v == 0.5));
    }

    fn tmp_path(tag: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("ldagan_ckpt_{}_{}.json", tag, std::process::id()))
    }

    #[test]
    fn checkpoint_round_trips_bitwise_and_resumes_identically() {
        let cfg = tiny_config();
        let ds = tiny_dataset(8);
        let (mut state, _) = train(&cfg, &ds).unwrap();

        let path = tmp_path("rt");
        save_checkpoint(&state, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(state_fingerprint(&state), state_fingerprint(&loaded));
        save_checkpoint(&loaded, &path).unwrap();
        let bytes1 = std::fs::read(&path).unwrap();
        save_checkpoint(&state, &path).unwrap();
        assert_eq!(bytes1, std::fs::read(&path).unwrap(), "save→load→save is byte-stable");

        // resume equivalence: 3 more steps straight vs. through a checkpoint
        let mut direct = state.clone();
        for _ in 0..3 {
            let (next, _) = train_step(direct, &ds).unwrap();
            direct = next;
        }
        let mut resumed = loaded;
        for _ in 0..3 {
            let (next, _) = train_step(resumed, &ds).unwrap();
            resumed = next;
        }
        assert_eq!(state_fingerprint(&direct), state_fingerprint(&resumed));

        // mutate after load to prove the two are independent copies
        state.iteration += 1;
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn checkpoint_rejects_bad_documents() {
        let cfg = tiny_config();
        let state = init_state(&cfg).unwrap();
        let path = tmp_path("bad");
        save_checkpoint(&state, &path).unwrap();

        let body = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &body[..body.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));

        let mut v: serde_json::Value = serde_json::from_str(&body).unwrap();
        v["version"] = serde_json::json!(99);
        std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("version"), "{msg}"),
            other => panic!("expected version error, got {other:?}"),
        }

        let mut v: serde_json::Value = serde_json::from_str(&body).unwrap();
        v["state"]["bank"]["heads"][0]["weights"][0][0] = serde_json::json!("oops");
        std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Checkpoint(msg)) => {
                assert!(msg.contains("state.bank.heads[0]"), "path missing in: {msg}")
            }
            other => panic!("expected parse-path error, got {other:?}"),
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn divergence_names_the_substep() {
        let cfg = tiny_config();
        let ds = tiny_dataset(9);

        let mut s = init_state(&cfg).unwrap();
        s.disc.net.layers[0].weights.set(0, 0, f64::NAN);
        match train_step(s, &ds) {
            Err(Error::Divergence { detail, .. }) => {
                assert!(detail.contains("discriminator"), "{detail}")
            }
            other => panic!("expected divergence, got {other:?}"),
        }

        let mut s = init_state(&cfg).unwrap();
        s.bank.heads[0].weights.set(0, 0, f64::NAN);
        assert!(train_step(s, &ds).is_err());
    }

    #[test]
    fn ancestral_sampling_mode_runs() {
        let mut cfg = tiny_config();
        cfg.fake_sampling = FakeSampling::Ancestral;
        cfg.total_iterations = 3;
        let ds = tiny_dataset(10);
        let (state, _) = train(&cfg, &ds).unwrap();
        assert_eq!(state.iteration, 3);
    }

    #[test]
    fn sgd_alpha_optimizer_runs_and_checkpoint_omits_adam() {
        let mut cfg = tiny_config();
        cfg.alpha_optimizer = AlphaOptimizer::Sgd;
        cfg.total_iterations = 3;
        let ds = tiny_dataset(11);
        let (state, _) = train(&cfg, &ds).unwrap();
        assert!(state.alpha_adam.is_none());
        let js = serde_json::to_string(&state).unwrap();
        let back: TrainState = serde_json::from_str(&js).unwrap();
        assert_eq!(state_fingerprint(&state), state_fingerprint(&back));
    }
}
