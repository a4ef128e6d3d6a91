//! Mode-conditional generator bank, the shared discriminator, both
//! adversarial objectives with exact reverse-mode gradients, and the two
//! fake-batch samplers (ancestral and stratified).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{DirichletParams, PROB_EPS};
use crate::neural::{
    backward_layers, forward_layers, init_layer, init_mlp, Activation, ForwardTrace,
    GradientBuffer, InitScheme, LayerGrads, LayerParams, Matrix, MlpParams,
};
use crate::special_math::{sample_categorical, sample_dirichlet, RngStream};

/// ln(1 + e^t) without overflow on either tail. The adversarial log-losses
/// are ln σ(t) = −softplus(−t) and ln(1 − σ(t)) = −softplus(t); evaluating
/// them from the logit keeps value and gradient finite and mutually
/// consistent even where σ rounds to 0 or 1.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Batch of latent draws, one row per sample, every entry in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBatch(Matrix);

impl NoiseBatch {
    pub fn new(rows: Matrix) -> Result<Self> {
        if rows.rows() == 0 || rows.cols() == 0 {
            return Err(Error::shape("noise batch must be non-empty"));
        }
        if rows.data().iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::domain("noise entries must lie in [-1, 1]"));
        }
        Ok(NoiseBatch(rows))
    }

    /// Uniform draws in [-1, 1), filled row-major with one primitive draw
    /// per entry.
    pub fn uniform(m: usize, dim: usize, rng: &mut RngStream) -> Result<Self> {
        if m == 0 || dim == 0 {
            return Err(Error::shape("noise batch must be non-empty"));
        }
        let mut mat = Matrix::zeros(m, dim);
        for v in mat.data_mut() {
            *v = rng.next_range(-1.0, 1.0);
        }
        Ok(NoiseBatch(mat))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }
}

#[derive(Serialize, Deserialize)]
struct RawBank {
    k: usize,
    noise_dim: usize,
    heads: Vec<LayerParams>,
    trunk: MlpParams,
}

/// One mode-specific input layer per generator feeding a single shared
/// trunk that maps the common hidden code to a 2-D sample. The untied heads
/// are what let modes specialize; the trunk is where they share statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBank", into = "RawBank")]
pub struct GeneratorBank {
    pub heads: Vec<LayerParams>,
    pub trunk: MlpParams,
}

impl GeneratorBank {
    /// Every head must share input and output widths, the trunk must accept
    /// the head output, and the trunk must emit 2-D samples.
    pub fn new(heads: Vec<LayerParams>, trunk: MlpParams) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::shape("generator bank needs at least one head"));
        }
        let in_dim = heads[0].in_dim();
        let out_dim = heads[0].out_dim();
        if heads.iter().any(|h| h.in_dim() != in_dim || h.out_dim() != out_dim) {
            return Err(Error::shape("generator heads must share dimensions"));
        }
        if trunk.in_dim() != out_dim {
            return Err(Error::shape(format!(
                "trunk input {} does not match head output {}",
                trunk.in_dim(),
                out_dim
            )));
        }
        if trunk.out_dim() != 2 {
            return Err(Error::shape("generator trunk must emit 2-D samples"));
        }
        Ok(GeneratorBank { heads, trunk })
    }

    /// ReLU heads (drawn in mode order) followed by a single affine trunk
    /// layer hidden -> 2.
    pub fn init(
        k: usize,
        noise_dim: usize,
        hidden: usize,
        scheme: InitScheme,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::shape("generator bank needs at least one head"));
        }
        let mut heads = Vec::with_capacity(k);
        for _ in 0..k {
            heads.push(init_layer(hidden, noise_dim, Activation::Relu, scheme, rng)?);
        }
        let trunk = init_mlp(&[hidden, 2], &[Activation::Identity], scheme, rng)?;
        GeneratorBank::new(heads, trunk)
    }

    pub fn k(&self) -> usize {
        self.heads.len()
    }

    pub fn noise_dim(&self) -> usize {
        self.heads[0].in_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.heads[0].out_dim()
    }

    pub fn all_finite(&self) -> bool {
        self.heads.iter().all(LayerParams::all_finite) && self.trunk.all_finite()
    }
}

impl TryFrom<RawBank> for GeneratorBank {
    type Error = Error;

    fn try_from(raw: RawBank) -> Result<Self> {
        let bank = GeneratorBank::new(raw.heads, raw.trunk)?;
        if raw.k != bank.k() || raw.noise_dim != bank.noise_dim() {
            return Err(Error::shape("bank header disagrees with stored layers"));
        }
        Ok(bank)
    }
}

impl From<GeneratorBank> for RawBank {
    fn from(bank: GeneratorBank) -> RawBank {
        RawBank {
            k: bank.k(),
            noise_dim: bank.noise_dim(),
            heads: bank.heads,
            trunk: bank.trunk,
        }
    }
}

/// Shared discriminator: 2-D input, single sigmoid output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpParams", into = "MlpParams")]
pub struct DiscriminatorNet {
    pub net: MlpParams,
}

impl DiscriminatorNet {
    pub fn new(net: MlpParams) -> Result<Self> {
        if net.in_dim() != 2 {
            return Err(Error::shape("discriminator input must be 2-D"));
        }
        if net.out_dim() != 1 {
            return Err(Error::shape("discriminator must have one output unit"));
        }
        let last = net.layers.last().expect("validated non-empty");
        if last.activation != Activation::Sigmoid {
            return Err(Error::domain("discriminator output must be a sigmoid"));
        }
        Ok(DiscriminatorNet { net })
    }

    /// ReLU hidden layers of the given widths; the sigmoid head is implicit.
    pub fn init(hidden: &[usize], scheme: InitScheme, rng: &mut RngStream) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(2);
        dims.extend_from_slice(hidden);
        dims.push(1);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(Activation::Sigmoid);
        DiscriminatorNet::new(init_mlp(&dims, &acts, scheme, rng)?)
    }
}

impl TryFrom<MlpParams> for DiscriminatorNet {
    type Error = Error;

    fn try_from(net: MlpParams) -> Result<Self> {
        DiscriminatorNet::new(net)
    }
}

impl From<DiscriminatorNet> for MlpParams {
    fn from(d: DiscriminatorNet) -> MlpParams {
        d.net
    }
}

/// Generated samples plus the provenance needed to reuse them: which head
/// produced each row and the exact noise that fed it.
#[derive(Debug, Clone, PartialEq)]
pub struct FakeBatch {
    pub samples: Matrix,
    pub mode_ids: Vec<usize>,
    pub noise: NoiseBatch,
}

/// One sample from head `k`. `z` must lie in [-1, 1]^noise_dim.
pub fn generate(bank: &GeneratorBank, k: usize, z: &[f64]) -> Result<[f64; 2]> {
    if k >= bank.k() {
        return Err(Error::shape(format!("head {} of {}", k, bank.k())));
    }
    if z.len() != bank.noise_dim() {
        return Err(Error::shape(format!(
            "noise width {} does not match generator input {}",
            z.len(),
            bank.noise_dim()
        )));
    }
    if z.iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
        return Err(Error::domain("noise entries must lie in [-1, 1]"));
    }
    let input = Matrix::from_flat(1, z.len(), z.to_vec())?;
    let head = forward_layers(std::slice::from_ref(&bank.heads[k]), &input)?;
    let trunk = forward_layers(&bank.trunk.layers, head.output())?;
    let out = trunk.output().row(0);
    Ok([out[0], out[1]])
}

/// Probability the discriminator assigns to each row, clamped away from 0
/// and 1 so downstream logs and ratios stay finite.
pub fn discriminate(d: &DiscriminatorNet, x: &Matrix) -> Result<Vec<f64>> {
    let trace = forward_layers(&d.net.layers, x)?;
    Ok(trace
        .output()
        .data()
        .iter()
        .map(|p| p.clamp(PROB_EPS, 1.0 - PROB_EPS))
        .collect())
}

/// Value and exact gradient of the discriminator ascent objective
///   (1/M_r) Σ ln D(x) + (1/M_f) Σ ln(1 − D(x̃)).
/// The final sigmoid is differentiated analytically (∂/∂pre is (1 − σ)/M_r
/// on real rows and −σ/M_f on fake rows), so saturation cannot produce
/// inf · 0.
pub fn discriminator_loss_and_grads(
    d: &DiscriminatorNet,
    real: &Matrix,
    fake: &FakeBatch,
) -> Result<(f64, GradientBuffer)> {
    if real.rows() == 0 || fake.samples.rows() == 0 {
        return Err(Error::shape("empty batch in discriminator objective"));
    }
    let tr = forward_layers(&d.net.layers, real)?;
    let tf = forward_layers(&d.net.layers, &fake.samples)?;
    let m_r = real.rows() as f64;
    let m_f = fake.samples.rows() as f64;

    let mut loss = 0.0;
    for &t in tr.pre.last().expect("non-empty net").data() {
        loss -= softplus(-t) / m_r;
    }
    for &t in tf.pre.last().expect("non-empty net").data() {
        loss -= softplus(t) / m_f;
    }

    let mut d_real = Matrix::zeros(real.rows(), 1);
    for (g, &s) in d_real
        .data_mut()
        .iter_mut()
        .zip(tr.post.last().expect("non-empty net").data())
    {
        *g = (1.0 - s) / m_r;
    }
    let mut d_fake = Matrix::zeros(fake.samples.rows(), 1);
    for (g, &s) in d_fake
        .data_mut()
        .iter_mut()
        .zip(tf.post.last().expect("non-empty net").data())
    {
        *g = -s / m_f;
    }

    let (gr, _) = backward_layers(&d.net.layers, &tr, &d_real, true, true, false)?;
    let (gf, _) = backward_layers(&d.net.layers, &tf, &d_fake, true, true, false)?;
    let mut buf = GradientBuffer { layers: gr.expect("param grads requested") };
    buf.add_assign(&GradientBuffer { layers: gf.expect("param grads requested") });
    Ok((loss, buf))
}

/// Per-mode forward pass kept together so a single evaluation can serve both
/// the responsibility computation and the generator update.
pub(crate) struct BankForward {
    pub head_traces: Vec<ForwardTrace>,
    pub trunk_traces: Vec<ForwardTrace>,
    pub disc_traces: Vec<ForwardTrace>,
    /// scores[(m, k)] = D(G_k(z_m)), unclamped.
    pub scores: Matrix,
}

pub(crate) fn bank_forward(
    bank: &GeneratorBank,
    d: &DiscriminatorNet,
    noise: &NoiseBatch,
) -> Result<BankForward> {
    if noise.dim() != bank.noise_dim() {
        return Err(Error::shape(format!(
            "noise width {} does not match generator input {}",
            noise.dim(),
            bank.noise_dim()
        )));
    }
    let m = noise.len();
    let kk = bank.k();
    let mut head_traces = Vec::with_capacity(kk);
    let mut trunk_traces = Vec::with_capacity(kk);
    let mut disc_traces = Vec::with_capacity(kk);
    let mut scores = Matrix::zeros(m, kk);
    for k in 0..kk {
        let h = forward_layers(std::slice::from_ref(&bank.heads[k]), noise.matrix())?;
        let t = forward_layers(&bank.trunk.layers, h.output())?;
        let s = forward_layers(&d.net.layers, t.output())?;
        for r in 0..m {
            scores.set(r, k, s.output().at(r, 0));
        }
        head_traces.push(h);
        trunk_traces.push(t);
        disc_traces.push(s);
    }
    Ok(BankForward { head_traces, trunk_traces, disc_traces, scores })
}

pub(crate) fn weighted_generator_grads(
    bank: &GeneratorBank,
    d: &DiscriminatorNet,
    fwd: &BankForward,
    weights: &Matrix,
) -> Result<(Vec<f64>, Vec<LayerGrads>, GradientBuffer)> {
    let m = fwd.scores.rows();
    let kk = bank.k();
    if weights.rows() != m || weights.cols() != kk {
        return Err(Error::shape(format!(
            "weights {}x{} for {} samples and {} modes",
            weights.rows(),
            weights.cols(),
            m,
            kk
        )));
    }
    for r in 0..m {
        let row = weights.row(r);
        if row.iter().any(|w| !w.is_finite() || *w < 0.0)
            || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::domain("weight rows must be simplex vectors"));
        }
    }

    let mf = m as f64;
    let mut losses = Vec::with_capacity(kk);
    let mut head_grads = Vec::with_capacity(kk);
    let mut trunk_grads = GradientBuffer::zeros_like(&bank.trunk);
    for k in 0..kk {
        let pre = fwd.disc_traces[k].pre.last().expect("non-empty net");
        let post = fwd.disc_traces[k].post.last().expect("non-empty net");
        // L_k = (1/M) Σ_m w_mk ln σ(pre_mk); ∂L_k/∂pre_mk = w_mk (1 − σ)/M.
        let mut loss_k = 0.0;
        let mut dpre = Matrix::zeros(m, 1);
        for r in 0..m {
            let w = weights.at(r, k);
            if w == 0.0 {
                continue;
            }
            loss_k -= w * softplus(-pre.at(r, 0)) / mf;
            dpre.set(r, 0, w * (1.0 - post.at(r, 0)) / mf);
        }
        let (_, dx) = backward_layers(&d.net.layers, &fwd.disc_traces[k], &dpre, true, false, true)?;
        let (tg, dh) =
            backward_layers(&bank.trunk.layers, &fwd.trunk_traces[k], &dx, false, true, true)?;
        trunk_grads.add_assign(&GradientBuffer { layers: tg.expect("param grads requested") });
        let (hg, _) = backward_layers(
            std::slice::from_ref(&bank.heads[k]),
            &fwd.head_traces[k],
            &dh,
            false,
            true,
            false,
        )?;
        head_grads.push(hg.expect("param grads requested").pop().expect("one head layer"));
        losses.push(loss_k);
    }
    Ok((losses, head_grads, trunk_grads))
}

/// Per-mode non-saturating generator objectives
///   L_k = (1/M) Σ_m ω_mk ln D(G_k(z_m)),
/// their exact ascent gradients for every head, and the trunk gradient
/// summed over modes. The discriminator is held fixed and contributes only
/// its input gradient. Weight rows must be simplex vectors; a zero weight
/// contributes nothing to either value or gradient.
pub fn generator_loss_and_grads(
    bank: &GeneratorBank,
    d: &DiscriminatorNet,
    noise: &NoiseBatch,
    weights: &Matrix,
) -> Result<(Vec<f64>, Vec<LayerGrads>, GradientBuffer)> {
    let fwd = bank_forward(bank, d, noise)?;
    weighted_generator_grads(bank, d, &fwd, weights)
}

// Forward each row through its mode's head, batched mode by mode; row order
// of the output matches the input.
fn forward_grouped(bank: &GeneratorBank, noise: &NoiseBatch, mode_ids: &[usize]) -> Result<Matrix> {
    let m = noise.len();
    let mut samples = Matrix::zeros(m, 2);
    for k in 0..bank.k() {
        let rows: Vec<usize> = (0..m).filter(|&r| mode_ids[r] == k).collect();
        if rows.is_empty() {
            continue;
        }
        let mut sub = Matrix::zeros(rows.len(), noise.dim());
        for (i, &r) in rows.iter().enumerate() {
            sub.row_mut(i).copy_from_slice(noise.matrix().row(r));
        }
        let head = forward_layers(std::slice::from_ref(&bank.heads[k]), &sub)?;
        let trunk = forward_layers(&bank.trunk.layers, head.output())?;
        for (i, &r) in rows.iter().enumerate() {
            samples.row_mut(r).copy_from_slice(trunk.output().row(i));
        }
    }
    Ok(samples)
}

/// Hierarchical draw, row by row: π ~ Dir(α), mode ~ Cat(π), then the noise
/// row left to right — in exactly that primitive-draw order. Rows are then
/// generated by their assigned heads.
pub fn ancestral_sample_fakes(
    bank: &GeneratorBank,
    alpha: &DirichletParams,
    m: usize,
    rng: &mut RngStream,
) -> Result<FakeBatch> {
    if alpha.len() != bank.k() {
        return Err(Error::shape(format!(
            "alpha has {} modes, bank has {}",
            alpha.len(),
            bank.k()
        )));
    }
    if m == 0 {
        return Err(Error::shape("empty fake batch"));
    }
    let mut noise = Matrix::zeros(m, bank.noise_dim());
    let mut mode_ids = Vec::with_capacity(m);
    for r in 0..m {
        let pi = sample_dirichlet(alpha, rng);
        mode_ids.push(sample_categorical(&pi, rng));
        for v in noise.row_mut(r) {
            *v = rng.next_range(-1.0, 1.0);
        }
    }
    let noise = NoiseBatch(noise);
    let samples = forward_grouped(bank, &noise, &mode_ids)?;
    Ok(FakeBatch { samples, mode_ids, noise })
}

/// The same row count from every head, mode-major: all of head 0's noise is
/// drawn before head 1's.
pub fn stratified_sample_fakes(
    bank: &GeneratorBank,
    per_gen: usize,
    rng: &mut RngStream,
) -> Result<FakeBatch> {
    if per_gen == 0 {
        return Err(Error::shape("empty fake batch"));
    }
    let kk = bank.k();
    let m = kk * per_gen;
    let mut noise = Matrix::zeros(m, bank.noise_dim());
    let mut mode_ids = Vec::with_capacity(m);
    for k in 0..kk {
        for j in 0..per_gen {
            for v in noise.row_mut(k * per_gen + j) {
                *v = rng.next_range(-1.0, 1.0);
            }
            mode_ids.push(k);
        }
    }
    let noise = NoiseBatch(noise);
    let samples = forward_grouped(bank, &noise, &mode_ids)?;
    Ok(FakeBatch { samples, mode_ids, noise })
}
