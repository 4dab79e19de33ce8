//! Minimal autoregressive RNN distribution model over bit strings: a gated
//! recurrent cell whose hidden width is the virtual-bond dimension, trained
//! by supervised tomography (cross-entropy against target samples), with
//! exact and sampled classical fidelity and minimal-width sweeps.
//!
//! The model is positive-amplitude only: it represents the distribution
//! P(s) = prod_i p(s_i | s_<i) directly, normalized by construction.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArnnError {
    #[error("model has no sites or zero hidden width")]
    BadShape,
    #[error("bit string length {got} does not match n_sites = {want}")]
    BadStringLength { got: usize, want: usize },
    #[error("training diverged (non-finite loss) at epoch {0}")]
    Diverged(usize),
    #[error("fidelity target must lie in (0, 1]")]
    BadTarget,
    #[error("sampled fidelity requires exact target probabilities")]
    NoTargetProbs,
    #[error("width grid must be ascending and nonempty")]
    BadWidthGrid,
}

/// A target distribution the model is trained against. `log2_prob` returns
/// None when exact probabilities are unavailable; `support` enumerates
/// (string, probability) pairs when the target is small enough for exact
/// fidelity.
pub trait TargetDistribution: Sync {
    fn n_sites(&self) -> usize;
    fn sample(&self, rng: &mut dyn rand::RngCore) -> Vec<u8>;
    fn log2_prob(&self, s: &[u8]) -> Option<f64>;
    fn support(&self) -> Option<Vec<(Vec<u8>, f64)>> {
        None
    }
}

/// GRU cell + readout parameters. All tensors are dense f64; vectors are
/// column matrices so one visitor covers everything.
#[derive(Debug, Clone)]
struct Params {
    wz: DMatrix<f64>,
    uz: DMatrix<f64>,
    bz: DMatrix<f64>,
    wr: DMatrix<f64>,
    ur: DMatrix<f64>,
    br: DMatrix<f64>,
    wc: DMatrix<f64>,
    uc: DMatrix<f64>,
    bc: DMatrix<f64>,
    wo: DMatrix<f64>,
    bo: DMatrix<f64>,
}

impl Params {
    /// `in_dim` covers the previous-bit one-hot (2) plus the position
    /// one-hot (n_sites): weight sharing across time still needs to know
    /// where it is to model site-dependent conditionals.
    fn zeros(n_d: usize, in_dim: usize) -> Params {
        Params {
            wz: DMatrix::zeros(n_d, in_dim),
            uz: DMatrix::zeros(n_d, n_d),
            bz: DMatrix::zeros(n_d, 1),
            wr: DMatrix::zeros(n_d, in_dim),
            ur: DMatrix::zeros(n_d, n_d),
            br: DMatrix::zeros(n_d, 1),
            wc: DMatrix::zeros(n_d, in_dim),
            uc: DMatrix::zeros(n_d, n_d),
            bc: DMatrix::zeros(n_d, 1),
            wo: DMatrix::zeros(2, n_d),
            bo: DMatrix::zeros(2, 1),
        }
    }

    fn tensors(&self) -> [&DMatrix<f64>; 11] {
        [
            &self.wz, &self.uz, &self.bz, &self.wr, &self.ur, &self.br, &self.wc, &self.uc,
            &self.bc, &self.wo, &self.bo,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut DMatrix<f64>; 11] {
        [
            &mut self.wz,
            &mut self.uz,
            &mut self.bz,
            &mut self.wr,
            &mut self.ur,
            &mut self.br,
            &mut self.wc,
            &mut self.uc,
            &mut self.bc,
            &mut self.wo,
            &mut self.bo,
        ]
    }

    fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Shape of one tensor inside a flat checkpoint, column-major.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

/// Autoregressive RNN model: P(s) = prod_i softmax(readout(h_i))[s_i] with
/// h_i the GRU state after consuming s_{i-1}.
#[derive(Debug, Clone)]
pub struct ArnnModel {
    pub n_sites: usize,
    pub n_d: usize,
    params: Params,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-step forward cache for backpropagation through time.
struct StepCache {
    x: DMatrix<f64>,
    h_prev: DMatrix<f64>,
    z: DMatrix<f64>,
    r: DMatrix<f64>,
    g: DMatrix<f64>,
    c: DMatrix<f64>,
    h: DMatrix<f64>,
    p: [f64; 2],
    bit: u8,
}

impl ArnnModel {
    /// All-zero parameters: every conditional is exactly 1/2.
    pub fn zeros(n_sites: usize, n_d: usize) -> Result<Self, ArnnError> {
        if n_sites == 0 || n_d == 0 {
            return Err(ArnnError::BadShape);
        }
        Ok(ArnnModel {
            n_sites,
            n_d,
            params: Params::zeros(n_d, 2 + n_sites),
        })
    }

    /// Small uniform random initialization.
    pub fn random(n_sites: usize, n_d: usize, rng: &mut impl Rng) -> Result<Self, ArnnError> {
        ArnnModel::random_scaled(n_sites, n_d, 0.5, rng)
    }

    /// Uniform random initialization in ±gain/sqrt(n_d). Larger gains give
    /// richer nonlinear hidden features at initialization, which helps on
    /// targets whose conditionals are high-order (parity-like) functions of
    /// the prefix.
    pub fn random_scaled(
        n_sites: usize,
        n_d: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, ArnnError> {
        let mut model = ArnnModel::zeros(n_sites, n_d)?;
        let scale = gain / (n_d as f64).sqrt();
        for t in model.params.tensors_mut() {
            for v in t.iter_mut() {
                *v = rng.gen_range(-scale..scale);
            }
        }
        Ok(model)
    }

    pub fn n_params(&self) -> usize {
        self.params.n_params()
    }

    /// Overwrites every parameter from a flat array in `flat_params` layout.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), ArnnError> {
        if flat.len() != self.n_params() {
            return Err(ArnnError::BadShape);
        }
        let mut pos = 0;
        for t in self.params.tensors_mut() {
            for v in t.iter_mut() {
                *v = flat[pos];
                pos += 1;
            }
        }
        Ok(())
    }

    /// Negative log-likelihood -ln P(s) and its gradient, flattened in
    /// `flat_params` layout.
    pub fn loss_and_grad_flat(&self, s: &[u8]) -> Result<(f64, Vec<f64>), ArnnError> {
        if s.len() != self.n_sites {
            return Err(ArnnError::BadStringLength {
                got: s.len(),
                want: self.n_sites,
            });
        }
        let (loss, grad) = self.loss_and_grad(s);
        let mut flat = Vec::with_capacity(self.n_params());
        for t in grad.tensors() {
            flat.extend(t.iter().copied());
        }
        Ok((loss, flat))
    }

    /// Flattens every tensor (column-major) into one f64 array plus its
    /// shape manifest, for checkpointing as a flat binary blob.
    pub fn flat_params(&self) -> (Vec<f64>, Vec<TensorShape>) {
        const NAMES: [&str; 11] = [
            "wz", "uz", "bz", "wr", "ur", "br", "wc", "uc", "bc", "wo", "bo",
        ];
        let mut flat = Vec::with_capacity(self.n_params());
        let mut shapes = Vec::with_capacity(NAMES.len());
        for (name, t) in NAMES.iter().zip(self.params.tensors()) {
            shapes.push(TensorShape {
                name: name.to_string(),
                rows: t.nrows(),
                cols: t.ncols(),
                offset: flat.len(),
            });
            flat.extend(t.iter().copied());
        }
        (flat, shapes)
    }

    /// Input at one step: the previous bit in a signed ±1 channel (0 at
    /// step 0) plus a start flag, concatenated with a one-hot of the current
    /// position. The signed encoding makes parity-like conditionals products
    /// of inputs, which trains far better than a {0,1} one-hot.
    fn input_vec(&self, pos: usize, prev: Option<u8>) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(2 + self.n_sites, 1);
        match prev {
            Some(b) => x[(0, 0)] = 1.0 - 2.0 * f64::from(b),
            None => x[(1, 0)] = 1.0,
        }
        x[(2 + pos, 0)] = 1.0;
        x
    }

    fn step(
        &self,
        h_prev: &DMatrix<f64>,
        pos: usize,
        prev_bit: Option<u8>,
    ) -> (DMatrix<f64>, [f64; 2], StepCache) {
        let p = &self.params;
        let x = self.input_vec(pos, prev_bit);
        let z = (&p.wz * &x + &p.uz * h_prev + &p.bz).map(sigmoid);
        let r = (&p.wr * &x + &p.ur * h_prev + &p.br).map(sigmoid);
        let g = r.component_mul(h_prev);
        let c = (&p.wc * &x + &p.uc * &g + &p.bc).map(f64::tanh);
        let h = h_prev - z.component_mul(h_prev) + z.component_mul(&c);
        let o = &p.wo * &h + &p.bo;
        let m = o[(0, 0)].max(o[(1, 0)]);
        let e0 = (o[(0, 0)] - m).exp();
        let e1 = (o[(1, 0)] - m).exp();
        let probs = [e0 / (e0 + e1), e1 / (e0 + e1)];
        let cache = StepCache {
            x,
            h_prev: h_prev.clone(),
            z,
            r,
            g,
            c,
            h: h.clone(),
            p: probs,
            bit: 0,
        };
        (h, probs, cache)
    }

    /// log2 probability of a full bit string.
    pub fn log2_prob(&self, s: &[u8]) -> Result<f64, ArnnError> {
        if s.len() != self.n_sites {
            return Err(ArnnError::BadStringLength {
                got: s.len(),
                want: self.n_sites,
            });
        }
        let mut h = DMatrix::zeros(self.n_d, 1);
        let mut prev = None;
        let mut logp = 0.0;
        for (pos, &bit) in s.iter().enumerate() {
            let (h_next, probs, _) = self.step(&h, pos, prev);
            logp += probs[usize::from(bit)].log2();
            h = h_next;
            prev = Some(bit);
        }
        Ok(logp)
    }

    /// Ancestral sample with its exact log2 probability.
    pub fn sample(&self, rng: &mut dyn rand::RngCore) -> (Vec<u8>, f64) {
        let mut h = DMatrix::zeros(self.n_d, 1);
        let mut prev = None;
        let mut bits = Vec::with_capacity(self.n_sites);
        let mut logp = 0.0;
        for pos in 0..self.n_sites {
            let (h_next, probs, _) = self.step(&h, pos, prev);
            let bit = u8::from(rng.gen::<f64>() < probs[1]);
            logp += probs[usize::from(bit)].log2();
            bits.push(bit);
            h = h_next;
            prev = Some(bit);
        }
        (bits, logp)
    }

    /// Natural-log loss -ln P(s) and its parameter gradient via BPTT.
    fn loss_and_grad(&self, s: &[u8]) -> (f64, Params) {
        let p = &self.params;
        let mut h = DMatrix::zeros(self.n_d, 1);
        let mut prev = None;
        let mut caches: Vec<StepCache> = Vec::with_capacity(s.len());
        let mut loss = 0.0;
        for (pos, &bit) in s.iter().enumerate() {
            let (h_next, probs, mut cache) = self.step(&h, pos, prev);
            cache.bit = bit;
            loss -= probs[usize::from(bit)].ln().max(-745.0);
            caches.push(cache);
            h = h_next;
            prev = Some(bit);
        }

        let mut grad = Params::zeros(self.n_d, 2 + self.n_sites);
        let mut dh = DMatrix::zeros(self.n_d, 1);
        for cache in caches.iter().rev() {
            // Softmax cross-entropy: d loss / d logits = p - onehot.
            let mut dlogits = DMatrix::zeros(2, 1);
            dlogits[(0, 0)] = cache.p[0] - if cache.bit == 0 { 1.0 } else { 0.0 };
            dlogits[(1, 0)] = cache.p[1] - if cache.bit == 1 { 1.0 } else { 0.0 };
            grad.wo += &dlogits * cache.h.transpose();
            grad.bo += &dlogits;
            dh += p.wo.transpose() * &dlogits;

            let dz = dh.component_mul(&(&cache.c - &cache.h_prev));
            let dc = dh.component_mul(&cache.z);
            let mut dh_prev = dh.component_mul(&cache.z.map(|v| 1.0 - v));

            let dac = dc.component_mul(&cache.c.map(|v| 1.0 - v * v));
            grad.wc += &dac * cache.x.transpose();
            grad.uc += &dac * cache.g.transpose();
            grad.bc += &dac;
            let dg = p.uc.transpose() * &dac;
            let dr = dg.component_mul(&cache.h_prev);
            dh_prev += dg.component_mul(&cache.r);

            let daz = dz.component_mul(&cache.z.map(|v| v * (1.0 - v)));
            grad.wz += &daz * cache.x.transpose();
            grad.uz += &daz * cache.h_prev.transpose();
            grad.bz += &daz;
            dh_prev += p.uz.transpose() * &daz;

            let dar = dr.component_mul(&cache.r.map(|v| v * (1.0 - v)));
            grad.wr += &dar * cache.x.transpose();
            grad.ur += &dar * cache.h_prev.transpose();
            grad.br += &dar;
            dh_prev += p.ur.transpose() * &dar;

            dh = dh_prev;
        }
        (loss, grad)
    }
}

/// Training hyperparameters; epochs are single-batch updates.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seeds_per_width: usize,
    pub fidelity_target: f64,
    pub eval_every: usize,
    /// Exact fidelity needs an enumerable target support; otherwise sampled
    /// with this many draws.
    pub eval_samples: usize,
    /// Initialization gain; parameters start uniform in ±gain/sqrt(n_d).
    #[serde(default = "default_init_gain")]
    pub init_gain: f64,
}

fn default_init_gain() -> f64 {
    0.5
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 5000,
            seeds_per_width: 3,
            fidelity_target: 0.95,
            eval_every: 100,
            eval_samples: 4096,
            init_gain: 0.5,
        }
    }
}

/// Loss and fidelity trace of one training run.
#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub losses: Vec<f64>,
    pub fidelity_evals: Vec<(usize, f64)>,
    pub epochs_run: usize,
    pub reached_target: bool,
}

struct AdamState {
    m: Params,
    v: Params,
    t: usize,
}

impl AdamState {
    fn new(n_d: usize, in_dim: usize) -> AdamState {
        AdamState {
            m: Params::zeros(n_d, in_dim),
            v: Params::zeros(n_d, in_dim),
            t: 0,
        }
    }

    fn update(&mut self, params: &mut Params, grad: &Params, lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t as i32);
        let c2 = 1.0 - B2.powi(self.t as i32);
        let gs = grad.tensors();
        let ms = self.m.tensors_mut();
        for (m, g) in ms.into_iter().zip(gs.iter()) {
            for (mv, gv) in m.iter_mut().zip(g.iter()) {
                *mv = B1 * *mv + (1.0 - B1) * gv;
            }
        }
        let vs = self.v.tensors_mut();
        for (v, g) in vs.into_iter().zip(gs.iter()) {
            for (vv, gv) in v.iter_mut().zip(g.iter()) {
                *vv = B2 * *vv + (1.0 - B2) * gv * gv;
            }
        }
        let ms = self.m.tensors();
        let vs = self.v.tensors();
        let ps = params.tensors_mut();
        for ((pt, m), v) in ps.into_iter().zip(ms.iter()).zip(vs.iter()) {
            for ((pv, mv), vv) in pt.iter_mut().zip(m.iter()).zip(v.iter()) {
                *pv -= lr * (mv / c1) / ((vv / c2).sqrt() + EPS);
            }
        }
    }
}

/// Classical fidelity (sum_s sqrt(P_t P_model))^2, exact over an enumerated
/// target support. Strings off the support contribute zero.
pub fn fidelity_exact(
    model: &ArnnModel,
    support: &[(Vec<u8>, f64)],
) -> Result<f64, ArnnError> {
    let mut overlap = 0.0;
    for (s, pt) in support {
        let lp = model.log2_prob(s)?;
        overlap += (pt * lp.exp2()).sqrt();
    }
    Ok(overlap * overlap)
}

/// Sampled classical fidelity: (E_{s ~ P_model} sqrt(P_t/P_model))^2, with
/// standard error propagated through the square.
pub fn fidelity_sampled(
    model: &ArnnModel,
    target: &dyn TargetDistribution,
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64), ArnnError> {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let (s, log2_q) = model.sample(rng);
        let ratio = match target.log2_prob(&s) {
            Some(log2_p) => ((log2_p - log2_q) / 2.0).exp2(),
            None => return Err(ArnnError::NoTargetProbs),
        };
        sum += ratio;
        sum_sq += ratio * ratio;
    }
    let nf = n_samples as f64;
    let mean = sum / nf;
    let var = (sum_sq / nf - mean * mean).max(0.0);
    let se_mean = (var / nf).sqrt();
    Ok((mean * mean, 2.0 * mean * se_mean))
}

fn evaluate_fidelity(
    model: &ArnnModel,
    target: &dyn TargetDistribution,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<f64, ArnnError> {
    if let Some(support) = target.support() {
        fidelity_exact(model, &support)
    } else {
        Ok(fidelity_sampled(model, target, cfg.eval_samples, rng)?.0)
    }
}

/// Supervised tomography: minimize -E_target[ln P_model] with Adam.
/// Deterministic given the seed. Stops early once an evaluation reaches the
/// fidelity target.
pub fn train(
    target: &dyn TargetDistribution,
    n_d: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ArnnModel, TrainHistory), ArnnError> {
    if !(cfg.fidelity_target > 0.0 && cfg.fidelity_target <= 1.0) {
        return Err(ArnnError::BadTarget);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ArnnModel::random_scaled(target.n_sites(), n_d, cfg.init_gain, &mut rng)?;
    let mut adam = AdamState::new(n_d, 2 + target.n_sites());
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.max_epochs {
        let mut grad = Params::zeros(n_d, 2 + target.n_sites());
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let s = target.sample(&mut rng);
            let (l, g) = model.loss_and_grad(&s);
            loss += l;
            let gts = g.tensors();
            for (acc, gt) in grad.tensors_mut().into_iter().zip(gts.iter()) {
                *acc += *gt;
            }
        }
        let scale = 1.0 / cfg.batch_size as f64;
        for t in grad.tensors_mut() {
            *t *= scale;
        }
        loss *= scale;
        if !loss.is_finite() {
            return Err(ArnnError::Diverged(epoch));
        }
        history.losses.push(loss);
        adam.update(&mut model.params, &grad, cfg.learning_rate);
        history.epochs_run = epoch + 1;
        if (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.max_epochs {
            let fid = evaluate_fidelity(&model, target, cfg, &mut rng)?;
            history.fidelity_evals.push((epoch + 1, fid));
            if fid >= cfg.fidelity_target {
                history.reached_target = true;
                break;
            }
        }
    }
    Ok((model, history))
}

/// Best-over-seeds fidelity for one (target, width) pair; seeds run in
/// parallel.
pub fn best_of_seeds(
    target: &dyn TargetDistribution,
    n_d: usize,
    cfg: &TrainConfig,
    base_seed: u64,
) -> Result<f64, ArnnError> {
    let results: Vec<Result<f64, ArnnError>> = (0..cfg.seeds_per_width as u64)
        .into_par_iter()
        .map(|k| {
            let (_, hist) = train(target, n_d, cfg, base_seed.wrapping_add(k))?;
            Ok(hist
                .fidelity_evals
                .iter()
                .map(|&(_, f)| f)
                .fold(0.0f64, f64::max))
        })
        .collect();
    let mut best = 0.0f64;
    for r in results {
        best = best.max(r?);
    }
    Ok(best)
}

/// Sweep outcome for one system size.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepResult {
    pub size: usize,
    /// (width, best-over-seeds fidelity), in tested order.
    pub per_width: Vec<(usize, f64)>,
    /// Least tested width whose best fidelity reached the target.
    pub n_d_min: Option<usize>,
}

/// For each (size, target): train widths in ascending order and stop at the
/// first width whose best-over-seeds fidelity reaches the target.
pub fn sweep_min_width(
    targets: &[(usize, Box<dyn TargetDistribution>)],
    widths: &[usize],
    cfg: &TrainConfig,
    base_seed: u64,
) -> Result<Vec<SweepResult>, ArnnError> {
    if widths.is_empty() || widths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ArnnError::BadWidthGrid);
    }
    let mut out = Vec::with_capacity(targets.len());
    for (size, target) in targets {
        let mut per_width = Vec::new();
        let mut n_d_min = None;
        for &w in widths {
            let best = best_of_seeds(target.as_ref(), w, cfg, base_seed ^ (*size as u64) << 8)?;
            per_width.push((w, best));
            if best >= cfg.fidelity_target {
                n_d_min = Some(w);
                break;
            }
        }
        out.push(SweepResult {
            size: *size,
            per_width,
            n_d_min,
        });
    }
    Ok(out)
}

/// Point mass on the all-zeros string.
pub struct DeltaTarget {
    pub n: usize,
}

impl TargetDistribution for DeltaTarget {
    fn n_sites(&self) -> usize {
        self.n
    }
    fn sample(&self, _rng: &mut dyn rand::RngCore) -> Vec<u8> {
        vec![0u8; self.n]
    }
    fn log2_prob(&self, s: &[u8]) -> Option<f64> {
        if s.iter().all(|&b| b == 0) {
            Some(0.0)
        } else {
            Some(f64::NEG_INFINITY)
        }
    }
    fn support(&self) -> Option<Vec<(Vec<u8>, f64)>> {
        Some(vec![(vec![0u8; self.n], 1.0)])
    }
}

/// n/2 adjacent site pairs, each uniformly 00 or 11 independently: the
/// middle cut between pairs carries zero information, any cut through a
/// pair carries one bit.
pub struct BellPairChain {
    pub n: usize,
}

impl BellPairChain {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2 && n % 2 == 0, "needs an even number of sites");
        BellPairChain { n }
    }
}

impl TargetDistribution for BellPairChain {
    fn n_sites(&self) -> usize {
        self.n
    }
    fn sample(&self, rng: &mut dyn rand::RngCore) -> Vec<u8> {
        let mut s = Vec::with_capacity(self.n);
        for _ in 0..self.n / 2 {
            let b = u8::from(rng.gen::<bool>());
            s.push(b);
            s.push(b);
        }
        s
    }
    fn log2_prob(&self, s: &[u8]) -> Option<f64> {
        for pair in s.chunks(2) {
            if pair[0] != pair[1] {
                return Some(f64::NEG_INFINITY);
            }
        }
        Some(-((self.n / 2) as f64))
    }
    fn support(&self) -> Option<Vec<(Vec<u8>, f64)>> {
        let pairs = self.n / 2;
        let p = 0.5f64.powi(pairs as i32);
        let mut out = Vec::with_capacity(1 << pairs);
        for mask in 0..(1usize << pairs) {
            let mut s = Vec::with_capacity(self.n);
            for k in 0..pairs {
                let b = ((mask >> k) & 1) as u8;
                s.push(b);
                s.push(b);
            }
            out.push((s, p));
        }
        Some(out)
    }
}

/// Uniform distribution over the solution set of a Z-check system. Samples
/// by drawing a random kernel combination, so the support is never
/// enumerated unless small enough for exact fidelity.
pub struct StabilizerTarget {
    system: crate::stabilizer::ZCheckSystem,
    particular: Vec<u8>,
    kernel_basis: Vec<Vec<u8>>,
    log2_p: f64,
}

/// Largest kernel dimension for which exact fidelity enumerates the support.
pub const STAB_SUPPORT_ENUM_BITS: usize = 16;

impl StabilizerTarget {
    pub fn new(system: crate::stabilizer::ZCheckSystem) -> Result<Self, crate::stabilizer::StabError> {
        let sol = system
            .m
            .solve(&system.s)?
            .ok_or(crate::stabilizer::StabError::Infeasible)?;
        let log2_p = -(sol.kernel_basis.len() as f64);
        Ok(StabilizerTarget {
            system,
            particular: sol.particular,
            kernel_basis: sol.kernel_basis,
            log2_p,
        })
    }

    pub fn n(&self) -> usize {
        self.system.n()
    }
}

impl TargetDistribution for StabilizerTarget {
    fn n_sites(&self) -> usize {
        self.system.n()
    }
    fn sample(&self, rng: &mut dyn rand::RngCore) -> Vec<u8> {
        let mut z = self.particular.clone();
        for basis in &self.kernel_basis {
            if rng.next_u32() & 1 == 1 {
                for (zj, bj) in z.iter_mut().zip(basis) {
                    *zj ^= bj;
                }
            }
        }
        z
    }
    fn log2_prob(&self, s: &[u8]) -> Option<f64> {
        match self.system.m.mat_vec(s) {
            Ok(syndrome) if syndrome == self.system.s => Some(self.log2_p),
            Ok(_) => Some(f64::NEG_INFINITY),
            Err(_) => None,
        }
    }
    fn support(&self) -> Option<Vec<(Vec<u8>, f64)>> {
        if self.kernel_basis.len() > STAB_SUPPORT_ENUM_BITS {
            return None;
        }
        let support = crate::stabilizer::enumerate_support(&self.system).ok()?;
        let p = self.log2_p.exp2();
        Some(support.into_iter().map(|s| (s, p)).collect())
    }
}

/// Dephased fermionic TFD target under a fixed ordering; sampling and exact
/// log-probabilities come from the Gaussian machinery.
pub struct TfdTarget {
    tfd: crate::fermion::GaussianTFD,
    ordering: crate::fermion::Ordering,
}

impl TfdTarget {
    pub fn new(tfd: crate::fermion::GaussianTFD, ordering: crate::fermion::Ordering) -> Self {
        TfdTarget { tfd, ordering }
    }
}

impl TargetDistribution for TfdTarget {
    fn n_sites(&self) -> usize {
        self.tfd.n_modes()
    }
    fn sample(&self, rng: &mut dyn rand::RngCore) -> Vec<u8> {
        crate::fermion::sample(&self.tfd, &self.ordering, rng)
            .expect("valid ordering")
            .0
    }
    fn log2_prob(&self, s: &[u8]) -> Option<f64> {
        match self.tfd.log2_prob(s) {
            Ok(Some(lp)) => Some(lp),
            Ok(None) => Some(f64::NEG_INFINITY),
            Err(_) => None,
        }
    }
    fn support(&self) -> Option<Vec<(Vec<u8>, f64)>> {
        let nd = self.tfd.n_modes();
        if nd > 14 {
            return None;
        }
        let mut out = Vec::new();
        for x in 0..(1usize << nd) {
            let bits: Vec<u8> = (0..nd).map(|u| ((x >> u) & 1) as u8).collect();
            if let Ok(Some(lp)) = self.tfd.log2_prob(&bits) {
                out.push((bits, lp.exp2()));
            }
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gf2::Gf2Matrix;
    use crate::stabilizer::ZCheckSystem;

    #[test]
    fn zero_model_is_uniform() {
        let model = ArnnModel::zeros(5, 3).unwrap();
        for x in 0..32usize {
            let s: Vec<u8> = (0..5).map(|i| ((x >> i) & 1) as u8).collect();
            let lp = model.log2_prob(&s).unwrap();
            assert!((lp + 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn model_is_normalized_by_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n_d in [1usize, 3, 7] {
            let model = ArnnModel::random(8, n_d, &mut rng).unwrap();
            let total: f64 = (0..256usize)
                .map(|x| {
                    let s: Vec<u8> = (0..8).map(|i| ((x >> i) & 1) as u8).collect();
                    model.log2_prob(&s).unwrap().exp2()
                })
                .sum();
            assert!((total - 1.0).abs() < 1e-10, "n_d={n_d}: {total}");
        }
    }

    #[test]
    fn sample_logprob_identity_and_uniform_frequencies() {
        let model = ArnnModel::zeros(4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n_samples = 10_000usize;
        let mut counts = [0usize; 16];
        for _ in 0..n_samples {
            let (s, lp) = model.sample(&mut rng);
            let direct = model.log2_prob(&s).unwrap();
            assert_eq!(lp, direct);
            let x: usize = s.iter().enumerate().map(|(i, &b)| usize::from(b) << i).sum();
            counts[x] += 1;
        }
        let p = 1.0 / 16.0;
        let sigma = (p * (1.0 - p) / n_samples as f64).sqrt();
        for &c in &counts {
            let freq = c as f64 / n_samples as f64;
            assert!((freq - p).abs() < 4.0 * sigma, "freq {freq}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut model = ArnnModel::random(3, 3, &mut rng).unwrap();
        let s = vec![1u8, 0, 1];
        let (_, grad) = model.loss_and_grad(&s);
        let eps = 1e-5;
        let mut max_rel = 0.0f64;
        let mut worst = (0usize, 0usize, 0.0f64, 0.0f64);
        let n_tensors = grad.tensors().len();
        for ti in 0..n_tensors {
            for idx in 0..grad.tensors()[ti].len() {
                let analytic = grad.tensors()[ti][idx];
                let orig = model.params.tensors()[ti][idx];
                model.params.tensors_mut()[ti][idx] = orig + eps;
                let lp = model.loss_and_grad(&s).0;
                model.params.tensors_mut()[ti][idx] = orig - eps;
                let lm = model.loss_and_grad(&s).0;
                model.params.tensors_mut()[ti][idx] = orig;
                let numeric = (lp - lm) / (2.0 * eps);
                // Floor the denominator so near-zero entries are judged on
                // absolute error, where central differences bottom out in
                // roundoff around 1e-11.
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                let rel = (analytic - numeric).abs() / denom;
                if rel > max_rel {
                    max_rel = rel;
                    worst = (ti, idx, analytic, numeric);
                }
            }
        }
        assert!(
            max_rel < 1e-4,
            "max relative gradient error {max_rel} at tensor {} index {}: analytic {} vs numeric {}",
            worst.0,
            worst.1,
            worst.2,
            worst.3
        );
    }

    #[test]
    fn trains_delta_target() {
        let target = DeltaTarget { n: 6 };
        let cfg = TrainConfig {
            max_epochs: 1500,
            batch_size: 64,
            eval_every: 50,
            fidelity_target: 0.99,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let (_, hist) = train(&target, 1, &cfg, 42).unwrap();
        assert!(hist.reached_target, "evals: {:?}", hist.fidelity_evals);
    }

    #[test]
    fn trains_bell_pair_target() {
        let target = BellPairChain::new(2);
        let cfg = TrainConfig {
            max_epochs: 500,
            batch_size: 64,
            eval_every: 50,
            fidelity_target: 0.99,
            learning_rate: 5e-3,
            ..TrainConfig::default()
        };
        let (model, hist) = train(&target, 2, &cfg, 7).unwrap();
        assert!(hist.reached_target, "evals: {:?}", hist.fidelity_evals);
        // Off-support strings carry negligible mass.
        for s in [[0u8, 1], [1u8, 0]] {
            assert!(model.log2_prob(&s).unwrap().exp2() < 1e-2);
        }
    }

    #[test]
    fn fidelity_properties() {
        let model = ArnnModel::zeros(4, 2).unwrap();
        // Uniform model vs delta target: (sqrt(1/16))^2.
        let f = fidelity_exact(&model, &DeltaTarget { n: 4 }.support().unwrap()).unwrap();
        assert!((f - 1.0 / 16.0).abs() < 1e-12);
        // Model against its own distribution (uniform) is 1.
        let uniform_support: Vec<(Vec<u8>, f64)> = (0..16usize)
            .map(|x| {
                let s: Vec<u8> = (0..4).map(|i| ((x >> i) & 1) as u8).collect();
                (s, 1.0 / 16.0)
            })
            .collect();
        let f1 = fidelity_exact(&model, &uniform_support).unwrap();
        assert!((f1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampled_fidelity_consistent_with_exact() {
        let m = Gf2Matrix::parse_text("2 8\n11000000\n00110000").unwrap();
        let system = ZCheckSystem::homogeneous(m);
        let target = StabilizerTarget::new(system).unwrap();
        let cfg = TrainConfig {
            max_epochs: 400,
            batch_size: 64,
            eval_every: 100,
            fidelity_target: 1.0,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let (model, _) = train(&target, 4, &cfg, 11).unwrap();
        let exact = fidelity_exact(&model, &target.support().unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (sampled, se) = fidelity_sampled(&model, &target, 4000, &mut rng).unwrap();
        assert!(
            (sampled - exact).abs() < 3.0 * se + 0.01,
            "{sampled} vs {exact} +- {se}"
        );
    }

    #[test]
    fn sweep_on_delta_targets() {
        let targets: Vec<(usize, Box<dyn TargetDistribution>)> = vec![
            (4, Box::new(DeltaTarget { n: 4 })),
            (8, Box::new(DeltaTarget { n: 8 })),
        ];
        let cfg = TrainConfig {
            max_epochs: 1000,
            batch_size: 64,
            eval_every: 50,
            seeds_per_width: 1,
            fidelity_target: 0.95,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let results = sweep_min_width(&targets, &[1, 2], &cfg, 99).unwrap();
        for r in &results {
            assert_eq!(r.n_d_min, Some(1), "size {}: {:?}", r.size, r.per_width);
        }
    }
}
