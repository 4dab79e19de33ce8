//! Thermofield-double state of the spinless p-wave BCS chain as a doubled
//! fermionic Gaussian state: exact occupation-basis amplitudes via Pfaffians,
//! sequential conditional sampling under arbitrary mode orderings, and
//! amplitude mutual information across a cut of the ordered sequence.
//!
//! Conventions. The single chain has n modes with Hamiltonian blocks
//! A[j,j] += 2h, A[j,j+1] = A[j+1,j] = -J (periodic), B[j,j+1] = -J,
//! B[j+1,j] = +J, plus the constant -h*n. Bogoliubov modes come from the
//! 2n x 2n BdG matrix [[A, B], [-B, -A]] with the epsilon >= 0 convention.
//! Doubled modes are ordered A-copy first (indices 0..n) then B-copy
//! (indices n..2n); occupation strings are little-endian in that order.
//!
//! The doubled pure state is fixed by requiring that its occupation
//! probabilities equal |<a| exp(-beta H / 2) |b>|^2 / Z(beta). With
//! parity-twisted B-copy modes (which leave all occupation numbers
//! unchanged) this state is exactly Gaussian, and its two-point blocks have
//! the closed forms assembled in `build_tfd` below; the pairing matrix F is
//! then recovered from the annihilator relation F = P^T (I - G)^{-1}.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use thiserror::Error;

use crate::infotheory::{self, JointTable, MiEstimate, OrderedSampler};
use crate::skewlinalg::{lu_det, lu_det_inverse, pfaffian, SignLog};

#[derive(Debug, Error)]
pub enum FermionError {
    #[error("chain must have at least one site")]
    EmptyChain,
    #[error("beta must be nonnegative and finite")]
    BadBeta,
    #[error("BdG eigenbasis is not canonical (deviation {0:.2e})")]
    NonCanonicalBdg(f64),
    #[error("recovered pairing matrix is not antisymmetric (deviation {0:.2e})")]
    NotAntisymmetric(f64),
    #[error("Majorana covariance is not pure (deviation {0:.2e})")]
    NotPure(f64),
    #[error("ordering is not a permutation of the doubled modes")]
    BadOrdering,
    #[error("bit string length {got} does not match 2n = {want}")]
    BadStringLength { got: usize, want: usize },
    #[error("cut {cut} outside the interior of a length-{len} sequence")]
    BadCut { cut: usize, len: usize },
    #[error("conditioning on a zero-probability prefix")]
    ZeroPrefix,
    #[error("linear algebra failure: {0}")]
    Linalg(#[from] crate::skewlinalg::LinalgError),
}

/// Spinless p-wave BCS chain with periodic boundary conditions.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BcsChain {
    pub n: usize,
    pub j_coupling: f64,
    pub h_field: f64,
}

impl BcsChain {
    pub fn new(n: usize, j_coupling: f64, h_field: f64) -> Result<Self, FermionError> {
        if n == 0 {
            return Err(FermionError::EmptyChain);
        }
        Ok(BcsChain {
            n,
            j_coupling,
            h_field,
        })
    }

    /// Quadratic blocks: H = sum A_jk c_j^dag c_k
    ///   + (1/2) sum B_jk (c_j^dag c_k^dag + h.c. transposed) - h n.
    fn blocks(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.n;
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, n);
        for j in 0..n {
            let k = (j + 1) % n;
            a[(j, j)] += 2.0 * self.h_field;
            a[(j, k)] += -self.j_coupling;
            a[(k, j)] += -self.j_coupling;
            b[(j, k)] += -self.j_coupling;
            b[(k, j)] += self.j_coupling;
        }
        (a, b)
    }
}

/// BdG eigendata: quasiparticle energies (eps >= 0) and the transform rows
/// eta_mu^dag = sum_j G[mu,j] c_j^dag + H[mu,j] c_j.
struct BdgModes {
    eps: Vec<f64>,
    g: DMatrix<f64>,
    h: DMatrix<f64>,
}

fn bdg_diagonalize(chain: &BcsChain) -> Result<BdgModes, FermionError> {
    let n = chain.n;
    let (a, b) = chain.blocks();
    let mut hb = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            hb[(i, j)] = a[(i, j)];
            hb[(i, n + j)] = b[(i, j)];
            hb[(n + i, j)] = -b[(i, j)];
            hb[(n + i, n + j)] = -a[(i, j)];
        }
    }
    let scale = hb.amax().max(1e-12);
    let eig = SymmetricEigen::new(hb);
    // Pick the strictly positive eigenvalues; particle-hole symmetry pairs
    // them with the negative ones. Zero modes (e.g. the k = 0 quasiparticle
    // at the h = J critical point) span a particle-hole-invariant subspace
    // and need explicit canonicalization: splitting by the swap operator
    // S(u, v) = (v, u) into +1/-1 eigenvectors w+, w- and taking
    // c = (w+ + w-)/sqrt(2) yields modes with S c orthonormal to c.
    let tol = 1e-9 * scale;
    let mut idx: Vec<usize> = (0..2 * n).collect();
    idx.sort_by(|&p, &q| eig.eigenvalues[q].partial_cmp(&eig.eigenvalues[p]).unwrap());
    let pos: Vec<usize> = idx
        .iter()
        .copied()
        .filter(|&c| eig.eigenvalues[c] > tol)
        .collect();
    let zero: Vec<usize> = idx
        .iter()
        .copied()
        .filter(|&c| eig.eigenvalues[c].abs() <= tol)
        .collect();
    if zero.len() % 2 != 0 || pos.len() + zero.len() / 2 != n {
        return Err(FermionError::NonCanonicalBdg(tol));
    }
    let mut eps = Vec::with_capacity(n);
    let mut g = DMatrix::zeros(n, n);
    let mut h = DMatrix::zeros(n, n);
    for (mu, &col) in pos.iter().enumerate() {
        eps.push(eig.eigenvalues[col]);
        for j in 0..n {
            g[(mu, j)] = eig.eigenvectors[(j, col)];
            h[(mu, j)] = eig.eigenvectors[(n + j, col)];
        }
    }
    if !zero.is_empty() {
        let m = zero.len() / 2;
        let mut w = DMatrix::zeros(2 * n, 2 * m);
        for (k, &col) in zero.iter().enumerate() {
            for r in 0..2 * n {
                w[(r, k)] = eig.eigenvectors[(r, col)];
            }
        }
        // Swap operator restricted to the zero subspace.
        let mut sw = DMatrix::zeros(2 * n, 2 * m);
        for k in 0..2 * m {
            for j in 0..n {
                sw[(j, k)] = w[(n + j, k)];
                sw[(n + j, k)] = w[(j, k)];
            }
        }
        let small = w.transpose() * &sw;
        let sub = SymmetricEigen::new(small);
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        for k in 0..2 * m {
            let lam = sub.eigenvalues[k];
            if (lam - 1.0).abs() < 1e-6 {
                plus.push(k);
            } else if (lam + 1.0).abs() < 1e-6 {
                minus.push(k);
            }
        }
        if plus.len() != m || minus.len() != m {
            return Err(FermionError::NonCanonicalBdg(tol));
        }
        for i in 0..m {
            let wp = &w * sub.eigenvectors.column(plus[i]);
            let wm = &w * sub.eigenvectors.column(minus[i]);
            let c = (wp + wm) / std::f64::consts::SQRT_2;
            let mu = pos.len() + i;
            eps.push(0.0);
            for j in 0..n {
                g[(mu, j)] = c[j];
                h[(mu, j)] = c[n + j];
            }
        }
    }
    // Canonical Bogoliubov conditions: G G^T + H H^T = I, G H^T + H G^T = 0.
    let c1 = &g * g.transpose() + &h * h.transpose() - DMatrix::identity(n, n);
    let c2 = &g * h.transpose() + &h * g.transpose();
    let dev = c1.amax().max(c2.amax());
    if dev > 1e-8 {
        return Err(FermionError::NonCanonicalBdg(dev));
    }
    Ok(BdgModes { eps, g, h })
}

/// Autoregressive ordering of the 2n doubled modes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ordering {
    /// All A-copy modes, then all B-copy modes: 0..n, n..2n.
    Separate,
    /// Site pairs interleaved: 0, n, 1, n+1, ...
    Alternate,
    /// Arbitrary permutation of the 2n doubled indices.
    Custom(Vec<usize>),
}

impl Ordering {
    pub fn permutation(&self, n: usize) -> Result<Vec<usize>, FermionError> {
        let perm = match self {
            Ordering::Separate => (0..2 * n).collect::<Vec<_>>(),
            Ordering::Alternate => {
                let mut p = Vec::with_capacity(2 * n);
                for i in 0..n {
                    p.push(i);
                    p.push(n + i);
                }
                p
            }
            Ordering::Custom(p) => p.clone(),
        };
        let mut seen = vec![false; 2 * n];
        if perm.len() != 2 * n {
            return Err(FermionError::BadOrdering);
        }
        for &i in &perm {
            if i >= 2 * n || seen[i] {
                return Err(FermionError::BadOrdering);
            }
            seen[i] = true;
        }
        Ok(perm)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Ordering::Separate => "separate",
            Ordering::Alternate => "alternate",
            Ordering::Custom(_) => "custom",
        }
    }
}

/// Doubled Gaussian thermofield-double state.
#[derive(Debug, Clone)]
pub struct GaussianTFD {
    pub chain: BcsChain,
    pub beta: f64,
    /// Quasiparticle energies, descending, all >= 0.
    pub eps: Vec<f64>,
    /// Thermal occupations f_mu = 1/(e^(beta eps) + 1) in [0, 1/2].
    pub occ: Vec<f64>,
    /// Antisymmetric pairing matrix of the doubled state, 2n x 2n.
    pub pairing: DMatrix<f64>,
    /// Two-point block <d_u^dag d_v>, 2n x 2n, symmetric.
    pub cov_g: DMatrix<f64>,
    /// Two-point block <d_u d_v>, 2n x 2n, antisymmetric.
    pub cov_p: DMatrix<f64>,
    /// log2 of the vacuum-overlap normalization of exp(1/2 d^dag F d^dag)|0>.
    pub log2_norm: f64,
    /// True when (I - G) was near-singular and an epsilon shift was applied.
    pub regularized: bool,
    gamma: DMatrix<f64>,
}

/// Construct the TFD state at inverse temperature beta.
pub fn build_tfd(chain: &BcsChain, beta: f64) -> Result<GaussianTFD, FermionError> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(FermionError::BadBeta);
    }
    let n = chain.n;
    let modes = bdg_diagonalize(chain)?;
    let occ: Vec<f64> = modes
        .eps
        .iter()
        .map(|&e| 1.0 / ((beta * e).exp() + 1.0))
        .collect();
    // u v = e^(-beta eps / 2) / (1 + e^(-beta eps)); the single coefficient
    // appearing in every cross-copy correlator.
    let uv: Vec<f64> = modes
        .eps
        .iter()
        .map(|&e| (-beta * e / 2.0).exp() / (1.0 + (-beta * e).exp()))
        .collect();

    let weighted = |rows: &DMatrix<f64>, w: &[f64]| -> DMatrix<f64> {
        let mut out = rows.clone();
        for mu in 0..n {
            for j in 0..n {
                out[(mu, j)] *= w[mu];
            }
        }
        out
    };
    let one_minus: Vec<f64> = occ.iter().map(|&f| 1.0 - f).collect();
    let (g, h) = (&modes.g, &modes.h);
    // Same-copy blocks are thermal; cross-copy blocks carry the uv weight.
    let c = g.transpose() * weighted(g, &occ) + h.transpose() * weighted(h, &one_minus);
    let r = g.transpose() * weighted(h, &uv) + h.transpose() * weighted(g, &uv);
    let s = g.transpose() * weighted(g, &uv) + h.transpose() * weighted(h, &uv);
    let p_th = g.transpose() * weighted(h, &one_minus) + h.transpose() * weighted(g, &occ);

    let nd = 2 * n;
    let mut cov_g = DMatrix::zeros(nd, nd);
    let mut cov_p = DMatrix::zeros(nd, nd);
    for i in 0..n {
        for j in 0..n {
            cov_g[(i, j)] = c[(i, j)];
            cov_g[(n + i, n + j)] = c[(i, j)];
            cov_g[(i, n + j)] = -r[(i, j)];
            cov_g[(n + i, j)] = -r[(j, i)];
            cov_p[(i, j)] = p_th[(i, j)];
            cov_p[(n + i, n + j)] = -p_th[(i, j)];
            cov_p[(i, n + j)] = -s[(i, j)];
            cov_p[(n + i, j)] = s[(j, i)];
        }
    }

    // Annihilator recovery: (d - F d^dag) kills the state, so
    // P^T = F (I - G) and F = P^T (I - G)^{-1}.
    let mut i_minus_g = DMatrix::identity(nd, nd) - &cov_g;
    let mut regularized = false;
    let mut inv = lu_det_inverse(&i_minus_g);
    let near_singular = match &inv {
        Ok(di) => di.det.is_zero() || di.det.log_abs < (nd as f64) * (1e-10f64).ln(),
        Err(_) => true,
    };
    if near_singular {
        // beta -> infinity limit: vacuum overlap vanishes; shift and report.
        regularized = true;
        for i in 0..nd {
            i_minus_g[(i, i)] += 1e-12;
        }
        inv = lu_det_inverse(&i_minus_g);
    }
    let inv = inv?;
    let mut pairing = cov_p.transpose() * &inv.inverse;
    let dev = (&pairing + pairing.transpose()).amax();
    if dev > 1e-10 {
        return Err(FermionError::NotAntisymmetric(dev));
    }
    pairing = (&pairing - pairing.transpose()) * 0.5;

    // log2 normalization: |<0|psi>| = det(I + F^T F)^{-1/4}.
    let ftf = DMatrix::identity(nd, nd) + pairing.transpose() * &pairing;
    let det = lu_det(&ftf)?;
    let log2_norm = -0.25 * det.log_abs / std::f64::consts::LN_2;

    let gamma = majorana_covariance(&cov_g, &cov_p);
    let purity_dev = (gamma.transpose() * &gamma - DMatrix::identity(2 * nd, 2 * nd)).amax();
    if purity_dev > 1e-8 {
        return Err(FermionError::NotPure(purity_dev));
    }

    Ok(GaussianTFD {
        chain: *chain,
        beta,
        eps: modes.eps,
        occ,
        pairing,
        cov_g,
        cov_p,
        log2_norm,
        regularized,
        gamma,
    })
}

/// Antisymmetric Majorana covariance: for a real Gaussian state the only
/// nonzero blocks are Gamma[2u, 2v+1] = delta_uv - 2 G_uv - 2 P_uv.
fn majorana_covariance(cov_g: &DMatrix<f64>, cov_p: &DMatrix<f64>) -> DMatrix<f64> {
    let nd = cov_g.nrows();
    let mut gamma = DMatrix::zeros(2 * nd, 2 * nd);
    for u in 0..nd {
        for v in 0..nd {
            let delta = if u == v { 1.0 } else { 0.0 };
            let val = delta - 2.0 * cov_g[(u, v)] - 2.0 * cov_p[(u, v)];
            gamma[(2 * u, 2 * v + 1)] = val;
            gamma[(2 * v + 1, 2 * u)] = -val;
        }
    }
    gamma
}

impl GaussianTFD {
    pub fn n_modes(&self) -> usize {
        2 * self.chain.n
    }

    /// Signed amplitude of a doubled occupation string (little-endian over
    /// A-copy then B-copy modes). Zero for odd-weight strings; the global
    /// sign is a phase convention.
    pub fn amplitude(&self, x: &[u8]) -> Result<SignLog, FermionError> {
        let nd = self.n_modes();
        if x.len() != nd {
            return Err(FermionError::BadStringLength {
                got: x.len(),
                want: nd,
            });
        }
        let support: Vec<usize> = (0..nd).filter(|&u| x[u] != 0).collect();
        if support.len() % 2 != 0 {
            return Ok(SignLog::from_value(0.0));
        }
        let m = support.len();
        let mut sub = DMatrix::zeros(m, m);
        for (p, &u) in support.iter().enumerate() {
            for (q, &v) in support.iter().enumerate() {
                sub[(p, q)] = self.pairing[(u, v)];
            }
        }
        let pf = pfaffian(&sub)?;
        Ok(pf.mul(SignLog {
            sign: 1,
            log_abs: self.log2_norm * std::f64::consts::LN_2,
        }))
    }

    /// log2 probability of a doubled occupation string; None when exactly zero.
    pub fn log2_prob(&self, x: &[u8]) -> Result<Option<f64>, FermionError> {
        let amp = self.amplitude(x)?;
        if amp.is_zero() {
            return Ok(None);
        }
        Ok(Some(2.0 * amp.log_abs / std::f64::consts::LN_2))
    }

    /// Unconditioned occupation of doubled mode u.
    pub fn occupation(&self, u: usize) -> f64 {
        self.cov_g[(u, u)]
    }

    pub fn sampler(&self, ordering: &Ordering) -> Result<SamplerState, FermionError> {
        let perm = ordering.permutation(self.chain.n)?;
        SamplerState::new(self, perm)
    }
}

/// Sequentially conditioned Gaussian state: a Majorana covariance with an
/// accumulated prefix of fixed occupations along a chosen mode ordering.
#[derive(Debug, Clone)]
pub struct SamplerState {
    /// Mode ordering as a permutation of the doubled indices.
    pub perm: Vec<usize>,
    /// Fixed outcomes so far, in ordering positions.
    pub prefix: Vec<u8>,
    /// Accumulated log2 probability of the prefix.
    pub log2_prob: f64,
    /// Count of conditionals clamped into [0, 1].
    pub clamp_count: usize,
    /// Largest clamp magnitude seen.
    pub clamp_max: f64,
    gamma: DMatrix<f64>,
}

impl SamplerState {
    fn new(tfd: &GaussianTFD, perm: Vec<usize>) -> Result<Self, FermionError> {
        let nd = tfd.n_modes();
        // Permute Majorana pairs so position t holds mode perm[t].
        let mut gamma = DMatrix::zeros(2 * nd, 2 * nd);
        for p in 0..nd {
            for q in 0..nd {
                for i in 0..2 {
                    for j in 0..2 {
                        gamma[(2 * p + i, 2 * q + j)] =
                            tfd.gamma[(2 * perm[p] + i, 2 * perm[q] + j)];
                    }
                }
            }
        }
        Ok(SamplerState {
            perm,
            prefix: Vec::new(),
            log2_prob: 0.0,
            clamp_count: 0,
            clamp_max: 0.0,
            gamma,
        })
    }

    pub fn seq_len(&self) -> usize {
        self.perm.len()
    }

    /// Probability that the next mode in the ordering is occupied, clamped
    /// into [0, 1] with the clamp magnitude recorded.
    pub fn next_prob_one(&mut self) -> f64 {
        let t = self.prefix.len();
        // <n> = (1 - Gamma[2t, 2t+1]) / 2 for the conditioned state.
        let raw = (1.0 - self.gamma[(2 * t, 2 * t + 1)]) / 2.0;
        let clamped = raw.clamp(0.0, 1.0);
        if clamped != raw {
            self.clamp_count += 1;
            self.clamp_max = self.clamp_max.max((raw - clamped).abs());
        }
        clamped
    }

    /// Fix the next mode to outcome `bit`, returning its conditional
    /// probability and applying the projective covariance update.
    pub fn condition(&mut self, bit: u8) -> Result<f64, FermionError> {
        let t = self.prefix.len();
        assert!(t < self.seq_len(), "all modes already fixed");
        let p1 = self.next_prob_one();
        let p = if bit != 0 { p1 } else { 1.0 - p1 };
        if p <= 0.0 {
            return Err(FermionError::ZeroPrefix);
        }
        let s = 1.0 - 2.0 * f64::from(bit);
        let (a, b) = (2 * t, 2 * t + 1);
        let denom = 1.0 + s * self.gamma[(a, b)];
        let m = self.gamma.nrows();
        // Rank-2 projective update; rows/columns of the measured pair are
        // zeroed and pinned to the outcome.
        let col_a: Vec<f64> = (0..m).map(|i| self.gamma[(i, a)]).collect();
        let col_b: Vec<f64> = (0..m).map(|i| self.gamma[(i, b)]).collect();
        let row_a: Vec<f64> = (0..m).map(|j| self.gamma[(a, j)]).collect();
        let row_b: Vec<f64> = (0..m).map(|j| self.gamma[(b, j)]).collect();
        let scale = s / denom;
        for i in 0..m {
            for j in 0..m {
                self.gamma[(i, j)] += scale * (col_a[i] * row_b[j] - col_b[i] * row_a[j]);
            }
        }
        for i in 0..m {
            self.gamma[(a, i)] = 0.0;
            self.gamma[(b, i)] = 0.0;
            self.gamma[(i, a)] = 0.0;
            self.gamma[(i, b)] = 0.0;
        }
        self.gamma[(a, b)] = s;
        self.gamma[(b, a)] = -s;
        self.prefix.push(bit);
        self.log2_prob += p.log2();
        Ok(p)
    }
}

/// Draw one doubled occupation string along the ordering; the returned bits
/// are in PHYSICAL mode order (A-copy then B-copy) and the log2 probability
/// is exact.
pub fn sample(
    tfd: &GaussianTFD,
    ordering: &Ordering,
    rng: &mut dyn rand::RngCore,
) -> Result<(Vec<u8>, f64), FermionError> {
    let mut st = tfd.sampler(ordering)?;
    let nd = tfd.n_modes();
    let mut bits = vec![0u8; nd];
    for t in 0..nd {
        let p1 = st.next_prob_one();
        let bit = u8::from((rng.gen::<f64>()) < p1);
        st.condition(bit)?;
        bits[st.perm[t]] = bit;
    }
    Ok((bits, st.log2_prob))
}

/// OrderedSampler adapter over a fixed ordering of the doubled modes.
pub struct TfdSampler<'a> {
    tfd: &'a GaussianTFD,
    perm: Vec<usize>,
}

impl<'a> TfdSampler<'a> {
    pub fn new(tfd: &'a GaussianTFD, perm: Vec<usize>) -> Self {
        TfdSampler { tfd, perm }
    }
}

impl OrderedSampler for TfdSampler<'_> {
    fn seq_len(&self) -> usize {
        self.tfd.n_modes()
    }

    fn sample_with_prefix(
        &self,
        rng: &mut dyn rand::RngCore,
        prefix_len: usize,
    ) -> (Vec<u8>, f64, f64) {
        let mut st = SamplerState::new(self.tfd, self.perm.clone()).expect("valid perm");
        let nd = self.seq_len();
        let mut bits = Vec::with_capacity(nd);
        let mut log_prefix = 0.0;
        for t in 0..nd {
            let p1 = st.next_prob_one();
            let bit = u8::from((rng.gen::<f64>()) < p1);
            st.condition(bit).expect("sampled outcome has p > 0");
            bits.push(bit);
            if t + 1 == prefix_len {
                log_prefix = st.log2_prob;
            }
        }
        if prefix_len == 0 {
            log_prefix = 0.0;
        }
        (bits, st.log2_prob, log_prefix)
    }
}

/// CMI estimate for a TFD cut.
#[derive(Debug, Clone, Copy)]
pub struct TfdCmi {
    pub cmi_bits: f64,
    /// None for exact enumeration.
    pub stderr_bits: Option<f64>,
    pub exact: bool,
}

/// Guard for exact enumeration: at most 2^20 doubled strings.
pub const TFD_ENUM_GUARD_MODES: usize = 20;

/// Amplitude mutual information between the first `cut` positions of the
/// ordering and the rest. Exact enumeration up to the guard, otherwise the
/// sampling estimator with the block-rotated ordering for the B-first chain.
pub fn tfd_cmi(
    tfd: &GaussianTFD,
    ordering: &Ordering,
    cut: usize,
    n_samples: Option<usize>,
    rng: &mut impl Rng,
) -> Result<TfdCmi, FermionError> {
    let nd = tfd.n_modes();
    if cut == 0 || cut >= nd {
        return Err(FermionError::BadCut { cut, len: nd });
    }
    let perm = ordering.permutation(tfd.chain.n)?;
    if nd <= TFD_ENUM_GUARD_MODES && n_samples.is_none() {
        let table = enumerate_joint(tfd, &perm, cut)?;
        return Ok(TfdCmi {
            cmi_bits: infotheory::mutual_information(&table),
            stderr_bits: None,
            exact: true,
        });
    }
    let n_samples = n_samples.unwrap_or(4096);
    let a_first = TfdSampler::new(tfd, perm.clone());
    let mut rotated = perm[cut..].to_vec();
    rotated.extend_from_slice(&perm[..cut]);
    let b_first = TfdSampler::new(tfd, rotated);
    let est: MiEstimate =
        infotheory::mi_from_exact_logprobs(&a_first as &dyn OrderedSampler, &b_first, cut, n_samples, rng);
    Ok(TfdCmi {
        cmi_bits: est.mi_bits,
        stderr_bits: Some(est.stderr_bits),
        exact: false,
    })
}

/// Exact joint distribution over (prefix, suffix) values of the ordered
/// string, built by depth-first conditioning so covariance updates are
/// shared across prefixes. Total mass is renormalized before use.
fn enumerate_joint(
    tfd: &GaussianTFD,
    perm: &[usize],
    cut: usize,
) -> Result<JointTable, FermionError> {
    let nd = tfd.n_modes();
    let mut p = vec![0.0f64; 1 << nd];
    let root = SamplerState::new(tfd, perm.to_vec())?;
    let mut stack: Vec<(SamplerState, usize)> = vec![(root, 0)];
    while let Some((st, value)) = stack.pop() {
        let t = st.prefix.len();
        if t == nd {
            p[value] = (st.log2_prob).exp2();
            continue;
        }
        for bit in 0..2u8 {
            let mut child = st.clone();
            match child.condition(bit) {
                Ok(_) => {
                    let value = value | (usize::from(bit) << t);
                    stack.push((child, value));
                }
                Err(FermionError::ZeroPrefix) => {}
                Err(e) => return Err(e),
            }
        }
    }
    let mass: f64 = p.iter().sum();
    for q in p.iter_mut() {
        *q /= mass;
    }
    // Reindex so the table axes are (prefix value, suffix value).
    let a_size = 1 << cut;
    let b_size = 1 << (nd - cut);
    let mut joint = vec![0.0f64; a_size * b_size];
    for (x, &q) in p.iter().enumerate() {
        let a = x & (a_size - 1);
        let b = x >> cut;
        joint[a * b_size + b] += q;
    }
    Ok(JointTable::new(a_size, b_size, joint).map_err(|_| FermionError::ZeroPrefix)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::log_log_slope;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Dense Jordan-Wigner oracle on nm modes, little-endian occupations.
    fn c_matrix(nm: usize, j: usize) -> DMatrix<f64> {
        let dim = 1 << nm;
        let mut m = DMatrix::zeros(dim, dim);
        for s in 0..dim {
            if (s >> j) & 1 == 1 {
                let sign = if ((s & ((1 << j) - 1)) as u32).count_ones() % 2 == 0 {
                    1.0
                } else {
                    -1.0
                };
                m[(s ^ (1 << j), s)] = sign;
            }
        }
        m
    }

    fn dense_hamiltonian(chain: &BcsChain) -> DMatrix<f64> {
        let n = chain.n;
        let (a, b) = chain.blocks();
        let dim = 1 << n;
        let cs: Vec<DMatrix<f64>> = (0..n).map(|j| c_matrix(n, j)).collect();
        let mut h = DMatrix::identity(dim, dim) * (-chain.h_field * n as f64);
        for j in 0..n {
            for k in 0..n {
                h += cs[j].transpose() * &cs[k] * a[(j, k)];
                h += cs[j].transpose() * cs[k].transpose() * (0.5 * b[(j, k)]);
                h += &cs[k] * &cs[j] * (0.5 * b[(j, k)]);
            }
        }
        h
    }

    /// Exact doubled distribution |<a|exp(-beta H/2)|b>|^2 / Z, indexed by
    /// a + (b << n).
    fn dense_joint(chain: &BcsChain, beta: f64) -> Vec<f64> {
        let n = chain.n;
        let h = dense_hamiltonian(chain);
        let eig = SymmetricEigen::new(h);
        let dim = 1 << n;
        let mut prop: DMatrix<f64> = DMatrix::zeros(dim, dim);
        for k in 0..dim {
            let w = (-beta * eig.eigenvalues[k] / 2.0).exp();
            let col = eig.eigenvectors.column(k);
            for i in 0..dim {
                for j in 0..dim {
                    prop[(i, j)] += w * col[i] * col[j];
                }
            }
        }
        let z: f64 = (0..dim).map(|k| (-beta * eig.eigenvalues[k]).exp()).sum();
        let mut joint = vec![0.0; dim * dim];
        for a in 0..dim {
            for b in 0..dim {
                joint[a + (b << n)] = prop[(a, b)] * prop[(a, b)] / z;
            }
        }
        joint
    }

    fn bits_of(x: usize, nd: usize) -> Vec<u8> {
        (0..nd).map(|u| ((x >> u) & 1) as u8).collect()
    }

    #[test]
    fn occupations_at_temperature_extremes() {
        let chain = BcsChain::new(4, 1.0, 2.0).unwrap();
        let t0 = build_tfd(&chain, 0.0).unwrap();
        for &f in &t0.occ {
            assert!((f - 0.5).abs() < 1e-12);
        }
        let tcold = build_tfd(&chain, 50.0).unwrap();
        for &f in &tcold.occ {
            assert!(f < 1e-10, "f = {f}");
        }
        for &e in &tcold.eps {
            assert!(e >= 0.0);
        }
    }

    #[test]
    fn pairing_and_purity_invariants() {
        for (n, beta) in [(2, 0.7), (3, 0.4), (5, 1.3), (6, 0.05)] {
            let chain = BcsChain::new(n, 1.0, 0.7).unwrap();
            let tfd = build_tfd(&chain, beta).unwrap();
            let dev = (&tfd.pairing + tfd.pairing.transpose()).amax();
            assert!(dev < 1e-10);
            for &f in &tfd.occ {
                assert!((0.0..=0.5).contains(&f));
            }
        }
    }

    #[test]
    fn amplitudes_match_dense_oracle_n2() {
        let chain = BcsChain::new(2, 1.0, 0.7).unwrap();
        let beta = 0.7;
        let tfd = build_tfd(&chain, beta).unwrap();
        let joint = dense_joint(&chain, beta);
        for x in 0..16usize {
            let amp = tfd.amplitude(&bits_of(x, 4)).unwrap();
            let p = amp.squared_abs().value();
            assert!(
                (p - joint[x]).abs() < 1e-8,
                "x={x}: {p} vs {}",
                joint[x]
            );
        }
    }

    #[test]
    fn amplitudes_match_dense_oracle_n3() {
        let chain = BcsChain::new(3, 1.0, 0.6).unwrap();
        let beta = 0.4;
        let tfd = build_tfd(&chain, beta).unwrap();
        let joint = dense_joint(&chain, beta);
        for x in 0..64usize {
            let p = tfd.amplitude(&bits_of(x, 6)).unwrap().squared_abs().value();
            assert!((p - joint[x]).abs() < 1e-8);
        }
    }

    #[test]
    fn odd_weight_amplitudes_vanish() {
        let chain = BcsChain::new(3, 1.0, 0.6).unwrap();
        let tfd = build_tfd(&chain, 0.9).unwrap();
        for x in 0..64usize {
            if (x as u32).count_ones() % 2 == 1 {
                assert!(tfd.amplitude(&bits_of(x, 6)).unwrap().is_zero());
            }
        }
    }

    #[test]
    fn infinite_temperature_is_diagonal() {
        let chain = BcsChain::new(3, 1.0, 0.6).unwrap();
        let tfd = build_tfd(&chain, 0.0).unwrap();
        for a in 0..8usize {
            for b in 0..8usize {
                let p = tfd
                    .amplitude(&bits_of(a + (b << 3), 6))
                    .unwrap()
                    .squared_abs()
                    .value();
                let expect = if a == b { 0.125 } else { 0.0 };
                assert!((p - expect).abs() < 1e-10, "a={a} b={b}: {p}");
            }
        }
    }

    #[test]
    fn conditionals_match_dense_marginals() {
        let chain = BcsChain::new(2, 1.0, 0.7).unwrap();
        let beta = 0.6;
        let tfd = build_tfd(&chain, beta).unwrap();
        let joint = dense_joint(&chain, beta);
        for ordering in [Ordering::Separate, Ordering::Alternate] {
            let perm = ordering.permutation(2).unwrap();
            // Every prefix: product of conditionals equals the dense prefix
            // marginal.
            for x in 0..16usize {
                let mut st = tfd.sampler(&ordering).unwrap();
                let mut ok = true;
                let mut logp = 0.0f64;
                for t in 0..4 {
                    let bit = ((x >> t) & 1) as u8;
                    match st.condition(bit) {
                        Ok(p) => logp += p.log2(),
                        Err(FermionError::ZeroPrefix) => {
                            ok = false;
                            break;
                        }
                        Err(e) => panic!("{e}"),
                    }
                    // Dense marginal of the prefix in ordering positions.
                    let mut mass = 0.0;
                    for y in 0..16usize {
                        let mut matches = true;
                        for u in 0..=t {
                            if (y >> perm[u]) & 1 != (x >> u) & 1 {
                                matches = false;
                                break;
                            }
                        }
                        if matches {
                            mass += joint[y];
                        }
                    }
                    assert!(
                        (logp.exp2() - mass).abs() < 1e-8,
                        "{} prefix t={t} of x={x}: {} vs {mass}",
                        ordering.name(),
                        logp.exp2()
                    );
                }
                let _ = ok;
            }
        }
    }

    #[test]
    fn beta_zero_copies_prefix_exactly() {
        let chain = BcsChain::new(4, 1.0, 0.8).unwrap();
        let tfd = build_tfd(&chain, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (bits, _) = sample(&tfd, &Ordering::Separate, &mut rng).unwrap();
            for i in 0..4 {
                assert_eq!(bits[i], bits[4 + i], "b must copy a at beta=0");
            }
        }
        // Conditionals on the B block are deterministic once a is fixed.
        let mut st = tfd.sampler(&Ordering::Separate).unwrap();
        let a_bits = [1u8, 0, 1, 1];
        for &b in &a_bits {
            st.condition(b).unwrap();
        }
        for &b in &a_bits {
            let p1 = st.next_prob_one();
            let p = if b == 1 { p1 } else { 1.0 - p1 };
            assert!((p - 1.0).abs() < 1e-9);
            st.condition(b).unwrap();
        }
    }

    #[test]
    fn sampler_logprob_matches_amplitude() {
        let chain = BcsChain::new(3, 1.0, 0.6).unwrap();
        let tfd = build_tfd(&chain, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for ordering in [Ordering::Separate, Ordering::Alternate] {
            for _ in 0..50 {
                let (bits, logp) = sample(&tfd, &ordering, &mut rng).unwrap();
                let direct = tfd.log2_prob(&bits).unwrap().unwrap();
                assert!((logp - direct).abs() < 1e-6, "{logp} vs {direct}");
            }
        }
    }

    #[test]
    fn sampled_frequencies_match_dense() {
        let chain = BcsChain::new(2, 1.0, 0.7).unwrap();
        let beta = 0.5;
        let tfd = build_tfd(&chain, beta).unwrap();
        let joint = dense_joint(&chain, beta);
        let n_samples = 100_000usize;
        let mut counts = vec![0usize; 16];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..n_samples {
            let (bits, _) = sample(&tfd, &Ordering::Separate, &mut rng).unwrap();
            let mut x = 0usize;
            for (u, &b) in bits.iter().enumerate() {
                x |= usize::from(b) << u;
            }
            counts[x] += 1;
        }
        for x in 0..16 {
            let p = joint[x];
            let freq = counts[x] as f64 / n_samples as f64;
            let sigma = (p * (1.0 - p) / n_samples as f64).sqrt().max(1e-12);
            assert!(
                (freq - p).abs() < 4.0 * sigma + 1e-9,
                "x={x}: freq {freq} vs p {p}"
            );
        }
    }

    #[test]
    fn cmi_beta_zero_limits() {
        let chain = BcsChain::new(4, 1.0, 0.8).unwrap();
        let tfd = build_tfd(&chain, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sep = tfd_cmi(&tfd, &Ordering::Separate, 4, None, &mut rng).unwrap();
        assert!(sep.exact);
        assert!((sep.cmi_bits - 4.0).abs() < 1e-8, "{}", sep.cmi_bits);
        let alt = tfd_cmi(&tfd, &Ordering::Alternate, 4, None, &mut rng).unwrap();
        assert!(alt.cmi_bits.abs() < 1e-8, "{}", alt.cmi_bits);
    }

    #[test]
    fn total_entropy_is_ordering_invariant() {
        let chain = BcsChain::new(3, 1.0, 0.6).unwrap();
        let tfd = build_tfd(&chain, 0.7).unwrap();
        let mut hs = Vec::new();
        for ordering in [Ordering::Separate, Ordering::Alternate] {
            let perm = ordering.permutation(3).unwrap();
            let table = enumerate_joint(&tfd, &perm, 3).unwrap();
            hs.push(table.entropy_joint());
        }
        assert!((hs[0] - hs[1]).abs() < 1e-8);
    }

    #[test]
    fn sampled_cmi_agrees_with_exact() {
        let chain = BcsChain::new(4, 1.0, 0.6).unwrap();
        let tfd = build_tfd(&chain, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let exact = tfd_cmi(&tfd, &Ordering::Separate, 4, None, &mut rng).unwrap();
        let sampled = tfd_cmi(&tfd, &Ordering::Separate, 4, Some(20_000), &mut rng).unwrap();
        let err = sampled.stderr_bits.unwrap();
        assert!(
            (sampled.cmi_bits - exact.cmi_bits).abs() < 5.0 * err + 0.02,
            "{} vs {} +- {err}",
            sampled.cmi_bits,
            exact.cmi_bits
        );
    }

    #[test]
    fn separate_cmi_scales_linearly_in_n() {
        // Low temperature ... high temperature: at small beta the separate-
        // ordering CMI tracks n with unit log-log slope.
        let beta = 0.1;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [4usize, 5, 6, 7, 8] {
            let chain = BcsChain::new(n, 1.0, 0.6).unwrap();
            let tfd = build_tfd(&chain, beta).unwrap();
            let cmi = tfd_cmi(&tfd, &Ordering::Separate, n, None, &mut rng).unwrap();
            assert!(cmi.exact);
            xs.push(n as f64);
            ys.push(cmi.cmi_bits);
        }
        let (slope, _) = log_log_slope(&xs, &ys).unwrap();
        assert!((0.9..=1.1).contains(&slope), "slope {slope}");
    }

    #[test]
    fn alternate_cmi_stays_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for n in [4usize, 6, 8] {
            let chain = BcsChain::new(n, 1.0, 0.6).unwrap();
            let tfd = build_tfd(&chain, 0.1).unwrap();
            let cmi = tfd_cmi(&tfd, &Ordering::Alternate, n, None, &mut rng).unwrap();
            assert!(cmi.cmi_bits < 1.0, "n={n}: {}", cmi.cmi_bits);
        }
    }

    #[test]
    fn large_beta_regularization_is_flagged_or_clean() {
        let chain = BcsChain::new(4, 1.0, 2.0).unwrap();
        let tfd = build_tfd(&chain, 50.0).unwrap();
        // Either path must still produce a valid pure state.
        let dev = (&tfd.pairing + tfd.pairing.transpose()).amax();
        assert!(dev < 1e-10);
        let total: f64 = (0..1usize << 8)
            .map(|x| {
                tfd.amplitude(&bits_of(x, 8))
                    .unwrap()
                    .squared_abs()
                    .value()
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-6, "mass {total}");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(BcsChain::new(0, 1.0, 1.0).is_err());
        let chain = BcsChain::new(2, 1.0, 0.5).unwrap();
        assert!(build_tfd(&chain, -1.0).is_err());
        assert!(build_tfd(&chain, f64::NAN).is_err());
        let tfd = build_tfd(&chain, 0.5).unwrap();
        assert!(tfd.amplitude(&[0, 1]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(tfd_cmi(&tfd, &Ordering::Separate, 0, None, &mut rng).is_err());
        assert!(tfd_cmi(&tfd, &Ordering::Separate, 4, None, &mut rng).is_err());
        assert!(Ordering::Custom(vec![0, 1, 2]).permutation(2).is_err());
        assert!(Ordering::Custom(vec![0, 1, 2, 2]).permutation(2).is_err());
    }
}
