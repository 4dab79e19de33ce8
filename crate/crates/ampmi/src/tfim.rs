//! Dephased thermofield double of the transverse-field Ising chain via the
//! Pfaffian kernel identity: free-fermion partition function, exact and MCMC
//! amplitude mutual information between the two copies, and the small-beta
//! closed form.
//!
//! Conventions. After the Jordan-Wigner transform the chain splits into
//! parity sectors P = +-1 with quadratic blocks A = 2h I - J (S_P + S_P^T)
//! and B = -J S_P + J S_P^T, where S_P is the shift with a P-weighted
//! wrap-around bond. The propagator kernel K(a,b) = <a| exp(-beta H/2) |b>
//! is evaluated per sector from T = exp(-(beta/2) [[A, B], [-B, -A]]):
//! X = T12 T22^{-1}, Z = T22^{-1} T21, e^Y = (T22^{-1})^T, assembled into
//! the antisymmetric 2n x 2n matrix [[X, e^Y], [-e^{Y^T}, Z]] whose
//! principal Pfaffians give the matrix elements. The sign prefactor
//! (-1)^(|I|(|I|+2|J|+1)/2) is validated elementwise against a dense
//! Fock-space oracle; probabilities only ever use |det| and |pf|^2.

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::skewlinalg::{expm, lu_det_inverse, pfaffian, LinalgError, SignLog};

#[derive(Debug, Error)]
pub enum TfimError {
    #[error("chain must have at least one site")]
    EmptyChain,
    #[error("beta must be nonnegative and finite")]
    BadBeta,
    #[error("bit string length {got} does not match n = {want}")]
    BadStringLength { got: usize, want: usize },
    #[error("exact enumeration limited to n <= {limit}, got n = {got}")]
    TooLarge { got: usize, limit: usize },
    #[error("T22 block is singular at this beta")]
    SingularT22,
    #[error("MCMC needs at least {min} steps after burn-in")]
    TooFewSteps { min: usize },
    #[error("linear algebra failure: {0}")]
    Linalg(#[from] LinalgError),
}

/// Transverse-field Ising chain in the fermionized picture.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TfimModel {
    pub n: usize,
    pub j_coupling: f64,
    pub h_field: f64,
}

impl TfimModel {
    pub fn new(n: usize, j_coupling: f64, h_field: f64) -> Result<Self, TfimError> {
        if n == 0 {
            return Err(TfimError::EmptyChain);
        }
        Ok(TfimModel {
            n,
            j_coupling,
            h_field,
        })
    }

    /// Quadratic blocks of the sector Hamiltonian, parity = +1 or -1.
    pub fn blocks(&self, parity: i8) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.n;
        let p = f64::from(parity);
        let mut s = DMatrix::zeros(n, n);
        for j in 0..n.saturating_sub(1) {
            s[(j, j + 1)] = 1.0;
        }
        if n > 1 {
            s[(n - 1, 0)] += p;
        } else {
            s[(0, 0)] += 1.0 + p;
        }
        let j = self.j_coupling;
        let mut a = DMatrix::identity(n, n) * (2.0 * self.h_field);
        a -= (&s + s.transpose()) * j;
        let b = &s * (-j) + s.transpose() * j;
        (a, b)
    }

    /// Quasiparticle dispersion eps(k) = 2 sqrt((h - J cos k)^2 + (J sin k)^2).
    pub fn dispersion(&self, k: f64) -> f64 {
        let (j, h) = (self.j_coupling, self.h_field);
        2.0 * ((h - j * k.cos()).powi(2) + (j * k.sin()).powi(2)).sqrt()
    }
}

/// Per-sector kernel data: the antisymmetric Pfaffian matrix and det(T22).
struct SectorKernel {
    a_big: DMatrix<f64>,
    det_t22: SignLog,
}

fn sector_kernel(model: &TfimModel, parity: i8, beta: f64) -> Result<SectorKernel, TfimError> {
    let n = model.n;
    let (a, b) = model.blocks(parity);
    let mut gen = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            gen[(i, j)] = a[(i, j)];
            gen[(i, n + j)] = b[(i, j)];
            gen[(n + i, j)] = -b[(i, j)];
            gen[(n + i, n + j)] = -a[(i, j)];
        }
    }
    let t = expm(&(gen * (-beta / 2.0)))?;
    let t12 = t.view((0, n), (n, n)).into_owned();
    let t21 = t.view((n, 0), (n, n)).into_owned();
    let t22 = t.view((n, n), (n, n)).into_owned();
    let di = lu_det_inverse(&t22)?;
    if di.det.is_zero() {
        return Err(TfimError::SingularT22);
    }
    let x = &t12 * &di.inverse;
    let z = &di.inverse * &t21;
    let ey = di.inverse.transpose();
    let mut a_big = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            a_big[(i, j)] = x[(i, j)];
            a_big[(i, n + j)] = ey[(i, j)];
            a_big[(n + i, j)] = -ey[(j, i)];
            a_big[(n + i, n + j)] = z[(i, j)];
        }
    }
    Ok(SectorKernel {
        a_big,
        det_t22: di.det,
    })
}

/// Propagator kernel K(a,b) = <a| exp(-beta H / 2) |b> over both parity
/// sectors; `beta` here is the subscript of the kernel, so the internal T
/// blocks are built at beta/2.
pub struct TfimKernel {
    pub model: TfimModel,
    pub beta: f64,
    even: SectorKernel,
    odd: SectorKernel,
}

fn weight_of(bits: usize) -> usize {
    (bits as u64).count_ones() as usize
}

impl TfimKernel {
    pub fn new(model: &TfimModel, beta: f64) -> Result<Self, TfimError> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(TfimError::BadBeta);
        }
        Ok(TfimKernel {
            model: *model,
            beta,
            even: sector_kernel(model, 1, beta)?,
            odd: sector_kernel(model, -1, beta)?,
        })
    }

    /// Signed kernel element for little-endian occupation strings a, b.
    /// Zero across parity sectors.
    pub fn element(&self, a: usize, b: usize) -> Result<SignLog, TfimError> {
        let n = self.model.n;
        let limit = 1usize << n;
        assert!(a < limit && b < limit, "bit strings exceed n sites");
        let (wa, wb) = (weight_of(a), weight_of(b));
        if wa % 2 != wb % 2 {
            return Ok(SignLog::from_value(0.0));
        }
        let sector = if wa % 2 == 0 { &self.even } else { &self.odd };
        // Kernel index sets: J from the bra string a, I from the ket b;
        // S = J(a) union (n + I(b)), ascending.
        let mut s_set: Vec<usize> = (0..n).filter(|&j| (a >> j) & 1 == 1).collect();
        s_set.extend((0..n).filter(|&i| (b >> i) & 1 == 1).map(|i| n + i));
        let m = s_set.len();
        let mut sub = DMatrix::zeros(m, m);
        for (p, &u) in s_set.iter().enumerate() {
            for (q, &v) in s_set.iter().enumerate() {
                sub[(p, q)] = sector.a_big[(u, v)];
            }
        }
        let pf = pfaffian(&sub)?;
        let exponent = (wb * (wb + 2 * wa + 1)) / 2;
        let sign = if exponent % 2 == 0 { 1i8 } else { -1 };
        let sqrt_det = SignLog {
            sign: 1,
            log_abs: sector.det_t22.log_abs / 2.0,
        };
        Ok(pf.mul(sqrt_det).mul(SignLog {
            sign,
            log_abs: 0.0,
        }))
    }
}

/// log of (C_theta +- S_theta)/2 with C = prod 2cosh(x_k), S = prod 2sinh(x_k).
/// Factoring e^(sum x) leaves products of (1 +- e^{-2x}); their difference is
/// taken through expm1 so the low-temperature cancellation stays accurate.
fn log_half_c_plus_s(xs: &[f64], sign: f64) -> f64 {
    let sum_x: f64 = xs.iter().sum();
    let log_plus: f64 = xs.iter().map(|&x| (-2.0 * x).exp().ln_1p()).sum();
    if xs.iter().any(|&x| x <= 0.0) {
        // A zero mode kills S entirely.
        return sum_x + log_plus - std::f64::consts::LN_2;
    }
    let log_minus: f64 = xs.iter().map(|&x| (-(-2.0 * x).exp()).ln_1p()).sum();
    if sign > 0.0 {
        // C + S: plain logsumexp of the two positive products.
        let hi = log_plus.max(log_minus);
        sum_x + hi + ((log_plus - hi).exp() + (log_minus - hi).exp()).ln()
            - std::f64::consts::LN_2
    } else {
        // C - S = e^{sum x} e^{log_minus} expm1(log_plus - log_minus) > 0.
        sum_x + log_minus + (log_plus - log_minus).exp_m1().ln() - std::f64::consts::LN_2
    }
}

/// Thermal partition function from the momentum-space product formula:
/// Z = (C_0 + sgn(h-J) S_0)/2 + (C_pi - S_pi)/2 with the K_0, K_pi grids.
pub fn partition_function(model: &TfimModel, beta: f64) -> Result<SignLog, TfimError> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(TfimError::BadBeta);
    }
    let n = model.n;
    let tau = 2.0 * std::f64::consts::PI;
    // sgn(0) treated as +1 at the critical point h = J.
    let vac0 = if model.h_field >= model.j_coupling {
        1.0
    } else {
        -1.0
    };
    let mut halves = Vec::with_capacity(2);
    for (theta_half, vac_sign) in [(0.0, vac0), (0.5, -1.0)] {
        let xs: Vec<f64> = (0..n)
            .map(|m| {
                let k = tau * (m as f64 + theta_half) / n as f64;
                beta * model.dispersion(k) / 2.0
            })
            .collect();
        halves.push(log_half_c_plus_s(&xs, vac_sign));
    }
    let hi = halves[0].max(halves[1]);
    let log_z = hi + ((halves[0] - hi).exp() + (halves[1] - hi).exp()).ln();
    Ok(SignLog {
        sign: 1,
        log_abs: log_z,
    })
}

/// Unnormalized joint and marginal weights of the dephased distribution.
/// w(a,b) = K_beta(a,b)^2; w_A(a) = <a| exp(-beta H) |a> is the same kernel
/// at doubled argument, diagonal.
pub struct TfimWeights {
    kernel: TfimKernel,
    doubled: TfimKernel,
    pub z_beta: SignLog,
}

impl TfimWeights {
    pub fn new(model: &TfimModel, beta: f64) -> Result<Self, TfimError> {
        Ok(TfimWeights {
            kernel: TfimKernel::new(model, beta)?,
            doubled: TfimKernel::new(model, 2.0 * beta)?,
            z_beta: partition_function(model, beta)?,
        })
    }

    pub fn n(&self) -> usize {
        self.kernel.model.n
    }

    /// log2 w(a,b); None when the weight is exactly zero.
    pub fn log2_joint(&self, a: usize, b: usize) -> Result<Option<f64>, TfimError> {
        let k = self.kernel.element(a, b)?;
        if k.is_zero() {
            return Ok(None);
        }
        Ok(Some(2.0 * k.log_abs / std::f64::consts::LN_2))
    }

    /// log2 w_A(a) = log2 w_B(a) (the two marginals share one formula).
    pub fn log2_marginal(&self, a: usize) -> Result<f64, TfimError> {
        let k = self.doubled.element(a, a)?;
        Ok(k.log_abs / std::f64::consts::LN_2)
    }
}

/// CMI estimate between the two copies of the dephased TFD.
#[derive(Debug, Clone, Copy)]
pub struct TfimCmi {
    pub cmi_bits: f64,
    pub stderr_bits: Option<f64>,
    pub exact: bool,
}

/// Exact-enumeration guard: 4^n joint entries.
pub const TFIM_ENUM_LIMIT: usize = 10;

/// Exact CMI of P(a,b) = w(a,b)/Z over both parity sectors.
pub fn cmi_exact(model: &TfimModel, beta: f64) -> Result<TfimCmi, TfimError> {
    let n = model.n;
    if n > TFIM_ENUM_LIMIT {
        return Err(TfimError::TooLarge {
            got: n,
            limit: TFIM_ENUM_LIMIT,
        });
    }
    let weights = TfimWeights::new(model, beta)?;
    let dim = 1usize << n;
    let mut log_w = vec![f64::NEG_INFINITY; dim * dim];
    let mut max_log = f64::NEG_INFINITY;
    for a in 0..dim {
        for b in 0..dim {
            if weight_of(a) % 2 != weight_of(b) % 2 {
                continue;
            }
            if let Some(lw) = weights.log2_joint(a, b)? {
                log_w[a * dim + b] = lw;
                max_log = max_log.max(lw);
            }
        }
    }
    let mut p: Vec<f64> = log_w.iter().map(|&lw| (lw - max_log).exp2()).collect();
    let mass: f64 = p.iter().sum();
    for q in p.iter_mut() {
        *q /= mass;
    }
    let mut pa = vec![0.0f64; dim];
    let mut pb = vec![0.0f64; dim];
    for a in 0..dim {
        for b in 0..dim {
            pa[a] += p[a * dim + b];
            pb[b] += p[a * dim + b];
        }
    }
    let mut mi = 0.0;
    for a in 0..dim {
        for b in 0..dim {
            let q = p[a * dim + b];
            if q > 0.0 {
                mi += q * (q / (pa[a] * pb[b])).log2();
            }
        }
    }
    Ok(TfimCmi {
        cmi_bits: mi,
        stderr_bits: None,
        exact: true,
    })
}

/// Metropolis estimate of the copy CMI:
/// I = log2 Z + E[log2 w(a,b) - log2 w_A(a) - log2 w_B(b)],
/// with parity-preserving proposals and batch-means standard error.
pub fn cmi_mcmc(
    model: &TfimModel,
    beta: f64,
    n_steps: usize,
    burn_in: usize,
    rng: &mut impl Rng,
) -> Result<TfimCmi, TfimError> {
    let n = model.n;
    let kept = n_steps.saturating_sub(burn_in);
    const MIN_KEPT: usize = 400;
    if kept < MIN_KEPT {
        return Err(TfimError::TooFewSteps { min: MIN_KEPT });
    }
    let weights = TfimWeights::new(model, beta)?;
    let dim = 1usize << n;

    // Start from a nonzero-weight diagonal pair; the diagonal always has
    // w(a,a) > 0 for beta < infinity.
    let mut a = rng.gen_range(0..dim);
    let mut b = a;
    let mut log_w = weights
        .log2_joint(a, b)?
        .expect("diagonal weight is positive");

    let mut samples = Vec::with_capacity(kept);
    for step in 0..n_steps {
        let (na, nb) = if rng.gen_bool(0.5) {
            // Flip one bit in each copy: both Hamming parities flip together.
            (a ^ (1 << rng.gen_range(0..n)), b ^ (1 << rng.gen_range(0..n)))
        } else {
            // Flip two distinct bits in one copy: parity preserved.
            let i = rng.gen_range(0..n);
            let mut j = rng.gen_range(0..n);
            while j == i {
                j = rng.gen_range(0..n);
            }
            let mask = (1usize << i) | (1usize << j);
            if rng.gen_bool(0.5) {
                (a ^ mask, b)
            } else {
                (a, b ^ mask)
            }
        };
        if let Some(new_log_w) = weights.log2_joint(na, nb)? {
            let log_ratio = new_log_w - log_w;
            if log_ratio >= 0.0 || rng.gen::<f64>() < log_ratio.exp2() {
                a = na;
                b = nb;
                log_w = new_log_w;
            }
        }
        if step >= burn_in {
            let stat = log_w - weights.log2_marginal(a)? - weights.log2_marginal(b)?;
            samples.push(stat);
        }
    }

    // Batch means over ~30 batches absorb autocorrelation.
    let n_batches = 30.min(samples.len() / 10).max(2);
    let batch_len = samples.len() / n_batches;
    let used = n_batches * batch_len;
    let means: Vec<f64> = (0..n_batches)
        .map(|k| {
            samples[k * batch_len..(k + 1) * batch_len].iter().sum::<f64>() / batch_len as f64
        })
        .collect();
    let grand: f64 = samples[..used].iter().sum::<f64>() / used as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (n_batches - 1) as f64;
    let stderr = (var / n_batches as f64).sqrt();

    let log2_z = weights.z_beta.log_abs / std::f64::consts::LN_2;
    Ok(TfimCmi {
        cmi_bits: log2_z + grand,
        stderr_bits: Some(stderr),
        exact: false,
    })
}

/// Leading small-beta expansion of the copy CMI:
/// n - (beta^2/2 ln2) h^2 n - (beta^2/4) J^2 n [1/ln2 - log2(beta^2 J^2/4)].
pub fn small_beta_formula(n: usize, beta: f64, j: f64, h: f64) -> f64 {
    let nf = n as f64;
    let ln2 = std::f64::consts::LN_2;
    let mut out = nf - beta.powi(2) / (2.0 * ln2) * h * h * nf;
    if j != 0.0 {
        out -= beta.powi(2) / 4.0
            * j
            * j
            * nf
            * (1.0 / ln2 - (beta * beta * j * j / 4.0).log2());
    }
    out
}
