//! Distribution machinery: exact entropies and mutual information, the
//! MI <= log2(rank) lemma checker, the entropy continuity bound, and the
//! exact-log-prob sampling estimator.
//!
//! All entropies are in bits throughout the crate.

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InfoError {
    #[error("probability vector is not normalized (mass {0})")]
    Unnormalized(f64),
    #[error("negative probability entry {0}")]
    Negative(f64),
    #[error("joint table mass {0} deviates from 1 by more than 1e-12")]
    BadTableMass(f64),
    #[error("marginal contains a zero entry (index {0})")]
    ZeroMarginal(usize),
    #[error("probability vectors have mismatched lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("support size must be at least 2")]
    SupportTooSmall,
}

const MASS_TOL: f64 = 1e-12;

/// Shannon entropy in bits of a normalized probability vector.
pub fn entropy(p: &[f64]) -> Result<f64, InfoError> {
    let mut mass = 0.0;
    for &x in p {
        if x < 0.0 {
            return Err(InfoError::Negative(x));
        }
        mass += x;
    }
    if (mass - 1.0).abs() > 1e-9 {
        return Err(InfoError::Unnormalized(mass));
    }
    Ok(entropy_unchecked(p))
}

fn entropy_unchecked(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.log2())
        .sum::<f64>()
}

/// Explicit joint distribution over a bipartition A x B.
#[derive(Debug, Clone)]
pub struct JointTable {
    a_size: usize,
    b_size: usize,
    p: Vec<f64>, // row-major, a_size x b_size
}

impl JointTable {
    pub fn new(a_size: usize, b_size: usize, p: Vec<f64>) -> Result<Self, InfoError> {
        assert_eq!(p.len(), a_size * b_size, "table shape mismatch");
        let mut mass = 0.0;
        for &x in &p {
            if x < 0.0 {
                return Err(InfoError::Negative(x));
            }
            mass += x;
        }
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(InfoError::BadTableMass(mass));
        }
        Ok(JointTable { a_size, b_size, p })
    }

    pub fn a_size(&self) -> usize {
        self.a_size
    }

    pub fn b_size(&self) -> usize {
        self.b_size
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.p[a * self.b_size + b]
    }

    pub fn marginal_a(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.a_size];
        for a in 0..self.a_size {
            m[a] = self.p[a * self.b_size..(a + 1) * self.b_size].iter().sum();
        }
        m
    }

    pub fn marginal_b(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.b_size];
        for a in 0..self.a_size {
            for b in 0..self.b_size {
                m[b] += self.get(a, b);
            }
        }
        m
    }

    pub fn entropy_joint(&self) -> f64 {
        entropy_unchecked(&self.p)
    }
}

/// Exact mutual information H(A) + H(B) - H(AB) in bits.
pub fn mutual_information(q: &JointTable) -> f64 {
    let ha = entropy_unchecked(&q.marginal_a());
    let hb = entropy_unchecked(&q.marginal_b());
    let hab = q.entropy_joint();
    ha + hb - hab
}

/// Outcome of checking I(A:B) <= log2 rank(Q_AB).
#[derive(Debug, Clone, Copy)]
pub struct RankBoundCheck {
    pub mi_bits: f64,
    pub log2_rank: f64,
    pub holds: bool,
}

/// Numeric rank via singular values above 1e-10 * sigma_max.
pub fn rank_bound_check(q: &JointTable) -> RankBoundCheck {
    let m = DMatrix::from_fn(q.a_size, q.b_size, |a, b| q.get(a, b));
    let svd = m.svd(false, false);
    let smax = svd.singular_values.max();
    let rank = if smax == 0.0 {
        0
    } else {
        svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count()
    };
    let mi = mutual_information(q);
    let log2_rank = (rank.max(1) as f64).log2();
    RankBoundCheck {
        mi_bits: mi,
        log2_rank,
        holds: mi <= log2_rank + 1e-9,
    }
}

/// Checks the identity chi^2(P_AB || p_A p_B) = ||M||_F^2 - 1 with
/// M_ab = P(a,b)/sqrt(p_A(a) p_B(b)); returns the absolute deviation.
/// Also asserts the chain link I <= log2(1 + chi^2).
pub fn chi2_identity_check(q: &JointTable) -> Result<f64, InfoError> {
    let pa = q.marginal_a();
    let pb = q.marginal_b();
    if let Some(i) = pa.iter().position(|&x| x == 0.0) {
        return Err(InfoError::ZeroMarginal(i));
    }
    if let Some(i) = pb.iter().position(|&x| x == 0.0) {
        return Err(InfoError::ZeroMarginal(i));
    }
    let mut frob2 = 0.0;
    let mut chi2 = 0.0;
    for a in 0..q.a_size {
        for b in 0..q.b_size {
            let p = q.get(a, b);
            frob2 += p * p / (pa[a] * pb[b]);
            chi2 += p * p / (pa[a] * pb[b]);
        }
    }
    chi2 -= 1.0;
    let deviation = (frob2 - 1.0 - chi2).abs();
    let mi = mutual_information(q);
    assert!(
        mi <= (1.0 + chi2).log2() + 1e-9,
        "lemma chain violated: I = {mi}, log2(1+chi2) = {}",
        (1.0 + chi2).log2()
    );
    Ok(deviation)
}

/// Result of the entropy continuity bound |H(p)-H(q)| <= (e/2)log2(d-1) + h2(e/2).
#[derive(Debug, Clone, Copy)]
pub struct ContinuityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Binary entropy h2(x) in bits.
pub fn binary_entropy(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
    }
}

pub fn entropy_continuity_check(p: &[f64], q: &[f64]) -> Result<ContinuityCheck, InfoError> {
    if p.len() != q.len() {
        return Err(InfoError::LengthMismatch(p.len(), q.len()));
    }
    let d = p.len();
    if d < 2 {
        return Err(InfoError::SupportTooSmall);
    }
    let hp = entropy(p)?;
    let hq = entropy(q)?;
    let eps: f64 = p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
    let lhs = (hp - hq).abs();
    let rhs = eps / 2.0 * ((d - 1) as f64).log2() + binary_entropy(eps / 2.0);
    Ok(ContinuityCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9,
    })
}

/// Entropy estimate from exact per-sample log-probabilities.
#[derive(Debug, Clone, Copy)]
pub struct EntropyEstimate {
    pub bits: f64,
    pub stderr_bits: f64,
    pub n_samples: usize,
}

/// A sampler with exact prefix log-probabilities under a fixed autoregressive
/// ordering. `sample_with_prefix` draws one sequence and reports the exact
/// log2-probability of the whole string and of its first `prefix_len` tokens.
pub trait OrderedSampler {
    fn seq_len(&self) -> usize;
    fn sample_with_prefix(
        &self,
        rng: &mut dyn rand::RngCore,
        prefix_len: usize,
    ) -> (Vec<u8>, f64, f64);
}

/// Sampling MI estimate plus the three entropy components.
#[derive(Debug, Clone, Copy)]
pub struct MiEstimate {
    pub h_a: EntropyEstimate,
    pub h_b: EntropyEstimate,
    pub h_ab: EntropyEstimate,
    pub mi_bits: f64,
    pub stderr_bits: f64,
}

/// Plug-in MI from exact log-probabilities.
///
/// `a_first` samples the full sequence with the A block first (prefix of
/// length `cut`); `b_first` samples with the B block first (prefix of length
/// seq_len - cut). Since per-sample log-probs are exact, each entropy term is
/// an unbiased mean and the estimator carries no plug-in bias.
pub fn mi_from_exact_logprobs<S: OrderedSampler + ?Sized>(
    a_first: &S,
    b_first: &S,
    cut: usize,
    n_samples: usize,
    rng: &mut impl Rng,
) -> MiEstimate {
    assert!(cut > 0 && cut < a_first.seq_len(), "cut must be interior");
    assert_eq!(a_first.seq_len(), b_first.seq_len());
    let len = a_first.seq_len();

    // H(AB) - H(A) from the A-first chain, H(B) from the B-first chain.
    let mut joint = Accumulator::default();
    let mut a_part = Accumulator::default();
    let mut diff = Accumulator::default();
    for _ in 0..n_samples {
        let (_, log_full, log_prefix) = a_first.sample_with_prefix(rng, cut);
        joint.push(-log_full);
        a_part.push(-log_prefix);
        diff.push(log_full - log_prefix); // -( H(AB) - H(A) ) contribution
    }
    let mut b_part = Accumulator::default();
    for _ in 0..n_samples {
        let (_, _, log_prefix) = b_first.sample_with_prefix(rng, len - cut);
        b_part.push(-log_prefix);
    }

    let h_ab = joint.estimate();
    let h_a = a_part.estimate();
    let h_b = b_part.estimate();
    // MI = H(A) + H(B) - H(AB) = E[log P(AB) - log P(A)] + E[-log P(B)];
    // the first expectation is taken per-sample, so shared fluctuations
    // between H(A) and H(AB) cancel in the variance.
    let d = diff.estimate();
    let mi = d.bits + h_b.bits;
    let stderr = (d.stderr_bits.powi(2) + h_b.stderr_bits.powi(2)).sqrt();
    MiEstimate {
        h_a,
        h_b,
        h_ab,
        mi_bits: mi,
        stderr_bits: stderr,
    }
}

#[derive(Default)]
struct Accumulator {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

impl Accumulator {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn estimate(&self) -> EntropyEstimate {
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = (self.sum_sq / n - mean * mean).max(0.0);
        EntropyEstimate {
            bits: mean,
            stderr_bits: (var / n).sqrt(),
            n_samples: self.n,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn entropy_basics() {
        let uniform8 = vec![1.0 / 8.0; 8];
        assert!((entropy(&uniform8).unwrap() - 3.0).abs() < 1e-12);
        let delta = vec![1.0, 0.0, 0.0];
        assert!(entropy(&delta).unwrap().abs() < 1e-12);
        let p = vec![0.5, 0.25, 0.25];
        assert!((entropy(&p).unwrap() - 1.5).abs() < 1e-12);
        assert!(entropy(&[0.5, 0.4]).is_err());
    }

    #[test]
    fn mi_product_and_diagonal() {
        let product = JointTable::new(2, 2, vec![0.25; 4]).unwrap();
        assert!(mutual_information(&product).abs() < 1e-12);
        let diag = JointTable::new(4, 4, {
            let mut p = vec![0.0; 16];
            for i in 0..4 {
                p[i * 4 + i] = 0.25;
            }
            p
        })
        .unwrap();
        assert!((mutual_information(&diag) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mi_hand_computed_table() {
        // direct summation of p*log2(p/(pa*pb)) gives 0.311278...
        let q = JointTable::new(2, 2, vec![0.5, 0.0, 0.25, 0.25]).unwrap();
        let expected = {
            let cells: [(f64, f64, f64); 3] =
                [(0.5, 0.5, 0.75), (0.25, 0.5, 0.75), (0.25, 0.5, 0.25)];
            cells
                .iter()
                .map(|(p, pa, pb)| p * (p / (pa * pb)).log2())
                .sum::<f64>()
        };
        assert!((mutual_information(&q) - expected).abs() < 1e-12);
        assert!((mutual_information(&q) - 0.31127812).abs() < 1e-7);
    }

    #[test]
    fn rank_bound_saturation_and_product() {
        let diag = JointTable::new(4, 4, {
            let mut p = vec![0.0; 16];
            for i in 0..4 {
                p[i * 4 + i] = 0.25;
            }
            p
        })
        .unwrap();
        let r = rank_bound_check(&diag);
        assert!(r.holds);
        assert!((r.mi_bits - r.log2_rank).abs() < 1e-9);

        let product = JointTable::new(3, 3, vec![1.0 / 9.0; 9]).unwrap();
        let r = rank_bound_check(&product);
        assert!(r.holds);
        assert!(r.log2_rank.abs() < 1e-12);
        assert!(r.mi_bits.abs() < 1e-9);
    }

    fn random_dirichlet_table(a: usize, b: usize, rng: &mut ChaCha8Rng) -> JointTable {
        // exponential spacings give a flat Dirichlet
        let mut p: Vec<f64> = (0..a * b).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
        let mass: f64 = p.iter().sum();
        for x in &mut p {
            *x /= mass;
        }
        JointTable::new(a, b, p).unwrap()
    }

    #[test]
    fn chi2_identity_on_known_tables() {
        let product = JointTable::new(2, 3, vec![1.0 / 6.0; 6]).unwrap();
        assert!(chi2_identity_check(&product).unwrap() < 1e-12);

        for k in [2usize, 4, 8] {
            let mut p = vec![1e-15; k * k]; // tiny floor keeps marginals positive
            for i in 0..k {
                p[i * k + i] = 1.0 / k as f64 - 1e-15 * (k as f64 - 1.0);
            }
            let q = JointTable::new(k, k, p).unwrap();
            let pa = q.marginal_a();
            let pb = q.marginal_b();
            let mut chi2 = -1.0;
            for a in 0..k {
                for b in 0..k {
                    chi2 += q.get(a, b).powi(2) / (pa[a] * pb[b]);
                }
            }
            assert!((chi2 - (k as f64 - 1.0)).abs() < 1e-6);
            assert!(chi2_identity_check(&q).unwrap() < 1e-10);
        }
    }

    #[test]
    fn continuity_bound_examples() {
        let p = vec![0.3, 0.7];
        let c = entropy_continuity_check(&p, &p).unwrap();
        assert!(c.lhs.abs() < 1e-12 && c.rhs.abs() < 1e-12 && c.holds);

        // d=2 extremal case: equality
        let c = entropy_continuity_check(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((c.lhs - 1.0).abs() < 1e-12);
        assert!((c.rhs - 1.0).abs() < 1e-12);
        assert!(c.holds);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn rank_bound_holds_on_random_tables(seed in 0u64..10_000, a in 2usize..17, b in 2usize..17) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_dirichlet_table(a, b, &mut rng);
            let r = rank_bound_check(&q);
            prop_assert!(r.holds, "mi={} log2rank={}", r.mi_bits, r.log2_rank);
            prop_assert!(chi2_identity_check(&q).unwrap() < 1e-10);
        }

        #[test]
        fn mi_bounded_by_marginal_entropies(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_dirichlet_table(5, 7, &mut rng);
            let mi = mutual_information(&q);
            let ha = entropy(&q.marginal_a()).unwrap();
            let hb = entropy(&q.marginal_b()).unwrap();
            prop_assert!(mi >= -1e-12);
            prop_assert!(mi <= ha.min(hb) + 1e-9);
        }

        #[test]
        fn continuity_bound_fuzz(seed in 0u64..10_000, d in 2usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() + 1e-12).collect();
            let mass: f64 = p.iter().sum();
            p.iter_mut().for_each(|x| *x /= mass);
            let mut q = p.clone();
            // random perturbation, renormalized
            for x in &mut q {
                *x = (*x + rng.gen_range(-0.1..0.1)).max(1e-12);
            }
            let mass: f64 = q.iter().sum();
            q.iter_mut().for_each(|x| *x /= mass);
            let c = entropy_continuity_check(&p, &q).unwrap();
            prop_assert!(c.holds, "lhs={} rhs={}", c.lhs, c.rhs);
        }
    }

    /// A toy ordered sampler over two perfectly correlated bits.
    struct CorrelatedPair;

    impl OrderedSampler for CorrelatedPair {
        fn seq_len(&self) -> usize {
            2
        }
        fn sample_with_prefix(
            &self,
            rng: &mut dyn rand::RngCore,
            prefix_len: usize,
        ) -> (Vec<u8>, f64, f64) {
            let b = (rng.next_u32() & 1) as u8;
            let log_full = -1.0; // P(bb) = 1/2
            let log_prefix = if prefix_len >= 1 { -1.0 } else { 0.0 };
            (vec![b, b], log_full, log_prefix)
        }
    }

    #[test]
    fn mi_estimator_on_correlated_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let est = mi_from_exact_logprobs(&CorrelatedPair, &CorrelatedPair, 1, 2000, &mut rng);
        assert!((est.mi_bits - 1.0).abs() < 1e-9);
        assert!(est.stderr_bits < 1e-9); // log-probs are constant per sample
    }
}
