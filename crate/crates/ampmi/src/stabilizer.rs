//! Stabilizer descriptions to Z-check systems, the closed-form amplitude CMI
//! rank formula, and enumeration/sampling of the uniform support.

use crate::gf2::{Gf2Error, Gf2Matrix, Gf2Solution};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StabError {
    #[error("generators {0} and {1} do not commute under the symplectic form")]
    NonCommuting(usize, usize),
    #[error("tableau parts have mismatched shapes")]
    ShapeMismatch,
    #[error("syndrome is inconsistent: the amplitude support is empty")]
    Infeasible,
    #[error("support has 2^{0} strings, beyond the enumeration guard (2^24)")]
    SupportTooLarge(usize),
    #[error("bipartition is not a partition of 0..{0}")]
    BadBipartition(usize),
    #[error(transparent)]
    Gf2(#[from] Gf2Error),
    #[error("malformed system description: {0}")]
    BadDescription(String),
}

/// Pauli generators split into X and Z exponent matrices (n_gen x n each).
#[derive(Debug, Clone)]
pub struct StabilizerTableau {
    pub n: usize,
    pub xpart: Gf2Matrix,
    pub zpart: Gf2Matrix,
}

impl StabilizerTableau {
    pub fn new(n: usize, xpart: Gf2Matrix, zpart: Gf2Matrix) -> Result<Self, StabError> {
        if xpart.cols() != n || zpart.cols() != n || xpart.rows() != zpart.rows() {
            return Err(StabError::ShapeMismatch);
        }
        let t = StabilizerTableau { n, xpart, zpart };
        t.check_commuting()?;
        Ok(t)
    }

    fn check_commuting(&self) -> Result<(), StabError> {
        let g = self.xpart.rows();
        for i in 0..g {
            for j in i + 1..g {
                let sym = self.xpart.row_dot(i, &self.zpart, j)
                    ^ self.zpart.row_dot(i, &self.xpart, j);
                if sym != 0 {
                    return Err(StabError::NonCommuting(i, j));
                }
            }
        }
        Ok(())
    }
}

/// A Z-type parity-check system M z = s defining a uniform amplitude support.
#[derive(Debug, Clone)]
pub struct ZCheckSystem {
    pub m: Gf2Matrix,
    pub s: Vec<u8>,
}

impl ZCheckSystem {
    pub fn new(m: Gf2Matrix, s: Vec<u8>) -> Result<Self, StabError> {
        if s.len() != m.rows() {
            return Err(StabError::BadDescription(format!(
                "syndrome length {} does not match {} checks",
                s.len(),
                m.rows()
            )));
        }
        Ok(ZCheckSystem { m, s })
    }

    pub fn homogeneous(m: Gf2Matrix) -> Self {
        let s = vec![0u8; m.rows()];
        ZCheckSystem { m, s }
    }

    pub fn n(&self) -> usize {
        self.m.cols()
    }

    fn solved(&self) -> Result<Gf2Solution, StabError> {
        self.m.solve(&self.s)?.ok_or(StabError::Infeasible)
    }
}

/// Ordered bipartition of qubit indices.
#[derive(Debug, Clone)]
pub struct Bipartition {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

impl Bipartition {
    pub fn new(n: usize, a: Vec<usize>, b: Vec<usize>) -> Result<Self, StabError> {
        let mut seen = vec![false; n];
        for &i in a.iter().chain(&b) {
            if i >= n || seen[i] {
                return Err(StabError::BadBipartition(n));
            }
            seen[i] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(StabError::BadBipartition(n));
        }
        Ok(Bipartition { a, b })
    }

    /// Middle cut: first floor(n/2) indices vs the rest.
    pub fn middle(n: usize) -> Self {
        let m = n / 2;
        Bipartition {
            a: (0..m).collect(),
            b: (m..n).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmiMethod {
    RankFormula,
    BruteForce,
    Sampled,
}

/// A classical mutual information value in bits, tagged with how it was computed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CmiResult {
    pub value_bits: f64,
    pub method: CmiMethod,
    pub stderr_bits: Option<f64>,
}

/// Extracts a basis of the pure-Z subgroup's exponent vectors from a tableau.
///
/// A product of generators with coefficient vector c is Z-only exactly when
/// the combined X part vanishes, i.e. c lies in ker(xpart^T). Each kernel
/// basis vector maps to a row of M through the Z parts.
pub fn z_subgroup(t: &StabilizerTableau) -> Result<Gf2Matrix, StabError> {
    t.check_commuting()?;
    let kernel = t.xpart.transpose().kernel_basis();
    let mut m = Gf2Matrix::zeros(kernel.len(), t.n);
    for (r, c) in kernel.iter().enumerate() {
        for (i, &ci) in c.iter().enumerate() {
            if ci == 1 {
                for j in 0..t.n {
                    if t.zpart.get(i, j) {
                        let cur = m.get(r, j);
                        m.set(r, j, !cur);
                    }
                }
            }
        }
    }
    Ok(m)
}

/// Closed-form amplitude CMI: rank(M_A) + rank(M_B) - rank(M) bits.
/// Independent of the syndrome.
pub fn cmi_rank_formula(m: &Gf2Matrix, cut: &Bipartition) -> Result<CmiResult, StabError> {
    let ma = m.column_restrict(&cut.a)?;
    let mb = m.column_restrict(&cut.b)?;
    let value = ma.rank() as f64 + mb.rank() as f64 - m.rank() as f64;
    Ok(CmiResult {
        value_bits: value,
        method: CmiMethod::RankFormula,
        stderr_bits: None,
    })
}

const ENUM_GUARD_BITS: usize = 24;

/// All strings z with M z = s, ordered by the kernel-coefficient counter.
pub fn enumerate_support(sys: &ZCheckSystem) -> Result<Vec<Vec<u8>>, StabError> {
    let sol = sys.solved()?;
    let k = sol.kernel_basis.len();
    if k > ENUM_GUARD_BITS {
        return Err(StabError::SupportTooLarge(k));
    }
    let n = sys.n();
    let mut out = Vec::with_capacity(1usize << k);
    for counter in 0u64..(1u64 << k) {
        let mut z = sol.particular.clone();
        for (bit, basis) in sol.kernel_basis.iter().enumerate() {
            if (counter >> bit) & 1 == 1 {
                for j in 0..n {
                    z[j] ^= basis[j];
                }
            }
        }
        out.push(z);
    }
    Ok(out)
}

/// I.i.d. uniform samples from the support: particular solution plus a random
/// kernel combination.
pub fn sample_support(
    sys: &ZCheckSystem,
    rng: &mut impl Rng,
    count: usize,
) -> Result<Vec<Vec<u8>>, StabError> {
    let sol = sys.solved()?;
    let n = sys.n();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut z = sol.particular.clone();
        for basis in &sol.kernel_basis {
            if rng.gen_bool(0.5) {
                for j in 0..n {
                    z[j] ^= basis[j];
                }
            }
        }
        out.push(z);
    }
    Ok(out)
}

fn project_index(z: &[u8], idx: &[usize]) -> u64 {
    idx.iter()
        .enumerate()
        .fold(0u64, |acc, (pos, &j)| acc | ((z[j] as u64) << pos))
}

/// Exact CMI of the uniform support distribution via explicit enumeration.
/// Equals `cmi_rank_formula` on every feasible system.
pub fn cmi_brute_force(sys: &ZCheckSystem, cut: &Bipartition) -> Result<CmiResult, StabError> {
    let support = enumerate_support(sys)?;
    let total = support.len() as f64;
    let mut a_counts = std::collections::HashMap::new();
    let mut b_counts = std::collections::HashMap::new();
    for z in &support {
        *a_counts.entry(project_index(z, &cut.a)).or_insert(0usize) += 1;
        *b_counts.entry(project_index(z, &cut.b)).or_insert(0usize) += 1;
    }
    let count_entropy = |counts: &std::collections::HashMap<u64, usize>| {
        -counts
            .values()
            .map(|&c| {
                let p = c as f64 / total;
                p * p.log2()
            })
            .sum::<f64>()
    };
    let h_a = count_entropy(&a_counts);
    let h_b = count_entropy(&b_counts);
    let h_ab = total.log2();
    Ok(CmiResult {
        value_bits: h_a + h_b - h_ab,
        method: CmiMethod::BruteForce,
        stderr_bits: None,
    })
}

/// Plug-in CMI estimate from i.i.d. support samples (empirical joint counts).
pub fn cmi_sampled(
    sys: &ZCheckSystem,
    cut: &Bipartition,
    rng: &mut impl Rng,
    n_samples: usize,
) -> Result<CmiResult, StabError> {
    let samples = sample_support(sys, rng, n_samples)?;
    let total = samples.len() as f64;
    let mut a_counts = std::collections::HashMap::new();
    let mut b_counts = std::collections::HashMap::new();
    let mut ab_counts = std::collections::HashMap::new();
    for z in &samples {
        let a = project_index(z, &cut.a);
        let b = project_index(z, &cut.b);
        *a_counts.entry(a).or_insert(0usize) += 1;
        *b_counts.entry(b).or_insert(0usize) += 1;
        *ab_counts.entry((a, b)).or_insert(0usize) += 1;
    }
    let h = |c: usize| {
        let p = c as f64 / total;
        -p * p.log2()
    };
    let h_a: f64 = a_counts.values().map(|&c| h(c)).sum();
    let h_b: f64 = b_counts.values().map(|&c| h(c)).sum();
    let h_ab: f64 = ab_counts.values().map(|&c| h(c)).sum();
    Ok(CmiResult {
        value_bits: h_a + h_b - h_ab,
        method: CmiMethod::Sampled,
        stderr_bits: None,
    })
}

/// JSON-facing description of a Z-check system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemDescription {
    pub n: usize,
    pub z_checks: Vec<String>,
    pub syndrome: String,
}

impl SystemDescription {
    pub fn to_system(&self) -> Result<ZCheckSystem, StabError> {
        let parse_bits = |s: &str, len: usize, what: &str| -> Result<Vec<u8>, StabError> {
            if s.len() != len {
                return Err(StabError::BadDescription(format!(
                    "{what} has length {}, expected {len}",
                    s.len()
                )));
            }
            s.chars()
                .map(|c| match c {
                    '0' => Ok(0u8),
                    '1' => Ok(1u8),
                    other => Err(StabError::BadDescription(format!(
                        "bad character {other:?} in {what}"
                    ))),
                })
                .collect()
        };
        let rows: Vec<Vec<u8>> = self
            .z_checks
            .iter()
            .map(|c| parse_bits(c, self.n, "z_check"))
            .collect::<Result<_, _>>()?;
        let m = Gf2Matrix::from_rows(self.n, &rows)?;
        let s = parse_bits(&self.syndrome, self.z_checks.len(), "syndrome")?;
        ZCheckSystem::new(m, s)
    }

    pub fn from_system(sys: &ZCheckSystem) -> Self {
        let z_checks = (0..sys.m.rows())
            .map(|i| {
                sys.m
                    .row_bits(i)
                    .iter()
                    .map(|b| char::from(b'0' + b))
                    .collect()
            })
            .collect();
        let syndrome = sys.s.iter().map(|b| char::from(b'0' + b)).collect();
        SystemDescription {
            n: sys.n(),
            z_checks,
            syndrome,
        }
    }
}
