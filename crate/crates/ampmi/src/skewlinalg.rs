//! Dense kernels shared by the fermionic modules: Pfaffian in sign/log form,
//! matrix exponential, LU determinant/inverse.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("pfaffian requires an even dimension, got {0}")]
    OddDimension(usize),
    #[error("matrix is not antisymmetric: max |A + A^T| = {0:e}")]
    NotAntisymmetric(f64),
    #[error("non-finite entry in input matrix")]
    NonFinite,
    #[error("matrix is singular within tolerance (pivot {pivot:e} at step {step})")]
    Singular { pivot: f64, step: usize },
    #[error("matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
}

/// A signed magnitude in log space: value = sign * exp(log_abs).
///
/// Pfaffians and determinants always travel in this form; raw values overflow
/// past a few dozen modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignLog {
    pub sign: i8,
    pub log_abs: f64,
}

impl SignLog {
    pub const ZERO: SignLog = SignLog {
        sign: 0,
        log_abs: f64::NEG_INFINITY,
    };
    pub const ONE: SignLog = SignLog {
        sign: 1,
        log_abs: 0.0,
    };

    pub fn from_value(v: f64) -> SignLog {
        if v == 0.0 {
            SignLog::ZERO
        } else {
            SignLog {
                sign: if v > 0.0 { 1 } else { -1 },
                log_abs: v.abs().ln(),
            }
        }
    }

    pub fn value(self) -> f64 {
        self.sign as f64 * self.log_abs.exp()
    }

    pub fn is_zero(self) -> bool {
        self.sign == 0
    }

    pub fn mul(self, other: SignLog) -> SignLog {
        if self.is_zero() || other.is_zero() {
            SignLog::ZERO
        } else {
            SignLog {
                sign: self.sign * other.sign,
                log_abs: self.log_abs + other.log_abs,
            }
        }
    }

    /// self * v for a plain scalar.
    pub fn mul_value(self, v: f64) -> SignLog {
        self.mul(SignLog::from_value(v))
    }

    pub fn abs(self) -> SignLog {
        SignLog {
            sign: if self.sign == 0 { 0 } else { 1 },
            log_abs: self.log_abs,
        }
    }

    /// |self|^2 in log space.
    pub fn squared_abs(self) -> SignLog {
        if self.is_zero() {
            SignLog::ZERO
        } else {
            SignLog {
                sign: 1,
                log_abs: 2.0 * self.log_abs,
            }
        }
    }
}

/// Pfaffian of a real antisymmetric matrix via skew-symmetric elimination
/// (Parlett-Reid) with partial pivoting.
///
/// The input is symmetrized to (A - A^T)/2 after an antisymmetry check at
/// 1e-10 relative tolerance.
pub fn pfaffian(a: &DMatrix<f64>) -> Result<SignLog, LinalgError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::NotSquare(a.nrows(), a.ncols()));
    }
    if n % 2 != 0 {
        return Err(LinalgError::OddDimension(n));
    }
    if n == 0 {
        return Ok(SignLog::ONE);
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let scale = a.amax().max(1.0);
    let asym = (a + a.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(LinalgError::NotAntisymmetric(asym));
    }
    let mut m = (a - a.transpose()) * 0.5;

    let mut result = SignLog::ONE;
    let mut k = 0;
    while k + 1 < n {
        // largest entry in column k below the diagonal
        let mut kp = k + 1;
        let mut best = m[(k + 1, k)].abs();
        for i in k + 2..n {
            let v = m[(i, k)].abs();
            if v > best {
                best = v;
                kp = i;
            }
        }
        if kp != k + 1 {
            m.swap_rows(k + 1, kp);
            m.swap_columns(k + 1, kp);
            result.sign = -result.sign;
        }
        let pivot = m[(k, k + 1)];
        if pivot == 0.0 {
            return Ok(SignLog::ZERO);
        }
        result = result.mul_value(pivot);
        if k + 2 < n {
            // rank-2 skew update of the trailing block
            let tau: Vec<f64> = (k + 2..n).map(|j| m[(k, j)] / pivot).collect();
            let col: Vec<f64> = (k + 2..n).map(|i| m[(i, k + 1)]).collect();
            for (ii, i) in (k + 2..n).enumerate() {
                for (jj, j) in (k + 2..n).enumerate() {
                    m[(i, j)] += tau[ii] * col[jj] - col[ii] * tau[jj];
                }
            }
        }
        k += 2;
    }
    Ok(result)
}

// Pade coefficients for the degree-13 approximant.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Matrix exponential by scaling-and-squaring with the [13/13] Pade
/// approximant.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::NotSquare(a.nrows(), a.ncols()));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    // 1-norm based scaling; theta_13 from Higham's analysis
    let norm = (0..n)
        .map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let theta13 = 5.371920351148152;
    let s = if norm > theta13 {
        (norm / theta13).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(s);

    let id = DMatrix::identity(n, n);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let b = &PADE13;
    let u_inner = &a6 * (b[13] * &a6 + b[11] * &a4 + b[9] * &a2)
        + b[7] * &a6
        + b[5] * &a4
        + b[3] * &a2
        + b[1] * &id;
    let u = &scaled * u_inner;
    let v = &a6 * (b[12] * &a6 + b[10] * &a4 + b[8] * &a2)
        + b[6] * &a6
        + b[4] * &a4
        + b[2] * &a2
        + b[0] * &id;
    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut x = lhs
        .lu()
        .solve(&rhs)
        .ok_or(LinalgError::Singular { pivot: 0.0, step: 0 })?;
    for _ in 0..s {
        x = &x * &x;
    }
    Ok(x)
}

/// Determinant (in sign/log form) and inverse from a single partial-pivot LU.
pub struct DetInverse {
    pub det: SignLog,
    pub inverse: DMatrix<f64>,
}

pub fn lu_det_inverse(a: &DMatrix<f64>) -> Result<DetInverse, LinalgError> {
    let det = lu_det(a)?;
    if det.is_zero() {
        return Err(LinalgError::Singular { pivot: 0.0, step: 0 });
    }
    let n = a.nrows();
    let inverse = a
        .clone()
        .lu()
        .solve(&DMatrix::identity(n, n))
        .ok_or(LinalgError::Singular { pivot: 0.0, step: 0 })?;
    Ok(DetInverse { det, inverse })
}

/// Determinant alone, flagging near-singularity when a pivot drops below
/// 1e-13 * max|A|.
pub fn lu_det(a: &DMatrix<f64>) -> Result<SignLog, LinalgError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::NotSquare(a.nrows(), a.ncols()));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    if n == 0 {
        return Ok(SignLog::ONE);
    }
    let scale = a.amax();
    let mut m = a.clone();
    let mut det = SignLog::ONE;
    for k in 0..n {
        let mut p = k;
        let mut best = m[(k, k)].abs();
        for i in k + 1..n {
            if m[(i, k)].abs() > best {
                best = m[(i, k)].abs();
                p = i;
            }
        }
        if best < 1e-13 * scale.max(1.0) {
            return Err(LinalgError::Singular { pivot: best, step: k });
        }
        if p != k {
            m.swap_rows(k, p);
            det.sign = -det.sign;
        }
        let pivot = m[(k, k)];
        det = det.mul_value(pivot);
        for i in k + 1..n {
            let f = m[(i, k)] / pivot;
            m[(i, k)] = f;
            for j in k + 1..n {
                m[(i, j)] -= f * m[(k, j)];
            }
        }
    }
    Ok(det)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_antisym(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        (&raw - raw.transpose()) * 0.5
    }

    #[test]
    fn pfaffian_two_by_two() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 3.0, -3.0, 0.0]);
        let pf = pfaffian(&a).unwrap();
        assert!((pf.value() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn pfaffian_block_diagonal() {
        let mut a = DMatrix::zeros(4, 4);
        a[(0, 1)] = 1.0;
        a[(1, 0)] = -1.0;
        a[(2, 3)] = 1.0;
        a[(3, 2)] = -1.0;
        assert!((pfaffian(&a).unwrap().value() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pfaffian_odd_dimension_rejected() {
        let a = DMatrix::zeros(3, 3);
        assert!(matches!(pfaffian(&a), Err(LinalgError::OddDimension(3))));
    }

    #[test]
    fn pfaffian_rejects_symmetric_part() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(pfaffian(&a), Err(LinalgError::NotAntisymmetric(_))));
    }

    #[test]
    fn pfaffian_squared_is_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [2, 4, 6, 8] {
            for _ in 0..20 {
                let a = random_antisym(n, &mut rng);
                let pf = pfaffian(&a).unwrap();
                let det = lu_det(&a).map(|d| d.value()).unwrap_or(0.0);
                let pf2 = pf.squared_abs().value();
                assert!(
                    (pf2 - det).abs() <= 1e-8 * det.abs().max(1.0),
                    "pf^2 = {pf2}, det = {det}"
                );
            }
        }
    }

    #[test]
    fn pfaffian_permutation_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let n = 6;
            let a = random_antisym(n, &mut rng);
            let pf = pfaffian(&a).unwrap().value();
            // random permutation matrix
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let mut p = DMatrix::zeros(n, n);
            for (i, &j) in perm.iter().enumerate() {
                p[(i, j)] = 1.0;
            }
            let conj = p.transpose() * &a * &p;
            let pf_conj = pfaffian(&conj).unwrap().value();
            let det_p = lu_det(&p).unwrap().value();
            assert!((pf_conj - det_p * pf).abs() < 1e-9);
        }
    }

    /// 30-term Taylor series oracle, valid for small norm.
    fn expm_taylor(a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let mut sum = DMatrix::identity(n, n);
        let mut term = DMatrix::identity(n, n);
        for k in 1..=30 {
            term = (&term * a) / k as f64;
            sum += &term;
        }
        sum
    }

    #[test]
    fn expm_zero_and_diagonal() {
        let z: DMatrix<f64> = DMatrix::zeros(3, 3);
        assert!((expm(&z).unwrap() - DMatrix::identity(3, 3)).amax() < 1e-14);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -2.0, 0.5]));
        let e = expm(&d).unwrap();
        for (i, v) in [1.0f64, -2.0, 0.5].iter().enumerate() {
            assert!((e[(i, i)] - v.exp()).abs() < 1e-12 * v.exp());
        }
    }

    #[test]
    fn expm_matches_taylor_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let a = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-0.15..0.15));
            let e = expm(&a).unwrap();
            let t = expm_taylor(&a);
            assert!((&e - &t).amax() < 1e-12);
        }
    }

    #[test]
    fn expm_inverse_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let a = DMatrix::from_fn(8, 8, |_, _| rng.gen_range(-0.6..0.6));
            let e = expm(&a).unwrap();
            let em = expm(&(-&a)).unwrap();
            assert!((e * em - DMatrix::identity(8, 8)).amax() < 1e-10);
        }
    }

    #[test]
    fn lu_det_inverse_basic() {
        let id = DMatrix::identity(4, 4);
        let r = lu_det_inverse(&id).unwrap();
        assert_eq!(r.det.sign, 1);
        assert!(r.det.log_abs.abs() < 1e-14);
        assert!((r.inverse - DMatrix::identity(4, 4)).amax() < 1e-14);

        let d = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let r = lu_det_inverse(&d).unwrap();
        assert!((r.det.value() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lu_inverse_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let a = DMatrix::from_fn(8, 8, |_, _| rng.gen_range(-1.0..1.0));
            let r = lu_det_inverse(&a).unwrap();
            assert!((&a * &r.inverse - DMatrix::identity(8, 8)).amax() < 1e-10);
        }
    }

    #[test]
    fn lu_flags_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(lu_det(&a), Err(LinalgError::Singular { .. })));
    }
}
