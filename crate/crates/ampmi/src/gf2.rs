//! Bit-packed linear algebra over F2: rank, solve, kernel.
//!
//! Rows are stored as machine words, 64 columns per word. All elimination
//! routines work on a private copy; matrices are immutable once built.

use std::fmt;
use thiserror::Error;

const WORD_BITS: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum Gf2Error {
    #[error("column index {0} out of range for {1} columns")]
    ColumnOutOfRange(usize, usize),
    #[error("duplicate column index {0}")]
    DuplicateColumn(usize),
    #[error("right-hand side has length {got}, expected {expected}")]
    RhsLength { got: usize, expected: usize },
    #[error("row {row} has length {got}, expected {expected}")]
    RowLength { row: usize, got: usize, expected: usize },
    #[error("malformed matrix text: {0}")]
    Parse(String),
}

/// Dense binary matrix with word-packed rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gf2Matrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    data: Vec<u64>,
}

impl Gf2Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let words_per_row = cols.div_ceil(WORD_BITS).max(1);
        Gf2Matrix {
            rows,
            cols,
            words_per_row,
            data: vec![0; rows * words_per_row],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Gf2Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    /// Builds from explicit 0/1 rows.
    pub fn from_rows(cols: usize, rows: &[Vec<u8>]) -> Result<Self, Gf2Error> {
        let mut m = Gf2Matrix::zeros(rows.len(), cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Gf2Error::RowLength {
                    row: i,
                    got: row.len(),
                    expected: cols,
                });
            }
            for (j, &b) in row.iter().enumerate() {
                m.set(i, j, b & 1 == 1);
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        debug_assert!(row < self.rows && col < self.cols);
        let w = self.data[row * self.words_per_row + col / WORD_BITS];
        (w >> (col % WORD_BITS)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        debug_assert!(row < self.rows && col < self.cols);
        let idx = row * self.words_per_row + col / WORD_BITS;
        let mask = 1u64 << (col % WORD_BITS);
        if value {
            self.data[idx] |= mask;
        } else {
            self.data[idx] &= !mask;
        }
    }

    pub fn row_bits(&self, row: usize) -> Vec<u8> {
        (0..self.cols).map(|j| self.get(row, j) as u8).collect()
    }

    fn row_words(&self, row: usize) -> &[u64] {
        &self.data[row * self.words_per_row..(row + 1) * self.words_per_row]
    }

    fn xor_row_into(&mut self, src: usize, dst: usize) {
        let w = self.words_per_row;
        let (s, d) = (src * w, dst * w);
        for k in 0..w {
            self.data[d + k] ^= self.data[s + k];
        }
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let w = self.words_per_row;
        for k in 0..w {
            self.data.swap(a * w + k, b * w + k);
        }
    }

    /// Parity of the bitwise AND of two rows (F2 inner product).
    pub fn row_dot(&self, row: usize, other: &Gf2Matrix, other_row: usize) -> u8 {
        assert_eq!(self.cols, other.cols, "row_dot requires equal column counts");
        self.row_words(row)
            .iter()
            .zip(other.row_words(other_row))
            .map(|(a, b)| (a & b).count_ones())
            .sum::<u32>() as u8
            & 1
    }

    pub fn transpose(&self) -> Gf2Matrix {
        let mut t = Gf2Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.get(i, j) {
                    t.set(j, i, true);
                }
            }
        }
        t
    }

    /// Row rank over F2. The input is not mutated; elimination runs on a copy.
    pub fn rank(&self) -> usize {
        let mut work = self.clone();
        work.eliminate().len()
    }

    /// In-place Gaussian elimination with deterministic pivoting (first
    /// nonzero column, lowest row index). Returns the pivot columns in order.
    fn eliminate(&mut self) -> Vec<usize> {
        let mut pivots = Vec::new();
        let mut next_row = 0;
        for col in 0..self.cols {
            if next_row >= self.rows {
                break;
            }
            let pivot = (next_row..self.rows).find(|&r| self.get(r, col));
            let Some(pivot) = pivot else { continue };
            self.swap_rows(next_row, pivot);
            for r in 0..self.rows {
                if r != next_row && self.get(r, col) {
                    self.xor_row_into(next_row, r);
                }
            }
            pivots.push(col);
            next_row += 1;
        }
        pivots
    }

    /// Submatrix with the selected columns in the given order.
    pub fn column_restrict(&self, idx: &[usize]) -> Result<Gf2Matrix, Gf2Error> {
        let mut seen = vec![false; self.cols];
        for &j in idx {
            if j >= self.cols {
                return Err(Gf2Error::ColumnOutOfRange(j, self.cols));
            }
            if seen[j] {
                return Err(Gf2Error::DuplicateColumn(j));
            }
            seen[j] = true;
        }
        let mut out = Gf2Matrix::zeros(self.rows, idx.len());
        for i in 0..self.rows {
            for (jj, &j) in idx.iter().enumerate() {
                if self.get(i, j) {
                    out.set(i, jj, true);
                }
            }
        }
        Ok(out)
    }

    /// Solves `M x = s`. On success returns a particular solution and a basis
    /// of ker(M); the full solution set is the affine subspace of size
    /// 2^(cols - rank).
    pub fn solve(&self, s: &[u8]) -> Result<Option<Gf2Solution>, Gf2Error> {
        if s.len() != self.rows {
            return Err(Gf2Error::RhsLength {
                got: s.len(),
                expected: self.rows,
            });
        }
        // Augment with the syndrome in an extra column.
        let mut work = Gf2Matrix::zeros(self.rows, self.cols + 1);
        for i in 0..self.rows {
            for (k, &w) in self.row_words(i).iter().enumerate() {
                work.data[i * work.words_per_row + k] = w;
            }
            // clear any stray bit in case cols is a multiple of 64
            if s[i] & 1 == 1 {
                work.set(i, self.cols, true);
            }
        }
        let pivots = work.eliminate();
        // A pivot in the syndrome column means 0 = 1: infeasible.
        if pivots.last() == Some(&self.cols) {
            return Ok(None);
        }
        let rank = pivots.len();
        let mut particular = vec![0u8; self.cols];
        for (r, &pc) in pivots.iter().enumerate() {
            if work.get(r, self.cols) {
                particular[pc] = 1;
            }
        }
        // Free columns parameterize the kernel.
        let mut is_pivot = vec![false; self.cols];
        for &pc in &pivots {
            is_pivot[pc] = true;
        }
        let mut kernel = Vec::with_capacity(self.cols - rank);
        for free in 0..self.cols {
            if is_pivot[free] {
                continue;
            }
            let mut v = vec![0u8; self.cols];
            v[free] = 1;
            for (r, &pc) in pivots.iter().enumerate() {
                if work.get(r, free) {
                    v[pc] = 1;
                }
            }
            kernel.push(v);
        }
        Ok(Some(Gf2Solution {
            particular,
            kernel_basis: kernel,
        }))
    }

    /// Basis of ker(M) (solutions of Mx = 0).
    pub fn kernel_basis(&self) -> Vec<Vec<u8>> {
        self.solve(&vec![0u8; self.rows])
            .expect("rhs length matches")
            .expect("homogeneous system is always feasible")
            .kernel_basis
    }

    /// M x over F2 for a 0/1 vector x.
    pub fn mat_vec(&self, x: &[u8]) -> Result<Vec<u8>, Gf2Error> {
        if x.len() != self.cols {
            return Err(Gf2Error::RhsLength {
                got: x.len(),
                expected: self.cols,
            });
        }
        let mut out = vec![0u8; self.rows];
        for i in 0..self.rows {
            let mut acc = 0u8;
            for j in 0..self.cols {
                acc ^= (self.get(i, j) as u8) & x[j];
            }
            out[i] = acc;
        }
        Ok(out)
    }

    /// Vertical concatenation of row blocks with equal column counts.
    pub fn vstack(blocks: &[&Gf2Matrix]) -> Gf2Matrix {
        let cols = blocks.first().map_or(0, |b| b.cols);
        let rows = blocks.iter().map(|b| b.rows).sum();
        let mut out = Gf2Matrix::zeros(rows, cols);
        let mut r = 0;
        for b in blocks {
            assert_eq!(b.cols, cols, "vstack requires equal column counts");
            for i in 0..b.rows {
                for j in 0..cols {
                    if b.get(i, j) {
                        out.set(r, j, true);
                    }
                }
                r += 1;
            }
        }
        out
    }

    /// Parses the textual test format: first line "rows cols", then one 0/1
    /// string per row.
    pub fn parse_text(text: &str) -> Result<Gf2Matrix, Gf2Error> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Gf2Error::Parse("empty input".into()))?;
        let mut it = header.split_whitespace();
        let rows: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Gf2Error::Parse("bad header".into()))?;
        let cols: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Gf2Error::Parse("bad header".into()))?;
        let mut m = Gf2Matrix::zeros(rows, cols);
        for i in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| Gf2Error::Parse(format!("missing row {i}")))?;
            let line = line.trim();
            if line.len() != cols {
                return Err(Gf2Error::Parse(format!(
                    "row {i} has {} characters, expected {cols}",
                    line.len()
                )));
            }
            for (j, c) in line.chars().enumerate() {
                match c {
                    '0' => {}
                    '1' => m.set(i, j, true),
                    other => {
                        return Err(Gf2Error::Parse(format!("bad character {other:?} in row {i}")))
                    }
                }
            }
        }
        Ok(m)
    }
}

impl fmt::Display for Gf2Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} {}", self.rows, self.cols)?;
        for i in 0..self.rows {
            for j in 0..self.cols {
                write!(f, "{}", self.get(i, j) as u8)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Solution of an F2 linear system: one particular solution plus a kernel basis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gf2Solution {
    pub particular: Vec<u8>,
    pub kernel_basis: Vec<Vec<u8>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn from_lit(cols: usize, rows: &[&[u8]]) -> Gf2Matrix {
        let rows: Vec<Vec<u8>> = rows.iter().map(|r| r.to_vec()).collect();
        Gf2Matrix::from_rows(cols, &rows).unwrap()
    }

    #[test]
    fn rank_identity() {
        assert_eq!(Gf2Matrix::identity(4).rank(), 4);
    }

    #[test]
    fn rank_all_ones() {
        let m = from_lit(3, &[&[1, 1, 1], &[1, 1, 1], &[1, 1, 1]]);
        assert_eq!(m.rank(), 1);
    }

    #[test]
    fn rank_dependent_row() {
        // row3 = row1 xor row2; all 8 row combinations confirm rank 2.
        let m = from_lit(3, &[&[1, 1, 0], &[0, 1, 1], &[1, 0, 1]]);
        assert_eq!(m.rank(), 2);
        let brute = brute_rank(&m);
        assert_eq!(brute, 2);
    }

    /// Independent oracle: count distinct row-span elements by enumeration.
    fn brute_rank(m: &Gf2Matrix) -> usize {
        let mut span = std::collections::HashSet::new();
        for mask in 0u32..(1 << m.rows()) {
            let mut acc = vec![0u8; m.cols()];
            for i in 0..m.rows() {
                if (mask >> i) & 1 == 1 {
                    for (a, b) in acc.iter_mut().zip(m.row_bits(i)) {
                        *a ^= b;
                    }
                }
            }
            span.insert(acc);
        }
        span.len().trailing_zeros() as usize
    }

    #[test]
    fn column_restrict_basic() {
        let m = from_lit(2, &[&[1, 1]]);
        let r = m.column_restrict(&[0]).unwrap();
        assert_eq!(r, from_lit(1, &[&[1]]));
        let i4 = Gf2Matrix::identity(4);
        let r = i4.column_restrict(&[0, 1]).unwrap();
        assert_eq!(r.cols(), 2);
        assert!(r.get(0, 0) && r.get(1, 1));
        assert!(!r.get(2, 0) && !r.get(3, 1));
        assert!(m.column_restrict(&[2]).is_err());
        assert!(i4.column_restrict(&[1, 1]).is_err());
    }

    #[test]
    fn solve_single_parity() {
        let m = from_lit(2, &[&[1, 1]]);
        let sol = m.solve(&[0]).unwrap().unwrap();
        assert_eq!(sol.particular, vec![0, 0]);
        assert_eq!(sol.kernel_basis, vec![vec![1, 1]]);
    }

    #[test]
    fn solve_infeasible() {
        let m = from_lit(2, &[&[1, 0], &[1, 0]]);
        assert_eq!(m.solve(&[0, 1]).unwrap(), None);
    }

    #[test]
    fn solve_respects_syndrome() {
        let m = from_lit(3, &[&[1, 1, 0], &[0, 1, 1]]);
        let sol = m.solve(&[1, 0]).unwrap().unwrap();
        assert_eq!(m.mat_vec(&sol.particular).unwrap(), vec![1, 0]);
        for k in &sol.kernel_basis {
            assert_eq!(m.mat_vec(k).unwrap(), vec![0, 0]);
        }
    }

    #[test]
    fn parse_roundtrip() {
        let text = "2 3\n101\n011\n";
        let m = Gf2Matrix::parse_text(text).unwrap();
        assert_eq!(m.to_string(), text);
        assert!(Gf2Matrix::parse_text("2 3\n10\n011\n").is_err());
        assert!(Gf2Matrix::parse_text("").is_err());
    }

    #[test]
    fn word_boundary_columns() {
        // 64 and 65 columns exercise the last-word masking invariant.
        for cols in [63, 64, 65, 128] {
            let mut m = Gf2Matrix::zeros(2, cols);
            m.set(0, cols - 1, true);
            m.set(1, 0, true);
            assert_eq!(m.rank(), 2);
            let r = m.column_restrict(&[cols - 1]).unwrap();
            assert!(r.get(0, 0) && !r.get(1, 0));
        }
    }

    fn arb_matrix() -> impl Strategy<Value = Gf2Matrix> {
        (1usize..7, 1usize..10).prop_flat_map(|(rows, cols)| {
            proptest::collection::vec(proptest::collection::vec(0u8..2, cols), rows)
                .prop_map(move |r| Gf2Matrix::from_rows(cols, &r).unwrap())
        })
    }

    proptest! {
        #[test]
        fn rank_subadditive_under_column_split(m in arb_matrix(), cut_frac in 0.0f64..1.0) {
            let cut = ((m.cols() as f64) * cut_frac) as usize;
            let a: Vec<usize> = (0..cut).collect();
            let b: Vec<usize> = (cut..m.cols()).collect();
            let ra = m.column_restrict(&a).unwrap().rank();
            let rb = m.column_restrict(&b).unwrap().rank();
            prop_assert!(ra + rb >= m.rank());
        }

        #[test]
        fn solution_count_matches_rank(m in arb_matrix(), s in proptest::collection::vec(0u8..2, 0..10)) {
            let s: Vec<u8> = (0..m.rows()).map(|i| *s.get(i).unwrap_or(&0)).collect();
            let n = m.cols();
            // exhaustive enumeration oracle for the solution count
            let count = (0u32..(1 << n))
                .filter(|x| {
                    let bits: Vec<u8> = (0..n).map(|j| ((x >> j) & 1) as u8).collect();
                    m.mat_vec(&bits).unwrap() == s
                })
                .count();
            match m.solve(&s).unwrap() {
                None => prop_assert_eq!(count, 0),
                Some(sol) => {
                    prop_assert_eq!(m.mat_vec(&sol.particular).unwrap(), s);
                    prop_assert_eq!(count, 1usize << (n - m.rank()));
                    prop_assert_eq!(sol.kernel_basis.len(), n - m.rank());
                }
            }
        }

        #[test]
        fn rank_invariant_under_row_ops(m in arb_matrix(), seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut rows: Vec<Vec<u8>> = (0..m.rows()).map(|i| m.row_bits(i)).collect();
            for _ in 0..10 {
                let i = rng.gen_range(0..rows.len());
                let j = rng.gen_range(0..rows.len());
                if i != j {
                    if rng.gen_bool(0.5) {
                        rows.swap(i, j);
                    } else {
                        let src = rows[j].clone();
                        for (a, b) in rows[i].iter_mut().zip(src) {
                            *a ^= b;
                        }
                    }
                }
            }
            let m2 = Gf2Matrix::from_rows(m.cols(), &rows).unwrap();
            prop_assert_eq!(m.rank(), m2.rank());
        }
    }
}
