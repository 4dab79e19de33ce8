//! Deterministic lattice families with known amplitude CMI: the tunable
//! checkerboard Z-parity family on the L x L torus and the toric code.

use crate::gf2::Gf2Matrix;
use crate::stabilizer::{cmi_rank_formula, Bipartition, CmiResult, StabError, ZCheckSystem};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FamilyError {
    #[error("linear size {0} too small, need at least {1}")]
    TooSmall(usize, usize),
    #[error("gamma {0} outside [0, 1]")]
    BadGamma(f64),
    #[error(transparent)]
    Stab(#[from] StabError),
}

/// Middle-cut orientation on the torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutAxis {
    Vertical,
    Horizontal,
}

/// Disjoint five-site parity crosses on Z_L x Z_L whose crossing count
/// scales as L^gamma across the middle cut.
#[derive(Debug, Clone)]
pub struct CheckerboardFamily {
    pub l: usize,
    pub gamma: f64,
    pub centers: Vec<(usize, usize)>,
}

fn lee_dist(l: usize, p: (usize, usize), q: (usize, usize)) -> usize {
    let d = |a: usize, b: usize| {
        let d = a.abs_diff(b);
        d.min(l - d)
    };
    d(p.0, q.0) + d(p.1, q.1)
}

/// Crosses centered at p and q are disjoint iff the torus Lee distance
/// between centers is at least 3.
fn crosses_disjoint(l: usize, p: (usize, usize), q: (usize, usize)) -> bool {
    lee_dist(l, p, q) >= 3
}

/// M circular positions with pairwise spacing >= 3 that include 0 and one of
/// {floor(L/2), floor(L/2)-1}, so the set always straddles the middle cut.
fn anchored_positions(l: usize, m: usize) -> Option<Vec<usize>> {
    let c = l / 2;
    if m == 1 {
        return Some(vec![c]);
    }
    for b in [c, c - 1] {
        if b < 3 || l - b < 3 {
            continue;
        }
        let cap1 = b / 3 - 1;
        let cap2 = (l - b) / 3 - 1;
        if cap1 + cap2 < m - 2 {
            continue;
        }
        let mut m1 = cap1.min(((m - 2) as f64 * b as f64 / l as f64).round() as usize);
        let mut m2 = m - 2 - m1;
        if m2 > cap2 {
            m2 = cap2;
            m1 = m - 2 - cap2;
        }
        let mut pos = vec![0, b];
        pos.extend((1..=m1).map(|t| b * t / (m1 + 1)));
        pos.extend((1..=m2).map(|t| b + (l - b) * t / (m2 + 1)));
        pos.sort_unstable();
        return Some(pos);
    }
    None
}

fn greedy_lee_packing(l: usize, residue: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for j in 0..l {
        for i in 0..l {
            if (i + 2 * j) % 5 != residue {
                continue;
            }
            if out.iter().all(|&o| crosses_disjoint(l, (i, j), o)) {
                out.push((i, j));
            }
        }
    }
    out
}

fn grid3(l: usize) -> Vec<(usize, usize)> {
    if l < 6 {
        return Vec::new();
    }
    let pos: Vec<usize> = (0..l / 3).map(|t| 3 * t).collect();
    pos.iter()
        .flat_map(|&j| pos.iter().map(move |&i| (i, j)))
        .collect()
}

fn crossing_count(l: usize, axis: CutAxis, centers: &[(usize, usize)]) -> usize {
    let c = l / 2;
    let straddles = [(c + l - 1) % l, c % l, l - 1, 0];
    centers
        .iter()
        .filter(|&&(i, j)| {
            let coord = match axis {
                CutAxis::Vertical => i,
                CutAxis::Horizontal => j,
            };
            straddles.contains(&coord)
        })
        .count()
}

/// Builds the checkerboard family at linear size l and density exponent
/// gamma. The spacing scale is max(1, round(L^(1-gamma))); coarse spacings
/// use an M x M product grid of anchored positions, fine spacings use the
/// densest of the five i+2j = r (mod 5) sphere packings (greedily repaired
/// on the torus when 5 does not divide L) or a stride-3 grid.
pub fn build_checkerboard(l: usize, gamma: f64) -> Result<CheckerboardFamily, FamilyError> {
    if l < 4 {
        return Err(FamilyError::TooSmall(l, 4));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(FamilyError::BadGamma(gamma));
    }
    let ell = ((l as f64).powf(1.0 - gamma).round() as usize).max(1);
    let centers = if ell >= 3 {
        let m = (l / ell).max(1);
        let pos = anchored_positions(l, m)
            .expect("spacing >= 3 placement always exists for M <= L/3");
        pos.iter()
            .flat_map(|&j| pos.iter().map(move |&i| (i, j)))
            .collect()
    } else {
        let mut best: Option<((usize, usize), Vec<(usize, usize)>)> = None;
        for cand in (0..5)
            .map(|r| greedy_lee_packing(l, r))
            .chain(std::iter::once(grid3(l)))
        {
            if cand.is_empty() {
                continue;
            }
            let key = (crossing_count(l, CutAxis::Vertical, &cand), cand.len());
            if best.as_ref().map_or(true, |(k, _)| key > *k) {
                best = Some((key, cand));
            }
        }
        best.expect("a nonempty packing exists for every l >= 4").1
    };
    debug_assert!(centers
        .iter()
        .enumerate()
        .all(|(a, &p)| centers[a + 1..].iter().all(|&q| crosses_disjoint(l, p, q))));
    Ok(CheckerboardFamily { l, gamma, centers })
}

impl CheckerboardFamily {
    pub fn n_qubits(&self) -> usize {
        self.l * self.l
    }

    pub fn n_checks(&self) -> usize {
        self.centers.len()
    }

    /// Number of crosses whose support straddles the middle cut.
    pub fn n_crossing(&self, axis: CutAxis) -> usize {
        crossing_count(self.l, axis, &self.centers)
    }

    /// Qubit (i, j) maps to index L*j + i.
    pub fn qubit_index(&self, i: usize, j: usize) -> usize {
        self.l * j + i
    }

    /// Middle cut: vertical keeps columns i < floor(L/2) in A, horizontal
    /// keeps rows j < floor(L/2).
    pub fn middle_cut(&self, axis: CutAxis) -> Bipartition {
        let l = self.l;
        let c = l / 2;
        let mut a = Vec::new();
        let mut b = Vec::new();
        for j in 0..l {
            for i in 0..l {
                let coord = match axis {
                    CutAxis::Vertical => i,
                    CutAxis::Horizontal => j,
                };
                if coord < c {
                    a.push(self.qubit_index(i, j));
                } else {
                    b.push(self.qubit_index(i, j));
                }
            }
        }
        Bipartition::new(self.n_qubits(), a, b).expect("cut covers every qubit once")
    }
}

/// One row per cross, ones on the five periodic support sites; s = 0.
pub fn checkerboard_zsystem(f: &CheckerboardFamily) -> ZCheckSystem {
    let l = f.l;
    let n = f.n_qubits();
    let rows: Vec<Vec<u8>> = f
        .centers
        .iter()
        .map(|&(i, j)| {
            let mut row = vec![0u8; n];
            for (di, dj) in [(0, 0), (1, 0), (l - 1, 0), (0, 1), (0, l - 1)] {
                row[f.qubit_index((i + di) % l, (j + dj) % l)] = 1;
            }
            row
        })
        .collect();
    let m = Gf2Matrix::from_rows(n, &rows).expect("rows built at width n");
    ZCheckSystem::homogeneous(m)
}

/// One point of a CMI scaling curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub l: usize,
    pub gamma: f64,
    pub cmi_bits: f64,
    pub n_checks: usize,
    pub n_crossing: usize,
}

/// Middle-cut CMI of the checkerboard family at each size, via the rank
/// formula.
pub fn checkerboard_cmi_curve(
    gamma: f64,
    l_list: &[usize],
    axis: CutAxis,
) -> Result<Vec<CurvePoint>, FamilyError> {
    l_list
        .iter()
        .map(|&l| {
            let f = build_checkerboard(l, gamma)?;
            let sys = checkerboard_zsystem(&f);
            let cmi = cmi_rank_formula(&sys.m, &f.middle_cut(axis))?;
            Ok(CurvePoint {
                l,
                gamma,
                cmi_bits: cmi.value_bits,
                n_checks: f.n_checks(),
                n_crossing: f.n_crossing(axis),
            })
        })
        .collect()
}

/// Toric code on the L x L torus: 2L^2 edges, L^2 plaquette Z-checks.
///
/// Edges are labeled per vertex in scan order v(i,j) = L*j + i, horizontal
/// edge first: h(i,j) = 2*v, vertical edge v(i,j) = 2*v + 1 (0-based).
#[derive(Debug, Clone)]
pub struct ToricLattice {
    pub l: usize,
    pub plaquettes: Gf2Matrix,
}

pub fn build_toric(l: usize) -> Result<ToricLattice, FamilyError> {
    if l < 2 {
        return Err(FamilyError::TooSmall(l, 2));
    }
    let n = 2 * l * l;
    let h = |i: usize, j: usize| 2 * (l * (j % l) + (i % l));
    let v = |i: usize, j: usize| 2 * (l * (j % l) + (i % l)) + 1;
    let mut rows = Vec::with_capacity(l * l);
    for j in 0..l {
        for i in 0..l {
            let mut row = vec![0u8; n];
            // plaquette above-right of vertex (i, j)
            for e in [h(i, j), h(i, j + 1), v(i, j), v(i + 1, j)] {
                row[e] = 1;
            }
            rows.push(row);
        }
    }
    let plaquettes = Gf2Matrix::from_rows(n, &rows).expect("rows built at width n");
    Ok(ToricLattice { l, plaquettes })
}

impl ToricLattice {
    pub fn n_edges(&self) -> usize {
        2 * self.l * self.l
    }

    /// Label cut: A = the first L^2 edge labels.
    pub fn label_cut(&self) -> Bipartition {
        let n = self.n_edges();
        let half = n / 2;
        Bipartition::new(n, (0..half).collect(), (half..n).collect())
            .expect("prefix cut covers every edge once")
    }

    /// Vertical middle cut on cells: both edges of cells with i < floor(L/2).
    pub fn vertical_cut(&self) -> Bipartition {
        let l = self.l;
        let c = l / 2;
        let mut a = Vec::new();
        let mut b = Vec::new();
        for j in 0..l {
            for i in 0..l {
                let base = 2 * (l * j + i);
                if i < c {
                    a.extend([base, base + 1]);
                } else {
                    b.extend([base, base + 1]);
                }
            }
        }
        Bipartition::new(self.n_edges(), a, b).expect("cut covers every edge once")
    }
}

/// Middle-cut CMI of the toric code: 2L-1 for even L, 2L for odd L.
pub fn toric_cmi(l: usize) -> Result<CmiResult, FamilyError> {
    let t = build_toric(l)?;
    Ok(cmi_rank_formula(&t.plaquettes, &t.label_cut())?)
}

/// Ordinary least-squares slope of log(y) against log(x), with the
/// standard error of the slope.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return None;
    }
    if xs.iter().chain(ys).any(|&v| v <= 0.0) {
        return None;
    }
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum();
    let stderr = (ss_res / (n - 2.0) / sxx).sqrt();
    Some((slope, stderr))
}
