//! Per-bin instantaneous separation with JADE.
//!
//! Cumulants are estimated on the raw bin data first and only then moved into
//! the whitened coordinates by multilinearity, so that sliding-window moment
//! sums can be reused across updates. The unitary factor is found by joint
//! diagonalization of the cumulant matrices with complex Givens rotations.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::CumulantSet;

pub type CMatrix = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Eigenvalues below this fraction of the largest one count as rank loss.
pub const RANK_EPS: f64 = 1e-12;
pub const DEFAULT_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone)]
pub struct Whitening {
    /// `W` with `W R W' = I`.
    pub w: CMatrix,
    /// The covariance that `w` whitens.
    pub r: CMatrix,
}

pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0f64, |a, z| a.max(z.norm()))
}

/// Multiplies each row (or column) by a unit phase so that its
/// largest-magnitude entry is real and positive.
fn fix_phase_rows(m: &mut CMatrix) {
    for i in 0..m.nrows() {
        let pivot = (0..m.ncols())
            .map(|j| m[(i, j)])
            .fold(ZERO, |best, z| if z.norm() > best.norm() { z } else { best });
        if pivot.norm() > 0.0 {
            let phase = pivot.conj() / pivot.norm();
            for j in 0..m.ncols() {
                m[(i, j)] *= phase;
            }
        }
    }
}

fn fix_phase_columns(m: &mut CMatrix) {
    let mut t = m.transpose();
    fix_phase_rows(&mut t);
    *m = t.transpose();
}

/// `W = L^{-1/2} E'` from `R = E L E'`.
///
/// Rows are ordered so that each row's dominant entry sits on the diagonal
/// when that is possible (so `R = I` gives `W = I` and `diag(4, 1)` gives
/// `diag(1/2, 1)`), otherwise by decreasing eigenvalue; each row's dominant
/// entry is made real positive.
pub fn whiten(r: &CMatrix) -> Result<Whitening> {
    let n = r.nrows();
    if n == 0 || r.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {}x{}",
            r.nrows(),
            r.ncols()
        )));
    }
    if r.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidInput("covariance has non-finite entries".into()));
    }
    let scale = max_abs(r).max(f64::MIN_POSITIVE);
    if hermitian_deviation(r) > 1e-8 * scale {
        return Err(Error::InvalidInput("covariance is not Hermitian".into()));
    }
    let eig = SymmetricEigen::new(r.clone());
    let largest = eig.eigenvalues.iter().copied().fold(f64::MIN, f64::max);
    if !(largest > 0.0) {
        return Err(Error::RankDeficient {
            eigenvalue: largest,
            threshold: 0.0,
        });
    }
    let threshold = RANK_EPS * largest;
    if let Some(&low) = eig.eigenvalues.iter().find(|&&v| v < threshold) {
        return Err(Error::RankDeficient {
            eigenvalue: low,
            threshold,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let dominant: Vec<usize> = order
        .iter()
        .map(|&p| {
            (0..n)
                .max_by(|&x, &y| {
                    eig.eigenvectors[(x, p)]
                        .norm()
                        .total_cmp(&eig.eigenvectors[(y, p)].norm())
                })
                .unwrap_or(0)
        })
        .collect();
    let mut seen = vec![false; n];
    let distinct = dominant.iter().all(|&d| !std::mem::replace(&mut seen[d], true));
    let mut placement = vec![0usize; n];
    for (slot, &p) in order.iter().enumerate() {
        let row = if distinct { dominant[slot] } else { slot };
        placement[row] = p;
    }

    let mut w = CMatrix::zeros(n, n);
    for (row, &p) in placement.iter().enumerate() {
        let s = 1.0 / eig.eigenvalues[p].sqrt();
        for j in 0..n {
            w[(row, j)] = eig.eigenvectors[(j, p)].conj() * s;
        }
    }
    fix_phase_rows(&mut w);
    Ok(Whitening { w, r: r.clone() })
}

fn cmat2(r: &[[Complex64; 2]; 2]) -> CMatrix {
    CMatrix::from_fn(2, 2, |i, j| r[i][j])
}

/// Cumulants of `Z = W y` from the cumulants of `y`: one factor of `W` per
/// non-conjugated slot and `W*` per conjugated slot; the covariance becomes
/// `W R W'`.
pub fn transform_cumulants(c: &CumulantSet, w: &CMatrix) -> Result<CumulantSet> {
    if w.nrows() != 2 || w.ncols() != 2 {
        return Err(Error::DimensionMismatch(format!(
            "cumulant transform needs a 2x2 matrix, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    let mut t = [[[[ZERO; 2]; 2]; 2]; 2];
    for (i, ti) in t.iter_mut().enumerate() {
        for (j, tj) in ti.iter_mut().enumerate() {
            for (k, tk) in tj.iter_mut().enumerate() {
                for (l, v) in tk.iter_mut().enumerate() {
                    *v = c.cum(i, j, k, l);
                }
            }
        }
    }
    let wc = w.map(|z| z.conj());
    let transformed = |a: usize, b: usize, cc: usize, d: usize| {
        let mut acc = ZERO;
        for (i, ti) in t.iter().enumerate() {
            for (j, tj) in ti.iter().enumerate() {
                let f1 = w[(a, i)] * wc[(b, j)];
                for (k, tk) in tj.iter().enumerate() {
                    let f2 = f1 * wc[(cc, k)];
                    for (l, v) in tk.iter().enumerate() {
                        acc += f2 * w[(d, l)] * v;
                    }
                }
            }
        }
        acc
    };
    let r = w * cmat2(&c.r) * w.adjoint();
    let mut r2 = [[ZERO; 2]; 2];
    r2[0][0] = Complex64::new(r[(0, 0)].re, 0.0);
    r2[1][1] = Complex64::new(r[(1, 1)].re, 0.0);
    r2[0][1] = (r[(0, 1)] + r[(1, 0)].conj()) * 0.5;
    r2[1][0] = r2[0][1].conj();
    Ok(CumulantSet::from_tensor(c.n_samples, r2, transformed))
}

/// The `n^2` Hermitian cumulant matrices of whitened data.
///
/// With `A(l,k)_ij = Cum(Z_i, Z_j*, Z_k, Z_l*)` (the image of `M = e_l e_k'`),
/// the set is `A(l,l)` for each `l` and, for `l < k`, the Hermitian pair
/// `A(l,k) + A(k,l)` and `J (A(l,k) - A(k,l))`, which spans the same space.
pub fn cumulant_matrices(c: &CumulantSet) -> Vec<CMatrix> {
    let n = 2;
    let a = |l: usize, k: usize| CMatrix::from_fn(n, n, |i, j| c.cum(i, j, l, k));
    let mut out = Vec::with_capacity(n * n);
    for l in 0..n {
        out.push(a(l, l));
    }
    let j = Complex64::new(0.0, 1.0);
    for l in 0..n {
        for k in l + 1..n {
            let (lk, kl) = (a(l, k), a(k, l));
            out.push(&lk + &kl);
            out.push((lk - kl) * j);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointDiagOptions {
    /// Stop once every rotation sine in a sweep is below this.
    pub threshold: f64,
    pub max_sweeps: usize,
}

impl Default for JointDiagOptions {
    fn default() -> Self {
        Self {
            threshold: 1e-12,
            max_sweeps: DEFAULT_MAX_SWEEPS,
        }
    }
}

impl JointDiagOptions {
    /// Threshold `1e-8 / sqrt(N)` for cumulants estimated from `N` samples.
    pub fn for_samples(n: usize) -> Self {
        Self {
            threshold: 1e-8 / (n.max(1) as f64).sqrt(),
            max_sweeps: DEFAULT_MAX_SWEEPS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct JointDiagonalization {
    /// Unitary `U` such that every `U' B U` is as diagonal as possible.
    pub u: CMatrix,
    pub sweeps: usize,
    pub converged: bool,
    /// `sum_r |diag(U' B_r U)|^2` before the first sweep and after each sweep.
    pub objective: Vec<f64>,
    /// Frobenius norm of the off-diagonal parts after rotation.
    pub off_norm: f64,
    /// Frobenius norm of the whole set.
    pub total_norm: f64,
}

fn diag_energy(mats: &[CMatrix]) -> f64 {
    mats.iter()
        .map(|m| (0..m.nrows()).map(|i| m[(i, i)].norm_sqr()).sum::<f64>())
        .sum()
}

fn off_energy(mats: &[CMatrix]) -> f64 {
    mats.iter()
        .map(|m| {
            let mut s = 0.0;
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    if i != j {
                        s += m[(i, j)].norm_sqr();
                    }
                }
            }
            s
        })
        .sum()
}

/// Approximate joint diagonalizer of a set of Hermitian matrices by sweeps of
/// complex Givens rotations, each one maximizing the diagonal energy over its
/// `(p, q)` plane in closed form. Hitting the sweep limit is reported through
/// `converged = false`, not as an error.
pub fn joint_diagonalize(
    matrices: &[CMatrix],
    opts: &JointDiagOptions,
) -> Result<JointDiagonalization> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::InvalidInput("joint diagonalization of an empty set".into()))?;
    let n = first.nrows();
    for (r, m) in matrices.iter().enumerate() {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "matrix {r} is {}x{}, expected {n}x{n}",
                m.nrows(),
                m.ncols()
            )));
        }
        if hermitian_deviation(m) > 1e-8 {
            return Err(Error::InvalidInput(format!("matrix {r} is not Hermitian")));
        }
    }

    let mut mats: Vec<CMatrix> = matrices.to_vec();
    let mut v = CMatrix::identity(n, n);
    let total_norm = (diag_energy(&mats) + off_energy(&mats)).sqrt();
    let mut objective = vec![diag_energy(&mats)];
    let mut converged = false;
    let mut sweeps = 0;

    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let mut g = Matrix3::<f64>::zeros();
                for m in &mats {
                    let h = [
                        (m[(p, p)] - m[(q, q)]).re,
                        (m[(p, q)] + m[(q, p)]).re,
                        (Complex64::new(0.0, 1.0) * (m[(q, p)] - m[(p, q)])).re,
                    ];
                    for a in 0..3 {
                        for b in 0..3 {
                            g[(a, b)] += h[a] * h[b];
                        }
                    }
                }
                if g.iter().all(|x| *x == 0.0) {
                    continue;
                }
                let eig = SymmetricEigen::new(g);
                let top = (0..3)
                    .max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))
                    .unwrap_or(0);
                let mut angles = eig.eigenvectors.column(top).into_owned();
                if angles[0] < 0.0 {
                    angles = -angles;
                }
                let c = (0.5 + angles[0] / 2.0).sqrt();
                let s = Complex64::new(angles[1], -angles[2]) * (0.5 / c);
                if s.norm() <= opts.threshold {
                    continue;
                }
                rotated = true;
                let sc = s.conj();
                for k in 0..n {
                    let (vp, vq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = vp * c + vq * s;
                    v[(k, q)] = -vp * sc + vq * c;
                }
                for m in &mut mats {
                    for k in 0..n {
                        let (bp, bq) = (m[(p, k)], m[(q, k)]);
                        m[(p, k)] = bp * c + bq * sc;
                        m[(q, k)] = -bp * s + bq * c;
                    }
                    for k in 0..n {
                        let (bp, bq) = (m[(k, p)], m[(k, q)]);
                        m[(k, p)] = bp * c + bq * s;
                        m[(k, q)] = -bp * sc + bq * c;
                    }
                }
            }
        }
        let obj = diag_energy(&mats);
        let prev = *objective.last().unwrap_or(&0.0);
        debug_assert!(
            obj >= prev - 1e-10 * total_norm.powi(2).max(f64::MIN_POSITIVE),
            "joint diagonalization objective decreased: {prev} -> {obj}"
        );
        objective.push(obj);
        if !rotated {
            converged = true;
            break;
        }
    }

    fix_phase_columns(&mut v);
    let rotated_set: Vec<CMatrix> = matrices.iter().map(|b| v.adjoint() * b * &v).collect();
    Ok(JointDiagonalization {
        u: v,
        sweeps,
        converged,
        objective,
        off_norm: off_energy(&rotated_set).sqrt(),
        total_norm,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct JadeDiagnostics {
    pub sweeps: usize,
    pub converged: bool,
    /// Off-diagonal energy of the rotated cumulant matrices over their total
    /// energy.
    pub off_residual: f64,
    /// Kurtosis of each whitened, rotated output.
    pub kurtosis: Vec<f64>,
    /// Set when the outputs are not separable by fourth-order statistics:
    /// a residual above 5% or more than one output with kurtosis within
    /// `4/sqrt(N)` of zero.
    pub poorly_identified: bool,
}

#[derive(Debug, Clone)]
pub struct MixingEstimate {
    /// Estimated mixing matrix `W^-1 U`.
    pub h: CMatrix,
    /// Demixing matrix `U' W`, equal to `h^-1`.
    pub h_inv: CMatrix,
    pub u: CMatrix,
    pub w: CMatrix,
    pub diagnostics: JadeDiagnostics,
}

/// Whiten, move the cumulants into whitened coordinates, jointly diagonalize
/// their matrices and assemble `H = W^-1 U`.
///
/// JADE assumes at most one non-kurtic source; this cannot be checked here
/// and shows up only through [`JadeDiagnostics::poorly_identified`].
pub fn estimate_mixing(c: &CumulantSet) -> Result<MixingEstimate> {
    estimate_mixing_with(c, &JointDiagOptions::for_samples(c.n_samples))
}

pub fn estimate_mixing_with(c: &CumulantSet, opts: &JointDiagOptions) -> Result<MixingEstimate> {
    let white = whiten(&cmat2(&c.r))?;
    let z = transform_cumulants(c, &white.w)?;
    let mats = cumulant_matrices(&z);
    let jd = joint_diagonalize(&mats, opts)?;
    let w_inv = white
        .w
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("whitening matrix is singular".into()))?;
    let h = &w_inv * &jd.u;
    let h_inv = jd.u.adjoint() * &white.w;

    let outputs = transform_cumulants(&z, &jd.u.adjoint())?;
    let kurtosis: Vec<f64> = (0..2).map(|p| outputs.cum(p, p, p, p).re).collect();
    let off_residual = if jd.total_norm > 0.0 {
        (jd.off_norm / jd.total_norm).powi(2)
    } else {
        1.0
    };
    let floor = 4.0 / (c.n_samples.max(1) as f64).sqrt();
    let weak = kurtosis.iter().filter(|k| k.abs() < floor).count();
    Ok(MixingEstimate {
        h,
        h_inv,
        u: jd.u,
        w: white.w,
        diagnostics: JadeDiagnostics {
            sweeps: jd.sweeps,
            converged: jd.converged,
            off_residual,
            kurtosis,
            poorly_identified: off_residual > 0.05 || weak > 1,
        },
    })
}

/// Amari-style performance index of a gain matrix, normalized to `[0, 1]`;
/// zero exactly when `g` has one nonzero entry per row and column.
pub fn amari_index(g: &CMatrix) -> f64 {
    let n = g.nrows();
    if n < 2 {
        return 0.0;
    }
    let abs = g.map(|z| z.norm());
    let mut total = 0.0;
    for i in 0..n {
        let row = abs.row(i);
        let m = row.max();
        if m > 0.0 {
            total += row.sum() / m - 1.0;
        }
    }
    for j in 0..n {
        let col = abs.column(j);
        let m = col.max();
        if m > 0.0 {
            total += col.sum() / m - 1.0;
        }
    }
    total / (2.0 * n as f64 * (n as f64 - 1.0))
}
