//! Structured input classes and their reduction to a pre-SCF pair.
//!
//! The four-step canonical-form procedure starts from a *pre-SCF* pair:
//!
//! ```text
//! E = diag(I_d, N^E),   F22 block upper triangular and nonsingular,
//!                       F21 F12 block upper triangular,
//! ```
//!
//! with `N^E` the elementary nilpotent of a block partition. Each supported
//! input class gets a frontend that produces such a pair together with the
//! equivalence transformation from the original system:
//!
//! * pairs already in pre-SCF layout (validated and normalised),
//! * T-canonical and S-canonical pairs,
//! * Hessenberg systems of index 2 and 3 (optionally behind a permutation),
//! * constrained mechanical (multibody) systems,
//! * pairs with a user-supplied initial transformation.
//!
//! Frontends assemble their transformations from smooth orthonormal kernel
//! bases or closed-form block factors, apply them symbolically, and then
//! *normalise*: proven patterns are snapped to exact constants and entries
//! that sample to zero are swept to structural zeros, so the pipeline's
//! structural reasoning starts from clean matrices.

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::blockstruct::{
    is_block_upper_triangular, is_strictly_block_upper_triangular, rc_factor, BlockOrdering,
    BlockSpec,
};
use crate::config::{Interval, Tolerances};
use crate::equivalence::{DaePair, Transform};
use crate::expr::ScalarFn;
use crate::matfn::{min_singular_value, numeric_rank, snap_to, MatError, MatrixFn};

#[derive(Debug, Error)]
pub enum FrontError {
    #[error(transparent)]
    Mat(#[from] MatError),
    #[error("input does not match the declared structure: {0}")]
    Structure(String),
    #[error("rank of {what} is not constant on the interval (saw {seen:?})")]
    RankNotConstant { what: String, seen: Vec<usize> },
}

/// A pre-SCF pair with the transformation that produced it.
#[derive(Clone, Debug)]
pub struct PreScf {
    /// The normalised pair: `E` is exactly `diag(I_d, N^E)`.
    pub pair: DaePair,
    /// Equivalence transformation from the original pair to `pair`.
    pub from_original: Transform,
    /// Dimension of the dynamical part.
    pub d: usize,
    /// Partition of the algebraic part.
    pub spec: BlockSpec,
}

fn scaled_zero_tol(f: &MatrixFn, ts: &[f64], tol: &Tolerances) -> Result<f64, MatError> {
    Ok(tol.zero_tol * f.max_abs_on(ts)?.0.max(1.0))
}

fn snap_tol(tol: &Tolerances) -> f64 {
    tol.verify_tol * 10.0
}

/// Validate and normalise a pair that should already be pre-SCF: snap `E`
/// to `diag(I_d, N^E)`, sweep `F`, and check the two block conditions.
pub fn normalize_prescf(
    pair: &DaePair,
    d: usize,
    spec: &BlockSpec,
    iv: &Interval,
    tol: &Tolerances,
) -> Result<DaePair, FrontError> {
    let a = spec.total();
    let m = pair.m();
    if d + a != m {
        return Err(FrontError::Structure(format!(
            "d + a = {d} + {a} does not match the system size {m}"
        )));
    }
    let ts = iv.samples(tol.n_check);
    let target_e =
        MatrixFn::block_diag(&[&MatrixFn::identity(d), &spec.elementary_nilpotent()]);
    let e = snap_to(&pair.e, &target_e, &ts, snap_tol(tol)).map_err(|err| {
        FrontError::Structure(format!("E is not diag(I_d, N^E) for the declared partition: {err}"))
    })?;
    let f = pair.f.zero_sweep(&ts, scaled_zero_tol(&pair.f, &ts, tol)?)?;

    let f22 = f.block(d, d, a, a);
    if !is_block_upper_triangular(&f22, spec.sizes()) {
        return Err(FrontError::Structure(
            "F22 is not block upper triangular for the declared partition".into(),
        ));
    }
    for &t in &ts {
        let m22 = f22.eval(t)?;
        if a > 0 {
            let smin = min_singular_value(&m22);
            let smax = m22.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
            if smin <= tol.rank_rel_tol * smax.max(1.0) {
                return Err(FrontError::Structure(format!(
                    "F22 is singular (or nearly so) at t = {t}: smallest singular value {smin:.3e}"
                )));
            }
        }
    }
    let f21 = f.block(d, 0, a, d);
    let f12 = f.block(0, d, d, a);
    let prod = f21.matmul(&f12);
    let prod = prod.zero_sweep(&ts, scaled_zero_tol(&prod, &ts, tol)?)?;
    if !is_block_upper_triangular(&prod, spec.sizes()) {
        return Err(FrontError::Structure(
            "F21 * F12 is not block upper triangular for the declared partition".into(),
        ));
    }
    Ok(DaePair::new(e, f))
}

/// Frontend for pairs already in pre-SCF layout.
pub fn from_prescf(
    pair: &DaePair,
    d: usize,
    spec: &BlockSpec,
    iv: &Interval,
    tol: &Tolerances,
) -> Result<PreScf, FrontError> {
    let normalized = normalize_prescf(pair, d, spec, iv, tol)?;
    Ok(PreScf {
        pair: normalized,
        from_original: Transform::identity(pair.m()),
        d,
        spec: spec.clone(),
    })
}

/// Frontend for pairs with a user-supplied initial transformation: apply it
/// and validate that the result is pre-SCF.
pub fn from_custom(
    pair: &DaePair,
    initial: &Transform,
    d: usize,
    spec: &BlockSpec,
    iv: &Interval,
    tol: &Tolerances,
) -> Result<PreScf, FrontError> {
    let out = initial.apply(pair);
    let normalized = normalize_prescf(&out, d, spec, iv, tol)?;
    Ok(PreScf { pair: normalized, from_original: initial.clone(), d, spec: spec.clone() })
}

/// Frontend for T-canonical pairs
/// `{[[I, 0], [0, N]], [[F11, 0], [F21, I]]}` with `N` strictly block upper
/// triangular for a decreasing partition.
///
/// The reduction is `L = diag(I_d, R^{-1})`, `K = I`, with the factor `R`
/// from [`rc_factor`] normalising `N` to the elementary nilpotent.
pub fn from_t_canonical(
    pair: &DaePair,
    d: usize,
    spec: &BlockSpec,
    iv: &Interval,
    tol: &Tolerances,
) -> Result<PreScf, FrontError> {
    if spec.ordering() != BlockOrdering::Decreasing {
        return Err(FrontError::Structure(
            "a T-canonical pair needs a decreasing block partition".into(),
        ));
    }
    let a = spec.total();
    let m = pair.m();
    if d + a != m {
        return Err(FrontError::Structure(format!("d + a = {} does not match m = {m}", d + a)));
    }
    let ts = iv.samples(tol.n_check);
    let zt_e = scaled_zero_tol(&pair.e, &ts, tol)?;
    let n = pair.e.block(d, d, a, a).zero_sweep(&ts, zt_e)?;
    if !is_strictly_block_upper_triangular(&n, spec.sizes()) {
        return Err(FrontError::Structure(
            "nilpotent part of E is not strictly block upper triangular".into(),
        ));
    }
    let target_e = MatrixFn::block_diag(&[&MatrixFn::identity(d), &n]);
    snap_to(&pair.e, &target_e, &ts, snap_tol(tol))
        .map_err(|err| FrontError::Structure(format!("E is not diag(I_d, N): {err}")))?;

    let zt_f = scaled_zero_tol(&pair.f, &ts, tol)?;
    let f = pair.f.zero_sweep(&ts, zt_f)?;
    let f11 = f.block(0, 0, d, d);
    let f21 = f.block(d, 0, a, d);
    let target_f = MatrixFn::from_blocks(&[
        vec![&f11, &MatrixFn::zeros(d, a)],
        vec![&f21, &MatrixFn::identity(a)],
    ]);
    snap_to(&f, &target_f, &ts, snap_tol(tol))
        .map_err(|err| FrontError::Structure(format!("F is not [[F11, 0], [F21, I]]: {err}")))?;

    let (r, r_inv) = rc_factor(&n, spec, iv, tol)?;
    let ident_d = MatrixFn::identity(d);
    let l = MatrixFn::block_diag(&[&ident_d, &r_inv]);
    let l_inv = MatrixFn::block_diag(&[&ident_d, &r]);
    let ident_m = MatrixFn::identity(m);
    let transform = Transform::new(l, l_inv, ident_m.clone(), ident_m);

    // K = I, so F_new = L F = [[F11, 0], [R^{-1} F21, R^{-1}]] and
    // E_new = diag(I_d, R^{-1} N) = diag(I_d, N^E) by the rc_factor identity.
    let rf21 = r_inv.matmul(&f21);
    let f_new = MatrixFn::from_blocks(&[
        vec![&f11, &MatrixFn::zeros(d, a)],
        vec![&rf21, &r_inv],
    ]);
    let e_new = MatrixFn::block_diag(&[&ident_d, &spec.elementary_nilpotent()]);
    let normalized = normalize_prescf(&DaePair::new(e_new, f_new), d, spec, iv, tol)?;
    Ok(PreScf { pair: normalized, from_original: transform, d, spec: spec.clone() })
}

/// Frontend for S-canonical pairs
/// `{[[I, E12], [0, N]], [[F11, 0], [0, I]]}` with `N` strictly block upper
/// triangular for an increasing partition and the first block column of
/// `E12` zero.
///
/// The reduction is `L = I`, `K = [[I, -E12 R^{-1}], [0, R^{-1}]]` with `R`
/// from [`rc_factor`]; after Leibniz simplification the new pair is
/// `{diag(I_d, N^E), [[F11, -(F11 E12 + E12') R^{-1}], [0, R^{-1} + N (R^{-1})']]}`.
pub fn from_s_canonical(
    pair: &DaePair,
    d: usize,
    spec: &BlockSpec,
    iv: &Interval,
    tol: &Tolerances,
) -> Result<PreScf, FrontError> {
    if spec.ordering() != BlockOrdering::Increasing {
        return Err(FrontError::Structure(
            "an S-canonical pair needs an increasing block partition".into(),
        ));
    }
    let a = spec.total();
    let m = pair.m();
    if d + a != m {
        return Err(FrontError::Structure(format!("d + a = {} does not match m = {m}", d + a)));
    }
    let ts = iv.samples(tol.n_check);
    let zt_e = scaled_zero_tol(&pair.e, &ts, tol)?;
    let n = pair.e.block(d, d, a, a).zero_sweep(&ts, zt_e)?;
    if !is_strictly_block_upper_triangular(&n, spec.sizes()) {
        return Err(FrontError::Structure(
            "nilpotent part of E is not strictly block upper triangular".into(),
        ));
    }
    let e12 = pair.e.block(0, d, d, a).zero_sweep(&ts, zt_e)?;
    if a > 0 {
        let l1 = spec.sizes()[0];
        if !e12.block(0, 0, d, l1).is_structural_zero() {
            return Err(FrontError::Structure(
                "the first block column of E12 must vanish for an S-canonical pair".into(),
            ));
        }
    }
    let target_e = MatrixFn::from_blocks(&[
        vec![&MatrixFn::identity(d), &e12],
        vec![&MatrixFn::zeros(a, d), &n],
    ]);
    snap_to(&pair.e, &target_e, &ts, snap_tol(tol))
        .map_err(|err| FrontError::Structure(format!("E is not [[I, E12], [0, N]]: {err}")))?;

    let zt_f = scaled_zero_tol(&pair.f, &ts, tol)?;
    let f = pair.f.zero_sweep(&ts, zt_f)?;
    let f11 = f.block(0, 0, d, d);
    let target_f = MatrixFn::block_diag(&[&f11, &MatrixFn::identity(a)]);
    snap_to(&f, &target_f, &ts, snap_tol(tol))
        .map_err(|err| FrontError::Structure(format!("F is not diag(F11, I): {err}")))?;

    let (r, r_inv) = rc_factor(&n, spec, iv, tol)?;
    let e12_rinv = e12.matmul(&r_inv);
    let k = MatrixFn::from_blocks(&[
        vec![&MatrixFn::identity(d), &e12_rinv.neg()],
        vec![&MatrixFn::zeros(a, d), &r_inv],
    ]);
    let k_inv = MatrixFn::from_blocks(&[
        vec![&MatrixFn::identity(d), &e12],
        vec![&MatrixFn::zeros(a, d), &r],
    ]);
    let ident_m = MatrixFn::identity(m);
    let transform = Transform::new(ident_m.clone(), ident_m, k, k_inv);

    let f12_new = f11.matmul(&e12).add(&e12.derivative()).neg().matmul(&r_inv);
    let f22_new = r_inv.add(&n.matmul(&r_inv.derivative()));
    let f_new = MatrixFn::from_blocks(&[
        vec![&f11, &f12_new],
        vec![&MatrixFn::zeros(a, d), &f22_new],
    ]);
    let e_new = MatrixFn::block_diag(&[&MatrixFn::identity(d), &spec.elementary_nilpotent()]);
    let normalized = normalize_prescf(&DaePair::new(e_new, f_new), d, spec, iv, tol)?;
    Ok(PreScf { pair: normalized, from_original: transform, d, spec: spec.clone() })
}

/// A permutation as an equivalence transformation: `L = K = P` with
/// `P e_j = e_{perm[j]}`. In the transformed system the `j`-th variable is
/// the old variable `perm[j]`, and the old equation `i` sits at row
/// `perm[i]`.
pub fn permutation_transform(perm: &[usize]) -> Result<Transform, FrontError> {
    let m = perm.len();
    let mut seen = vec![false; m];
    for &p in perm {
        if p >= m || seen[p] {
            return Err(FrontError::Structure(format!(
                "{perm:?} is not a permutation of 0..{m}"
            )));
        }
        seen[p] = true;
    }
    let mut p_mat = MatrixFn::zeros(m, m);
    for (j, &pj) in perm.iter().enumerate() {
        p_mat.set(pj, j, ScalarFn::one());
    }
    let p_t = p_mat.transpose();
    Ok(Transform::new(p_mat.clone(), p_t.clone(), p_mat, p_t))
}

/// A smooth orthonormal kernel basis `D(t)` of `h(t)` together with an
/// orthonormal complement `A(t)` (so `[D A]` is pointwise orthogonal).
///
/// `h` must have constant rank on the interval. A constant matrix is
/// handled numerically (eigenvectors of the Gram matrix, deterministically
/// sign-fixed); a time-varying one symbolically: pivot rows/columns are
/// chosen by full pivoting at the interval midpoint, the kernel is solved
/// through the symbolic inverse of the pivot submatrix, and both bases are
/// orthonormalised by symbolic Gram-Schmidt. Either way the results are
/// verified by sampling.
pub fn smooth_kernel_basis(
    h: &MatrixFn,
    iv: &Interval,
    tol: &Tolerances,
) -> Result<(MatrixFn, MatrixFn), FrontError> {
    let n = h.ncols();
    let ts = iv.samples(tol.n_check);
    let mats = h.eval_grid(&ts)?;
    let ranks: Vec<usize> = mats.iter().map(|m| numeric_rank(m, tol.rank_rel_tol)).collect();
    let rank = ranks[ts.len() / 2];
    if ranks.iter().any(|&r| r != rank) {
        let mut seen = ranks.clone();
        seen.dedup();
        return Err(FrontError::RankNotConstant { what: "kernel target".into(), seen });
    }
    let k = n - rank;

    let (d_mat, a_mat) = if rank == 0 {
        (MatrixFn::identity(n), MatrixFn::zeros(n, 0))
    } else if k == 0 {
        (MatrixFn::zeros(n, 0), MatrixFn::identity(n))
    } else if let Some(h0) = h.as_constant() {
        constant_kernel_split(&h0, k)
    } else {
        symbolic_kernel_split(h, rank, iv, tol)?
    };
    validate_kernel_bases(h, &d_mat, &a_mat, iv, tol)?;
    Ok((d_mat, a_mat))
}

/// Check a kernel/complement pair: dimensions, `h D = 0`, and orthogonality
/// of `[D A]`, all on the sample grid.
pub fn validate_kernel_bases(
    h: &MatrixFn,
    d_mat: &MatrixFn,
    a_mat: &MatrixFn,
    iv: &Interval,
    tol: &Tolerances,
) -> Result<(), FrontError> {
    let n = h.ncols();
    if d_mat.nrows() != n || a_mat.nrows() != n || d_mat.ncols() + a_mat.ncols() != n {
        return Err(FrontError::Structure(format!(
            "kernel basis dimensions {}x{} and {}x{} do not fit a {} column space",
            d_mat.nrows(),
            d_mat.ncols(),
            a_mat.nrows(),
            a_mat.ncols(),
            n
        )));
    }
    let ts = iv.samples(tol.n_check);
    let scale = h.max_abs_on(&ts)?.0.max(1.0);
    let hd = h.matmul(d_mat);
    let (worst, at) = hd.max_abs_on(&ts)?;
    if worst > snap_tol(tol) * scale {
        return Err(FrontError::Structure(format!(
            "kernel basis fails h * D = 0: residual {worst:.3e} at t = {at}"
        )));
    }
    let q = MatrixFn::from_blocks(&[vec![d_mat, a_mat]]);
    let gram = q.transpose().matmul(&q);
    let dev = gram.sub(&MatrixFn::identity(n));
    let (worst, at) = dev.max_abs_on(&ts)?;
    if worst > snap_tol(tol) {
        return Err(FrontError::Structure(format!(
            "[D A] is not orthonormal: deviation {worst:.3e} at t = {at}"
        )));
    }
    Ok(())
}

fn constant_kernel_split(h0: &DMatrix<f64>, k: usize) -> (MatrixFn, MatrixFn) {
    let n = h0.ncols();
    let gram = h0.transpose() * h0;
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let mut d = DMatrix::zeros(n, k);
    let mut a = DMatrix::zeros(n, n - k);
    for (pos, &ei) in order.iter().enumerate() {
        let mut col: Vec<f64> = eig.eigenvectors.column(ei).iter().copied().collect();
        // Deterministic sign: largest-magnitude component positive.
        let lead = col
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.abs().partial_cmp(&y.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if col[lead] < 0.0 {
            for v in &mut col {
                *v = -*v;
            }
        }
        for (r, &v) in col.iter().enumerate() {
            if pos < k {
                d[(r, pos)] = v;
            } else {
                a[(r, pos - k)] = v;
            }
        }
    }
    (MatrixFn::from_dmatrix(&d), MatrixFn::from_dmatrix(&a))
}

fn symbolic_kernel_split(
    h: &MatrixFn,
    rank: usize,
    iv: &Interval,
    tol: &Tolerances,
) -> Result<(MatrixFn, MatrixFn), FrontError> {
    let n = h.ncols();
    let h_mid = h.eval(iv.midpoint())?;
    let (prows, pcols) = full_pivot_sets(&h_mid, rank);
    let free: Vec<usize> = (0..n).filter(|j| !pcols.contains(j)).collect();
    let hij = h.select(&prows, &pcols);
    let hij_inv = hij.inverse(iv, tol)?;
    let mut kernel_cols = Vec::with_capacity(free.len());
    for &jf in &free {
        let rhs = h.select(&prows, &[jf]);
        let vj = hij_inv.matmul(&rhs).neg();
        let mut v = MatrixFn::zeros(n, 1);
        v.set(jf, 0, ScalarFn::one());
        for (s, &jp) in pcols.iter().enumerate() {
            v.set(jp, 0, vj.get(s, 0).clone());
        }
        kernel_cols.push(v);
    }
    let d_mat = gram_schmidt(n, &kernel_cols, iv, tol)?;
    // Complement candidates: pivot-column unit vectors, projected off D.
    let mut comp_cols = Vec::with_capacity(pcols.len());
    for &jp in &pcols {
        let mut e = MatrixFn::zeros(n, 1);
        e.set(jp, 0, ScalarFn::one());
        let proj = d_mat.matmul(&d_mat.transpose().matmul(&e));
        comp_cols.push(e.sub(&proj));
    }
    let a_mat = gram_schmidt(n, &comp_cols, iv, tol)?;
    Ok((d_mat, a_mat))
}

/// Full-pivot Gaussian elimination on a numeric snapshot, returning the
/// chosen pivot rows and columns (sorted).
fn full_pivot_sets(h0: &DMatrix<f64>, rank: usize) -> (Vec<usize>, Vec<usize>) {
    let mut a = h0.clone();
    let mut prows: Vec<usize> = Vec::with_capacity(rank);
    let mut pcols: Vec<usize> = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut best = (usize::MAX, usize::MAX, -1.0f64);
        for i in 0..a.nrows() {
            if prows.contains(&i) {
                continue;
            }
            for j in 0..a.ncols() {
                if pcols.contains(&j) {
                    continue;
                }
                let v = a[(i, j)].abs();
                if v > best.2 {
                    best = (i, j, v);
                }
            }
        }
        let (pi, pj, mag) = best;
        if mag <= 0.0 {
            break;
        }
        prows.push(pi);
        pcols.push(pj);
        for i in 0..a.nrows() {
            if i == pi {
                continue;
            }
            let f = a[(i, pj)] / a[(pi, pj)];
            if f == 0.0 {
                continue;
            }
            for j in 0..a.ncols() {
                a[(i, j)] -= f * a[(pi, j)];
            }
        }
    }
    prows.sort_unstable();
    pcols.sort_unstable();
    (prows, pcols)
}

/// Symbolic Gram-Schmidt on column vectors; the result is `n x k`.
fn gram_schmidt(
    n: usize,
    cols: &[MatrixFn],
    iv: &Interval,
    tol: &Tolerances,
) -> Result<MatrixFn, FrontError> {
    let mut units: Vec<MatrixFn> = Vec::with_capacity(cols.len());
    for (idx, v) in cols.iter().enumerate() {
        let mut u = v.clone();
        for prev in &units {
            let coeff = prev.transpose().matmul(&u); // 1x1
            u = u.sub(&prev.scale(coeff.get(0, 0)));
        }
        let norm2 = u.transpose().matmul(&u).get(0, 0).clone();
        let at_mid = norm2.eval(iv.midpoint()).map_err(MatError::from)?;
        if at_mid <= tol.rank_rel_tol.max(1e-12) {
            return Err(FrontError::Structure(format!(
                "column {idx} became (numerically) dependent during orthonormalisation"
            )));
        }
        let inv_norm = &ScalarFn::one() / &norm2.sqrt();
        units.push(u.scale(&inv_norm));
    }
    let refs: Vec<&MatrixFn> = units.iter().collect();
    if refs.is_empty() {
        return Ok(MatrixFn::zeros(n, 0));
    }
    Ok(MatrixFn::from_blocks(&[refs]))
}

/// Frontend for Hessenberg systems of index 2:
///
/// ```text
/// x1' + H11 x1 + H12 x2 = q1        (m1 equations)
///       H21 x1          = q2        (m2 equations)
/// ```
///
/// i.e. `E = diag(I_{m1}, 0)`, `F = [[H11, H12], [H21, 0]]`, with `H21 H12`
/// pointwise nonsingular. New variables `(u, x2, w)` with `x1 = D u + A w`,
/// where `D` spans `ker H21` and `A` its orthonormal complement; the
/// algebraic partition is `(m2, m2)` and `d = m1 - m2`.
pub fn from_hessenberg2(
    pair: &DaePair,
    m1: usize,
    m2: usize,
    bases: Option<(MatrixFn, MatrixFn)>,
    iv: &Interval,
    tol: &Tolerances,
) -> Result<PreScf, FrontError> {
    let m = m1 + m2;
    if pair.m() != m {
        return Err(FrontError::Structure(format!(
            "declared sizes ({m1}, {m2}) do not match the system size {}",
            pair.m()
        )));
    }
    if m1 < m2 {
        return Err(FrontError::Structure(
            "an index-2 Hessenberg system needs at least as many differential equations \
             as constraints (m1 >= m2)"
            .into(),
        ));
    }
    let ts = iv.samples(tol.n_check);
    let target_e = MatrixFn::block_diag(&[&MatrixFn::identity(m1), &MatrixFn::zeros(m2, m2)]);
    let e = snap_to(&pair.e, &target_e, &ts, snap_tol(tol))
        .map_err(|err| FrontError::Structure(format!("E is not diag(I_{m1}, 0): {err}")))?;
    let f = pair.f.zero_sweep(&ts, scaled_zero_tol(&pair.f, &ts, tol)?)?;
    if !f.block(m1, m1, m2, m2).is_structural_zero() {
        return Err(FrontError::Structure(
            "the constraint equations must not involve x2 (F22 block must vanish)".into(),
        ));
    }
    let h21 = f.block(m1, 0, m2, m1);

    let (d_mat, a_mat) = match bases {
        Some((d0, a0)) => {
            validate_kernel_bases(&h21, &d0, &a0, iv, tol)?;
            (d0, a0)
        }
        None => smooth_kernel_basis(&h21, iv, tol)?,
    };
    let d = m1 - m2;
    if d_mat.ncols() != d {
        return Err(FrontError::Structure(format!(
            "H21 does not have full row rank: kernel dimension {} instead of {d}",
            d_mat.ncols()
        )));
    }

    let theta = m2;
    let dt = d_mat.transpose();
    let at = a_mat.transpose();
    let z_dm2 = MatrixFn::zeros(d, m2);
    let z_tm2 = MatrixFn::zeros(theta, m2);
    let z_m2m1 = MatrixFn::zeros(m2, m1);
    let i_t = MatrixFn::identity(theta);
    let l = MatrixFn::from_blocks(&[
        vec![&dt, &z_dm2],
        vec![&at, &z_tm2],
        vec![&z_m2m1, &i_t],
    ]);
    let l_inv = MatrixFn::from_blocks(&[
        vec![&d_mat, &a_mat, &MatrixFn::zeros(m1, theta)],
        vec![&MatrixFn::zeros(m2, d), &MatrixFn::zeros(m2, theta), &i_t],
    ]);
    let k = MatrixFn::from_blocks(&[
        vec![&d_mat, &MatrixFn::zeros(m1, theta), &a_mat],
        vec![&MatrixFn::zeros(m2, d), &i_t, &MatrixFn::zeros(m2, theta)],
    ]);
    let k_inv = MatrixFn::from_blocks(&[
        vec![&dt, &z_dm2],
        vec![&z_tm2.transpose().transpose(), &i_t],
        vec![&at, &z_tm2],
    ]);
    let transform = Transform::new(l, l_inv, k, k_inv);
    let out = transform.apply(&DaePair::new(e, f));
    let spec = BlockSpec::new(vec![theta, theta], BlockOrdering::Increasing)
        .map_err(FrontError::Structure)?;
    let normalized = normalize_prescf(&out, d, &spec, iv, tol)?;
    Ok(PreScf { pair: normalized, from_original: transform, d, spec })
}

/// Frontend for Hessenberg systems of index 3:
///
/// ```text
/// x1' + H11 x1 + H12 x2 + H13 x3 = q1     (m1 equations)
/// x2' + H21 x1 + H22 x2          = q2     (m2 equations)
///                H32 x2          = q3     (m3 equations)
/// ```
///
/// with `H32 H21 H13` pointwise nonsingular. An optional permutation is
/// applied first (`L = K = P`); optional `bases` are a kernel/complement
/// pair for `ker H32`. New variables `(u1, u2, x3, w2, w3)` with
/// `x1 = D2 u1 + A2 w2` (`D2` spanning `ker(H32 H21)`) and
/// `x2 = D3 u2 + A3 w3` (`D3` spanning `ker H32`); the algebraic partition
/// is `(m3, m3, m3)` and `d = (m1 - m3) + (m2 - m3)`.
pub fn from_hessenberg3(
    pair: &DaePair,
    m1: usize,
    m2: usize,
    m3: usize,
    permutation: Option<&[usize]>,
    bases: Option<(MatrixFn, MatrixFn)>,
    iv: &Interval,
    tol: &Tolerances,
) -> Result<PreScf, FrontError> {
    let m = m1 + m2 + m3;
    if pair.m() != m {
        return Err(FrontError::Structure(format!(
            "declared sizes ({m1}, {m2}, {m3}) do not match the system size {}",
            pair.m()
        )));
    }
    let theta = m3;
    if m1 < theta || m2 < theta {
        return Err(FrontError::Structure(
            "an index-3 Hessenberg system needs m1 >= m3 and m2 >= m3".into(),
        ));
    }
    let (pair0, perm_tr) = match permutation {
        Some(p) => {
            if p.len() != m {
                return Err(FrontError::Structure(format!(
                    "permutation length {} does not match the system size {m}",
                    p.len()
                )));
            }
            let tr = permutation_transform(p)?;
            (tr.apply(pair), tr)
        }
        None => (pair.clone(), Transform::identity(m)),
    };
    let ts = iv.samples(tol.n_check);
    let target_e =
        MatrixFn::block_diag(&[&MatrixFn::identity(m1 + m2), &MatrixFn::zeros(m3, m3)]);
    let e = snap_to(&pair0.e, &target_e, &ts, snap_tol(tol))
        .map_err(|err| FrontError::Structure(format!("E is not diag(I_{{m1+m2}}, 0): {err}")))?;
    let f = pair0.f.zero_sweep(&ts, scaled_zero_tol(&pair0.f, &ts, tol)?)?;
    for (r0, c0, nr, nc, what) in [
        (m1, m1 + m2, m2, m3, "x3 must not enter the x2 equations"),
        (m1 + m2, 0, m3, m1, "x1 must not enter the constraints"),
        (m1 + m2, m1 + m2, m3, m3, "x3 must not enter the constraints"),
    ] {
        if !f.block(r0, c0, nr, nc).is_structural_zero() {
            return Err(FrontError::Structure(what.into()));
        }
    }
    let h21 = f.block(m1, 0, m2, m1);
    let h32 = f.block(m1 + m2, m1, m3, m2);

    let (d3, a3) = match bases {
        Some((d0, a0)) => {
            validate_kernel_bases(&h32, &d0, &a0, iv, tol)?;
            (d0, a0)
        }
        None => smooth_kernel_basis(&h32, iv, tol)?,
    };
    if d3.ncols() != m2 - theta {
        return Err(FrontError::Structure(format!(
            "H32 does not have full row rank: kernel dimension {} instead of {}",
            d3.ncols(),
            m2 - theta
        )));
    }

    // Kernel/complement of the chain H32 H21 in the x1 space. Prefer reusing
    // the x2-space bases when they literally work (square H21 mapping the
    // kernel into the kernel), then a cheap lift for H21 = [I 0]; otherwise
    // construct fresh bases.
    let chain = h32.matmul(&h21);
    let scale = chain.max_abs_on(&ts)?.0.max(1.0);
    let (d2, a2) = if m1 == m2
        && chain.matmul(&d3).is_zero_on(&ts, snap_tol(tol) * scale)?
    {
        (d3.clone(), a3.clone())
    } else {
        let mut lead = MatrixFn::zeros(m2, m1);
        for i in 0..m2 {
            lead.set(i, i, ScalarFn::one());
        }
        let h21_is_lead_identity = h21.sub(&lead).is_zero_on(&ts, snap_tol(tol))?;
        if h21_is_lead_identity {
            let d2 = MatrixFn::block_diag(&[&d3, &MatrixFn::identity(m1 - m2)]);
            let a2 = MatrixFn::from_blocks(&[vec![&a3], vec![&MatrixFn::zeros(m1 - m2, theta)]]);
            (d2, a2)
        } else {
            smooth_kernel_basis(&chain, iv, tol)?
        }
    };
    validate_kernel_bases(&chain, &d2, &a2, iv, tol)?;
    if d2.ncols() != m1 - theta {
        return Err(FrontError::Structure(format!(
            "H32 H21 does not have full row rank: kernel dimension {} instead of {}",
            d2.ncols(),
            m1 - theta
        )));
    }

    let d = (m1 - theta) + (m2 - theta);
    let (d2t, a2t, d3t, a3t) = (d2.transpose(), a2.transpose(), d3.transpose(), a3.transpose());
    let i_th = MatrixFn::identity(theta);
    let z = MatrixFn::zeros;
    let l = MatrixFn::from_blocks(&[
        vec![&d2t, &z(m1 - theta, m2), &z(m1 - theta, m3)],
        vec![&z(m2 - theta, m1), &d3t, &z(m2 - theta, m3)],
        vec![&a2t, &z(theta, m2), &z(theta, m3)],
        vec![&z(theta, m1), &a3t, &z(theta, m3)],
        vec![&z(m3, m1), &z(m3, m2), &i_th],
    ]);
    let l_inv = MatrixFn::from_blocks(&[
        vec![&d2, &z(m1, m2 - theta), &a2, &z(m1, theta), &z(m1, m3)],
        vec![&z(m2, m1 - theta), &d3, &z(m2, theta), &a3, &z(m2, m3)],
        vec![&z(m3, m1 - theta), &z(m3, m2 - theta), &z(m3, theta), &z(m3, theta), &i_th],
    ]);
    let k = MatrixFn::from_blocks(&[
        vec![&d2, &z(m1, m2 - theta), &z(m1, m3), &a2, &z(m1, theta)],
        vec![&z(m2, m1 - theta), &d3, &z(m2, m3), &z(m2, theta), &a3],
        vec![&z(m3, m1 - theta), &z(m3, m2 - theta), &i_th, &z(m3, theta), &z(m3, theta)],
    ]);
    let k_inv = MatrixFn::from_blocks(&[
        vec![&d2t, &z(m1 - theta, m2), &z(m1 - theta, m3)],
        vec![&z(m2 - theta, m1), &d3t, &z(m2 - theta, m3)],
        vec![&z(m3, m1), &z(m3, m2), &i_th],
        vec![&a2t, &z(theta, m2), &z(theta, m3)],
        vec![&z(theta, m1), &a3t, &z(theta, m3)],
    ]);
    let step_tr = Transform::new(l, l_inv, k, k_inv);
    let out = step_tr.apply(&DaePair::new(e, f));
    let spec = BlockSpec::new(vec![theta, theta, theta], BlockOrdering::Increasing)
        .map_err(FrontError::Structure)?;
    let normalized = normalize_prescf(&out, d, &spec, iv, tol)?;
    Ok(PreScf {
        pair: normalized,
        from_original: perm_tr.then(&step_tr),
        d,
        spec,
    })
}

/// Frontend for constrained mechanical systems with positions `p`,
/// velocities `v`, and Lagrange multipliers `lambda`:
///
/// ```text
/// p' - Z v = 0                          (n kinematic equations)
/// M v' + D v + K p + G^T lambda = f     (n force balances)
/// G p = g                               (g position constraints)
/// ```
///
/// i.e. `E = diag(I_n, M, 0)`, `F = [[0, -Z, 0], [K, D, G^T], [G, 0, 0]]`
/// (`Z = I` when no kinematic coupling matrix is given — encode that by a
/// `-I` block in `F`). `M` and `Z` must be pointwise nonsingular and
/// `G Z M^{-1} G^T` too (index-3 condition, checked downstream). Scaling the
/// force balance by `M^{-1}`, swapping `p` and `v` and normalising the
/// kinematic rows by `Z^{-1}` yields an index-3 Hessenberg system in
/// `(v, p~, lambda)`, which is then reduced as above.
pub fn from_multibody(
    pair: &DaePair,
    n: usize,
    g: usize,
    iv: &Interval,
    tol: &Tolerances,
) -> Result<PreScf, FrontError> {
    let m = 2 * n + g;
    if pair.m() != m {
        return Err(FrontError::Structure(format!(
            "declared sizes (n = {n}, g = {g}) do not match the system size {}",
            pair.m()
        )));
    }
    let ts = iv.samples(tol.n_check);
    let zt_e = scaled_zero_tol(&pair.e, &ts, tol)?;
    let m_mass = pair.e.block(n, n, n, n).zero_sweep(&ts, zt_e)?;
    let target_e = MatrixFn::block_diag(&[
        &MatrixFn::identity(n),
        &m_mass,
        &MatrixFn::zeros(g, g),
    ]);
    snap_to(&pair.e, &target_e, &ts, snap_tol(tol))
        .map_err(|err| FrontError::Structure(format!("E is not diag(I, M, 0): {err}")))?;
    let f = pair.f.zero_sweep(&ts, scaled_zero_tol(&pair.f, &ts, tol)?)?;
    for (r0, c0, nr, nc, what) in [
        (0, 0, n, n, "the kinematic equations must not involve p"),
        (0, 2 * n, n, g, "the kinematic equations must not involve lambda"),
        (2 * n, n, g, n, "the constraints must not involve v"),
        (2 * n, 2 * n, g, g, "the constraints must not involve lambda"),
    ] {
        if !f.block(r0, c0, nr, nc).is_structural_zero() {
            return Err(FrontError::Structure(what.into()));
        }
    }
    let minus_z = f.block(0, n, n, n);
    let k_st = f.block(n, 0, n, n);
    let d_damp = f.block(n, n, n, n);
    let g_t = f.block(n, 2 * n, n, g);
    let g_c = f.block(2 * n, 0, g, n);
    let (gdev, gat) = g_t.sub(&g_c.transpose()).max_abs_on(&ts)?;
    if gdev > snap_tol(tol) * g_c.max_abs_on(&ts)?.0.max(1.0) {
        return Err(FrontError::Structure(format!(
            "the multiplier coupling block is not G^T (deviation {gdev:.3e} at t = {gat})"
        )));
    }

    let m_inv = m_mass.inverse(iv, tol)?;
    // Scale the force balance by M^{-1} and swap p <-> v.
    let i_n = MatrixFn::identity(n);
    let i_g = MatrixFn::identity(g);
    let z_nn = MatrixFn::zeros(n, n);
    let z_ng = MatrixFn::zeros(n, g);
    let z_gn = MatrixFn::zeros(g, n);
    let l_h = MatrixFn::from_blocks(&[
        vec![&z_nn, &m_inv, &z_ng],
        vec![&i_n, &z_nn, &z_ng],
        vec![&z_gn, &z_gn, &i_g],
    ]);
    let l_h_inv = MatrixFn::from_blocks(&[
        vec![&z_nn, &i_n, &z_ng],
        vec![&m_mass, &z_nn, &z_ng],
        vec![&z_gn, &z_gn, &i_g],
    ]);
    let k_h = MatrixFn::from_blocks(&[
        vec![&z_nn, &i_n, &z_ng],
        vec![&i_n, &z_nn, &z_ng],
        vec![&z_gn, &z_gn, &i_g],
    ]);
    let tr_h = Transform::new(l_h, l_h_inv, k_h.clone(), k_h);

    // Hessenberg blocks in the (v, p, lambda) order.
    let h11 = m_inv.matmul(&d_damp);
    let h12 = m_inv.matmul(&k_st);
    let h13 = m_inv.matmul(&g_t);
    let h21 = minus_z.clone(); // -Z
    let h32 = g_c.clone();

    // Normalise the kinematic rows: S = H21 must be nonsingular; afterwards
    // H21 = I.
    let s = h21;
    for &t in &ts {
        let sv = s.eval(t)?;
        let smin = min_singular_value(&sv);
        if smin <= tol.rank_rel_tol * crate::matfn::max_abs_dm(&sv).max(1.0) {
            return Err(FrontError::Structure(format!(
                "the kinematic coupling matrix Z is singular at t = {t}"
            )));
        }
    }
    let s_inv = s.inverse(iv, tol)?;
    let l_z = MatrixFn::block_diag(&[&i_n, &s_inv, &i_g]);
    let l_z_inv = MatrixFn::block_diag(&[&i_n, &s, &i_g]);
    let k_z = MatrixFn::block_diag(&[&i_n, &s, &i_g]);
    let k_z_inv = MatrixFn::block_diag(&[&i_n, &s_inv, &i_g]);
    let tr_z = Transform::new(l_z, l_z_inv, k_z, k_z_inv);

    // Assemble the normalised Hessenberg-3 pair directly (block algebra of
    // tr_z applied to the H-pair; the K' term contributes S^{-1} S' in the
    // (2,2) block since H22 = 0).
    let h22_new = s_inv.matmul(&s.derivative());
    let h12_new = h12.matmul(&s);
    let h32_new = h32.matmul(&s);
    let z_gg = MatrixFn::zeros(g, g);
    let f_h = MatrixFn::from_blocks(&[
        vec![&h11, &h12_new, &h13],
        vec![&i_n, &h22_new, &z_ng],
        vec![&z_gn, &h32_new, &z_gg],
    ]);
    let e_h = MatrixFn::block_diag(&[&MatrixFn::identity(2 * n), &MatrixFn::zeros(g, g)]);
    let pair_h = DaePair::new(e_h, f_h);

    let pre = from_hessenberg3(&pair_h, n, n, g, None, None, iv, tol)?;
    let from_original = tr_h.then(&tr_z).then(&pre.from_original);
    Ok(PreScf { pair: pre.pair, from_original, d: pre.d, spec: pre.spec })
}
