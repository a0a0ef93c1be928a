//! Matrix-valued functions of time with entrywise symbolic expressions.
//!
//! [`MatrixFn`] is a dense row-major grid of [`ScalarFn`] entries. All
//! arithmetic goes through the folding constructors of [`crate::expr`], so
//! products against structural zeros disappear at construction time — the
//! canonical-form pipeline depends on that to keep its iteration matrices
//! sparse and its termination argument intact.
//!
//! Symbolic construction, numeric verification: inverses and reductions are
//! built symbolically here and then *checked* by sampling (`verify_inverse`,
//! [`MatrixFn::max_abs_on`]) rather than trusted.
//!
//! Dimension mismatches are programmer errors and panic; everything
//! data-dependent (evaluation domain, singularity, verification, budget)
//! returns [`MatError`].

use std::collections::HashMap;
use std::fmt;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::config::{Interval, Tolerances};
use crate::expr::{ExprError, ScalarFn};

#[derive(Debug, Error)]
pub enum MatError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("matrix is singular near t = {t}: {what}")]
    Singular { t: f64, what: String },
    #[error(
        "inverse verification failed: max |A*X - I| = {resid:.3e} at t = {t} \
         exceeds tolerance {tol:.3e}"
    )]
    InverseCheck { resid: f64, t: f64, tol: f64 },
    #[error("expression graph exceeded the node budget ({nodes} > {budget})")]
    Budget { nodes: usize, budget: usize },
    #[error("{0}")]
    Structure(String),
}

/// A matrix of scalar functions of `t`, stored row-major.
#[derive(Clone)]
pub struct MatrixFn {
    rows: usize,
    cols: usize,
    entries: Vec<ScalarFn>,
}

impl MatrixFn {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        MatrixFn { rows, cols, entries: vec![ScalarFn::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, ScalarFn::one());
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> ScalarFn) -> Self {
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                entries.push(f(i, j));
            }
        }
        MatrixFn { rows, cols, entries }
    }

    pub fn from_rows(rows: Vec<Vec<ScalarFn>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "row {i} has {} entries, expected {c}", row.len());
        }
        MatrixFn { rows: r, cols: c, entries: rows.into_iter().flatten().collect() }
    }

    /// Constant matrix from a numeric one.
    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| ScalarFn::constant(m[(i, j)]))
    }

    /// Parse a grid of expression strings under one parameter map.
    pub fn from_exprs(
        grid: &[Vec<String>],
        params: &std::collections::BTreeMap<String, f64>,
    ) -> Result<Self, ExprError> {
        let rows = grid.len();
        let cols = grid.first().map_or(0, Vec::len);
        let mut entries = Vec::with_capacity(rows * cols);
        for (i, row) in grid.iter().enumerate() {
            if row.len() != cols {
                return Err(ExprError::Parse {
                    pos: 0,
                    msg: format!("matrix row {i} has {} entries, expected {cols}", row.len()),
                });
            }
            for src in row {
                entries.push(crate::expr::parse(src, params)?);
            }
        }
        Ok(MatrixFn { rows, cols, entries })
    }

    /// Assemble from a block grid; block dimensions must be consistent.
    pub fn from_blocks(blocks: &[Vec<&MatrixFn>]) -> Self {
        let block_rows = blocks.len();
        assert!(block_rows > 0, "from_blocks needs at least one block row");
        let block_cols = blocks[0].len();
        for (i, row) in blocks.iter().enumerate() {
            assert_eq!(row.len(), block_cols, "block row {i} has a different number of blocks");
        }
        let row_heights: Vec<usize> = blocks.iter().map(|row| row[0].rows).collect();
        let col_widths: Vec<usize> = blocks[0].iter().map(|b| b.cols).collect();
        for (i, row) in blocks.iter().enumerate() {
            for (j, b) in row.iter().enumerate() {
                assert_eq!(
                    (b.rows, b.cols),
                    (row_heights[i], col_widths[j]),
                    "block ({i},{j}) is {}x{}, expected {}x{}",
                    b.rows,
                    b.cols,
                    row_heights[i],
                    col_widths[j]
                );
            }
        }
        let total_rows: usize = row_heights.iter().sum();
        let total_cols: usize = col_widths.iter().sum();
        let mut out = Self::zeros(total_rows, total_cols);
        let mut r0 = 0;
        for (i, row) in blocks.iter().enumerate() {
            let mut c0 = 0;
            for (j, b) in row.iter().enumerate() {
                for r in 0..b.rows {
                    for c in 0..b.cols {
                        out.set(r0 + r, c0 + c, b.get(r, c).clone());
                    }
                }
                c0 += col_widths[j];
            }
            r0 += row_heights[i];
        }
        out
    }

    pub fn block_diag(blocks: &[&MatrixFn]) -> Self {
        let rows: usize = blocks.iter().map(|b| b.rows).sum();
        let cols: usize = blocks.iter().map(|b| b.cols).sum();
        let mut out = Self::zeros(rows, cols);
        let (mut r0, mut c0) = (0, 0);
        for b in blocks {
            for r in 0..b.rows {
                for c in 0..b.cols {
                    out.set(r0 + r, c0 + c, b.get(r, c).clone());
                }
            }
            r0 += b.rows;
            c0 += b.cols;
        }
        out
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &ScalarFn {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of {}x{}", self.rows, self.cols);
        &self.entries[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, f: ScalarFn) {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of {}x{}", self.rows, self.cols);
        self.entries[i * self.cols + j] = f;
    }

    /// Copy of the `nr x nc` block starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> MatrixFn {
        assert!(
            r0 + nr <= self.rows && c0 + nc <= self.cols,
            "block ({r0}..{},{c0}..{}) out of {}x{}",
            r0 + nr,
            c0 + nc,
            self.rows,
            self.cols
        );
        Self::from_fn(nr, nc, |i, j| self.get(r0 + i, c0 + j).clone())
    }

    pub fn transpose(&self) -> MatrixFn {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).clone())
    }

    pub fn map(&self, mut f: impl FnMut(&ScalarFn) -> ScalarFn) -> MatrixFn {
        Self::from_fn(self.rows, self.cols, |i, j| f(self.get(i, j)))
    }

    pub fn scale(&self, s: &ScalarFn) -> MatrixFn {
        self.map(|e| e * s)
    }

    /// Entrywise exact derivative.
    pub fn derivative(&self) -> MatrixFn {
        self.map(ScalarFn::derivative)
    }

    /// True when every entry is the literal constant `0`.
    pub fn is_structural_zero(&self) -> bool {
        self.entries.iter().all(ScalarFn::is_zero)
    }

    /// True when the matrix is literally the identity (exact constants).
    pub fn is_structural_identity(&self) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| {
                (0..self.cols).all(|j| {
                    let want = if i == j { 1.0 } else { 0.0 };
                    self.get(i, j).as_const() == Some(want)
                })
            })
    }

    /// Total distinct expression nodes across all entries (shared subtrees
    /// counted once... per entry; good enough as a growth guard).
    pub fn node_count(&self) -> usize {
        self.entries.iter().map(ScalarFn::node_count).sum()
    }

    pub fn ensure_budget(&self, tol: &Tolerances) -> Result<(), MatError> {
        let nodes = self.node_count();
        if nodes > tol.node_budget {
            Err(MatError::Budget { nodes, budget: tol.node_budget })
        } else {
            Ok(())
        }
    }

    /// Evaluate at `t`. Entries sharing subtrees (and the same parameter
    /// map) are evaluated once via a shared memo table.
    pub fn eval(&self, t: f64) -> Result<DMatrix<f64>, MatError> {
        let mut memos: HashMap<usize, HashMap<*const crate::expr::Expr, f64>> = HashMap::new();
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let f = self.get(i, j);
                let key = std::sync::Arc::as_ptr(f.params_arc()) as usize;
                let memo = memos.entry(key).or_default();
                out[(i, j)] = crate::expr::eval_shared(f.expr(), t, f.params_arc(), memo)?;
            }
        }
        Ok(out)
    }

    pub fn eval_grid(&self, ts: &[f64]) -> Result<Vec<DMatrix<f64>>, MatError> {
        ts.iter().map(|&t| self.eval(t)).collect()
    }

    /// Largest `|entry|` over the sample points, with its location.
    pub fn max_abs_on(&self, ts: &[f64]) -> Result<(f64, f64), MatError> {
        let mut best = (0.0f64, ts.first().copied().unwrap_or(0.0));
        for &t in ts {
            let m = self.eval(t)?;
            let v = m.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
            if v > best.0 {
                best = (v, t);
            }
        }
        Ok(best)
    }

    /// True when every entry stays below `tol` in absolute value on `ts`.
    pub fn is_zero_on(&self, ts: &[f64], tol: f64) -> Result<bool, MatError> {
        Ok(self.max_abs_on(ts)?.0 <= tol)
    }

    /// Replace every entry whose sampled magnitude stays below `tol` by the
    /// literal constant `0`.
    ///
    /// The iteration matrices of the reduction are built by arithmetic whose
    /// exact cancellations the folding constructors cannot always see (and
    /// user-supplied inputs may contain disguised zeros). Sweeping restores
    /// the structural-zero pattern the termination argument needs. Entries
    /// that fail to evaluate on `ts` are an error, as elsewhere.
    pub fn zero_sweep(&self, ts: &[f64], tol: f64) -> Result<MatrixFn, MatError> {
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                let e = self.get(i, j);
                if e.is_zero() {
                    continue;
                }
                if e.max_abs_on(ts).map_err(MatError::from)? <= tol {
                    out.set(i, j, ScalarFn::zero());
                }
            }
        }
        Ok(out)
    }

    /// Matrix product through the folding constructors.
    pub fn matmul(&self, rhs: &MatrixFn) -> MatrixFn {
        assert_eq!(
            self.cols, rhs.rows,
            "product dimension mismatch: {}x{} * {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        Self::from_fn(self.rows, rhs.cols, |i, j| {
            let mut acc = ScalarFn::zero();
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a.is_zero() {
                    continue;
                }
                let b = rhs.get(k, j);
                if b.is_zero() {
                    continue;
                }
                acc = &acc + &(a * b);
            }
            acc
        })
    }

    /// Matrix-vector action on a numeric vector, symbolically weighted:
    /// returns the vector of scalar functions `sum_j m_ij * v_j`.
    pub fn apply_const_vector(&self, v: &[f64]) -> Vec<ScalarFn> {
        assert_eq!(self.cols, v.len(), "vector length {} does not match {} columns", v.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                let mut acc = ScalarFn::zero();
                for j in 0..self.cols {
                    if v[j] != 0.0 && !self.get(i, j).is_zero() {
                        acc = &acc + &(self.get(i, j) * &ScalarFn::constant(v[j]));
                    }
                }
                acc
            })
            .collect()
    }

    /// Scalar-level structural triangularity (zeros below/above diagonal).
    fn is_structural_triangular(&self, upper: bool) -> bool {
        if !self.is_square() {
            return false;
        }
        for i in 0..self.rows {
            for j in 0..self.cols {
                let below = i > j;
                if (upper && below && !self.get(i, j).is_zero())
                    || (!upper && !below && i != j && !self.get(i, j).is_zero())
                {
                    return false;
                }
            }
        }
        true
    }

    /// The numeric matrix when every entry is a literal constant.
    pub fn as_constant(&self) -> Option<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m[(i, j)] = self.get(i, j).as_const()?;
            }
        }
        Some(m)
    }

    /// Submatrix picking the given rows and columns (in the given order).
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> MatrixFn {
        Self::from_fn(rows.len(), cols.len(), |i, j| self.get(rows[i], cols[j]).clone())
    }

    fn is_orthonormal_on(&self, ts: &[f64], tol: f64) -> Result<bool, MatError> {
        if !self.is_square() {
            return Ok(false);
        }
        for &t in ts {
            let m = self.eval(t)?;
            let g = m.transpose() * &m;
            let dev = (&g - DMatrix::identity(self.rows, self.rows))
                .iter()
                .fold(0.0f64, |a, &x| a.max(x.abs()));
            if dev > tol {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Invert a square matrix function symbolically.
    ///
    /// Strategy ladder, cheapest first:
    /// 1. all-constant entries: numeric LU inverse, re-wrapped as constants;
    /// 2. structurally triangular: exact back-substitution;
    /// 3. orthonormal at the check points: the transpose;
    /// 4. order <= 4: adjugate over the symbolic determinant;
    /// 5. otherwise symbolic Gauss-Jordan with pivots chosen by magnitude at
    ///    the interval midpoint, guarded by the node budget.
    ///
    /// Whatever the route, the result is verified: `|A*X - I|` is sampled on
    /// the interval and must stay within `tol.verify_tol` (scaled by the
    /// magnitude of `A` itself).
    pub fn inverse(&self, iv: &Interval, tol: &Tolerances) -> Result<MatrixFn, MatError> {
        assert!(self.is_square(), "cannot invert a {}x{} matrix", self.rows, self.cols);
        let n = self.rows;
        if n == 0 {
            return Ok(MatrixFn::zeros(0, 0));
        }
        let ts = iv.samples(tol.n_check);
        let inv = if let Some(m) = self.as_constant() {
            let inv = m.clone().try_inverse().ok_or(MatError::Singular {
                t: iv.midpoint(),
                what: "constant matrix has no inverse".into(),
            })?;
            MatrixFn::from_dmatrix(&inv)
        } else if self.is_structural_triangular(true) {
            self.inverse_block_triangular_inner(&vec![1; n], true, iv, tol)?
        } else if self.is_structural_triangular(false) {
            self.inverse_block_triangular_inner(&vec![1; n], false, iv, tol)?
        } else if self.is_orthonormal_on(&ts, tol.verify_tol.max(1e-10))? {
            self.transpose()
        } else if n <= 4 {
            self.inverse_adjugate()?
        } else {
            self.inverse_gauss_jordan(iv, tol)?
        };
        verify_inverse(self, &inv, &ts, tol)?;
        Ok(inv)
    }

    /// Invert a block-triangular matrix by block back-substitution; the
    /// diagonal blocks are inverted via [`MatrixFn::inverse`].
    pub fn inverse_block_triangular(
        &self,
        sizes: &[usize],
        upper: bool,
        iv: &Interval,
        tol: &Tolerances,
    ) -> Result<MatrixFn, MatError> {
        let n: usize = sizes.iter().sum();
        assert!(self.is_square() && self.rows == n, "block sizes do not sum to matrix order");
        // Validate the zero pattern before trusting it.
        let offsets = offsets_of(sizes);
        for (bi, &ri) in offsets.iter().enumerate() {
            for (bj, &cj) in offsets.iter().enumerate() {
                let in_zero_part = if upper { bi > bj } else { bi < bj };
                if in_zero_part && !self.block(ri, cj, sizes[bi], sizes[bj]).is_structural_zero() {
                    return Err(MatError::Structure(format!(
                        "block ({bi},{bj}) is not structurally zero; \
                         matrix is not block {}-triangular for these sizes",
                        if upper { "upper" } else { "lower" }
                    )));
                }
            }
        }
        let inv = self.inverse_block_triangular_inner(sizes, upper, iv, tol)?;
        let ts = iv.samples(tol.n_check);
        verify_inverse(self, &inv, &ts, tol)?;
        Ok(inv)
    }

    fn inverse_block_triangular_inner(
        &self,
        sizes: &[usize],
        upper: bool,
        iv: &Interval,
        tol: &Tolerances,
    ) -> Result<MatrixFn, MatError> {
        let nb = sizes.len();
        let offsets = offsets_of(sizes);
        let blk = |m: &MatrixFn, i: usize, j: usize| m.block(offsets[i], offsets[j], sizes[i], sizes[j]);

        // Invert diagonal blocks first.
        let mut dinv: Vec<MatrixFn> = Vec::with_capacity(nb);
        for i in 0..nb {
            let d = blk(self, i, i);
            let di = if sizes[i] == 1 {
                // Scalar block: 1/d, rejecting a structural zero outright.
                let e = d.get(0, 0);
                if e.is_zero() {
                    return Err(MatError::Singular {
                        t: iv.midpoint(),
                        what: format!("diagonal entry {i} is structurally zero"),
                    });
                }
                MatrixFn::from_rows(vec![vec![&ScalarFn::one() / e]])
            } else {
                d.inverse(iv, tol)?
            };
            dinv.push(di);
        }

        let mut out = MatrixFn::zeros(self.rows, self.cols);
        for i in 0..nb {
            let di = &dinv[i];
            for r in 0..sizes[i] {
                for c in 0..sizes[i] {
                    out.set(offsets[i] + r, offsets[i] + c, di.get(r, c).clone());
                }
            }
        }
        // X_ij = -D_i^{-1} * sum_{i<k<=j} A_ik X_kj (upper; mirrored for lower),
        // filled in order of increasing band distance |j - i|.
        for dist in 1..nb {
            for a in 0..nb - dist {
                let (i, j) = if upper { (a, a + dist) } else { (a + dist, a) };
                let mut acc = MatrixFn::zeros(sizes[i], sizes[j]);
                let range: Vec<usize> = if upper {
                    ((i + 1)..=j).collect()
                } else {
                    (j..i).collect()
                };
                for k in range {
                    let aik = blk(self, i, k);
                    if aik.is_structural_zero() {
                        continue;
                    }
                    let xkj = out.block(offsets[k], offsets[j], sizes[k], sizes[j]);
                    if xkj.is_structural_zero() {
                        continue;
                    }
                    acc = acc.add(&aik.matmul(&xkj));
                }
                let xij = dinv[i].matmul(&acc).map(|e| -e);
                for r in 0..sizes[i] {
                    for c in 0..sizes[j] {
                        out.set(offsets[i] + r, offsets[j] + c, xij.get(r, c).clone());
                    }
                }
            }
        }
        Ok(out)
    }

    /// Adjugate inverse for very small orders: entries are cofactors over
    /// the shared symbolic determinant.
    fn inverse_adjugate(&self) -> Result<MatrixFn, MatError> {
        let n = self.rows;
        let det = self.det_cofactor();
        if det.is_zero() {
            return Err(MatError::Singular { t: f64::NAN, what: "determinant is structurally zero".into() });
        }
        Ok(Self::from_fn(n, n, |i, j| {
            // adj(A)_ij = (-1)^{i+j} * M_ji  (note the transpose)
            let minor = self.minor(j, i).det_cofactor();
            let signed = if (i + j) % 2 == 0 { minor } else { -&minor };
            &signed / &det
        }))
    }

    fn minor(&self, drop_row: usize, drop_col: usize) -> MatrixFn {
        Self::from_fn(self.rows - 1, self.cols - 1, |i, j| {
            let r = if i < drop_row { i } else { i + 1 };
            let c = if j < drop_col { j } else { j + 1 };
            self.get(r, c).clone()
        })
    }

    /// Cofactor-expansion determinant (small orders only); expands along the
    /// row with the most structural zeros.
    pub fn det_cofactor(&self) -> ScalarFn {
        assert!(self.is_square());
        let n = self.rows;
        match n {
            0 => ScalarFn::one(),
            1 => self.get(0, 0).clone(),
            _ => {
                let row = (0..n)
                    .max_by_key(|&i| (0..n).filter(|&j| self.get(i, j).is_zero()).count())
                    .unwrap();
                let mut acc = ScalarFn::zero();
                for j in 0..n {
                    let a = self.get(row, j);
                    if a.is_zero() {
                        continue;
                    }
                    let m = self.minor(row, j).det_cofactor();
                    let term = a * &m;
                    acc = if (row + j) % 2 == 0 { &acc + &term } else { &acc - &term };
                }
                acc
            }
        }
    }

    /// Symbolic Gauss-Jordan elimination on `[A | I]`, choosing each pivot
    /// by magnitude at the interval midpoint.
    fn inverse_gauss_jordan(&self, iv: &Interval, tol: &Tolerances) -> Result<MatrixFn, MatError> {
        let n = self.rows;
        let tmid = iv.midpoint();
        let mut a: Vec<Vec<ScalarFn>> =
            (0..n).map(|i| (0..n).map(|j| self.get(i, j).clone()).collect()).collect();
        let mut x: Vec<Vec<ScalarFn>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { ScalarFn::one() } else { ScalarFn::zero() })
                    .collect()
            })
            .collect();
        for col in 0..n {
            // Pivot: the remaining row whose entry is largest at the midpoint.
            let mut pivot = None;
            let mut pivot_mag = 0.0f64;
            for (r, row) in a.iter().enumerate().skip(col) {
                if row[col].is_zero() {
                    continue;
                }
                let v = row[col].eval(tmid).map_err(MatError::from)?.abs();
                if v > pivot_mag {
                    pivot_mag = v;
                    pivot = Some(r);
                }
            }
            let Some(p) = pivot else {
                return Err(MatError::Singular {
                    t: tmid,
                    what: format!("no usable pivot in column {col}"),
                });
            };
            if pivot_mag <= tol.zero_tol {
                return Err(MatError::Singular {
                    t: tmid,
                    what: format!("pivot in column {col} is {pivot_mag:.3e} at the midpoint"),
                });
            }
            a.swap(col, p);
            x.swap(col, p);
            let d = a[col][col].clone();
            for j in 0..n {
                a[col][j] = &a[col][j] / &d;
                x[col][j] = &x[col][j] / &d;
            }
            for r in 0..n {
                if r == col || a[r][col].is_zero() {
                    continue;
                }
                let f = a[r][col].clone();
                for j in 0..n {
                    let aj = &a[r][j] - &(&f * &a[col][j]);
                    a[r][j] = aj;
                    let xj = &x[r][j] - &(&f * &x[col][j]);
                    x[r][j] = xj;
                }
                a[r][col] = ScalarFn::zero();
            }
            let nodes: usize = x.iter().flatten().map(ScalarFn::node_count).sum();
            if nodes > tol.node_budget {
                return Err(MatError::Budget { nodes, budget: tol.node_budget });
            }
        }
        Ok(MatrixFn::from_rows(x))
    }

    pub fn add(&self, rhs: &MatrixFn) -> MatrixFn {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "sum dimension mismatch");
        Self::from_fn(self.rows, self.cols, |i, j| self.get(i, j) + rhs.get(i, j))
    }

    pub fn sub(&self, rhs: &MatrixFn) -> MatrixFn {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "difference dimension mismatch");
        Self::from_fn(self.rows, self.cols, |i, j| self.get(i, j) - rhs.get(i, j))
    }

    pub fn neg(&self) -> MatrixFn {
        self.map(|e| -e)
    }

    /// Entries rendered as expression strings (row-major), for reports.
    pub fn to_string_grid(&self) -> Vec<Vec<String>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j).to_string()).collect())
            .collect()
    }
}

impl fmt::Debug for MatrixFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "MatrixFn {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|j| self.get(i, j).to_string()).collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        write!(f, "]")
    }
}

pub(crate) fn offsets_of(sizes: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(sizes.len());
    let mut acc = 0;
    for &s in sizes {
        offsets.push(acc);
        acc += s;
    }
    offsets
}

/// Check `|A*X - I|` on the samples, scaled by the magnitude of `A`.
pub fn verify_inverse(
    a: &MatrixFn,
    x: &MatrixFn,
    ts: &[f64],
    tol: &Tolerances,
) -> Result<(), MatError> {
    let n = a.nrows();
    let mut scale = 1.0f64;
    let mut worst = (0.0f64, ts.first().copied().unwrap_or(0.0));
    for &t in ts {
        let av = a.eval(t)?;
        let xv = x.eval(t)?;
        scale = scale.max(av.iter().fold(0.0f64, |m, &v| m.max(v.abs())));
        let resid = av * xv - DMatrix::identity(n, n);
        let r = resid.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if r > worst.0 {
            worst = (r, t);
        }
    }
    let allowed = tol.verify_tol * scale.max(1.0);
    if worst.0 > allowed {
        return Err(MatError::InverseCheck { resid: worst.0, t: worst.1, tol: allowed });
    }
    Ok(())
}

/// Verify that `computed` agrees with `target` on the samples and return a
/// clone of `target` — the mechanism behind "assembled structurally":
/// whenever block algebra proves a stage matrix equals a clean pattern
/// (identity, elementary nilpotent, block diagonal of known pieces), the
/// computed symbolic form is checked numerically and then *replaced* by the
/// clean pattern, so downstream structural reasoning sees exact constants.
pub fn snap_to(
    computed: &MatrixFn,
    target: &MatrixFn,
    ts: &[f64],
    tol: f64,
) -> Result<MatrixFn, MatError> {
    assert_eq!(
        (computed.nrows(), computed.ncols()),
        (target.nrows(), target.ncols()),
        "snap_to shape mismatch"
    );
    let (worst, at) = computed.sub(target).max_abs_on(ts)?;
    if worst > tol {
        return Err(MatError::Structure(format!(
            "computed matrix deviates from its proven pattern by {worst:.3e} at t = {at} \
             (tolerance {tol:.3e})"
        )));
    }
    Ok(target.clone())
}

/// Smallest singular value (0 for an empty matrix).
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().singular_values().iter().fold(f64::INFINITY, |a, &s| a.min(s))
}

/// Numeric rank by singular values, relative threshold.
pub fn numeric_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().fold(0.0f64, |a, &s| a.max(s));
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

pub fn max_abs_dm(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn p(src: &str) -> ScalarFn {
        crate::expr::parse(src, &BTreeMap::new()).unwrap()
    }

    fn mat(grid: &[&[&str]]) -> MatrixFn {
        MatrixFn::from_rows(
            grid.iter().map(|row| row.iter().map(|s| p(s)).collect()).collect(),
        )
    }

    fn iv() -> Interval {
        Interval::new(0.5, 2.5)
    }

    fn tols() -> Tolerances {
        Tolerances::default()
    }

    fn assert_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) {
        assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
        let d = (a - b).iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(d <= tol, "matrices differ by {d} > {tol}:\n{a}\nvs\n{b}");
    }

    #[test]
    fn product_matches_numeric_product() {
        let a = mat(&[&["t", "1"], &["sin(t)", "t^2"]]);
        let b = mat(&[&["cos(t)", "0"], &["1", "t"]]);
        let ab = a.matmul(&b);
        for &t in &[0.7, 1.3, 2.2] {
            let want = a.eval(t).unwrap() * b.eval(t).unwrap();
            assert_close(&ab.eval(t).unwrap(), &want, 1e-13);
        }
    }

    #[test]
    fn derivative_satisfies_product_rule() {
        let a = mat(&[&["t", "sin(t)"], &["1", "exp(t)"]]);
        let b = mat(&[&["cos(t)", "t^2"], &["t", "1"]]);
        let lhs = a.matmul(&b).derivative();
        let rhs = a.derivative().matmul(&b).add(&a.matmul(&b.derivative()));
        for &t in &[0.6, 1.9] {
            assert_close(&lhs.eval(t).unwrap(), &rhs.eval(t).unwrap(), 1e-12);
        }
    }

    #[test]
    fn structural_zero_propagation_in_products() {
        let z = MatrixFn::zeros(2, 2);
        let a = mat(&[&["t", "sin(t)"], &["1", "exp(t)"]]);
        assert!(a.matmul(&z).is_structural_zero());
        assert!(z.matmul(&a).is_structural_zero());
        let id = MatrixFn::identity(2);
        let prod = a.matmul(&id);
        assert_eq!(prod.get(0, 1).to_string(), "sin(t)");
    }

    #[test]
    fn inverse_constant_matrix() {
        let a = mat(&[&["2", "1"], &["1", "1"]]);
        let inv = a.inverse(&iv(), &tols()).unwrap();
        assert!(inv.as_constant().is_some());
        let want = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 2.0]);
        assert_close(&inv.eval(1.0).unwrap(), &want, 1e-12);
    }

    #[test]
    fn inverse_triangular_is_exact_back_substitution() {
        let a = mat(&[&["1", "t", "sin(t)"], &["0", "2", "t^2"], &["0", "0", "1"]]);
        let inv = a.inverse(&iv(), &tols()).unwrap();
        // Back-substitution keeps triangularity.
        assert!(inv.get(1, 0).is_zero() && inv.get(2, 0).is_zero() && inv.get(2, 1).is_zero());
        for &t in &[0.8, 1.7] {
            let prod = a.eval(t).unwrap() * inv.eval(t).unwrap();
            assert_close(&prod, &DMatrix::identity(3, 3), 1e-12);
        }
    }

    #[test]
    fn inverse_orthonormal_is_transpose() {
        let a = mat(&[&["cos(t)", "-sin(t)"], &["sin(t)", "cos(t)"]]);
        let inv = a.inverse(&iv(), &tols()).unwrap();
        assert_eq!(inv.get(0, 1).to_string(), "sin(t)");
        assert_eq!(inv.get(1, 0).to_string(), "-sin(t)");
    }

    #[test]
    fn inverse_adjugate_small_dense() {
        let a = mat(&[&["t + 2", "1"], &["sin(t)", "t"]]);
        let inv = a.inverse(&iv(), &tols()).unwrap();
        for &t in &[0.6, 2.1] {
            let prod = a.eval(t).unwrap() * inv.eval(t).unwrap();
            assert_close(&prod, &DMatrix::identity(2, 2), 1e-10);
        }
    }

    #[test]
    fn inverse_gauss_jordan_larger_matrix() {
        // 5x5, diagonally dominant so pivoting at the midpoint is stable.
        let a = MatrixFn::from_fn(5, 5, |i, j| {
            if i == j {
                p("t + 6")
            } else if (i + 2 * j) % 3 == 0 {
                p("sin(t)")
            } else {
                ScalarFn::zero()
            }
        });
        let inv = a.inverse(&iv(), &tols()).unwrap();
        for &t in &[0.7, 1.8] {
            let prod = a.eval(t).unwrap() * inv.eval(t).unwrap();
            assert_close(&prod, &DMatrix::identity(5, 5), 1e-9);
        }
    }

    #[test]
    fn inverse_block_triangular_with_sizes() {
        // 2+1 block upper triangular.
        let a = mat(&[
            &["1", "t", "sin(t)"],
            &["-t", "1", "exp(t)"],
            &["0", "0", "2"],
        ]);
        let inv = a.inverse_block_triangular(&[2, 1], true, &iv(), &tols()).unwrap();
        for &t in &[0.9, 2.0] {
            let prod = a.eval(t).unwrap() * inv.eval(t).unwrap();
            assert_close(&prod, &DMatrix::identity(3, 3), 1e-10);
        }
        // Wrong pattern is rejected.
        let b = mat(&[&["1", "0", "0"], &["0", "1", "0"], &["t", "0", "1"]]);
        assert!(b.inverse_block_triangular(&[2, 1], true, &iv(), &tols()).is_err());
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = mat(&[&["1", "1"], &["1", "1"]]);
        assert!(a.inverse(&iv(), &tols()).is_err());
        let b = mat(&[&["t", "t"], &["t", "t"]]);
        assert!(b.inverse(&iv(), &tols()).is_err());
    }

    #[test]
    fn zero_sweep_clears_disguised_zeros() {
        // sin^2 + cos^2 - 1 is identically zero but not structurally.
        let a = mat(&[&["sin(t)^2 + cos(t)^2 - 1", "t"], &["0", "1"]]);
        assert!(!a.get(0, 0).is_zero());
        let ts = iv().samples(17);
        let swept = a.zero_sweep(&ts, 1e-12).unwrap();
        assert!(swept.get(0, 0).is_zero());
        assert_eq!(swept.get(0, 1).to_string(), "t");
    }

    #[test]
    fn block_assembly_round_trip() {
        let a = mat(&[&["t"]]);
        let b = mat(&[&["1", "2"]]);
        let c = mat(&[&["sin(t)"], &["0"]]);
        let d = MatrixFn::identity(2);
        let m = MatrixFn::from_blocks(&[vec![&a, &b], vec![&c, &d]]);
        assert_eq!((m.nrows(), m.ncols()), (3, 3));
        assert_eq!(m.get(0, 0).to_string(), "t");
        assert_eq!(m.get(1, 0).to_string(), "sin(t)");
        assert_eq!(m.get(2, 2).to_string(), "1");
        assert_eq!(m.block(0, 1, 1, 2).get(0, 1).to_string(), "2");
    }

    #[test]
    fn numeric_rank_thresholds() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1e-3, 0.0, 0.0, 0.0, 1e-15]);
        assert_eq!(numeric_rank(&m, 1e-9), 2);
        assert_eq!(numeric_rank(&m, 1e-18), 3);
        assert_eq!(numeric_rank(&DMatrix::zeros(3, 3), 1e-9), 0);
    }

    #[test]
    fn empty_dimensions_are_legal() {
        let a = MatrixFn::zeros(0, 3);
        let b = MatrixFn::zeros(3, 2);
        let ab = a.matmul(&b);
        assert_eq!((ab.nrows(), ab.ncols()), (0, 2));
        let e = MatrixFn::zeros(0, 0);
        assert!(e.inverse(&iv(), &tols()).is_ok());
    }
}
