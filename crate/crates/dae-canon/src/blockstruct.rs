//! Block partitions, elementary nilpotent matrices, and the canonical
//! characteristic numbers derived from them.
//!
//! The algebraic part of a DAE in canonical form carries a nilpotent matrix
//! that is block upper triangular with respect to a partition
//! `l_1, ..., l_mu`. Two orderings occur: *decreasing* partitions
//! (`l_1 >= ... >= l_mu`, the "column" flavour, where the elementary
//! superdiagonal blocks are identity-topped) and *increasing* partitions
//! (`l_1 <= ... <= l_mu`, the "row" flavour, identity-led). Everything in
//! this module is parametrised by that choice.

use serde::{Deserialize, Serialize};

use crate::config::{Interval, Tolerances};
use crate::expr::ScalarFn;
use crate::matfn::{offsets_of, MatError, MatrixFn};

/// Which way the block sizes of a nilpotent partition are ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockOrdering {
    /// `l_1 >= l_2 >= ... >= l_mu`; elementary superdiagonal blocks are
    /// `[I; 0]` (identity on top).
    Decreasing,
    /// `l_1 <= l_2 <= ... <= l_mu`; elementary superdiagonal blocks are
    /// `[I 0]` (identity in front).
    Increasing,
}

/// A validated nilpotent block partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    sizes: Vec<usize>,
    ordering: BlockOrdering,
}

impl BlockSpec {
    /// An empty partition (`a = 0`): the DAE has no algebraic part.
    pub fn empty(ordering: BlockOrdering) -> Self {
        BlockSpec { sizes: Vec::new(), ordering }
    }

    pub fn new(sizes: Vec<usize>, ordering: BlockOrdering) -> Result<Self, String> {
        if sizes.iter().any(|&s| s == 0) {
            return Err("block sizes must be positive".into());
        }
        let ok = match ordering {
            BlockOrdering::Decreasing => sizes.windows(2).all(|w| w[0] >= w[1]),
            BlockOrdering::Increasing => sizes.windows(2).all(|w| w[0] <= w[1]),
        };
        if !ok {
            return Err(format!(
                "block sizes {sizes:?} are not {} as required",
                match ordering {
                    BlockOrdering::Decreasing => "non-increasing",
                    BlockOrdering::Increasing => "non-decreasing",
                }
            ));
        }
        Ok(BlockSpec { sizes, ordering })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn ordering(&self) -> BlockOrdering {
        self.ordering
    }

    /// Number of blocks; this is the nilpotency index `mu` of the
    /// elementary matrix (0 for an empty partition).
    pub fn mu(&self) -> usize {
        self.sizes.len()
    }

    /// Dimension of the algebraic part, `a = l_1 + ... + l_mu`.
    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn offsets(&self) -> Vec<usize> {
        offsets_of(&self.sizes)
    }

    /// The elementary nilpotent matrix for this partition: zero everywhere
    /// except the superdiagonal blocks, which are `[I; 0]` (decreasing) or
    /// `[I 0]` (increasing).
    pub fn elementary_nilpotent(&self) -> MatrixFn {
        let a = self.total();
        let mut n = MatrixFn::zeros(a, a);
        let off = self.offsets();
        for i in 0..self.mu().saturating_sub(1) {
            let (rows, cols) = (self.sizes[i], self.sizes[i + 1]);
            let ident = rows.min(cols);
            for k in 0..ident {
                n.set(off[i] + k, off[i + 1] + k, ScalarFn::one());
            }
            debug_assert!(match self.ordering {
                BlockOrdering::Decreasing => cols <= rows,
                BlockOrdering::Increasing => rows <= cols,
            });
        }
        n
    }

    /// `theta_i = rank N^{i+1} - rank N^{i+2}` for the elementary matrix:
    /// the sequence `l_2, ..., l_mu` (decreasing) or its mirror
    /// `l_{mu-1}, ..., l_1` (increasing); empty when `mu <= 1`.
    pub fn thetas(&self) -> Vec<usize> {
        match self.ordering {
            BlockOrdering::Decreasing => self.sizes.iter().skip(1).copied().collect(),
            BlockOrdering::Increasing => {
                self.sizes.iter().rev().skip(1).copied().collect()
            }
        }
    }

    /// `kappa_0 = m - rank E`: the size of the block the elementary matrix
    /// loses at its first power (`l_1` decreasing, `l_mu` increasing).
    pub fn kappa0(&self) -> usize {
        match self.ordering {
            BlockOrdering::Decreasing => self.sizes.first().copied().unwrap_or(0),
            BlockOrdering::Increasing => self.sizes.last().copied().unwrap_or(0),
        }
    }
}

/// The invariants of a regular DAE under equivalence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Characteristics {
    /// System size.
    pub m: usize,
    /// `rank E` (constant on the interval for a regular problem).
    pub r: usize,
    /// Dimension of the dynamical (ODE) part.
    pub d: usize,
    /// Dimension of the algebraic part.
    pub a: usize,
    /// Nilpotency index of the algebraic part (0 when `a = 0`).
    pub mu: usize,
    /// `m - r`.
    pub kappa0: usize,
    /// `theta_i = rank N^{i+1} - rank N^{i+2}`, `i = 0, ..., mu - 2`.
    pub thetas: Vec<usize>,
    /// The block partition sizes `l_1, ..., l_mu`.
    pub block_sizes: Vec<usize>,
}

impl Characteristics {
    /// Characteristics of `{diag(I_d, N), diag(Omega, I_a)}` with the
    /// elementary nilpotent `N` of the given partition.
    pub fn from_block_spec(d: usize, spec: &BlockSpec) -> Self {
        let a = spec.total();
        let m = d + a;
        let kappa0 = spec.kappa0();
        let thetas = spec.thetas();
        let r = m - kappa0;
        debug_assert_eq!(d, r - thetas.iter().sum::<usize>());
        Characteristics {
            m,
            r,
            d,
            a,
            mu: spec.mu(),
            kappa0,
            thetas,
            block_sizes: spec.sizes().to_vec(),
        }
    }

    /// Characteristics from a measured rank sequence of a nilpotent matrix:
    /// `ranks[k]` must be `rank N^{k+1}` and the sequence must reach 0.
    /// `block_sizes` is left empty (rank data does not fix an ordering).
    pub fn from_nilpotent_ranks(m: usize, d: usize, ranks: &[usize]) -> Result<Self, String> {
        let a = m - d;
        if a == 0 {
            return Ok(Characteristics {
                m,
                r: m,
                d,
                a,
                mu: 0,
                kappa0: 0,
                thetas: Vec::new(),
                block_sizes: Vec::new(),
            });
        }
        let mu = match ranks.iter().position(|&r| r == 0) {
            Some(k) => k + 1,
            None => return Err(format!("rank sequence {ranks:?} never reaches zero")),
        };
        let rank_n = ranks[0];
        let r = d + rank_n;
        let mut thetas = Vec::new();
        for i in 0..mu.saturating_sub(1) {
            let r1 = ranks[i]; // rank N^{i+1}
            let r2 = ranks.get(i + 1).copied().unwrap_or(0); // rank N^{i+2}
            if r2 > r1 {
                return Err(format!("rank sequence {ranks:?} is not non-increasing"));
            }
            thetas.push(r1 - r2);
        }
        Ok(Characteristics { m, r, d, a, mu, kappa0: m - r, thetas, block_sizes: Vec::new() })
    }

    /// Equality on the invariants themselves (block sizes excluded, since a
    /// rank-based derivation does not produce them).
    pub fn same_invariants(&self, other: &Characteristics) -> bool {
        self.m == other.m
            && self.r == other.r
            && self.d == other.d
            && self.a == other.a
            && self.mu == other.mu
            && self.kappa0 == other.kappa0
            && self.thetas == other.thetas
    }
}

/// Structural test: zero below the block diagonal.
pub fn is_block_upper_triangular(m: &MatrixFn, sizes: &[usize]) -> bool {
    let n: usize = sizes.iter().sum();
    if m.nrows() != n || m.ncols() != n {
        return false;
    }
    let off = offsets_of(sizes);
    for bi in 0..sizes.len() {
        for bj in 0..bi {
            if !m.block(off[bi], off[bj], sizes[bi], sizes[bj]).is_structural_zero() {
                return false;
            }
        }
    }
    true
}

/// Structural test: zero on and below the block diagonal.
pub fn is_strictly_block_upper_triangular(m: &MatrixFn, sizes: &[usize]) -> bool {
    let n: usize = sizes.iter().sum();
    if m.nrows() != n || m.ncols() != n {
        return false;
    }
    let off = offsets_of(sizes);
    for bi in 0..sizes.len() {
        for bj in 0..=bi {
            if !m.block(off[bi], off[bj], sizes[bi], sizes[bj]).is_structural_zero() {
                return false;
            }
        }
    }
    true
}

/// Structural test: nonzero entries confined to the blocks `(i, i+1)`.
pub fn is_superdiagonal_only(m: &MatrixFn, sizes: &[usize]) -> bool {
    let n: usize = sizes.iter().sum();
    if m.nrows() != n || m.ncols() != n {
        return false;
    }
    let off = offsets_of(sizes);
    for bi in 0..sizes.len() {
        for bj in 0..sizes.len() {
            if bj == bi + 1 {
                continue;
            }
            if !m.block(off[bi], off[bj], sizes[bi], sizes[bj]).is_structural_zero() {
                return false;
            }
        }
    }
    true
}

/// Reduction factor `R` normalising a strictly block upper triangular `N`
/// to the elementary nilpotent `N^E` of the same partition:
///
/// * decreasing ordering: `R = N (N^E)^T + (I - N^E (N^E)^T)`, block upper
///   triangular with `R^{-1} N = N^E`;
/// * increasing ordering: `R = (N^E)^T N + (I - (N^E)^T N^E)`, block upper
///   triangular with `N R^{-1} = N^E`.
///
/// The identities hold for any strictly block upper triangular `N`; what can
/// fail is the *invertibility* of `R`, which requires the leading square
/// part of each superdiagonal block of `N` to be nonsingular on the
/// interval. Returns `(R, R^{-1})`, verified numerically.
pub fn rc_factor(
    n: &MatrixFn,
    spec: &BlockSpec,
    iv: &Interval,
    tol: &Tolerances,
) -> Result<(MatrixFn, MatrixFn), MatError> {
    let sizes = spec.sizes();
    if !is_strictly_block_upper_triangular(n, sizes) {
        return Err(MatError::Structure(
            "nilpotent part is not strictly block upper triangular for the given partition".into(),
        ));
    }
    let ne = spec.elementary_nilpotent();
    let net = ne.transpose();
    let ident = MatrixFn::identity(spec.total());
    let r = match spec.ordering() {
        BlockOrdering::Decreasing => n.matmul(&net).add(&ident.sub(&ne.matmul(&net))),
        BlockOrdering::Increasing => net.matmul(n).add(&ident.sub(&net.matmul(&ne))),
    };
    let r_inv = r.inverse_block_triangular(sizes, true, iv, tol)?;
    // The algebra guarantees these identities; check them anyway since the
    // inverse itself is only sample-verified.
    let resid = match spec.ordering() {
        BlockOrdering::Decreasing => r_inv.matmul(n).sub(&ne),
        BlockOrdering::Increasing => n.matmul(&r_inv).sub(&ne),
    };
    let ts = iv.samples(tol.n_check);
    let (worst, at) = resid.max_abs_on(&ts)?;
    if worst > tol.verify_tol * 10.0 {
        return Err(MatError::InverseCheck { resid: worst, t: at, tol: tol.verify_tol * 10.0 });
    }
    Ok((r, r_inv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn p(src: &str) -> ScalarFn {
        crate::expr::parse(src, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn block_spec_validation() {
        assert!(BlockSpec::new(vec![2, 2, 1], BlockOrdering::Decreasing).is_ok());
        assert!(BlockSpec::new(vec![1, 2], BlockOrdering::Decreasing).is_err());
        assert!(BlockSpec::new(vec![1, 2], BlockOrdering::Increasing).is_ok());
        assert!(BlockSpec::new(vec![2, 0], BlockOrdering::Decreasing).is_err());
        assert_eq!(BlockSpec::empty(BlockOrdering::Increasing).total(), 0);
    }

    #[test]
    fn elementary_nilpotent_decreasing_is_identity_topped() {
        let spec = BlockSpec::new(vec![2, 1], BlockOrdering::Decreasing).unwrap();
        let n = spec.elementary_nilpotent();
        // Superdiagonal block is [1; 0]: identity on top.
        assert_eq!(n.get(0, 2).as_const(), Some(1.0));
        assert!(n.get(1, 2).is_zero());
        // Nilpotency index two: N^2 = 0.
        assert!(n.matmul(&n).is_structural_zero());
        assert!(!n.is_structural_zero());
    }

    #[test]
    fn elementary_nilpotent_increasing_is_identity_led() {
        let spec = BlockSpec::new(vec![1, 2], BlockOrdering::Increasing).unwrap();
        let n = spec.elementary_nilpotent();
        // Superdiagonal block is [1 0]: identity in front.
        assert_eq!(n.get(0, 1).as_const(), Some(1.0));
        assert!(n.get(0, 2).is_zero());
        assert!(n.matmul(&n).is_structural_zero());
    }

    #[test]
    fn elementary_nilpotent_has_exact_index_mu() {
        for (sizes, ordering) in [
            (vec![3, 2, 2, 1], BlockOrdering::Decreasing),
            (vec![1, 1, 3], BlockOrdering::Increasing),
        ] {
            let spec = BlockSpec::new(sizes, ordering).unwrap();
            let n = spec.elementary_nilpotent();
            let mut power = MatrixFn::identity(spec.total());
            for _ in 0..spec.mu() - 1 {
                power = power.matmul(&n);
                assert!(!power.is_structural_zero());
            }
            assert!(power.matmul(&n).is_structural_zero());
        }
    }

    #[test]
    fn thetas_and_kappa0_both_orderings() {
        let dec = BlockSpec::new(vec![3, 2, 1], BlockOrdering::Decreasing).unwrap();
        assert_eq!(dec.thetas(), vec![2, 1]);
        assert_eq!(dec.kappa0(), 3);
        let inc = BlockSpec::new(vec![1, 2, 3], BlockOrdering::Increasing).unwrap();
        assert_eq!(inc.thetas(), vec![2, 1]);
        assert_eq!(inc.kappa0(), 3);
    }

    #[test]
    fn thetas_match_measured_rank_drops() {
        use crate::matfn::numeric_rank;
        for (sizes, ordering) in [
            (vec![3, 3, 1], BlockOrdering::Decreasing),
            (vec![2, 2, 3], BlockOrdering::Increasing),
        ] {
            let spec = BlockSpec::new(sizes, ordering).unwrap();
            let n = spec.elementary_nilpotent().eval(0.0).unwrap();
            let mut ranks = Vec::new();
            let mut power = n.clone();
            loop {
                let r = numeric_rank(&power, 1e-9);
                ranks.push(r);
                if r == 0 {
                    break;
                }
                power = &power * &n;
            }
            assert_eq!(ranks.len(), spec.mu());
            let want: Vec<usize> =
                (0..spec.mu() - 1).map(|i| ranks[i] - ranks.get(i + 1).copied().unwrap_or(0)).collect();
            assert_eq!(spec.thetas(), want);
            let d = 2;
            let ch = Characteristics::from_block_spec(d, &spec);
            let ch2 = Characteristics::from_nilpotent_ranks(d + spec.total(), d, &ranks).unwrap();
            assert!(ch.same_invariants(&ch2), "{ch:?} vs {ch2:?}");
        }
    }

    #[test]
    fn characteristics_consistency() {
        let spec = BlockSpec::new(vec![2, 2, 1], BlockOrdering::Decreasing).unwrap();
        let ch = Characteristics::from_block_spec(3, &spec);
        assert_eq!(ch.m, 8);
        assert_eq!(ch.a, 5);
        assert_eq!(ch.kappa0, 2);
        assert_eq!(ch.r, 6);
        assert_eq!(ch.mu, 3);
        assert_eq!(ch.thetas, vec![2, 1]);
        assert_eq!(ch.d, ch.r - ch.thetas.iter().sum::<usize>());
    }

    #[test]
    fn triangularity_predicates() {
        let sizes = [2, 1];
        let but = MatrixFn::from_rows(vec![
            vec![p("1"), p("t"), p("sin(t)")],
            vec![p("2"), p("1"), p("0")],
            vec![p("0"), p("0"), p("1")],
        ]);
        assert!(is_block_upper_triangular(&but, &sizes));
        assert!(!is_strictly_block_upper_triangular(&but, &sizes));
        let sut = MatrixFn::from_rows(vec![
            vec![p("0"), p("0"), p("sin(t)")],
            vec![p("0"), p("0"), p("t")],
            vec![p("0"), p("0"), p("0")],
        ]);
        assert!(is_strictly_block_upper_triangular(&sut, &sizes));
        assert!(is_superdiagonal_only(&sut, &sizes));
        assert!(!is_block_upper_triangular(&but, &[1, 1, 1]));
    }

    #[test]
    fn rc_factor_decreasing_normalises_to_elementary() {
        // Partition 2, 1 with a nonconstant superdiagonal block [s; 0].
        let spec = BlockSpec::new(vec![2, 1], BlockOrdering::Decreasing).unwrap();
        let n = MatrixFn::from_rows(vec![
            vec![p("0"), p("0"), p("t^2 + 1")],
            vec![p("0"), p("0"), p("0")],
            vec![p("0"), p("0"), p("0")],
        ]);
        let iv = Interval::new(0.0, 2.0);
        let tol = Tolerances::default();
        let (r, r_inv) = rc_factor(&n, &spec, &iv, &tol).unwrap();
        let ne = spec.elementary_nilpotent();
        let resid = r_inv.matmul(&n).sub(&ne);
        assert!(resid.is_zero_on(&iv.samples(11), 1e-10).unwrap());
        // R itself should reproduce N from the elementary matrix.
        let back = r.matmul(&ne).sub(&n);
        assert!(back.is_zero_on(&iv.samples(11), 1e-10).unwrap());
    }

    #[test]
    fn rc_factor_increasing_normalises_to_elementary() {
        let spec = BlockSpec::new(vec![1, 2], BlockOrdering::Increasing).unwrap();
        // N_{12} = [s t-pattern]: leading 1x1 part s must be invertible.
        let n = MatrixFn::from_rows(vec![
            vec![p("0"), p("exp(t)"), p("t")],
            vec![p("0"), p("0"), p("0")],
            vec![p("0"), p("0"), p("0")],
        ]);
        let iv = Interval::new(0.0, 2.0);
        let tol = Tolerances::default();
        let (r, r_inv) = rc_factor(&n, &spec, &iv, &tol).unwrap();
        let ne = spec.elementary_nilpotent();
        let resid = n.matmul(&r_inv).sub(&ne);
        assert!(resid.is_zero_on(&iv.samples(11), 1e-10).unwrap());
        let back = ne.matmul(&r).sub(&n);
        assert!(back.is_zero_on(&iv.samples(11), 1e-10).unwrap());
    }

    #[test]
    fn rc_factor_rejects_singular_leading_part() {
        let spec = BlockSpec::new(vec![2, 1], BlockOrdering::Decreasing).unwrap();
        // Superdiagonal block [0; 1]: leading square part is zero.
        let n = MatrixFn::from_rows(vec![
            vec![p("0"), p("0"), p("0")],
            vec![p("0"), p("0"), p("1")],
            vec![p("0"), p("0"), p("0")],
        ]);
        let iv = Interval::new(0.0, 2.0);
        assert!(rc_factor(&n, &spec, &iv, &Tolerances::default()).is_err());
    }
}
