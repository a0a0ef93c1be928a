//! The equivalence action on DAE pairs and its bookkeeping.
//!
//! Two pairs `{E, F}` and `{E~, F~}` are equivalent when there are smooth
//! pointwise-nonsingular `L(t)`, `K(t)` with
//!
//! ```text
//! E~ = L E K,       F~ = L F K + L E K'.
//! ```
//!
//! The derivative term makes this a genuine (right) group action on pairs:
//! composing the transformation `(L1, K1)` with a subsequent `(L2, K2)`
//! yields `(L2 L1, K1 K2)`. A [`Transform`] stores both factors *and* their
//! inverses — every construction site in this crate knows the inverse in
//! closed form (unit triangular, orthogonal, block triangular, ...), and
//! carrying it along is what lets solutions be mapped in both directions
//! without ever inverting numerically.

use serde::Serialize;

use crate::config::{Interval, Tolerances};
use crate::matfn::{max_abs_dm, MatError, MatrixFn};

/// A pair `{E, F}` of square matrix functions on a working interval.
#[derive(Clone, Debug)]
pub struct DaePair {
    pub e: MatrixFn,
    pub f: MatrixFn,
}

impl DaePair {
    pub fn new(e: MatrixFn, f: MatrixFn) -> Self {
        assert!(e.is_square() && f.is_square(), "DAE pair matrices must be square");
        assert_eq!(e.nrows(), f.nrows(), "E and F must have the same order");
        DaePair { e, f }
    }

    pub fn m(&self) -> usize {
        self.e.nrows()
    }
}

/// An equivalence transformation `(L, K)` with both inverses attached.
#[derive(Clone, Debug)]
pub struct Transform {
    l: MatrixFn,
    l_inv: MatrixFn,
    k: MatrixFn,
    k_inv: MatrixFn,
}

impl Transform {
    /// The inverses are trusted structurally here and checked numerically in
    /// [`verify_equivalent`]; construction sites know them in closed form.
    pub fn new(l: MatrixFn, l_inv: MatrixFn, k: MatrixFn, k_inv: MatrixFn) -> Self {
        let m = l.nrows();
        for (name, mat) in [("L", &l), ("L^{-1}", &l_inv), ("K", &k), ("K^{-1}", &k_inv)] {
            assert!(
                mat.is_square() && mat.nrows() == m,
                "{name} must be {m}x{m}, got {}x{}",
                mat.nrows(),
                mat.ncols()
            );
        }
        Transform { l, l_inv, k, k_inv }
    }

    pub fn identity(m: usize) -> Self {
        let i = MatrixFn::identity(m);
        Transform { l: i.clone(), l_inv: i.clone(), k: i.clone(), k_inv: i }
    }

    pub fn m(&self) -> usize {
        self.l.nrows()
    }

    pub fn l(&self) -> &MatrixFn {
        &self.l
    }

    pub fn l_inv(&self) -> &MatrixFn {
        &self.l_inv
    }

    pub fn k(&self) -> &MatrixFn {
        &self.k
    }

    pub fn k_inv(&self) -> &MatrixFn {
        &self.k_inv
    }

    /// The transformation "`self` first, `after` second":
    /// `L = L_after L_self`, `K = K_self K_after`.
    pub fn then(&self, after: &Transform) -> Transform {
        Transform {
            l: after.l.matmul(&self.l),
            l_inv: self.l_inv.matmul(&after.l_inv),
            k: self.k.matmul(&after.k),
            k_inv: after.k_inv.matmul(&self.k_inv),
        }
    }

    /// Apply to a pair: `{L E K, L F K + L E K'}`.
    pub fn apply(&self, pair: &DaePair) -> DaePair {
        let lek = self.l.matmul(&pair.e).matmul(&self.k);
        let lfk = self.l.matmul(&pair.f).matmul(&self.k);
        let le_kp = self.l.matmul(&pair.e).matmul(&self.k.derivative());
        DaePair { e: lek, f: lfk.add(&le_kp) }
    }

    /// Transform a right-hand side: `q~ = L q` (column vector `m x 1`).
    pub fn apply_rhs(&self, q: &MatrixFn) -> MatrixFn {
        assert_eq!(q.ncols(), 1, "right-hand side must be a column");
        self.l.matmul(q)
    }

    /// Map a transformed solution back: `x = K x~`.
    pub fn solution_from_transformed(&self, x_t: &MatrixFn) -> MatrixFn {
        self.k.matmul(x_t)
    }

    /// Map an original solution forward: `x~ = K^{-1} x`.
    pub fn solution_to_transformed(&self, x: &MatrixFn) -> MatrixFn {
        self.k_inv.matmul(x)
    }
}

/// Unit block upper triangular matrix `[[I_d, X], [0, I_a]]` (inverse: flip
/// the sign of `X`).
pub fn unit_upper(d: usize, a: usize, x: &MatrixFn) -> MatrixFn {
    assert_eq!((x.nrows(), x.ncols()), (d, a), "coupling block must be {d}x{a}");
    let mut m = MatrixFn::identity(d + a);
    for i in 0..d {
        for j in 0..a {
            m.set(i, d + j, x.get(i, j).clone());
        }
    }
    m
}

/// Unit block lower triangular matrix `[[I_d, 0], [Y, I_a]]` (inverse: flip
/// the sign of `Y`).
pub fn unit_lower(d: usize, a: usize, y: &MatrixFn) -> MatrixFn {
    assert_eq!((y.nrows(), y.ncols()), (a, d), "coupling block must be {a}x{d}");
    let mut m = MatrixFn::identity(d + a);
    for i in 0..a {
        for j in 0..d {
            m.set(d + i, j, y.get(i, j).clone());
        }
    }
    m
}

/// Numeric verification report for one equivalence step.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    /// `max |L E K - E~|` over the samples.
    pub e_residual: f64,
    /// `max |L F K + L E K' - F~|` over the samples.
    pub f_residual: f64,
    /// `max |L L^{-1} - I|` over the samples.
    pub l_inverse_residual: f64,
    /// `max |K K^{-1} - I|` over the samples.
    pub k_inverse_residual: f64,
    /// Tolerance the residuals were held to.
    pub allowed: f64,
    pub ok: bool,
}

/// Check numerically that `transform` maps `original` onto `result`.
///
/// All products are evaluated pointwise on the sample set — the symbolic
/// expressions are only *evaluated* here, never multiplied out, so the check
/// is immune to expression swell. The tolerance scales with the magnitudes
/// of the factors involved.
pub fn verify_equivalent(
    original: &DaePair,
    result: &DaePair,
    transform: &Transform,
    iv: &Interval,
    tol: &Tolerances,
) -> Result<VerifyReport, MatError> {
    let m = original.m();
    let ts = iv.samples(tol.n_verify);
    let kp = transform.k.derivative();
    let ident = nalgebra::DMatrix::<f64>::identity(m, m);
    let mut rep = VerifyReport {
        e_residual: 0.0,
        f_residual: 0.0,
        l_inverse_residual: 0.0,
        k_inverse_residual: 0.0,
        allowed: 0.0,
        ok: false,
    };
    let mut scale = 1.0f64;
    for &t in &ts {
        let l = transform.l.eval(t)?;
        let li = transform.l_inv.eval(t)?;
        let k = transform.k.eval(t)?;
        let ki = transform.k_inv.eval(t)?;
        let kd = kp.eval(t)?;
        let e0 = original.e.eval(t)?;
        let f0 = original.f.eval(t)?;
        let e1 = result.e.eval(t)?;
        let f1 = result.f.eval(t)?;
        for mat in [&l, &k, &e0, &f0, &kd] {
            scale = scale.max(max_abs_dm(mat));
        }
        let le = &l * &e0;
        rep.e_residual = rep.e_residual.max(max_abs_dm(&(&le * &k - e1)));
        rep.f_residual = rep.f_residual.max(max_abs_dm(&(&l * &f0 * &k + &le * &kd - f1)));
        rep.l_inverse_residual = rep.l_inverse_residual.max(max_abs_dm(&(&l * &li - &ident)));
        rep.k_inverse_residual = rep.k_inverse_residual.max(max_abs_dm(&(&k * &ki - &ident)));
    }
    rep.allowed = tol.verify_tol * scale * scale;
    rep.ok = rep.e_residual <= rep.allowed
        && rep.f_residual <= rep.allowed
        && rep.l_inverse_residual <= rep.allowed
        && rep.k_inverse_residual <= rep.allowed;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;
    use crate::expr::ScalarFn;

    fn p(src: &str) -> ScalarFn {
        crate::expr::parse(src, &BTreeMap::new()).unwrap()
    }

    fn iv() -> Interval {
        Interval::new(0.5, 2.0)
    }

    fn sample_pair() -> DaePair {
        DaePair::new(
            MatrixFn::from_rows(vec![
                vec![p("1"), p("t")],
                vec![p("0"), p("0")],
            ]),
            MatrixFn::from_rows(vec![
                vec![p("sin(t)"), p("1")],
                vec![p("1"), p("t + 2")],
            ]),
        )
    }

    fn sample_transform() -> Transform {
        // L unit lower, K unit upper: inverses in closed form.
        let y = MatrixFn::from_rows(vec![vec![p("t^2")]]);
        let x = MatrixFn::from_rows(vec![vec![p("sin(t)")]]);
        Transform::new(
            unit_lower(1, 1, &y),
            unit_lower(1, 1, &y.neg()),
            unit_upper(1, 1, &x),
            unit_upper(1, 1, &x.neg()),
        )
    }

    #[test]
    fn unit_triangular_inverses() {
        let x = MatrixFn::from_rows(vec![vec![p("t"), p("sin(t)")]]);
        let u = unit_upper(1, 2, &x);
        let ui = unit_upper(1, 2, &x.neg());
        assert!(u.matmul(&ui).is_structural_identity());
        let y = MatrixFn::from_rows(vec![vec![p("exp(t)")], vec![p("2")]]);
        let l = unit_lower(1, 2, &y);
        let li = unit_lower(1, 2, &y.neg());
        assert!(l.matmul(&li).is_structural_identity());
    }

    #[test]
    fn apply_respects_the_action_formula() {
        let pair = sample_pair();
        let tr = sample_transform();
        let out = tr.apply(&pair);
        let rep = verify_equivalent(&pair, &out, &tr, &iv(), &Tolerances::default()).unwrap();
        assert!(rep.ok, "{rep:?}");
    }

    #[test]
    fn composition_matches_sequential_application() {
        let pair = sample_pair();
        let t1 = sample_transform();
        // A second, different transformation.
        let x2 = MatrixFn::from_rows(vec![vec![p("t + 1")]]);
        let t2 = Transform::new(
            unit_upper(1, 1, &x2),
            unit_upper(1, 1, &x2.neg()),
            unit_lower(1, 1, &x2),
            unit_lower(1, 1, &x2.neg()),
        );
        let seq = t2.apply(&t1.apply(&pair));
        let combined = t1.then(&t2);
        let direct = combined.apply(&pair);
        // The derivative coupling term must compose correctly:
        // (K1 K2)' = K1' K2 + K1 K2'.
        let ts = iv().samples(9);
        for &t in &ts {
            let de = (seq.e.eval(t).unwrap() - direct.e.eval(t).unwrap()).abs().max();
            let df = (seq.f.eval(t).unwrap() - direct.f.eval(t).unwrap()).abs().max();
            assert!(de < 1e-11 && df < 1e-11, "composition mismatch at t = {t}: {de}, {df}");
        }
        let rep = verify_equivalent(&pair, &direct, &combined, &iv(), &Tolerances::default()).unwrap();
        assert!(rep.ok, "{rep:?}");
    }

    #[test]
    fn identity_transform_is_neutral() {
        let pair = sample_pair();
        let id = Transform::identity(2);
        let out = id.apply(&pair);
        let ts = iv().samples(7);
        assert!(out.e.sub(&pair.e).is_zero_on(&ts, 1e-14).unwrap());
        assert!(out.f.sub(&pair.f).is_zero_on(&ts, 1e-14).unwrap());
    }

    #[test]
    fn verification_flags_a_corrupted_result() {
        let pair = sample_pair();
        let tr = sample_transform();
        let mut out = tr.apply(&pair);
        let broken = &out.f.get(0, 0) + &p("1/100");
        out.f.set(0, 0, broken);
        let rep = verify_equivalent(&pair, &out, &tr, &iv(), &Tolerances::default()).unwrap();
        assert!(!rep.ok);
        assert!(rep.f_residual > 1e-3);
        assert!(rep.e_residual < 1e-12);
    }

    #[test]
    fn rhs_and_solution_maps_are_mutually_consistent() {
        let tr = sample_transform();
        let q = MatrixFn::from_rows(vec![vec![p("sin(t)")], vec![p("1")]]);
        let lq = tr.apply_rhs(&q);
        // L^{-1} (L q) = q.
        let back = tr.l_inv().matmul(&lq);
        assert!(back.sub(&q).is_zero_on(&iv().samples(7), 1e-12).unwrap());
        let x = MatrixFn::from_rows(vec![vec![p("t")], vec![p("exp(t)")]]);
        let xt = tr.solution_to_transformed(&x);
        let x2 = tr.solution_from_transformed(&xt);
        assert!(x2.sub(&x).is_zero_on(&iv().samples(7), 1e-12).unwrap());
    }
}
