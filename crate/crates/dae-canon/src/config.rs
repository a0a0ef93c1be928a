//! Tolerances, sample grids, and the working interval.
//!
//! Every check that cannot be decided on the expression tree itself (rank,
//! pointwise nonsingularity, identical vanishing of an entry) is decided
//! numerically on a deterministic, well-spread set of sample points inside
//! the working interval. Determinism keeps runs reproducible; the
//! golden-ratio sequence avoids accidental alignment with the zeros of
//! trigonometric coefficients.

use serde::{Deserialize, Serialize};

/// Open interval on which a DAE pair is considered, together with isolated
/// points that sampling must avoid (poles of coefficient functions, zeros of
/// denominators introduced by a user-supplied transformation, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    /// Isolated times to keep sample points away from.
    #[serde(default)]
    pub avoid: Vec<f64>,
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(
            lo.is_finite() && hi.is_finite() && lo < hi,
            "interval must be finite and nonempty, got ({lo}, {hi})"
        );
        Interval { lo, hi, avoid: Vec::new() }
    }

    pub fn with_avoid(lo: f64, hi: f64, avoid: Vec<f64>) -> Self {
        let mut iv = Interval::new(lo, hi);
        iv.avoid = avoid;
        iv
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, t: f64) -> bool {
        t > self.lo && t < self.hi
    }

    /// `n` deterministic, well-spread points in the interior.
    ///
    /// Low-discrepancy golden-ratio sequence, inset 2% from each endpoint,
    /// nudged off any `avoid` point. The same `n` always produces the same
    /// points.
    pub fn samples(&self, n: usize) -> Vec<f64> {
        let margin = 0.02 * self.len();
        let lo = self.lo + margin;
        let span = self.len() - 2.0 * margin;
        let guard = 1e-3 * self.len();
        let mut out = Vec::with_capacity(n);
        let mut u = 0.5 * GOLDEN;
        for _ in 0..n {
            u += GOLDEN;
            u -= u.floor();
            let mut t = lo + span * u;
            // Nudge away from avoided points (and re-check after nudging).
            for _ in 0..8 {
                match self.avoid.iter().find(|&&p| (t - p).abs() < guard) {
                    Some(&p) => {
                        t = if t >= p { p + guard * 1.5 } else { p - guard * 1.5 };
                        t = t.clamp(lo, lo + span);
                    }
                    None => break,
                }
            }
            out.push(t);
        }
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out
    }

    /// `n` equally spaced points including both (inset) endpoints; used for
    /// CSV dumps and trajectory grids.
    pub fn linspace(&self, n: usize) -> Vec<f64> {
        assert!(n >= 2);
        let margin = 1e-9 * self.len();
        let lo = self.lo + margin;
        let hi = self.hi - margin;
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
    }
}

/// Numeric policy for every sampling-based decision.
#[derive(Clone, Debug, Serialize)]
pub struct Tolerances {
    /// Absolute threshold for declaring a sampled entry identically zero
    /// (applied relative to the scale of the surrounding matrix, with a
    /// floor of the raw value). See the caveat on [`Tolerances`].
    pub zero_tol: f64,
    /// Entrywise tolerance when verifying an equivalence relation or a
    /// reproduced reference value.
    pub verify_tol: f64,
    /// Relative rank cut-off: singular values below `rank_rel_tol * σ_max`
    /// count as zero.
    pub rank_rel_tol: f64,
    /// Number of sample points for structure checks (zero detection,
    /// triangularity, rank).
    pub n_check: usize,
    /// Number of sample points for verification of equivalences.
    pub n_verify: usize,
    /// Maximum number of distinct nodes a single expression may reach before
    /// the computation aborts with a budget error.
    pub node_budget: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            zero_tol: 1e-12,
            verify_tol: 1e-9,
            rank_rel_tol: 1e-9,
            n_check: 33,
            n_verify: 20,
            node_budget: 2_000_000,
        }
    }
}

impl Tolerances {
    /// Default tolerances with the verification tolerance overridden by the
    /// `DAE_CANON_TOL` environment variable when it is set (read once here;
    /// the CLI calls this at startup).
    pub fn from_env() -> Self {
        let mut t = Tolerances::default();
        if let Ok(s) = std::env::var("DAE_CANON_TOL") {
            match s.trim().parse::<f64>() {
                Ok(v) if v > 0.0 && v.is_finite() => t.verify_tol = v,
                _ => eprintln!("warning: ignoring invalid DAE_CANON_TOL={s:?}"),
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_are_deterministic_interior_and_sorted() {
        let iv = Interval::new(0.1, 3.0);
        let a = iv.samples(33);
        let b = iv.samples(33);
        assert_eq!(a, b);
        assert_eq!(a.len(), 33);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|&t| t > 0.1 && t < 3.0));
    }

    #[test]
    fn samples_respect_avoid_list() {
        let mid = 1.55;
        let mut iv = Interval::new(0.1, 3.0);
        iv.avoid = vec![mid];
        for t in iv.samples(200) {
            assert!((t - mid).abs() >= 1e-3 * 2.9 * 0.99, "sample {t} too close to avoided point");
        }
    }

    #[test]
    fn env_override_applies() {
        // from_env with no variable set keeps the default.
        std::env::remove_var("DAE_CANON_TOL");
        assert_eq!(Tolerances::from_env().verify_tol, 1e-9);
    }
}
