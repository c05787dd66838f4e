//! Interval arithmetic for truncated series and small exact-sum helpers.

use serde::{Deserialize, Serialize};

/// A closed interval `[lo, hi]` enclosing a real quantity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval bounds out of order: [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn shift(&self, dx: f64) -> Interval {
        Interval::new(self.lo + dx, self.hi + dx)
    }

    /// True when the whole interval lies strictly below `x`.
    pub fn strictly_below(&self, x: f64) -> bool {
        self.hi < x
    }

    /// Smallest interval containing both.
    pub fn hull(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.min(other.lo), self.hi.max(other.hi))
    }
}

/// Eulerian-number rows for m = 1..=5; row m gives the numerator
/// coefficients of `sum_{j>=0} j^m x^j = (sum_k E(m,k) x^{k+1}) / (1-x)^{m+1}`.
const EULERIAN: [&[f64]; 5] = [
    &[1.0],
    &[1.0, 1.0],
    &[1.0, 4.0, 1.0],
    &[1.0, 11.0, 11.0, 1.0],
    &[1.0, 26.0, 66.0, 26.0, 1.0],
];

/// `sum_{j>=0} j^m x^j` for `0 <= x < 1` and `m <= 5`.
fn full_power_series(m: usize, x: f64) -> f64 {
    assert!(m <= 5, "power series implemented up to m = 5");
    assert!((0.0..1.0).contains(&x));
    if m == 0 {
        return 1.0 / (1.0 - x);
    }
    let num: f64 = EULERIAN[m - 1]
        .iter()
        .enumerate()
        .map(|(k, c)| c * x.powi(k as i32 + 1))
        .sum();
    num / (1.0 - x).powi(m as i32 + 1)
}

/// `sum_{k>K} k^m x^k` in closed form, for `m <= 5` and `0 <= x < 1`.
///
/// Shifting the index by `K+1` and expanding `(j + K + 1)^m` binomially
/// reduces the tail to the full series above.
pub fn geometric_power_tail(m: usize, x: f64, k_last: u64) -> f64 {
    assert!(m <= 5);
    assert!((0.0..1.0).contains(&x));
    if x == 0.0 {
        return 0.0;
    }
    let shift = (k_last + 1) as f64;
    let mut total = 0.0;
    let mut binom = 1.0f64;
    for i in 0..=m {
        // binom = C(m, i)
        total += binom * shift.powi((m - i) as i32) * full_power_series(i, x);
        binom = binom * (m - i) as f64 / (i + 1) as f64;
    }
    total * x.powf(shift)
}

/// `sum_{k>K} p(k) x^k` for a polynomial `p` given by coefficients
/// `coeffs[m]` of `k^m`.
pub fn geometric_poly_tail(coeffs: &[f64], x: f64, k_last: u64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(m, c)| c * geometric_power_tail(m, x, k_last))
        .sum()
}

/// Index of the mass-weighted pick: the smallest `i` with
/// `sum_{j<=i} masses[j] > u * total`. Falls back to the last positive-mass
/// entry if rounding pushes the target past the accumulated sum.
pub fn pick_weighted(masses: &[f64], total: f64, u: f64) -> usize {
    debug_assert!(!masses.is_empty());
    let target = u * total;
    let mut acc = 0.0;
    for (i, m) in masses.iter().enumerate() {
        acc += m;
        if acc > target {
            return i;
        }
    }
    masses.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn brute_tail(m: usize, x: f64, k_last: u64) -> f64 {
        let mut s = 0.0;
        for k in (k_last + 1)..(k_last + 4000) {
            s += (k as f64).powi(m as i32) * x.powi(k as i32);
        }
        s
    }

    #[test]
    fn power_tails_match_partial_sums() {
        for &x in &[0.1, 0.35, 0.5, 0.8] {
            for m in 0..=5 {
                for &k in &[0u64, 1, 3, 10] {
                    assert_relative_eq!(
                        geometric_power_tail(m, x, k),
                        brute_tail(m, x, k),
                        max_relative = 1e-11
                    );
                }
            }
        }
    }

    #[test]
    fn poly_tail_combines_linearly() {
        let coeffs = [2.0, 0.0, 4.0];
        let expect = 2.0 * brute_tail(0, 0.4, 2) + 4.0 * brute_tail(2, 0.4, 2);
        assert_relative_eq!(
            geometric_poly_tail(&coeffs, 0.4, 2),
            expect,
            max_relative = 1e-11
        );
    }

    #[test]
    fn weighted_pick_covers_all_cells() {
        let masses = [2.0, 1.0, 3.0];
        let total = 6.0;
        assert_eq!(pick_weighted(&masses, total, 0.0), 0);
        assert_eq!(pick_weighted(&masses, total, 0.33), 0);
        assert_eq!(pick_weighted(&masses, total, 0.34), 1);
        assert_eq!(pick_weighted(&masses, total, 0.49), 1);
        assert_eq!(pick_weighted(&masses, total, 0.51), 2);
        assert_eq!(pick_weighted(&masses, total, 0.999_999), 2);
    }
}
