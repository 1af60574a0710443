//! The smoothing bump `ψ`, its Fourier transform `ψ̂`, tensor products
//! `Ψ̂(εβ)`, and the resolution-dependent smoothing parameter `ε(n)`.
//!
//! `ψ` is built as a normalized autocorrelation, `ψ = (η ⋆ η)/‖η‖₁²` with
//! `η(x) = exp(−1/(1−(x/s)²))` on `(−s, s)`. That makes `ψ` even, smooth,
//! supported in `(−2s, 2s) ⊆ (−1, 1)`, with `∫ψ = 1`, and it makes the
//! transform a square: `ψ̂ = (η̂/‖η‖₁)² ≥ 0`. Nonnegativity matters because
//! the discrete scheme divides by `Ψ̂(εβ)` in its matrix form; a transform
//! with sign changes or zeros would poison the inverse.
//!
//! There is no closed form for `η̂`, so it is evaluated by Gauss–Legendre
//! quadrature on the support, cached on a uniform frequency grid, and
//! interpolated cubically; frequencies beyond the cache fall back to a
//! fresh quadrature.

use gauss_quad::GaussLegendre;

use crate::error::{Error, Result};

/// Default Gauss–Legendre node count for transform quadratures.
pub const DEFAULT_QUAD_ORDER: usize = 200;

/// Spacing of the cached frequency grid.
const FREQ_STEP: f64 = 1.0 / 128.0;

/// Largest cached frequency; beyond it `psi_hat` quadratures directly.
const FREQ_MAX: f64 = 96.0;

/// The bump `ψ` and everything derived from it. Immutable after build;
/// all evaluations are pure.
#[derive(Debug, Clone)]
pub struct MollifierTable {
    /// Half-width of `supp ψ`.
    half_width: f64,
    /// Half-width of `supp η`, `s = half_width / 2`.
    s: f64,
    /// `‖η‖₁ = ∫ η`, by the same quadrature rule as the transform.
    eta_l1: f64,
    /// `η̂(j·FREQ_STEP)/‖η‖₁` for `j = 0..`, so entries start at 1.
    eta_hat: Vec<f64>,
}

fn eta(t: f64, s: f64) -> f64 {
    let r = t / s;
    if r.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r * r)).exp()
    }
}

/// `η̂(ξ)/‖η‖₁` with `η̂(ξ) = 2 ∫_0^s cos(πξt) η(t) dt`, at a given node
/// count. Normalizing by the same rule's value at `ξ = 0` pins
/// `ψ̂(0) = 1` to rounding error.
fn eta_hat_normalized(xi: f64, s: f64, order: usize) -> f64 {
    let rule = GaussLegendre::new(order).expect("quadrature order");
    let num = rule.integrate(0.0, s, |t| (std::f64::consts::PI * xi * t).cos() * eta(t, s));
    let den = rule.integrate(0.0, s, |t| eta(t, s));
    num / den
}

impl MollifierTable {
    /// Builds `ψ` supported in `(−half_width, half_width)`.
    pub fn build_psi(half_width: f64) -> Result<Self> {
        if !(half_width > 0.0 && half_width <= 1.0) {
            return Err(Error::Config(format!(
                "mollifier half-width must lie in (0,1], got {half_width}"
            )));
        }
        let s = half_width / 2.0;
        let rule = GaussLegendre::new(DEFAULT_QUAD_ORDER).expect("quadrature order");
        let eta_l1 = 2.0 * rule.integrate(0.0, s, |t| eta(t, s));
        let len = (FREQ_MAX / FREQ_STEP) as usize + 1;
        let eta_hat: Vec<f64> = (0..len)
            .map(|j| {
                let xi = j as f64 * FREQ_STEP;
                2.0 * rule.integrate(0.0, s, |t| (std::f64::consts::PI * xi * t).cos() * eta(t, s))
                    / eta_l1
            })
            .collect();
        Ok(MollifierTable {
            half_width,
            s,
            eta_l1,
            eta_hat,
        })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Pointwise value of `ψ`, by quadrature of the autocorrelation over
    /// the overlap interval.
    pub fn psi(&self, x: f64) -> f64 {
        let x = x.abs();
        let (lo, hi) = (x - self.s, self.s);
        if lo >= hi {
            return 0.0;
        }
        let rule = GaussLegendre::new(DEFAULT_QUAD_ORDER).expect("quadrature order");
        rule.integrate(lo, hi, |t| eta(t, self.s) * eta(x - t, self.s))
            / (self.eta_l1 * self.eta_l1)
    }

    /// Normalized `η̂` from the cache, by four-point cubic Lagrange
    /// interpolation on the uniform grid.
    fn eta_hat_cached(&self, xi: f64) -> f64 {
        let u = xi / FREQ_STEP;
        let j = (u.floor() as usize).clamp(1, self.eta_hat.len() - 3);
        let t = u - j as f64; // in [−?, 2); within [0,1) except at clamped ends
        let (ym1, y0, y1, y2) = (
            self.eta_hat[j - 1],
            self.eta_hat[j],
            self.eta_hat[j + 1],
            self.eta_hat[j + 2],
        );
        let c0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
        let c1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
        let c2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
        let c3 = (t + 1.0) * t * (t - 1.0) / 6.0;
        c0 * ym1 + c1 * y0 + c2 * y1 + c3 * y2
    }

    /// `ψ̂(ξ) = ∫ cos(πξx) ψ(x) dx`, via the square of the cached `η̂`.
    ///
    /// Always nonnegative. Frequencies beyond the cache are evaluated by a
    /// direct quadrature whose order grows with the frequency.
    pub fn psi_hat(&self, xi: f64) -> f64 {
        let xi = xi.abs();
        let e = if xi <= FREQ_MAX {
            self.eta_hat_cached(xi)
        } else {
            let order = DEFAULT_QUAD_ORDER.max(4 * xi.ceil() as usize);
            eta_hat_normalized(xi, self.s, order.min(4000))
        };
        e * e
    }

    /// `ψ̂(ξ)` by direct quadrature at an explicit node count, bypassing
    /// the cache. Used to check quadrature convergence.
    pub fn psi_hat_direct(&self, xi: f64, order: usize) -> f64 {
        let e = eta_hat_normalized(xi.abs(), self.s, order);
        e * e
    }

    /// `Ψ̂(εβ) = ∏_k ψ̂(ε β_k)`, the transform of the tensor-product
    /// mollifier. Lies in `[0, 1]`.
    pub fn big_psi_hat(&self, beta: &[usize], epsilon: f64) -> f64 {
        beta.iter()
            .map(|&b| self.psi_hat(epsilon * b as f64))
            .product()
    }

    /// `sup |ξ|^θ ψ̂(ξ)` over the cached frequency grid. Reported, never
    /// asserted against a theoretical constant.
    pub fn decay_sup(&self, theta: f64) -> f64 {
        self.eta_hat
            .iter()
            .enumerate()
            .map(|(j, &e)| (j as f64 * FREQ_STEP).powf(theta) * e * e)
            .fold(0.0, f64::max)
    }
}

/// The smoothing-parameter rule `ε(n) = n^{(2d−4−θ)/θ}`, valid for
/// `θ > 2d − 4` so that `ε(n) ↓ 0` as the grid refines.
pub fn epsilon_of_n(n: usize, theta: f64, d: usize) -> Result<f64> {
    let gap = 2.0 * d as f64 - 4.0;
    if theta <= gap {
        return Err(Error::Config(format!(
            "decay order θ = {theta} must exceed 2d − 4 = {gap}"
        )));
    }
    Ok((n as f64).powf((gap - theta) / theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn table() -> MollifierTable {
        MollifierTable::build_psi(1.0).unwrap()
    }

    #[test]
    fn build_rejects_bad_half_width() {
        assert!(MollifierTable::build_psi(1.5).is_err());
        assert!(MollifierTable::build_psi(0.0).is_err());
        assert!(MollifierTable::build_psi(0.5).is_ok());
    }

    #[test]
    fn psi_hat_at_zero_is_one() {
        let t = table();
        assert_abs_diff_eq!(t.psi_hat(0.0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.psi_hat_direct(0.0, 150), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn psi_even_and_nonnegative() {
        let t = table();
        for i in 0..50 {
            let x = -0.98 + 0.04 * i as f64;
            let diff = (t.psi(x) - t.psi(-x)).abs();
            assert!(diff <= 1e-14, "evenness failure {diff} at {x}");
            assert!(t.psi(x) >= 0.0);
        }
        assert_eq!(t.psi(1.0), 0.0);
        assert_eq!(t.psi(-1.3), 0.0);
    }

    /// `∫ψ = 1`, checked by a composite quadrature that never touches the
    /// transform path: 64 panels of 20-node Gauss–Legendre on (−1,1).
    #[test]
    fn psi_integrates_to_one() {
        let t = table();
        let rule = GaussLegendre::new(20).unwrap();
        let panels = 64;
        let mut total = 0.0;
        for p in 0..panels {
            let a = -1.0 + 2.0 * p as f64 / panels as f64;
            let b = a + 2.0 / panels as f64;
            total += rule.integrate(a, b, |x| t.psi(x));
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn psi_hat_nonnegative_on_dense_grid() {
        let t = table();
        for i in 0..=4000 {
            let xi = i as f64 * 0.025; // up to 100, past the cache range
            assert!(t.psi_hat(xi) >= 0.0, "negative transform at ξ = {xi}");
        }
    }

    #[test]
    fn psi_hat_even() {
        let t = table();
        for xi in [0.3, 1.7, 12.25, 63.9] {
            assert_eq!(t.psi_hat(xi), t.psi_hat(-xi));
        }
    }

    #[test]
    fn quadrature_orders_agree() {
        let t = table();
        for i in 0..=64 {
            let xi = i as f64 + 0.37;
            let lo = t.psi_hat_direct(xi, 200);
            let hi = t.psi_hat_direct(xi, 400);
            assert!((lo - hi).abs() <= 1e-9, "order disagreement at ξ = {xi}");
        }
    }

    #[test]
    fn cache_matches_direct_quadrature() {
        let t = table();
        for i in 0..200 {
            let xi = 0.481 * i as f64; // off-grid frequencies up to 96
            let cached = t.psi_hat(xi);
            let direct = t.psi_hat_direct(xi, 400);
            assert!(
                (cached - direct).abs() <= 1e-9,
                "cache error {} at ξ = {xi}",
                (cached - direct).abs()
            );
        }
    }

    #[test]
    fn rapid_decay_envelope_finite() {
        let t = table();
        let sup = t.decay_sup(8.0);
        assert!(sup.is_finite() && sup > 0.0);
    }

    #[test]
    fn big_psi_hat_product_and_bounds() {
        let t = table();
        // ε = 0 gives 1 for every β.
        assert_abs_diff_eq!(t.big_psi_hat(&[3, 1, 7, 2], 0.0), 1.0, epsilon = 1e-11);
        let beta = [1usize, 2, 3, 4];
        let eps = 0.3;
        let prod: f64 = beta.iter().map(|&b| t.psi_hat(eps * b as f64)).product();
        assert_abs_diff_eq!(t.big_psi_hat(&beta, eps), prod, epsilon = 1e-15);
        assert!(prod >= 0.0 && prod <= 1.0 + 1e-12);
    }

    /// 4-D check of the tensor factorization against a direct product
    /// quadrature of each factor at high order.
    #[test]
    fn big_psi_hat_matches_tensor_quadrature() {
        let t = table();
        let beta = [2usize, 5, 1, 3];
        let eps = 0.4;
        let direct: f64 = beta
            .iter()
            .map(|&b| t.psi_hat_direct(eps * b as f64, 400))
            .product();
        assert_abs_diff_eq!(t.big_psi_hat(&beta, eps), direct, epsilon = 1e-9);
    }

    /// The transform oscillates through side lobes, so pointwise
    /// monotonicity in ε is false; the decaying envelope is what holds.
    /// Compare the largest value over successive ε-decades.
    #[test]
    fn big_psi_hat_envelope_decreasing_in_eps() {
        let t = table();
        let beta = [2usize, 1];
        let max_over = |lo: f64, hi: f64| {
            (0..=200)
                .map(|i| t.big_psi_hat(&beta, lo + (hi - lo) * i as f64 / 200.0))
                .fold(0.0f64, f64::max)
        };
        let early = max_over(0.1, 0.5);
        let mid = max_over(1.0, 2.0);
        let late = max_over(4.0, 8.0);
        assert!(mid < early && late < mid, "{early} {mid} {late}");
    }

    #[test]
    fn epsilon_rule_values() {
        assert_abs_diff_eq!(epsilon_of_n(16, 8.0, 4).unwrap(), 0.25, epsilon = 0.0);
        assert_abs_diff_eq!(epsilon_of_n(1, 9.0, 4).unwrap(), 1.0, epsilon = 0.0);
        let e = epsilon_of_n(16, 12.0, 4).unwrap();
        assert_abs_diff_eq!(e, 16f64.powf(-8.0 / 12.0), epsilon = 1e-15);
        assert_abs_diff_eq!(e, 0.15749, epsilon = 1e-5);
        assert!(epsilon_of_n(8, 4.0, 4).is_err());
        assert!(epsilon_of_n(8, 0.5, 2).is_ok());
    }

    #[test]
    fn epsilon_rule_strictly_decreasing() {
        let mut prev = f64::INFINITY;
        for n in 1..=64 {
            let e = epsilon_of_n(n, 9.0, 4).unwrap();
            assert!(e < prev);
            assert!(e > 0.0 && e <= 1.0);
            prev = e;
        }
    }
}
