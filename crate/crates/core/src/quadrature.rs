//! Quadrature rules on uniform grids.
//!
//! Oscillatory integrals `int f(tau) e^{-s tau} dtau` use the linear Filon
//! rule: `f` is interpolated linearly between samples and the product with
//! the exponential is integrated exactly. Tails beyond the last sample whose
//! samples are geometric, `f_k = c q^k`, are summed in closed form so that
//! a truncated grid plus its tail equals the same rule on an infinite grid.

use crate::linalg::{C64, ONE};

/// `w0(x) = int_0^1 (1-u) e^{-x u} du` and `w1(x) = int_0^1 u e^{-x u} du`.
pub fn filon_weights(x: C64) -> (C64, C64) {
    if x.norm() < 0.5 {
        // alternating series; 20 terms are far below round-off for |x| < 0.5
        let mut w0 = C64::new(0.0, 0.0);
        let mut w1 = C64::new(0.0, 0.0);
        let mut term = ONE; // (-x)^n / n!
        for n in 0..20 {
            let nf = n as f64;
            w0 += term / ((nf + 1.0) * (nf + 2.0));
            w1 += term / (nf + 2.0);
            term *= -x / (nf + 1.0);
        }
        (w0, w1)
    } else {
        let e = (-x).exp();
        let x2 = x * x;
        ((x - ONE + e) / x2, (ONE - (ONE + x) * e) / x2)
    }
}

/// Filon weights for one decay variable `s` and step `h`, reused across sample sets.
#[derive(Debug, Clone, Copy)]
pub struct Filon {
    pub s: C64,
    pub h: f64,
    w0: C64,
    w1: C64,
    ratio: C64,
}

impl Filon {
    pub fn new(s: C64, h: f64) -> Self {
        let (w0, w1) = filon_weights(s * h);
        Self {
            s,
            h,
            w0,
            w1,
            ratio: (-s * h).exp(),
        }
    }

    /// `int_0^{(n-1)h} f e^{-s tau} dtau` for samples `f_0 .. f_{n-1}`.
    pub fn integrate(&self, samples: &[C64]) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        let mut phase = ONE;
        for pair in samples.windows(2) {
            acc += phase * (pair[0] * self.w0 + pair[1] * self.w1);
            phase *= self.ratio;
        }
        acc * self.h
    }

    /// `int_{start}^inf f e^{-s tau} dtau` for geometric samples
    /// `f(start + k h) = q^k`, per unit amplitude. `None` if the sum diverges.
    pub fn geometric_tail(&self, q: C64, start: f64) -> Option<C64> {
        let denom = ONE - q * self.ratio;
        if denom.norm() < 1e-14 || (q * self.ratio).norm() >= 1.0 + 1e-12 {
            return None;
        }
        Some((-self.s * start).exp() * self.h * (self.w0 + q * self.w1) / denom)
    }
}

/// Trapezoid weights on an arbitrary sorted grid.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut w = vec![0.0; n];
    for k in 1..n {
        let h = grid[k] - grid[k - 1];
        w[k - 1] += 0.5 * h;
        w[k] += 0.5 * h;
    }
    w
}

/// Trapezoid rule on an infinite uniform grid starting at `k = 0`, applied
/// to `q^k`: `h (1/2 + q/(1-q)) = h (1+q) / (2 (1-q))`.
pub fn trapezoid_geometric_tail(q: C64, h: f64) -> Option<C64> {
    let denom = ONE - q;
    if denom.norm() < 1e-14 || q.norm() >= 1.0 {
        return None;
    }
    Some((ONE + q) * h / (denom * 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_are_continuous_across_the_series_switch() {
        for x in [C64::new(0.4999, 0.0), C64::new(0.0, 0.4999), C64::new(0.3, -0.39)] {
            let (a0, a1) = filon_weights(x);
            let scale = 1.0 + 1e-6;
            let (b0, b1) = filon_weights(x * scale);
            assert!((a0 - b0).norm() < 1e-6 && (a1 - b1).norm() < 1e-6);
            let e = (-x).exp();
            let x2 = x * x;
            assert!((a0 - (x - ONE + e) / x2).norm() < 1e-12);
            assert!((a1 - (ONE - (ONE + x) * e) / x2).norm() < 1e-12);
        }
    }

    #[test]
    fn filon_is_exact_for_linear_integrands() {
        // f(t) = 2 + 3t on [0, 1], s = 0.7 + 4i
        let s = C64::new(0.7, 4.0);
        let h = 0.05;
        let samples: Vec<C64> = (0..=20).map(|k| C64::new(2.0 + 3.0 * k as f64 * h, 0.0)).collect();
        let got = Filon::new(s, h).integrate(&samples);
        let e = (-s).exp();
        // int (2+3t) e^{-st} = 2(1-e)/s + 3((1 - e)/s^2 - e/s)
        let exact = (ONE - e) * 2.0 / s + ((ONE - e) / (s * s) - e / s) * 3.0;
        assert!((got - exact).norm() < 1e-13);
    }

    #[test]
    fn geometric_tail_matches_long_sum() {
        let s = C64::new(0.1, 1.3);
        let h = 0.2;
        let q = C64::from_polar(0.97, 0.4);
        let f = Filon::new(s, h);
        let samples: Vec<C64> = (0..4000).map(|k| q.powi(k)).collect();
        let direct = f.integrate(&samples) * (-s * 3.0).exp();
        let tail = f.geometric_tail(q, 3.0).unwrap();
        assert!((direct - tail).norm() < 1e-12);
        assert!(Filon::new(C64::new(0.0, 0.0), h).geometric_tail(ONE, 0.0).is_none());
    }

    #[test]
    fn trapezoid_tail_matches_long_sum() {
        let q = C64::new(0.9, 0.2);
        let h = 0.3;
        let w = trapezoid_weights(&(0..3000).map(|k| k as f64 * h).collect::<Vec<_>>());
        let direct: C64 = w.iter().enumerate().map(|(k, wk)| q.powi(k as i32) * *wk).sum();
        // the finite grid ends with weight h/2; its contribution is negligible
        assert!((direct - trapezoid_geometric_tail(q, h).unwrap()).norm() < 1e-12);
        let nonuniform = trapezoid_weights(&[0.0, 1.0, 3.0]);
        assert_eq!(nonuniform, vec![0.5, 1.5, 1.0]);
    }
}
