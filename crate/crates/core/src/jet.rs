//! Truncated Taylor series ("jets") of order four.
//!
//! A jet stores `c[k] = f^(k)(r) / k!` for `k = 0..=4`. Arithmetic on jets
//! propagates exact derivatives through the profile expressions, so every
//! profile derivative up to order four is available to machine precision.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub const JET_LEN: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet(pub [f64; JET_LEN]);

impl Jet {
    pub fn constant(v: f64) -> Self {
        let mut c = [0.0; JET_LEN];
        c[0] = v;
        Jet(c)
    }

    /// The identity function expanded at `r`.
    pub fn variable(r: f64) -> Self {
        let mut c = [0.0; JET_LEN];
        c[0] = r;
        c[1] = 1.0;
        Jet(c)
    }

    pub fn zero() -> Self {
        Jet([0.0; JET_LEN])
    }

    pub fn value(&self) -> f64 {
        self.0[0]
    }

    /// k-th derivative, `k <= 4`.
    pub fn derivative(&self, k: usize) -> f64 {
        const FACT: [f64; JET_LEN] = [1.0, 1.0, 2.0, 6.0, 24.0];
        self.0[k] * FACT[k]
    }

    pub fn scale(self, s: f64) -> Self {
        let mut c = self.0;
        c.iter_mut().for_each(|v| *v *= s);
        Jet(c)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn exp(self) -> Self {
        let a = self.0;
        let mut e = [0.0; JET_LEN];
        e[0] = a[0].exp();
        for k in 1..JET_LEN {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += j as f64 * a[j] * e[k - j];
            }
            e[k] = acc / k as f64;
        }
        Jet(e)
    }

    /// Simultaneous sine and cosine.
    pub fn sin_cos(self) -> (Self, Self) {
        self.trig_pair(-1.0, |x| (x.sin(), x.cos()))
    }

    /// Simultaneous hyperbolic sine and cosine.
    pub fn sinh_cosh(self) -> (Self, Self) {
        self.trig_pair(1.0, |x| (x.sinh(), x.cosh()))
    }

    // s' = c a', c' = sign * s a'
    fn trig_pair(self, sign: f64, base: impl Fn(f64) -> (f64, f64)) -> (Self, Self) {
        let a = self.0;
        let mut s = [0.0; JET_LEN];
        let mut c = [0.0; JET_LEN];
        let (s0, c0) = base(a[0]);
        s[0] = s0;
        c[0] = c0;
        for k in 1..JET_LEN {
            let mut acc_s = 0.0;
            let mut acc_c = 0.0;
            for j in 1..=k {
                acc_s += j as f64 * a[j] * c[k - j];
                acc_c += j as f64 * a[j] * s[k - j];
            }
            s[k] = acc_s / k as f64;
            c[k] = sign * acc_c / k as f64;
        }
        (Jet(s), Jet(c))
    }

    pub fn recip(self) -> Self {
        Jet::constant(1.0) / self
    }

    /// Antiderivative that vanishes at the expansion point.
    pub fn integrate(self) -> Self {
        let mut c = [0.0; JET_LEN];
        for k in 0..JET_LEN - 1 {
            c[k + 1] = self.0[k] / (k + 1) as f64;
        }
        Jet(c)
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        let mut c = self.0;
        for (v, w) in c.iter_mut().zip(o.0) {
            *v += w;
        }
        Jet(c)
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        let mut c = self.0;
        for (v, w) in c.iter_mut().zip(o.0) {
            *v -= w;
        }
        Jet(c)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let (a, b) = (self.0, o.0);
        let mut c = [0.0; JET_LEN];
        for k in 0..JET_LEN {
            for i in 0..=k {
                c[k] += a[i] * b[k - i];
            }
        }
        Jet(c)
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, o: Jet) -> Jet {
        let (a, b) = (self.0, o.0);
        let mut q = [0.0; JET_LEN];
        for k in 0..JET_LEN {
            let mut acc = a[k];
            for i in 1..=k {
                acc -= b[i] * q[k - i];
            }
            q[k] = acc / b[0];
        }
        Jet(q)
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(self, o: f64) -> Jet {
        let mut c = self.0;
        c[0] += o;
        Jet(c)
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(self, o: f64) -> Jet {
        self + (-o)
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, o: f64) -> Jet {
        self.scale(o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn exp_of_variable_has_unit_derivatives() {
        let j = Jet::variable(0.3).exp();
        for k in 0..JET_LEN {
            assert!(close(j.derivative(k), 0.3f64.exp(), 1e-14));
        }
    }

    #[test]
    fn sin_cos_derivatives_cycle() {
        let r = 0.7;
        let (s, c) = Jet::variable(r).sin_cos();
        let expect_s = [r.sin(), r.cos(), -r.sin(), -r.cos(), r.sin()];
        let expect_c = [r.cos(), -r.sin(), -r.cos(), r.sin(), r.cos()];
        for k in 0..JET_LEN {
            assert!(close(s.derivative(k), expect_s[k], 1e-14));
            assert!(close(c.derivative(k), expect_c[k], 1e-14));
        }
    }

    #[test]
    fn reciprocal_matches_power_rule() {
        let r = 1.7;
        let j = Jet::variable(r).recip();
        // d^k/dr^k r^{-1} = (-1)^k k! r^{-k-1}
        let fact = [1.0, 1.0, 2.0, 6.0, 24.0];
        for k in 0..JET_LEN {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let expect = sign * fact[k] * r.powi(-(k as i32) - 1);
            assert!(close(j.derivative(k), expect, 1e-13));
        }
    }

    #[test]
    fn product_rule_on_polynomial() {
        // (r^2)(r^3) = r^5 at r = 2: derivatives 32, 80, 160, 240, 240
        let x = Jet::variable(2.0);
        let p = (x * x) * (x * x * x);
        let expect = [32.0, 80.0, 160.0, 240.0, 240.0];
        for k in 0..JET_LEN {
            assert!(close(p.derivative(k), expect[k], 1e-14));
        }
    }
}
