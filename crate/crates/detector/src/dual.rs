//! Forward-mode dual numbers carrying `N` partial derivatives, used for the
//! exact gradient of the box loss.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar operations the box loss needs, over plain `f64` and [`Dual`].
pub trait Real: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self> {
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn atan(self) -> Self;
    fn sigmoid(self) -> Self;

    /// Larger of the two; the first argument wins ties.
    fn max(self, o: Self) -> Self {
        if o.value() > self.value() {
            o
        } else {
            self
        }
    }

    fn min(self, o: Self) -> Self {
        if o.value() < self.value() {
            o
        } else {
            self
        }
    }

    fn sq(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn atan(self) -> Self {
        f64::atan(self)
    }
    fn sigmoid(self) -> Self {
        tinydet_core::grid::sigmoid(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Dual<N> {
    /// The `i`-th independent variable.
    pub fn var(v: f64, i: usize) -> Self {
        let mut d = [0.0; N];
        d[i] = 1.0;
        Self { v, d }
    }

    fn chain(self, v: f64, dv: f64) -> Self {
        Self { v, d: self.d.map(|x| x * dv) }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d) {
            *a += b;
        }
        Self { v: self.v + o.v, d }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    fn neg(self) -> Self {
        Self { v: -self.v, d: self.d.map(|x| -x) }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; N];
        for (i, x) in d.iter_mut().enumerate() {
            *x = self.d[i] * o.v + self.v * o.d[i];
        }
        Self { v: self.v * o.v, d }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let mut d = [0.0; N];
        let inv = 1.0 / o.v;
        for (i, x) in d.iter_mut().enumerate() {
            *x = (self.d[i] - self.v * inv * o.d[i]) * inv;
        }
        Self { v: self.v / o.v, d }
    }
}

impl<const N: usize> Real for Dual<N> {
    fn cst(v: f64) -> Self {
        Self { v, d: [0.0; N] }
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn atan(self) -> Self {
        self.chain(self.v.atan(), 1.0 / (1.0 + self.v * self.v))
    }
    fn sigmoid(self) -> Self {
        let s = tinydet_core::grid::sigmoid(self.v);
        self.chain(s, s * (1.0 - s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_of_a_composite() {
        // f(x, y) = atan(x / y) * exp(x) + sigmoid(y) at (0.7, 1.3)
        let (x, y) = (Dual::<2>::var(0.7, 0), Dual::<2>::var(1.3, 1));
        let f = (x / y).atan() * x.exp() + y.sigmoid();
        let g = |x: f64, y: f64| (x / y).atan() * x.exp() + 1.0 / (1.0 + (-y).exp());
        let h = 1e-6;
        assert!((f.d[0] - (g(0.7 + h, 1.3) - g(0.7 - h, 1.3)) / (2.0 * h)).abs() < 1e-8);
        assert!((f.d[1] - (g(0.7, 1.3 + h) - g(0.7, 1.3 - h)) / (2.0 * h)).abs() < 1e-8);
        assert_eq!(f.v, g(0.7, 1.3));
    }
}
