//! Scalar abstraction shared by plain `f64` evaluation and taped evaluation.
//!
//! Formulas written once against [`Real`] run either as ordinary floating
//! point code (rendering, evaluation, simulation) or on a [`Tape`] when
//! gradients are needed (training).

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::tape::{self, Var};

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn powi(self, p: i32) -> Self;
    /// `acos` with the input clamped to `[-1 + 1e-7, 1 - 1e-7]`.
    fn acos(self) -> Self;
    fn atan2(self, x: Self) -> Self;
    fn sigmoid(self) -> Self;
    fn relu(self) -> Self;
    fn abs(self) -> Self;
    fn min(self, other: Self) -> Self;
    fn max(self, other: Self) -> Self;
    fn max_const(self, c: f64) -> Self;

    /// `c - self`.
    fn rsub(self, c: f64) -> Self {
        -self + c
    }

    fn dot(a: &[Self], b: &[Self]) -> Self {
        let mut acc = a[0] * b[0];
        for i in 1..a.len() {
            acc = acc + a[i] * b[i];
        }
        acc
    }

    fn norm(a: &[Self]) -> Self;

    fn sum(a: &[Self]) -> Self {
        let mut acc = a[0];
        for &x in &a[1..] {
            acc = acc + x;
        }
        acc
    }
}

impl Real for f64 {
    fn value(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn powi(self, p: i32) -> Self {
        f64::powi(self, p)
    }
    fn acos(self) -> Self {
        tape::clamp_acos(self).acos()
    }
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
    fn sigmoid(self) -> Self {
        tape::sigmoid(self)
    }
    fn relu(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }
    fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }
    fn max_const(self, c: f64) -> Self {
        Real::max(self, c)
    }
    fn norm(a: &[Self]) -> Self {
        a.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl Real for Var<'_> {
    fn value(self) -> f64 {
        Var::value(self)
    }
    fn sqrt(self) -> Self {
        Var::sqrt(self)
    }
    fn sin(self) -> Self {
        Var::sin(self)
    }
    fn cos(self) -> Self {
        Var::cos(self)
    }
    fn exp(self) -> Self {
        Var::exp(self)
    }
    fn powi(self, p: i32) -> Self {
        Var::powi(self, p)
    }
    fn acos(self) -> Self {
        Var::acos(self)
    }
    fn atan2(self, x: Self) -> Self {
        Var::atan2(self, x)
    }
    fn sigmoid(self) -> Self {
        Var::sigmoid(self)
    }
    fn relu(self) -> Self {
        Var::relu(self)
    }
    fn abs(self) -> Self {
        Var::abs(self)
    }
    fn min(self, other: Self) -> Self {
        Var::min(self, other)
    }
    fn max(self, other: Self) -> Self {
        Var::max(self, other)
    }
    fn max_const(self, c: f64) -> Self {
        Var::max_const(self, c)
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        tape::dot(a, b)
    }
    fn norm(a: &[Self]) -> Self {
        tape::norm(a)
    }
    fn sum(a: &[Self]) -> Self {
        tape::sum(a)
    }
}
