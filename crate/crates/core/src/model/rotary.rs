//! Rotary position rotations on interleaved pairs.

use alloc::vec;
use alloc::vec::Vec;

use super::ModelError;
use crate::numerics::Scalar;

pub const ROTARY_BASE: f64 = 10000.0;

/// Rotates `x` by position `pos` (negative positions rotate backwards),
/// writing into `out`.
pub fn rotate_into<T: Scalar>(x: &[T], pos: f64, out: &mut [T]) {
    let d = x.len();
    for i in 0..d / 2 {
        let angle = T::of(pos * theta(i, d));
        let (s, c) = (angle.sin(), angle.cos());
        let (a, b) = (x[2 * i], x[2 * i + 1]);
        out[2 * i] = a * c - b * s;
        out[2 * i + 1] = a * s + b * c;
    }
}

fn theta(i: usize, d: usize) -> f64 {
    num_traits::Float::powf(ROTARY_BASE, -2.0 * i as f64 / d as f64)
}

pub fn rotate<T: Scalar>(x: &[T], pos: usize) -> Result<Vec<T>, ModelError> {
    if !x.len().is_multiple_of(2) {
        return Err(ModelError::OddHeadDim(x.len()));
    }
    let mut out = vec![T::zero(); x.len()];
    rotate_into(x, pos as f64, &mut out);
    Ok(out)
}

/// cos/sin of every (position, pair) for one head size.
#[derive(Clone, Debug)]
pub(crate) struct RotaryTable<T> {
    half: usize,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Scalar> RotaryTable<T> {
    pub fn new(positions: usize, head_dim: usize) -> RotaryTable<T> {
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(positions * half);
        let mut sin = Vec::with_capacity(positions * half);
        for p in 0..positions {
            for i in 0..half {
                let a = T::of(p as f64 * theta(i, head_dim));
                cos.push(a.cos());
                sin.push(a.sin());
            }
        }
        RotaryTable { half, cos, sin }
    }

    /// out = scale · R_pos x, or its transpose when `inverse`.
    pub fn apply(&self, x: &[T], pos: usize, scale: T, inverse: bool, out: &mut [T]) {
        let base = pos * self.half;
        for i in 0..self.half {
            let c = self.cos[base + i];
            let s = if inverse {
                -self.sin[base + i]
            } else {
                self.sin[base + i]
            };
            let (a, b) = (x[2 * i], x[2 * i + 1]);
            out[2 * i] = scale * (a * c - b * s);
            out[2 * i + 1] = scale * (a * s + b * c);
        }
    }
}
