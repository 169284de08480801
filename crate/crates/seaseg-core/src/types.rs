//! Shared prediction and label containers.

use alloc::vec;
use alloc::vec::Vec;

use crate::elem::Elem;
use crate::tensor::{Shape, Tape, TensorId};

/// Per-pixel class probabilities, NCHW, flat row-major buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap<T> {
    pub n: usize,
    pub classes: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Elem> ProbMap<T> {
    pub fn new(n: usize, classes: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), n * classes * h * w);
        ProbMap {
            n,
            classes,
            h,
            w,
            data,
        }
    }

    pub fn zeros(n: usize, classes: usize, h: usize, w: usize) -> Self {
        ProbMap {
            n,
            classes,
            h,
            w,
            data: vec![T::zero(); n * classes * h * w],
        }
    }

    /// Copies the value of a tape node into a standalone map.
    pub fn from_tape(tape: &Tape<T>, id: TensorId) -> Self {
        let s = tape.shape(id);
        ProbMap {
            n: s.n,
            classes: s.c,
            h: s.h,
            w: s.w,
            data: tape.value(id).to_vec(),
        }
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.n, self.classes, self.h, self.w)
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[((n * self.classes + c) * self.h + y) * self.w + x]
    }

    /// One image's plane for class `c` as a slice.
    pub fn class_plane(&self, n: usize, c: usize) -> &[T] {
        let base = (n * self.classes + c) * self.h * self.w;
        &self.data[base..base + self.h * self.w]
    }
}

/// Ground-truth class index per pixel, N x H x W.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u8>) -> Self {
        debug_assert_eq!(data.len(), n * h * w);
        LabelMap { n, h, w, data }
    }

    pub fn zeros(n: usize, h: usize, w: usize) -> Self {
        LabelMap {
            n,
            h,
            w,
            data: vec![0; n * h * w],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, n: usize, y: usize, x: usize) -> u8 {
        self.data[(n * self.h + y) * self.w + x]
    }
}
