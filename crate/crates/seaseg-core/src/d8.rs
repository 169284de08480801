//! The dihedral group of the square: four rotations, optionally followed
//! by a horizontal flip. Elements 0..3 are counterclockwise-indexed
//! clockwise rotations (0°, 90°, 180°, 270°); elements 4..7 are the same
//! rotations followed by a horizontal flip.

use alloc::vec::Vec;

/// One of the eight square symmetries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct D8(u8);

impl D8 {
    pub const IDENTITY: D8 = D8(0);
    pub const ROT90: D8 = D8(1);
    pub const ROT180: D8 = D8(2);
    pub const ROT270: D8 = D8(3);
    pub const FLIP_H: D8 = D8(4);
    /// Horizontal flip of the 180° rotation = vertical flip.
    pub const FLIP_V: D8 = D8(6);

    pub const ALL: [D8; 8] = [
        D8(0),
        D8(1),
        D8(2),
        D8(3),
        D8(4),
        D8(5),
        D8(6),
        D8(7),
    ];

    /// Element from its index in [0, 8).
    pub fn new(e: u8) -> Option<D8> {
        (e < 8).then_some(D8(e))
    }

    pub fn element(self) -> u8 {
        self.0
    }

    pub fn rotation(self) -> u8 {
        self.0 % 4
    }

    pub fn flipped(self) -> bool {
        self.0 >= 4
    }

    /// Group inverse. Reflections are involutions; rotations invert.
    pub fn inverse(self) -> D8 {
        if self.flipped() {
            self
        } else {
            D8((4 - self.0) % 4)
        }
    }

    /// Output dimensions for an input of `h` rows by `w` columns.
    pub fn out_dims(self, h: usize, w: usize) -> (usize, usize) {
        if self.rotation() % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Source pixel (row, col) in the input that lands at output
    /// position (`y`, `x`).
    pub fn src_index(self, h: usize, w: usize, y: usize, x: usize) -> (usize, usize) {
        let (oh, ow) = self.out_dims(h, w);
        debug_assert!(y < oh && x < ow);
        let (ry, rx) = if self.flipped() { (y, ow - 1 - x) } else { (y, x) };
        match self.rotation() {
            0 => (ry, rx),
            1 => (h - 1 - rx, ry),
            2 => (h - 1 - ry, w - 1 - rx),
            _ => (rx, w - 1 - ry),
        }
    }
}

/// Applies `e` to one row-major plane, returning the transformed plane
/// and its dimensions.
pub fn transform_plane<T: Copy>(src: &[T], h: usize, w: usize, e: D8) -> (Vec<T>, usize, usize) {
    debug_assert_eq!(src.len(), h * w);
    let (oh, ow) = e.out_dims(h, w);
    let mut out = Vec::with_capacity(src.len());
    for y in 0..oh {
        for x in 0..ow {
            let (sy, sx) = e.src_index(h, w, y, x);
            out.push(src[sy * w + sx]);
        }
    }
    (out, oh, ow)
}

/// Applies `e` to every plane of a CHW buffer.
pub fn transform_chw<T: Copy>(
    src: &[T],
    c: usize,
    h: usize,
    w: usize,
    e: D8,
) -> (Vec<T>, usize, usize) {
    debug_assert_eq!(src.len(), c * h * w);
    let (oh, ow) = e.out_dims(h, w);
    let mut out = Vec::with_capacity(src.len());
    for plane in 0..c {
        let p = &src[plane * h * w..(plane + 1) * h * w];
        let (t, _, _) = transform_plane(p, h, w, e);
        out.extend_from_slice(&t);
    }
    (out, oh, ow)
}

/// Applies `e` to an interleaved row-major buffer with `c` values per
/// pixel (RGB images).
pub fn transform_interleaved<T: Copy>(
    src: &[T],
    h: usize,
    w: usize,
    c: usize,
    e: D8,
) -> (Vec<T>, usize, usize) {
    debug_assert_eq!(src.len(), h * w * c);
    let (oh, ow) = e.out_dims(h, w);
    let mut out = Vec::with_capacity(src.len());
    for y in 0..oh {
        for x in 0..ow {
            let (sy, sx) = e.src_index(h, w, y, x);
            let base = (sy * w + sx) * c;
            out.extend_from_slice(&src[base..base + c]);
        }
    }
    (out, oh, ow)
}
