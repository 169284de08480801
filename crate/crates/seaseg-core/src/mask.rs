//! Binary mask rasters, the column-major RLE codec, and connected
//! component labeling.
//!
//! RLE follows the satellite-competition convention: 1-indexed
//! (start, length) pairs over the column-major flattening, space
//! separated, starts strictly increasing, runs non-overlapping.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::d8::{transform_plane, D8};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskError {
    DimMismatch {
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    BadInstance(String),
    Rle {
        token: usize,
        msg: String,
    },
}

impl core::fmt::Display for MaskError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            MaskError::DimMismatch { lhs, rhs } => write!(
                f,
                "mask dimensions {}x{} and {}x{} differ",
                lhs.0, lhs.1, rhs.0, rhs.1
            ),
            MaskError::BadInstance(msg) => write!(f, "invalid instance set: {msg}"),
            MaskError::Rle { token, msg } => write!(f, "bad RLE at token {token}: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for MaskError {}

/// Row-major boolean raster with fixed dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(h: usize, w: usize) -> Self {
        BinaryMask {
            h,
            w,
            bits: vec![false; h * w],
        }
    }

    pub fn from_bits(h: usize, w: usize, bits: Vec<bool>) -> Result<Self, MaskError> {
        if bits.len() != h * w {
            return Err(MaskError::BadInstance(format!(
                "bit buffer length {} does not match {h}x{w}",
                bits.len()
            )));
        }
        Ok(BinaryMask { h, w, bits })
    }

    pub fn full(h: usize, w: usize) -> Self {
        BinaryMask {
            h,
            w,
            bits: vec![true; h * w],
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.w + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.bits[r * self.w + c] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// True where either mask is set; dimensions must match.
    pub fn union_with(&mut self, other: &BinaryMask) -> Result<(), MaskError> {
        if self.dims() != other.dims() {
            return Err(MaskError::DimMismatch {
                lhs: self.dims(),
                rhs: other.dims(),
            });
        }
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a = *a || *b;
        }
        Ok(())
    }

    pub fn intersects(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).any(|(&a, &b)| a && b)
    }

    pub fn transform_d8(&self, e: D8) -> BinaryMask {
        let (bits, h, w) = transform_plane(&self.bits, self.h, self.w, e);
        BinaryMask { h, w, bits }
    }
}

/// Disjoint, nonempty instance masks sharing one image's dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceSet {
    h: usize,
    w: usize,
    instances: Vec<BinaryMask>,
}

impl InstanceSet {
    pub fn empty(h: usize, w: usize) -> Self {
        InstanceSet {
            h,
            w,
            instances: Vec::new(),
        }
    }

    /// Validates dimensions, non-emptiness, and pairwise disjointness.
    pub fn new(h: usize, w: usize, instances: Vec<BinaryMask>) -> Result<Self, MaskError> {
        for (i, m) in instances.iter().enumerate() {
            if m.dims() != (h, w) {
                return Err(MaskError::DimMismatch {
                    lhs: (h, w),
                    rhs: m.dims(),
                });
            }
            if m.is_empty() {
                return Err(MaskError::BadInstance(format!("instance {i} is empty")));
            }
        }
        let mut seen = BinaryMask::empty(h, w);
        for (i, m) in instances.iter().enumerate() {
            if seen.intersects(m) {
                return Err(MaskError::BadInstance(format!(
                    "instance {i} overlaps an earlier instance"
                )));
            }
            seen.union_with(m)?;
        }
        Ok(InstanceSet { h, w, instances })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[BinaryMask] {
        &self.instances
    }

    pub fn iter(&self) -> impl Iterator<Item = &BinaryMask> {
        self.instances.iter()
    }

    /// Union of all instances as one foreground mask.
    pub fn union_mask(&self) -> BinaryMask {
        let mut out = BinaryMask::empty(self.h, self.w);
        for m in &self.instances {
            out.union_with(m).expect("instances share dimensions");
        }
        out
    }
}

// ── RLE codec ────────────────────────────────────────────────────────

/// Space-separated 1-indexed (start, length) pairs over the column-major
/// flattening. The empty mask encodes to the empty string.
pub fn rle_encode(mask: &BinaryMask) -> String {
    let (h, w) = mask.dims();
    let mut out = String::new();
    let mut run_start = 0usize; // 1-indexed when active
    let mut run_len = 0usize;
    let mut flat = 0usize;
    for c in 0..w {
        for r in 0..h {
            flat += 1;
            if mask.get(r, c) {
                if run_len == 0 {
                    run_start = flat;
                }
                run_len += 1;
            } else if run_len > 0 {
                push_pair(&mut out, run_start, run_len);
                run_len = 0;
            }
        }
    }
    if run_len > 0 {
        push_pair(&mut out, run_start, run_len);
    }
    out
}

fn push_pair(out: &mut String, start: usize, len: usize) {
    if !out.is_empty() {
        out.push(' ');
    }
    out.push_str(&format!("{start} {len}"));
}

/// Inverse of [`rle_encode`]. Rejects malformed pairs, out-of-range
/// indices, and overlapping or non-increasing runs.
pub fn rle_decode(text: &str, h: usize, w: usize) -> Result<BinaryMask, MaskError> {
    let mut mask = BinaryMask::empty(h, w);
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() % 2 != 0 {
        return Err(MaskError::Rle {
            token: tokens.len() - 1,
            msg: format!("odd token count {}", tokens.len()),
        });
    }
    let total = h * w;
    let mut prev_end = 0usize; // 1-indexed end of previous run
    for (pair, chunk) in tokens.chunks(2).enumerate() {
        let ti = pair * 2;
        let start: usize = chunk[0].parse().map_err(|_| MaskError::Rle {
            token: ti,
            msg: format!("expected integer start, got {:?}", chunk[0]),
        })?;
        let len: usize = chunk[1].parse().map_err(|_| MaskError::Rle {
            token: ti + 1,
            msg: format!("expected integer length, got {:?}", chunk[1]),
        })?;
        if start == 0 {
            return Err(MaskError::Rle {
                token: ti,
                msg: "starts are 1-indexed".into(),
            });
        }
        if len == 0 {
            return Err(MaskError::Rle {
                token: ti + 1,
                msg: "zero-length run".into(),
            });
        }
        if start <= prev_end {
            return Err(MaskError::Rle {
                token: ti,
                msg: format!("run at {start} overlaps previous run ending at {prev_end}"),
            });
        }
        let end = start + len - 1;
        if end > total {
            return Err(MaskError::Rle {
                token: ti,
                msg: format!("run {start}+{len} exceeds {h}x{w} = {total} pixels"),
            });
        }
        for flat in start..=end {
            let idx = flat - 1;
            let (c, r) = (idx / h, idx % h);
            mask.set(r, c, true);
        }
        prev_end = end;
    }
    Ok(mask)
}

// ── connected components ─────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

struct DisjointSets {
    parent: Vec<u32>,
}

impl DisjointSets {
    fn new() -> Self {
        DisjointSets { parent: Vec::new() }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let gp = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = gp;
            x = gp;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // attach the larger root id under the smaller, keeping the
            // earliest label as representative
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Partitions the foreground into maximal connected regions. Instances
/// come out in scanline order of their first pixel.
pub fn connected_components(mask: &BinaryMask, conn: Connectivity) -> InstanceSet {
    let (h, w) = mask.dims();
    let mut labels = vec![u32::MAX; h * w];
    let mut sets = DisjointSets::new();

    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) {
                continue;
            }
            let mut neighbor_label = u32::MAX;
            let mut merge = |labels: &mut [u32], sets: &mut DisjointSets, rr: usize, cc: usize| {
                let l = labels[rr * w + cc];
                if l != u32::MAX {
                    if neighbor_label == u32::MAX {
                        neighbor_label = l;
                    } else {
                        sets.union(neighbor_label, l);
                    }
                }
            };
            if c > 0 && mask.get(r, c - 1) {
                merge(&mut labels, &mut sets, r, c - 1);
            }
            if r > 0 {
                if mask.get(r - 1, c) {
                    merge(&mut labels, &mut sets, r - 1, c);
                }
                if conn == Connectivity::Eight {
                    if c > 0 && mask.get(r - 1, c - 1) {
                        merge(&mut labels, &mut sets, r - 1, c - 1);
                    }
                    if c + 1 < w && mask.get(r - 1, c + 1) {
                        merge(&mut labels, &mut sets, r - 1, c + 1);
                    }
                }
            }
            labels[r * w + c] = if neighbor_label == u32::MAX {
                sets.make()
            } else {
                neighbor_label
            };
        }
    }

    // map roots to instance indices in scanline first-pixel order
    let mut root_to_instance: Vec<Option<usize>> = vec![None; sets.parent.len()];
    let mut instances: Vec<BinaryMask> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let l = labels[r * w + c];
            if l == u32::MAX {
                continue;
            }
            let root = sets.find(l) as usize;
            let idx = match root_to_instance[root] {
                Some(i) => i,
                None => {
                    instances.push(BinaryMask::empty(h, w));
                    root_to_instance[root] = Some(instances.len() - 1);
                    instances.len() - 1
                }
            };
            instances[idx].set(r, c, true);
        }
    }
    InstanceSet { h, w, instances }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from_str(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        let mut m = BinaryMask::empty(h, w);
        for (r, row) in rows.iter().enumerate() {
            for (c, ch) in row.chars().enumerate() {
                m.set(r, c, ch == '#');
            }
        }
        m
    }

    #[test]
    fn rle_empty_and_full() {
        assert_eq!(rle_encode(&BinaryMask::empty(2, 2)), "");
        assert_eq!(rle_encode(&BinaryMask::full(2, 2)), "1 4");
    }

    #[test]
    fn rle_single_pixel_is_column_major() {
        // pixel (row 0, col 1) of a 2x2 mask: flat = col*H + row = 2, 1-indexed 3
        let mut m = BinaryMask::empty(2, 2);
        m.set(0, 1, true);
        assert_eq!(rle_encode(&m), "3 1");
    }

    #[test]
    fn rle_decode_inverts_encode() {
        let m = rle_decode("1 4", 2, 2).unwrap();
        assert_eq!(m, BinaryMask::full(2, 2));
    }

    #[test]
    fn rle_decode_rejects_out_of_range() {
        let err = rle_decode("5 1", 2, 2).unwrap_err();
        assert!(matches!(err, MaskError::Rle { token: 0, .. }), "{err}");
        assert!(rle_decode("1 5", 2, 2).is_err());
    }

    #[test]
    fn rle_decode_rejects_odd_overlap_and_garbage() {
        assert!(matches!(
            rle_decode("1 2 3", 2, 2),
            Err(MaskError::Rle { token: 2, .. })
        ));
        // "1 3" covers flats 1..3, "2 1" starts inside it
        assert!(rle_decode("1 3 2 1", 2, 2).is_err());
        // decreasing starts
        assert!(rle_decode("3 1 1 1", 2, 2).is_err());
        assert!(matches!(
            rle_decode("1 x", 2, 2),
            Err(MaskError::Rle { token: 1, .. })
        ));
        assert!(rle_decode("0 1", 2, 2).is_err());
    }

    #[test]
    fn rle_adjacent_runs_accepted() {
        // non-canonical but unambiguous: 1..2 then 3..4
        let m = rle_decode("1 2 3 2", 2, 2).unwrap();
        assert_eq!(m, BinaryMask::full(2, 2));
    }

    #[test]
    fn rle_roundtrip_edge_masks() {
        let cases = [
            BinaryMask::empty(3, 5),
            BinaryMask::full(3, 5),
            mask_from_str(&["#", "#", "#"]),
            mask_from_str(&["###"]),
            mask_from_str(&["#.#", ".#.", "#.#"]),
        ];
        for m in cases {
            let text = rle_encode(&m);
            let back = rle_decode(&text, m.height(), m.width()).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn components_empty_mask() {
        let set = connected_components(&BinaryMask::empty(4, 4), Connectivity::Eight);
        assert_eq!(set.len(), 0);
    }

    #[test]
    fn components_diagonal_depends_on_connectivity() {
        let m = mask_from_str(&["#.", ".#"]);
        assert_eq!(connected_components(&m, Connectivity::Eight).len(), 1);
        assert_eq!(connected_components(&m, Connectivity::Four).len(), 2);
    }

    #[test]
    fn components_cover_foreground_disjointly() {
        let m = mask_from_str(&[
            "##..#", //
            "##..#", //
            ".....", //
            "#..##",
        ]);
        let set = connected_components(&m, Connectivity::Eight);
        assert_eq!(set.len(), 4);
        // validated constructor enforces disjoint + nonempty
        let validated =
            InstanceSet::new(m.height(), m.width(), set.instances().to_vec()).unwrap();
        assert_eq!(validated.union_mask(), m);
    }

    #[test]
    fn components_scanline_label_order() {
        let m = mask_from_str(&[
            ".#.", //
            "...", //
            "#..",
        ]);
        let set = connected_components(&m, Connectivity::Eight);
        assert_eq!(set.len(), 2);
        assert!(set.instances()[0].get(0, 1), "first instance starts first in scanline");
        assert!(set.instances()[1].get(2, 0));
    }

    #[test]
    fn u_shape_merges_into_one_component() {
        // the two arms only meet at the bottom; union-find must merge them
        let m = mask_from_str(&[
            "#.#", //
            "#.#", //
            "###",
        ]);
        let set = connected_components(&m, Connectivity::Four);
        assert_eq!(set.len(), 1);
        assert_eq!(set.instances()[0].popcount(), 7);
    }

    #[test]
    fn instance_set_rejects_overlap_and_empty() {
        let a = mask_from_str(&["##", ".."]);
        let b = mask_from_str(&["#.", ".."]);
        assert!(InstanceSet::new(2, 2, vec![a.clone(), b]).is_err());
        assert!(InstanceSet::new(2, 2, vec![a, BinaryMask::empty(2, 2)]).is_err());
    }

    #[test]
    fn d8_preserves_popcount() {
        let m = mask_from_str(&["#..#", ".##.", "...#"]);
        for e in D8::ALL {
            assert_eq!(m.transform_d8(e).popcount(), m.popcount(), "element {e:?}");
        }
    }
}
