//! One square anchor per feature cell per pyramid level, and the box
//! regression that turns head offsets into clipped image-space boxes.

use crate::tape::{Backward, Tape, Var};
use crate::tensor::{Result, Scalar, Tensor, TensorError};

/// Anchor side as a multiple of the level stride.
pub const ANCHOR_SCALE: f64 = 6.0;
/// Range of the log-scale offset: a box lies between one and two anchor
/// sides. The overlap penalty is scale-free while the area penalty is
/// divided by the object area, so an unbounded shrink would always win.
pub const LOG_SCALE_RANGE: (f64, f64) = (0.0, std::f64::consts::LN_2);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub cx: f64,
    pub cy: f64,
    pub side: f64,
    /// 1-based pyramid level.
    pub level: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub image_size: usize,
    pub anchors: Vec<Anchor>,
    /// First anchor index of each level.
    pub level_start: [usize; 3],
}

impl AnchorSet {
    /// Anchors for square feature maps of the given extents over an image of `image_size`.
    pub fn new(image_size: usize, level_sizes: [usize; 3]) -> Self {
        let mut anchors = Vec::new();
        let mut level_start = [0; 3];
        for (l, &n) in level_sizes.iter().enumerate() {
            level_start[l] = anchors.len();
            let stride = image_size as f64 / n as f64;
            for i in 0..n {
                for j in 0..n {
                    anchors.push(Anchor {
                        cx: (j as f64 + 0.5) * stride,
                        cy: (i as f64 + 0.5) * stride,
                        side: ANCHOR_SCALE * stride,
                        level: l as u8 + 1,
                    });
                }
            }
        }
        AnchorSet {
            image_size,
            anchors,
            level_start,
        }
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

fn clamp_with_grad(v: f64, lo: f64, hi: f64) -> (f64, f64) {
    if v < lo {
        (lo, 0.0)
    } else if v > hi {
        (hi, 0.0)
    } else {
        (v, 1.0)
    }
}

/// Decoded coordinates `(lo, hi)` along one axis and their partial
/// derivatives with respect to the (shift, log-scale) offsets.
fn decode_axis(center: f64, side: f64, shift: f64, log_scale: f64, size: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let (c, dc) = clamp_with_grad(center + shift * side, 0.5, size - 0.5);
    let dc_dshift = dc * side;
    let (ls, dls) = clamp_with_grad(log_scale, LOG_SCALE_RANGE.0, LOG_SCALE_RANGE.1);
    let extent = side * ls.exp();
    let dext = dls * extent;
    let (lo, plo) = clamp_with_grad(c - 0.5 * extent, 0.0, size);
    let (hi, phi) = clamp_with_grad(c + 0.5 * extent, 0.0, size);
    (
        [lo, hi],
        [[plo * dc_dshift, -0.5 * plo * dext], [phi * dc_dshift, 0.5 * phi * dext]],
    )
}

/// Shared log-scale of a box: the mean of its `dw` and `dh` offsets.
///
/// The box geometry only sees the overlap and area penalties, which
/// with independent axes are minimized by thin strips. A single scale
/// keeps every box as square as its anchor before clipping.
fn shared_log_scale(offsets: &[f64]) -> f64 {
    0.5 * (offsets[2] + offsets[3])
}

/// Applies offsets `(dx, dy, dw, dh)` to an anchor: center shift in units of
/// the anchor side, resize by the shared log-scale, then clipping to the image.
pub fn decode_box(anchor: &Anchor, offsets: [f64; 4], size: usize) -> [f64; 4] {
    let s = size as f64;
    let ls = shared_log_scale(&offsets);
    let ([x0, x1], _) = decode_axis(anchor.cx, anchor.side, offsets[0], ls, s);
    let ([y0, y1], _) = decode_axis(anchor.cy, anchor.side, offsets[1], ls, s);
    [x0, y0, x1, y1]
}

struct DecodeFn {
    anchors: Vec<Anchor>,
    size: f64,
}

impl<T: Scalar> Backward<T> for DecodeFn {
    fn name(&self) -> &'static str {
        "decode_boxes"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let off = inputs[0].data();
        let g = grad.data();
        let mut gx = vec![T::zero(); off.len()];
        for (m, a) in self.anchors.iter().enumerate() {
            let d: Vec<f64> = off[m * 4..m * 4 + 4].iter().map(|v| v.as_f64()).collect();
            let ls = shared_log_scale(&d);
            let (_, jx) = decode_axis(a.cx, a.side, d[0], ls, self.size);
            let (_, jy) = decode_axis(a.cy, a.side, d[1], ls, self.size);
            let gb: Vec<f64> = g[m * 4..m * 4 + 4].iter().map(|v| v.as_f64()).collect();
            // box layout (x0, y0, x1, y1); offsets (dx, dy, dw, dh)
            let gdx = gb[0] * jx[0][0] + gb[2] * jx[1][0];
            let gdy = gb[1] * jy[0][0] + gb[3] * jy[1][0];
            let gls = gb[0] * jx[0][1] + gb[2] * jx[1][1] + gb[1] * jy[0][1] + gb[3] * jy[1][1];
            for (k, v) in [gdx, gdy, 0.5 * gls, 0.5 * gls].into_iter().enumerate() {
                gx[m * 4 + k] = T::of(v);
            }
        }
        vec![Some(Tensor::new(inputs[0].shape(), gx).unwrap())]
    }
}

impl<T: Scalar> Tape<T> {
    /// Decodes `[M, 4]` offsets against `M` anchors into `[M, 4]` boxes `(x0, y0, x1, y1)`.
    pub fn decode_boxes(&mut self, offsets: Var, anchors: &[Anchor], size: usize) -> Result<Var> {
        let v = self.value(offsets);
        let [m, four] = v.dims2("decode_boxes")?;
        if four != 4 || m != anchors.len() {
            return Err(TensorError::shape(
                "decode_boxes",
                format!("offsets {:?} for {} anchors", v.shape(), anchors.len()),
            ));
        }
        let mut out = Vec::with_capacity(m * 4);
        for (row, a) in v.data().chunks(4).zip(anchors) {
            let d = [row[0].as_f64(), row[1].as_f64(), row[2].as_f64(), row[3].as_f64()];
            out.extend(decode_box(a, d, size).map(T::of));
        }
        let out = Tensor::new([m, 4], out)?;
        Ok(self.record(
            out,
            vec![offsets],
            DecodeFn {
                anchors: anchors.to_vec(),
                size: size as f64,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn anchor_grid_layout() {
        let set = AnchorSet::new(64, [32, 16, 8]);
        assert_eq!(set.len(), 32 * 32 + 16 * 16 + 64);
        assert_eq!(set.level_start, [0, 1024, 1280]);
        let a = set.anchors[0];
        assert_eq!((a.cx, a.cy, a.side, a.level), (1.0, 1.0, 12.0, 1));
        let b = set.anchors[1280 + 9];
        assert_eq!((b.cx, b.cy, b.side, b.level), (12.0, 12.0, 48.0, 3));
    }

    #[test]
    fn zero_offsets_reproduce_interior_anchor() {
        let a = Anchor { cx: 20.0, cy: 30.0, side: 16.0, level: 2 };
        assert_eq!(decode_box(&a, [0.0; 4], 64), [12.0, 22.0, 28.0, 38.0]);
    }

    #[test]
    fn width_and_height_share_one_scale() {
        let a = Anchor { cx: 32.0, cy: 32.0, side: 16.0, level: 2 };
        let ln2 = std::f64::consts::LN_2;
        let [x0, y0, x1, y1] = decode_box(&a, [0.0, 0.0, ln2, -ln2], 64);
        assert_eq!((x1 - x0, y1 - y0), (16.0, 16.0));
        let [x0, y0, x1, y1] = decode_box(&a, [0.0, 0.0, -ln2, -ln2], 64);
        assert_eq!((x1 - x0, y1 - y0), (16.0, 16.0));
        let [x0, y0, x1, y1] = decode_box(&a, [0.0, 0.0, ln2, ln2], 64);
        assert_eq!((x1 - x0, y1 - y0), (32.0, 32.0));
    }

    proptest! {
        #[test]
        fn decoded_boxes_are_valid(
            cx in 0.0f64..64.0, cy in 0.0f64..64.0, side in 1.0f64..64.0,
            off in prop::array::uniform4(-10.0f64..10.0),
        ) {
            let a = Anchor { cx, cy, side, level: 1 };
            let [x0, y0, x1, y1] = decode_box(&a, off, 64);
            prop_assert!(0.0 <= x0 && x0 < x1 && x1 <= 64.0);
            prop_assert!(0.0 <= y0 && y0 < y1 && y1 <= 64.0);
        }
    }
}
