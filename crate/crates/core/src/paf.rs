//! Part attention filtering and grouped second-order pooling.
//!
//! A saliency mask is area-averaged down to a feature map's grid and
//! multiplied into it. The filtered map is sum-pooled, channels are softly
//! weighted into `G` contiguous groups, and the upper triangle of each
//! group's outer product is concatenated and l2-normalized.

use crate::tape::{Backward, Tape, Var};
use crate::tensor::{Result, Scalar, Tensor, TensorError};

/// Channel range `[lo, hi)` of group `g` out of `groups` over `d` channels.
pub fn group_slice(d: usize, groups: usize, g: usize) -> (usize, usize) {
    (g * d / groups, (g + 1) * d / groups)
}

/// Length of the grouped bilinear vector.
pub fn bilinear_len(d: usize, groups: usize) -> usize {
    (0..groups)
        .map(|g| {
            let (lo, hi) = group_slice(d, groups, g);
            let n = hi - lo;
            n * (n + 1) / 2
        })
        .sum()
}

/// Overlap of `[a0, a1)` and `[b0, b1)`.
fn span_overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Fractional area weights: `weights[o]` lists `(input index, weight)` for output cell `o`.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let step = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let (lo, hi) = (o as f64 * step, (o + 1) as f64 * step);
            (lo.floor() as usize..(hi.ceil() as usize).min(src))
                .filter_map(|i| {
                    let w = span_overlap(lo, hi, i as f64, i as f64 + 1.0) / step;
                    (w > 0.0).then_some((i, w))
                })
                .collect()
        })
        .collect()
}

fn area_resize_kernel<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let [sh, sw] = x.dims2("adapt_mask")?;
    if h == 0 || w == 0 || h > sh || w > sw {
        return Err(TensorError::invalid("adapt_mask", format!("cannot shrink {sh}x{sw} to {h}x{w}")));
    }
    let (wy, wx) = (area_weights(sh, h), area_weights(sw, w));
    let d = x.data();
    Ok(Tensor::from_fn([h, w], |o| {
        let mut acc = 0.0;
        for &(iy, ay) in &wy[o[0]] {
            for &(ix, ax) in &wx[o[1]] {
                acc += ay * ax * d[iy * sw + ix].as_f64();
            }
        }
        T::of(acc)
    }))
}

/// Area-average downsampling of an `[S, S]` saliency mask to `[h, w]`.
pub fn adapt_mask<T: Scalar>(saliency: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    area_resize_kernel(saliency, h, w)
}

/// Entry `(g, s, t)` of the grouped bilinear vector, `s <= t` channel indices.
fn bilinear_pairs(d: usize, groups: usize) -> Vec<(usize, usize, usize)> {
    let mut pairs = Vec::with_capacity(bilinear_len(d, groups));
    for g in 0..groups {
        let (lo, hi) = group_slice(d, groups, g);
        for s in lo..hi {
            for t in s..hi {
                pairs.push((g, s, t));
            }
        }
    }
    pairs
}

/// Group-weighted pooled vector `u[k] = A[k, g(k)] * sum_ij f[i, j, k]`
/// together with the pooled vector itself.
fn weighted_pool<T: Scalar>(features: &Tensor<T>, assignment: &Tensor<T>, groups: usize) -> (Vec<T>, Vec<T>) {
    let d = *features.shape().last().unwrap();
    let mut pooled = vec![T::zero(); d];
    for px in features.data().chunks(d) {
        for (p, &v) in pooled.iter_mut().zip(px) {
            *p = *p + v;
        }
    }
    let mut u = vec![T::zero(); d];
    for g in 0..groups {
        let (lo, hi) = group_slice(d, groups, g);
        for k in lo..hi {
            u[k] = assignment.data()[k * groups + g] * pooled[k];
        }
    }
    (pooled, u)
}

/// Grouped bilinear vector before normalization.
pub fn group_bilinear_raw<T: Scalar>(features: &Tensor<T>, assignment: &Tensor<T>) -> Result<Tensor<T>> {
    let (d, groups) = check_bilinear(features, assignment)?;
    let (_, u) = weighted_pool(features, assignment, groups);
    Ok(Tensor::from_vec(
        bilinear_pairs(d, groups).into_iter().map(|(_, s, t)| u[s] * u[t]).collect(),
    ))
}

/// `x / ||x||`, mapping the zero vector to itself.
pub fn l2_normalize<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let n = x.squared_norm().sqrt();
    if n <= T::zero() {
        return x.map(|_| T::zero());
    }
    x.map(|v| v / n)
}

fn check_bilinear<T: Scalar>(features: &Tensor<T>, assignment: &Tensor<T>) -> Result<(usize, usize)> {
    let [_, _, d] = features.dims3("group_bilinear")?;
    let [ad, groups] = assignment.dims2("group_bilinear")?;
    if ad != d || groups == 0 || groups > d {
        return Err(TensorError::shape(
            "group_bilinear",
            format!("assignment {:?} for {d} channels", assignment.shape()),
        ));
    }
    Ok((d, groups))
}

struct ResizeFn {
    src: [usize; 2],
    dst: [usize; 2],
}

impl<T: Scalar> Backward<T> for ResizeFn {
    fn name(&self) -> &'static str {
        "adapt_mask"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (wy, wx) = (area_weights(self.src[0], self.dst[0]), area_weights(self.src[1], self.dst[1]));
        let mut gx = vec![T::zero(); self.src[0] * self.src[1]];
        for (oy, row) in wy.iter().enumerate() {
            for (ox, col) in wx.iter().enumerate() {
                let g = grad.data()[oy * self.dst[1] + ox].as_f64();
                for &(iy, ay) in row {
                    for &(ix, ax) in col {
                        let i = iy * self.src[1] + ix;
                        gx[i] = gx[i] + T::of(ay * ax * g);
                    }
                }
            }
        }
        vec![Some(Tensor::new(self.src.to_vec(), gx).unwrap())]
    }
}

struct SpatialMaskFn;

impl<T: Scalar> Backward<T> for SpatialMaskFn {
    fn name(&self) -> &'static str {
        "filter_features"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (f, m) = (inputs[0], inputs[1]);
        let d = *f.shape().last().unwrap();
        let gf = needs[0].then(|| {
            let data = grad
                .data()
                .iter()
                .enumerate()
                .map(|(i, &g)| g * m.data()[i / d])
                .collect();
            Tensor::new(f.shape(), data).unwrap()
        });
        let gm = needs[1].then(|| {
            let data = grad
                .data()
                .chunks(d)
                .zip(f.data().chunks(d))
                .map(|(g, x)| g.iter().zip(x).map(|(&a, &b)| a * b).sum())
                .collect();
            Tensor::new(m.shape(), data).unwrap()
        });
        vec![gf, gm]
    }
}

struct GroupBilinearFn {
    groups: usize,
}

impl<T: Scalar> Backward<T> for GroupBilinearFn {
    fn name(&self) -> &'static str {
        "group_bilinear"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (f, a) = (inputs[0], inputs[1]);
        let d = *f.shape().last().unwrap();
        let (pooled, u) = weighted_pool(f, a, self.groups);
        let mut gu = vec![T::zero(); d];
        for ((_, s, t), &g) in bilinear_pairs(d, self.groups).into_iter().zip(grad.data()) {
            gu[s] = gu[s] + g * u[t];
            gu[t] = gu[t] + g * u[s];
        }
        let mut gp = vec![T::zero(); d];
        let mut ga = vec![T::zero(); a.len()];
        for g in 0..self.groups {
            let (lo, hi) = group_slice(d, self.groups, g);
            for k in lo..hi {
                gp[k] = gu[k] * a.data()[k * self.groups + g];
                ga[k * self.groups + g] = gu[k] * pooled[k];
            }
        }
        let gf = needs[0].then(|| {
            let data = (0..f.len()).map(|i| gp[i % d]).collect();
            Tensor::new(f.shape(), data).unwrap()
        });
        let ga = needs[1].then(|| Tensor::new(a.shape(), ga).unwrap());
        vec![gf, ga]
    }
}

struct L2NormalizeFn;

impl<T: Scalar> Backward<T> for L2NormalizeFn {
    fn name(&self) -> &'static str {
        "l2_normalize"
    }

    fn backward(&self, inputs: &[&Tensor<T>], out: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let n = inputs[0].squared_norm().sqrt();
        if n <= T::zero() {
            return vec![Some(Tensor::zeros(inputs[0].shape()))];
        }
        let dot: T = out.data().iter().zip(grad.data()).map(|(&y, &g)| y * g).sum();
        let gx = grad.zip_map(out, "l2_normalize", |g, y| (g - y * dot) / n).unwrap();
        vec![Some(gx)]
    }
}

impl<T: Scalar> Tape<T> {
    /// Differentiable [`adapt_mask`].
    pub fn adapt_mask(&mut self, saliency: Var, h: usize, w: usize) -> Result<Var> {
        let v = self.value(saliency);
        let [sh, sw] = v.dims2("adapt_mask")?;
        let out = area_resize_kernel(v, h, w)?;
        Ok(self.record(
            out,
            vec![saliency],
            ResizeFn {
                src: [sh, sw],
                dst: [h, w],
            },
        ))
    }

    /// `out[i, j, k] = features[i, j, k] * mask[i, j]`.
    pub fn filter_features(&mut self, features: Var, mask: Var) -> Result<Var> {
        let (f, m) = (self.value(features), self.value(mask));
        let [h, w, d] = f.dims3("filter_features")?;
        if m.shape() != [h, w] {
            return Err(TensorError::shape(
                "filter_features",
                format!("mask {:?} for features {:?}", m.shape(), f.shape()),
            ));
        }
        let data = f
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * m.data()[i / d])
            .collect();
        let out = Tensor::new(f.shape(), data)?;
        Ok(self.record(out, vec![features, mask], SpatialMaskFn))
    }

    /// Unnormalized grouped bilinear vector of `[h, w, d]` features under a
    /// `[d, G]` assignment.
    pub fn group_bilinear_raw(&mut self, features: Var, assignment: Var) -> Result<Var> {
        let out = group_bilinear_raw(self.value(features), self.value(assignment))?;
        let groups = self.value(assignment).shape()[1];
        Ok(self.record(out, vec![features, assignment], GroupBilinearFn { groups }))
    }

    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let out = l2_normalize(self.value(x));
        self.record(out, vec![x], L2NormalizeFn)
    }

    /// Grouped bilinear pooling with row-softmax assignment logits `[d, G]`,
    /// l2-normalized.
    pub fn group_bilinear(&mut self, features: Var, assignment_logits: Var) -> Result<Var> {
        let a = self.softmax_rows(assignment_logits)?;
        let raw = self.group_bilinear_raw(features, a)?;
        Ok(self.l2_normalize(raw))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn adapt_mask_examples() {
        let ones = Tensor::<f64>::ones([8, 8]);
        assert_eq!(adapt_mask(&ones, 3, 5).unwrap().data().iter().all(|v| (v - 1.0).abs() < 1e-12), true);
        assert_eq!(adapt_mask(&Tensor::<f64>::zeros([8, 8]), 4, 4).unwrap(), Tensor::zeros([4, 4]));
        let q = Tensor::from_fn([4, 4], |i| if i[0] < 2 && i[1] < 2 { 1.0 } else { 0.0 });
        assert_eq!(adapt_mask(&q, 2, 2).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
        assert!(adapt_mask(&q, 5, 2).is_err());
    }

    #[test]
    fn filter_examples() {
        let mut tape = Tape::<f64>::new();
        let f = tape.input(Tensor::from_fn([2, 2, 3], |i| (i[0] * 6 + i[1] * 3 + i[2]) as f64 - 4.0));
        let ones = tape.constant(Tensor::ones([2, 2]));
        let zeros = tape.constant(Tensor::zeros([2, 2]));
        let same = tape.filter_features(f, ones).unwrap();
        assert_eq!(tape.value(same), tape.value(f));
        let gone = tape.filter_features(f, zeros).unwrap();
        assert_eq!(tape.value(gone).squared_norm(), 0.0);
        let bad = tape.constant(Tensor::ones([2, 3]));
        assert!(tape.filter_features(f, bad).is_err());
    }

    #[test]
    fn bilinear_examples() {
        let f = Tensor::new([1, 2, 2], vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        let a = Tensor::<f64>::ones([2, 1]);
        assert_eq!(group_bilinear_raw(&f, &a).unwrap().data(), &[9.0, 9.0, 9.0]);
        let f = Tensor::new([1, 1, 2], vec![2.0, 3.0]).unwrap();
        assert_eq!(group_bilinear_raw(&f, &a).unwrap().data(), &[4.0, 6.0, 9.0]);

        let mut tape = Tape::<f64>::new();
        let z = tape.input(Tensor::zeros([2, 2, 4]));
        let logits = tape.input(Tensor::zeros([4, 2]));
        let v = tape.group_bilinear(z, logits).unwrap();
        assert_eq!(tape.value(v).len(), 6);
        assert_eq!(tape.value(v).squared_norm(), 0.0);
        assert_eq!(bilinear_len(32, 4), 144);
        assert_eq!(bilinear_len(5, 2), 3 + 6);
    }

    proptest! {
        #[test]
        fn bilinear_output_has_unit_norm(vals in prop::collection::vec(0.1f64..2.0, 2 * 2 * 6)) {
            let mut tape = Tape::<f64>::new();
            let f = tape.input(Tensor::new([2, 2, 6], vals).unwrap());
            let logits = tape.input(Tensor::zeros([6, 3]));
            let v = tape.group_bilinear(f, logits).unwrap();
            prop_assert!((tape.value(v).squared_norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn binary_filter_is_idempotent(
            vals in prop::collection::vec(-1.0f64..1.0, 3 * 3 * 2),
            bits in prop::collection::vec(any::<bool>(), 9),
        ) {
            let mut tape = Tape::<f64>::new();
            let f = tape.input(Tensor::new([3, 3, 2], vals).unwrap());
            let m = tape.constant(Tensor::new([3, 3], bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).unwrap());
            let once = tape.filter_features(f, m).unwrap();
            let twice = tape.filter_features(once, m).unwrap();
            prop_assert_eq!(tape.value(once), tape.value(twice));
        }
    }
}
