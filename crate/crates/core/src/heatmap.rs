//! Coarse object localization from backbone activations.
//!
//! Each pyramid level is summed over depth, thresholded at its own mean,
//! upsampled to the input resolution and the three binary maps averaged.
//! Pixels where at least two levels agree form the activated area.

use crate::backbone::FeaturePyramid;
use crate::tensor::{Result, Scalar, Tensor, TensorError};

/// Depth-summed activation map `[h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationMap<T: Scalar = f32> {
    pub values: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationHeatmap {
    /// `[S, S]`, each entry one of `0, 1/3, 2/3, 1`.
    pub values: Tensor<f32>,
    votes: Vec<u8>,
    /// Number of pixels in the activated area.
    pub object_area: usize,
}

pub const ACTIVE_VOTES: u8 = 2;

impl LocationHeatmap {
    pub fn size(&self) -> usize {
        self.values.shape()[0]
    }

    /// True when at least two of the three levels mark pixel `(y, x)`.
    pub fn is_active(&self, y: usize, x: usize) -> bool {
        self.votes[y * self.size() + x] >= ACTIVE_VOTES
    }

    /// A heatmap with every pixel active.
    pub fn all_active(size: usize) -> Self {
        LocationHeatmap {
            values: Tensor::ones([size, size]),
            votes: vec![3; size * size],
            object_area: size * size,
        }
    }
}

pub fn aggregate<T: Scalar>(activation: &Tensor<T>) -> Result<AggregationMap<T>> {
    let [h, w, d] = activation.dims3("aggregate")?;
    let data = activation.data().chunks(d).map(|px| px.iter().copied().sum()).collect();
    Ok(AggregationMap {
        values: Tensor::new([h, w], data)?,
    })
}

/// 1 where the map is strictly above its mean, else 0.
pub fn binarize<T: Scalar>(map: &AggregationMap<T>) -> Tensor<T> {
    let mean = map.values.mean();
    map.values.map(|v| if v > mean { T::one() } else { T::zero() })
}

/// Nearest-neighbour upsampling of a square-or-rectangular `[h, w]` map to `[size, size]`.
pub fn upsample_nearest<T: Scalar>(map: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    let [h, w] = map.dims2("upsample_nearest")?;
    if h > size || w > size {
        return Err(TensorError::invalid("upsample_nearest", format!("{h}x{w} larger than target {size}")));
    }
    Ok(Tensor::from_fn([size, size], |i| map.get(&[i[0] * h / size, i[1] * w / size])))
}

pub fn fuse<T: Scalar>(masks: &[Tensor<T>; 3], size: usize) -> Result<LocationHeatmap> {
    let mut votes = vec![0u8; size * size];
    for m in masks {
        let up = upsample_nearest(m, size)?;
        for (v, &b) in votes.iter_mut().zip(up.data()) {
            if b > T::zero() {
                *v += 1;
            }
        }
    }
    let values = Tensor::new([size, size], votes.iter().map(|&v| v as f32 / 3.0).collect())?;
    let object_area = votes.iter().filter(|&&v| v >= ACTIVE_VOTES).count();
    Ok(LocationHeatmap {
        values,
        votes,
        object_area,
    })
}

/// Full heatmap for one image: aggregate, binarize and fuse all three levels.
pub fn location_heatmap<T: Scalar>(pyramid: &FeaturePyramid<T>, size: usize) -> Result<LocationHeatmap> {
    let mut masks = Vec::with_capacity(3);
    for level in &pyramid.levels {
        masks.push(binarize(&aggregate(level)?));
    }
    let masks: [Tensor<T>; 3] = masks.try_into().expect("three levels");
    fuse(&masks, size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t2(h: usize, w: usize, data: &[f32]) -> Tensor<f32> {
        Tensor::new([h, w], data.to_vec()).unwrap()
    }

    #[test]
    fn aggregate_examples() {
        let single = Tensor::<f32>::from_fn([2, 3, 1], |i| (i[0] + i[1]) as f32);
        assert_eq!(aggregate(&single).unwrap().values.data(), single.data());
        assert!(aggregate(&Tensor::<f32>::zeros([3, 3, 4])).unwrap().values.data().iter().all(|&v| v == 0.0));
        let two = Tensor::new([1, 1, 2], vec![1.0f32, 2.0]).unwrap();
        assert_eq!(aggregate(&two).unwrap().values.data(), &[3.0]);
    }

    #[test]
    fn binarize_examples() {
        let c = AggregationMap { values: Tensor::<f32>::full([3, 3], 2.5) };
        assert!(binarize(&c).data().iter().all(|&v| v == 0.0));
        let a = AggregationMap { values: t2(2, 2, &[1.0, 2.0, 3.0, 6.0]) };
        assert_eq!(binarize(&a).data(), &[0.0, 0.0, 0.0, 1.0]);
        let mut one = Tensor::<f32>::zeros([4, 4]);
        one.set(&[2, 1], 0.7);
        assert_eq!(binarize(&AggregationMap { values: one.clone() }), one.map(|v| if v > 0.0 { 1.0 } else { 0.0 }));
    }

    #[test]
    fn fuse_examples() {
        let ones = [Tensor::ones([8, 8]), Tensor::ones([4, 4]), Tensor::ones([2, 2])];
        let hm = fuse::<f32>(&ones, 16).unwrap();
        assert!(hm.values.data().iter().all(|&v| v == 1.0));
        assert_eq!(hm.object_area, 256);

        let zeros = [Tensor::zeros([8, 8]), Tensor::zeros([4, 4]), Tensor::zeros([2, 2])];
        let hm = fuse::<f32>(&zeros, 16).unwrap();
        assert_eq!(hm.object_area, 0);
        assert!(hm.values.data().iter().all(|&v| v == 0.0));

        let mut third = Tensor::<f32>::ones([4, 4]);
        third.set(&[0, 0], 0.0);
        let hm = fuse(&[Tensor::ones([4, 4]), Tensor::ones([4, 4]), third], 4).unwrap();
        assert!((hm.values.get(&[0, 0]) - 2.0 / 3.0).abs() < 1e-7);
        assert!(hm.is_active(0, 0));
        assert_eq!(hm.object_area, 16);
    }

    #[test]
    fn upsample_maps_blocks() {
        let m = t2(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let up = upsample_nearest(&m, 4).unwrap();
        assert_eq!(up.sum(), 4.0);
        assert_eq!(up.get(&[1, 1]), 1.0);
        assert_eq!(up.get(&[2, 1]), 0.0);
        assert!(upsample_nearest(&m, 1).is_err());
    }

    proptest! {
        #[test]
        fn fuse_ignores_mask_order(bits in prop::collection::vec(any::<bool>(), 64 + 16 + 4)) {
            let to = |b: &[bool], n: usize| Tensor::<f32>::new([n, n], b.iter().map(|&x| x as u8 as f32).collect()).unwrap();
            let (a, b, c) = (to(&bits[..64], 8), to(&bits[64..80], 4), to(&bits[80..], 2));
            let h1 = fuse(&[a.clone(), b.clone(), c.clone()], 16).unwrap();
            let h2 = fuse(&[c, a, b], 16).unwrap();
            prop_assert_eq!(h1, h2);
        }

        #[test]
        fn binarize_scale_invariant(vals in prop::collection::vec(0.0f64..10.0, 36), scale in 0.01f64..100.0) {
            let m = Tensor::<f64>::new([6, 6], vals).unwrap();
            let a = binarize(&AggregationMap { values: m.clone() });
            let b = binarize(&AggregationMap { values: m.map(|v| v * scale) });
            prop_assert_eq!(a, b);
        }
    }
}
