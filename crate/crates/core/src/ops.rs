//! Differentiable primitives: convolution, pooling, elementwise maps,
//! reductions, dense layers and softmax cross-entropy.
//!
//! Each primitive has a plain forward kernel usable without a tape and a
//! `Tape` method that records it together with its backward rule.

use crate::tape::{Backward, Tape, Var};
use crate::tensor::{Result, Scalar, Tensor, TensorError};

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

fn conv_out_extent(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = n + 2 * pad;
    if padded < k {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

fn conv_check<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, stride: usize) -> Result<([usize; 3], [usize; 4])> {
    let [h, w, cin] = input.dims3("conv2d")?;
    let [kh, kw, kcin, cout] = kernel.dims4("conv2d")?;
    if kh != kw || kh % 2 == 0 {
        return Err(TensorError::invalid("conv2d", format!("kernel must be square and odd, got {kh}x{kw}")));
    }
    if stride == 0 {
        return Err(TensorError::invalid("conv2d", "stride must be >= 1"));
    }
    if kcin != cin {
        return Err(TensorError::shape(
            "conv2d",
            format!("input has {cin} channels but kernel expects {kcin} (input {:?}, kernel {:?})", input.shape(), kernel.shape()),
        ));
    }
    Ok(([h, w, cin], [kh, kw, kcin, cout]))
}

/// 2-D convolution over an `[h, w, c_in]` input with a `[k, k, c_in, c_out]` kernel.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let ([h, w, cin], [k, _, _, cout]) = conv_check(input, kernel, stride)?;
    let (Some(oh), Some(ow)) = (conv_out_extent(h, k, stride, pad), conv_out_extent(w, k, stride, pad)) else {
        return Err(TensorError::shape("conv2d", format!("kernel {k} larger than padded input {h}x{w}")));
    };
    let x = input.data();
    let kd = kernel.data();
    let mut out = vec![T::zero(); oh * ow * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            let acc = &mut out[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let px = &x[(iy as usize * w + ix as usize) * cin..][..cin];
                    let kbase = (ky * k + kx) * cin * cout;
                    for (ci, &v) in px.iter().enumerate() {
                        if v == T::zero() {
                            continue;
                        }
                        let row = &kd[kbase + ci * cout..][..cout];
                        for (a, &r) in acc.iter_mut().zip(row) {
                            *a = *a + v * r;
                        }
                    }
                }
            }
        }
    }
    Tensor::new([oh, ow, cout], out)
}

struct Conv2dFn {
    stride: usize,
    pad: usize,
}

impl<T: Scalar> Backward<T> for Conv2dFn {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (input, kernel) = (inputs[0], inputs[1]);
        let [h, w, cin] = input.dims3("conv2d").unwrap();
        let [k, _, _, cout] = kernel.dims4("conv2d").unwrap();
        let [oh, ow, _] = grad.dims3("conv2d").unwrap();
        let (x, kd, g) = (input.data(), kernel.data(), grad.data());
        let mut gx = needs[0].then(|| vec![T::zero(); x.len()]);
        let mut gk = needs[1].then(|| vec![T::zero(); kd.len()]);
        for oy in 0..oh {
            for ox in 0..ow {
                let go = &g[(oy * ow + ox) * cout..][..cout];
                for ky in 0..k {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let pix = (iy as usize * w + ix as usize) * cin;
                        let kbase = (ky * k + kx) * cin * cout;
                        for ci in 0..cin {
                            let row = kbase + ci * cout;
                            if let Some(gx) = gx.as_mut() {
                                let mut s = T::zero();
                                for (&a, &b) in go.iter().zip(&kd[row..row + cout]) {
                                    s = s + a * b;
                                }
                                gx[pix + ci] = gx[pix + ci] + s;
                            }
                            if let Some(gk) = gk.as_mut() {
                                let v = x[pix + ci];
                                if v != T::zero() {
                                    for (a, &b) in gk[row..row + cout].iter_mut().zip(go) {
                                        *a = *a + v * b;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        vec![
            gx.map(|d| Tensor::new(input.shape(), d).unwrap()),
            gk.map(|d| Tensor::new(kernel.shape(), d).unwrap()),
        ]
    }
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

/// 2x2 max pooling with stride 2; returns the pooled map and the flat input
/// index of every selected maximum.
pub fn max_pool2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [h, w, c] = input.dims3("max_pool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::shape("max_pool2", format!("spatial extent {h}x{w} is not even")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut arg = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = ((2 * oy) * w + 2 * ox) * c + ch;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new([oh, ow, c], out)?, arg))
}

struct MaxPoolFn {
    argmax: Vec<usize>,
}

impl<T: Scalar> Backward<T> for MaxPoolFn {
    fn name(&self) -> &'static str {
        "max_pool2"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let mut gx = Tensor::zeros(inputs[0].shape());
        let d = gx.data_mut();
        for (&src, &g) in self.argmax.iter().zip(grad.data()) {
            d[src] = d[src] + g;
        }
        vec![Some(gx)]
    }

    /// Gap between each window maximum and its runner-up. Windows tied at
    /// exactly zero are skipped: those are switched-off ReLU outputs, and
    /// the ReLU reports its own distance to switching on.
    fn kink_distance(&self, inputs: &[&Tensor<T>], output: &Tensor<T>) -> Option<f64> {
        let (x, shape) = (inputs[0].data(), inputs[0].shape());
        let (w, c) = (shape[1], shape[2]);
        let ow = w / 2;
        let mut gap = f64::INFINITY;
        for (o, (&best, &top)) in self.argmax.iter().zip(output.data()).enumerate() {
            let (oy, ox, ch) = (o / c / ow, o / c % ow, o % c);
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let i = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                if i != best && !(top == T::zero() && x[i] == T::zero()) {
                    gap = gap.min((top - x[i]).as_f64());
                }
            }
        }
        Some(gap)
    }
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

/// Shapes must match exactly, or one side must hold a single element.
fn broadcast_binary<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: Binary) -> Result<Tensor<T>> {
    let f = |x: T, y: T| match op {
        Binary::Add => x + y,
        Binary::Sub => x - y,
        Binary::Mul => x * y,
    };
    if a.shape() == b.shape() {
        return a.zip_map(b, "elementwise", f);
    }
    if b.len() == 1 {
        let s = b.data()[0];
        return Ok(a.map(|x| f(x, s)));
    }
    if a.len() == 1 {
        let s = a.data()[0];
        return Ok(b.map(|y| f(s, y)));
    }
    Err(TensorError::shape("elementwise", format!("{:?} vs {:?}", a.shape(), b.shape())))
}

fn reduce_to<T: Scalar>(g: Tensor<T>, target: &Tensor<T>) -> Tensor<T> {
    if g.shape() == target.shape() {
        g
    } else {
        Tensor::new(target.shape(), vec![g.sum()]).unwrap()
    }
}

struct BinaryFn(Binary);

impl<T: Scalar> Backward<T> for BinaryFn {
    fn name(&self) -> &'static str {
        "elementwise"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let expand = |t: &Tensor<T>| -> Tensor<T> {
            if t.shape() == grad.shape() {
                t.clone()
            } else {
                Tensor::full(grad.shape(), t.data()[0])
            }
        };
        let (ga, gb) = match self.0 {
            Binary::Add => (grad.clone(), grad.clone()),
            Binary::Sub => (grad.clone(), grad.map(|g| -g)),
            Binary::Mul => (
                grad.zip_map(&expand(b), "mul", |g, y| g * y).unwrap(),
                grad.zip_map(&expand(a), "mul", |g, x| g * x).unwrap(),
            ),
        };
        vec![needs[0].then(|| reduce_to(ga, a)), needs[1].then(|| reduce_to(gb, b))]
    }
}

struct ScaleFn<T>(T);

impl<T: Scalar> Backward<T> for ScaleFn<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(grad.map(|g| g * self.0))]
    }
}

struct ReluFn;

impl<T: Scalar> Backward<T> for ReluFn {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let g = grad
            .zip_map(inputs[0], "relu", |g, x| if x > T::zero() { g } else { T::zero() })
            .unwrap();
        vec![Some(g)]
    }

    fn kink_distance(&self, inputs: &[&Tensor<T>], _: &Tensor<T>) -> Option<f64> {
        Some(inputs[0].data().iter().map(|v| v.as_f64().abs()).fold(f64::INFINITY, f64::min))
    }
}

struct AddBiasFn;

impl<T: Scalar> Backward<T> for AddBiasFn {
    fn name(&self) -> &'static str {
        "add_bias"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let c = inputs[1].len();
        let gb = needs[1].then(|| {
            let mut acc = vec![T::zero(); c];
            for row in grad.data().chunks(c) {
                for (a, &g) in acc.iter_mut().zip(row) {
                    *a = *a + g;
                }
            }
            Tensor::new(inputs[1].shape(), acc).unwrap()
        });
        vec![needs[0].then(|| grad.clone()), gb]
    }
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

/// Output shape and, for every input element, the flat output index it reduces into.
fn reduction_map(shape: &[usize], axes: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    for &a in axes {
        if a >= shape.len() {
            return Err(TensorError::invalid("reduce", format!("axis {a} out of range for {shape:?}")));
        }
    }
    let full = axes.is_empty();
    let keep: Vec<bool> = (0..shape.len()).map(|a| !full && !axes.contains(&a)).collect();
    let out_shape: Vec<usize> = shape.iter().zip(&keep).filter(|(_, &k)| k).map(|(&d, _)| d).collect();
    let n: usize = shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..n {
        let mut off = 0;
        for (a, &i) in idx.iter().enumerate() {
            if keep[a] {
                off = off * shape[a] + i;
            }
        }
        map.push(off);
        for a in (0..shape.len()).rev() {
            idx[a] += 1;
            if idx[a] < shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Ok((out_shape, map))
}

fn reduce_forward<T: Scalar>(x: &Tensor<T>, kind: Reduction, axes: &[usize]) -> Result<(Tensor<T>, Vec<usize>, Vec<usize>)> {
    let (out_shape, map) = reduction_map(x.shape(), axes)?;
    let m: usize = out_shape.iter().product();
    let mut counts = vec![0usize; m];
    let mut argmax = vec![usize::MAX; m];
    let mut out = match kind {
        Reduction::Max => vec![T::neg_infinity(); m],
        _ => vec![T::zero(); m],
    };
    for (i, (&o, &v)) in map.iter().zip(x.data()).enumerate() {
        counts[o] += 1;
        match kind {
            Reduction::Max => {
                if argmax[o] == usize::MAX || v > out[o] {
                    out[o] = v;
                    argmax[o] = i;
                }
            }
            _ => out[o] = out[o] + v,
        }
    }
    if kind == Reduction::Mean {
        for (v, &c) in out.iter_mut().zip(&counts) {
            *v = *v / T::of(c as f64);
        }
    }
    Ok((Tensor::new(out_shape, out)?, map, argmax))
}

/// Reduces over `axes`; an empty axis list reduces to a scalar.
pub fn reduce<T: Scalar>(x: &Tensor<T>, kind: Reduction, axes: &[usize]) -> Result<Tensor<T>> {
    reduce_forward(x, kind, axes).map(|(t, _, _)| t)
}

struct ReduceFn {
    kind: Reduction,
    map: Vec<usize>,
    argmax: Vec<usize>,
}

impl<T: Scalar> Backward<T> for ReduceFn {
    fn name(&self) -> &'static str {
        "reduce"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let x = inputs[0];
        let g = grad.data();
        let mut gx = Tensor::zeros(x.shape());
        match self.kind {
            Reduction::Sum => {
                for (d, &o) in gx.data_mut().iter_mut().zip(&self.map) {
                    *d = g[o];
                }
            }
            Reduction::Mean => {
                let per = T::of((x.len() / grad.len()) as f64);
                for (d, &o) in gx.data_mut().iter_mut().zip(&self.map) {
                    *d = g[o] / per;
                }
            }
            Reduction::Max => {
                for (o, &src) in self.argmax.iter().enumerate() {
                    gx.data_mut()[src] = g[o];
                }
            }
        }
        vec![Some(gx)]
    }

    fn kink_distance(&self, inputs: &[&Tensor<T>], output: &Tensor<T>) -> Option<f64> {
        if self.kind != Reduction::Max {
            return None;
        }
        let out = output.data();
        let gap = (inputs[0].data().iter().zip(&self.map).enumerate())
            .filter(|(i, (_, &o))| self.argmax[o] != *i)
            .map(|(_, (&v, &o))| (out[o] - v).as_f64())
            .fold(f64::INFINITY, f64::min);
        Some(gap)
    }
}

// ---------------------------------------------------------------------------
// Dense layers and reshaping
// ---------------------------------------------------------------------------

/// `x` (flattened to `k` elements) times `w [k, n]` plus `b [n]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [k, n] = w.dims2("linear")?;
    if x.len() != k || b.len() != n {
        return Err(TensorError::shape(
            "linear",
            format!("input {:?}, weight {:?}, bias {:?}", x.shape(), w.shape(), b.shape()),
        ));
    }
    let mut out = b.data().to_vec();
    for (i, &xi) in x.data().iter().enumerate() {
        let row = &w.data()[i * n..(i + 1) * n];
        for (o, &r) in out.iter_mut().zip(row) {
            *o = *o + xi * r;
        }
    }
    Tensor::new([n], out)
}

struct LinearFn;

impl<T: Scalar> Backward<T> for LinearFn {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let n = grad.len();
        let g = grad.data();
        let gx = needs[0].then(|| {
            let d = (0..x.len())
                .map(|i| w.data()[i * n..(i + 1) * n].iter().zip(g).map(|(&a, &b)| a * b).sum())
                .collect();
            Tensor::new(x.shape(), d).unwrap()
        });
        let gw = needs[1].then(|| {
            let mut d = Vec::with_capacity(w.len());
            for &xi in x.data() {
                d.extend(g.iter().map(|&gj| xi * gj));
            }
            Tensor::new(w.shape(), d).unwrap()
        });
        vec![gx, gw, needs[2].then(|| grad.clone())]
    }
}

struct ReshapeFn;

impl<T: Scalar> Backward<T> for ReshapeFn {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(grad.reshape(inputs[0].shape()).unwrap())]
    }
}

struct ConcatRowsFn;

impl<T: Scalar> Backward<T> for ConcatRowsFn {
    fn name(&self) -> &'static str {
        "concat_rows"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let mut off = 0;
        inputs
            .iter()
            .zip(needs)
            .map(|(x, &need)| {
                let n = x.len();
                let g = need.then(|| Tensor::new(x.shape(), grad.data()[off..off + n].to_vec()).unwrap());
                off += n;
                g
            })
            .collect()
    }
}

struct GatherRowsFn {
    rows: Vec<usize>,
}

impl<T: Scalar> Backward<T> for GatherRowsFn {
    fn name(&self) -> &'static str {
        "gather_rows"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let x = inputs[0];
        let width = x.len() / x.shape()[0];
        let mut gx = Tensor::zeros(x.shape());
        for (slot, &r) in self.rows.iter().enumerate() {
            let src = &grad.data()[slot * width..(slot + 1) * width];
            for (d, &g) in gx.data_mut()[r * width..(r + 1) * width].iter_mut().zip(src) {
                *d = *d + g;
            }
        }
        vec![Some(gx)]
    }
}

struct ColumnsFn {
    start: usize,
}

impl<T: Scalar> Backward<T> for ColumnsFn {
    fn name(&self) -> &'static str {
        "columns"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let x = inputs[0];
        let [rows, cols] = x.dims2("columns").unwrap();
        let width = grad.len() / rows;
        let mut gx = Tensor::zeros(x.shape());
        for r in 0..rows {
            for c in 0..width {
                gx.data_mut()[r * cols + self.start + c] = grad.data()[r * width + c];
            }
        }
        vec![Some(gx)]
    }
}

// ---------------------------------------------------------------------------
// Softmax and cross-entropy
// ---------------------------------------------------------------------------

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Classification target: a class index or a probability distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum Target<T> {
    Class(usize),
    Soft(Vec<T>),
}

impl<T: Scalar> Target<T> {
    fn distribution(&self, n_class: usize) -> Result<Vec<T>> {
        match self {
            Target::Class(c) => {
                if *c >= n_class {
                    return Err(TensorError::invalid(
                        "softmax_cross_entropy",
                        format!("target class {c} out of range for {n_class} classes"),
                    ));
                }
                let mut p = vec![T::zero(); n_class];
                p[*c] = T::one();
                Ok(p)
            }
            Target::Soft(p) => {
                if p.len() != n_class {
                    return Err(TensorError::shape(
                        "softmax_cross_entropy",
                        format!("soft target has {} entries for {n_class} classes", p.len()),
                    ));
                }
                let total: T = p.iter().copied().sum();
                if p.iter().any(|&v| v < T::zero()) || (total - T::one()).abs() > T::of(1e-4) {
                    return Err(TensorError::invalid("softmax_cross_entropy", "soft target is not a distribution"));
                }
                Ok(p.clone())
            }
        }
    }
}

/// Cross-entropy between `target` and `softmax(logits)`; returns the loss and
/// the softmax probabilities.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, target: &Target<T>) -> Result<(T, Vec<T>)> {
    let n = logits.len();
    if n < 2 {
        return Err(TensorError::invalid("softmax_cross_entropy", "need at least two classes"));
    }
    let p = target.distribution(n)?;
    let z = logits.data();
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
    let mut loss = T::zero();
    for (&pi, &zi) in p.iter().zip(z) {
        if pi > T::zero() {
            loss = loss + pi * (lse - zi);
        }
    }
    Ok((loss.max(T::zero()), softmax(z)))
}

struct SoftmaxCeFn<T> {
    probs: Vec<T>,
    target: Vec<T>,
}

impl<T: Scalar> Backward<T> for SoftmaxCeFn<T> {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let g = grad.item();
        let d = self.probs.iter().zip(&self.target).map(|(&q, &p)| g * (q - p)).collect();
        vec![Some(Tensor::new(inputs[0].shape(), d).unwrap())]
    }
}

struct SoftmaxRowsFn;

impl<T: Scalar> Backward<T> for SoftmaxRowsFn {
    fn name(&self) -> &'static str {
        "softmax_rows"
    }

    fn backward(&self, _: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let cols = *output.shape().last().unwrap();
        let mut gx = Vec::with_capacity(output.len());
        for (y, g) in output.data().chunks(cols).zip(grad.data().chunks(cols)) {
            let dot: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
            gx.extend(y.iter().zip(g).map(|(&yi, &gi)| yi * (gi - dot)));
        }
        vec![Some(Tensor::new(output.shape(), gx).unwrap())]
    }
}

// ---------------------------------------------------------------------------
// Tape bindings
// ---------------------------------------------------------------------------

impl<T: Scalar> Tape<T> {
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = conv2d(self.value(input), self.value(kernel), stride, pad)?;
        Ok(self.record(out, vec![input, kernel], Conv2dFn { stride, pad }))
    }

    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = max_pool2(self.value(input))?;
        Ok(self.record(out, vec![input], MaxPoolFn { argmax }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = relu(self.value(x));
        self.record(out, vec![x], ReluFn)
    }

    fn binary(&mut self, a: Var, b: Var, op: Binary) -> Result<Var> {
        let out = broadcast_binary(self.value(a), self.value(b), op)?;
        Ok(self.record(out, vec![a, b], BinaryFn(op)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.record(out, vec![x], ScaleFn(factor))
    }

    /// Sum of scalars, each multiplied by its weight.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(v, w) in terms {
            let scaled = self.scale(v, w);
            acc = Some(match acc {
                None => scaled,
                Some(a) => self.add(a, scaled)?,
            });
        }
        acc.ok_or_else(|| TensorError::invalid("weighted_sum", "no terms"))
    }

    /// Adds `bias` (one entry per channel) along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let c = *xv.shape().last().unwrap_or(&1);
        if bv.rank() != 1 || bv.len() != c {
            return Err(TensorError::shape("add_bias", format!("{:?} vs bias {:?}", xv.shape(), bv.shape())));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o = *o + b;
            }
        }
        Ok(self.record(out, vec![x, bias], AddBiasFn))
    }

    pub fn reduce(&mut self, x: Var, kind: Reduction, axes: &[usize]) -> Result<Var> {
        let (out, map, argmax) = reduce_forward(self.value(x), kind, axes)?;
        Ok(self.record(out, vec![x], ReduceFn { kind, map, argmax }))
    }

    pub fn sum(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(x, Reduction::Sum, axes)
    }

    pub fn mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(x, Reduction::Mean, axes)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = linear(self.value(x), self.value(w), self.value(b))?;
        Ok(self.record(out, vec![x, w, b], LinearFn))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.record(out, vec![x], ReshapeFn))
    }

    /// Concatenates along axis 0; trailing extents must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| TensorError::invalid("concat_rows", "no inputs"))?;
        let tail = self.value(*first).shape()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.rank() == 0 || v.shape()[1..] != tail[..] {
                return Err(TensorError::shape("concat_rows", format!("{:?} vs trailing {tail:?}", v.shape())));
            }
            rows += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let out = Tensor::new(shape, data)?;
        Ok(self.record(out, parts.to_vec(), ConcatRowsFn))
    }

    /// Selects rows (axis 0) by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if v.rank() == 0 || rows.is_empty() {
            return Err(TensorError::invalid("gather_rows", "need a rank >= 1 input and at least one row"));
        }
        let n = v.shape()[0];
        let width = v.len() / n;
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            if r >= n {
                return Err(TensorError::invalid("gather_rows", format!("row {r} out of range for {n}")));
            }
            data.extend_from_slice(&v.data()[r * width..(r + 1) * width]);
        }
        let mut shape = v.shape().to_vec();
        shape[0] = rows.len();
        let out = Tensor::new(shape, data)?;
        Ok(self.record(out, vec![x], GatherRowsFn { rows: rows.to_vec() }))
    }

    /// Column range `start..end` of a rank-2 tensor.
    pub fn columns(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(x);
        let [rows, cols] = v.dims2("columns")?;
        if start >= end || end > cols {
            return Err(TensorError::invalid("columns", format!("range {start}..{end} for {cols} columns")));
        }
        let width = end - start;
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&v.data()[r * cols + start..r * cols + end]);
        }
        let out = Tensor::new([rows, width], data)?;
        Ok(self.record(out, vec![x], ColumnsFn { start }))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, target: &Target<T>) -> Result<Var> {
        let (loss, probs) = softmax_cross_entropy(self.value(logits), target)?;
        let target = target.distribution(probs.len())?;
        Ok(self.record(Tensor::scalar(loss), vec![logits], SoftmaxCeFn { probs, target }))
    }

    /// Softmax along the last axis.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let cols = *v
            .shape()
            .last()
            .ok_or_else(|| TensorError::invalid("softmax_rows", "scalar input"))?;
        let data: Vec<T> = v.data().chunks(cols).flat_map(softmax).collect();
        let out = Tensor::new(v.shape(), data)?;
        Ok(self.record(out, vec![x], SoftmaxRowsFn))
    }
}
