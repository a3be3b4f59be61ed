//! Randomized finite-difference checks of every differentiable operation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{check_gradients, check_param_gradients};
use crate::backbone::{Backbone, BackboneConfig};
use crate::csf::Fusion;
use crate::losses::{hint_loss, HintInputs};
use crate::ops::{Reduction, Target};
use crate::params::ParamStore;
use crate::sppn::{Anchor, SppnHeads};
use crate::tape::{Tape, Var};
use crate::teacher::{Teacher, TeacherConfig};
use crate::tensor::{Result, Tensor};

pub const SUITE_EPS: f64 = 1e-4;
pub const SUITE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct OpReport {
    pub op: &'static str,
    pub trials: usize,
    pub worst_error: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.worst_error < SUITE_TOLERANCE
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values with magnitude in `[0.1, 1)` so that ReLU and max kinks stay far from the probes.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `sum(v * r)` for a fixed random `r`, turning any output into a scalar loss.
fn project(tape: &mut Tape<f64>, v: Var, r: &Tensor<f64>) -> Result<Var> {
    let rv = tape.constant(r.clone());
    let p = tape.mul(v, rv)?;
    tape.sum(p, &[])
}

fn random_boxes(rng: &mut ChaCha8Rng, m: usize, size: f64) -> Tensor<f64> {
    let mut data = Vec::with_capacity(m * 4);
    for _ in 0..m {
        let (w, h) = (rng.random_range(2.0..size / 2.0), rng.random_range(2.0..size / 2.0));
        let (x0, y0) = (rng.random_range(0.0..size - w), rng.random_range(0.0..size - h));
        data.extend([x0, y0, x0 + w, y0 + h]);
    }
    Tensor::new([m, 4], data).expect("m boxes")
}

/// Zero biases put every dead-input pre-activation exactly on the ReLU kink.
fn randomize_biases(rng: &mut ChaCha8Rng, p: &mut ParamStore<f64>) {
    let names: Vec<String> = p.names().filter(|n| n.ends_with(".b")).cloned().collect();
    for n in names {
        let shape = p.get(&n).shape().to_vec();
        p.insert(n, uniform(rng, &shape, -0.2, 0.2));
    }
}

/// Smallest allowed distance from a ReLU or max kink. Closer draws would let
/// the `±eps` probes straddle a kink, where the derivative does not exist.
const KINK_MARGIN: f64 = 1e-3;
const MAX_DRAWS: usize = 500;

/// Redraws a trial until its forward pass keeps [`KINK_MARGIN`] from every kink.
fn away_from_kinks<S>(
    rng: &mut ChaCha8Rng,
    draw: impl Fn(&mut ChaCha8Rng) -> Result<S>,
    forward: impl Fn(&mut Tape<f64>, &S) -> Result<Var>,
) -> Result<S> {
    for _ in 0..MAX_DRAWS {
        let s = draw(rng)?;
        let mut tape = Tape::new();
        forward(&mut tape, &s)?;
        if tape.kink_distance() >= KINK_MARGIN {
            return Ok(s);
        }
    }
    Err(crate::tensor::TensorError::invalid("gradient suite", "no draw away from kinks"))
}

type Trial = Box<dyn Fn(&mut ChaCha8Rng) -> Result<f64>>;

fn op_trials() -> Vec<(&'static str, Trial)> {
    let mut v: Vec<(&'static str, Trial)> = Vec::new();

    v.push((
        "conv2d",
        Box::new(|rng| {
            let (stride, pad) = if rng.random_bool(0.5) { (1, 1) } else { (2, 0) };
            let x = uniform(rng, &[5, 6, 2], -1.0, 1.0);
            let k = uniform(rng, &[3, 3, 2, 3], -1.0, 1.0);
            let out_shape = crate::ops::conv2d(&x, &k, stride, pad)?.shape().to_vec();
            let r = uniform(rng, &out_shape, -1.0, 1.0);
            check_gradients(&[x, k], SUITE_EPS, |t, v| {
                let y = t.conv2d(v[0], v[1], stride, pad)?;
                project(t, y, &r)
            })
        }),
    ));
    v.push((
        "max_pool2",
        Box::new(|rng| {
            // distinct values spaced well beyond eps
            let mut vals: Vec<f64> = (0..4 * 6 * 2).map(|i| i as f64 * 0.01).collect();
            for i in (1..vals.len()).rev() {
                vals.swap(i, rng.random_range(0..=i));
            }
            let x = Tensor::new([4, 6, 2], vals)?;
            let r = uniform(rng, &[2, 3, 2], -1.0, 1.0);
            check_gradients(&[x], SUITE_EPS, |t, v| {
                let y = t.max_pool2(v[0])?;
                project(t, y, &r)
            })
        }),
    ));
    v.push((
        "relu_bias",
        Box::new(|rng| {
            let x = off_kink(rng, &[3, 4]);
            let b = Tensor::zeros([4]);
            let r = uniform(rng, &[3, 4], -1.0, 1.0);
            check_gradients(&[x, b], SUITE_EPS, |t, v| {
                let y = t.add_bias(v[0], v[1])?;
                let y = t.relu(y);
                project(t, y, &r)
            })
        }),
    ));
    v.push((
        "elementwise",
        Box::new(|rng| {
            let a = uniform(rng, &[2, 3], -1.0, 1.0);
            let b = uniform(rng, &[2, 3], -1.0, 1.0);
            let c = uniform(rng, &[1], -1.0, 1.0);
            let r = uniform(rng, &[2, 3], -1.0, 1.0);
            check_gradients(&[a, b, c], SUITE_EPS, |t, v| {
                let p = t.mul(v[0], v[1])?;
                let q = t.sub(p, v[2])?;
                let s = t.add(q, v[0])?;
                let w = t.weighted_sum(&[(s, 0.7), (v[1], -1.3)])?;
                project(t, w, &r)
            })
        }),
    ));
    v.push((
        "reduce",
        Box::new(|rng| {
            let build = |t: &mut Tape<f64>, v: &[Var], r: &[Tensor<f64>]| -> Result<Var> {
                let s = t.sum(v[0], &[0])?;
                let m = t.mean(v[0], &[1, 2])?;
                let mx = t.reduce(v[0], Reduction::Max, &[2])?;
                let a = project(t, s, &r[0])?;
                let b = project(t, m, &r[1])?;
                let c = project(t, mx, &r[2])?;
                t.weighted_sum(&[(a, 1.0), (b, 1.0), (c, 1.0)])
            };
            let x = away_from_kinks(
                rng,
                |rng| Ok(uniform(rng, &[3, 4, 2], -1.0, 1.0)),
                |t, x| {
                    let v = t.input(x.clone());
                    t.reduce(v, Reduction::Max, &[2])
                },
            )?;
            let r = [
                uniform(rng, &[4, 2], -1.0, 1.0),
                uniform(rng, &[3], -1.0, 1.0),
                uniform(rng, &[3, 4], -1.0, 1.0),
            ];
            check_gradients(&[x], SUITE_EPS, |t, v| build(t, v, &r))
        }),
    ));
    v.push((
        "linear",
        Box::new(|rng| {
            let x = uniform(rng, &[5], -1.0, 1.0);
            let w = uniform(rng, &[5, 3], -1.0, 1.0);
            let b = uniform(rng, &[3], -1.0, 1.0);
            let r = uniform(rng, &[3], -1.0, 1.0);
            check_gradients(&[x, w, b], SUITE_EPS, |t, v| {
                let y = t.linear(v[0], v[1], v[2])?;
                project(t, y, &r)
            })
        }),
    ));
    v.push((
        "rows_and_columns",
        Box::new(|rng| {
            let a = uniform(rng, &[3, 5], -1.0, 1.0);
            let b = uniform(rng, &[2, 5], -1.0, 1.0);
            let r = uniform(rng, &[4, 3], -1.0, 1.0);
            check_gradients(&[a, b], SUITE_EPS, |t, v| {
                let c = t.concat_rows(&[v[0], v[1]])?;
                let g = t.gather_rows(c, &[4, 0, 0, 2])?;
                let col = t.columns(g, 1, 4)?;
                let rs = t.reshape(col, [4, 3])?;
                project(t, rs, &r)
            })
        }),
    ));
    v.push((
        "softmax_cross_entropy",
        Box::new(|rng| {
            let z = uniform(rng, &[5], -3.0, 3.0);
            let class = rng.random_range(0..5);
            let soft = crate::ops::softmax(uniform(rng, &[5], -2.0, 2.0).data());
            check_gradients(&[z], SUITE_EPS, |t, v| {
                let a = t.softmax_cross_entropy(v[0], &Target::Class(class))?;
                let b = t.softmax_cross_entropy(v[0], &Target::Soft(soft.clone()))?;
                t.add(a, b)
            })
        }),
    ));
    v.push((
        "softmax_rows",
        Box::new(|rng| {
            let z = uniform(rng, &[4, 3], -2.0, 2.0);
            let r = uniform(rng, &[4, 3], -1.0, 1.0);
            check_gradients(&[z], SUITE_EPS, |t, v| {
                let s = t.softmax_rows(v[0])?;
                project(t, s, &r)
            })
        }),
    ));
    v.push((
        "decode_boxes",
        Box::new(|rng| {
            let size = 32;
            let anchors: Vec<Anchor> = (0..3)
                .map(|_| Anchor {
                    cx: rng.random_range(12.0..20.0),
                    cy: rng.random_range(12.0..20.0),
                    side: rng.random_range(4.0..8.0),
                    level: 1,
                })
                .collect();
            let off = uniform(rng, &[3, 4], -0.3, 0.3);
            let r = uniform(rng, &[3, 4], -1.0, 1.0);
            check_gradients(&[off], SUITE_EPS, |t, v| {
                let b = t.decode_boxes(v[0], &anchors, size)?;
                project(t, b, &r)
            })
        }),
    ));
    v.push((
        "r_iou_loss",
        Box::new(|rng| {
            let m = rng.random_range(2..5);
            let boxes = random_boxes(rng, m, 12.0);
            let alpha = rng.random_range(0.5..2.0);
            check_gradients(&[boxes], SUITE_EPS, |t, v| t.r_iou_loss(v[0], alpha))
        }),
    ));
    v.push((
        "r_area_loss",
        Box::new(|rng| {
            let m = rng.random_range(1..5);
            let boxes = random_boxes(rng, m, 32.0);
            let s_obj = rng.random_range(10.0..400.0);
            check_gradients(&[boxes], SUITE_EPS, |t, v| t.r_area_loss(v[0], s_obj, 4))
        }),
    ));
    v.push((
        "ranking_loss",
        Box::new(|rng| {
            let m = rng.random_range(2..7);
            let s = uniform(rng, &[m], -1.0, 1.0);
            let c: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
            check_gradients(&[s], SUITE_EPS, |t, v| t.ranking_loss(v[0], &c, 0.1))
        }),
    ));
    v.push((
        "concentrate_loss",
        Box::new(|rng| {
            let m = rng.random_range(1..4);
            let inputs: Vec<Tensor<f64>> = (0..m).map(|_| uniform(rng, &[4], -2.0, 2.0)).collect();
            let class = rng.random_range(0..4);
            check_gradients(&inputs, SUITE_EPS, |t, v| t.concentrate_loss(v, class))
        }),
    ));
    v.push((
        "hint_loss",
        Box::new(|rng| {
            let hint = uniform(rng, &[3, 3, 4], -1.0, 1.0);
            let guide = uniform(rng, &[3, 3, 2], -1.0, 1.0);
            let w = uniform(rng, &[1, 1, 2, 4], -1.0, 1.0);
            let b = uniform(rng, &[4], -0.5, 0.5);
            let s = uniform(rng, &[5], -2.0, 2.0);
            let teacher = uniform(rng, &[5], -2.0, 2.0);
            let (alpha, beta) = (rng.random_range(0.1..2.0), rng.random_range(0.1..2.0));
            check_gradients(&[hint, guide, w, b, s], SUITE_EPS, |t, v| {
                let inputs = HintInputs {
                    hint: v[0],
                    guide: v[1],
                    regressor_w: v[2],
                    regressor_b: v[3],
                    student_logits: v[4],
                    teacher_logits: &teacher,
                };
                hint_loss(t, &inputs, alpha, beta, 4.0)
            })
        }),
    ));
    v.push((
        "adapt_mask",
        Box::new(|rng| {
            let (h, w) = (rng.random_range(1..6), rng.random_range(1..6));
            let m = uniform(rng, &[7, 6], 0.0, 1.0);
            let r = uniform(rng, &[h, w], -1.0, 1.0);
            check_gradients(&[m], SUITE_EPS, |t, v| {
                let y = t.adapt_mask(v[0], h, w)?;
                project(t, y, &r)
            })
        }),
    ));
    v.push((
        "filter_features",
        Box::new(|rng| {
            let f = uniform(rng, &[3, 4, 3], -1.0, 1.0);
            let m = uniform(rng, &[3, 4], 0.0, 1.0);
            let r = uniform(rng, &[3, 4, 3], -1.0, 1.0);
            check_gradients(&[f, m], SUITE_EPS, |t, v| {
                let y = t.filter_features(v[0], v[1])?;
                project(t, y, &r)
            })
        }),
    ));
    v.push((
        "group_bilinear",
        Box::new(|rng| {
            let groups = rng.random_range(1..4);
            let f = uniform(rng, &[2, 3, 7], -1.0, 1.0);
            let logits = uniform(rng, &[7, groups], -1.0, 1.0);
            let n = crate::paf::bilinear_len(7, groups);
            let r = uniform(rng, &[n], -1.0, 1.0);
            check_gradients(&[f, logits], SUITE_EPS, |t, v| {
                let y = t.group_bilinear(v[0], v[1])?;
                project(t, y, &r)
            })
        }),
    ));
    v.push((
        "fuse_scores",
        Box::new(|rng| {
            let fusion = Fusion::new("csf", 4, true);
            let mut p: ParamStore<f64> = fusion.init();
            p.insert("csf.w", uniform(rng, &[8, 4], -1.0, 1.0));
            p.insert("csf.b", uniform(rng, &[4], -1.0, 1.0));
            let s = uniform(rng, &[4], -2.0, 2.0);
            let t_logits = uniform(rng, &[4], -2.0, 2.0);
            let class = rng.random_range(0..4);
            let inputs_ok = check_gradients(&[s.clone(), t_logits.clone()], SUITE_EPS, |t, v| {
                let y = fusion.forward(t, &p, v[0], v[1])?;
                t.softmax_cross_entropy(y, &Target::Class(class))
            })?;
            let params_ok = check_param_gradients(&p, SUITE_EPS, |t, p| {
                let a = t.constant(s.clone());
                let b = t.constant(t_logits.clone());
                let y = fusion.forward(t, p, a, b)?;
                t.softmax_cross_entropy(y, &Target::Class(class))
            })?;
            Ok(inputs_ok.max(params_ok))
        }),
    ));
    v.push((
        "backbone",
        Box::new(|rng| {
            let config = BackboneConfig {
                stage_channels: [2, 3, 4],
                input_size: 8,
                n_class: 3,
                in_channels: 3,
            };
            let net = Backbone::new("s", config)?;
            let loss = |t: &mut Tape<f64>, p: &ParamStore<f64>, img: &Tensor<f64>, class: usize| {
                let x = t.constant(img.clone());
                let out = net.forward(t, p, x)?;
                t.softmax_cross_entropy(out.logits, &Target::Class(class))
            };
            let (p, img, class) = away_from_kinks(
                rng,
                |rng| {
                    let mut p: ParamStore<f64> = net.init(rng);
                    randomize_biases(rng, &mut p);
                    Ok((p, uniform(rng, &[8, 8, 3], 0.0, 1.0), rng.random_range(0..3)))
                },
                |t, (p, img, class)| loss(t, p, img, *class),
            )?;
            check_param_gradients(&p, SUITE_EPS, |t, p| loss(t, p, &img, class))
        }),
    ));
    v.push((
        "sppn_heads",
        Box::new(|rng| {
            let heads = SppnHeads::new("sppn", [2, 3, 4]);
            let mut p: ParamStore<f64> = heads.init(rng);
            for l in 0..3 {
                let w = uniform(rng, p.get(&format!("sppn.level{l}.w")).shape(), -1.0, 1.0);
                p.insert(format!("sppn.level{l}.w"), w);
            }
            let levels = [
                uniform(rng, &[4, 4, 2], 0.0, 1.0),
                uniform(rng, &[2, 2, 3], 0.0, 1.0),
                uniform(rng, &[1, 1, 4], 0.0, 1.0),
            ];
            let r = uniform(rng, &[21, 5], -1.0, 1.0);
            check_param_gradients(&p, SUITE_EPS, |t, p| {
                let lv = [
                    t.constant(levels[0].clone()),
                    t.constant(levels[1].clone()),
                    t.constant(levels[2].clone()),
                ];
                let y = heads.forward(t, p, lv)?;
                project(t, y, &r)
            })
        }),
    ));
    v.push((
        "teacher",
        Box::new(|rng| {
            let config = TeacherConfig {
                stage_channels: [2, 3, 4],
                groups: 2,
                feature_scale: 3.0,
            };
            let net = Teacher::new("t", config, 8, 3)?;
            let loss = |t: &mut Tape<f64>, p: &ParamStore<f64>, input: &Tensor<f64>, class: usize| {
                let x = t.constant(input.clone());
                let out = net.forward(t, p, x)?;
                t.softmax_cross_entropy(out.logits, &Target::Class(class))
            };
            let (p, input, class) = away_from_kinks(
                rng,
                |rng| {
                    let mut p: ParamStore<f64> = net.init(rng);
                    p.insert("t.group", uniform(rng, &[4, 2], -1.0, 1.0));
                    randomize_biases(rng, &mut p);
                    let input = Tensor::from_fn([8, 8, 5], |i| match (i[2], i[0] < 6) {
                        (4, true) => 1.0,
                        (4, false) => 0.0,
                        _ => rng.random_range(0.0..1.0),
                    });
                    Ok((p, input, rng.random_range(0..3)))
                },
                |t, (p, input, class)| loss(t, p, input, *class),
            )?;
            check_param_gradients(&p, SUITE_EPS, |t, p| loss(t, p, &input, class))
        }),
    ));
    v
}

/// Runs `trials` random checks of every operation.
pub fn run_suite(trials: usize, seed: u64) -> Result<Vec<OpReport>> {
    op_trials()
        .into_iter()
        .enumerate()
        .map(|(i, (op, trial))| {
            let mut worst = 0.0f64;
            for k in 0..trials {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((i as u64) << 32) ^ k as u64);
                worst = worst.max(trial(&mut rng)?);
            }
            Ok(OpReport {
                op,
                trials,
                worst_error: worst,
            })
        })
        .collect()
}
