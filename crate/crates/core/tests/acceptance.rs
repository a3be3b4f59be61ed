//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero on any failure.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{nms_brute_force, rasterized_overlap_ratio, role_reference, wrong_pairs, IntBox, Role};
use daf_core::data::{generate, Split, SyntheticSpec};
use daf_core::gradcheck::{run_suite, SUITE_EPS, SUITE_TOLERANCE};
use daf_core::heatmap::{aggregate, binarize, fuse, AggregationMap};
use daf_core::losses::{r_iou_loss, ranking_hard_count, ranking_hinge, ranking_pair_count};
use daf_core::pipeline::{ablation_run, evaluate, metrics_csv, Trainer, TrainConfig, Variant};
use daf_core::sppn::{gaussian_blur, nms, noise_field, region_images, ProposalBox, RegionStyle};
use daf_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

type Check = fn() -> Outcome;

fn gradient_suite() -> Outcome {
    let reports = match run_suite(20, 2024) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("suite error: {e}")),
    };
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed() || r.trials < 20)
        .map(|r| format!("{} ({:.2e})", r.op, r.worst_error))
        .collect();
    let worst = reports.iter().map(|r| r.worst_error).fold(0.0, f64::max);
    outcome(
        failed.is_empty(),
        format!(
            "{} ops x 20 trials, eps {SUITE_EPS:e}, worst {worst:.2e} (limit {SUITE_TOLERANCE:e}){}",
            reports.len(),
            if failed.is_empty() { String::new() } else { format!(", failing: {}", failed.join(", ")) }
        ),
    )
}

fn random_int_box(rng: &mut ChaCha8Rng, span: i64) -> [i64; 4] {
    let x0 = rng.random_range(0..span - 1);
    let y0 = rng.random_range(0..span - 1);
    let x1 = rng.random_range(x0 + 1..=span);
    let y1 = rng.random_range(y0 + 1..=span);
    [x0, y0, x1, y1]
}

fn nms_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = 0;
    let mut kept_total = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=64);
        // Coarse scores force ties so the ordering rule is exercised too.
        let boxes: Vec<IntBox> = (0..n)
            .map(|_| IntBox {
                c: random_int_box(&mut rng, 64),
                score: rng.random_range(0..16) as f32 / 16.0,
                level: rng.random_range(0..3),
            })
            .collect();
        let expected: Vec<ProposalBox> = nms_brute_force(&boxes, 1, 4).into_iter().map(IntBox::to_proposal).collect();
        let proposals: Vec<ProposalBox> = boxes.iter().map(|b| b.to_proposal()).collect();
        let got = nms(&proposals, 0.25);
        kept_total += got.len();
        if got != expected {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("1000 sets, {kept_total} boxes kept, {mismatches} mismatching sets"))
}

fn r_iou_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let a = random_int_box(&mut rng, 24);
        let b = random_int_box(&mut rng, 24);
        let alpha = rng.random_range(0.1..2.0);
        let expected = rasterized_overlap_ratio(a, b, alpha);
        let boxes = [a, b].map(|c| ProposalBox::new(c[0] as f32, c[1] as f32, c[2] as f32, c[3] as f32, 0.0, 0));
        let got = r_iou_loss(&boxes, alpha);
        worst = worst.max((got - expected).abs());
    }
    outcome(worst <= 1e-6, format!("500 pairs, worst abs error {worst:.2e}"))
}

fn random_activation(rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let (h, w, d) = (rng.random_range(2..10), rng.random_range(2..10), rng.random_range(1..6));
    Tensor::from_fn([h, w, d], |_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..3.0) })
}

fn heatmap_properties() -> Outcome {
    let constant = Tensor::<f64>::full([8, 8, 4], 0.7);
    let mask = binarize(&aggregate(&constant).unwrap());
    let empty_level = mask.data().iter().all(|&v| v == 0.0);
    let fused = fuse(&[mask.clone(), mask.clone(), mask], 32).unwrap();
    let empty = empty_level && fused.object_area == 0 && fused.values.data().iter().all(|&v| v == 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut ordered, mut invariant, mut tested) = (0, 0, 0);
    while tested < 200 {
        let act = random_activation(&mut rng);
        let map: AggregationMap<f64> = aggregate(&act).unwrap();
        if map.values.max_value() == map.values.min_value() {
            continue;
        }
        tested += 1;
        let m = binarize(&map);
        let (mut ks, mut kn, mut ds, mut dn) = (0.0, 0, 0.0, 0);
        for (&v, &b) in map.values.data().iter().zip(m.data()) {
            if b == 1.0 {
                ks += v;
                kn += 1;
            } else {
                ds += v;
                dn += 1;
            }
        }
        if kn > 0 && dn > 0 && ks / kn as f64 > ds / dn as f64 {
            ordered += 1;
        }
        let c = rng.random_range(0.05..20.0);
        if binarize(&aggregate(&act.map(|v| v * c)).unwrap()) == m {
            invariant += 1;
        }
    }
    outcome(
        empty && ordered == 200 && invariant == 200,
        format!("constant map empty: {empty}; kept mean above dropped mean {ordered}/200; scale invariant {invariant}/200"),
    )
}

fn ranking_surrogate() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let margin = 0.1;
    let (mut count_ok, mut bound_ok) = (0, 0);
    for _ in 0..200 {
        let m = rng.random_range(2..=6);
        // Values from a small grid so ties occur in both vectors.
        let scores: Vec<f64> = (0..m).map(|_| rng.random_range(0..5) as f64 * 0.25).collect();
        let conf: Vec<f64> = (0..m).map(|_| rng.random_range(0..4) as f64 / 3.0).collect();
        let (wrong, pairs) = wrong_pairs(&scores, &conf);
        if ranking_hard_count(&scores, &conf) == wrong && ranking_pair_count(&conf) == pairs {
            count_ok += 1;
        }
        let surrogate = ranking_hinge(&scores, &conf, margin);
        let bound = if pairs == 0 { 0.0 } else { margin * wrong as f64 / pairs as f64 };
        if surrogate >= bound && surrogate >= 0.0 {
            bound_ok += 1;
        }
    }
    outcome(
        count_ok == 200 && bound_ok == 200,
        format!("hard count matches enumeration {count_ok}/200; surrogate bound holds {bound_ok}/200"),
    )
}

fn region_partition() -> Outcome {
    let size = 32;
    let style = RegionStyle::for_size(size);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (mut exact, mut in_range) = (0, 0);
    let mut roles = [0usize; 3];
    for set in 0..100u64 {
        let image = Tensor::<f32>::from_fn([size, size, 3], |_| rng.random());
        let n = rng.random_range(1..=4);
        let coords: Vec<[f32; 4]> = (0..n)
            .map(|_| {
                let x0 = rng.random_range(0.0..size as f32 - 2.0);
                let y0 = rng.random_range(0.0..size as f32 - 2.0);
                [x0, y0, rng.random_range(x0 + 1.0..size as f32), rng.random_range(y0 + 1.0..size as f32)]
            })
            .collect();
        let boxes: Vec<ProposalBox> = coords.iter().map(|c| ProposalBox::new(c[0], c[1], c[2], c[3], 0.0, 0)).collect();
        let outputs = region_images(&image, &boxes, style, set).unwrap();
        let blurred = gaussian_blur(&image, style.blur_sigma).unwrap();
        let mut set_exact = outputs.len() == n;
        let mut set_range = true;
        for (k, out) in outputs.iter().enumerate() {
            let noise = noise_field(image.shape(), style.noise_std, set + k as u64);
            for y in 0..size {
                for x in 0..size {
                    let role = role_reference(&coords, k, y, x);
                    roles[role as usize] += 1;
                    for c in 0..3 {
                        let (v, orig) = (out.get(&[y, x, c]), image.get(&[y, x, c]));
                        let expected = match role {
                            Role::Keep => orig,
                            Role::Noise => (orig + noise.get(&[y, x, c])).clamp(0.0, 1.0),
                            Role::Blur => blurred.get(&[y, x, c]),
                        };
                        set_exact &= v == expected;
                        set_range &= (0.0..=1.0).contains(&v);
                    }
                }
            }
        }
        exact += set_exact as usize;
        in_range += set_range as usize;
    }
    outcome(
        exact == 100 && in_range == 100,
        format!(
            "exact {exact}/100, in [0,1] {in_range}/100; pixels keep {} noise {} blur {}",
            roles[0], roles[1], roles[2]
        ),
    )
}

fn overfit_sanity() -> Outcome {
    let config = TrainConfig {
        variant: Variant::Baseline,
        data: SyntheticSpec {
            n_class: 2,
            ..SyntheticSpec::default()
        },
        n_train: 8,
        batch_size: 4,
        epochs: 200,
        lr_decay_every: 1000,
        ..TrainConfig::default()
    };
    let train_set = generate(&config.data, Split::Train, 8).unwrap();
    let mut trainer = Trainer::new(&config).unwrap();
    for epoch in 0..config.epochs {
        trainer.run_epoch(&config, &train_set, epoch, |_, _| {}).unwrap();
        let acc = evaluate(&trainer.model, &config, &train_set).unwrap().student_acc;
        if acc == 1.0 {
            return outcome(true, format!("100% train accuracy after {} epochs", epoch + 1));
        }
    }
    let acc = evaluate(&trainer.model, &config, &train_set).unwrap().student_acc;
    outcome(false, format!("train accuracy {:.1}% after 200 epochs", 100.0 * acc))
}

/// Shared configuration of the ablation and the determinism rerun.
fn ablation_config() -> TrainConfig {
    TrainConfig {
        seed: 0,
        epochs: 80,
        n_train: 200,
        n_test: 200,
        data: SyntheticSpec {
            n_class: 8,
            image_size: 64,
            ..SyntheticSpec::default()
        },
        ..TrainConfig::default()
    }
}

const ABLATION: [Variant; 3] = [Variant::Baseline, Variant::Sppn, Variant::Full];

static ABLATION_CSV: std::sync::OnceLock<String> = std::sync::OnceLock::new();

fn ablation_ordering() -> Outcome {
    let rows = match ablation_run(&ablation_config(), &ABLATION) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("training error: {e}")),
    };
    let acc = |v: Variant| rows.iter().find(|(r, _)| *r == v).map(|(_, m)| *m).unwrap();
    let (base, sppn, full) = (acc(Variant::Baseline), acc(Variant::Sppn), acc(Variant::Full));
    let full_row: Vec<_> = rows.iter().filter(|(v, _)| *v == Variant::Full).cloned().collect();
    ABLATION_CSV.set(metrics_csv(&full_row)).ok();
    let tol = 0.01 - 1e-9;
    let fused_vs_student = full.fused_acc >= full.student_acc - tol;
    let sppn_vs_base = sppn.student_acc >= base.student_acc - tol;
    let full_vs_base = full.fused_acc >= base.student_acc + 0.03 - 1e-9;
    outcome(
        fused_vs_student && sppn_vs_base && full_vs_base,
        format!(
            "baseline {:.1}%, sppn {:.1}%, full student {:.1}% teacher {:.1}% fused {:.1}% \
             [fused>=student-1: {fused_vs_student}, sppn>=baseline-1: {sppn_vs_base}, full>=baseline+3: {full_vs_base}]",
            100.0 * base.student_acc,
            100.0 * sppn.student_acc,
            100.0 * full.student_acc,
            100.0 * full.teacher_acc.unwrap_or(f64::NAN),
            100.0 * full.fused_acc,
        ),
    )
}

fn determinism() -> Outcome {
    let first = match ABLATION_CSV.get() {
        Some(csv) => csv.clone(),
        None => match ablation_run(&ablation_config(), &[Variant::Full]) {
            Ok(rows) => metrics_csv(&rows),
            Err(e) => return outcome(false, format!("training error: {e}")),
        },
    };
    let second = match ablation_run(&ablation_config(), &[Variant::Full]) {
        Ok(rows) => metrics_csv(&rows),
        Err(e) => return outcome(false, format!("training error: {e}")),
    };
    outcome(first == second, format!("full variant rerun, {} vs {} bytes", first.len(), second.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check, Duration); 9] = [
        ("gradient_suite", gradient_suite, Duration::from_secs(120)),
        ("nms_oracle", nms_oracle, Duration::from_secs(10)),
        ("r_iou_oracle", r_iou_oracle, Duration::from_secs(5)),
        ("heatmap_properties", heatmap_properties, Duration::from_secs(5)),
        ("ranking_surrogate", ranking_surrogate, Duration::from_secs(5)),
        ("region_partition", region_partition, Duration::from_secs(10)),
        ("overfit_sanity", overfit_sanity, Duration::from_secs(120)),
        ("ablation_ordering", ablation_ordering, Duration::from_secs(30 * 60)),
        ("determinism", determinism, Duration::from_secs(30 * 60)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (name, check, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let ok = result.ok && elapsed <= budget;
        failures += !ok as usize;
        println!(
            "{} {name}: {} ({:.1}s, budget {}s)",
            if ok { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
