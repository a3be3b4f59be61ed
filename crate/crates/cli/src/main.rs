use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use daf_core::container::save_tensor;
use daf_core::data::{generate, sample, Split};
use daf_core::gradcheck::{run_suite, SUITE_EPS, SUITE_TOLERANCE};
use daf_core::pipeline::{
    ablation_run, attend, datasets, evaluate, loss_curve_svg, losses_csv, metrics_csv, parse_variants, train, Model,
    TrainConfig, Variant,
};
use daf_core::sppn::ProposalBox;
use daf_core::Tensor;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder, Rgb, RgbImage};
use serde_json::json;

#[derive(Parser)]
#[command(name = "daf", version, about = "Synthetic fine-grained classification with dual attention fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one variant and write losses, metrics, a loss curve and a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Print the proposals of one image as JSON lines and write a box overlay.
    Propose {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        image: ImageArgs,
        #[arg(long, default_value = "proposals.ppm")]
        out: PathBuf,
    },
    /// Write the location heatmap of one image as PGM and as a tensor record.
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        image: ImageArgs,
        #[arg(long, default_value = "heatmap.pgm")]
        out: PathBuf,
    },
    /// Train and evaluate several variants on the same data; prints a CSV table.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated variant names.
        #[arg(long, default_value = "baseline,sppn,sppn_lhm,sppn_lhm_teacher,full")]
        variants: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write synthetic images as PPM files with a JSON manifest.
    ExportData {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Print the effective configuration as JSON.
    Config {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// JSON configuration; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct ImageArgs {
    /// Checkpoint to load; a freshly initialized model otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// PPM or PGM input image; a synthetic scene from `--split`/`--index` otherwise.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long, default_value_t = 0)]
    index: usize,
}

impl ImageArgs {
    /// The image and, for synthetic scenes, its label.
    fn load(&self, config: &TrainConfig) -> Result<(Tensor<f32>, Option<usize>)> {
        let Some(path) = &self.image else {
            let s = sample(&config.data, self.split.into(), self.index)?;
            return Ok((s.image, Some(s.label)));
        };
        let img = image::open(path).with_context(|| format!("reading {}", path.display()))?.to_rgb8();
        let size = config.data.image_size as u32;
        if img.dimensions() != (size, size) {
            bail!("{} is {}x{}, expected {size}x{size}", path.display(), img.width(), img.height());
        }
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Ok((Tensor::new([size as usize, size as usize, 3], data)?, None))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

impl Common {
    /// File, then command line flags, then `DAF_SEED`.
    fn load(&self) -> Result<TrainConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => TrainConfig::default(),
        };
        if let Some(v) = self.variant {
            config.variant = v;
        }
        if let Some(e) = self.epochs {
            config.epochs = e;
        }
        if let Ok(seed) = std::env::var("DAF_SEED") {
            config.seed = seed.trim().parse().with_context(|| format!("DAF_SEED={seed:?} is not an integer"))?;
        }
        config.validate()?;
        Ok(config)
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Binary PPM for RGB, binary PGM for grey.
fn save_pnm(path: &Path, bytes: &[u8], width: u32, height: u32, color: ExtendedColorType) -> Result<()> {
    let subtype = match color {
        ExtendedColorType::L8 => PnmSubtype::Graymap(SampleEncoding::Binary),
        _ => PnmSubtype::Pixmap(SampleEncoding::Binary),
    };
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    PnmEncoder::new(std::io::BufWriter::new(file))
        .with_subtype(subtype)
        .write_image(bytes, width, height, color)?;
    Ok(())
}

fn save_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    save_pnm(path, img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
}

fn model_for(config: &TrainConfig, checkpoint: Option<&Path>) -> Result<Model> {
    Ok(match checkpoint {
        Some(p) => Model::load(config, p).with_context(|| format!("loading {}", p.display()))?,
        None => Model::new(config)?,
    })
}

fn to_rgb(image: &Tensor<f32>) -> RgbImage {
    let (h, w) = (image.shape()[0] as u32, image.shape()[1] as u32);
    let bytes = image.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    RgbImage::from_raw(w, h, bytes).expect("HWC image with three channels")
}

const BOX_COLORS: [[u8; 3]; 4] = [[255, 40, 40], [40, 220, 40], [60, 120, 255], [255, 220, 0]];

fn draw_box(img: &mut RgbImage, b: &ProposalBox, color: [u8; 3]) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let clamp = |v: f32, hi: i64| (v.floor() as i64).clamp(0, hi - 1);
    let (x0, y0) = (clamp(b.x0, w), clamp(b.y0, h));
    let (x1, y1) = (clamp(b.x1 - 1.0, w), clamp(b.y1 - 1.0, h));
    for x in x0..=x1 {
        img.put_pixel(x as u32, y0 as u32, Rgb(color));
        img.put_pixel(x as u32, y1 as u32, Rgb(color));
    }
    for y in y0..=y1 {
        img.put_pixel(x0 as u32, y as u32, Rgb(color));
        img.put_pixel(x1 as u32, y as u32, Rgb(color));
    }
}

fn run_train(config: &TrainConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (train_set, test_set) = datasets(config)?;
    let mut last_epoch = usize::MAX;
    let (model, logs) = train(config, &train_set, |step, log| {
        if log.epoch != last_epoch {
            last_epoch = log.epoch;
            eprintln!("epoch {} lr {} step {step} loss {:.4}", log.epoch, log.lr, log.report.grand_total);
        }
    })?;
    let metrics = evaluate(&model, config, &test_set)?;
    let table = metrics_csv(&[(config.variant, metrics)]);
    write(&out.join("losses.csv"), &losses_csv(&logs))?;
    write(&out.join("loss_curve.svg"), &loss_curve_svg(&logs))?;
    write(&out.join("metrics.csv"), &table)?;
    write(&out.join("config.json"), &serde_json::to_string_pretty(config)?)?;
    model.save(out.join("model.daft"))?;
    print!("{table}");
    Ok(())
}

fn run_propose(config: &TrainConfig, args: &ImageArgs, out: &Path) -> Result<()> {
    if !config.variant.uses_sppn() {
        bail!("variant {} has no proposal network", config.variant);
    }
    let model = model_for(config, args.checkpoint.as_deref())?;
    let (image, label) = args.load(config)?;
    let (logits, attention) = attend(&model, config, &image)?;
    let mut overlay = to_rgb(&image);
    for (rank, b) in attention.proposals.iter().enumerate() {
        draw_box(&mut overlay, b, BOX_COLORS[rank % BOX_COLORS.len()]);
        let line = json!({
            "rank": rank, "x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1, "score": b.score, "level": b.level,
        });
        println!("{line}");
    }
    let predicted = Tensor::from_vec(logits).argmax();
    match label {
        Some(l) => eprintln!("label {l} predicted {predicted}"),
        None => eprintln!("predicted {predicted}"),
    }
    save_ppm(out, &overlay)?;
    Ok(())
}

fn run_heatmap(config: &TrainConfig, args: &ImageArgs, out: &Path) -> Result<()> {
    let model = model_for(config, args.checkpoint.as_deref())?;
    let (image, _) = args.load(config)?;
    let (_, attention) = attend(&model, config, &image)?;
    let heatmap = attention.heatmap.expect("attend computes the heatmap");
    let size = heatmap.size() as u32;
    let bytes = heatmap.values.data().iter().map(|v| (v * 255.0).round() as u8).collect();
    let grey = GrayImage::from_raw(size, size, bytes).expect("square heatmap");
    save_pnm(out, grey.as_raw(), size, size, ExtendedColorType::L8)?;
    save_tensor(out.with_extension("daft"), &heatmap.values)?;
    println!("{}", json!({ "object_area": heatmap.object_area, "size": size }));
    Ok(())
}

fn run_export(config: &TrainConfig, split: Split, count: usize, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let tag = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    let mut entries = Vec::with_capacity(count);
    for (i, s) in generate(&config.data, split, count)?.iter().enumerate() {
        let file = format!("{tag}_{i:04}.ppm");
        save_ppm(&out.join(&file), &to_rgb(&s.image))?;
        entries.push(json!({ "file": file, "label": s.label, "part_boxes": s.part_boxes }));
    }
    let manifest = json!({ "split": tag, "data": config.data, "samples": entries });
    write(&out.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { common, out } => run_train(&common.load()?, &out),
        Command::Eval { common, checkpoint, split } => {
            let config = common.load()?;
            let model = model_for(&config, Some(&checkpoint))?;
            let (train_set, test_set) = datasets(&config)?;
            let set = match split {
                SplitArg::Train => train_set,
                SplitArg::Test => test_set,
            };
            print!("{}", metrics_csv(&[(config.variant, evaluate(&model, &config, &set)?)]));
            Ok(())
        }
        Command::Propose { common, image, out } => run_propose(&common.load()?, &image, &out),
        Command::Heatmap { common, image, out } => run_heatmap(&common.load()?, &image, &out),
        Command::Ablate { common, variants, out } => {
            let config = common.load()?;
            let table = metrics_csv(&ablation_run(&config, &parse_variants(&variants)?)?);
            if let Some(path) = out {
                write(&path, &table)?;
            }
            print!("{table}");
            Ok(())
        }
        Command::Gradcheck { trials, seed } => {
            let reports = run_suite(trials, seed)?;
            println!("op,trials,worst_relative_error,status");
            for r in &reports {
                println!("{},{},{:.3e},{}", r.op, r.trials, r.worst_error, if r.passed() { "ok" } else { "FAIL" });
            }
            let failed = reports.iter().filter(|r| !r.passed()).count();
            if failed > 0 {
                bail!("{failed} operations exceed relative error {SUITE_TOLERANCE:e} at eps {SUITE_EPS:e}");
            }
            Ok(())
        }
        Command::ExportData { common, split, count, out } => run_export(&common.load()?, split.into(), count, &out),
        Command::Config { common } => {
            println!("{}", serde_json::to_string_pretty(&common.load()?)?);
            Ok(())
        }
    }
}
