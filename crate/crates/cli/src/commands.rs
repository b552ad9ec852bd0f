//! The five subcommands. Each has a serializable config with defaults, a
//! clap argument struct whose flags override it, and an entry point.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::Args;
use ladder_core::evaluation::{aggregate, csv_row, match_detections, report, DetectionReport, CSV_HEADER};
use ladder_core::geometry::{Frame, Point2, Quad};
use ladder_core::imaging::{load_image, save_png16, save_png8, GrayImage};
use ladder_core::ladder::{
    run_ladder, save_trace, CornerPredictor, DetectionFile, LadderConfig, NetPredictor, OraclePredictor,
};
use ladder_core::neural::{load_checkpoint, save_checkpoint, AdamConfig, NetConfig, Network};
use ladder_core::rng::derive_seed;
use ladder_core::synth::{
    generate_dataset, split_indices, AnnotatedImage, AnnotationFile, ChainSpecRange, SplitFractions,
};
use ladder_core::training::{
    build_examples, calibrate_output_bias, example_keys, train as fit, write_history_csv, AugmentConfig, TrainConfig,
};
use ladder_core::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifest::{load_config, read_json, sidecar, unix_now, write_json, RunManifest};

const SPLITS: [&str; 3] = ["train", "val", "test"];

fn required<T>(v: Option<T>, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing required setting '{what}'")))
}

fn resolve<T: Default + for<'de> Deserialize<'de>>(config: &Option<PathBuf>, command: &str) -> Result<T> {
    match config {
        Some(p) => load_config(p, command),
        None => Ok(T::default()),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn image_path(dir: &Path, name: &str) -> PathBuf {
    dir.join("images").join(format!("{name}.png"))
}

fn annotation_path(dir: &Path, name: &str) -> PathBuf {
    dir.join("annotations").join(format!("{name}.json"))
}

fn read_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Loads the images and annotations listed in `<dir>/<split>.txt`.
pub fn load_split(dir: &Path, split: &str) -> Result<Vec<AnnotatedImage>> {
    let names = read_list(&dir.join(format!("{split}.txt")))?;
    names
        .par_iter()
        .map(|name| {
            let ann = AnnotationFile::load(&annotation_path(dir, name))?.annotation()?;
            Ok(AnnotatedImage {
                name: name.clone(),
                image: load_image(&image_path(dir, name))?,
                annotation: ann,
            })
        })
        .collect()
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub out: Option<PathBuf>,
    pub count: usize,
    pub seed: u64,
    pub preset: String,
    /// Overrides the preset when set.
    pub ranges: Option<ChainSpecRange>,
    pub split: SplitFractions,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            out: None,
            count: 0,
            seed: 0,
            preset: "lumbar".into(),
            ranges: None,
            split: SplitFractions::default(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// JSON config or a manifest from an earlier synth run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Chain family: lumbar or wholespine.
    #[arg(long)]
    pub preset: Option<String>,
    /// JSON file with a full chain distribution; replaces the preset.
    #[arg(long)]
    pub spec_file: Option<PathBuf>,
    /// Train, val and test fractions, e.g. 0.8,0.1,0.1.
    #[arg(long, value_delimiter = ',')]
    pub split: Option<Vec<f64>>,
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let started = unix_now();
    let mut cfg: SynthConfig = resolve(&args.config, "synth")?;
    if let Some(v) = args.out {
        cfg.out = Some(v);
    }
    if let Some(v) = args.count {
        cfg.count = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.preset {
        cfg.preset = v;
        cfg.ranges = None;
    }
    if let Some(p) = &args.spec_file {
        cfg.ranges = Some(read_json(p)?);
    }
    if let Some(v) = args.split {
        if v.len() != 3 {
            return Err(Error::Config(format!("--split takes 3 fractions, got {}", v.len())));
        }
        cfg.split = SplitFractions {
            train: v[0],
            val: v[1],
            test: v[2],
        };
    }
    if cfg.ranges.is_none() {
        cfg.ranges = Some(ChainSpecRange::preset(&cfg.preset)?);
    }
    let out = required(cfg.out.clone(), "out")?;
    if cfg.count == 0 {
        return Err(Error::Config(
            "refusing to generate an empty dataset (count = 0)".into(),
        ));
    }
    let splits = split_indices(cfg.count, cfg.split, cfg.seed)?;
    let data = generate_dataset(cfg.count, cfg.ranges.as_ref().expect("resolved above"), cfg.seed)?;

    create_dir(&out.join("images"))?;
    create_dir(&out.join("annotations"))?;
    data.par_iter().try_for_each(|s| {
        save_png16(&s.image, &image_path(&out, &s.name))?;
        s.annotation
            .to_file(&format!("images/{}.png", s.name))
            .save(&annotation_path(&out, &s.name))
    })?;
    let mut manifest = RunManifest::new("synth", &cfg, Some(cfg.seed), started)?;
    for (split, ids) in SPLITS.iter().zip(&splits) {
        let path = out.join(format!("{split}.txt"));
        let body: String = ids.iter().map(|&i| format!("{}\n", data[i].name)).collect();
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        manifest.outputs.push(path);
    }
    manifest.outputs.push(out.join("images"));
    manifest.outputs.push(out.join("annotations"));
    println!(
        "wrote {} images to {} (train {}, val {}, test {})",
        data.len(),
        out.display(),
        splits[0].len(),
        splits[1].len(),
        splits[2].len()
    );
    manifest.save(&out.join("manifest.json"))
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCommandConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub preset: String,
    /// Overrides the preset when set.
    pub net: Option<NetConfig>,
    /// Master seed; initialization, shuffling and augmentation streams are
    /// derived from it.
    pub seed: u64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_improvement: f64,
    pub adam: AdamConfig,
    pub augment: Option<AugmentConfig>,
    /// Start the output bias at the mean training target.
    pub calibrate_bias: bool,
    pub loss_csv: Option<PathBuf>,
}

impl Default for TrainCommandConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            data: None,
            out: None,
            preset: "desk".into(),
            net: None,
            seed: 0,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            min_improvement: t.min_improvement,
            adam: AdamConfig::default(),
            augment: t.augment,
            calibrate_bias: true,
            loss_csv: None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Network preset: desk or paper.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Probability of applying the blur augmentation to an example.
    #[arg(long)]
    pub blur_prob: Option<f64>,
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub no_calibrate_bias: bool,
    /// Loss history CSV (defaults to `<out>.loss.csv`).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

pub fn train(args: TrainArgs) -> Result<()> {
    let started = unix_now();
    let mut cfg: TrainCommandConfig = resolve(&args.config, "train")?;
    if let Some(v) = args.data {
        cfg.data = Some(v);
    }
    if let Some(v) = args.out {
        cfg.out = Some(v);
    }
    if let Some(v) = args.preset {
        cfg.preset = v;
        cfg.net = None;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = args.patience {
        cfg.patience = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.adam.lr = v;
    }
    if args.no_augment {
        cfg.augment = None;
    }
    if let (Some(p), Some(a)) = (args.blur_prob, cfg.augment.as_mut()) {
        a.blur_prob = p;
    }
    if args.no_calibrate_bias {
        cfg.calibrate_bias = false;
    }
    if let Some(v) = args.loss_csv {
        cfg.loss_csv = Some(v);
    }
    if cfg.net.is_none() {
        cfg.net = Some(NetConfig::preset(&cfg.preset)?);
    }
    if let Some(a) = cfg.augment.as_mut() {
        a.seed = derive_seed(cfg.seed, &[2]);
    }
    let data = required(cfg.data.clone(), "data")?;
    let out = required(cfg.out.clone(), "out")?;
    let loss_csv = cfg.loss_csv.clone().unwrap_or_else(|| sidecar(&out, ".loss.csv"));
    cfg.loss_csv = Some(loss_csv.clone());
    let net_cfg = cfg.net.clone().expect("resolved above");
    net_cfg.validate()?;
    cfg.adam.validate()?;

    let train_set = load_split(&data, "train")?;
    let val_set = load_split(&data, "val")?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data(format!(
            "{} needs non-empty train and val splits (found {} and {})",
            data.display(),
            train_set.len(),
            val_set.len()
        )));
    }
    let mut net = Network::<f32>::new(net_cfg.clone(), derive_seed(cfg.seed, &[1]))?;
    if cfg.calibrate_bias {
        let keys = example_keys(&train_set);
        let examples = build_examples(&train_set, &keys, None, net_cfg.input_size)?;
        calibrate_output_bias(&mut net, &examples);
    }
    let train_cfg = TrainConfig {
        batch_size: cfg.batch_size,
        max_epochs: cfg.max_epochs,
        patience: cfg.patience,
        min_improvement: cfg.min_improvement,
        seed: derive_seed(cfg.seed, &[3]),
        augment: cfg.augment,
    };
    let outcome = fit(net, &train_set, &val_set, &cfg.adam, &train_cfg)?;
    save_checkpoint(&outcome.network, &out)?;
    write_history_csv(&outcome.history, &loss_csv)?;
    match (outcome.best_epoch, outcome.best_val_loss()) {
        (Some(e), Some(l)) => println!("validation loss {l:.6} (epoch {e} of {})", outcome.history.len()),
        _ => println!("no epochs run; checkpoint holds the initial network"),
    }
    let mut manifest = RunManifest::new("train", &cfg, Some(cfg.seed), started)?;
    manifest.inputs.push(data);
    manifest.outputs.extend([out.clone(), loss_csv]);
    manifest.save(&sidecar(&out, ".manifest.json"))
}

// ---------------------------------------------------------------- run

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunCommandConfig {
    /// Single image mode.
    pub image: Option<PathBuf>,
    /// Dataset mode: every image of `split` in this directory.
    pub data: Option<PathBuf>,
    pub split: String,
    pub checkpoint: Option<PathBuf>,
    /// Use the ground-truth oracle instead of a network.
    pub oracle: bool,
    /// Annotation supplying the seed (instance 0) and the oracle truth.
    pub annotation: Option<PathBuf>,
    pub seed_quad: Option<[[f64; 2]; 4]>,
    pub seed_label: Option<String>,
    pub iterations: usize,
    pub expansion: f64,
    /// Output file (single image) or directory (dataset).
    pub out: Option<PathBuf>,
    pub trace: bool,
}

impl Default for RunCommandConfig {
    fn default() -> Self {
        Self {
            image: None,
            data: None,
            split: "test".into(),
            checkpoint: None,
            oracle: false,
            annotation: None,
            seed_quad: None,
            seed_label: None,
            iterations: ladder_core::ladder::WHOLE_SPINE_ITERATIONS,
            expansion: ladder_core::training::PATCH_EXPANSION,
            out: None,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "data")]
    pub image: Option<PathBuf>,
    /// Dataset directory; runs every image listed in `<split>.txt`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Predict with ground truth from the annotation (losslessness check).
    #[arg(long)]
    pub oracle: bool,
    /// Annotation JSON; its first quad seeds the ladder.
    #[arg(long)]
    pub annotation: Option<PathBuf>,
    /// Seed corners TL, TR, BR, BL as x0,y0,x1,y1,x2,y2,x3,y3.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub seed_quad: Option<Vec<f64>>,
    /// Name of the seed instance; later detections are labelled from it.
    #[arg(long)]
    pub seed_label: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Iteration preset: lumbar (6) or wholespine (23).
    #[arg(long, conflicts_with = "iterations")]
    pub preset: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the per-step trace.
    #[arg(long)]
    pub trace: bool,
}

enum Predictor {
    Net(NetPredictor),
    Oracle(usize),
}

impl Predictor {
    fn size(&self) -> usize {
        match self {
            Predictor::Net(n) => n.input_size(),
            Predictor::Oracle(s) => *s,
        }
    }
}

fn run_one(
    img: &GrayImage,
    truth: Option<&[ladder_core::Quad]>,
    seed: &Quad,
    predictor: &Predictor,
    ladder: &LadderConfig,
) -> Result<ladder_core::LadderState> {
    match predictor {
        Predictor::Net(p) => run_ladder(img, seed, p, ladder),
        Predictor::Oracle(size) => {
            let truth = truth.ok_or_else(|| Error::Config("--oracle needs an annotation".into()))?;
            run_ladder(img, seed, &OraclePredictor::new(truth.to_vec(), *size)?, ladder)
        }
    }
}

pub fn run(args: RunArgs) -> Result<()> {
    let started = unix_now();
    let mut cfg: RunCommandConfig = resolve(&args.config, "run")?;
    if let Some(v) = args.image {
        cfg.image = Some(v);
        cfg.data = None;
    }
    if let Some(v) = args.data {
        cfg.data = Some(v);
        cfg.image = None;
    }
    if let Some(v) = args.split {
        cfg.split = v;
    }
    if let Some(v) = args.checkpoint {
        cfg.checkpoint = Some(v);
    }
    if args.oracle {
        cfg.oracle = true;
    }
    if let Some(v) = args.annotation {
        cfg.annotation = Some(v);
    }
    if let Some(v) = args.seed_quad {
        if v.len() != 8 {
            return Err(Error::Config(format!("--seed-quad takes 8 numbers, got {}", v.len())));
        }
        cfg.seed_quad = Some([[v[0], v[1]], [v[2], v[3]], [v[4], v[5]], [v[6], v[7]]]);
    }
    if let Some(v) = args.seed_label {
        cfg.seed_label = Some(v);
    }
    if let Some(v) = args.iterations {
        cfg.iterations = v;
    }
    if let Some(p) = args.preset {
        cfg.iterations = LadderConfig::preset(&p, 1)?.iterations;
    }
    if let Some(v) = args.out {
        cfg.out = Some(v);
    }
    if args.trace {
        cfg.trace = true;
    }
    let out = required(cfg.out.clone(), "out")?;
    let predictor = match (&cfg.checkpoint, cfg.oracle) {
        (Some(_), true) => return Err(Error::Config("use either --checkpoint or --oracle, not both".into())),
        (None, false) => return Err(Error::Config("one of --checkpoint or --oracle is required".into())),
        (Some(p), false) => Predictor::Net(NetPredictor::new(load_checkpoint(p)?)),
        (None, true) => Predictor::Oracle(NetConfig::desk().input_size),
    };
    let ladder = LadderConfig {
        expansion: cfg.expansion,
        ..LadderConfig::new(cfg.iterations, predictor.size())
    };
    ladder.validate()?;
    let mut manifest = RunManifest::new("run", &cfg, None, started)?;
    if let Some(p) = &cfg.checkpoint {
        manifest.inputs.push(p.clone());
    }

    match (&cfg.image, &cfg.data) {
        (Some(image), None) => {
            let img = load_image(image)?;
            let ann = cfg
                .annotation
                .as_ref()
                .map(|p| AnnotationFile::load(p)?.annotation())
                .transpose()?;
            let (seed, default_label) = match (&cfg.seed_quad, &ann) {
                (Some(q), _) => (Quad::from_xy(*q, Frame::Image)?, "S1".to_string()),
                (None, Some(a)) if !a.is_empty() => (a.quads[0], a.labels[0].clone()),
                _ => return Err(Error::Config("a seed is required: --seed-quad or --annotation".into())),
            };
            let state = run_one(
                &img,
                ann.as_ref().map(|a| a.quads.as_slice()),
                &seed,
                &predictor,
                &ladder,
            )?;
            let label = cfg.seed_label.clone().unwrap_or(default_label);
            let name = image
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            DetectionFile::from_state(&name, &seed, &label, cfg.iterations, &state).save(&out)?;
            manifest.inputs.push(image.clone());
            manifest.inputs.extend(cfg.annotation.clone());
            manifest.outputs.push(out.clone());
            if cfg.trace {
                let p = sidecar(&out, ".trace.json");
                save_trace(&state.trace, &p)?;
                manifest.outputs.push(p);
            }
            println!("{} detections -> {}", state.detections.len(), out.display());
            manifest.save(&sidecar(&out, ".manifest.json"))
        }
        (None, Some(data)) => {
            if cfg.seed_quad.is_some() {
                return Err(Error::Config("--seed-quad applies to single images only".into()));
            }
            let set = load_split(data, &cfg.split)?;
            create_dir(&out)?;
            let written: Vec<PathBuf> = set
                .par_iter()
                .map(|s| -> Result<Vec<PathBuf>> {
                    let seed = s
                        .annotation
                        .quads
                        .first()
                        .ok_or_else(|| Error::Data(format!("{} has no seed instance", s.name)))?;
                    let state =
                        run_one(&s.image, Some(&s.annotation.quads), seed, &predictor, &ladder).inspect_err(|_| {
                            eprintln!("ladder failed on {}", s.name);
                        })?;
                    let label = cfg.seed_label.clone().unwrap_or_else(|| s.annotation.labels[0].clone());
                    let p = out.join(format!("{}.json", s.name));
                    DetectionFile::from_state(&format!("{}.png", s.name), seed, &label, cfg.iterations, &state)
                        .save(&p)?;
                    let mut files = vec![p];
                    if cfg.trace {
                        let t = out.join(format!("{}.trace.json", s.name));
                        save_trace(&state.trace, &t)?;
                        files.push(t);
                    }
                    Ok(files)
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect();
            manifest.inputs.push(data.clone());
            manifest.outputs = written;
            println!("ran {} images -> {}", set.len(), out.display());
            manifest.save(&out.join("manifest.json"))
        }
        _ => Err(Error::Config("exactly one of --image or --data is required".into())),
    }
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalCommandConfig {
    pub detections: Option<PathBuf>,
    /// Directory of annotation JSONs, or a dataset directory.
    pub truth: Option<PathBuf>,
    /// Restrict the truth set to the names in this list file.
    pub names: Option<PathBuf>,
    /// Millimetres per pixel; LE is reported in pixels without it.
    pub spacing: Option<f64>,
    /// Output prefix; writes `<out>.csv` and `<out>.json`.
    pub out: Option<PathBuf>,
    pub subset: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub detections: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub names: Option<PathBuf>,
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Row label in the CSV.
    #[arg(long)]
    pub subset: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageReport {
    pub name: String,
    pub report: DetectionReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutput {
    pub subset: String,
    pub pooled: DetectionReport,
    pub images: Vec<ImageReport>,
}

/// Names of `*.json` files in `dir`, skipping traces and manifests.
fn json_stems(dir: &Path) -> Result<BTreeSet<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeSet::new();
    for entry in entries {
        let name = entry
            .map_err(|e| Error::io(dir, e))?
            .file_name()
            .to_string_lossy()
            .into_owned();
        if name == "manifest.json" || name.ends_with(".trace.json") || name.ends_with(".manifest.json") {
            continue;
        }
        if let Some(stem) = name.strip_suffix(".json") {
            out.insert(stem.to_string());
        }
    }
    Ok(out)
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let started = unix_now();
    let mut cfg: EvalCommandConfig = resolve(&args.config, "eval")?;
    if let Some(v) = args.detections {
        cfg.detections = Some(v);
    }
    if let Some(v) = args.truth {
        cfg.truth = Some(v);
    }
    if let Some(v) = args.names {
        cfg.names = Some(v);
    }
    if let Some(v) = args.spacing {
        cfg.spacing = Some(v);
    }
    if let Some(v) = args.out {
        cfg.out = Some(v);
    }
    if let Some(v) = args.subset {
        cfg.subset = Some(v);
    }
    let det_dir = required(cfg.detections.clone(), "detections")?;
    let truth_arg = required(cfg.truth.clone(), "truth")?;
    let out = required(cfg.out.clone(), "out")?;
    let truth_dir = if truth_arg.join("annotations").is_dir() {
        truth_arg.join("annotations")
    } else {
        truth_arg.clone()
    };
    let det_names = json_stems(&det_dir)?;
    let mut truth_names = json_stems(&truth_dir)?;
    if let Some(list) = &cfg.names {
        let keep: BTreeSet<String> = read_list(list)?.into_iter().collect();
        truth_names.retain(|n| keep.contains(n));
    }
    let only_det: Vec<&String> = det_names.difference(&truth_names).collect();
    let only_truth: Vec<&String> = truth_names.difference(&det_names).collect();
    if !only_det.is_empty() || !only_truth.is_empty() {
        return Err(Error::Data(format!(
            "detection and truth sets differ; without truth: {only_det:?}; without detections: {only_truth:?}"
        )));
    }
    if det_names.is_empty() {
        return Err(Error::Data(format!("no detection files in {}", det_dir.display())));
    }
    let names: Vec<String> = det_names.into_iter().collect();
    let images = names
        .par_iter()
        .map(|name| {
            let pred = DetectionFile::load(&det_dir.join(format!("{name}.json")))?.quads()?;
            let truth = AnnotationFile::load(&truth_dir.join(format!("{name}.json")))?.annotation()?;
            Ok(ImageReport {
                name: name.clone(),
                report: report(&match_detections(&pred, &truth.quads), cfg.spacing)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pooled = aggregate(&images.iter().map(|r| r.report.clone()).collect::<Vec<_>>())?;
    let subset = cfg.subset.clone().unwrap_or_else(|| "all".into());
    let row = csv_row(&subset, &pooled);
    let csv_path = sidecar(&out, ".csv");
    let json_path = sidecar(&out, ".json");
    std::fs::write(&csv_path, format!("{CSV_HEADER}\n{row}\n")).map_err(|e| Error::io(&csv_path, e))?;
    write_json(&json_path, &EvalOutput { subset, pooled, images })?;
    println!("{CSV_HEADER}\n{row}");
    let mut manifest = RunManifest::new("eval", &cfg, None, started)?;
    manifest.inputs.extend([det_dir, truth_arg]);
    manifest.outputs.extend([csv_path, json_path]);
    manifest.save(&sidecar(&out, ".manifest.json"))
}

// ---------------------------------------------------------------- render

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderCommandConfig {
    pub image: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Detection JSON written by `run`.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Annotation JSON drawn in a darker tone.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Output PNG (8-bit).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const DETECTION_TONE: f32 = 1.0;
pub const TRUTH_TONE: f32 = 0.5;

/// Marks the pixels under the quad outline with `value`.
pub fn draw_quad(img: &mut GrayImage, q: &Quad, value: f32) {
    let c = q.corners();
    for i in 0..4 {
        let (a, b) = (c[i], c[(i + 1) % 4]);
        let steps = (a.distance(&b) * 4.0).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let p = Point2::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
            let (x, y) = (p.x.floor(), p.y.floor());
            if x >= 0.0 && y >= 0.0 && (x as usize) < img.width() && (y as usize) < img.height() {
                img.set(x as usize, y as usize, value);
            }
        }
    }
}

pub fn render(args: RenderArgs) -> Result<()> {
    let started = unix_now();
    let mut cfg: RenderCommandConfig = resolve(&args.config, "render")?;
    if let Some(v) = args.image {
        cfg.image = Some(v);
    }
    if let Some(v) = args.detections {
        cfg.detections = Some(v);
    }
    if let Some(v) = args.truth {
        cfg.truth = Some(v);
    }
    if let Some(v) = args.out {
        cfg.out = Some(v);
    }
    let image = required(cfg.image.clone(), "image")?;
    let detections = required(cfg.detections.clone(), "detections")?;
    let out = required(cfg.out.clone(), "out")?;
    let mut img = load_image(&image)?;
    if let Some(t) = &cfg.truth {
        for q in AnnotationFile::load(t)?.annotation()?.quads {
            draw_quad(&mut img, &q, TRUTH_TONE);
        }
    }
    for q in DetectionFile::load(&detections)?.quads()? {
        draw_quad(&mut img, &q, DETECTION_TONE);
    }
    save_png8(&img, &out)?;
    let mut manifest = RunManifest::new("render", &cfg, None, started)?;
    manifest.inputs.extend([image, detections]);
    manifest.inputs.extend(cfg.truth.clone());
    manifest.outputs.push(out.clone());
    manifest.save(&sidecar(&out, ".manifest.json"))
}
