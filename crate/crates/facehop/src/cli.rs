//! Command-line verbs.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use facehop_core::augment::balance;
use facehop_core::preprocess::{Landmarks, Point};

use crate::config::{RunConfig, VariantName};
use crate::error::{Error, Result};
use crate::format::ModelFile;
use crate::manifest::{self, Record, Row};
use crate::pipeline::{self, Dataset, Repetition};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "facehop", version, about = "Train, evaluate and inspect FaceHop classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on the first split of a manifest and write a model file.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated stratified re-splits with retraining; prints per-classifier accuracy.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Replace the model's stored run configuration.
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        repetitions: Option<usize>,
        /// Score the loaded model on the whole manifest instead of retraining.
        #[arg(long)]
        fixed: bool,
        /// Also write the metrics as JSON lines to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify one image or every entry of a manifest.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        image: Option<PathBuf>,
        /// Eye centers as `left_x,left_y,right_x,right_y`.
        #[arg(long, requires = "image")]
        landmarks: Option<String>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Print the node tree, node counts, feature dims and parameter counts.
    Inspect {
        #[arg(long)]
        model: PathBuf,
        /// List discarded nodes individually.
        #[arg(long)]
        all: bool,
    },
    /// Balance a manifest's minority class; writes images and a manifest with provenance.
    Augment {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset manifest; overrides the config's `manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `I` (all hops) or `II` (hop 2 and hop 3).
    #[arg(long)]
    pub variant: Option<VariantName>,
}

impl RunArgs {
    fn resolve(&self, base: Option<RunConfig>) -> Result<RunConfig> {
        let mut run = match (&self.config, base) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(b)) => b,
            (None, None) => RunConfig::default(),
        };
        if let Some(m) = &self.manifest {
            run.manifest = Some(m.clone());
        }
        if let Some(s) = self.seed {
            run.seed = s;
        }
        if let Some(v) = self.variant {
            run.variant = v;
        }
        run.validate()?;
        Ok(run)
    }

    fn is_empty(&self) -> bool {
        self.config.is_none() && self.manifest.is_none() && self.seed.is_none() && self.variant.is_none()
    }
}

fn load_data(run: &RunConfig) -> Result<Dataset> {
    let path = run
        .manifest
        .as_deref()
        .ok_or_else(|| Error::Usage("no manifest given (use --manifest or set `manifest` in the config)".into()))?;
    pipeline::load_dataset(&manifest::read(path)?, &run.crop_geometry())
}

fn parse_landmarks(text: &str) -> Result<Landmarks> {
    let v: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Usage(format!("landmarks must be four numbers, got {text:?}")))?;
    match v[..] {
        [lx, ly, rx, ry] => Ok(Landmarks::new(Point::new(lx, ly), Point::new(rx, ry))),
        _ => Err(Error::Usage(format!("landmarks must be four numbers, got {text:?}"))),
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train { run, out: path } => train(&run.resolve(None)?, &path, out),
        Command::Eval { model, run, repetitions, fixed, out: jsonl } => {
            let file = ModelFile::load(&model)?;
            let mut cfg = if run.is_empty() { file.run.clone() } else { run.resolve(Some(file.run.clone()))? };
            if let Some(r) = repetitions {
                cfg.repetitions = r;
                cfg.validate()?;
            }
            eval(&file, &cfg, fixed, jsonl.as_deref(), out)
        }
        Command::Predict { model, image, landmarks, manifest } => {
            let file = ModelFile::load(&model)?;
            let geom = file.run.crop_geometry();
            let (records, source) = match (image, manifest) {
                (Some(path), _) => {
                    let landmarks = landmarks.as_deref().map(parse_landmarks).transpose()?;
                    (vec![Record { path, label: 0, landmarks, provenance: None, line: 0 }], PathBuf::from("<args>"))
                }
                (None, Some(m)) => {
                    let m = manifest::read(&m)?;
                    (m.records, m.source)
                }
                (None, None) => return Err(Error::Usage("give --image or --manifest".into())),
            };
            writeln!(out, "path\tlabel\tprobability\t{}", facehop_core::features::BASE_NAMES.join("\t")).map_err(io_err)?;
            for r in &records {
                let img = pipeline::prepare(r, &source, &geom)?;
                let p = file.model.predict(&img)?;
                let base: Vec<String> = p.base.iter().map(|v| format!("{v:.6}")).collect();
                writeln!(out, "{}\t{}\t{:.6}\t{}", r.path.display(), p.label, p.probability, base.join("\t"))
                    .map_err(io_err)?;
            }
            Ok(())
        }
        Command::Inspect { model, all } => {
            let file = ModelFile::load(&model)?;
            writeln!(out, "node tree (root-normalized energies)").map_err(io_err)?;
            write!(out, "{}", report::node_tree(&file.model, all)).map_err(io_err)?;
            write!(out, "{}", report::model_summary(&file.model)).map_err(io_err)
        }
        Command::Augment { run, out: dir } => augment(&run.resolve(None)?, &dir, out),
    }
}

fn train(run: &RunConfig, path: &Path, out: &mut dyn Write) -> Result<()> {
    let data = load_data(run)?;
    let (model, rep) = pipeline::run_repetition(&data, run, 0)?;
    let file = ModelFile::new(run.clone(), model)?;
    file.save(path)?;
    writeln!(
        out,
        "trained on {} images ({} synthesized), tested on {}",
        rep.n_train + rep.synthesized,
        rep.synthesized,
        rep.n_test
    )
    .map_err(io_err)?;
    write!(out, "{}", report::model_summary(&file.model)).map_err(io_err)?;
    write!(out, "{}", report::table(&report::accuracy_rows(&[rep], run.variant.variant()))).map_err(io_err)?;
    writeln!(out, "model written to {}", path.display()).map_err(io_err)
}

fn eval(file: &ModelFile, run: &RunConfig, fixed: bool, jsonl: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let data = load_data(run)?;
    let (reps, variant) = if fixed {
        let scores = pipeline::score(&file.model, &data)?;
        let rep = Repetition { index: 0, n_train: 0, n_test: data.len(), synthesized: 0, scores };
        (vec![rep], file.model.ensemble.variant)
    } else {
        (pipeline::run_protocol(&data, run)?, run.variant.variant())
    };
    let rows = report::accuracy_rows(&reps, variant);
    write!(out, "{}", report::table(&rows)).map_err(io_err)?;
    if let Some(path) = jsonl {
        std::fs::write(path, report::jsonl(&rows)).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn augment(run: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let path = run.manifest.as_deref().ok_or_else(|| Error::Usage("no manifest given".into()))?;
    let m = manifest::read(path)?;
    let data = pipeline::load_dataset(&m, &run.crop_geometry())?;
    let ratio = if run.augment_ratio > 0.0 { run.augment_ratio } else { facehop_core::augment::DEFAULT_RATIO };
    let set = balance(data.images, data.labels, ratio)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rows: Vec<Row> = m
        .records
        .iter()
        .map(|r| Row {
            path: r.path.clone(),
            label: r.label,
            landmarks: r.landmarks,
            provenance: r.provenance.clone().unwrap_or_else(|| "original".into()),
        })
        .collect();
    for (i, s) in set.synthesized.iter().enumerate() {
        let img_path = dir.join(format!("synth_{i:05}.pgm"));
        crate::image_io::write_aligned(&img_path, &s.image)?;
        let sources: Vec<String> = s.sources.iter().map(|j| j.to_string()).collect();
        rows.push(Row {
            path: img_path,
            label: s.label,
            landmarks: None,
            provenance: format!("{}:{}", s.method.name(), sources.join("+")),
        });
    }
    let out_manifest = dir.join("manifest.csv");
    manifest::write(&out_manifest, &rows)?;
    let counts = set.class_counts();
    writeln!(
        out,
        "{} originals + {} synthesized (class counts {} / {}); manifest written to {}",
        set.originals.len(),
        set.synthesized.len(),
        counts[0],
        counts[1],
        out_manifest.display()
    )
    .map_err(io_err)
}
