use std::fmt;
use std::path::{Path, PathBuf};

use polyclosure::dataset::{self, SPLIT_SIZE};
use polyclosure::protocol::{self, prediction_file};
use polyclosure::{
    CanvasConfig, ClosureReport, DatasetConfig, Error, RotationScheme, Split, TemplateModel,
    REMOVAL_LEVELS,
};

#[derive(Debug)]
pub enum CommandError {
    Usage(String),
    Run(Error),
}

impl CommandError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CommandError::Run(e) if e.is_io() => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CommandError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CommandError::Usage(m) => f.write_str(m),
            CommandError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl<E: Into<Error>> From<E> for CommandError {
    fn from(e: E) -> Self {
        CommandError::Run(e.into())
    }
}

pub type Result<T> = std::result::Result<T, CommandError>;

pub struct GenerateOptions {
    pub out: PathBuf,
    pub canvas_size: u32,
    pub radius: f64,
    pub stroke_width: f64,
    pub rotation_scheme: RotationScheme,
    pub workers: Option<usize>,
    pub antialias: bool,
}

fn check_workers(workers: Option<usize>) -> Result<()> {
    if workers == Some(0) {
        return Err(CommandError::Usage("--workers must be at least 1".into()));
    }
    Ok(())
}

pub fn generate(opts: &GenerateOptions) -> Result<()> {
    check_workers(opts.workers)?;
    let config = DatasetConfig {
        canvas: CanvasConfig {
            width: opts.canvas_size,
            height: opts.canvas_size,
            stroke_width_px: opts.stroke_width,
            antialias: opts.antialias,
            ..CanvasConfig::default()
        },
        circumradius_px: opts.radius,
        rotation_scheme: opts.rotation_scheme,
        ..DatasetConfig::default()
    };
    config.validate()?;
    let (train, tests) = dataset::generate_all(&opts.out, &config, opts.workers)?;
    let test_images: usize = tests.iter().map(|m| m.records.len()).sum();
    println!("train: {} images", train.records.len());
    println!("test: {} splits x {SPLIT_SIZE} images = {test_images}", tests.len());
    println!(
        "total: {} images, {} manifests in {}",
        train.records.len() + test_images,
        1 + tests.len(),
        opts.out.display()
    );
    Ok(())
}

pub fn baseline(root: &Path, out: &Path, workers: Option<usize>) -> Result<()> {
    check_workers(workers)?;
    let run = || -> Result<()> {
        let (train, tests) = dataset::load_dataset(root)?;
        let model = TemplateModel::fit(&train, root)?;
        std::fs::create_dir_all(out).map_err(|e| Error::from(dataset::DatasetError::io(out, e)))?;
        for m in &tests {
            let preds = model.predict_split("baseline", m, root)?;
            let path = prediction_file(out, m.split);
            preds.save(&path)?;
            println!("{}: {} predictions -> {}", m.split, preds.entries.len(), path.display());
        }
        Ok(())
    };
    dataset::with_workers(workers, run)?
}

pub struct ScoreOptions {
    pub dataset: PathBuf,
    pub predictions: PathBuf,
    pub model: String,
    pub out: PathBuf,
    pub margin: f64,
    pub vertex_removal: u8,
}

pub fn score(opts: &ScoreOptions) -> Result<()> {
    if !REMOVAL_LEVELS.contains(&opts.vertex_removal) {
        return Err(CommandError::Usage(format!(
            "--removal-for-vertex-report must be one of {REMOVAL_LEVELS:?}"
        )));
    }
    let (_, tests) = dataset::load_dataset(&opts.dataset)?;
    let preds = protocol::load_predictions(&opts.model, &opts.predictions)?;
    let report = ClosureReport::build(&opts.model, &tests, &preds, opts.margin)?;
    report.write_files(&opts.out, opts.vertex_removal)?;
    for level in &report.accuracy_by_removal {
        println!(
            "{}: accuracy {:.4} ({}/{})",
            Split::Test(level.removal_pct),
            level.accuracy,
            level.correct,
            level.total
        );
    }
    match report.max_sustained_removal {
        Some(r) => println!("max sustained removal: {r}% (margin {})", report.margin),
        None => println!("max sustained removal: none (margin {})", report.margin),
    }
    println!("reports written to {}", opts.out.display());
    Ok(())
}
