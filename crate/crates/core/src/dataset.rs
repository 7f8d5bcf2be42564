//! Factorial stimulus design: enumeration, on-disk generation, and manifest
//! loading with invariant checks.
//!
//! Layout under a dataset root:
//!
//! ```text
//! train/poly{n}_rot{i}_bg{w|b}_pos{c|o}_rem00.png
//! test_{pp}/poly{n}_rot{i}_bg{w|b}_pos{c|o}_rem{pp}.png
//! train.jsonl  train.csv  test_{pp}.jsonl  test_{pp}.csv
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    rotation_schedule, Background, GeometryError, Point2, PolygonSpec, RotationScheme,
    MAX_SIDES, MIN_SIDES, REMOVAL_LEVELS, ROTATION_STEPS,
};
use crate::raster::{decode_png, encode_png, render, CanvasConfig, RasterError};

pub const DATASET_VERSION: &str = "1.0";

/// Side counts x rotations x backgrounds x positions.
pub const SPLIT_SIZE: usize =
    (MAX_SIDES - MIN_SIDES + 1) as usize * ROTATION_STEPS * 2 * 2;

pub const NUM_CLASSES: usize = (MAX_SIDES - MIN_SIDES + 1) as usize;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: RasterError,
    },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("manifest for split {split} is invalid: {}", violations.join("; "))]
    Invalid {
        split: String,
        violations: Vec<String>,
    },
    #[error("worker pool: {0}")]
    Pool(String),
}

impl DatasetError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for filesystem failures as opposed to content or invariant failures.
    pub fn is_io(&self) -> bool {
        matches!(self, DatasetError::Io { .. })
    }
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Center,
    /// Shifted left and down by the configured offset.
    Offset,
}

impl Position {
    pub const ALL: [Position; 2] = [Position::Center, Position::Offset];

    pub fn code(self) -> char {
        match self {
            Position::Center => 'c',
            Position::Offset => 'o',
        }
    }
}

/// Which split a record belongs to. Serialized as `train` or `test_{pp}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test(u8),
}

impl Split {
    pub fn removal_pct(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Test(p) => p,
        }
    }

    /// All ten test splits in increasing removal order.
    pub fn tests() -> impl Iterator<Item = Split> {
        REMOVAL_LEVELS.into_iter().map(Split::Test)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => f.write_str("train"),
            Split::Test(p) => write!(f, "test_{p:02}"),
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "train" {
            return Ok(Split::Train);
        }
        s.strip_prefix("test_")
            .and_then(|p| p.parse::<u8>().ok())
            .filter(|p| REMOVAL_LEVELS.contains(p))
            .map(Split::Test)
            .ok_or_else(|| format!("unknown split `{s}`"))
    }
}

impl Serialize for Split {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Split {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything that determines the pixels of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub canvas: CanvasConfig,
    pub circumradius_px: f64,
    pub rotation_scheme: RotationScheme,
    pub offset_px: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            canvas: CanvasConfig::default(),
            circumradius_px: 80.0,
            rotation_scheme: RotationScheme::Uniform15,
            offset_px: 16.0,
        }
    }
}

impl DatasetConfig {
    /// Validates the canvas and checks that every position fits.
    pub fn validate(&self) -> Result<()> {
        self.canvas.validate()?;
        for position in Position::ALL {
            let spec = PolygonSpec {
                n_sides: MIN_SIDES,
                theta_global_deg: 0.0,
                background: Background::Light,
                center: self.center(position),
                circumradius_px: self.circumradius_px,
                removal_pct: 0,
                stroke_width_px: self.canvas.stroke_width_px,
            };
            spec.check_fits(self.canvas.width, self.canvas.height)?;
        }
        Ok(())
    }

    pub fn center(&self, position: Position) -> Point2<f64> {
        let cx = f64::from(self.canvas.width) / 2.0;
        let cy = f64::from(self.canvas.height) / 2.0;
        match position {
            Position::Center => Point2::new(cx, cy),
            // Screen coordinates: left is -x, down is +y.
            Position::Offset => Point2::new(cx - self.offset_px, cy + self.offset_px),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusRecord {
    pub image_id: String,
    pub relative_path: String,
    pub class_label: u8,
    pub n_sides: u32,
    pub theta_index: u32,
    pub theta_deg: f64,
    pub background: Background,
    pub position: Position,
    pub removal_pct: u8,
    pub split: Split,
}

impl StimulusRecord {
    pub fn image_id_for(n_sides: u32, theta_index: u32, bg: Background, pos: Position, removal: u8) -> String {
        format!(
            "poly{n_sides}_rot{theta_index}_bg{}_pos{}_rem{removal:02}",
            bg.code(),
            pos.code()
        )
    }

    /// The factorial cell this record occupies, ignoring removal.
    pub fn factors(&self) -> (u32, u32, Background, Position) {
        (self.n_sides, self.theta_index, self.background, self.position)
    }

    pub fn polygon(&self, cfg: &DatasetConfig) -> PolygonSpec<f64> {
        PolygonSpec {
            n_sides: self.n_sides,
            theta_global_deg: self.theta_deg,
            background: self.background,
            center: cfg.center(self.position),
            circumradius_px: cfg.circumradius_px,
            removal_pct: self.removal_pct,
            stroke_width_px: cfg.canvas.stroke_width_px,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestHeader {
    dataset_version: String,
    split: Split,
    config: DatasetConfig,
    record_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub dataset_version: String,
    pub split: Split,
    pub config: DatasetConfig,
    pub records: Vec<StimulusRecord>,
}

impl DatasetManifest {
    /// Enumerates the full factorial design for one split, in canonical
    /// order (sides, rotation, background, position).
    pub fn enumerate(config: &DatasetConfig, split: Split) -> Result<Self> {
        let removal = split.removal_pct();
        let mut records = Vec::with_capacity(SPLIT_SIZE);
        for n in MIN_SIDES..=MAX_SIDES {
            let angles = rotation_schedule::<f64>(n, config.rotation_scheme)?;
            for (i, theta) in angles.into_iter().enumerate() {
                for bg in Background::ALL {
                    for pos in Position::ALL {
                        let image_id = StimulusRecord::image_id_for(n, i as u32, bg, pos, removal);
                        records.push(StimulusRecord {
                            relative_path: format!("{split}/{image_id}.png"),
                            image_id,
                            class_label: (n - MIN_SIDES) as u8,
                            n_sides: n,
                            theta_index: i as u32,
                            theta_deg: theta,
                            background: bg,
                            position: pos,
                            removal_pct: removal,
                            split,
                        });
                    }
                }
            }
        }
        Ok(Self {
            dataset_version: DATASET_VERSION.to_string(),
            split,
            config: *config,
            records,
        })
    }

    /// Checks every manifest invariant, collecting all violations.
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        let removal = self.split.removal_pct();
        if self.records.len() != SPLIT_SIZE {
            violations.push(format!(
                "split {} has {} records, expected {SPLIT_SIZE}",
                self.split,
                self.records.len()
            ));
        }
        let mut ids = HashSet::new();
        let mut cells = HashSet::new();
        let mut schedules = BTreeMap::new();
        for r in &self.records {
            let id = &r.image_id;
            if !ids.insert(id.as_str()) {
                violations.push(format!("duplicate image_id {id}"));
            }
            if r.split != self.split {
                violations.push(format!("{id}: split {} in manifest for {}", r.split, self.split));
            }
            if r.removal_pct != removal {
                violations.push(format!("{id}: removal_pct {} != {removal}", r.removal_pct));
            }
            if !(MIN_SIDES..=MAX_SIDES).contains(&r.n_sides) {
                violations.push(format!("{id}: n_sides {} out of range", r.n_sides));
                continue;
            }
            if u32::from(r.class_label) + MIN_SIDES != r.n_sides {
                violations.push(format!(
                    "{id}: class_label {} does not match n_sides {} (label mismatch)",
                    r.class_label, r.n_sides
                ));
            }
            if r.theta_index as usize >= ROTATION_STEPS {
                violations.push(format!("{id}: theta_index {} out of range", r.theta_index));
                continue;
            }
            let schedule = schedules.entry(r.n_sides).or_insert_with(|| {
                rotation_schedule::<f64>(r.n_sides, self.config.rotation_scheme)
                    .expect("side count checked above")
            });
            if (schedule[r.theta_index as usize] - r.theta_deg).abs() > 1e-9 {
                violations.push(format!("{id}: theta_deg {} disagrees with schedule", r.theta_deg));
            }
            let expected_id =
                StimulusRecord::image_id_for(r.n_sides, r.theta_index, r.background, r.position, r.removal_pct);
            if *id != expected_id {
                violations.push(format!("{id}: factors imply id {expected_id}"));
            }
            if r.relative_path != format!("{}/{id}.png", self.split) {
                violations.push(format!("{id}: unexpected path {}", r.relative_path));
            }
            if !cells.insert(r.factors()) {
                violations.push(format!("{id}: factor combination repeated"));
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(DatasetError::Invalid {
                split: self.split.to_string(),
                violations,
            })
        }
    }

    pub fn to_jsonl(&self) -> String {
        let header = ManifestHeader {
            dataset_version: self.dataset_version.clone(),
            split: self.split,
            config: self.config,
            record_count: self.records.len(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).map_err(|e| csv_error(e.to_string()))?;
        }
        w.into_inner().map_err(|e| csv_error(e.to_string()))
    }

    /// Parses a JSONL manifest without checking invariants.
    pub fn parse_jsonl(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| DatasetError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty manifest".into()))?;
        let header: ManifestHeader =
            serde_json::from_str(first).map_err(|e| parse_err(1, format!("header: {e}")))?;
        let records = lines
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| parse_err(i + 1, e.to_string())))
            .collect::<Result<Vec<StimulusRecord>>>()?;
        Ok(Self {
            dataset_version: header.dataset_version,
            split: header.split,
            config: header.config,
            records,
        })
    }
}

fn csv_error(message: String) -> DatasetError {
    DatasetError::Parse {
        path: PathBuf::from("<csv>"),
        line: 0,
        message,
    }
}

pub fn manifest_path(root: &Path, split: Split) -> PathBuf {
    root.join(format!("{split}.jsonl"))
}

/// Reads, parses and validates a JSONL manifest.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(|e| DatasetError::io(path, e))?);
        text.push('\n');
    }
    let manifest = DatasetManifest::parse_jsonl(&text, path)?;
    manifest.validate()?;
    Ok(manifest)
}

/// Loads the training manifest and the ten test manifests under `root`.
pub fn load_dataset(root: &Path) -> Result<(DatasetManifest, Vec<DatasetManifest>)> {
    let train = load_manifest(&manifest_path(root, Split::Train))?;
    let tests = Split::tests()
        .map(|s| load_manifest(&manifest_path(root, s)))
        .collect::<Result<Vec<_>>>()?;
    Ok((train, tests))
}

/// Writes `bytes` to `path` through a temporary sibling and a rename, so a
/// reader never sees a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| DatasetError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| DatasetError::io(path, e))
}

/// Runs `job` on a dedicated pool of `workers` threads, or on the global
/// pool when `None`.
pub fn with_workers<R: Send>(workers: Option<usize>, job: impl FnOnce() -> R + Send) -> Result<R> {
    match workers {
        None => Ok(job()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| DatasetError::Pool(e.to_string()))?;
            Ok(pool.install(job))
        }
    }
}

/// Renders and writes every image of the manifests, then the manifests
/// themselves. Manifests are only written once all images succeeded.
pub fn write_splits(root: &Path, manifests: &[DatasetManifest], workers: Option<usize>) -> Result<()> {
    for m in manifests {
        m.config.validate()?;
        let dir = root.join(m.split.to_string());
        fs::create_dir_all(&dir).map_err(|e| DatasetError::io(&dir, e))?;
    }
    let jobs: Vec<(&DatasetManifest, &StimulusRecord)> = manifests
        .iter()
        .flat_map(|m| m.records.iter().map(move |r| (m, r)))
        .collect();
    with_workers(workers, || {
        jobs.par_iter().try_for_each(|(m, r)| {
            let img = render(&r.polygon(&m.config), &m.config.canvas)?;
            write_atomic(&root.join(&r.relative_path), &encode_png(&img.image)?)
        })
    })??;
    for m in manifests {
        write_atomic(&manifest_path(root, m.split), m.to_jsonl().as_bytes())?;
        write_atomic(&root.join(format!("{}.csv", m.split)), &m.to_csv()?)?;
    }
    Ok(())
}

pub fn generate_training_set(root: &Path, config: &DatasetConfig, workers: Option<usize>) -> Result<DatasetManifest> {
    let manifest = DatasetManifest::enumerate(config, Split::Train)?;
    write_splits(root, std::slice::from_ref(&manifest), workers)?;
    Ok(manifest)
}

pub fn generate_test_sets(root: &Path, config: &DatasetConfig, workers: Option<usize>) -> Result<Vec<DatasetManifest>> {
    let manifests = Split::tests()
        .map(|s| DatasetManifest::enumerate(config, s))
        .collect::<Result<Vec<_>>>()?;
    write_splits(root, &manifests, workers)?;
    Ok(manifests)
}

/// Generates the training split and all ten test splits.
pub fn generate_all(
    root: &Path,
    config: &DatasetConfig,
    workers: Option<usize>,
) -> Result<(DatasetManifest, Vec<DatasetManifest>)> {
    let train = DatasetManifest::enumerate(config, Split::Train)?;
    let tests = Split::tests()
        .map(|s| DatasetManifest::enumerate(config, s))
        .collect::<Result<Vec<_>>>()?;
    let mut all = vec![train];
    all.extend(tests);
    write_splits(root, &all, workers)?;
    let tests = all.split_off(1);
    Ok((all.pop().expect("train manifest"), tests))
}

/// Checks that every record's file exists, decodes, and matches the canvas.
pub fn check_files(root: &Path, manifest: &DatasetManifest) -> Result<()> {
    let canvas = &manifest.config.canvas;
    manifest.records.par_iter().try_for_each(|r| {
        let path = root.join(&r.relative_path);
        let bytes = fs::read(&path).map_err(|e| DatasetError::io(&path, e))?;
        let img = decode_png(&bytes).map_err(|source| DatasetError::Image {
            path: path.clone(),
            source,
        })?;
        if (img.width, img.height) != (canvas.width, canvas.height) {
            return Err(DatasetError::Invalid {
                split: manifest.split.to_string(),
                violations: vec![format!(
                    "{}: image is {}x{}, canvas is {}x{}",
                    r.image_id, img.width, img.height, canvas.width, canvas.height
                )],
            });
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn train() -> DatasetManifest {
        DatasetManifest::enumerate(&DatasetConfig::default(), Split::Train).unwrap()
    }

    #[test]
    fn split_names_round_trip() {
        assert_eq!(Split::Train.to_string(), "train");
        assert_eq!(Split::Test(0).to_string(), "test_00");
        assert_eq!(Split::Test(90).to_string(), "test_90");
        assert_eq!("test_40".parse(), Ok(Split::Test(40)));
        assert!("test_45".parse::<Split>().is_err());
        assert!("validation".parse::<Split>().is_err());
    }

    #[test]
    fn training_enumeration_is_factorial() {
        let m = train();
        assert_eq!(m.records.len(), 320);
        m.validate().unwrap();
        let mut per_class = [0; NUM_CLASSES];
        for r in &m.records {
            per_class[r.class_label as usize] += 1;
            assert_eq!(r.removal_pct, 0);
        }
        assert_eq!(per_class, [32; NUM_CLASSES]);
        assert_eq!(m.records[0].image_id, "poly3_rot0_bgw_posc_rem00");
        assert_eq!(m.records[0].relative_path, "train/poly3_rot0_bgw_posc_rem00.png");
    }

    #[test]
    fn test_splits_align_with_training() {
        let t = train();
        for split in Split::tests() {
            let m = DatasetManifest::enumerate(&DatasetConfig::default(), split).unwrap();
            m.validate().unwrap();
            for (a, b) in t.records.iter().zip(&m.records) {
                assert_eq!(a.factors(), b.factors());
                assert_eq!(a.theta_deg, b.theta_deg);
                assert_eq!(b.removal_pct, split.removal_pct());
            }
        }
    }

    #[test]
    fn offset_position_is_left_and_down() {
        let c = DatasetConfig::default().center(Position::Offset);
        assert_eq!((c.x, c.y), (96.0, 128.0));
    }

    #[test]
    fn deleted_record_names_the_split() {
        let mut m = train();
        m.records.remove(17);
        let err = m.validate().unwrap_err().to_string();
        assert!(err.contains("train"), "{err}");
        assert!(err.contains("319 records"), "{err}");
    }

    #[test]
    fn label_mismatch_is_reported() {
        let mut m = train();
        let r = m.records.iter_mut().find(|r| r.n_sides == 3).unwrap();
        r.class_label = 7;
        let id = r.image_id.clone();
        let err = m.validate().unwrap_err().to_string();
        assert!(err.contains("label mismatch") && err.contains(&id), "{err}");
    }

    #[test]
    fn duplicate_id_is_reported() {
        let mut m = train();
        m.records[5] = m.records[4].clone();
        let err = m.validate().unwrap_err().to_string();
        assert!(err.contains("duplicate image_id"), "{err}");
    }

    #[test]
    fn jsonl_round_trip() {
        let m = train();
        let back = DatasetManifest::parse_jsonl(&m.to_jsonl(), Path::new("x")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn csv_has_record_columns() {
        let csv = String::from_utf8(train().to_csv().unwrap()).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "image_id,relative_path,class_label,n_sides,theta_index,theta_deg,background,position,removal_pct,split"
        );
        assert_eq!(
            lines.next().unwrap(),
            "poly3_rot0_bgw_posc_rem00,train/poly3_rot0_bgw_posc_rem00.png,0,3,0,0.0,light,center,0,train"
        );
        assert_eq!(csv.lines().count(), 321);
    }

    #[test]
    fn formula_scheme_is_echoed() {
        let cfg = DatasetConfig {
            rotation_scheme: RotationScheme::Formula,
            ..DatasetConfig::default()
        };
        let m = DatasetManifest::enumerate(&cfg, Split::Train).unwrap();
        m.validate().unwrap();
        assert!(m.to_jsonl().lines().next().unwrap().contains("\"rotation_scheme\":\"formula\""));
    }

    #[test]
    fn oversized_radius_is_rejected() {
        let cfg = DatasetConfig {
            circumradius_px: 100.0,
            ..DatasetConfig::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(DatasetError::Geometry(GeometryError::Clipped { .. }))
        ));
    }
}
