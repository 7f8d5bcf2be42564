//! Closure measurement: scoring prediction sets against manifests,
//! accuracy curves over removal level and side count, and the
//! sustained-above-chance indicator.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{write_atomic, DatasetError, DatasetManifest, Split, NUM_CLASSES};
use crate::geometry::REMOVAL_LEVELS;

/// Accuracy of uniform guessing over the ten polygon classes.
pub const CHANCE_LEVEL: f64 = 1.0 / NUM_CLASSES as f64;

pub const DEFAULT_MARGIN: f64 = 0.05;

/// Removal level used for the per-vertex table unless overridden.
pub const DEFAULT_VERTEX_REPORT_REMOVAL: u8 = 10;

const CRITERION: &str = "max_sustained_removal is the largest removal level R such that accuracy \
exceeds chance_level + margin at every level from 10 through R; level 0 is excluded";

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("predictions for {split} do not cover the manifest: missing [{}], extra [{}]", missing.join(", "), extra.join(", "))]
    Coverage {
        split: String,
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("duplicate image_id in predictions: {}", .0.join(", "))]
    Duplicate(Vec<String>),
    #[error("{id}: predicted label {label} outside 0..{NUM_CLASSES}")]
    LabelOutOfRange { id: String, label: i64 },
    #[error("{}: {message}", path.display())]
    Csv { path: PathBuf, message: String },
    #[error("accuracy curve lacks removal levels {0:?}")]
    IncompleteCurve(Vec<u8>),
    #[error("{0} manifests but {1} prediction sets")]
    SplitCount(usize, usize),
    #[error("margin {0} must be finite and non-negative")]
    InvalidMargin(f64),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl ProtocolError {
    pub fn is_io(&self) -> bool {
        matches!(self, ProtocolError::Dataset(e) if e.is_io())
    }
}

pub type Result<T, E = ProtocolError> = std::result::Result<T, E>;

/// One classifier's label per image id for a single split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionSet {
    pub model_name: String,
    pub entries: BTreeMap<String, u8>,
}

#[derive(Debug, Deserialize)]
struct PredictionRow {
    image_id: String,
    predicted_label: i64,
}

impl PredictionSet {
    /// Builds a set, rejecting duplicate ids and out-of-range labels.
    pub fn from_pairs<I>(model_name: impl Into<String>, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, i64)>,
    {
        let mut entries = BTreeMap::new();
        let mut duplicates = BTreeSet::new();
        for (id, label) in pairs {
            let label = u8::try_from(label)
                .ok()
                .filter(|l| usize::from(*l) < NUM_CLASSES)
                .ok_or_else(|| ProtocolError::LabelOutOfRange { id: id.clone(), label })?;
            match entries.entry(id) {
                Entry::Occupied(e) => {
                    duplicates.insert(e.key().clone());
                }
                Entry::Vacant(e) => {
                    e.insert(label);
                }
            }
        }
        if !duplicates.is_empty() {
            return Err(ProtocolError::Duplicate(duplicates.into_iter().collect()));
        }
        Ok(Self {
            model_name: model_name.into(),
            entries,
        })
    }

    /// Parses the exchange format: header `image_id,predicted_label`, an
    /// optional trailing `confidence` column which is ignored.
    pub fn read_csv<R: Read>(model_name: impl Into<String>, reader: R, path: &Path) -> Result<Self> {
        let csv_err = |message: String| ProtocolError::Csv {
            path: path.to_path_buf(),
            message,
        };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| csv_err(e.to_string()))?.clone();
        if headers.get(0) != Some("image_id") || headers.get(1) != Some("predicted_label") {
            return Err(csv_err(format!(
                "header must start with image_id,predicted_label, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut pairs = Vec::new();
        for row in rdr.deserialize::<PredictionRow>() {
            let row = row.map_err(|e| csv_err(e.to_string()))?;
            pairs.push((row.image_id, row.predicted_label));
        }
        Self::from_pairs(model_name, pairs)
    }

    pub fn load(model_name: impl Into<String>, path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
        Self::read_csv(model_name, file, path)
    }

    /// Exchange-format bytes, rows sorted by image id.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut out = String::from("image_id,predicted_label\n");
        for (id, label) in &self.entries {
            out.push_str(&format!("{id},{label}\n"));
        }
        out.into_bytes()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(write_atomic(path, &self.to_csv())?)
    }
}

/// File name of a split's prediction file inside a predictions directory.
pub fn prediction_file(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{split}.csv"))
}

/// Correct / total counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    fn add(&mut self, hit: bool) {
        self.total += 1;
        self.correct += usize::from(hit);
    }
}

fn check_coverage(manifest: &DatasetManifest, preds: &PredictionSet) -> Result<()> {
    let ids: BTreeSet<&str> = manifest.records.iter().map(|r| r.image_id.as_str()).collect();
    let missing: Vec<String> = ids
        .iter()
        .filter(|id| !preds.entries.contains_key(**id))
        .map(|id| id.to_string())
        .collect();
    let extra: Vec<String> = preds
        .entries
        .keys()
        .filter(|id| !ids.contains(id.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(ProtocolError::Coverage {
            split: manifest.split.to_string(),
            missing,
            extra,
        });
    }
    for (id, &label) in &preds.entries {
        if usize::from(label) >= NUM_CLASSES {
            return Err(ProtocolError::LabelOutOfRange {
                id: id.clone(),
                label: label.into(),
            });
        }
    }
    Ok(())
}

/// Correctness counts over one split.
pub fn tally(manifest: &DatasetManifest, preds: &PredictionSet) -> Result<Tally> {
    check_coverage(manifest, preds)?;
    let mut t = Tally::default();
    for r in &manifest.records {
        t.add(preds.entries[&r.image_id] == r.class_label);
    }
    Ok(t)
}

/// Fraction of records whose predicted label equals the true label.
pub fn score(manifest: &DatasetManifest, preds: &PredictionSet) -> Result<f64> {
    Ok(tally(manifest, preds)?.accuracy())
}

/// Per side-count counts over one split.
pub fn accuracy_by_vertices(manifest: &DatasetManifest, preds: &PredictionSet) -> Result<BTreeMap<u32, Tally>> {
    check_coverage(manifest, preds)?;
    let mut out: BTreeMap<u32, Tally> = BTreeMap::new();
    for r in &manifest.records {
        out.entry(r.n_sides)
            .or_default()
            .add(preds.entries[&r.image_id] == r.class_label);
    }
    Ok(out)
}

/// Accuracy per removal level; `manifests[i]` is scored with `preds[i]`.
pub fn accuracy_curve(manifests: &[DatasetManifest], preds: &[PredictionSet]) -> Result<BTreeMap<u8, Tally>> {
    if manifests.len() != preds.len() {
        return Err(ProtocolError::SplitCount(manifests.len(), preds.len()));
    }
    manifests
        .iter()
        .zip(preds)
        .map(|(m, p)| Ok((m.split.removal_pct(), tally(m, p)?)))
        .collect()
}

/// Largest removal level through which accuracy stays strictly above
/// `chance + margin` at every level from 10 upward, or `None` if level 10
/// already fails.
pub fn closure_indicator(curve: &BTreeMap<u8, f64>, chance: f64, margin: f64) -> Result<Option<u8>> {
    let missing: Vec<u8> = REMOVAL_LEVELS
        .into_iter()
        .filter(|p| !curve.contains_key(p))
        .collect();
    if !missing.is_empty() {
        return Err(ProtocolError::IncompleteCurve(missing));
    }
    let threshold = chance + margin;
    Ok(REMOVAL_LEVELS[1..]
        .iter()
        .take_while(|p| curve[p] > threshold)
        .last()
        .copied())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelScore {
    pub removal_pct: u8,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexScore {
    pub removal_pct: u8,
    pub n_sides: u32,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosureReport {
    pub model_name: String,
    pub num_classes: usize,
    pub chance_level: f64,
    pub margin: f64,
    pub criterion: String,
    pub accuracy_by_removal: Vec<LevelScore>,
    pub accuracy_by_vertices: Vec<VertexScore>,
    pub max_sustained_removal: Option<u8>,
}

impl ClosureReport {
    /// Scores all ten test splits. `tests[i]` pairs with `preds[i]`.
    pub fn build(model_name: &str, tests: &[DatasetManifest], preds: &[PredictionSet], margin: f64) -> Result<Self> {
        if !(margin.is_finite() && margin >= 0.0) {
            return Err(ProtocolError::InvalidMargin(margin));
        }
        let curve = accuracy_curve(tests, preds)?;
        let ratios: BTreeMap<u8, f64> = curve.iter().map(|(p, t)| (*p, t.accuracy())).collect();
        let max_sustained_removal = closure_indicator(&ratios, CHANCE_LEVEL, margin)?;

        let mut accuracy_by_vertices = Vec::new();
        for (m, p) in tests.iter().zip(preds) {
            let removal_pct = m.split.removal_pct();
            for (n_sides, t) in accuracy_by_vertices_unchecked(m, p) {
                accuracy_by_vertices.push(VertexScore {
                    removal_pct,
                    n_sides,
                    accuracy: t.accuracy(),
                    correct: t.correct,
                    total: t.total,
                });
            }
        }
        accuracy_by_vertices.sort_by_key(|v| (v.removal_pct, v.n_sides));

        Ok(Self {
            model_name: model_name.to_string(),
            num_classes: NUM_CLASSES,
            chance_level: CHANCE_LEVEL,
            margin,
            criterion: CRITERION.to_string(),
            accuracy_by_removal: curve
                .into_iter()
                .map(|(removal_pct, t)| LevelScore {
                    removal_pct,
                    accuracy: t.accuracy(),
                    correct: t.correct,
                    total: t.total,
                })
                .collect(),
            accuracy_by_vertices,
            max_sustained_removal,
        })
    }

    pub fn accuracy_at(&self, removal_pct: u8) -> Option<f64> {
        self.accuracy_by_removal
            .iter()
            .find(|l| l.removal_pct == removal_pct)
            .map(|l| l.accuracy)
    }

    pub fn vertices_at(&self, removal_pct: u8) -> impl Iterator<Item = &VertexScore> {
        self.accuracy_by_vertices
            .iter()
            .filter(move |v| v.removal_pct == removal_pct)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn removal_csv(&self) -> String {
        let mut out = String::from("removal_pct,accuracy,correct,total\n");
        for l in &self.accuracy_by_removal {
            out.push_str(&format!("{},{},{},{}\n", l.removal_pct, l.accuracy, l.correct, l.total));
        }
        out
    }

    pub fn vertices_csv(&self, removal_pct: u8) -> String {
        let mut out = String::from("n_sides,accuracy,correct,total\n");
        for v in self.vertices_at(removal_pct) {
            out.push_str(&format!("{},{},{},{}\n", v.n_sides, v.accuracy, v.correct, v.total));
        }
        out
    }

    /// Series for both panels plus the chance and threshold lines.
    pub fn plot_data(&self, vertex_removal: u8) -> serde_json::Value {
        let (vx, vy): (Vec<u32>, Vec<f64>) = self
            .vertices_at(vertex_removal)
            .map(|v| (v.n_sides, v.accuracy))
            .unzip();
        serde_json::json!({
            "model_name": self.model_name,
            "chance_level": self.chance_level,
            "threshold": self.chance_level + self.margin,
            "panels": [
                {
                    "name": "accuracy_vs_removal",
                    "x_label": "removal_pct",
                    "y_label": "accuracy",
                    "x": self.accuracy_by_removal.iter().map(|l| l.removal_pct).collect::<Vec<_>>(),
                    "y": self.accuracy_by_removal.iter().map(|l| l.accuracy).collect::<Vec<_>>(),
                },
                {
                    "name": "accuracy_vs_vertices",
                    "removal_pct": vertex_removal,
                    "x_label": "n_sides",
                    "y_label": "accuracy",
                    "x": vx,
                    "y": vy,
                },
            ],
        })
    }

    /// Writes `report.json`, `accuracy_by_removal.csv`,
    /// `accuracy_by_vertices.csv` and `plot_data.json` into `dir`.
    pub fn write_files(&self, dir: &Path, vertex_removal: u8) -> Result<Vec<PathBuf>> {
        if !REMOVAL_LEVELS.contains(&vertex_removal) {
            return Err(ProtocolError::IncompleteCurve(vec![vertex_removal]));
        }
        fs::create_dir_all(dir).map_err(|e| DatasetError::io(dir, e))?;
        let mut plot = serde_json::to_string_pretty(&self.plot_data(vertex_removal)).expect("plot serializes");
        plot.push('\n');
        let files = [
            ("report.json", self.to_json()),
            ("accuracy_by_removal.csv", self.removal_csv()),
            ("accuracy_by_vertices.csv", self.vertices_csv(vertex_removal)),
            ("plot_data.json", plot),
        ];
        let mut written = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            write_atomic(&path, body.as_bytes())?;
            written.push(path);
        }
        Ok(written)
    }
}

fn accuracy_by_vertices_unchecked(m: &DatasetManifest, p: &PredictionSet) -> BTreeMap<u32, Tally> {
    accuracy_by_vertices(m, p).expect("coverage checked by accuracy_curve")
}

/// Loads `test_{pp}.csv` for every test split from `dir`.
pub fn load_predictions(model_name: &str, dir: &Path) -> Result<Vec<PredictionSet>> {
    Split::tests()
        .map(|s| PredictionSet::load(model_name, &prediction_file(dir, s)))
        .collect()
}
