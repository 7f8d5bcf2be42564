//! Acceptance suite. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion fails.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use sha2::{Digest, Sha256};

use polyclosure::dataset::{self, check_files, load_dataset, SPLIT_SIZE};
use polyclosure::geometry::REMOVAL_LEVELS;
use polyclosure::protocol::{
    self, accuracy_by_vertices, closure_indicator, prediction_file, score, CHANCE_LEVEL,
    DEFAULT_MARGIN,
};
use polyclosure::raster::{render, stroke_pixel_count};
use polyclosure::{
    Background, CanvasConfig, ClosureReport, DatasetConfig, DatasetManifest, Point, PolygonSpec,
    PredictionSet, Split, TemplateModel,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    check(
        elapsed < Duration::from_secs(limit_s),
        format!("took {elapsed:.1?}, limit {limit_s} s"),
    )
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    out
}

fn tree_hashes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    files_under(root)
        .into_iter()
        .map(|p| {
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            (rel, Sha256::digest(fs::read(&p).unwrap()).to_vec())
        })
        .collect()
}

fn cardinality(root: &Path) -> Outcome {
    let start = Instant::now();
    let (train, tests) =
        dataset::generate_all(root, &DatasetConfig::default(), None).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let files = files_under(root);
    let pngs = files.iter().filter(|p| p.extension().is_some_and(|e| e == "png")).count();
    let manifests = files.iter().filter(|p| p.extension().is_some_and(|e| e == "jsonl")).count();
    check(pngs == 3520, format!("{pngs} png files"))?;
    check(manifests == 11, format!("{manifests} manifests"))?;
    check(train.records.len() == 320, "train size")?;
    check(tests.len() == 10, "test split count")?;

    let (train, tests) = load_dataset(root).map_err(|e| e.to_string())?;
    check(train.records.iter().all(|r| r.removal_pct == 0), "train removal")?;
    for (m, level) in tests.iter().zip(REMOVAL_LEVELS) {
        check(m.records.len() == SPLIT_SIZE && m.split == Split::Test(level), "test split")?;
        let cells: Vec<_> = m.records.iter().map(|r| r.factors()).collect();
        let train_cells: Vec<_> = train.records.iter().map(|r| r.factors()).collect();
        check(cells == train_cells, format!("{} factors differ from train", m.split))?;
    }
    for m in std::iter::once(&train).chain(&tests) {
        check_files(root, m).map_err(|e| e.to_string())?;
    }
    within(elapsed, 30)?;
    Ok(format!("320 + 10 x 320 = {pngs} images, 11 valid manifests, generated in {elapsed:.1?}"))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let cfg = CanvasConfig::default();
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for n in 3..=12 {
        let count = |removal_pct: u8| {
            let spec = PolygonSpec {
                n_sides: n,
                theta_global_deg: 0.0,
                background: Background::Light,
                center: Point::new(112.0, 112.0),
                circumradius_px: 80.0,
                removal_pct,
                stroke_width_px: cfg.stroke_width_px,
            };
            stroke_pixel_count(&render(&spec, &cfg).unwrap())
        };
        let counts: Vec<usize> = REMOVAL_LEVELS.iter().map(|&p| count(p)).collect();
        pairs += counts.len();
        for (&p, &c) in REMOVAL_LEVELS.iter().zip(&counts) {
            if p > 80 {
                continue;
            }
            let ratio = c as f64 / counts[0] as f64;
            let analytic = 1.0 - f64::from(p) / 100.0;
            let dev = (ratio - analytic).abs();
            worst = worst.max(dev);
            check(dev <= 0.08, format!("n={n} p={p}: ratio {ratio:.4} vs {analytic}"))?;
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, 20)?;
    Ok(format!("{pairs} pairs, worst deviation {worst:.4} <= 0.08, {elapsed:.1?}"))
}

fn run_baseline(root: &Path, out: &Path) -> Result<ClosureReport, String> {
    let (train, tests) = load_dataset(root).map_err(|e| e.to_string())?;
    let model = TemplateModel::fit(&train, root).map_err(|e| e.to_string())?;
    fs::create_dir_all(out).unwrap();
    let mut preds = Vec::new();
    for m in &tests {
        let p = model.predict_split("baseline", m, root).map_err(|e| e.to_string())?;
        p.save(&prediction_file(out, m.split)).map_err(|e| e.to_string())?;
        preds.push(p);
    }
    // Read back through the exchange format, as an external model would be.
    let loaded = protocol::load_predictions("baseline", out).map_err(|e| e.to_string())?;
    check(loaded == preds, "prediction files do not round-trip")?;
    let report = ClosureReport::build("baseline", &tests, &loaded, DEFAULT_MARGIN).map_err(|e| e.to_string())?;
    report.write_files(&out.join("report"), 10).map_err(|e| e.to_string())?;
    Ok(report)
}

fn end_to_end(root: &Path, out: &Path) -> Outcome {
    let start = Instant::now();
    let (train, _) = load_dataset(root).map_err(|e| e.to_string())?;
    let model = TemplateModel::fit(&train, root).map_err(|e| e.to_string())?;

    // No raster appears under two different labels.
    let mut owners: HashMap<&[u8], u8> = HashMap::new();
    for t in model.templates() {
        let label = *owners.entry(t.image.pixels.as_slice()).or_insert(t.class_label);
        check(label == t.class_label, format!("{} duplicates another class", t.image_id))?;
    }
    check(model.templates().len() == 320, "template count")?;

    let report = run_baseline(root, out)?;
    let elapsed = start.elapsed();
    check(report.accuracy_at(0) == Some(1.0), format!("accuracy at 0% = {:?}", report.accuracy_at(0)))?;
    check(report.accuracy_by_removal.len() == 10, "curve length")?;
    check(report.accuracy_by_vertices.len() == 100, "vertex table size")?;
    for name in ["report.json", "accuracy_by_removal.csv", "accuracy_by_vertices.csv", "plot_data.json"] {
        check(out.join("report").join(name).exists(), format!("{name} missing"))?;
    }
    within(elapsed, 120)?;
    let curve: Vec<String> = report
        .accuracy_by_removal
        .iter()
        .map(|l| format!("{:.3}", l.accuracy))
        .collect();
    Ok(format!(
        "{} distinct rasters, curve [{}], sustained to {:?}, {elapsed:.1?}",
        owners.len(),
        curve.join(", "),
        report.max_sustained_removal
    ))
}

fn determinism(root_a: &Path, out_a: &Path, scratch: &Path) -> Outcome {
    let root_b = scratch.join("dataset_b");
    dataset::generate_all(&root_b, &DatasetConfig::default(), Some(3)).map_err(|e| e.to_string())?;
    let a = tree_hashes(root_a);
    let b = tree_hashes(&root_b);
    check(a.len() == b.len(), "different file sets")?;
    let differing: Vec<&String> = a.iter().filter(|(k, v)| b.get(*k) != Some(v)).map(|(k, _)| k).collect();
    check(differing.is_empty(), format!("differing files: {differing:?}"))?;

    let out_b = scratch.join("baseline_b");
    run_baseline(&root_b, &out_b)?;
    let pa = tree_hashes(out_a);
    let pb = tree_hashes(&out_b);
    check(!pa.is_empty() && pa == pb, "baseline predictions or reports differ")?;
    Ok(format!("{} dataset files and {} prediction/report files hash-identical", a.len(), pa.len()))
}

fn balanced_split() -> DatasetManifest {
    DatasetManifest::enumerate(&DatasetConfig::default(), Split::Test(10)).unwrap()
}

fn protocol_properties() -> Outcome {
    let start = Instant::now();
    let base = balanced_split();
    let config = Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new(config.clone());
    let strategy = (
        prop::collection::vec(0i64..10, SPLIT_SIZE),
        Just(()).prop_perturb(|_, mut rng| {
            let mut idx: Vec<usize> = (0..SPLIT_SIZE).collect();
            for i in (1..idx.len()).rev() {
                idx.swap(i, (rng.next_u32() as usize) % (i + 1));
            }
            idx
        }),
        0i64..10,
    );
    runner
        .run(&strategy, |(labels, perm, constant)| {
            let preds = PredictionSet::from_pairs(
                "random",
                base.records.iter().zip(&labels).map(|(r, l)| (r.image_id.clone(), *l)),
            )
            .unwrap();
            let p = score(&base, &preds).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));

            // Reordered records and reordered prediction entries.
            let mut shuffled = base.clone();
            shuffled.records = perm.iter().map(|&i| base.records[i].clone()).collect();
            let reordered = PredictionSet::from_pairs(
                "random",
                perm.iter().rev().map(|&i| (base.records[i].clone().image_id, labels[i])),
            )
            .unwrap();
            prop_assert_eq!(score(&shuffled, &reordered).unwrap(), p);
            prop_assert_eq!(
                accuracy_by_vertices(&shuffled, &reordered).unwrap(),
                accuracy_by_vertices(&base, &preds).unwrap()
            );

            // Per-vertex mean equals overall accuracy.
            let by = accuracy_by_vertices(&base, &preds).unwrap();
            let mean = by.values().map(|t| t.accuracy()).sum::<f64>() / by.len() as f64;
            prop_assert!((mean - p).abs() < 1e-12);

            let flat = PredictionSet::from_pairs(
                "constant",
                base.records.iter().map(|r| (r.image_id.clone(), constant)),
            )
            .unwrap();
            prop_assert_eq!(score(&shuffled, &flat).unwrap(), CHANCE_LEVEL);
            Ok(())
        })
        .map_err(|e| format!("scoring properties: {e}"))?;

    let mut runner = TestRunner::new(config);
    let curves = (prop::collection::vec(0.0f64..=1.0, 10), 0.0f64..0.9, 0.0f64..0.9);
    runner
        .run(&curves, |(values, m1, m2)| {
            let curve: BTreeMap<u8, f64> = REMOVAL_LEVELS.into_iter().zip(values).collect();
            let (small, large) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
            let a = closure_indicator(&curve, CHANCE_LEVEL, small).unwrap();
            let b = closure_indicator(&curve, CHANCE_LEVEL, large).unwrap();
            // None ranks below every level.
            prop_assert!(b <= a, "margin {} -> {:?}, margin {} -> {:?}", small, a, large, b);
            Ok(())
        })
        .map_err(|e| format!("indicator monotonicity: {e}"))?;

    let elapsed = start.elapsed();
    within(elapsed, 60)?;
    Ok(format!("2 x 1000 randomized cases, {elapsed:.1?}"))
}

#[test]
fn acceptance_criteria() {
    let scratch = tempfile::tempdir().unwrap();
    let root = scratch.path().join("dataset_a");
    let out = scratch.path().join("baseline_a");

    let results: Vec<(&str, Outcome)> = vec![
        ("dataset cardinality", cardinality(&root)),
        ("geometry/raster oracle equivalence", oracle_equivalence()),
        ("protocol properties", protocol_properties()),
        ("end-to-end baseline", end_to_end(&root, &out)),
        ("determinism", determinism(&root, &out, scratch.path())),
    ];

    let mut failed = Vec::new();
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                println!("FAIL  {name}: {why}");
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
