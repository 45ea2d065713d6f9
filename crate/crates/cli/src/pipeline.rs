//! The stages behind `train`, `eval` and `map`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use diffformer::data::{
    apply_pca, extract_patches, fit_pca, load_cube, patch_at, stratified_split, DataError, HsiCube, Padding,
    PatchSample, PcaModel, Split, SplitSpec,
};
use diffformer::metrics::{ConfusionMatrix, EvalReport};
use diffformer::model::{DiffFormer, ParamStore};
use diffformer::train::{history_csv, Checkpoint, EpochRecord, Trainer};
use serde::Serialize;

use crate::error::Stage;
use crate::{render, CliError, RunConfig};

pub const CHECKPOINT_FILE: &str = "best.dfck";
pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "report.txt";
pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Worker threads for evaluation, from `DIFFFORMER_THREADS` (default 1).
pub fn threads() -> usize {
    std::env::var("DIFFFORMER_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Reduced cube and its stratified split.
pub struct Prepared {
    pub cube: HsiCube,
    pub pca: PcaModel,
    pub split: Split,
    pub spec: SplitSpec,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    cfg.check_inputs()?;
    let cube = load_cube(&cfg.cube).stage("load cube")?;
    let pca = fit_pca(&cube, cfg.pca_bands).stage("pca")?;
    let reduced = apply_pca(&cube, &pca).stage("pca")?;
    let samples = extract_patches(&reduced, cfg.patch_size, Padding::Mirror);
    let spec = cfg.split_spec()?;
    let split = stratified_split(samples, &spec).stage("split")?;
    Ok(Prepared { cube, pca, split, spec })
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub report: EvalReport,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub n_patch: usize,
    pub class_names: Vec<String>,
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    files: Vec<ManifestEntry>,
}

#[derive(Serialize)]
struct ManifestEntry {
    name: String,
    bytes: usize,
}

fn write_all(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<(), CliError> {
    fs::create_dir_all(dir).stage("write outputs")?;
    for (name, bytes) in files {
        fs::write(dir.join(name), bytes).stage("write outputs")?;
    }
    let manifest = Manifest {
        command: "train",
        files: files
            .iter()
            .map(|(name, bytes)| ManifestEntry {
                name: name.to_string(),
                bytes: bytes.len(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join(MANIFEST_FILE), json).stage("write outputs")?;
    Ok(())
}

fn confusion(
    model: &DiffFormer,
    params: &ParamStore,
    samples: &[PatchSample],
    threads: usize,
) -> Result<ConfusionMatrix, CliError> {
    let preds = model.predict(params, samples, threads).stage("evaluate")?;
    let mut cm = ConfusionMatrix::new(model.config().n_classes);
    for (s, p) in samples.iter().zip(preds) {
        cm.accumulate(s.label as usize, p as usize).stage("evaluate")?;
    }
    Ok(cm)
}

/// load → PCA → patches → split → train → test-set report, with every
/// artifact written under `cfg.out_dir`.
pub fn run_train(cfg: &RunConfig, threads: usize) -> Result<TrainSummary, CliError> {
    let prep = prepare(cfg)?;
    let n_classes = prep.cube.n_classes();
    let model_cfg = cfg.model_config(n_classes);
    let mut trainer = Trainer::new(model_cfg, cfg.train_config()).stage("train")?;
    trainer.set_timing(cfg.timing);
    trainer.set_threads(threads);
    trainer.set_metadata(Some(prep.pca.clone()), Some(prep.spec));
    let outcome = trainer.fit(&prep.split.train, &prep.split.val).stage("train")?;

    let start = Instant::now();
    let model = DiffFormer::new(outcome.best.config.clone()).stage("evaluate")?;
    let cm = confusion(&model, &outcome.best.params, &prep.split.test, threads)?;
    let seconds = if cfg.timing { start.elapsed().as_secs_f64() } else { 0.0 };
    let report = EvalReport::from_confusion(&cm, seconds).stage("evaluate")?;
    let class_names = prep.cube.class_names().map(<[String]>::to_vec).unwrap_or_default();

    write_all(
        &cfg.out_dir,
        &[
            (CONFIG_FILE, cfg.to_json().into_bytes()),
            (CHECKPOINT_FILE, outcome.best.to_bytes()),
            (HISTORY_FILE, history_csv(&outcome.history).into_bytes()),
            (REPORT_FILE, report.to_json().into_bytes()),
            (TABLE_FILE, report.to_table(&class_names).into_bytes()),
        ],
    )?;
    Ok(TrainSummary {
        report,
        best_epoch: outcome.best_epoch,
        history: outcome.history,
        n_patch: model.config().n_patch_tokens(),
        class_names,
        out_dir: cfg.out_dir.clone(),
    })
}

/// Which labeled pixels `eval` scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subset {
    All,
    /// The test part of the split recorded in the checkpoint.
    Test,
}

fn reduce_for(ck: &Checkpoint, cube: &HsiCube) -> Result<HsiCube, CliError> {
    let pca = ck
        .pca
        .as_ref()
        .ok_or_else(|| CliError::data("checkpoint", "no band-reduction model stored"))?;
    let reduced = apply_pca(cube, pca).stage("pca")?;
    if reduced.bands() != ck.config.pca_bands {
        return Err(CliError::data(
            "pca",
            DataError::BandMismatch {
                expected: ck.config.pca_bands,
                found: reduced.bands(),
            },
        ));
    }
    let max_label = cube.labels().iter().copied().max().unwrap_or(0) as usize;
    if max_label > ck.config.n_classes {
        return Err(CliError::data(
            "load cube",
            DataError::LabelOutOfRange {
                label: max_label as u16,
                classes: ck.config.n_classes,
            },
        ));
    }
    Ok(reduced)
}

/// Eval-mode report for a checkpoint on a cube.
pub fn run_eval(
    checkpoint: &Path,
    cube: &Path,
    subset: Subset,
    timing: bool,
    threads: usize,
) -> Result<EvalReport, CliError> {
    let ck = Checkpoint::load(checkpoint).stage("load checkpoint")?;
    let cube = load_cube(cube).stage("load cube")?;
    let reduced = reduce_for(&ck, &cube)?;
    let start = Instant::now();
    let mut samples = extract_patches(&reduced, ck.config.patch_size, Padding::Mirror);
    if subset == Subset::Test {
        let spec = ck
            .split
            .ok_or_else(|| CliError::data("checkpoint", "no split recorded"))?;
        samples = stratified_split(samples, &spec).stage("split")?.test;
    }
    let model = DiffFormer::new(ck.config.clone()).stage("evaluate")?;
    let cm = confusion(&model, &ck.params, &samples, threads)?;
    let seconds = if timing { start.elapsed().as_secs_f64() } else { 0.0 };
    EvalReport::from_confusion(&cm, seconds).stage("evaluate")
}

/// Predicted class (1-based) of every pixel, row-major.
pub fn predict_scene(ck: &Checkpoint, cube: &HsiCube, threads: usize) -> Result<Vec<u16>, CliError> {
    let reduced = reduce_for(ck, cube)?;
    let p = ck.config.patch_size;
    let samples: Vec<PatchSample> = (0..reduced.height())
        .flat_map(|r| (0..reduced.width()).map(move |c| (r, c)))
        .map(|(r, c)| PatchSample {
            patch: patch_at(&reduced, r, c, p, Padding::Mirror),
            label: 0,
            pixel: (r, c),
        })
        .collect();
    let model = DiffFormer::new(ck.config.clone()).stage("predict")?;
    model.predict(&ck.params, &samples, threads).stage("predict")
}

/// Renders a full-scene classification map as binary PPM.
pub fn run_map(checkpoint: &Path, cube: &Path, out: &Path, threads: usize) -> Result<Vec<u16>, CliError> {
    let ck = Checkpoint::load(checkpoint).stage("load checkpoint")?;
    let cube = load_cube(cube).stage("load cube")?;
    let classes = predict_scene(&ck, &cube, threads)?;
    let image = render::ppm(cube.width(), cube.height(), &classes, ck.config.n_classes);
    fs::write(out, image).stage("write map")?;
    Ok(classes)
}
