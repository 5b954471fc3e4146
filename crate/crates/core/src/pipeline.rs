//! End-to-end orchestration: recordings in, trained models and scores out.
//!
//! Order of operations: quality control, split by recording (so windows of
//! one recording never straddle splits), segmentation, then two branches.
//! The networks see per-window normalized windows, augmented for training
//! (and optionally validation), with MFCC extraction for the multi-branch
//! model. The kNN baseline sees raw flattened windows standardized by a
//! scaler fit on the training windows.

use serde::{Deserialize, Serialize};

use crate::augment::{augment_dataset, AugmentConfig};
use crate::baselines::{KnnModel, SimpleNn, SimpleNnSpec};
use crate::data::{quality_filter, stratified_split, ClassLabel, QcConfig, Recording, SplitSpec, NUM_CHANNELS};
use crate::dsp::mfcc::{MfccConfig, MfccExtractor};
use crate::error::{Error, Result};
use crate::metrics::{metrics, ConfusionMatrix, MetricsReport};
use crate::model::{predict_dataset, train, MultiBranchNet, TensorDataset, TrainConfig, TrainOutcome};
use crate::preprocess::{per_sequence_normalize, segment, SequenceWindow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub window: usize,
    pub qc: QcConfig,
    pub split: SplitSpec,
    pub augment: AugmentConfig,
    pub mfcc: MfccConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window: 200,
            qc: QcConfig::default(),
            split: SplitSpec::default(),
            augment: AugmentConfig::default(),
            mfcc: MfccConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Point every stage's seed at streams derived from one root.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.split.rng_seed = seed;
        self.augment.rng_seed = seed;
        self
    }
}

/// Quality-filter every recording; returns survivors and total rows removed.
pub fn quality_control(recordings: &[Recording], qc: &QcConfig) -> Result<(Vec<Recording>, usize)> {
    let mut kept = Vec::with_capacity(recordings.len());
    let mut removed = 0;
    for rec in recordings {
        let (r, n) = quality_filter(rec, qc)?;
        removed += n;
        kept.push(r);
    }
    Ok((kept, removed))
}

/// Segment every recording.
pub fn raw_windows(recordings: &[Recording], w: usize) -> Vec<SequenceWindow> {
    recordings.iter().flat_map(|r| segment(r, w)).collect()
}

/// Segment and per-window normalize.
pub fn windows_of(recordings: &[Recording], w: usize) -> Vec<SequenceWindow> {
    raw_windows(recordings, w).iter().map(per_sequence_normalize).collect()
}

/// Total `floor(N / w)` over a corpus.
pub fn chunk_count(recordings: &[Recording], w: usize) -> usize {
    recordings.iter().map(|r| r.len() / w).sum()
}

/// Windows per split.
#[derive(Debug, Clone)]
pub struct PreparedWindows {
    /// Normalized and augmented.
    pub train: Vec<SequenceWindow>,
    /// Normalized, augmented when the config says so.
    pub val: Vec<SequenceWindow>,
    /// Normalized, never augmented.
    pub test: Vec<SequenceWindow>,
    /// Unnormalized training windows (train split only, no augmentation).
    pub train_raw: Vec<SequenceWindow>,
    /// Unnormalized test windows.
    pub test_raw: Vec<SequenceWindow>,
    pub qc_rows_removed: usize,
}

pub fn prepare_windows(recordings: &[Recording], cfg: &PipelineConfig) -> Result<PreparedWindows> {
    let (clean, qc_rows_removed) = quality_control(recordings, &cfg.qc)?;
    let part = stratified_split(&clean, &cfg.split)?;
    let (tr, va, te) = part.select(&clean);
    let train_raw = raw_windows(&tr, cfg.window);
    let test_raw = raw_windows(&te, cfg.window);
    let train_original: Vec<SequenceWindow> = train_raw.iter().map(per_sequence_normalize).collect();
    let val_original = windows_of(&va, cfg.window);
    let test: Vec<SequenceWindow> = test_raw.iter().map(per_sequence_normalize).collect();
    if train_original.is_empty() || val_original.is_empty() || test.is_empty() {
        return Err(Error::InsufficientClassData {
            class: "any".into(),
            have: 0,
            need: 1,
        });
    }
    let (train, val) = augment_splits(&train_original, val_original, &cfg.augment)?;
    Ok(PreparedWindows {
        train,
        val,
        test,
        train_raw,
        test_raw,
        qc_rows_removed,
    })
}

/// Expand the training windows, and the validation windows too when the
/// config asks for it (from an independent stream).
pub fn augment_splits(
    train: &[SequenceWindow],
    val: Vec<SequenceWindow>,
    cfg: &AugmentConfig,
) -> Result<(Vec<SequenceWindow>, Vec<SequenceWindow>)> {
    let train = augment_dataset(train, cfg)?;
    let val = if cfg.augment_validation {
        let val_cfg = AugmentConfig {
            rng_seed: cfg.rng_seed ^ 0x5641_4c49_4441_5445,
            ..*cfg
        };
        augment_dataset(&val, &val_cfg)?
    } else {
        val
    };
    Ok((train, val))
}

fn label_indices(windows: &[SequenceWindow]) -> Vec<usize> {
    windows.iter().map(|w| w.label.index()).collect()
}

/// Stack MFCC tensors `[N, 5, n_frames, n_coeffs]`.
pub fn mfcc_dataset(windows: &[SequenceWindow], cfg: &MfccConfig) -> Result<TensorDataset> {
    let ex = MfccExtractor::new(*cfg)?;
    let w = windows.first().map_or(0, SequenceWindow::len);
    let shape = [NUM_CHANNELS, cfg.n_frames(w), cfg.n_mfcc];
    let feats = windows
        .iter()
        .map(|win| ex.extract(win).map(|t| t.values))
        .collect::<Result<Vec<_>>>()?;
    TensorDataset::from_samples(&feats, &shape, label_indices(windows))
}

/// Flattened windows `[N, 5w]`.
pub fn flat_dataset(windows: &[SequenceWindow]) -> Result<TensorDataset> {
    let rows: Vec<Vec<f64>> = windows.iter().map(SequenceWindow::flatten).collect();
    let dim = rows.first().map_or(0, Vec::len);
    TensorDataset::from_samples(&rows, &[dim], label_indices(windows))
}

fn report(truth: &[usize], predicted: &[usize]) -> Result<MetricsReport> {
    metrics(&ConfusionMatrix::from_indices(truth, predicted, crate::data::NUM_CLASSES)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Multibranch,
    SimpleNn,
    Knn,
}

impl std::str::FromStr for ModelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multibranch" => Ok(ModelChoice::Multibranch),
            "simplenn" | "simple_nn" => Ok(ModelChoice::SimpleNn),
            "knn" => Ok(ModelChoice::Knn),
            other => Err(Error::InvalidConfig(format!("unknown model '{other}'"))),
        }
    }
}

impl std::fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelChoice::Multibranch => "multibranch",
            ModelChoice::SimpleNn => "simplenn",
            ModelChoice::Knn => "knn",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelRecipes {
    pub multibranch: TrainConfig,
    pub simple_nn: TrainConfig,
    pub knn_k: usize,
}

impl Default for ModelRecipes {
    fn default() -> Self {
        ModelRecipes {
            multibranch: TrainConfig::default(),
            simple_nn: TrainConfig::simple_nn(),
            knn_k: 5,
        }
    }
}

impl ModelRecipes {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.multibranch.rng_seed = seed;
        self.simple_nn.rng_seed = seed;
        self
    }

    /// Cap both networks' epoch budgets, shrinking patience to fit.
    pub fn cap_epochs(mut self, max_epochs: usize) -> Self {
        for cfg in [&mut self.multibranch, &mut self.simple_nn] {
            cfg.max_epochs = cfg.max_epochs.min(max_epochs);
            cfg.early_stop_patience = cfg.early_stop_patience.min(cfg.max_epochs);
        }
        self
    }
}

/// Test-set result of one model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelScore {
    pub model: ModelChoice,
    pub test_accuracy: f64,
    pub report: MetricsReport,
    /// Present for the trained networks.
    #[serde(skip)]
    pub outcome: Option<TrainOutcome>,
}

/// Train and score one model on already prepared windows.
pub fn fit_and_score(model: ModelChoice, data: &PreparedWindows, mfcc: &MfccConfig, recipes: &ModelRecipes) -> Result<ModelScore> {
    let truth = label_indices(&data.test);
    let (predicted, outcome) = match model {
        ModelChoice::Knn => {
            let rows: Vec<Vec<f64>> = data.train_raw.iter().map(SequenceWindow::flatten).collect();
            let labels: Vec<ClassLabel> = data.train_raw.iter().map(|w| w.label).collect();
            let knn = KnnModel::fit(&rows, &labels, recipes.knn_k)?;
            let pred = data
                .test_raw
                .iter()
                .map(|w| knn.predict(&w.flatten()).map(|p| p.0.index()))
                .collect::<Result<Vec<_>>>()?;
            (pred, None)
        }
        ModelChoice::SimpleNn => {
            let tr = flat_dataset(&data.train)?;
            let va = flat_dataset(&data.val)?;
            let te = flat_dataset(&data.test)?;
            let w = data.train[0].len();
            let mut net = SimpleNn::new(SimpleNnSpec::for_window(w), recipes.simple_nn.rng_seed)?;
            let outcome = train(&mut net, &tr, &va, &recipes.simple_nn)?;
            (predict_dataset(&net, &te, 256)?, Some(outcome))
        }
        ModelChoice::Multibranch => {
            let tr = mfcc_dataset(&data.train, mfcc)?;
            let va = mfcc_dataset(&data.val, mfcc)?;
            let te = mfcc_dataset(&data.test, mfcc)?;
            let shape = tr.sample_shape().to_vec();
            let mut net = MultiBranchNet::new(shape[1], shape[2], recipes.multibranch.rng_seed)?;
            let outcome = train(&mut net, &tr, &va, &recipes.multibranch)?;
            (predict_dataset(&net, &te, 256)?, Some(outcome))
        }
    };
    let report = report(&truth, &predicted)?;
    Ok(ModelScore {
        model,
        test_accuracy: report.accuracy,
        report,
        outcome,
    })
}

/// Score several models on one seeded split of `recordings`.
pub fn compare_models(
    recordings: &[Recording],
    pipeline: &PipelineConfig,
    recipes: &ModelRecipes,
    models: &[ModelChoice],
) -> Result<Vec<ModelScore>> {
    let data = prepare_windows(recordings, pipeline)?;
    models
        .iter()
        .map(|&m| fit_and_score(m, &data, &pipeline.mfcc, recipes))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub window: usize,
    /// Windows cut from the whole (quality-controlled) corpus.
    pub chunks: usize,
    pub train_windows: usize,
    pub test_windows: usize,
    pub test_accuracy: f64,
}

/// Re-run the pipeline at each window size with one model.
pub fn ablate_window(
    recordings: &[Recording],
    windows: &[usize],
    model: ModelChoice,
    pipeline: &PipelineConfig,
    recipes: &ModelRecipes,
) -> Result<Vec<AblationRow>> {
    let (clean, _) = quality_control(recordings, &pipeline.qc)?;
    windows
        .iter()
        .map(|&w| {
            let cfg = PipelineConfig { window: w, ..*pipeline };
            let data = prepare_windows(&clean, &cfg)?;
            let score = fit_and_score(model, &data, &cfg.mfcc, recipes)?;
            Ok(AblationRow {
                window: w,
                chunks: chunk_count(&clean, w),
                train_windows: data.train.len(),
                test_windows: data.test.len(),
                test_accuracy: score.test_accuracy,
            })
        })
        .collect()
}

/// Plain-text table of ablation rows.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("window  chunks  train  test  accuracy\n");
    for r in rows {
        out.push_str(&format!(
            "{:>6}  {:>6}  {:>5}  {:>4}  {:>8.4}\n",
            r.window, r.chunks, r.train_windows, r.test_windows, r.test_accuracy
        ));
    }
    out
}
