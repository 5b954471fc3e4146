//! Model stages: train, evaluate, ablate-window, report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tribosign_core::baselines::{cross_validate, KnnModel, SimpleNn, SimpleNnSpec};
use tribosign_core::data::load_dataset;
use tribosign_core::metrics::metrics;
use tribosign_core::model::{
    predict_dataset, train as fit, Checkpoint, ModelKind, MultiBranchNet, Network, Predictor, TensorDataset,
    TrainConfig, TrainOutcome,
};
use tribosign_core::pipeline::{ablate_window, ablation_table, flat_dataset, ModelChoice};
use tribosign_core::plot::{confusion_svg, training_curves_svg};
use tribosign_core::preprocess::load_windows;
use tribosign_core::{ClassLabel, ConfusionMatrix, SequenceWindow, NUM_CLASSES};

use crate::config;
use crate::error::{data, one_line, usage};
use crate::run::{Run, Upstream, CONFIG_FILE};
use crate::stages::corpus_files;
use crate::Ctx;

const SUMMARY_FILE: &str = "summary.json";
const EVAL_FILE: &str = "eval.json";

/// What a train run produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model: ModelChoice,
    pub train_windows: usize,
    pub best_epoch: Option<usize>,
    pub best_val_acc: Option<f64>,
    pub best_val_loss: Option<f64>,
    pub epochs_run: Option<usize>,
    pub stopped_early: Option<bool>,
    pub cv_folds: Option<usize>,
    pub cv_mean: Option<f64>,
    pub cv_std: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub model: ModelChoice,
    pub train_run: String,
    pub test_windows: usize,
    pub accuracy: f64,
    pub f1_macro: f64,
    pub precision_weighted: f64,
    pub recall_weighted: f64,
}

/// Config section and upstream stage for each model.
fn recipe(model: ModelChoice) -> (&'static str, &'static str) {
    match model {
        ModelChoice::Multibranch => ("train", "mfcc"),
        ModelChoice::SimpleNn => ("simple_nn", "augment"),
        ModelChoice::Knn => ("knn", "segment"),
    }
}

fn windows(up: &Upstream, name: &str) -> Result<Vec<SequenceWindow>> {
    let path = up.path(&format!("{name}.gsw"));
    if up.manifest.upstream.is_none() || !path.exists() {
        return Err(data(format!("{} was not made from a split", up.dir.display())));
    }
    Ok(load_windows(&path)?.0)
}

fn features(up: &Upstream, name: &str) -> Result<TensorDataset> {
    Ok(TensorDataset::load(&up.path(&format!("{name}.gsf")))?.0)
}

fn train_network(
    run: &mut Run,
    net: &mut dyn Network,
    kind: ModelKind,
    data: (&TensorDataset, &TensorDataset),
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let outcome = fit(net, data.0, data.1, cfg)?;
    let ck = Checkpoint {
        kind,
        architecture: net.architecture(),
        epoch: outcome.best_epoch,
        best_val_acc: outcome.best_val_acc,
        best_val_loss: outcome.best_val_loss,
        seed,
        config: serde_json::to_value(cfg)?,
    };
    ck.save(net, &run.output("model.gsc"))?;
    run.write("history.csv", &outcome.history.to_csv())?;
    run.write("curves.svg", &training_curves_svg(&outcome.history, "training curves"))?;
    Ok(outcome)
}

pub fn train(ctx: &mut Ctx, model: ModelChoice, input: &Path, epochs: Option<usize>) -> Result<()> {
    if let Some(e) = epochs {
        let cfg = match model {
            ModelChoice::Multibranch => &mut ctx.cfg.train,
            ModelChoice::SimpleNn => &mut ctx.cfg.simple_nn,
            ModelChoice::Knn => return Err(usage("--epochs does not apply to knn")),
        };
        cfg.max_epochs = e;
        cfg.early_stop_patience = cfg.early_stop_patience.min(e);
        ctx.cfg.finalize()?;
    }
    let (section, stage) = recipe(model);
    let up = Upstream::open(input, &[stage], &ctx.cfg)?;
    let seed = ctx.cfg.seed;
    let mut run = Run::create("train", &ctx.run_root, ctx.out.as_deref(), &ctx.cfg, &[section], &[], Some(&up))?;
    let summary = match model {
        ModelChoice::Multibranch => {
            let (tr, va) = (features(&up, "train")?, features(&up, "val")?);
            let shape = tr.sample_shape().to_vec();
            let mut net = MultiBranchNet::new(shape[1], shape[2], seed)?;
            let kind = ModelKind::Multibranch {
                n_frames: shape[1],
                n_coeffs: shape[2],
            };
            let out = train_network(&mut run, &mut net, kind, (&tr, &va), &ctx.cfg.train, seed)?;
            net_summary(model, tr.len(), &out)
        }
        ModelChoice::SimpleNn => {
            let (tw, vw) = (windows(&up, "train")?, windows(&up, "val")?);
            let (tr, va) = (flat_dataset(&tw)?, flat_dataset(&vw)?);
            let spec = SimpleNnSpec::for_window(tw[0].len());
            let mut net = SimpleNn::new(spec.clone(), seed)?;
            let out = train_network(&mut run, &mut net, ModelKind::SimpleNn { spec }, (&tr, &va), &ctx.cfg.simple_nn, seed)?;
            net_summary(model, tr.len(), &out)
        }
        ModelChoice::Knn => {
            let tw = windows(&up, "train")?;
            let rows: Vec<Vec<f64>> = tw.iter().map(SequenceWindow::flatten).collect();
            let labels: Vec<ClassLabel> = tw.iter().map(|w| w.label).collect();
            let knn = KnnModel::fit(&rows, &labels, ctx.cfg.knn.k)?;
            knn.save(&run.output("model.gsk"))?;
            // Small corpora get fewer folds so every fold still sees every class.
            let smallest = (0..NUM_CLASSES)
                .map(|c| labels.iter().filter(|l| l.index() == c).count())
                .min()
                .unwrap_or(0);
            let folds = ctx.cfg.knn.cv_folds.min(smallest);
            let cv = if folds >= 2 {
                if folds < ctx.cfg.knn.cv_folds {
                    println!("note: smallest class has {smallest} windows; cross-validating with {folds} folds");
                }
                let cv = cross_validate(&rows, &labels, ctx.cfg.knn.k, folds, seed)?;
                println!("cv accuracy: {:.4} +/- {:.4}", cv.mean, cv.std);
                Some(cv)
            } else {
                println!("note: smallest class has {smallest} windows; skipping cross-validation");
                None
            };
            TrainSummary {
                model,
                train_windows: rows.len(),
                best_epoch: None,
                best_val_acc: None,
                best_val_loss: None,
                epochs_run: None,
                stopped_early: None,
                cv_folds: cv.as_ref().map(|_| folds),
                cv_mean: cv.as_ref().map(|c| c.mean),
                cv_std: cv.as_ref().map(|c| c.std),
            }
        }
    };
    run.write(SUMMARY_FILE, &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    run.finish()?;
    Ok(())
}

fn net_summary(model: ModelChoice, n: usize, out: &TrainOutcome) -> TrainSummary {
    println!(
        "best epoch {} of {}: val accuracy {:.4}, val loss {:.4}",
        out.best_epoch,
        out.history.epochs.len(),
        out.best_val_acc,
        out.best_val_loss
    );
    TrainSummary {
        model,
        train_windows: n,
        best_epoch: Some(out.best_epoch),
        best_val_acc: Some(out.best_val_acc),
        best_val_loss: Some(out.best_val_loss),
        epochs_run: Some(out.history.epochs.len()),
        stopped_early: Some(out.stopped_early),
        cv_folds: None,
        cv_mean: None,
        cv_std: None,
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let names: Vec<String> = ClassLabel::all().map(|l| l.to_string()).collect();
    let mut out = format!("true\\predicted,{}\n", names.join(","));
    for (name, row) in names.iter().zip(cm.counts()) {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        out.push_str(&format!("{name},{}\n", cells.join(",")));
    }
    out
}

/// Evaluation has no settings of its own: it runs under the config the
/// train run recorded, so the model and its test data are checked against
/// the settings that made them.
pub fn evaluate(ctx: &mut Ctx, model_dir: &Path) -> Result<()> {
    ctx.cfg = config::load(Some(&model_dir.join(CONFIG_FILE)), &[])
        .map_err(|e| data(format!("{}: {}", model_dir.display(), one_line(&e))))?;
    let up = Upstream::open(model_dir, &["train"], &ctx.cfg)?;
    let summary: TrainSummary = read_json(&up.path(SUMMARY_FILE))?;
    let (_, stage) = recipe(summary.model);
    let source = up
        .manifest
        .upstream
        .as_deref()
        .ok_or_else(|| data(format!("{} records no upstream run", up.dir.display())))?;
    let src = Upstream::open(Path::new(source), &[stage], &ctx.cfg)?;
    let (truth, predicted) = match summary.model {
        ModelChoice::Knn => {
            let knn = KnnModel::load(&up.path("model.gsk"))?;
            let test = windows(&src, "test")?;
            let rows: Vec<Vec<f64>> = test.iter().map(SequenceWindow::flatten).collect();
            let pred = knn.predict_labels(&rows)?.iter().map(|l| l.index()).collect();
            (test.iter().map(|w| w.label.index()).collect::<Vec<_>>(), pred)
        }
        other => {
            let predictor = Predictor::load(&up.path("model.gsc"))?;
            let test = if other == ModelChoice::Multibranch {
                features(&src, "test")?
            } else {
                flat_dataset(&windows(&src, "test")?)?
            };
            let pred = predict_dataset(predictor.network(), &test, 256)?;
            (test.labels.clone(), pred)
        }
    };
    let cm = ConfusionMatrix::from_indices(&truth, &predicted, NUM_CLASSES)?;
    let report = metrics(&cm)?;
    let eval = EvalSummary {
        model: summary.model,
        train_run: up.dir.to_string_lossy().into_owned(),
        test_windows: truth.len(),
        accuracy: report.accuracy,
        f1_macro: report.f1_macro,
        precision_weighted: report.precision_weighted,
        recall_weighted: report.recall_weighted,
    };
    let mut run = Run::create("evaluate", &ctx.run_root, ctx.out.as_deref(), &ctx.cfg, &[], &[], Some(&up))?;
    run.write("metrics.json", &(report.to_json() + "\n"))?;
    run.write("confusion.csv", &confusion_csv(&cm))?;
    run.write("confusion.svg", &confusion_svg(&cm, &format!("{} test confusion", summary.model)))?;
    run.write(EVAL_FILE, &(serde_json::to_string_pretty(&eval)? + "\n"))?;
    println!("model: {}", summary.model);
    println!("test windows: {}", truth.len());
    println!("accuracy: {:.4}", report.accuracy);
    println!("f1 macro: {:.4}", report.f1_macro);
    for w in &report.warnings {
        println!("warning: {w}");
    }
    run.finish()?;
    Ok(())
}

pub fn ablate(ctx: &mut Ctx, data_dir: &Path) -> Result<()> {
    let recs = load_dataset(data_dir)?;
    if recs.is_empty() {
        return Err(data(format!("{} holds no recordings", data_dir.display())));
    }
    let ab = ctx.cfg.ablation.clone();
    let rows = ablate_window(&recs, &ab.windows, ab.model, &ctx.cfg.pipeline(), &ctx.cfg.recipes())?;
    let sections = ["seed", "qc", "split", "augment", "mfcc", "train", "simple_nn", "knn", "ablation"];
    let inputs = corpus_files(data_dir, &recs);
    let mut run = Run::create("ablate-window", &ctx.run_root, ctx.out.as_deref(), &ctx.cfg, &sections, &inputs, None)?;
    let table = ablation_table(&rows);
    run.write("ablation.json", &(serde_json::to_string_pretty(&json!({"model": ab.model, "rows": rows}))? + "\n"))?;
    run.write("table.txt", &table)?;
    println!("model: {}", ab.model);
    print!("{table}");
    run.finish()?;
    Ok(())
}

pub fn report(ctx: &mut Ctx, runs: &[PathBuf]) -> Result<()> {
    let mut opened = Vec::with_capacity(runs.len());
    for dir in runs {
        opened.push(Upstream::open_unchecked(dir)?);
    }
    let mut evals = String::new();
    let mut trains = String::new();
    let mut ablations = String::new();
    for up in &opened {
        let name = up.dir.display();
        match up.manifest.stage.as_str() {
            "evaluate" => {
                let e: EvalSummary = read_json(&up.path(EVAL_FILE))?;
                writeln!(
                    evals,
                    "| {name} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} |",
                    e.model, e.test_windows, e.accuracy, e.f1_macro, e.precision_weighted, e.recall_weighted
                )?;
            }
            "train" => {
                let t: TrainSummary = read_json(&up.path(SUMMARY_FILE))?;
                let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                writeln!(
                    trains,
                    "| {name} | {} | {} | {} | {} | {} |",
                    t.model,
                    t.train_windows,
                    t.best_epoch.map_or("-".to_string(), |e| e.to_string()),
                    opt(t.best_val_acc),
                    opt(t.cv_mean)
                )?;
            }
            "ablate-window" => {
                let table = std::fs::read_to_string(up.path("table.txt"))?;
                writeln!(ablations, "{name}\n\n```\n{table}```\n")?;
            }
            other => return Err(usage(format!("cannot report on a '{other}' run ({name})"))),
        }
    }
    let mut md = String::from("# tribosign report\n");
    if !evals.is_empty() {
        md.push_str("\n## Test results\n\n| run | model | windows | accuracy | F1 macro | precision weighted | recall weighted |\n|---|---|---|---|---|---|---|\n");
        md.push_str(&evals);
    }
    if !trains.is_empty() {
        md.push_str("\n## Training\n\n| run | model | windows | best epoch | best val accuracy | CV accuracy |\n|---|---|---|---|---|---|\n");
        md.push_str(&trains);
    }
    if !ablations.is_empty() {
        md.push_str("\n## Window size\n\n");
        md.push_str(&ablations);
    }
    let inputs: Vec<PathBuf> = opened.iter().map(|u| u.path(crate::run::RUN_FILE)).collect();
    let mut run = Run::create("report", &ctx.run_root, ctx.out.as_deref(), &ctx.cfg, &[], &inputs, None)?;
    run.write("report.md", &md)?;
    print!("{md}");
    run.finish()?;
    Ok(())
}
