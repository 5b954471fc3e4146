//! Data stages: synth, split, segment, augment, mfcc.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tribosign_core::augment::augment_dataset;
use tribosign_core::data::{load_dataset, load_recording, stratified_split, MANIFEST_FILE};
use tribosign_core::dsp::mfcc::{dump_mfc1, MfccExtractor};
use tribosign_core::pipeline::{augment_splits, mfcc_dataset, quality_control, raw_windows};
use tribosign_core::preprocess::{load_windows, per_sequence_normalize, save_windows, segment};
use tribosign_core::synth::{generate_corpus, write_corpus};
use tribosign_core::{ClassLabel, Recording, SequenceWindow};

use crate::error::data;
use crate::run::{Run, Upstream};
use crate::Ctx;

pub const SPLITS: [&str; 3] = ["train", "val", "test"];
pub const SPLIT_FILE: &str = "split.json";

/// Recording ids per subset plus where they came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitFile {
    pub data_dir: PathBuf,
    pub qc_rows_removed: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Every file a corpus directory contributes, for digests.
pub fn corpus_files(dir: &Path, recs: &[Recording]) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = recs.iter().map(|r| dir.join(&r.id)).collect();
    let manifest = dir.join(MANIFEST_FILE);
    if manifest.exists() {
        files.push(manifest);
    }
    files
}

pub fn synth(ctx: &mut Ctx) -> Result<()> {
    let recs = generate_corpus(&ctx.cfg.synth)?;
    let mut run = Run::create("synth", &ctx.run_root, ctx.out.as_deref(), &ctx.cfg, &["seed", "synth"], &[], None)?;
    let data_dir = run.dir().join("data");
    let written = write_corpus(&data_dir, &recs)?;
    for p in written.iter().chain(std::iter::once(&data_dir.join(MANIFEST_FILE))) {
        let rel = p.strip_prefix(run.dir()).expect("inside run").to_string_lossy().into_owned();
        run.output(&rel);
    }
    let samples: usize = recs.iter().map(Recording::len).sum();
    println!("recordings: {}", recs.len());
    println!("samples: {samples}");
    println!("data: {}", data_dir.display());
    run.finish()?;
    Ok(())
}

pub fn split(ctx: &mut Ctx, data_dir: &Path) -> Result<()> {
    let recs = load_dataset(data_dir)?;
    if recs.is_empty() {
        return Err(data(format!("{} holds no recordings", data_dir.display())));
    }
    let (clean, removed) = quality_control(&recs, &ctx.cfg.qc)?;
    let part = stratified_split(&clean, &ctx.cfg.split)?;
    let ids = |idx: &[usize]| idx.iter().map(|&i| clean[i].id.clone()).collect::<Vec<_>>();
    let file = SplitFile {
        data_dir: std::fs::canonicalize(data_dir).with_context(|| format!("resolving {}", data_dir.display()))?,
        qc_rows_removed: removed,
        train: ids(&part.train),
        val: ids(&part.val),
        test: ids(&part.test),
    };
    let inputs = corpus_files(data_dir, &recs);
    let mut run = Run::create(
        "split",
        &ctx.run_root,
        ctx.out.as_deref(),
        &ctx.cfg,
        &["seed", "qc", "split"],
        &inputs,
        None,
    )?;
    run.write(SPLIT_FILE, &(serde_json::to_string_pretty(&file)? + "\n"))?;
    println!("recordings: train {} / val {} / test {}", file.train.len(), file.val.len(), file.test.len());
    println!("qc rows removed: {removed}");
    run.finish()?;
    Ok(())
}

/// Recordings of each subset of a split run, quality-filtered.
fn split_recordings(up: &Upstream, ctx: &Ctx) -> Result<[Vec<Recording>; 3]> {
    let text = std::fs::read_to_string(up.path(SPLIT_FILE))?;
    let file: SplitFile = serde_json::from_str(&text).map_err(|e| data(format!("{SPLIT_FILE}: {e}")))?;
    let (clean, _) = quality_control(&load_dataset(&file.data_dir)?, &ctx.cfg.qc)?;
    let by_id: HashMap<&str, &Recording> = clean.iter().map(|r| (r.id.as_str(), r)).collect();
    let pick = |ids: &[String]| {
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|r| (*r).clone())
                    .ok_or_else(|| data(format!("recording {id} missing from {}", file.data_dir.display())))
            })
            .collect::<Result<Vec<_>>>()
    };
    Ok([pick(&file.train)?, pick(&file.val)?, pick(&file.test)?])
}

pub fn segment_split(ctx: &mut Ctx, split_dir: &Path) -> Result<()> {
    let up = Upstream::open(split_dir, &["split"], &ctx.cfg)?;
    let subsets = split_recordings(&up, ctx)?;
    let w = ctx.cfg.window;
    let mut run = Run::create("segment", &ctx.run_root, ctx.out.as_deref(), &ctx.cfg, &["window"], &[], Some(&up))?;
    let mut total = 0;
    for (name, recs) in SPLITS.iter().zip(&subsets) {
        let raw = raw_windows(recs, w);
        let norm: Vec<SequenceWindow> = raw.iter().map(per_sequence_normalize).collect();
        if raw.is_empty() {
            return Err(data(format!("window {w} leaves the {name} split empty")));
        }
        save_windows(&run.output(&format!("{name}.gsw")), &raw, json!({"split": name, "normalized": false}))?;
        save_windows(&run.output(&format!("{name}.norm.gsw")), &norm, json!({"split": name, "normalized": true}))?;
        println!("{name}: {} windows from {} recordings", raw.len(), recs.len());
        total += raw.len();
    }
    println!("windows: {total}");
    run.finish()?;
    Ok(())
}

pub fn segment_file(ctx: &mut Ctx, input: &Path, label: &str) -> Result<()> {
    let label: ClassLabel = label.parse()?;
    let rec = load_recording(input, label)?;
    let w = ctx.cfg.window;
    let windows = segment(&rec, w);
    let mut run = Run::create(
        "segment",
        &ctx.run_root,
        ctx.out.as_deref(),
        &ctx.cfg,
        &["window"],
        &[input.to_path_buf()],
        None,
    )?;
    save_windows(&run.output("windows.gsw"), &windows, json!({"normalized": false}))?;
    println!("samples: {}", rec.len());
    println!("dropped: {}", rec.len() - windows.len() * w);
    println!("windows: {}", windows.len());
    run.finish()?;
    Ok(())
}

pub fn augment_run(ctx: &mut Ctx, segment_dir: &Path) -> Result<()> {
    let up = Upstream::open(segment_dir, &["segment"], &ctx.cfg)?;
    let load = |name: &str| -> Result<Vec<SequenceWindow>> {
        let path = up.path(&format!("{name}.norm.gsw"));
        if !path.exists() {
            return Err(data(format!("{} was cut from a single file, not a split", up.dir.display())));
        }
        Ok(load_windows(&path)?.0)
    };
    let (train, val, test) = (load("train")?, load("val")?, load("test")?);
    let n_train = train.len();
    let (train, val) = augment_splits(&train, val, &ctx.cfg.augment)?;
    let mut run = Run::create("augment", &ctx.run_root, ctx.out.as_deref(), &ctx.cfg, &["augment"], &[], Some(&up))?;
    for (name, ws) in SPLITS.iter().zip([&train, &val, &test]) {
        save_windows(&run.output(&format!("{name}.gsw")), ws, json!({"split": name, "normalized": true}))?;
        println!("{name}: {} windows", ws.len());
    }
    println!("train expansion: {n_train} -> {}", train.len());
    run.finish()?;
    Ok(())
}

pub fn augment_file(ctx: &mut Ctx, input: &Path) -> Result<()> {
    let (windows, info) = load_windows(input)?;
    let out = augment_dataset(&windows, &ctx.cfg.augment)?;
    let mut run = Run::create(
        "augment",
        &ctx.run_root,
        ctx.out.as_deref(),
        &ctx.cfg,
        &["seed", "augment"],
        &[input.to_path_buf()],
        None,
    )?;
    save_windows(&run.output("windows.gsw"), &out, json!({"source": info, "augmented": true}))?;
    println!("windows: {} -> {}", windows.len(), out.len());
    run.finish()?;
    Ok(())
}

pub fn mfcc_run(ctx: &mut Ctx, augment_dir: &Path) -> Result<()> {
    let up = Upstream::open(augment_dir, &["augment"], &ctx.cfg)?;
    if up.manifest.upstream.is_none() {
        return Err(data(format!("{} augments a single file, not a split", up.dir.display())));
    }
    let mut run = Run::create("mfcc", &ctx.run_root, ctx.out.as_deref(), &ctx.cfg, &["mfcc"], &[], Some(&up))?;
    for name in SPLITS {
        let (ws, _) = load_windows(&up.path(&format!("{name}.gsw")))?;
        let ds = mfcc_dataset(&ws, &ctx.cfg.mfcc)?;
        ds.save(&run.output(&format!("{name}.gsf")), json!({"split": name}))?;
        println!("{name}: {} x {:?}", ds.len(), ds.sample_shape());
    }
    run.finish()?;
    Ok(())
}

pub fn mfcc_file(ctx: &mut Ctx, input: &Path, dump: bool) -> Result<()> {
    let (ws, _) = load_windows(input)?;
    let ds = mfcc_dataset(&ws, &ctx.cfg.mfcc)?;
    let mut run = Run::create(
        "mfcc",
        &ctx.run_root,
        ctx.out.as_deref(),
        &ctx.cfg,
        &["mfcc"],
        &[input.to_path_buf()],
        None,
    )?;
    ds.save(&run.output("features.gsf"), json!({}))?;
    if dump {
        let ex = MfccExtractor::new(ctx.cfg.mfcc)?;
        std::fs::create_dir_all(run.dir().join("mfc"))?;
        for (i, w) in ws.iter().enumerate() {
            let name = format!("mfc/{i:05}.mfc");
            let path = run.output(&name);
            run.output(&format!("{name}.txt"));
            dump_mfc1(&path, &ex.extract(w)?, &ctx.cfg.mfcc)?;
        }
    }
    println!("features: {} x {:?}", ds.len(), ds.sample_shape());
    run.finish()?;
    Ok(())
}
