//! Run directories: each stage writes its outputs, a config echo and a
//! `run.json` manifest of input and output digests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, RunConfig};
use crate::error::{data, usage};

pub const RUN_FILE: &str = "run.json";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub tool_version: String,
    /// sha256 of the full config echo.
    pub config_hash: String,
    /// Per-section hashes of every setting this run and its upstream used.
    pub sections: BTreeMap<String, String>,
    pub upstream: Option<String>,
    /// Absolute paths.
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the run directory.
    pub outputs: Vec<FileDigest>,
    pub wall_time_s: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn digest(path: &Path, shown: String) -> Result<FileDigest> {
    Ok(FileDigest {
        path: shown,
        sha256: sha256_file(path)?,
    })
}

fn absolute(path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).with_context(|| format!("resolving {}", path.display()))
}

/// A verified run directory produced by an earlier stage.
#[derive(Debug, Clone)]
pub struct Upstream {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl Upstream {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Open `dir`, check it came from one of `stages`, and refuse it if any
    /// recorded file changed or it was made under different settings.
    pub fn open(dir: &Path, stages: &[&str], cfg: &RunConfig) -> Result<Upstream> {
        let up = Upstream::open_unchecked(dir)?;
        if !stages.contains(&up.manifest.stage.as_str()) {
            return Err(usage(format!(
                "{} is a '{}' run; expected one of: {}",
                dir.display(),
                up.manifest.stage,
                stages.join(", ")
            )));
        }
        for (section, hash) in &up.manifest.sections {
            if &cfg.section_hash(section) != hash {
                return Err(data(format!(
                    "stale input: {} was produced with different '{section}' settings",
                    up.dir.display()
                )));
            }
        }
        Ok(up)
    }

    /// Open any run, checking only that its recorded files are unchanged.
    pub fn open_unchecked(dir: &Path) -> Result<Upstream> {
        let run_file = dir.join(RUN_FILE);
        if !run_file.exists() {
            return Err(data(format!("{} is not a run directory (no {RUN_FILE})", dir.display())));
        }
        let text = fs::read_to_string(&run_file).with_context(|| format!("reading {}", run_file.display()))?;
        let manifest: RunManifest =
            serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", run_file.display())))?;
        let dir = absolute(dir)?;
        let recorded = manifest
            .inputs
            .iter()
            .map(|d| (PathBuf::from(&d.path), d))
            .chain(manifest.outputs.iter().map(|d| (dir.join(&d.path), d)));
        for (path, d) in recorded {
            let now = sha256_file(&path).map_err(|_| data(format!("stale input: {} is missing", path.display())))?;
            if now != d.sha256 {
                return Err(data(format!(
                    "stale input: {} changed after the '{}' run recorded it",
                    path.display(),
                    manifest.stage
                )));
            }
        }
        Ok(Upstream { dir, manifest })
    }
}

/// A run directory being written.
pub struct Run {
    dir: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl Run {
    /// Create (or reuse) the directory for `stage`. Without `out` the
    /// directory is `root/<stage>-<key>`, where the key hashes the settings,
    /// inputs and upstream.
    pub fn create(
        stage: &str,
        root: &Path,
        out: Option<&Path>,
        cfg: &RunConfig,
        sections: &[&str],
        inputs: &[PathBuf],
        upstream: Option<&Upstream>,
    ) -> Result<Run> {
        let started = Instant::now();
        let mut map: BTreeMap<String, String> = upstream.map(|u| u.manifest.sections.clone()).unwrap_or_default();
        for s in sections {
            map.insert(s.to_string(), cfg.section_hash(s));
        }
        let inputs = inputs
            .iter()
            .map(|p| {
                let abs = absolute(p)?;
                digest(&abs, abs.to_string_lossy().into_owned())
            })
            .collect::<Result<Vec<_>>>()?;
        let upstream_dir = upstream.map(|u| u.dir.to_string_lossy().into_owned());
        let mut key = Sha256::new();
        key.update(stage.as_bytes());
        key.update(serde_json::to_vec(&(&map, &inputs, &upstream_dir)).expect("key serializes"));
        let key = hex(&key.finalize());
        let dir = match out {
            Some(p) => p.to_path_buf(),
            None => root.join(format!("{stage}-{}", &key[..12])),
        };
        prepare_dir(&dir)?;
        let dir = absolute(&dir)?;
        fs::write(dir.join(CONFIG_FILE), cfg.echo()).with_context(|| format!("writing {}", dir.display()))?;
        let config_hash = hex(&Sha256::digest(cfg.echo().as_bytes()));
        Ok(Run {
            dir,
            manifest: RunManifest {
                stage: stage.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash,
                sections: map,
                upstream: upstream_dir,
                inputs,
                outputs: Vec::new(),
                wall_time_s: 0.0,
            },
            started,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Path for an output; it is digested when the run finishes.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.manifest.outputs.push(FileDigest {
            path: name.to_string(),
            sha256: String::new(),
        });
        self.dir.join(name)
    }

    /// Write a text output.
    pub fn write(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.output(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        for d in &mut self.manifest.outputs {
            d.sha256 = sha256_file(&self.dir.join(&d.path))?;
        }
        self.manifest.outputs.push(digest(&self.dir.join(CONFIG_FILE), CONFIG_FILE.to_string())?);
        self.manifest.wall_time_s = self.started.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(self.dir.join(RUN_FILE), text + "\n").with_context(|| format!("writing {}", self.dir.display()))?;
        println!("run: {}", self.dir.display());
        Ok(self.dir)
    }
}

/// Make `dir` an empty directory, clearing it only if it holds an earlier run.
fn prepare_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let empty = fs::read_dir(dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .next()
            .is_none();
        if !empty {
            if !dir.join(RUN_FILE).exists() && !dir.join(CONFIG_FILE).exists() {
                return Err(usage(format!("refusing to overwrite {}: not a run directory", dir.display())));
            }
            fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}
