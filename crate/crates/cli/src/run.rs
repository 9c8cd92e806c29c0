//! Shared plumbing: config resolution, datasets, the output directory and
//! its manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::Args;
use kprox::data::{load_debutanizer, load_table, make_toy_regression, TableOptions, TabularDataset};
use kprox::train::{override_field, TrainConfig};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON file with config fields; merged over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "runs/latest")]
    pub out: PathBuf,
    /// Field override, repeatable. Nested fields use dots: `kernel.bandwidth=median`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// `toy`, `dbc`, `dbc:<path>` or `csv:<path>` (label in the last column).
    #[arg(long, default_value = "toy")]
    pub dataset: String,
    /// `desk`, `paper` or `smoke`.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    /// Sets both stage epoch counts.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Rows generated for the toy dataset.
    #[arg(long, default_value_t = 500)]
    pub toy_rows: usize,
}

/// Applies the config file, the overrides and `--seed` to `base`, in that order.
pub fn resolve<C: Serialize + DeserializeOwned>(base: C, common: &CommonArgs) -> Result<C> {
    let mut doc = serde_json::to_value(&base)?;
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let Value::Object(fields) = file else {
            bail!("{} must hold a JSON object", path.display());
        };
        let obj = doc.as_object_mut().expect("configs serialize to objects");
        for (k, v) in fields {
            obj.insert(k, v);
        }
    }
    let mut cfg: C = serde_json::from_value(doc).context("invalid config file")?;
    for item in &common.overrides {
        let (k, v) = item
            .split_once('=')
            .with_context(|| format!("override `{item}` is not key=value"))?;
        override_field(&mut cfg, k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        override_field(&mut cfg, "seed", &seed.to_string())?;
    }
    Ok(cfg)
}

pub fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = resolve(TrainConfig::preset(&args.preset)?, &args.common)?;
    if let Some(e) = args.epochs {
        cfg.epochs_generative = e;
        cfg.epochs_inference = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dbc_default_path() -> PathBuf {
    std::env::var_os("KPROX_DBC_PATH")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/debutanizer_data.txt"))
}

pub fn load_dataset(spec: &str, seed: u64, toy_rows: usize) -> Result<TabularDataset> {
    let ds = match spec.split_once(':') {
        None if spec == "toy" => make_toy_regression(seed, toy_rows)?,
        None if spec == "dbc" => {
            let path = dbc_default_path();
            load_debutanizer(&path).with_context(|| {
                format!("loading {} (set KPROX_DBC_PATH or pass --dataset dbc:<path>)", path.display())
            })?
        }
        Some(("dbc", path)) => load_debutanizer(path)?,
        Some(("csv", path)) => load_table(path, &TableOptions::default())?,
        _ => bail!("unknown dataset `{spec}` (expected toy, dbc, dbc:<path> or csv:<path>)"),
    };
    Ok(ds)
}

fn unix_seconds() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'static str,
    seed: u64,
    config: &'a Value,
    config_hash: String,
    started_unix: u64,
    finished_unix: u64,
    outputs: &'a [String],
}

/// Output directory that remembers what was written to it.
pub struct RunDir {
    root: PathBuf,
    command: &'static str,
    started: u64,
    outputs: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path, command: &'static str) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            command,
            started: unix_seconds(),
            outputs: Vec::new(),
        })
    }

    /// Writes `rel` through `body` and records it.
    pub fn write(&mut self, rel: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut out = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        body(&mut out).and_then(|()| out.flush()).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(rel.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.write(rel, |w| writeln!(w, "{text}"))
    }

    /// Writes `manifest.json` last; every listed output exists by then.
    pub fn finish<C: Serialize>(mut self, seed: u64, config: &C) -> Result<()> {
        let config = serde_json::to_value(config)?;
        let canonical = serde_json::to_vec(&config)?;
        let config_hash = {
            use sha2::{Digest, Sha256};
            Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
        };
        let outputs = std::mem::take(&mut self.outputs);
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config: &config,
            config_hash,
            started_unix: self.started,
            finished_unix: unix_seconds(),
            outputs: &outputs,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(self.root.join("manifest.json"), format!("{text}\n"))?;
        Ok(())
    }
}
