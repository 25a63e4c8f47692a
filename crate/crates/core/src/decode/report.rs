//! CSV tables assembled from run and decode directories.
//!
//! `iterations.csv`: run, variant, iteration, layer, K, purity, nmi, wer.
//! `variants.csv`: run, variant, iterations, purity, nmi, wer.
//! `wer_by_length.csv`: decode, ref_words, utterances, errors, wer.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::trainer::{load_run, InputMode, RunRecord, UttScore, RUN_FILE};

pub const DECODE_FILE: &str = "decode.json";

/// Scores of a fine-tuned model on the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    /// Name of the pretraining run directory the model started from.
    pub run: Option<String>,
    pub iteration: Option<usize>,
    pub mode: InputMode,
    pub wer: f64,
    pub utterances: Vec<UttScore>,
}

impl DecodeRecord {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(DECODE_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)?).at(path)
    }
}

/// Directories loaded for a report, keyed by directory name.
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    pub runs: BTreeMap<String, RunRecord>,
    pub decodes: BTreeMap<String, DecodeRecord>,
}

fn dir_name(dir: &Path) -> String {
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string())
}

/// Reads every directory as a run (`run.json`) or a decode (`decode.json`).
/// Directories holding neither are reported together.
pub fn load_inputs(dirs: &[PathBuf]) -> Result<Inputs> {
    if dirs.is_empty() {
        return Err(Error::Param("report needs at least one run or decode directory".into()));
    }
    let mut inputs = Inputs::default();
    let mut missing = Vec::new();
    for d in dirs {
        let name = dir_name(d);
        let (run, dec) = (d.join(RUN_FILE), d.join(DECODE_FILE));
        if run.is_file() {
            inputs.runs.insert(name.clone(), load_run(d)?);
        }
        if dec.is_file() {
            let text = std::fs::read_to_string(&dec).at(&dec)?;
            inputs.decodes.insert(name, serde_json::from_str(&text)?);
        }
        if !run.is_file() && !dec.is_file() {
            missing.push(run);
            missing.push(dec);
        }
    }
    if !missing.is_empty() {
        return Err(Error::Missing(missing));
    }
    Ok(inputs)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Inputs {
    /// Lowest WER among decodes of `run` at `iteration` (any iteration when
    /// `None`).
    fn wer_of(&self, run: &str, iteration: Option<usize>) -> Option<f64> {
        self.decodes
            .values()
            .filter(|d| d.run.as_deref() == Some(run) && (iteration.is_none() || d.iteration == iteration))
            .map(|d| d.wer)
            .min_by(f64::total_cmp)
    }

    pub fn iteration_rows(&self) -> Vec<[String; 8]> {
        let mut rows = Vec::new();
        for (name, r) in &self.runs {
            for it in &r.iterations {
                rows.push([
                    name.clone(),
                    r.variant.to_string(),
                    it.iteration.to_string(),
                    it.layer.map(|l| l.to_string()).unwrap_or_default(),
                    it.k.to_string(),
                    it.purity.to_string(),
                    it.nmi.to_string(),
                    fmt_opt(self.wer_of(name, Some(it.iteration))),
                ]);
            }
        }
        rows
    }

    pub fn variant_rows(&self) -> Vec<[String; 6]> {
        self.runs
            .iter()
            .filter_map(|(name, r)| {
                let last = r.iterations.last()?;
                Some([
                    name.clone(),
                    r.variant.to_string(),
                    r.iterations.len().to_string(),
                    last.purity.to_string(),
                    last.nmi.to_string(),
                    fmt_opt(self.wer_of(name, None)),
                ])
            })
            .collect()
    }

    /// One row per decode and reference length in words.
    pub fn length_rows(&self) -> Vec<[String; 5]> {
        let mut rows = Vec::new();
        for (name, d) in &self.decodes {
            let mut buckets: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
            for u in &d.utterances {
                let b = buckets.entry(u.ref_words).or_default();
                b.0 += 1;
                b.1 += u.errors;
            }
            for (len, (n, errs)) in buckets {
                rows.push([
                    name.clone(),
                    len.to_string(),
                    n.to_string(),
                    errs.to_string(),
                    (errs as f64 / (len * n) as f64).to_string(),
                ]);
            }
        }
        rows
    }
}

fn write_csv<const N: usize>(path: &Path, header: [&str; N], rows: &[[String; N]]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().at(path)?;
    Ok(())
}

/// Writes the three report tables into `out` and returns their paths.
pub fn report(dirs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let inputs = load_inputs(dirs)?;
    std::fs::create_dir_all(out).at(out)?;
    let paths = [out.join("iterations.csv"), out.join("variants.csv"), out.join("wer_by_length.csv")];
    write_csv(
        &paths[0],
        ["run", "variant", "iteration", "layer", "K", "purity", "nmi", "wer"],
        &inputs.iteration_rows(),
    )?;
    write_csv(&paths[1], ["run", "variant", "iterations", "purity", "nmi", "wer"], &inputs.variant_rows())?;
    write_csv(&paths[2], ["decode", "ref_words", "utterances", "errors", "wer"], &inputs.length_rows())?;
    Ok(paths.to_vec())
}
