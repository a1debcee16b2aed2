//! Diagnostics of cloned weights: row symmetry cosine between duplicate
//! column groups, and singular-value spectra with near-zero counts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::cloning::{CloneMap, ExpansionReceipt};
use crate::error::ensure;
use crate::model::{ModelConfig, TransformerParams};
use crate::tensor::{singular_values, Matrix, Scalar};
use crate::train::{AdamState, StepHook};
use crate::{Error, Result};

/// Default relative threshold below which a singular value counts as zero.
pub const DEFAULT_ZERO_THRESHOLD: f64 = 1e-6;

/// Mean cosine similarity between the duplicate column groups of each row.
///
/// Columns are grouped by clone copy number, so group `g` of a row holds
/// the `g`-th preimage of every source column. Every unordered pair of
/// groups in every row contributes one cosine; a pair with a zero-norm
/// side contributes 0.
pub fn symmetry_cosine<T: Scalar>(w: &Matrix<T>, in_map: &CloneMap) -> Result<f64> {
    ensure!(w.cols() == in_map.dest_size(), "matrix has {} columns, clone map covers {}", w.cols(), in_map.dest_size());
    let n = in_map.uniform_fold().unwrap_or(0);
    ensure!(n >= 2, "symmetry cosine needs a uniform fold of at least 2 (got {:?})", in_map.uniform_fold());
    let pre = in_map.preimages();
    let mut total = 0.0;
    let mut count = 0usize;
    let mut groups = vec![vec![0.0f64; pre.len()]; n];
    let mut norms = vec![0.0f64; n];
    for r in 0..w.rows() {
        let row = w.row(r);
        for (g, group) in groups.iter_mut().enumerate() {
            for (j, cols) in pre.iter().enumerate() {
                group[j] = row[cols[g]].as_f64();
            }
            norms[g] = group.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        for a in 0..n {
            for b in a + 1..n {
                if norms[a] > 0.0 && norms[b] > 0.0 {
                    let dot: f64 = groups[a].iter().zip(&groups[b]).map(|(x, y)| x * y).sum();
                    total += dot / (norms[a] * norms[b]);
                }
                count += 1;
            }
        }
    }
    ensure!(count > 0, "symmetry cosine of an empty matrix");
    Ok(total / count as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Singular values, descending.
    pub values: Vec<f64>,
    /// Number of values `≤ threshold · σ_max`.
    pub zero_count: usize,
    pub threshold: f64,
}

pub fn spectrum<T: Scalar>(w: &Matrix<T>, zero_threshold_rel: f64) -> Result<Spectrum> {
    ensure!(zero_threshold_rel > 0.0 && zero_threshold_rel < 1.0, "zero threshold must be in (0, 1), got {zero_threshold_rel}");
    let values = singular_values(w)?;
    let cutoff = values.first().copied().unwrap_or(0.0) * zero_threshold_rel;
    let zero_count = values.iter().filter(|&&s| s <= cutoff).count();
    Ok(Spectrum { values, zero_count, threshold: zero_threshold_rel })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryRow {
    pub step: usize,
    pub tensor: String,
    pub fold: usize,
    pub cosine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub step: usize,
    pub tensor: String,
    pub zero_count: usize,
    pub threshold: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub rows: Vec<SymmetryRow>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub rows: Vec<SpectrumRow>,
}

impl SymmetryReport {
    pub fn value(&self, step: usize, tensor: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.step == step && r.tensor == tensor).map(|r| r.cosine)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,tensor,fold,cosine\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.step, r.tensor, r.fold, r.cosine).unwrap();
        }
        out
    }
}

impl SpectrumReport {
    pub fn zero_count(&self, step: usize, tensor: &str) -> Option<usize> {
        self.rows.iter().find(|r| r.step == step && r.tensor == tensor).map(|r| r.zero_count)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,tensor,zero_count,threshold,sigma_max,sigma_min\n");
        for r in &self.rows {
            let max = r.values.first().copied().unwrap_or(0.0);
            let min = r.values.last().copied().unwrap_or(0.0);
            writeln!(out, "{},{},{},{},{},{}", r.step, r.tensor, r.zero_count, r.threshold, max, min).unwrap();
        }
        out
    }

    /// Full spectra as a JSON array of rows.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.rows)?)
    }
}

/// Tensor-name filter. In a pattern `*` matches within one dotted segment
/// (`blocks.*.ffn.w_up`, `blocks.0.attn.w_*`). Every pattern must match at
/// least one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    patterns: Vec<String>,
}

impl Selection {
    pub fn new<S: Into<String>>(patterns: impl IntoIterator<Item = S>) -> Self {
        Self { patterns: patterns.into_iter().map(Into::into).collect() }
    }

    /// Comma-separated patterns.
    pub fn parse(spec: &str) -> Self {
        Self::new(spec.split(',').map(str::trim).filter(|s| !s.is_empty()))
    }

    /// All FFN up-projections plus the unembedding (when untied).
    pub fn default_for(cfg: &ModelConfig) -> Self {
        let mut p = vec!["blocks.*.ffn.w_up".to_string()];
        if !cfg.tied_unembedding {
            p.push("unembedding".into());
        }
        Self { patterns: p }
    }

    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }

    /// Matching tensor names in layout order.
    pub fn resolve<T: Scalar>(&self, params: &TransformerParams<T>) -> Result<Vec<String>> {
        let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
        let mut picked = vec![false; names.len()];
        let mut unknown = Vec::new();
        for p in &self.patterns {
            let re = Regex::new(&format!("^{}$", regex::escape(p).replace(r"\*", "[^.]*")))
                .map_err(|e| Error::Contract(format!("bad tensor pattern `{p}`: {e}")))?;
            let mut hit = false;
            for (i, n) in names.iter().enumerate() {
                if re.is_match(n) {
                    picked[i] = true;
                    hit = true;
                }
            }
            if !hit {
                unknown.push(p.clone());
            }
        }
        ensure!(unknown.is_empty(), "unknown tensor name(s): {}", unknown.join(", "));
        Ok(names.into_iter().zip(picked).filter_map(|(n, p)| p.then_some(n)).collect())
    }
}

/// Compute the selected metrics of one parameter set at `step`.
///
/// Symmetry needs the receipt (for each tensor's input clone map); pass
/// `None` to skip it, e.g. for randomly initialized baselines.
pub fn track<T: Scalar>(
    params: &TransformerParams<T>,
    receipt: Option<&ExpansionReceipt>,
    step: usize,
    selection: &Selection,
    spectrum_threshold: Option<f64>,
) -> Result<(Vec<SymmetryRow>, Vec<SpectrumRow>)> {
    let names = selection.resolve(params)?;
    let mut sym = Vec::new();
    let mut spec = Vec::new();
    for name in names {
        let w = params.get(&name).expect("resolved names exist");
        if let Some(r) = receipt {
            let entry = r.entry(&name).ok_or_else(|| Error::Contract(format!("receipt has no entry for tensor {name}")))?;
            sym.push(SymmetryRow {
                step,
                fold: entry.col_map.uniform_fold().unwrap_or(0),
                cosine: symmetry_cosine(w, &entry.col_map)?,
                tensor: name.clone(),
            });
        }
        if let Some(tau) = spectrum_threshold {
            let s = spectrum(w, tau)?;
            spec.push(SpectrumRow { step, tensor: name, zero_count: s.zero_count, threshold: tau, values: s.values });
        }
    }
    Ok((sym, spec))
}

/// Training hook that records symmetry and/or spectra every `interval`
/// steps (and at step 0).
#[derive(Clone, Debug)]
pub struct Tracker {
    pub selection: Selection,
    pub receipt: Option<ExpansionReceipt>,
    pub spectrum_threshold: Option<f64>,
    pub interval: usize,
    pub symmetry: SymmetryReport,
    pub spectrum: SpectrumReport,
}

impl Tracker {
    pub fn new(selection: Selection, receipt: Option<ExpansionReceipt>, spectrum_threshold: Option<f64>, interval: usize) -> Self {
        Self {
            selection,
            receipt,
            spectrum_threshold,
            interval: interval.max(1),
            symmetry: SymmetryReport::default(),
            spectrum: SpectrumReport::default(),
        }
    }

    pub fn record<T: Scalar>(&mut self, step: usize, params: &TransformerParams<T>) -> Result<()> {
        let (sym, spec) = track(params, self.receipt.as_ref(), step, &self.selection, self.spectrum_threshold)?;
        self.symmetry.rows.extend(sym);
        self.spectrum.rows.extend(spec);
        Ok(())
    }

    /// Write `symmetry.csv`, `spectrum.csv` and `spectrum.json` for the
    /// metrics that were enabled.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, body: String| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(path, e))
        };
        if self.receipt.is_some() {
            put("symmetry.csv", self.symmetry.to_csv())?;
        }
        if self.spectrum_threshold.is_some() {
            put("spectrum.csv", self.spectrum.to_csv())?;
            put("spectrum.json", self.spectrum.to_json()?)?;
        }
        Ok(())
    }
}

impl<T: Scalar> StepHook<T> for Tracker {
    fn on_step(&mut self, step: usize, params: &TransformerParams<T>, _cfg: &ModelConfig, _opt: &AdamState<T>) -> Result<()> {
        if step.is_multiple_of(self.interval) {
            self.record(step, params)?;
        }
        Ok(())
    }
}
