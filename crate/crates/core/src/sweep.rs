//! Ablation sweeps: every (base checkpoint × expansion) pair plus optional
//! random-init baselines, trained with one shared config and data order.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::load_any;
use crate::cloning::{expand_model, ExpansionConfig};
use crate::model::{ModelConfig, TransformerParams};
use crate::tensor::Rng;
use crate::train::{train, AdamState, Corpus, TrainConfig, TrainLog};
use crate::{Error, Result};

/// JSON description of a sweep.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    /// Source checkpoints, relative to the spec file unless absolute.
    pub bases: Vec<PathBuf>,
    pub expansions: Vec<ExpansionConfig>,
    /// Also train a randomly initialized model of each distinct destination
    /// shape.
    pub random_baseline: bool,
    pub random_seed: u64,
    pub train: TrainConfig,
}

impl SweepSpec {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Load every base checkpoint (widened to `f64`), naming each after its
    /// file stem.
    pub fn load_bases(&self, relative_to: &Path) -> Result<Vec<SweepBase>> {
        self.bases
            .iter()
            .map(|p| {
                let path = if p.is_absolute() { p.clone() } else { relative_to.join(p) };
                let ck = load_any(&path)?.into_f64();
                let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "base".into());
                Ok(SweepBase { name, config: ck.config, params: ck.params })
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SweepBase {
    pub name: String,
    pub config: ModelConfig,
    pub params: TransformerParams<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run: String,
    /// Base name, or `random` for baselines.
    pub base: String,
    pub strategy: String,
    pub folds: [usize; 4],
    pub ok: bool,
    pub error: Option<String>,
    pub initial_eval: Option<f64>,
    /// Eval loss at the first evaluation after step 0.
    pub early_eval: Option<f64>,
    pub final_eval: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    /// Sorted by final eval loss; failed runs last.
    pub rows: Vec<SweepRow>,
    /// Training logs of successful runs, keyed by run name.
    #[serde(skip)]
    pub logs: Vec<(String, TrainLog)>,
}

impl SweepSummary {
    pub fn row(&self, run: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.run == run)
    }

    pub fn log(&self, run: &str) -> Option<&TrainLog> {
        self.logs.iter().find(|(n, _)| n == run).map(|(_, l)| l)
    }

    pub fn to_csv(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| format!("{x}")).unwrap_or_default()
        }
        let mut out = String::from(
            "run,base,strategy,embed_fold,ffn_fold,head_count_fold,head_dim_fold,status,initial_eval,early_eval,final_eval,error\n",
        );
        for r in &self.rows {
            let [e, f, h, k] = r.folds;
            let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
            let _ = writeln!(
                out,
                "{},{},{},{e},{f},{h},{k},{},{},{},{},{err}",
                r.run,
                r.base,
                r.strategy,
                if r.ok { "ok" } else { "failed" },
                opt(r.initial_eval),
                opt(r.early_eval),
                opt(r.final_eval),
            );
        }
        out
    }
}

enum Init<'a> {
    Clone(&'a SweepBase, &'a ExpansionConfig),
    Random(ModelConfig, [usize; 4]),
}

struct Job<'a> {
    name: String,
    init: Init<'a>,
}

fn fold_tag(e: &ExpansionConfig) -> String {
    format!("e{}f{}h{}k{}", e.embed_fold, e.ffn_fold, e.head_count_fold, e.head_dim_fold)
}

fn jobs<'a>(bases: &'a [SweepBase], spec: &'a SweepSpec) -> Vec<Job<'a>> {
    let mut out = Vec::new();
    let mut seen: Vec<ModelConfig> = Vec::new();
    for base in bases {
        for exp in &spec.expansions {
            out.push(Job { name: format!("{}-{}-{}", base.name, exp.strategy, fold_tag(exp)), init: Init::Clone(base, exp) });
            // An invalid expansion has no destination shape; its clone run
            // records the error.
            if let (true, Ok(dest)) = (spec.random_baseline, crate::cloning::expand_config(&base.config, exp)) {
                if !seen.contains(&dest) {
                    out.push(Job {
                        name: format!("random-{}", fold_tag(exp)),
                        init: Init::Random(dest.clone(), [exp.embed_fold, exp.ffn_fold, exp.head_count_fold, exp.head_dim_fold]),
                    });
                    seen.push(dest);
                }
            }
        }
    }
    out
}

fn run_job(job: &Job, spec: &SweepSpec, corpus: &Corpus, out_dir: Option<&Path>) -> (SweepRow, Option<TrainLog>) {
    let (base, strategy, folds) = match &job.init {
        Init::Clone(b, e) => (b.name.clone(), e.strategy.to_string(), [e.embed_fold, e.ffn_fold, e.head_count_fold, e.head_dim_fold]),
        Init::Random(_, f) => ("random".to_string(), "random".to_string(), *f),
    };
    let result = (|| -> Result<TrainLog> {
        let (mut params, cfg) = match &job.init {
            Init::Clone(b, e) => {
                let (p, c, _) = expand_model(&b.params, &b.config, e)?;
                (p, c)
            }
            Init::Random(c, _) => (TransformerParams::init_random(c, &mut Rng::seed(spec.random_seed))?, c.clone()),
        };
        let mut state = AdamState::new(&cfg);
        let log = train(&mut params, &cfg, corpus, &spec.train, &mut state, &mut [])?;
        if let Some(dir) = out_dir {
            let run_dir = dir.join(&job.name);
            fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
            let path = run_dir.join("log.csv");
            fs::write(&path, log.to_csv()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(log)
    })();
    let mut row = SweepRow {
        run: job.name.clone(),
        base,
        strategy,
        folds,
        ok: result.is_ok(),
        error: None,
        initial_eval: None,
        early_eval: None,
        final_eval: None,
    };
    match result {
        Ok(log) => {
            let evals: Vec<(usize, f64)> = log.rows.iter().filter_map(|r| r.eval_loss.map(|l| (r.step, l))).collect();
            row.initial_eval = evals.iter().find(|e| e.0 == 0).map(|e| e.1);
            row.early_eval = evals.iter().find(|e| e.0 > 0).map(|e| e.1);
            row.final_eval = evals.last().map(|e| e.1);
            (row, Some(log))
        }
        Err(e) => {
            row.error = Some(e.to_string());
            (row, None)
        }
    }
}

/// Run every combination. A failing run is recorded in the summary and the
/// sweep carries on. With `out_dir`, writes `<run>/log.csv` per run plus
/// `summary.csv` and `summary.json`.
pub fn run_sweep(bases: &[SweepBase], spec: &SweepSpec, corpus: &Corpus, out_dir: Option<&Path>) -> Result<SweepSummary> {
    let jobs = jobs(bases, spec);
    let results: Vec<(SweepRow, Option<TrainLog>)> = jobs.par_iter().map(|j| run_job(j, spec, corpus, out_dir)).collect();

    let mut summary = SweepSummary::default();
    for (row, log) in results {
        if let Some(log) = log {
            summary.logs.push((row.run.clone(), log));
        }
        summary.rows.push(row);
    }
    summary.rows.sort_by(|a, b| {
        let key = |r: &SweepRow| r.final_eval.filter(|_| r.ok).unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b)).then_with(|| a.run.cmp(&b.run))
    });
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("summary.csv");
        fs::write(&csv, summary.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join("summary.json");
        fs::write(&json, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&json, e))?;
    }
    Ok(summary)
}
