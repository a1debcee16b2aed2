use std::fs;
use std::path::Path;

use hyperclone_core::analysis::{spectrum, symmetry_cosine, Selection, SpectrumReport, SpectrumRow, SymmetryReport, SymmetryRow, Tracker};
use hyperclone_core::checkpoint::{load_any, save, AnyCheckpoint, Checkpoint, CheckpointHook};
use hyperclone_core::cloning::{expand_model, ExpansionConfig, ExpansionReceipt};
use hyperclone_core::model::{ModelConfig, TransformerParams, PRESET_NAMES};
use hyperclone_core::sweep::{run_sweep, SweepSpec};
use hyperclone_core::tensor::{DType, Rng, Scalar};
use hyperclone_core::train::{eval_loss, train, AdamState, Corpus, StepHook, TrainConfig, TRAIN_PRESET_NAMES};
use hyperclone_core::verify::{random_sequences, verify_preservation};
use hyperclone_core::Error;

use crate::{AnalyzeArgs, CloneArgs, Command, EvalArgs, Failure, Format, InitArgs, InitKind, Metric, SweepArgs, TrainArgs, VerifyArgs};

type Outcome = Result<u8, Failure>;

pub fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Init(a) => init(a),
        Command::Clone(a) => clone(a),
        Command::Verify(a) => verify(a),
        Command::Analyze(a) => analyze(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Presets => presets(),
    }
}

/// `println!` that tolerates a closed pipe (`hyperclone ... | head`).
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Error::io(path, e).into()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_fail(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, body: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))?;
    }
    fs::write(path, body).map_err(|e| io_fail(path, e))
}

fn model_preset(name: &str) -> Result<ModelConfig, Failure> {
    ModelConfig::preset(name).ok_or_else(|| Failure::usage(format!("unknown model preset `{name}` (known: {})", PRESET_NAMES.join(", "))))
}

fn corpus(path: Option<&Path>) -> Result<Corpus, Failure> {
    Ok(match path {
        Some(p) => Corpus::from_file(p)?,
        None => Corpus::bundled(),
    })
}

fn init(a: InitArgs) -> Outcome {
    let cfg = match &a.config {
        Some(p) => read_json::<ModelConfig>(p)?,
        None => model_preset(&a.preset)?,
    };
    let params = TransformerParams::<f64>::init_random(&cfg, &mut Rng::seed(a.seed))?;
    let ck = Checkpoint::new(cfg, params);
    match a.precision {
        DType::F64 => save(&a.out, &ck)?,
        DType::F32 => save(&a.out, &ck.cast::<f32>())?,
    }
    out!("wrote {} ({} parameters, {})", a.out.display(), ck.params.num_params(), a.precision);
    Ok(0)
}

fn shape_table(src: &ModelConfig, dst: &ModelConfig) -> String {
    let rows: [(&str, usize, usize); 7] = [
        ("layers", src.n_layers, dst.n_layers),
        ("heads", src.n_heads, dst.n_heads),
        ("d_model", src.d_model, dst.d_model),
        ("d_head", src.d_head, dst.d_head),
        ("d_ffn", src.d_ffn, dst.d_ffn),
        ("vocab", src.vocab_size, dst.vocab_size),
        ("parameters", src.num_params(), dst.num_params()),
    ];
    let mut out = format!("{:<12}{:>14}{:>14}\n", "", "source", "destination");
    for (name, s, d) in rows {
        out.push_str(&format!("{name:<12}{s:>14}{d:>14}\n"));
    }
    out
}

fn expansion_of(a: &CloneArgs) -> ExpansionConfig {
    let n = a.embed_fold;
    let (h, k) = match (a.head_count_fold, a.head_dim_fold) {
        (Some(h), Some(k)) => (h, k),
        (Some(h), None) => (h, n.checked_div(h).unwrap_or(0)),
        (None, Some(k)) => (n.checked_div(k).unwrap_or(0), k),
        (None, None) => (n, 1),
    };
    ExpansionConfig::new(n, a.ffn_fold.unwrap_or(n), h, k, a.strategy.into()).with_snr(a.snr_db).with_seed(a.seed)
}

fn clone_typed<T: Scalar>(ck: &Checkpoint<T>, exp: &ExpansionConfig, out: &Path) -> Result<ModelConfig, Failure> {
    let (params, cfg, receipt) = expand_model(&ck.params, &ck.config, exp)?;
    for e in receipt.entries.iter().filter(|e| e.fell_back()) {
        eprintln!(
            "note: {} used {} ({} is not applicable to its folds)",
            e.name,
            e.strategy_used.map(|s| s.to_string()).unwrap_or_default(),
            e.strategy_requested
        );
    }
    let dst = Checkpoint { config: cfg.clone(), params, receipt: Some(receipt), optimizer: None };
    save(out, &dst)?;
    Ok(cfg)
}

fn clone(a: CloneArgs) -> Outcome {
    let exp = expansion_of(&a);
    exp.validate()?;
    if exp.is_identity() {
        eprintln!("warning: all folds are 1; the clone is an exact copy of the source");
    }
    let ck = load_any(&a.input)?;
    let src_cfg = ck.config().clone();
    let dst_cfg = match &ck {
        AnyCheckpoint::F32(c) => clone_typed(c, &exp, &a.out)?,
        AnyCheckpoint::F64(c) => clone_typed(c, &exp, &a.out)?,
    };
    out!("{}", shape_table(&src_cfg, &dst_cfg).trim_end());
    out!("strategy {} (snr {} dB, seed {}); wrote {}", exp.strategy, exp.snr_db, exp.seed, a.out.display());
    Ok(0)
}

/// Destination tensors that differ from re-running the recorded expansion.
fn mismatched_tensors(src: &Checkpoint<f64>, dst: &Checkpoint<f64>, receipt: &ExpansionReceipt, tolerance: f64) -> Vec<String> {
    let Ok((fresh, _, _)) = expand_model(&src.params, &src.config, &receipt.expansion) else {
        return Vec::new();
    };
    dst.params
        .named()
        .into_iter()
        .filter(|(name, m)| {
            fresh
                .get(name)
                .is_none_or(|f| f.shape() != m.shape() || f.as_slice().iter().zip(m.as_slice()).any(|(a, b)| !((a - b).abs() <= tolerance)))
        })
        .map(|(name, _)| name)
        .collect()
}

fn verify(a: VerifyArgs) -> Outcome {
    let src = load_any(&a.source)?.into_f64();
    let dst = load_any(&a.dest)?.into_f64();
    let receipt = dst
        .receipt
        .as_ref()
        .ok_or_else(|| Failure::usage(format!("{} has no expansion receipt; verification needs its clone maps", a.dest.display())))?;
    let len = a.seq_len.unwrap_or(src.config.max_seq.min(64));
    let tolerance = a.tolerance.unwrap_or(match a.precision {
        DType::F64 => 1e-10,
        DType::F32 => 1e-4,
    });
    let seqs = random_sequences(src.config.vocab_size, a.batches, len, a.seed);
    let report = verify_preservation(&src.params, &src.config, &dst.params, &dst.config, receipt, &seqs, tolerance, a.precision)?;
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    if let Some(p) = &a.report {
        write_text(p, &json)?;
    }
    out!("{json}");
    if report.pass {
        Ok(0)
    } else {
        eprintln!(
            "verification failed: first failing {} (logit max abs diff {:.3e}, tolerance {:.1e})",
            report.first_failing.as_deref().unwrap_or("?"),
            report.logit_max_abs_diff,
            tolerance
        );
        let culprits = mismatched_tensors(&src, &dst, receipt, tolerance);
        if !culprits.is_empty() {
            eprintln!("tensors differing from a fresh expansion: {}", culprits.join(", "));
        }
        Ok(1)
    }
}

fn analyze_typed<T: Scalar>(ck: &Checkpoint<T>, a: &AnalyzeArgs) -> Result<String, Failure> {
    let selection = a.tensors.as_deref().map(Selection::parse).unwrap_or_else(|| Selection::default_for(&ck.config));
    let names = selection.resolve(&ck.params)?;
    match a.metric {
        Metric::Symmetry => {
            let receipt = ck.receipt.as_ref().ok_or_else(|| Failure::usage("symmetry needs a cloned checkpoint (no receipt found)"))?;
            let mut report = SymmetryReport::default();
            for name in names {
                let entry = receipt.entry(&name).ok_or_else(|| Failure::usage(format!("receipt has no entry for {name}")))?;
                let cosine = symmetry_cosine(ck.params.get(&name).expect("resolved"), &entry.col_map)?;
                report.rows.push(SymmetryRow { step: 0, fold: entry.col_map.uniform_fold().unwrap_or(0), cosine, tensor: name });
            }
            Ok(match a.format {
                Format::Csv => report.to_csv(),
                Format::Json => serde_json::to_string_pretty(&report.rows).map_err(Error::from)?,
            })
        }
        Metric::Spectrum => {
            let mut report = SpectrumReport::default();
            for name in names {
                let s = spectrum(ck.params.get(&name).expect("resolved"), a.threshold)?;
                report.rows.push(SpectrumRow { step: 0, tensor: name, zero_count: s.zero_count, threshold: a.threshold, values: s.values });
            }
            Ok(match a.format {
                Format::Csv => report.to_csv(),
                Format::Json => report.to_json()?,
            })
        }
    }
}

fn analyze(a: AnalyzeArgs) -> Outcome {
    let body = match load_any(&a.checkpoint)? {
        AnyCheckpoint::F32(c) => analyze_typed(&c, &a)?,
        AnyCheckpoint::F64(c) => analyze_typed(&c, &a)?,
    };
    match &a.out {
        Some(p) => write_text(p, &body)?,
        None => out!("{}", body.trim_end()),
    }
    Ok(0)
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig, Failure> {
    let base = TrainConfig::preset(&a.train_preset).ok_or_else(|| {
        Failure::usage(format!("unknown training preset `{}` (known: {})", a.train_preset, TRAIN_PRESET_NAMES.join(", ")))
    })?;
    let mut tc = match &a.config {
        Some(p) => {
            let mut merged = serde_json::to_value(&base).map_err(Error::from)?;
            let patch: serde_json::Value = read_json(p)?;
            let obj = patch.as_object().ok_or_else(|| Failure::usage(format!("{}: expected a JSON object", p.display())))?;
            for (k, v) in obj {
                if merged.get(k).is_none() {
                    return Err(Failure::usage(format!("{}: unknown training field `{k}`", p.display())));
                }
                merged[k] = v.clone();
            }
            serde_json::from_value(merged).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?
        }
        None => base,
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),* $(,)?) => {
            $(if let Some(v) = a.$flag { tc.$field = v; })*
        };
    }
    set!(
        steps => total_steps,
        lr => max_lr,
        warmup => warmup_steps,
        decay_end => decay_end_step,
        weight_decay => weight_decay,
        batch_size => batch_size,
        context_len => context_len,
        dropout => dropout_p,
        seed => seed,
        eval_interval => eval_interval,
        track_interval => track_interval,
    );
    tc.validate()?;
    Ok(tc)
}

fn train_typed<T: Scalar>(mut ck: Checkpoint<T>, a: &TrainArgs, tc: &TrainConfig, corpus: &Corpus) -> Outcome {
    let out = &a.out_dir;
    fs::create_dir_all(out).map_err(|e| io_fail(out, e))?;
    let mut state = match (a.resume, ck.optimizer.take()) {
        (true, Some(s)) => s,
        _ => AdamState::new(&ck.config),
    };
    let tracking = a.track_symmetry || a.track_spectrum;
    if a.track_symmetry && ck.receipt.is_none() {
        return Err(Failure::usage("--track-symmetry needs a cloned checkpoint (no receipt found)"));
    }
    let selection = a.tensors.as_deref().map(Selection::parse).unwrap_or_else(|| Selection::default_for(&ck.config));
    selection.resolve(&ck.params)?;
    let mut tracker = Tracker::new(
        selection,
        if a.track_symmetry { ck.receipt.clone() } else { None },
        a.track_spectrum.then_some(a.spectrum_threshold),
        tc.track_interval,
    );
    let mut saver = CheckpointHook::new(out.clone(), a.checkpoint_interval, ck.receipt.clone());
    let mut hooks: Vec<&mut dyn StepHook<T>> = Vec::new();
    if tracking {
        hooks.push(&mut tracker);
    }
    if a.checkpoint_interval > 0 {
        hooks.push(&mut saver);
    }
    let result = train(&mut ck.params, &ck.config, corpus, tc, &mut state, &mut hooks);
    // Metrics recorded before a divergence are still worth keeping.
    if tracking {
        tracker.write(out)?;
    }
    let log = result?;
    write_text(&out.join("log.csv"), &log.to_csv())?;
    let final_path = out.join("final.hcln");
    ck.optimizer = Some(state);
    save(&final_path, &ck)?;
    match log.last_eval() {
        Some((step, loss)) => out!("step {step}: eval loss {loss:.6}; wrote {}", out.display()),
        None => out!("nothing to train; wrote {}", out.display()),
    }
    Ok(0)
}

fn train_cmd(a: TrainArgs) -> Outcome {
    let tc = train_config(&a)?;
    let corpus = corpus(a.corpus.as_deref())?;
    let ck = match a.init {
        InitKind::Checkpoint => {
            let path = a.checkpoint.as_ref().ok_or_else(|| Failure::usage("a checkpoint path is required unless --init random"))?;
            load_any(path)?
        }
        InitKind::Random => {
            let cfg = model_preset(&a.preset)?;
            let params = TransformerParams::<f64>::init_random(&cfg, &mut Rng::seed(a.init_seed))?;
            let ck = Checkpoint::new(cfg, params);
            match a.precision {
                DType::F64 => AnyCheckpoint::F64(ck),
                DType::F32 => AnyCheckpoint::F32(ck.cast()),
            }
        }
    };
    match ck {
        AnyCheckpoint::F32(c) => train_typed(c, &a, &tc, &corpus),
        AnyCheckpoint::F64(c) => train_typed(c, &a, &tc, &corpus),
    }
}

fn eval(a: EvalArgs) -> Outcome {
    let corpus = corpus(a.corpus.as_deref())?;
    let loss = match load_any(&a.checkpoint)? {
        AnyCheckpoint::F32(c) => eval_loss(&c.params, &c.config, &corpus, a.context_len, a.windows)?,
        AnyCheckpoint::F64(c) => eval_loss(&c.params, &c.config, &corpus, a.context_len, a.windows)?,
    };
    out!("{loss}");
    Ok(0)
}

fn sweep(a: SweepArgs) -> Outcome {
    let spec = SweepSpec::from_file(&a.spec)?;
    let dir = a.spec.parent().unwrap_or(Path::new("."));
    let bases = spec.load_bases(dir)?;
    let corpus = corpus(a.corpus.as_deref())?;
    let summary = run_sweep(&bases, &spec, &corpus, Some(&a.out_dir))?;
    out!("{}", summary.to_csv().trim_end());
    for r in summary.rows.iter().filter(|r| !r.ok) {
        eprintln!("run {} failed: {}", r.run, r.error.as_deref().unwrap_or(""));
    }
    Ok(0)
}

fn presets() -> Outcome {
    out!("model presets:");
    for name in PRESET_NAMES {
        let c = ModelConfig::preset(name).expect("listed preset");
        out!(
            "  {name:<12} L={:<3} H={:<3} d_model={:<5} d_ffn={:<6} vocab={:<6} {:?}",
            c.n_layers,
            c.n_heads,
            c.d_model,
            c.d_ffn,
            c.vocab_size,
            c.pos_kind
        );
    }
    out!("training presets:");
    for name in TRAIN_PRESET_NAMES {
        let t = TrainConfig::preset(name).expect("listed preset");
        out!(
            "  {name:<12} lr={:<8} warmup={:<6} decay_end={:<8} batch={} ctx={}",
            t.max_lr,
            t.warmup_steps,
            t.decay_end_step,
            t.batch_size,
            t.context_len
        );
    }
    Ok(0)
}
