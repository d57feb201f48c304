use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gatelab::analysis::{
    boundary_alignment, cell_target_correlation, correlation_csv, emit_gate_plot, emit_pair_plot,
    mean_gate_activation, Gate,
};
use gatelab::backprop::grad_check;
use gatelab::cells::{param_count, CellKind, CellSpec};
use gatelab::config::{parse_kinds, RunConfig};
use gatelab::container::{load_model, save_feature_file, save_model};
use gatelab::corpus::{gen_corpus, load_corpus, save_corpus, Corpus, Utterance};
use gatelab::features::StreamLayout;
use gatelab::metrics::MetricReport;
use gatelab::network::{bench_generation, history_csv, Model};
use gatelab::pipeline::{
    evaluate_system, network_config, pipeline_generate, prepare_dataset, run_ablation,
    train_system,
};
use gatelab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "gatelab",
    version,
    about = "Gated recurrent cell laboratory: train, ablate and analyze seven recurrent architectures on a synthetic parametric-synthesis task"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// Plain-text configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline override, repeatable: --set key=value. Applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for s in &self.sets {
            let (key, value) = s.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("--set expects key=value, got `{s}`"))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic corpus and write it with a checksummed manifest.
    GenCorpus {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one system and write its checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        /// Cell kind: lstm | nig | nog | nfg | nph | gru | slstm.
        #[arg(long, default_value = "lstm")]
        kind: String,
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV of per-epoch training history.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Generate acoustics for one utterance from a trained checkpoint.
    Synth {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        utterance: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate checkpoints on the test split; one CSV row per model.
    Eval {
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Finite-difference verification of the analytic cell gradients.
    Gradcheck {
        /// Check all seven kinds.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        kind: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        /// Random instances per kind; the worst error is reported.
        #[arg(long, default_value_t = 3)]
        instances: u64,
    },
    /// Print the parameter count of each architecture at the given dims.
    Params {
        #[arg(long = "in")]
        in_dim: usize,
        #[arg(long)]
        hidden: usize,
    },
    /// Gate-activation and cell-state analyses on a trained checkpoint.
    Trace {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        utterance: String,
        /// forget | input | output.
        #[arg(long, default_value = "forget")]
        gate: String,
        #[arg(long)]
        out: PathBuf,
        /// Correlate cell-state trajectories against a target dimension
        /// instead of plotting a gate.
        #[arg(long)]
        correlate: bool,
        /// Output dimension the cell states are correlated with.
        #[arg(long, default_value_t = 0)]
        target_dim: usize,
    },
    /// Wall-clock generation benchmark of freshly initialized systems.
    Bench {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated kinds or `all`; the first is the ratio baseline.
        #[arg(long, default_value = "all")]
        systems: String,
        #[arg(long, default_value_t = 5)]
        reps: usize,
    },
    /// Train, evaluate and benchmark every system; writes the Table-2-shaped CSV.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Existing corpus directory; generated from the config when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "all")]
        systems: String,
    },
}

#[derive(Serialize)]
struct RunManifest {
    tool_version: String,
    config: String,
    seeds: Vec<u64>,
    checkpoints: Vec<(String, String)>,
    metrics_csv: String,
    timing_csv: String,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn find_utterance<'a>(corpus: &'a Corpus, id: &str) -> Result<&'a Utterance> {
    corpus
        .train
        .iter()
        .chain(&corpus.dev)
        .chain(&corpus.test)
        .find(|u| u.id == id)
        .ok_or_else(|| Error::InvalidArgument(format!("utterance `{id}` not found in corpus")))
}

fn cmd_gen_corpus(cfg: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg = cfg.load()?;
    let corpus = gen_corpus(&cfg.corpus)?;
    save_corpus(&corpus, out)?;
    println!(
        "wrote {} train / {} dev / {} test utterances to {}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(
    cfg: &ConfigArgs,
    corpus: &Path,
    kind: &str,
    out: &Path,
    history: Option<&Path>,
) -> Result<()> {
    let cfg = cfg.load()?;
    let kind = CellKind::parse(kind)?;
    let corpus = load_corpus(corpus)?;
    let dataset = prepare_dataset(&corpus)?;
    let (model, hist) = train_system(&cfg, kind, cfg.train.seed, &dataset)?;
    save_model(&model, out)?;
    if let Some(path) = history {
        write_text(path, &history_csv(&hist))?;
    }
    let best = hist
        .iter()
        .map(|e| e.dev_mse)
        .fold(f64::INFINITY, f64::min);
    println!(
        "{}: trained {} epochs, best dev MSE {:.6}, checkpoint {}",
        kind.label(),
        hist.len(),
        best,
        out.display()
    );
    Ok(())
}

fn cmd_synth(model: &Path, corpus: &Path, utterance: &str, out: &Path) -> Result<()> {
    let model = load_model(model)?;
    let corpus = load_corpus(corpus)?;
    let utt = find_utterance(&corpus, utterance)?;
    let gen = pipeline_generate(&model, &utt.linguistic)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    save_feature_file(&gen.mcc, &out.join(format!("{utterance}.mcc.bin")))?;
    save_feature_file(&gen.bap, &out.join(format!("{utterance}.bap.bin")))?;
    let t_len = gen.f0_hz.len();
    let f0 = ndarray::Array2::from_shape_fn((t_len, 1), |(t, _)| gen.f0_hz[t]);
    save_feature_file(&f0, &out.join(format!("{utterance}.f0.bin")))?;
    println!("generated {t_len} frames for {utterance} into {}", out.display());
    Ok(())
}

fn cmd_eval(models: &[PathBuf], corpus: &Path) -> Result<()> {
    let corpus = load_corpus(corpus)?;
    println!("{}", MetricReport::CSV_HEADER);
    for path in models {
        let model = load_model(path)?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let report = evaluate_system(&model, &corpus.test, label)?;
        println!("{}", report.csv_row());
    }
    Ok(())
}

fn cmd_gradcheck(all: bool, kind: Option<&str>, seed: u64, eps: f64, instances: u64) -> Result<()> {
    let kinds: Vec<CellKind> = if all {
        CellKind::ALL.to_vec()
    } else {
        let k = kind.ok_or_else(|| {
            Error::InvalidArgument("gradcheck needs --all or --kind <kind>".into())
        })?;
        vec![CellKind::parse(k)?]
    };
    let threshold = 1e-6;
    let mut failed = Vec::new();
    for k in kinds {
        let spec = CellSpec::new(k, 5, 4)?;
        let mut worst = 0.0f64;
        for i in 0..instances.max(1) {
            worst = worst.max(grad_check(&spec, seed.wrapping_add(i), eps)?);
        }
        let ok = worst < threshold;
        println!(
            "{:8} {:.3e} {}",
            k.label(),
            worst,
            if ok { "pass" } else { "FAIL" }
        );
        if !ok {
            failed.push(k.label());
        }
    }
    if !failed.is_empty() {
        return Err(Error::NumericalFailure(format!(
            "gradient check failed for: {}",
            failed.join(", ")
        )));
    }
    Ok(())
}

fn cmd_params(in_dim: usize, hidden: usize) -> Result<()> {
    for kind in CellKind::ALL {
        let spec = CellSpec::new(kind, in_dim, hidden)?;
        println!("{} {}", kind.label(), param_count(&spec));
    }
    Ok(())
}

fn cmd_trace(
    model: &Path,
    corpus: &Path,
    utterance: &str,
    gate: &str,
    out: &Path,
    correlate: bool,
    target_dim: usize,
) -> Result<()> {
    let model = load_model(model)?;
    let corpus = load_corpus(corpus)?;
    let utt = find_utterance(&corpus, utterance)?;
    let inputs = model.input_stats.apply(&utt.linguistic);
    let pass = gatelab::network::forward_full(&model, &inputs)?;

    if correlate {
        let layout: StreamLayout = model.layout;
        if target_dim >= layout.output_dim() {
            return Err(Error::InvalidArgument(format!(
                "target dim {target_dim} out of range (output dim {})",
                layout.output_dim()
            )));
        }
        let targets = layout.assemble_targets(&utt.mcc, &utt.bap, &utt.log_f0, &utt.vuv);
        let target: Vec<f64> = targets.column(target_dim).to_vec();
        let states = pass.cell_states();
        let table = cell_target_correlation(&states, &target)?;
        std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
        write_text(
            &out.join(format!("{utterance}_correlation.csv")),
            &correlation_csv(&table),
        )?;
        let unit = table.argmax;
        let cell: Vec<f64> = states.column(unit).to_vec();
        emit_pair_plot(
            &target,
            &cell,
            unit,
            out,
            &format!("{utterance}_unit{unit}_dim{target_dim}"),
        )?;
        println!(
            "utterance {utterance}: unit {unit} has r = {:.4} against output dim {target_dim}",
            table.argmax_value()
        );
    } else {
        let gate = Gate::parse(gate)?;
        let kind = model.cell.spec().kind;
        let series =
            mean_gate_activation(kind, &pass.traces, gate, utterance, &utt.boundaries)?;
        let (csv, svg) = emit_gate_plot(&series, out, &format!("{utterance}_{}", gate.name()))?;
        let stats = boundary_alignment(&series)?;
        println!(
            "utterance {utterance}: {} gate boundary mean {:.4}, interior mean {:.4}, difference {:+.4}",
            gate.name(),
            stats.boundary_mean,
            stats.interior_mean,
            stats.difference
        );
        println!("wrote {} and {}", csv.display(), svg.display());
    }
    Ok(())
}

fn cmd_bench(cfg: &ConfigArgs, corpus: &Path, systems: &str, reps: usize) -> Result<()> {
    let cfg = cfg.load()?;
    let kinds = parse_kinds(systems)?;
    let corpus = load_corpus(corpus)?;
    let dataset = prepare_dataset(&corpus)?;
    let models: Vec<(String, Model)> = kinds
        .iter()
        .map(|&k| {
            let net = network_config(&cfg, k, &dataset)?;
            let model = Model::init(
                net,
                dataset.layout,
                dataset.input_stats.clone(),
                dataset.target_stats.clone(),
                cfg.train.seed,
                cfg.train.init_scale,
            )?;
            Ok((k.label().to_string(), model))
        })
        .collect::<Result<_>>()?;
    let refs: Vec<(String, &Model)> = models.iter().map(|(l, m)| (l.clone(), m)).collect();
    let rows = bench_generation(&refs, &dataset.test, reps)?;
    println!("system,median_seconds,ratio_to_first");
    for row in rows {
        println!(
            "{},{:.6},{:.4}",
            row.label, row.median_seconds, row.ratio_to_first
        );
    }
    Ok(())
}

fn cmd_ablate(cfg_args: &ConfigArgs, corpus: Option<&Path>, out: &Path, systems: &str) -> Result<()> {
    let cfg = cfg_args.load()?;
    let kinds = parse_kinds(systems)?;
    let corpus = match corpus {
        Some(dir) => load_corpus(dir)?,
        None => gen_corpus(&cfg.corpus)?,
    };
    let table = run_ablation(&cfg, &kinds, &corpus)?;

    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let metrics_csv = out.join("ablation.csv");
    write_text(&metrics_csv, &table.csv())?;

    let mut timing = String::from("system,gen_time_s\n");
    for row in &table.rows {
        timing.push_str(&format!("{},{:.6}\n", row.kind.label(), row.generation_seconds));
    }
    let timing_csv = out.join("timing.csv");
    write_text(&timing_csv, &timing)?;

    let mut checkpoints = Vec::new();
    for &kind in &kinds {
        let run = table.median_run(kind).expect("kind was trained");
        let path = out.join(format!("{}_seed{}.ckpt", kind.label().to_lowercase().replace('-', ""), run.seed));
        save_model(&run.model, &path)?;
        checkpoints.push((kind.label().to_string(), path.display().to_string()));
        write_text(
            &out.join(format!("history_{}_seed{}.csv", kind.label().to_lowercase().replace('-', ""), run.seed)),
            &history_csv(&run.history),
        )?;
    }

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.echo(),
        seeds: cfg.seeds.clone(),
        checkpoints,
        metrics_csv: metrics_csv.display().to_string(),
        timing_csv: timing_csv.display().to_string(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest serialization failed: {e}")))?;
    write_text(&out.join("manifest.json"), &json)?;

    print!("{}", table.csv());
    println!("artifacts in {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::GenCorpus { cfg, out } => cmd_gen_corpus(cfg, out),
        Cmd::Train {
            cfg,
            corpus,
            kind,
            out,
            history,
        } => cmd_train(cfg, corpus, kind, out, history.as_deref()),
        Cmd::Synth {
            model,
            corpus,
            utterance,
            out,
        } => cmd_synth(model, corpus, utterance, out),
        Cmd::Eval { model, corpus } => cmd_eval(model, corpus),
        Cmd::Gradcheck {
            all,
            kind,
            seed,
            eps,
            instances,
        } => cmd_gradcheck(*all, kind.as_deref(), *seed, *eps, *instances),
        Cmd::Params { in_dim, hidden } => cmd_params(*in_dim, *hidden),
        Cmd::Trace {
            model,
            corpus,
            utterance,
            gate,
            out,
            correlate,
            target_dim,
        } => cmd_trace(model, corpus, utterance, gate, out, *correlate, *target_dim),
        Cmd::Bench {
            cfg,
            corpus,
            systems,
            reps,
        } => cmd_bench(cfg, corpus, systems, *reps),
        Cmd::Ablate {
            cfg,
            corpus,
            out,
            systems,
        } => cmd_ablate(cfg, corpus.as_deref(), out, systems),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
