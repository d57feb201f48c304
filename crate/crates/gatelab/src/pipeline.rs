//! End-to-end glue: corpus -> normalized training pairs, trained model ->
//! smoothed acoustic trajectories, and the seven-system ablation driver.

use ndarray::{s, Array1, Array2};

use crate::cells::{CellKind, CellSpec};
use crate::config::RunConfig;
use crate::corpus::{Corpus, Utterance};
use crate::error::{Error, Result};
use crate::features::{MeanVarStats, MinMaxStats, Stream, StreamLayout};
use crate::metrics::{self, MetricReport};
use crate::mlpg::{mlpg_solve, GenerationProblem};
use crate::network::{
    bench_generation, train, EpochStats, Model, NetworkConfig, SeqPair, TrainConfig,
};

/// Normalized training pairs plus the statistics needed to undo the
/// normalization at generation time.
pub struct Dataset {
    pub layout: StreamLayout,
    pub input_stats: MinMaxStats,
    pub target_stats: MeanVarStats,
    /// Variance of each unnormalized output dimension over the training set;
    /// the fixed MLPG variances.
    pub global_variances: Array1<f64>,
    pub train: Vec<SeqPair>,
    pub dev: Vec<SeqPair>,
    pub test: Vec<SeqPair>,
}

fn assemble_split(layout: &StreamLayout, utts: &[Utterance]) -> Vec<Array2<f64>> {
    utts.iter()
        .map(|u| layout.assemble_targets(&u.mcc, &u.bap, &u.log_f0, &u.vuv))
        .collect()
}

/// Fits input min-max and target mean-variance statistics on the training
/// split and normalizes all three splits.
pub fn prepare_dataset(corpus: &Corpus) -> Result<Dataset> {
    let layout = StreamLayout::new(corpus.config.mcc_dim, corpus.config.bap_dim);
    let train_inputs: Vec<Array2<f64>> =
        corpus.train.iter().map(|u| u.linguistic.clone()).collect();
    let input_stats = MinMaxStats::fit(&train_inputs, 0.01, 0.99)?;
    let train_targets = assemble_split(&layout, &corpus.train);
    let target_stats = MeanVarStats::fit(&train_targets)?;
    let global_variances = Array1::from_shape_fn(layout.output_dim(), |d| {
        if target_stats.constant[d] {
            0.0
        } else {
            target_stats.std[d] * target_stats.std[d]
        }
    });
    let pair_up = |utts: &[Utterance]| -> Vec<SeqPair> {
        utts.iter()
            .map(|u| SeqPair {
                inputs: input_stats.apply(&u.linguistic),
                targets: target_stats
                    .apply(&layout.assemble_targets(&u.mcc, &u.bap, &u.log_f0, &u.vuv)),
            })
            .collect()
    };
    let train = pair_up(&corpus.train);
    let dev = pair_up(&corpus.dev);
    let test = pair_up(&corpus.test);
    Ok(Dataset {
        layout,
        input_stats,
        target_stats,
        global_variances,
        train,
        dev,
        test,
    })
}

/// Generated acoustics for one utterance: MLPG-smoothed statics plus the
/// voicing decision and linear F0.
#[derive(Debug, Clone)]
pub struct GeneratedUtterance {
    pub mcc: Array2<f64>,
    pub bap: Array2<f64>,
    pub log_f0: Vec<f64>,
    /// exp(log_f0) on voiced frames, 0 elsewhere.
    pub f0_hz: Vec<f64>,
    pub vuv: Vec<u8>,
}

fn generate_stream(
    model: &Model,
    restored: &Array2<f64>,
    stream: Stream,
) -> Result<Array2<f64>> {
    let layout = model.layout;
    let block = layout.block(stream);
    let d_static = layout.static_dim(stream);
    let t_len = restored.nrows();
    let mut out = Array2::zeros((t_len, d_static));
    for d in 0..d_static {
        let cols = [block.start + d, block.start + d_static + d, block.start + 2 * d_static + d];
        let var_static = model.global_variances[cols[0]];
        // Zero-variance (constant) dimensions bypass MLPG: the restored
        // static prediction passes straight through.
        if var_static <= 0.0 || model.target_stats.constant[cols[0]] {
            out.column_mut(d).assign(&restored.column(cols[0]));
            continue;
        }
        let means = Array2::from_shape_fn((t_len, 3), |(t, k)| restored[[t, cols[k]]]);
        let variances = Array2::from_shape_fn((t_len, 3), |(_, k)| {
            let v = model.global_variances[cols[k]];
            if v > 0.0 {
                v
            } else {
                // A constant dynamic dimension carries no information;
                // precision 0 drops its term from the objective.
                f64::INFINITY
            }
        });
        let trajectory = mlpg_solve(&GenerationProblem { means, variances })?;
        out.column_mut(d).assign(&trajectory.column(0));
    }
    Ok(out)
}

/// Full generation pipeline: normalize inputs, forward pass, undo target
/// normalization, MLPG per stream, threshold V/UV at 0.5 and rebuild F0.
pub fn pipeline_generate(model: &Model, linguistic: &Array2<f64>) -> Result<GeneratedUtterance> {
    if model.global_variances.len() != model.layout.output_dim() {
        return Err(Error::InvalidArgument(
            "model carries no global variances; was it trained through the pipeline?".into(),
        ));
    }
    let inputs = model.input_stats.apply(linguistic);
    let predictions = crate::network::forward(model, &inputs)?;
    let restored = model.target_stats.restore(&predictions);

    let mcc = generate_stream(model, &restored, Stream::Mcc)?;
    let bap = generate_stream(model, &restored, Stream::Bap)?;
    let lf0 = generate_stream(model, &restored, Stream::LogF0)?;

    let t_len = restored.nrows();
    let vuv: Vec<u8> = (0..t_len)
        .map(|t| u8::from(restored[[t, model.layout.vuv_index()]] >= 0.5))
        .collect();
    let log_f0: Vec<f64> = (0..t_len).map(|t| lf0[[t, 0]]).collect();
    let f0_hz: Vec<f64> = log_f0
        .iter()
        .zip(&vuv)
        .map(|(&l, &v)| if v == 1 { l.exp() } else { 0.0 })
        .collect();
    Ok(GeneratedUtterance {
        mcc,
        bap,
        log_f0,
        f0_hz,
        vuv,
    })
}

/// Objective evaluation of one model over reference utterances: frame-weighted
/// MCD (0th coefficient excluded), BAP distortion, F0 RMSE over jointly voiced
/// frames and the V/UV error rate.
pub fn evaluate_system(
    model: &Model,
    reference: &[Utterance],
    label: impl Into<String>,
) -> Result<MetricReport> {
    if reference.is_empty() {
        return Err(Error::EmptyInput("evaluation needs at least one utterance".into()));
    }
    let mut mcd_sum = 0.0;
    let mut bap_sum = 0.0;
    let mut frames = 0usize;
    let mut f0_sq = 0.0;
    let mut f0_n = 0usize;
    let mut vuv_mismatch = 0usize;
    for utt in reference {
        let gen = pipeline_generate(model, &utt.linguistic)?;
        let t_len = utt.frames();
        frames += t_len;
        // MCD excludes the energy coefficient (first MCC dimension).
        let ref_mcc = utt.mcc.slice(s![.., 1..]).to_owned();
        let hyp_mcc = gen.mcc.slice(s![.., 1..]).to_owned();
        mcd_sum += metrics::mcd(&ref_mcc, &hyp_mcc)? * t_len as f64;
        bap_sum += metrics::bap_distortion(&utt.bap, &gen.bap)? * t_len as f64;
        for t in 0..t_len {
            if utt.vuv[t] == 1 && gen.vuv[t] == 1 {
                let d = utt.log_f0[t].exp() - gen.log_f0[t].exp();
                f0_sq += d * d;
                f0_n += 1;
            }
            if utt.vuv[t] != gen.vuv[t] {
                vuv_mismatch += 1;
            }
        }
    }
    if f0_n == 0 {
        return Err(Error::EmptyInput("no jointly voiced frames in the test set".into()));
    }
    Ok(MetricReport {
        model: label.into(),
        mcd_db: mcd_sum / frames as f64,
        bap_db: bap_sum / frames as f64,
        f0_rmse_hz: (f0_sq / f0_n as f64).sqrt(),
        vuv_error_pct: 100.0 * vuv_mismatch as f64 / frames as f64,
        frames_evaluated: frames,
        f0_frames_evaluated: f0_n,
    })
}

/// Builds the network topology of `cfg` for one cell kind.
pub fn network_config(cfg: &RunConfig, kind: CellKind, dataset: &Dataset) -> Result<NetworkConfig> {
    let input_dim = *cfg.ff_sizes.last().unwrap();
    Ok(NetworkConfig {
        ff_sizes: cfg.ff_sizes.clone(),
        cell_spec: CellSpec::new(kind, input_dim, cfg.hidden_dim)?,
        linguistic_dim: dataset
            .train
            .first()
            .map(|p| p.inputs.ncols())
            .ok_or_else(|| Error::EmptyInput("empty training split".into()))?,
        output_dim: dataset.layout.output_dim(),
    })
}

/// Trains one system and attaches the dataset statistics needed for
/// generation.
pub fn train_system(
    cfg: &RunConfig,
    kind: CellKind,
    seed: u64,
    dataset: &Dataset,
) -> Result<(Model, Vec<EpochStats>)> {
    let net_cfg = network_config(cfg, kind, dataset)?;
    let train_cfg = TrainConfig {
        seed,
        learning_rate: cfg.learning_rate_for(kind),
        ..cfg.train.clone()
    };
    let (mut model, history) = train(
        &net_cfg,
        &train_cfg,
        &dataset.train,
        &dataset.dev,
        dataset.layout,
        dataset.input_stats.clone(),
        dataset.target_stats.clone(),
    )?;
    model.global_variances = dataset.global_variances.clone();
    Ok((model, history))
}

/// One trained system instance.
pub struct AblationRun {
    pub kind: CellKind,
    pub seed: u64,
    pub model: Model,
    pub report: MetricReport,
    pub history: Vec<EpochStats>,
}

/// Per-kind summary at the seed-median run.
pub struct AblationRow {
    pub kind: CellKind,
    pub report: MetricReport,
    pub param_count: usize,
    pub generation_seconds: f64,
}

pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub runs: Vec<AblationRun>,
}

impl AblationTable {
    pub const CSV_HEADER: &'static str =
        "system,mcd_db,bap_db,f0_rmse_hz,vuv_pct,params,gen_time_s";

    pub fn csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{:.4},{:.4},{:.4},{:.4},{},{:.6}\n",
                row.kind.label(),
                row.report.mcd_db,
                row.report.bap_db,
                row.report.f0_rmse_hz,
                row.report.vuv_error_pct,
                row.param_count,
                row.generation_seconds
            ));
        }
        out
    }

    /// The run whose test MCD is the seed-median for `kind` (lower middle for
    /// even seed counts).
    pub fn median_run(&self, kind: CellKind) -> Option<&AblationRun> {
        let mut of_kind: Vec<&AblationRun> =
            self.runs.iter().filter(|r| r.kind == kind).collect();
        if of_kind.is_empty() {
            return None;
        }
        of_kind.sort_by(|a, b| a.report.mcd_db.partial_cmp(&b.report.mcd_db).unwrap());
        Some(of_kind[(of_kind.len() - 1) / 2])
    }

    pub fn seed_median_mcd(&self, kind: CellKind) -> Option<f64> {
        self.median_run(kind).map(|r| r.report.mcd_db)
    }
}

/// Trains every requested kind with every seed in `cfg.seeds`, evaluates each
/// run on the test split and benchmarks generation on the seed-median models.
/// Row order follows `kinds`.
pub fn run_ablation(cfg: &RunConfig, kinds: &[CellKind], corpus: &Corpus) -> Result<AblationTable> {
    cfg.validate()?;
    if kinds.is_empty() {
        return Err(Error::InvalidArgument("no systems requested".into()));
    }
    let dataset = prepare_dataset(corpus)?;
    let mut runs = Vec::with_capacity(kinds.len() * cfg.seeds.len());
    for &kind in kinds {
        for &seed in &cfg.seeds {
            let (model, history) = train_system(cfg, kind, seed, &dataset)?;
            let report = evaluate_system(&model, &corpus.test, kind.label())?;
            runs.push(AblationRun {
                kind,
                seed,
                model,
                report,
                history,
            });
        }
    }
    let table = AblationTable { rows: vec![], runs };

    let bench_models: Vec<(String, &Model)> = kinds
        .iter()
        .map(|&k| {
            (
                k.label().to_string(),
                &table.median_run(k).expect("trained above").model,
            )
        })
        .collect();
    let timing = bench_generation(&bench_models, &dataset.test, 3)?;

    let rows = kinds
        .iter()
        .zip(&timing)
        .map(|(&kind, bench)| {
            let run = table.median_run(kind).expect("trained above");
            AblationRow {
                kind,
                report: run.report.clone(),
                param_count: run.model.cell.param_count(),
                generation_seconds: bench.median_seconds,
            }
        })
        .collect();
    Ok(AblationTable { rows, runs: table.runs })
}
