//! The full acoustic model: a stack of tanh feed-forward feature layers, one
//! gated recurrent layer and an affine output, trained with SGD plus
//! momentum, one utterance per update.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backprop::sequence_backward;
use crate::cells::{init_params, run_sequence, CellParams, CellSpec, CellState, GateTrace};
use crate::error::{Error, Result};
use crate::features::{MeanVarStats, MinMaxStats, Stream, StreamLayout};

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub ff_sizes: Vec<usize>,
    pub cell_spec: CellSpec,
    pub linguistic_dim: usize,
    pub output_dim: usize,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ff_sizes.is_empty() || self.ff_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument(
                "feed-forward layer sizes must be positive".into(),
            ));
        }
        if self.linguistic_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidArgument(
                "linguistic and output dimensions must be positive".into(),
            ));
        }
        if *self.ff_sizes.last().unwrap() != self.cell_spec.input_dim {
            return Err(Error::InvalidArgument(format!(
                "recurrent input_dim {} must equal the last feed-forward size {}",
                self.cell_spec.input_dim,
                self.ff_sizes.last().unwrap()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub grad_clip_norm: Option<f64>,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.02,
            momentum: 0.9,
            max_epochs: 70,
            patience: 10,
            grad_clip_norm: Some(5.0),
            init_scale: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidArgument("learning rate must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Affine layer, also reused as a same-shape gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl DenseLayer {
    fn init(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> DenseLayer {
        let scale = 1.0 / (in_dim as f64).sqrt();
        DenseLayer {
            w: Array2::from_shape_fn((out_dim, in_dim), |_| rng.gen_range(-scale..=scale)),
            b: Array1::zeros(out_dim),
        }
    }

    /// X (T x in) -> X W' + b (T x out).
    fn affine(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.dot(&self.w.t());
        out += &self.b;
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: NetworkConfig,
    pub layout: StreamLayout,
    pub ff: Vec<DenseLayer>,
    pub cell: CellParams,
    pub output: DenseLayer,
    pub input_stats: MinMaxStats,
    pub target_stats: MeanVarStats,
    /// Per-output-dimension variances of the unnormalized training targets,
    /// used as the fixed MLPG variances at generation time.
    pub global_variances: Array1<f64>,
}

impl Model {
    pub fn init(
        config: NetworkConfig,
        layout: StreamLayout,
        input_stats: MinMaxStats,
        target_stats: MeanVarStats,
        seed: u64,
        init_scale: f64,
    ) -> Result<Model> {
        config.validate()?;
        if layout.output_dim() != config.output_dim {
            return Err(Error::DimensionMismatch(format!(
                "stream layout implies {} output dims, network config says {}",
                layout.output_dim(),
                config.output_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ff = Vec::with_capacity(config.ff_sizes.len());
        let mut in_dim = config.linguistic_dim;
        for &size in &config.ff_sizes {
            ff.push(DenseLayer::init(size, in_dim, &mut rng));
            in_dim = size;
        }
        let cell = init_params(&config.cell_spec, seed ^ 0xc2b2_ae3d_27d4_eb4f, init_scale)?;
        let output = DenseLayer::init(config.output_dim, config.cell_spec.hidden_dim, &mut rng);
        Ok(Model {
            config,
            layout,
            ff,
            cell,
            output,
            input_stats,
            target_stats,
            global_variances: Array1::ones(0),
        })
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |_| n += 1);
        n
    }

    pub fn for_each_param(&self, f: &mut impl FnMut(f64)) {
        for layer in &self.ff {
            layer.w.iter().for_each(|&v| f(v));
            layer.b.iter().for_each(|&v| f(v));
        }
        self.cell.for_each(f);
        self.output.w.iter().for_each(|&v| f(v));
        self.output.b.iter().for_each(|&v| f(v));
    }

    pub fn for_each_param_mut(&mut self, f: &mut impl FnMut(&mut f64)) {
        for layer in &mut self.ff {
            layer.w.iter_mut().for_each(|v| f(v));
            layer.b.iter_mut().for_each(|v| f(v));
        }
        self.cell.for_each_mut(f);
        self.output.w.iter_mut().for_each(|v| f(v));
        self.output.b.iter_mut().for_each(|v| f(v));
    }

    pub fn perturb(&mut self, idx: usize, delta: f64) {
        let mut i = 0usize;
        self.for_each_param_mut(&mut |v| {
            if i == idx {
                *v += delta;
            }
            i += 1;
        });
    }
}

/// Intermediate activations kept for the backward pass and for analysis.
pub struct ForwardPass {
    /// Post-tanh outputs of each feed-forward layer.
    pub ff_activations: Vec<Array2<f64>>,
    pub states: Vec<CellState>,
    pub traces: Vec<GateTrace>,
    pub predictions: Array2<f64>,
}

impl ForwardPass {
    /// Cell-state trajectories as a T x nH matrix (zeros for GRU's missing cell).
    pub fn cell_states(&self) -> Array2<f64> {
        let n_h = self.states.first().map_or(0, |s| s.h.len());
        let mut out = Array2::zeros((self.states.len(), n_h));
        for (t, st) in self.states.iter().enumerate() {
            match &st.c {
                Some(c) => out.row_mut(t).assign(c),
                None => out.row_mut(t).assign(&st.h),
            }
        }
        out
    }
}

pub fn forward_full(model: &Model, inputs: &Array2<f64>) -> Result<ForwardPass> {
    if inputs.ncols() != model.config.linguistic_dim {
        return Err(Error::DimensionMismatch(format!(
            "input has {} columns, network expects {}",
            inputs.ncols(),
            model.config.linguistic_dim
        )));
    }
    if inputs.nrows() == 0 {
        return Err(Error::EmptyInput("forward pass needs T >= 1".into()));
    }
    let mut ff_activations = Vec::with_capacity(model.ff.len());
    let mut current = inputs.clone();
    for layer in &model.ff {
        current = layer.affine(&current).mapv(f64::tanh);
        ff_activations.push(current.clone());
    }
    let init = CellState::zeros(model.cell.spec());
    let (states, traces) = run_sequence(&model.cell, &current, &init)?;
    let mut hidden = Array2::zeros((states.len(), model.config.cell_spec.hidden_dim));
    for (t, st) in states.iter().enumerate() {
        hidden.row_mut(t).assign(&st.h);
    }
    let predictions = model.output.affine(&hidden);
    Ok(ForwardPass {
        ff_activations,
        states,
        traces,
        predictions,
    })
}

/// Frame-wise forward pass: predictions only.
pub fn forward(model: &Model, inputs: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(forward_full(model, inputs)?.predictions)
}

/// Same-shape gradient container for a whole model.
pub struct ModelGradients {
    pub ff: Vec<DenseLayer>,
    pub cell: CellParams,
    pub output: DenseLayer,
}

impl ModelGradients {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.ff {
            out.extend(layer.w.iter());
            out.extend(layer.b.iter());
        }
        self.cell.for_each(&mut |v| out.push(v));
        out.extend(self.output.w.iter());
        out.extend(self.output.b.iter());
        out
    }
}

/// Backpropagates `d_pred` (gradient of the loss w.r.t. the predictions)
/// through output, recurrent and feed-forward layers.
pub fn backward(
    model: &Model,
    inputs: &Array2<f64>,
    pass: &ForwardPass,
    d_pred: &Array2<f64>,
) -> Result<ModelGradients> {
    let top = pass
        .ff_activations
        .last()
        .expect("network has at least one feed-forward layer");
    let hidden_dim = model.config.cell_spec.hidden_dim;
    let t_len = inputs.nrows();

    let mut hidden = Array2::zeros((t_len, hidden_dim));
    for (t, st) in pass.states.iter().enumerate() {
        hidden.row_mut(t).assign(&st.h);
    }
    let d_out = DenseLayer {
        w: d_pred.t().dot(&hidden),
        b: d_pred.sum_axis(Axis(0)),
    };
    let d_hidden = d_pred.dot(&model.output.w);

    let init = CellState::zeros(model.cell.spec());
    let cell_grads = sequence_backward(&model.cell, top, &init, &pass.traces, &d_hidden)?;

    let mut d_ff = vec![];
    let mut d_act = cell_grads.inputs;
    for (l, layer) in model.ff.iter().enumerate().rev() {
        let act = &pass.ff_activations[l];
        let d_pre = &d_act * &act.mapv(|v| 1.0 - v * v);
        let below: &Array2<f64> = if l == 0 {
            inputs
        } else {
            &pass.ff_activations[l - 1]
        };
        d_ff.push(DenseLayer {
            w: d_pre.t().dot(below),
            b: d_pre.sum_axis(Axis(0)),
        });
        d_act = d_pre.dot(&layer.w);
    }
    d_ff.reverse();

    Ok(ModelGradients {
        ff: d_ff,
        cell: cell_grads.params,
        output: d_out,
    })
}

/// One training utterance: normalized inputs and targets.
#[derive(Debug, Clone)]
pub struct SeqPair {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub dev_mse: f64,
    pub learning_rate: f64,
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_mse,dev_mse,lr\n");
    for e in history {
        out.push_str(&format!(
            "{},{:.9},{:.9},{}\n",
            e.epoch, e.train_mse, e.dev_mse, e.learning_rate
        ));
    }
    out
}

fn element_mse(pred: &Array2<f64>, target: &Array2<f64>) -> f64 {
    let diff = pred - target;
    diff.mapv(|d| d * d).mean().unwrap_or(0.0)
}

/// Trains with per-utterance SGD plus momentum and dev-set early stopping.
/// Returns the model snapshot with the best dev MSE and the per-epoch history.
pub fn train(
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
    train_set: &[SeqPair],
    dev_set: &[SeqPair],
    layout: StreamLayout,
    input_stats: MinMaxStats,
    target_stats: MeanVarStats,
) -> Result<(Model, Vec<EpochStats>)> {
    net_cfg.validate()?;
    train_cfg.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::EmptyInput("training needs nonempty train and dev sets".into()));
    }
    let mut model = Model::init(
        net_cfg.clone(),
        layout,
        input_stats,
        target_stats,
        train_cfg.seed,
        train_cfg.init_scale,
    )?;
    let n_params = model.param_count();
    let mut velocity = vec![0.0f64; n_params];
    let mut history = Vec::new();
    let mut best: Option<(f64, Model)> = None;
    let mut best_epoch = 0usize;

    for epoch in 0..train_cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed.wrapping_add(epoch as u64));
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }

        let mut loss_sum = 0.0;
        for &idx in &order {
            let utt = &train_set[idx];
            let pass = forward_full(&model, &utt.inputs)?;
            let loss = element_mse(&pass.predictions, &utt.targets);
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    learning_rate: train_cfg.learning_rate,
                });
            }
            loss_sum += loss;
            let scale = 2.0 / (utt.targets.len() as f64);
            let d_pred = (&pass.predictions - &utt.targets) * scale;
            let grads = backward(&model, &utt.inputs, &pass, &d_pred)?;
            let mut flat = grads.to_flat();
            if let Some(clip) = train_cfg.grad_clip_norm {
                let norm = flat.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > clip {
                    let s = clip / norm;
                    flat.iter_mut().for_each(|g| *g *= s);
                }
            }
            let mut i = 0usize;
            model.for_each_param_mut(&mut |p| {
                velocity[i] =
                    train_cfg.momentum * velocity[i] - train_cfg.learning_rate * flat[i];
                *p += velocity[i];
                i += 1;
            });
        }

        let train_mse = loss_sum / train_set.len() as f64;
        let dev_mse = evaluate(&model, dev_set)?.total;
        if !dev_mse.is_finite() {
            return Err(Error::Divergence {
                epoch,
                learning_rate: train_cfg.learning_rate,
            });
        }
        history.push(EpochStats {
            epoch,
            train_mse,
            dev_mse,
            learning_rate: train_cfg.learning_rate,
        });

        let improved = best.as_ref().map_or(true, |(b, _)| dev_mse < *b);
        if improved {
            best = Some((dev_mse, model.clone()));
            best_epoch = epoch;
        } else if epoch - best_epoch >= train_cfg.patience {
            break;
        }
    }

    let (_, best_model) = best.expect("at least one epoch ran");
    Ok((best_model, history))
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub total: f64,
    pub per_stream: Vec<(String, f64)>,
    pub frames: usize,
}

/// Frame-weighted elementwise MSE in normalized target space, reported per
/// acoustic stream and in total.
pub fn evaluate(model: &Model, set: &[SeqPair]) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::EmptyInput("evaluation set is empty".into()));
    }
    let layout = model.layout;
    let mut stream_sq = vec![0.0f64; 4];
    let mut stream_n = vec![0usize; 4];
    let mut frames = 0usize;
    for utt in set {
        let pred = forward(model, &utt.inputs)?;
        frames += pred.nrows();
        let diff = &pred - &utt.targets;
        for (s_idx, stream) in Stream::ALL.iter().enumerate() {
            let block = layout.block(*stream);
            let count = block.len();
            let sq: f64 = diff
                .slice(ndarray::s![.., block])
                .iter()
                .map(|d| d * d)
                .sum();
            stream_sq[s_idx] += sq;
            stream_n[s_idx] += count * pred.nrows();
        }
        let vuv_col = diff.column(layout.vuv_index());
        stream_sq[3] += vuv_col.iter().map(|d| d * d).sum::<f64>();
        stream_n[3] += pred.nrows();
    }
    let names = ["mcc", "bap", "lf0", "vuv"];
    let per_stream: Vec<(String, f64)> = names
        .iter()
        .zip(stream_sq.iter().zip(&stream_n))
        .map(|(name, (sq, n))| (name.to_string(), sq / *n as f64))
        .collect();
    let total_sq: f64 = stream_sq.iter().sum();
    let total_n: usize = stream_n.iter().sum();
    Ok(EvalReport {
        total: total_sq / total_n as f64,
        per_stream,
        frames,
    })
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub label: String,
    pub median_seconds: f64,
    /// Ratio of this model's median to the first model's median.
    pub ratio_to_first: f64,
}

/// Wall-clock forward-pass time per model over `set`, repeated `reps` times
/// with the median reported. Runs are sequential.
pub fn bench_generation(
    models: &[(String, &Model)],
    set: &[SeqPair],
    reps: usize,
) -> Result<Vec<BenchRow>> {
    if models.len() < 2 && models.len() != 1 {
        return Err(Error::InvalidArgument("benchmark needs at least one model".into()));
    }
    if set.is_empty() {
        return Err(Error::EmptyInput("benchmark set is empty".into()));
    }
    let reps = reps.max(3);
    let mut medians = Vec::with_capacity(models.len());
    for (label, model) in models {
        let mut times = Vec::with_capacity(reps);
        for _ in 0..reps {
            let start = std::time::Instant::now();
            for utt in set {
                let pred = forward(model, &utt.inputs)?;
                std::hint::black_box(&pred);
            }
            times.push(start.elapsed().as_secs_f64());
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        medians.push((label.clone(), times[reps / 2]));
    }
    let baseline = medians[0].1;
    Ok(medians
        .into_iter()
        .map(|(label, median_seconds)| BenchRow {
            label,
            median_seconds,
            ratio_to_first: median_seconds / baseline,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::CellKind;
    use ndarray::array;

    fn tiny_config(kind: CellKind) -> NetworkConfig {
        NetworkConfig {
            ff_sizes: vec![4, 4, 4],
            cell_spec: CellSpec::new(kind, 4, 3).unwrap(),
            linguistic_dim: 5,
            output_dim: 10,
        }
    }

    fn dummy_stats(in_dim: usize, out_dim: usize) -> (MinMaxStats, MeanVarStats) {
        (
            MinMaxStats {
                min: vec![0.0; in_dim],
                max: vec![1.0; in_dim],
                lo: 0.01,
                hi: 0.99,
            },
            MeanVarStats {
                mean: vec![0.0; out_dim],
                std: vec![1.0; out_dim],
                constant: vec![false; out_dim],
            },
        )
    }

    fn tiny_model(kind: CellKind, seed: u64) -> Model {
        let cfg = tiny_config(kind);
        let (mm, mv) = dummy_stats(cfg.linguistic_dim, cfg.output_dim);
        Model::init(cfg, StreamLayout::new(1, 1), mm, mv, seed, 0.3).unwrap()
    }

    fn random_inputs(t_len: usize, dim: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((t_len, dim), |_| rng.gen_range(0.01..0.99))
    }

    #[test]
    fn zero_weights_predict_output_bias() {
        let mut model = tiny_model(CellKind::VanillaLstm, 1);
        model.for_each_param_mut(&mut |v| *v = 0.0);
        model.output.b = array![1.0, -2.0, 0.5, 0.0, 3.0, 4.0, -0.5, 2.0, 0.1, -1.0];
        let pred = forward(&model, &random_inputs(4, 5, 2)).unwrap();
        for row in pred.rows() {
            for (d, &v) in row.iter().enumerate() {
                assert_eq!(v, model.output.b[d]);
            }
        }
    }

    #[test]
    fn single_frame_forward_composes_by_hand() {
        let model = tiny_model(CellKind::Gru, 3);
        let x = random_inputs(1, 5, 4);
        let pred = forward(&model, &x).unwrap();

        // Manual composition: three tanh layers, one cell step, affine map.
        let mut h = x.row(0).to_owned();
        for layer in &model.ff {
            h = (layer.w.dot(&h) + &layer.b).mapv(f64::tanh);
        }
        let init = CellState::zeros(model.cell.spec());
        let (state, _) = crate::cells::step(&model.cell, &h, &init).unwrap();
        let expect = model.output.w.dot(&state.h) + &model.output.b;
        for (a, b) in pred.row(0).iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn utterances_are_independent() {
        let model = tiny_model(CellKind::VanillaLstm, 5);
        let a = random_inputs(6, 5, 10);
        let b = random_inputs(4, 5, 11);
        let pa = forward(&model, &a).unwrap();
        let pb = forward(&model, &b).unwrap();
        // Order of evaluation cannot matter: recompute in swapped order.
        let pb2 = forward(&model, &b).unwrap();
        let pa2 = forward(&model, &a).unwrap();
        assert_eq!(pa, pa2);
        assert_eq!(pb, pb2);
    }

    #[test]
    fn whole_network_gradient_check() {
        for kind in [CellKind::VanillaLstm, CellKind::Gru, CellKind::SLstm] {
            let model = tiny_model(kind, 7);
            let x = random_inputs(5, 5, 20);
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let y = Array2::from_shape_fn((5, 10), |_| rng.gen_range(-1.0..1.0));

            let pass = forward_full(&model, &x).unwrap();
            let scale = 2.0 / y.len() as f64;
            let d_pred = (&pass.predictions - &y) * scale;
            let analytic = backward(&model, &x, &pass, &d_pred).unwrap().to_flat();

            let eps = 1e-4;
            let mut max_rel = 0.0f64;
            for idx in 0..model.param_count() {
                let mut plus = model.clone();
                plus.perturb(idx, eps);
                let mut minus = model.clone();
                minus.perturb(idx, -eps);
                let lp = element_mse(&forward(&plus, &x).unwrap(), &y);
                let lm = element_mse(&forward(&minus, &x).unwrap(), &y);
                let gn = (lp - lm) / (2.0 * eps);
                let ga = analytic[idx];
                // Floor the denominator at 1e-6: with the mean-MSE loss near
                // 1.0, central differences carry ~1e-12 of absolute roundoff,
                // so gradients below the floor are indistinguishable from 0
                // and a pure relative error would measure only that noise.
                let rel = (ga - gn).abs() / ga.abs().max(gn.abs()).max(1e-6);
                max_rel = max_rel.max(rel);
            }
            assert!(max_rel < 1e-6, "{kind}: network grad check {max_rel:.3e}");
        }
    }

    fn toy_dataset(n: usize, t_len: usize, seed: u64) -> Vec<SeqPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let inputs = Array2::from_shape_fn((t_len, 5), |_| rng.gen_range(0.01..0.99));
                // Constant target per utterance set: learnable to near zero error.
                let targets = Array2::from_elem((t_len, 10), 0.3);
                SeqPair { inputs, targets }
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let cfg = tiny_config(CellKind::SLstm);
        let (mm, mv) = dummy_stats(5, 10);
        let tc = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 2,
            seed: 3,
            ..TrainConfig::default()
        };
        let set = toy_dataset(3, 6, 1);
        let (model, _) =
            train(&cfg, &tc, &set, &set, StreamLayout::new(1, 1), mm.clone(), mv.clone()).unwrap();
        let fresh = Model::init(cfg, StreamLayout::new(1, 1), mm, mv, tc.seed, tc.init_scale).unwrap();
        let mut a = Vec::new();
        model.for_each_param(&mut |v| a.push(v));
        let mut b = Vec::new();
        fresh.for_each_param(&mut |v| b.push(v));
        assert_eq!(a, b);
    }

    #[test]
    fn constant_target_corpus_converges() {
        let cfg = tiny_config(CellKind::VanillaLstm);
        let (mm, mv) = dummy_stats(5, 10);
        let tc = TrainConfig {
            learning_rate: 0.05,
            max_epochs: 60,
            patience: 60,
            seed: 5,
            ..TrainConfig::default()
        };
        let set = toy_dataset(4, 8, 2);
        let (_, history) =
            train(&cfg, &tc, &set, &set, StreamLayout::new(1, 1), mm, mv).unwrap();
        let best = history.iter().map(|e| e.dev_mse).fold(f64::INFINITY, f64::min);
        assert!(best < 1e-3, "best dev MSE {best:.3e}");
    }

    #[test]
    fn fixed_seed_reproduces_history() {
        let cfg = tiny_config(CellKind::Gru);
        let (mm, mv) = dummy_stats(5, 10);
        let tc = TrainConfig {
            learning_rate: 0.02,
            max_epochs: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let set = toy_dataset(3, 5, 3);
        let run = || {
            train(
                &cfg,
                &tc,
                &set,
                &set,
                StreamLayout::new(1, 1),
                mm.clone(),
                mv.clone(),
            )
            .unwrap()
        };
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn early_stopping_returns_best_dev_model() {
        let cfg = tiny_config(CellKind::SLstm);
        let (mm, mv) = dummy_stats(5, 10);
        let tc = TrainConfig {
            learning_rate: 0.05,
            max_epochs: 15,
            patience: 3,
            seed: 13,
            ..TrainConfig::default()
        };
        let set = toy_dataset(3, 6, 4);
        let (model, history) =
            train(&cfg, &tc, &set, &set, StreamLayout::new(1, 1), mm, mv).unwrap();
        let best = history.iter().map(|e| e.dev_mse).fold(f64::INFINITY, f64::min);
        let final_dev = evaluate(&model, &set).unwrap().total;
        assert!(final_dev <= best + 1e-12);
    }

    #[test]
    fn momentum_zero_is_vanilla_gradient_descent() {
        // Scalar probe: one ff "layer" of size 1 is impractical here, so check
        // the update rule directly on a tiny model with a single step.
        let cfg = tiny_config(CellKind::Gru);
        let (mm, mv) = dummy_stats(5, 10);
        let model = Model::init(cfg.clone(), StreamLayout::new(1, 1), mm, mv, 1, 0.3).unwrap();
        let set = toy_dataset(1, 4, 6);
        let pass = forward_full(&model, &set[0].inputs).unwrap();
        let scale = 2.0 / set[0].targets.len() as f64;
        let d_pred = (&pass.predictions - &set[0].targets) * scale;
        let flat = backward(&model, &set[0].inputs, &pass, &d_pred)
            .unwrap()
            .to_flat();
        let lr = 0.1;
        let mut expect = Vec::new();
        let mut i = 0usize;
        model.for_each_param(&mut |v| {
            expect.push(v - lr * flat[i]);
            i += 1;
        });

        let mut stepped = model.clone();
        let mut velocity = vec![0.0; flat.len()];
        let mut j = 0usize;
        stepped.for_each_param_mut(&mut |p| {
            velocity[j] = 0.0 * velocity[j] - lr * flat[j];
            *p += velocity[j];
            j += 1;
        });
        let mut got = Vec::new();
        stepped.for_each_param(&mut |v| got.push(v));
        for (a, b) in got.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn evaluate_fixture_values() {
        let model = tiny_model(CellKind::VanillaLstm, 30);
        let x = random_inputs(5, 5, 31);
        let pred = forward(&model, &x).unwrap();
        // predictions == targets -> 0
        let set = vec![SeqPair {
            inputs: x.clone(),
            targets: pred.clone(),
        }];
        let report = evaluate(&model, &set).unwrap();
        assert!(report.total < 1e-24);
        // predictions == targets + 1 -> total 1
        let set = vec![SeqPair {
            inputs: x,
            targets: &pred - 1.0,
        }];
        let report = evaluate(&model, &set).unwrap();
        assert!((report.total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_matches_direct_summation() {
        let model = tiny_model(CellKind::Gru, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let set: Vec<SeqPair> = (0..3)
            .map(|i| {
                let inputs = random_inputs(4 + i, 5, 50 + i as u64);
                let targets = Array2::from_shape_fn((4 + i, 10), |_| rng.gen_range(-1.0..1.0));
                SeqPair { inputs, targets }
            })
            .collect();
        let report = evaluate(&model, &set).unwrap();
        let mut sq = 0.0;
        let mut n = 0usize;
        for utt in &set {
            let pred = forward(&model, &utt.inputs).unwrap();
            for (a, b) in pred.iter().zip(utt.targets.iter()) {
                sq += (a - b) * (a - b);
                n += 1;
            }
        }
        assert!((report.total - sq / n as f64).abs() < 1e-12);
    }

    #[test]
    fn bench_self_ratio_is_near_one() {
        let model = tiny_model(CellKind::VanillaLstm, 50);
        let set = toy_dataset(4, 30, 7);
        let rows = bench_generation(
            &[("a".into(), &model), ("b".into(), &model)],
            &set,
            5,
        )
        .unwrap();
        assert!(rows[1].ratio_to_first > 0.5 && rows[1].ratio_to_first < 2.0);
    }
}
