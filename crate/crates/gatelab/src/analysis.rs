//! Gate and cell-state analyses: averaged gate activation against segment
//! boundaries and cell-state / target-trajectory correlation, with CSV and
//! SVG emission.

use ndarray::Array2;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::cells::{CellKind, GateTrace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Forget,
    Input,
    Output,
}

impl Gate {
    pub fn name(self) -> &'static str {
        match self {
            Gate::Forget => "forget",
            Gate::Input => "input",
            Gate::Output => "output",
        }
    }

    pub fn parse(s: &str) -> Result<Gate> {
        match s.to_ascii_lowercase().as_str() {
            "forget" => Ok(Gate::Forget),
            "input" => Ok(Gate::Input),
            "output" => Ok(Gate::Output),
            other => Err(Error::InvalidArgument(format!("unknown gate `{other}`"))),
        }
    }
}

/// Per-frame mean over hidden units of one gate's activations.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSeries {
    pub values: Vec<f64>,
    pub utterance: String,
    pub boundaries: Vec<usize>,
    /// Set when the gate is architecturally pinned to a constant (NFG's
    /// forget gate reports a flat 1.0 series).
    pub constant_gate: bool,
}

/// Arithmetic mean across hidden units per frame of the chosen gate.
pub fn mean_gate_activation(
    kind: CellKind,
    traces: &[GateTrace],
    gate: Gate,
    utterance: impl Into<String>,
    boundaries: &[usize],
) -> Result<GateSeries> {
    let pick = |tr: &GateTrace| match gate {
        Gate::Forget => tr.forget_gate.clone(),
        Gate::Input => tr.input_gate.clone(),
        Gate::Output => tr.output_gate.clone(),
    };
    let gate_absent = || Error::GateAbsent {
        gate: gate.name().into(),
        kind: kind.label().into(),
    };
    // NFG's forget gate exists in the equations but is pinned to 1; report it
    // as a flagged constant series rather than an error.
    if kind == CellKind::Nfg && gate == Gate::Forget {
        return Ok(GateSeries {
            values: vec![1.0; traces.len()],
            utterance: utterance.into(),
            boundaries: boundaries.to_vec(),
            constant_gate: true,
        });
    }
    let mut values = Vec::with_capacity(traces.len());
    for tr in traces {
        let g = pick(tr).ok_or_else(gate_absent)?;
        values.push(g.mean().unwrap_or(0.0));
    }
    Ok(GateSeries {
        values,
        utterance: utterance.into(),
        boundaries: boundaries.to_vec(),
        constant_gate: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentStats {
    /// Mean of the series at frames within +-1 of an internal boundary.
    pub boundary_mean: f64,
    /// Mean over all other frames.
    pub interior_mean: f64,
    pub difference: f64,
    /// Distance in frames from each strict local maximum to the nearest
    /// internal boundary.
    pub peak_distances: Vec<usize>,
}

/// Compares the series around internal segment boundaries against segment
/// interiors. The utterance-start boundary at frame 0 is not a transition and
/// is excluded.
pub fn boundary_alignment(series: &GateSeries) -> Result<AlignmentStats> {
    if series.boundaries.len() < 2 {
        return Err(Error::InvalidArgument(
            "boundary alignment needs at least two segments".into(),
        ));
    }
    let t_len = series.values.len();
    let internal: Vec<usize> = series.boundaries[1..].to_vec();
    let mut is_boundary = vec![false; t_len];
    for &b in &internal {
        for t in b.saturating_sub(1)..=(b + 1).min(t_len - 1) {
            is_boundary[t] = true;
        }
    }
    let (mut b_sum, mut b_n, mut i_sum, mut i_n) = (0.0, 0usize, 0.0, 0usize);
    for (t, &v) in series.values.iter().enumerate() {
        if is_boundary[t] {
            b_sum += v;
            b_n += 1;
        } else {
            i_sum += v;
            i_n += 1;
        }
    }
    let boundary_mean = if b_n > 0 { b_sum / b_n as f64 } else { 0.0 };
    let interior_mean = if i_n > 0 { i_sum / i_n as f64 } else { 0.0 };

    let mut peak_distances = Vec::new();
    for t in 1..t_len.saturating_sub(1) {
        if series.values[t] > series.values[t - 1] && series.values[t] > series.values[t + 1] {
            let dist = internal
                .iter()
                .map(|&b| t.abs_diff(b))
                .min()
                .unwrap_or(usize::MAX);
            peak_distances.push(dist);
        }
    }
    Ok(AlignmentStats {
        boundary_mean,
        interior_mean,
        difference: boundary_mean - interior_mean,
        peak_distances,
    })
}

#[derive(Debug, Clone)]
pub struct CorrelationTable {
    /// Pearson correlation of each hidden unit's cell-state trajectory with
    /// the target; constant units get 0 and a flag.
    pub correlations: Vec<f64>,
    pub constant_units: Vec<bool>,
    /// Unit index with the largest |correlation|.
    pub argmax: usize,
}

impl CorrelationTable {
    pub fn argmax_value(&self) -> f64 {
        self.correlations[self.argmax]
    }
}

/// Pearson correlation between each cell-state trajectory (columns of
/// `cell_states`, T x nH) and a single target trajectory.
pub fn cell_target_correlation(
    cell_states: &Array2<f64>,
    target: &[f64],
) -> Result<CorrelationTable> {
    let t_len = cell_states.nrows();
    if t_len != target.len() {
        return Err(Error::DimensionMismatch(
            "cell states and target have different lengths".into(),
        ));
    }
    if t_len < 3 {
        return Err(Error::InvalidArgument("correlation needs T >= 3".into()));
    }
    let t_mean = target.iter().sum::<f64>() / t_len as f64;
    let t_var: f64 = target.iter().map(|v| (v - t_mean) * (v - t_mean)).sum();
    if t_var == 0.0 {
        return Err(Error::InvalidArgument("target trajectory is constant".into()));
    }
    let n_units = cell_states.ncols();
    let mut correlations = Vec::with_capacity(n_units);
    let mut constant_units = Vec::with_capacity(n_units);
    for u in 0..n_units {
        let col = cell_states.column(u);
        let mean = col.mean().unwrap();
        let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        if var == 0.0 {
            correlations.push(0.0);
            constant_units.push(true);
            continue;
        }
        let cov: f64 = col
            .iter()
            .zip(target)
            .map(|(c, t)| (c - mean) * (t - t_mean))
            .sum();
        correlations.push(cov / (var.sqrt() * t_var.sqrt()));
        constant_units.push(false);
    }
    let argmax = correlations
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    Ok(CorrelationTable {
        correlations,
        constant_units,
        argmax,
    })
}

fn svg_polyline(points: &[(f64, f64)], color: &str, dash: Option<&str>) -> String {
    let coords: Vec<String> = points
        .iter()
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect();
    let dash_attr = dash.map_or(String::new(), |d| format!(" stroke-dasharray=\"{d}\""));
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash_attr} points=\"{}\"/>\n",
        coords.join(" ")
    )
}

const SVG_W: f64 = 800.0;
const SVG_H: f64 = 300.0;
const MARGIN: f64 = 20.0;

fn scale_series(values: &[f64], lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let n = values.len().max(2);
    values
        .iter()
        .enumerate()
        .map(|(t, &v)| {
            let x = MARGIN + (SVG_W - 2.0 * MARGIN) * t as f64 / (n - 1) as f64;
            let norm = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            let y = SVG_H - MARGIN - (SVG_H - 2.0 * MARGIN) * norm;
            (x, y)
        })
        .collect()
}

fn boundary_lines(boundaries: &[usize], t_len: usize) -> String {
    let n = t_len.max(2);
    let mut out = String::new();
    for &b in boundaries {
        let x = MARGIN + (SVG_W - 2.0 * MARGIN) * b as f64 / (n - 1) as f64;
        let _ = write!(
            out,
            "<line x1=\"{x:.2}\" y1=\"{MARGIN}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"blue\" stroke-width=\"1\" stroke-dasharray=\"4 3\"/>\n",
            SVG_H - MARGIN
        );
    }
    out
}

fn svg_document(body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes the raw gate series as CSV and a line plot with dashed vertical
/// boundary markers as SVG. Returns the (csv, svg) paths.
pub fn emit_gate_plot(series: &GateSeries, dir: &Path, stem: &str) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let svg_path = dir.join(format!("{stem}.svg"));

    let mut csv = String::from("frame,mean_activation,is_boundary\n");
    for (t, v) in series.values.iter().enumerate() {
        let b = u8::from(series.boundaries.contains(&t));
        let _ = writeln!(csv, "{t},{v:.12},{b}");
    }
    write_file(&csv_path, &csv)?;

    let (lo, hi) = series
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let mut body = boundary_lines(&series.boundaries, series.values.len());
    body.push_str(&svg_polyline(
        &scale_series(&series.values, lo, hi),
        "red",
        None,
    ));
    write_file(&svg_path, &svg_document(&body))?;
    Ok((csv_path, svg_path))
}

/// Writes two trajectories (target and the selected cell state), vertically
/// offset for clarity, as CSV and SVG.
pub fn emit_pair_plot(
    target: &[f64],
    cell_state: &[f64],
    unit: usize,
    dir: &Path,
    stem: &str,
) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let svg_path = dir.join(format!("{stem}.svg"));

    let mut csv = format!("frame,target,cell_state_unit_{unit}\n");
    for (t, (a, b)) in target.iter().zip(cell_state).enumerate() {
        let _ = writeln!(csv, "{t},{a:.12},{b:.12}");
    }
    write_file(&csv_path, &csv)?;

    // Standardize both tracks, offset the cell state downward.
    let standardize = |xs: &[f64]| -> Vec<f64> {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let std = (xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / xs.len() as f64)
            .sqrt()
            .max(1e-12);
        xs.iter().map(|v| (v - mean) / std).collect()
    };
    let a = standardize(target);
    let b: Vec<f64> = standardize(cell_state).iter().map(|v| v - 3.0).collect();
    let lo = a
        .iter()
        .chain(&b)
        .fold(f64::INFINITY, |acc, &v| acc.min(v));
    let hi = a
        .iter()
        .chain(&b)
        .fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
    let mut body = svg_polyline(&scale_series(&a, lo, hi), "red", None);
    body.push_str(&svg_polyline(&scale_series(&b, lo, hi), "black", Some("2 2")));
    write_file(&svg_path, &svg_document(&body))?;
    Ok((csv_path, svg_path))
}

/// CSV dump of a correlation table.
pub fn correlation_csv(table: &CorrelationTable) -> String {
    let mut csv = String::from("unit,correlation,constant\n");
    for (u, (&c, &flag)) in table
        .correlations
        .iter()
        .zip(&table.constant_units)
        .enumerate()
    {
        let _ = writeln!(csv, "{u},{c:.12},{}", u8::from(flag));
    }
    let _ = writeln!(csv, "argmax,{},{:.12}", table.argmax, table.argmax_value());
    csv
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn trace_with_forget(values: Vec<f64>) -> GateTrace {
        GateTrace {
            input_gate: None,
            forget_gate: Some(Array1::from_vec(values)),
            output_gate: None,
            reset_gate: None,
            update_gate: None,
            candidate: Array1::zeros(1),
            recurrent_candidate: None,
            cell: None,
            hidden: Array1::zeros(1),
        }
    }

    #[test]
    fn mean_over_identical_units_is_any_unit() {
        let traces = vec![trace_with_forget(vec![0.3, 0.3]), trace_with_forget(vec![0.8, 0.8])];
        let s = mean_gate_activation(CellKind::SLstm, &traces, Gate::Forget, "u", &[0]).unwrap();
        assert_eq!(s.values, vec![0.3, 0.8]);
    }

    #[test]
    fn mean_of_two_units() {
        let traces = vec![trace_with_forget(vec![0.2, 0.6])];
        let s = mean_gate_activation(CellKind::SLstm, &traces, Gate::Forget, "u", &[0]).unwrap();
        assert!((s.values[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn nfg_forget_gate_is_flagged_constant_one() {
        let traces = vec![trace_with_forget(vec![0.0]); 3];
        let s = mean_gate_activation(CellKind::Nfg, &traces, Gate::Forget, "u", &[0, 1]).unwrap();
        assert!(s.constant_gate);
        assert!(s.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn absent_gate_is_an_error() {
        let traces = vec![trace_with_forget(vec![0.5])];
        assert!(mean_gate_activation(CellKind::SLstm, &traces, Gate::Input, "u", &[0]).is_err());
    }

    #[test]
    fn slicing_commutes_with_averaging() {
        let traces: Vec<GateTrace> = (0..6)
            .map(|t| trace_with_forget(vec![0.1 * t as f64, 0.2]))
            .collect();
        let full = mean_gate_activation(CellKind::SLstm, &traces, Gate::Forget, "u", &[0]).unwrap();
        let part =
            mean_gate_activation(CellKind::SLstm, &traces[2..5], Gate::Forget, "u", &[0]).unwrap();
        assert_eq!(&full.values[2..5], part.values.as_slice());
    }

    #[test]
    fn peaks_at_boundaries_have_zero_distance() {
        let series = GateSeries {
            values: vec![0.1, 0.2, 0.9, 0.2, 0.1, 0.8, 0.1, 0.0],
            utterance: "u".into(),
            boundaries: vec![0, 2, 5],
            constant_gate: false,
        };
        let stats = boundary_alignment(&series).unwrap();
        assert_eq!(stats.peak_distances, vec![0, 0]);
        assert!(stats.difference > 0.0);
    }

    #[test]
    fn constant_series_has_no_peaks_and_zero_difference() {
        let series = GateSeries {
            values: vec![0.5; 8],
            utterance: "u".into(),
            boundaries: vec![0, 4],
            constant_gate: false,
        };
        let stats = boundary_alignment(&series).unwrap();
        assert!(stats.peak_distances.is_empty());
        assert_eq!(stats.difference, 0.0);
    }

    #[test]
    fn correlation_identity_and_negation() {
        let t_len = 10;
        let target: Vec<f64> = (0..t_len).map(|t| (t as f64 * 0.7).sin()).collect();
        let mut states = Array2::zeros((t_len, 3));
        for t in 0..t_len {
            states[[t, 0]] = 0.5; // constant unit
            states[[t, 1]] = target[t];
            states[[t, 2]] = 0.3 * (t as f64);
        }
        let table = cell_target_correlation(&states, &target).unwrap();
        assert!(table.constant_units[0]);
        assert_eq!(table.correlations[0], 0.0);
        assert!((table.correlations[1] - 1.0).abs() < 1e-12);
        assert_eq!(table.argmax, 1);

        for t in 0..t_len {
            states[[t, 1]] = -target[t];
        }
        let table = cell_target_correlation(&states, &target).unwrap();
        assert!((table.correlations[1] + 1.0).abs() < 1e-12);
        assert_eq!(table.argmax, 1);
    }

    #[test]
    fn correlation_matches_direct_formula() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let t_len = 9;
        let states = Array2::from_shape_fn((t_len, 5), |_| rng.gen_range(-1.0..1.0));
        let target: Vec<f64> = (0..t_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let table = cell_target_correlation(&states, &target).unwrap();
        for u in 0..5 {
            let xs: Vec<f64> = states.column(u).to_vec();
            let mx = xs.iter().sum::<f64>() / t_len as f64;
            let my = target.iter().sum::<f64>() / t_len as f64;
            let cov: f64 = xs.iter().zip(&target).map(|(x, y)| (x - mx) * (y - my)).sum();
            let vx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
            let vy: f64 = target.iter().map(|y| (y - my) * (y - my)).sum();
            let expect = cov / (vx.sqrt() * vy.sqrt());
            assert!((table.correlations[u] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_affine_invariance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let states = Array2::from_shape_fn((12, 4), |_| rng.gen_range(-1.0..1.0));
        let target: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base = cell_target_correlation(&states, &target).unwrap();
        let shifted: Vec<f64> = target.iter().map(|v| 4.0 * v + 2.5).collect();
        let scaled = cell_target_correlation(&states, &shifted).unwrap();
        for (a, b) in base.correlations.iter().zip(&scaled.correlations) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(base.argmax, scaled.argmax);
    }

    #[test]
    fn correlation_rejects_constant_target() {
        let states = Array2::zeros((5, 2));
        assert!(cell_target_correlation(&states, &[1.0; 5]).is_err());
    }

    #[test]
    fn plots_are_deterministic_and_complete() {
        let dir = std::env::temp_dir().join(format!("gatelab_plot_{}", std::process::id()));
        let series = GateSeries {
            values: vec![0.1, 0.5, 0.9, 0.4],
            utterance: "u".into(),
            boundaries: vec![0, 2],
            constant_gate: false,
        };
        let (csv_path, svg_path) = emit_gate_plot(&series, &dir, "gate").unwrap();
        let csv = fs::read_to_string(&csv_path).unwrap();
        assert_eq!(csv.lines().count(), 1 + 4); // header + one row per frame
        let svg = fs::read_to_string(&svg_path).unwrap();
        assert_eq!(svg.matches("<line ").count(), 2); // one marker per boundary
        let (csv2, _) = emit_gate_plot(&series, &dir, "gate").unwrap();
        assert_eq!(csv, fs::read_to_string(csv2).unwrap());
        fs::remove_dir_all(&dir).ok();
    }
}
