//! Deterministic synthetic corpus generator: phoneme-structured utterances
//! with tri-phone one-hot context features, positional features that reset at
//! segment boundaries, and smoothed piecewise-constant acoustic targets.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::interpolate_f0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub phone_inventory_size: usize,
    pub train_utterances: usize,
    pub dev_utterances: usize,
    pub test_utterances: usize,
    pub segments_per_utterance: (usize, usize),
    pub segment_frames: (usize, usize),
    pub mcc_dim: usize,
    pub bap_dim: usize,
    /// Moving-average half-width for cross-boundary smoothing; 0 disables it.
    pub smoothing_half_width: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> CorpusConfig {
        CorpusConfig {
            phone_inventory_size: 20,
            train_utterances: 240,
            dev_utterances: 7,
            test_utterances: 8,
            segments_per_utterance: (4, 10),
            segment_frames: (5, 30),
            mcc_dim: 12,
            bap_dim: 4,
            smoothing_half_width: 2,
            noise_std: 0.05,
            seed: 1000,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.phone_inventory_size < 2 {
            return Err(Error::InvalidArgument("need at least 2 phones".into()));
        }
        if self.train_utterances == 0 || self.dev_utterances == 0 || self.test_utterances == 0 {
            return Err(Error::InvalidArgument("all split sizes must be >= 1".into()));
        }
        if self.segment_frames.0 < 1 || self.segment_frames.0 > self.segment_frames.1 {
            return Err(Error::InvalidArgument("invalid segment frame range".into()));
        }
        if self.segments_per_utterance.0 < 2
            || self.segments_per_utterance.0 > self.segments_per_utterance.1
        {
            return Err(Error::InvalidArgument("invalid segments-per-utterance range".into()));
        }
        Ok(())
    }

    /// One-hot prev/cur/next phone blocks plus three positional features.
    pub fn linguistic_dim(&self) -> usize {
        3 * self.phone_inventory_size + 3
    }

    pub fn static_dim(&self) -> usize {
        self.mcc_dim + self.bap_dim
    }
}

/// One aligned utterance: linguistic input frames, acoustic targets, segment
/// boundaries and voicing.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub linguistic: Array2<f64>,
    pub mcc: Array2<f64>,
    pub bap: Array2<f64>,
    /// Interpolated log-F0.
    pub log_f0: Vec<f64>,
    pub vuv: Vec<u8>,
    /// Segment start indices; first entry is 0.
    pub boundaries: Vec<usize>,
    pub phones: Vec<usize>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.linguistic.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

/// Fixed per-phone properties drawn once per corpus.
struct PhoneTable {
    mcc: Vec<Vec<f64>>,
    bap: Vec<Vec<f64>>,
    log_f0: Vec<f64>,
    voiced: Vec<bool>,
}

impl PhoneTable {
    fn generate(cfg: &CorpusConfig, rng: &mut ChaCha8Rng) -> PhoneTable {
        let p = cfg.phone_inventory_size;
        let mut table = PhoneTable {
            mcc: Vec::with_capacity(p),
            bap: Vec::with_capacity(p),
            log_f0: Vec::with_capacity(p),
            voiced: Vec::with_capacity(p),
        };
        for i in 0..p {
            table
                .mcc
                .push((0..cfg.mcc_dim).map(|_| rng.gen_range(-1.5..1.5)).collect());
            table
                .bap
                .push((0..cfg.bap_dim).map(|_| rng.gen_range(-1.5..1.5)).collect());
            table.log_f0.push(rng.gen_range(100.0f64.ln()..250.0f64.ln()));
            // Roughly 70% voiced; keep phone 0 voiced so every utterance can
            // be made to contain a voiced frame.
            table.voiced.push(i == 0 || rng.gen_range(0.0..1.0) < 0.7);
        }
        table
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn moving_average(m: &Array2<f64>, half_width: usize) -> Array2<f64> {
    if half_width == 0 {
        return m.clone();
    }
    let (t_len, dim) = m.dim();
    let mut out = Array2::zeros((t_len, dim));
    for t in 0..t_len {
        let lo = t.saturating_sub(half_width);
        let hi = (t + half_width).min(t_len - 1);
        let n = (hi - lo + 1) as f64;
        for d in 0..dim {
            let mut sum = 0.0;
            for u in lo..=hi {
                sum += m[[u, d]];
            }
            out[[t, d]] = sum / n;
        }
    }
    out
}

fn generate_utterance(
    cfg: &CorpusConfig,
    table: &PhoneTable,
    rng: &mut ChaCha8Rng,
    id: String,
) -> Result<Utterance> {
    let n_seg = rng.gen_range(cfg.segments_per_utterance.0..=cfg.segments_per_utterance.1);
    let mut phones = Vec::with_capacity(n_seg);
    for s in 0..n_seg {
        loop {
            let candidate = rng.gen_range(0..cfg.phone_inventory_size);
            // Adjacent segments must differ so boundaries stay recoverable
            // from the one-hot change points.
            if s == 0 || candidate != phones[s - 1] {
                phones.push(candidate);
                break;
            }
        }
    }
    if !phones.iter().any(|&p| table.voiced[p]) {
        // Force one voiced segment; phone 0 is always voiced.
        let mid = n_seg / 2;
        phones[mid] = if mid > 0 && phones[mid - 1] == 0 { 1 } else { 0 };
        if !table.voiced[phones[mid]] {
            phones[mid] = 0;
        }
    }
    let durations: Vec<usize> = (0..n_seg)
        .map(|_| rng.gen_range(cfg.segment_frames.0..=cfg.segment_frames.1))
        .collect();
    let t_len: usize = durations.iter().sum();

    let mut boundaries = Vec::with_capacity(n_seg);
    let mut start = 0usize;
    for &d in &durations {
        boundaries.push(start);
        start += d;
    }

    let p = cfg.phone_inventory_size;
    let mut linguistic = Array2::zeros((t_len, cfg.linguistic_dim()));
    let mut statics = Array2::zeros((t_len, cfg.static_dim() + 1));
    let mut f0_raw = vec![0.0; t_len];
    let mut vuv_target = vec![0u8; t_len];

    for (seg, (&phone, &seg_start)) in phones.iter().zip(&boundaries).enumerate() {
        let dur = durations[seg];
        let prev = if seg > 0 { phones[seg - 1] } else { phone };
        let next = if seg + 1 < n_seg { phones[seg + 1] } else { phone };
        for i in 0..dur {
            let t = seg_start + i;
            linguistic[[t, prev]] = 1.0;
            linguistic[[t, p + phone]] = 1.0;
            linguistic[[t, 2 * p + next]] = 1.0;
            // Positional features: forward/backward fractional position in
            // the segment and the segment duration.
            linguistic[[t, 3 * p]] = i as f64 / dur as f64;
            linguistic[[t, 3 * p + 1]] = (dur - 1 - i) as f64 / dur as f64;
            linguistic[[t, 3 * p + 2]] = dur as f64;

            for d in 0..cfg.mcc_dim {
                statics[[t, d]] = table.mcc[phone][d];
            }
            for d in 0..cfg.bap_dim {
                statics[[t, cfg.mcc_dim + d]] = table.bap[phone][d];
            }
            statics[[t, cfg.static_dim()]] = table.log_f0[phone];
            if table.voiced[phone] {
                vuv_target[t] = 1;
            }
        }
    }

    let mut smoothed = moving_average(&statics, cfg.smoothing_half_width);
    if cfg.noise_std > 0.0 {
        for v in smoothed.iter_mut() {
            *v += cfg.noise_std * gaussian(rng);
        }
    }

    for t in 0..t_len {
        if vuv_target[t] == 1 {
            f0_raw[t] = smoothed[[t, cfg.static_dim()]].exp();
        }
    }
    let (log_f0, vuv) = interpolate_f0(&f0_raw)?;

    let mcc = smoothed.slice(ndarray::s![.., 0..cfg.mcc_dim]).to_owned();
    let bap = smoothed
        .slice(ndarray::s![.., cfg.mcc_dim..cfg.static_dim()])
        .to_owned();

    Ok(Utterance {
        id,
        linguistic,
        mcc,
        bap,
        log_f0,
        vuv,
        boundaries,
        phones,
    })
}

/// Generates the three disjoint splits deterministically from `config.seed`.
pub fn gen_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let table = PhoneTable::generate(config, &mut rng);
    let split = |name: &str, count: usize, rng: &mut ChaCha8Rng| -> Result<Vec<Utterance>> {
        (0..count)
            .map(|i| generate_utterance(config, &table, rng, format!("{name}_{i:04}")))
            .collect()
    };
    let train = split("train", config.train_utterances, &mut rng)?;
    let dev = split("dev", config.dev_utterances, &mut rng)?;
    let test = split("test", config.test_utterances, &mut rng)?;
    Ok(Corpus {
        config: config.clone(),
        train,
        dev,
        test,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct UtteranceEntry {
    frames: usize,
    boundaries: Vec<usize>,
    phones: Vec<usize>,
    vuv: Vec<u8>,
    checksums: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: CorpusConfig,
    seed: u64,
    splits: BTreeMap<String, Vec<String>>,
    utterances: BTreeMap<String, UtteranceEntry>,
}

const STREAMS: [&str; 4] = ["linguistic", "mcc", "bap", "lf0"];

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

fn utterance_streams(utt: &Utterance) -> [(&'static str, Array2<f64>); 4] {
    let lf0 = Array2::from_shape_fn((utt.frames(), 1), |(t, _)| utt.log_f0[t]);
    [
        ("linguistic", utt.linguistic.clone()),
        ("mcc", utt.mcc.clone()),
        ("bap", utt.bap.clone()),
        ("lf0", lf0),
    ]
}

/// Writes one feature file per utterance per stream plus a JSON manifest with
/// per-file checksums.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut manifest = Manifest {
        config: corpus.config.clone(),
        seed: corpus.config.seed,
        splits: BTreeMap::new(),
        utterances: BTreeMap::new(),
    };
    for (split, utts) in [
        ("train", &corpus.train),
        ("dev", &corpus.dev),
        ("test", &corpus.test),
    ] {
        manifest
            .splits
            .insert(split.into(), utts.iter().map(|u| u.id.clone()).collect());
        for utt in utts {
            let mut checksums = BTreeMap::new();
            for (stream, frames) in utterance_streams(utt) {
                let path = dir.join(format!("{}.{stream}.bin", utt.id));
                let bytes = crate::container::feature_to_bytes(&frames);
                checksums.insert(stream.to_string(), sha256_hex(&bytes));
                fs::write(&path, bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
            }
            manifest.utterances.insert(
                utt.id.clone(),
                UtteranceEntry {
                    frames: utt.frames(),
                    boundaries: utt.boundaries.clone(),
                    phones: utt.phones.clone(),
                    vuv: utt.vuv.clone(),
                    checksums,
                },
            );
        }
    }
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Corpus(format!("manifest serialization failed: {e}")))?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(manifest_path.display().to_string(), e))
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest_path = dir.join("manifest.json");
    let json = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let manifest: Manifest =
        serde_json::from_str(&json).map_err(|e| Error::Corpus(format!("corrupt manifest: {e}")))?;

    let expected: usize = manifest.splits.values().map(Vec::len).sum();
    if expected != manifest.utterances.len() {
        return Err(Error::Corpus(format!(
            "manifest lists {} split members but {} utterance entries",
            expected,
            manifest.utterances.len()
        )));
    }

    let load_split = |name: &str| -> Result<Vec<Utterance>> {
        let ids = manifest
            .splits
            .get(name)
            .ok_or_else(|| Error::Corpus(format!("manifest is missing split `{name}`")))?;
        ids.iter()
            .map(|id| {
                let entry = manifest
                    .utterances
                    .get(id)
                    .ok_or_else(|| Error::Corpus(format!("utterance {id} missing from manifest")))?;
                let mut arrays = Vec::with_capacity(4);
                for stream in STREAMS {
                    let path = dir.join(format!("{id}.{stream}.bin"));
                    let bytes =
                        fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
                    let expected_sum = entry.checksums.get(stream).ok_or_else(|| {
                        Error::Corpus(format!("utterance {id}: no checksum for stream {stream}"))
                    })?;
                    if &sha256_hex(&bytes) != expected_sum {
                        return Err(Error::Corpus(format!(
                            "utterance {id}: checksum mismatch for stream {stream}"
                        )));
                    }
                    let frames = crate::container::feature_from_bytes(
                        &bytes,
                        &format!("utterance {id} stream {stream}"),
                    )?;
                    if frames.nrows() != entry.frames {
                        return Err(Error::Corpus(format!(
                            "utterance {id}: stream {stream} has {} frames, manifest says {}",
                            frames.nrows(),
                            entry.frames
                        )));
                    }
                    arrays.push(frames);
                }
                let lf0 = arrays.pop().unwrap();
                let bap = arrays.pop().unwrap();
                let mcc = arrays.pop().unwrap();
                let linguistic = arrays.pop().unwrap();
                Ok(Utterance {
                    id: id.clone(),
                    linguistic,
                    mcc,
                    bap,
                    log_f0: lf0.column(0).to_vec(),
                    vuv: entry.vuv.clone(),
                    boundaries: entry.boundaries.clone(),
                    phones: entry.phones.clone(),
                })
            })
            .collect()
    };

    let train = load_split("train")?;
    let dev = load_split("dev")?;
    let test = load_split("test")?;
    Ok(Corpus {
        config: manifest.config,
        train,
        dev,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> CorpusConfig {
        CorpusConfig {
            train_utterances: 4,
            dev_utterances: 2,
            test_utterances: 2,
            segments_per_utterance: (3, 5),
            segment_frames: (4, 8),
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_config();
        assert_eq!(gen_corpus(&cfg).unwrap(), gen_corpus(&cfg).unwrap());
    }

    #[test]
    fn different_seeds_differ() {
        let cfg = small_config();
        let other = CorpusConfig {
            seed: cfg.seed + 1,
            ..cfg.clone()
        };
        assert_ne!(gen_corpus(&cfg).unwrap(), gen_corpus(&other).unwrap());
    }

    #[test]
    fn no_smoothing_no_noise_gives_exact_phone_targets() {
        let cfg = CorpusConfig {
            smoothing_half_width: 0,
            noise_std: 0.0,
            ..small_config()
        };
        let corpus = gen_corpus(&cfg).unwrap();
        let utt = &corpus.train[0];
        for (seg, &start) in utt.boundaries.iter().enumerate() {
            let end = utt
                .boundaries
                .get(seg + 1)
                .copied()
                .unwrap_or(utt.frames());
            for t in start..end {
                for d in 0..cfg.mcc_dim {
                    assert_eq!(utt.mcc[[t, d]], utt.mcc[[start, d]]);
                }
            }
        }
    }

    #[test]
    fn boundaries_recoverable_from_one_hot_changes() {
        let corpus = gen_corpus(&small_config()).unwrap();
        let p = corpus.config.phone_inventory_size;
        for utt in corpus.train.iter().chain(&corpus.dev).chain(&corpus.test) {
            let mut recovered = vec![0usize];
            for t in 1..utt.frames() {
                let cur: Vec<usize> = (0..p)
                    .filter(|&d| utt.linguistic[[t, p + d]] == 1.0)
                    .collect();
                let prev: Vec<usize> = (0..p)
                    .filter(|&d| utt.linguistic[[t - 1, p + d]] == 1.0)
                    .collect();
                if cur != prev {
                    recovered.push(t);
                }
            }
            assert_eq!(recovered, utt.boundaries, "{}", utt.id);
        }
    }

    #[test]
    fn one_hot_blocks_sum_to_one() {
        let corpus = gen_corpus(&small_config()).unwrap();
        let p = corpus.config.phone_inventory_size;
        let utt = &corpus.test[0];
        for t in 0..utt.frames() {
            for block in 0..3 {
                let sum: f64 = (0..p).map(|d| utt.linguistic[[t, block * p + d]]).sum();
                assert_eq!(sum, 1.0);
            }
        }
    }

    #[test]
    fn positional_features_reset_at_boundaries() {
        let corpus = gen_corpus(&small_config()).unwrap();
        let p = corpus.config.phone_inventory_size;
        let utt = &corpus.train[1];
        for &b in &utt.boundaries {
            assert_eq!(utt.linguistic[[b, 3 * p]], 0.0);
        }
    }

    #[test]
    fn smoothing_bounds_frame_jumps() {
        let cfg = CorpusConfig {
            noise_std: 0.0,
            ..small_config()
        };
        let corpus = gen_corpus(&cfg).unwrap();
        // Max inter-phone target gap in any mcc dimension.
        let utt = &corpus.train[0];
        let mut max_gap = 0.0f64;
        for t in 1..utt.frames() {
            for d in 0..cfg.mcc_dim {
                max_gap = max_gap.max((utt.mcc[[t, d]] - utt.mcc[[t - 1, d]]).abs());
            }
        }
        // The smoothed trajectory changes by at most the largest raw target
        // gap between adjacent phones (3.0 by construction of the table).
        assert!(max_gap <= 3.0 + 1e-12);
    }

    #[test]
    fn every_utterance_has_a_voiced_frame() {
        let corpus = gen_corpus(&small_config()).unwrap();
        for utt in corpus.train.iter().chain(&corpus.dev).chain(&corpus.test) {
            assert!(utt.vuv.iter().any(|&v| v == 1), "{}", utt.id);
            assert!(utt.log_f0.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let dir = std::env::temp_dir().join(format!("gatelab_corpus_{}", std::process::id()));
        let corpus = gen_corpus(&small_config()).unwrap();
        save_corpus(&corpus, &dir).unwrap();
        let back = load_corpus(&dir).unwrap();
        assert_eq!(corpus, back);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn load_detects_corruption() {
        let dir = std::env::temp_dir().join(format!("gatelab_corrupt_{}", std::process::id()));
        let corpus = gen_corpus(&small_config()).unwrap();
        save_corpus(&corpus, &dir).unwrap();

        // Truncated feature file names the utterance.
        let victim = dir.join("train_0000.mcc.bin");
        let bytes = fs::read(&victim).unwrap();
        fs::write(&victim, &bytes[..bytes.len() - 4]).unwrap();
        let err = load_corpus(&dir).unwrap_err().to_string();
        assert!(err.contains("train_0000"), "{err}");

        fs::write(&victim, bytes).unwrap();
        // Manifest count mismatch.
        let manifest_path = dir.join("manifest.json");
        let mut manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
        manifest["splits"]["train"]
            .as_array_mut()
            .unwrap()
            .push(serde_json::json!("ghost_utt"));
        fs::write(&manifest_path, manifest.to_string()).unwrap();
        assert!(load_corpus(&dir).is_err());
        fs::remove_dir_all(&dir).ok();
    }
}
