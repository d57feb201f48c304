//! Binary containers: cell parameter blobs, model checkpoints and utterance
//! feature files. All numbers little-endian; floats stored as raw IEEE-754
//! bits so round-trips are bit-exact.
//!
//! Cell container (`GRNC`, version 1): magic, version u32, kind u8,
//! input_dim u32, hidden_dim u32, then per gate in canonical order the W, R,
//! b tensors and the peephole when the architecture defines one.
//!
//! Model checkpoint (`GLMD`, version 1): magic, version, network shape, the
//! feed-forward / cell / output tensors, normalization statistics, stream
//! layout and global variances.
//!
//! Feature file (`GFEA`, version 1): magic, version, frame count u32, dim
//! u32, row-major f64 payload.

use ndarray::{Array1, Array2};
use std::fs;
use std::path::Path;

use crate::cells::{CellKind, CellParams, CellSpec, GateParams};
use crate::error::{Error, Result};
use crate::features::{MeanVarStats, MinMaxStats, StreamLayout};
use crate::network::{DenseLayer, Model, NetworkConfig};

pub const CELL_MAGIC: &[u8; 4] = b"GRNC";
pub const MODEL_MAGIC: &[u8; 4] = b"GLMD";
pub const FEATURE_MAGIC: &[u8; 4] = b"GFEA";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4]) -> Writer {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u32(FORMAT_VERSION);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn array1(&mut self, a: &Array1<f64>) {
        self.u32(a.len() as u32);
        for &v in a {
            self.f64(v);
        }
    }

    pub fn array2(&mut self, a: &Array2<f64>) {
        self.u32(a.nrows() as u32);
        self.u32(a.ncols() as u32);
        for &v in a {
            self.f64(v);
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    context: &'a str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], magic: &[u8; 4], context: &'a str) -> Result<Reader<'a>> {
        let mut r = Reader { buf, pos: 0, context };
        let found = r.bytes(4)?;
        if found != magic {
            return Err(Error::Format(format!(
                "{context}: bad magic {found:?}, expected {magic:?}"
            )));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "{context}: unsupported format version {version}"
            )));
        }
        Ok(r)
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "{}: truncated at byte {} (needed {n} more)",
                self.context, self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(u64::from_le_bytes(
            self.bytes(8)?.try_into().unwrap(),
        )))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.bytes(n)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Format(format!("{}: invalid utf-8 string", self.context)))
    }

    pub fn array1(&mut self) -> Result<Array1<f64>> {
        let n = self.u32()? as usize;
        let mut out = Array1::zeros(n);
        for v in out.iter_mut() {
            *v = self.f64()?;
        }
        Ok(out)
    }

    pub fn array2(&mut self) -> Result<Array2<f64>> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let mut out = Array2::zeros((rows, cols));
        for v in out.iter_mut() {
            *v = self.f64()?;
        }
        Ok(out)
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes",
                self.context,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn kind_tag(kind: CellKind) -> u8 {
    match kind {
        CellKind::VanillaLstm => 0,
        CellKind::Nig => 1,
        CellKind::Nog => 2,
        CellKind::Nfg => 3,
        CellKind::Nph => 4,
        CellKind::Gru => 5,
        CellKind::SLstm => 6,
    }
}

fn kind_from_tag(tag: u8) -> Result<CellKind> {
    CellKind::ALL
        .iter()
        .copied()
        .find(|&k| kind_tag(k) == tag)
        .ok_or_else(|| Error::Format(format!("unknown cell kind tag {tag}")))
}

fn write_gate(w: &mut Writer, gate: &GateParams) {
    w.array2(&gate.w);
    w.array2(&gate.r);
    w.u8(u8::from(gate.p.is_some()));
    if let Some(p) = &gate.p {
        w.array1(p);
    }
    w.array1(&gate.b);
}

fn read_gate(r: &mut Reader) -> Result<GateParams> {
    let w = r.array2()?;
    let rr = r.array2()?;
    let p = if r.u8()? == 1 { Some(r.array1()?) } else { None };
    let b = r.array1()?;
    Ok(GateParams { w, r: rr, p, b })
}

pub fn write_cell_params(w: &mut Writer, params: &CellParams) {
    let spec = params.spec();
    w.u8(kind_tag(spec.kind));
    w.u32(spec.input_dim as u32);
    w.u32(spec.hidden_dim as u32);
    match params {
        CellParams::Lstm {
            input,
            forget,
            candidate,
            output,
            ..
        } => {
            for gate in [input, forget, output] {
                w.u8(u8::from(gate.is_some()));
                if let Some(g) = gate {
                    write_gate(w, g);
                }
            }
            write_gate(w, candidate);
        }
        CellParams::Gru {
            reset,
            update,
            candidate,
            ..
        } => {
            write_gate(w, reset);
            write_gate(w, update);
            write_gate(w, candidate);
        }
    }
}

pub fn read_cell_params(r: &mut Reader) -> Result<CellParams> {
    let kind = kind_from_tag(r.u8()?)?;
    let input_dim = r.u32()? as usize;
    let hidden_dim = r.u32()? as usize;
    let spec = CellSpec::new(kind, input_dim, hidden_dim)?;
    let params = match kind {
        CellKind::Gru => CellParams::Gru {
            spec,
            reset: read_gate(r)?,
            update: read_gate(r)?,
            candidate: read_gate(r)?,
        },
        _ => {
            let mut opt_gates = [None, None, None];
            for slot in &mut opt_gates {
                if r.u8()? == 1 {
                    *slot = Some(read_gate(r)?);
                }
            }
            let [input, forget, output] = opt_gates;
            CellParams::Lstm {
                spec,
                input,
                forget,
                candidate: read_gate(r)?,
                output,
            }
        }
    };
    Ok(params)
}

pub fn cell_params_to_bytes(params: &CellParams) -> Vec<u8> {
    let mut w = Writer::new(CELL_MAGIC);
    write_cell_params(&mut w, params);
    w.finish()
}

pub fn cell_params_from_bytes(bytes: &[u8]) -> Result<CellParams> {
    let mut r = Reader::new(bytes, CELL_MAGIC, "cell container")?;
    let params = read_cell_params(&mut r)?;
    r.expect_end()?;
    Ok(params)
}

fn write_dense(w: &mut Writer, layer: &DenseLayer) {
    w.array2(&layer.w);
    w.array1(&layer.b);
}

fn read_dense(r: &mut Reader) -> Result<DenseLayer> {
    Ok(DenseLayer {
        w: r.array2()?,
        b: r.array1()?,
    })
}

fn write_minmax(w: &mut Writer, s: &MinMaxStats) {
    w.array1(&Array1::from_vec(s.min.clone()));
    w.array1(&Array1::from_vec(s.max.clone()));
    w.f64(s.lo);
    w.f64(s.hi);
}

fn read_minmax(r: &mut Reader) -> Result<MinMaxStats> {
    Ok(MinMaxStats {
        min: r.array1()?.to_vec(),
        max: r.array1()?.to_vec(),
        lo: r.f64()?,
        hi: r.f64()?,
    })
}

fn write_meanvar(w: &mut Writer, s: &MeanVarStats) {
    w.array1(&Array1::from_vec(s.mean.clone()));
    w.array1(&Array1::from_vec(s.std.clone()));
    w.u32(s.constant.len() as u32);
    for &c in &s.constant {
        w.u8(u8::from(c));
    }
}

fn read_meanvar(r: &mut Reader) -> Result<MeanVarStats> {
    let mean = r.array1()?.to_vec();
    let std = r.array1()?.to_vec();
    let n = r.u32()? as usize;
    let mut constant = Vec::with_capacity(n);
    for _ in 0..n {
        constant.push(r.u8()? == 1);
    }
    Ok(MeanVarStats {
        mean,
        std,
        constant,
    })
}

pub fn model_to_bytes(model: &Model) -> Vec<u8> {
    let mut w = Writer::new(MODEL_MAGIC);
    w.u32(model.config.linguistic_dim as u32);
    w.u32(model.config.output_dim as u32);
    w.u32(model.config.ff_sizes.len() as u32);
    for &s in &model.config.ff_sizes {
        w.u32(s as u32);
    }
    w.u32(model.layout.mcc_dim as u32);
    w.u32(model.layout.bap_dim as u32);
    for layer in &model.ff {
        write_dense(&mut w, layer);
    }
    write_cell_params(&mut w, &model.cell);
    write_dense(&mut w, &model.output);
    write_minmax(&mut w, &model.input_stats);
    write_meanvar(&mut w, &model.target_stats);
    w.array1(&model.global_variances);
    w.finish()
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader::new(bytes, MODEL_MAGIC, "model checkpoint")?;
    let linguistic_dim = r.u32()? as usize;
    let output_dim = r.u32()? as usize;
    let n_ff = r.u32()? as usize;
    let mut ff_sizes = Vec::with_capacity(n_ff);
    for _ in 0..n_ff {
        ff_sizes.push(r.u32()? as usize);
    }
    let layout = StreamLayout::new(r.u32()? as usize, r.u32()? as usize);
    let mut ff = Vec::with_capacity(n_ff);
    for _ in 0..n_ff {
        ff.push(read_dense(&mut r)?);
    }
    let cell = read_cell_params(&mut r)?;
    let output = read_dense(&mut r)?;
    let input_stats = read_minmax(&mut r)?;
    let target_stats = read_meanvar(&mut r)?;
    let global_variances = r.array1()?;
    r.expect_end()?;
    let config = NetworkConfig {
        ff_sizes,
        cell_spec: *cell.spec(),
        linguistic_dim,
        output_dim,
    };
    config.validate()?;
    Ok(Model {
        config,
        layout,
        ff,
        cell,
        output,
        input_stats,
        target_stats,
        global_variances,
    })
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(model)).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    model_from_bytes(&bytes)
}

pub fn feature_to_bytes(frames: &Array2<f64>) -> Vec<u8> {
    let mut w = Writer::new(FEATURE_MAGIC);
    w.array2(frames);
    w.finish()
}

pub fn feature_from_bytes(bytes: &[u8], context: &str) -> Result<Array2<f64>> {
    let mut r = Reader::new(bytes, FEATURE_MAGIC, context)?;
    let out = r.array2()?;
    r.expect_end()?;
    Ok(out)
}

pub fn save_feature_file(frames: &Array2<f64>, path: &Path) -> Result<()> {
    fs::write(path, feature_to_bytes(frames)).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_feature_file(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    feature_from_bytes(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::init_params;

    #[test]
    fn cell_container_roundtrip_is_bit_exact() {
        for kind in CellKind::ALL {
            let spec = CellSpec::new(kind, 5, 4).unwrap();
            let params = init_params(&spec, 13, 0.2).unwrap();
            let bytes = cell_params_to_bytes(&params);
            let back = cell_params_from_bytes(&bytes).unwrap();
            assert_eq!(params, back, "{kind}");
            assert_eq!(bytes, cell_params_to_bytes(&back));
        }
    }

    #[test]
    fn cell_container_rejects_corruption() {
        let spec = CellSpec::new(CellKind::Gru, 3, 2).unwrap();
        let params = init_params(&spec, 0, 0.2).unwrap();
        let mut bytes = cell_params_to_bytes(&params);
        bytes.truncate(bytes.len() - 3);
        assert!(cell_params_from_bytes(&bytes).is_err());
        let mut bad_magic = cell_params_to_bytes(&params);
        bad_magic[0] = b'X';
        assert!(cell_params_from_bytes(&bad_magic).is_err());
    }

    #[test]
    fn feature_file_roundtrip() {
        let frames =
            Array2::from_shape_fn((4, 3), |(t, d)| (t as f64 + 0.1) * (d as f64 - 1.5));
        let bytes = feature_to_bytes(&frames);
        let back = feature_from_bytes(&bytes, "test").unwrap();
        assert_eq!(frames, back);
    }
}
