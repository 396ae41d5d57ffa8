//! The `IEMS` binary container.
//!
//! Layout: magic `IEMS`, `u32` version, then typed sections, each a four-byte
//! tag, a `u32` payload length and the payload. Integers are `u32`
//! little-endian (64-bit seeds as two words, low first), floats `f64`
//! little-endian, pattern bits one byte each. An artifact file holds exactly
//! one top-level section whose tag names its kind.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::report::{ExperimentRecord, ExperimentReport};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, DenseNetwork};
use crate::objective::{EpochRecord, Stage, TrainLog};
use crate::pattern::{CodingPattern, PatternOrigin};
use crate::physics::SceneGrid;
use crate::scenes::{ConfusionMatrix, Dataset};
use crate::surrogate::{FidelityStats, MeasurementSurrogate};

pub const MAGIC: &[u8; 4] = b"IEMS";
pub const VERSION: u32 = 1;

const NO_LABEL: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Network(DenseNetwork),
    Pattern(CodingPattern),
    Dataset(Dataset),
    Report(ExperimentReport),
    Surrogate(MeasurementSurrogate),
}

impl Artifact {
    pub fn tag(&self) -> &'static [u8; 4] {
        match self {
            Artifact::Network(_) => b"NETW",
            Artifact::Pattern(_) => b"PATT",
            Artifact::Dataset(_) => b"DATA",
            Artifact::Report(_) => b"REPT",
            Artifact::Surrogate(_) => b"MANN",
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Artifact::Network(_) => "network",
            Artifact::Pattern(_) => "pattern",
            Artifact::Dataset(_) => "dataset",
            Artifact::Report(_) => "report",
            Artifact::Surrogate(_) => "surrogate",
        }
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Format {
            section: "encode".into(),
            message: format!("count {v} exceeds u32"),
        })?;
        self.u32(v);
        Ok(())
    }

    fn u64(&mut self, v: u64) {
        self.u32(v as u32);
        self.u32((v >> 32) as u32);
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }

    fn bytes(&mut self, v: &[u8]) -> Result<()> {
        self.usize(v.len())?;
        self.buf.extend_from_slice(v);
        Ok(())
    }

    fn section(&mut self, tag: &[u8; 4], body: impl FnOnce(&mut Writer) -> Result<()>) -> Result<()> {
        let mut inner = Writer::default();
        body(&mut inner)?;
        self.buf.extend_from_slice(tag);
        self.usize(inner.buf.len())?;
        self.buf.extend_from_slice(&inner.buf);
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    section: String,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], section: impl Into<String>) -> Self {
        Self {
            buf,
            pos: 0,
            section: section.into(),
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            section: self.section.clone(),
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated: need {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    /// A count whose elements occupy at least `unit` bytes each; rejects
    /// counts the remaining input cannot hold before allocating.
    fn count(&mut self, unit: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(unit) > self.buf.len() - self.pos {
            return Err(self.err(format!(
                "count {n} exceeds the remaining {} bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(n)
    }

    fn u64(&mut self) -> Result<u64> {
        let lo = u64::from(self.u32()?);
        let hi = u64::from(self.u32()?);
        Ok(lo | (hi << 32))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n.saturating_mul(8) > self.buf.len() - self.pos {
            return Err(self.err(format!("truncated: {n} floats do not fit")));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.count(1)?;
        self.take(n)
    }

    fn string(&mut self) -> Result<String> {
        let b = self.bytes()?;
        String::from_utf8(b.to_vec()).map_err(|_| self.err("invalid UTF-8 text"))
    }

    /// Reads a nested section with the expected tag and hands its payload to `body`.
    fn section<T>(&mut self, tag: &[u8; 4], body: impl FnOnce(&mut Reader<'a>) -> Result<T>) -> Result<T> {
        let found = self.take(4)?;
        let name = String::from_utf8_lossy(tag).into_owned();
        if found != tag {
            let message = format!("expected tag {name}, found {:?}", String::from_utf8_lossy(found));
            return Err(Error::Format { section: name, message });
        }
        let len = self.usize()?;
        let payload = self.take(len).map_err(|_| Error::Format {
            section: name.clone(),
            message: format!("declared length {len} exceeds the file"),
        })?;
        let mut inner = Reader::new(payload, name);
        let out = body(&mut inner)?;
        inner.finish()?;
        Ok(out)
    }

    fn peek_tag(&self) -> Result<[u8; 4]> {
        if self.buf.len() - self.pos < 4 {
            return Err(self.err("truncated: missing section tag"));
        }
        Ok(self.buf[self.pos..self.pos + 4].try_into().expect("4 bytes"))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn write_network(w: &mut Writer, net: &DenseNetwork) -> Result<()> {
    w.usize(net.layers().len())?;
    for l in net.layers() {
        w.usize(l.weights.nrows())?;
        w.usize(l.weights.ncols())?;
        w.u32(l.activation.code());
        w.f64(l.learning_rate);
        // Row-major weights, then the bias.
        for r in 0..l.weights.nrows() {
            for c in 0..l.weights.ncols() {
                w.f64(l.weights[(r, c)]);
            }
        }
        w.f64s(l.bias.as_slice());
    }
    Ok(())
}

fn read_network(r: &mut Reader<'_>) -> Result<DenseNetwork> {
    let n = r.count(20)?;
    let mut layers = Vec::with_capacity(n);
    for k in 0..n {
        let rows = r.usize()?;
        let cols = r.usize()?;
        let code = r.u32()?;
        let activation =
            Activation::from_code(code).ok_or_else(|| r.err(format!("layer {k}: unknown activation code {code}")))?;
        let learning_rate = r.f64()?;
        let w = r.f64s(rows.saturating_mul(cols))?;
        let bias = r.f64s(rows)?;
        layers.push(DenseLayer {
            weights: DMatrix::from_row_slice(rows, cols, &w),
            bias: DVector::from_vec(bias),
            activation,
            learning_rate,
        });
    }
    DenseNetwork::new(layers).map_err(|e| r.err(e.to_string()))
}

fn write_pattern(w: &mut Writer, p: &CodingPattern) -> Result<()> {
    w.usize(p.rows())?;
    w.usize(p.cols())?;
    w.buf.extend_from_slice(p.bits());
    w.u32(p.origin().code());
    Ok(())
}

fn read_pattern(r: &mut Reader<'_>) -> Result<CodingPattern> {
    let rows = r.usize()?;
    let cols = r.usize()?;
    let bits = r.take(rows.saturating_mul(cols))?.to_vec();
    let code = r.u32()?;
    let origin = PatternOrigin::from_code(code).ok_or_else(|| r.err(format!("unknown origin code {code}")))?;
    CodingPattern::new(rows, cols, bits, origin).map_err(|e| r.err(e.to_string()))
}

fn write_dataset(w: &mut Writer, d: &Dataset) -> Result<()> {
    w.usize(d.width())?;
    w.usize(d.height())?;
    w.usize(d.len())?;
    for s in d.scenes() {
        match s.label() {
            Some(l) => w.usize(l)?,
            None => w.u32(NO_LABEL),
        }
        w.f64s(s.values());
    }
    Ok(())
}

fn read_dataset(r: &mut Reader<'_>) -> Result<Dataset> {
    let width = r.usize()?;
    let height = r.usize()?;
    let n = r.count(4)?;
    let mut scenes = Vec::with_capacity(n);
    for _ in 0..n {
        let label = match r.u32()? {
            NO_LABEL => None,
            l => Some(l as usize),
        };
        let values = r.f64s(width.saturating_mul(height))?;
        scenes.push(SceneGrid::new(width, height, values, label).map_err(|e| r.err(e.to_string()))?);
    }
    Dataset::new(width, height, scenes).map_err(|e| r.err(e.to_string()))
}

fn write_surrogate(w: &mut Writer, s: &MeasurementSurrogate) -> Result<()> {
    w.f64(s.weight_scale());
    w.u32(u32::from(s.is_trained()));
    match &s.fidelity {
        Some(f) => {
            w.u32(1);
            w.f64(f.median);
            w.f64(f.p90);
            w.usize(f.count)?;
        }
        None => w.u32(0),
    }
    w.section(b"NETW", |w| write_network(w, s.hypernet()))
}

fn read_surrogate(r: &mut Reader<'_>) -> Result<MeasurementSurrogate> {
    let weight_scale = r.f64()?;
    let trained = match r.u32()? {
        0 => false,
        1 => true,
        v => return Err(r.err(format!("invalid trained flag {v}"))),
    };
    let fidelity = match r.u32()? {
        0 => None,
        1 => Some(FidelityStats {
            median: r.f64()?,
            p90: r.f64()?,
            count: r.usize()?,
        }),
        v => return Err(r.err(format!("invalid fidelity flag {v}"))),
    };
    let net = r.section(b"NETW", read_network)?;
    let mut s = MeasurementSurrogate::from_parts(net, weight_scale, trained).map_err(|e| r.err(e.to_string()))?;
    s.fidelity = fidelity;
    Ok(s)
}

fn write_log(w: &mut Writer, log: &TrainLog) -> Result<()> {
    w.usize(log.records.len())?;
    for rec in &log.records {
        w.u32(match rec.stage {
            Stage::I => 1,
            Stage::II => 2,
        });
        w.usize(rec.outer_iter)?;
        w.usize(rec.epoch)?;
        w.f64s(&[
            rec.train_loss,
            rec.val_loss,
            rec.test_loss,
            rec.recon_term,
            rec.kl_term,
            rec.metric,
        ]);
    }
    Ok(())
}

fn read_log(r: &mut Reader<'_>) -> Result<TrainLog> {
    let n = r.count(60)?;
    let mut log = TrainLog::default();
    for _ in 0..n {
        let stage = match r.u32()? {
            1 => Stage::I,
            2 => Stage::II,
            v => return Err(r.err(format!("invalid stage code {v}"))),
        };
        let outer_iter = r.usize()?;
        let epoch = r.usize()?;
        let v = r.f64s(6)?;
        log.push(EpochRecord {
            stage,
            outer_iter,
            epoch,
            train_loss: v[0],
            val_loss: v[1],
            test_loss: v[2],
            recon_term: v[3],
            kl_term: v[4],
            metric: v[5],
        })
        .map_err(|e| r.err(e.to_string()))?;
    }
    Ok(log)
}

fn write_record(w: &mut Writer, rec: &ExperimentRecord) -> Result<()> {
    w.u32(rec.strategy.code());
    w.usize(rec.m)?;
    w.u64(rec.seed);
    w.f64(rec.metric);
    w.f64(rec.test_loss);
    w.f64(rec.seconds);
    w.bytes(rec.config_hash.as_bytes())?;
    w.bytes(rec.curve_file.as_bytes())?;
    match &rec.confusion {
        Some(c) => {
            w.usize(c.classes())?;
            for t in 0..c.classes() {
                for p in 0..c.classes() {
                    w.usize(c.get(t, p) as usize)?;
                }
            }
        }
        None => w.u32(0),
    }
    w.section(b"PATT", |w| write_pattern(w, &rec.pattern))?;
    w.section(b"LOGS", |w| write_log(w, &rec.log))
}

fn read_record(r: &mut Reader<'_>) -> Result<ExperimentRecord> {
    let code = r.u32()?;
    let strategy = PatternOrigin::from_code(code).ok_or_else(|| r.err(format!("unknown strategy code {code}")))?;
    let m = r.usize()?;
    let seed = r.u64()?;
    let metric = r.f64()?;
    let test_loss = r.f64()?;
    let seconds = r.f64()?;
    let config_hash = r.string()?;
    let curve_file = r.string()?;
    let k = r.usize()?;
    let confusion = if k == 0 {
        None
    } else {
        if k.saturating_mul(k).saturating_mul(4) > r.buf.len() - r.pos {
            return Err(r.err(format!("confusion size {k} exceeds the section")));
        }
        let counts = (0..k * k).map(|_| r.u32().map(u64::from)).collect::<Result<Vec<_>>>()?;
        Some(ConfusionMatrix::from_counts(k, counts).map_err(|e| r.err(e.to_string()))?)
    };
    let pattern = r.section(b"PATT", read_pattern)?;
    let log = r.section(b"LOGS", read_log)?;
    Ok(ExperimentRecord {
        strategy,
        m,
        seed,
        metric,
        test_loss,
        confusion,
        seconds,
        config_hash,
        curve_file,
        pattern,
        log,
    })
}

fn write_report(w: &mut Writer, rep: &ExperimentReport) -> Result<()> {
    w.bytes(rep.config_text.as_bytes())?;
    w.bytes(rep.config_hash.as_bytes())?;
    match &rep.surrogate_fidelity {
        Some(f) => {
            w.u32(1);
            w.f64(f.median);
            w.f64(f.p90);
            w.usize(f.count)?;
        }
        None => w.u32(0),
    }
    w.usize(rep.records.len())?;
    for rec in &rep.records {
        w.section(b"RREC", |w| write_record(w, rec))?;
    }
    Ok(())
}

fn read_report(r: &mut Reader<'_>) -> Result<ExperimentReport> {
    let config_text = r.string()?;
    let config_hash = r.string()?;
    let surrogate_fidelity = match r.u32()? {
        0 => None,
        1 => Some(FidelityStats {
            median: r.f64()?,
            p90: r.f64()?,
            count: r.usize()?,
        }),
        v => return Err(r.err(format!("invalid fidelity flag {v}"))),
    };
    let n = r.count(8)?;
    let records = (0..n)
        .map(|_| r.section(b"RREC", read_record))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        config_text,
        config_hash,
        surrogate_fidelity,
        records,
    })
}

/// Serializes an artifact into a complete container.
pub fn encode_artifact(artifact: &Artifact) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.section(artifact.tag(), |w| match artifact {
        Artifact::Network(n) => write_network(w, n),
        Artifact::Pattern(p) => write_pattern(w, p),
        Artifact::Dataset(d) => write_dataset(w, d),
        Artifact::Report(r) => write_report(w, r),
        Artifact::Surrogate(s) => write_surrogate(w, s),
    })?;
    Ok(w.buf)
}

/// Parses a container. Errors name the section that failed.
pub fn decode_artifact(bytes: &[u8]) -> Result<Artifact> {
    let mut r = Reader::new(bytes, "header");
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(r.err(format!("bad magic {:?}", String::from_utf8_lossy(magic))));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}, expected {VERSION}")));
    }
    let tag = r.peek_tag()?;
    let artifact = match &tag {
        b"NETW" => Artifact::Network(r.section(b"NETW", read_network)?),
        b"PATT" => Artifact::Pattern(r.section(b"PATT", read_pattern)?),
        b"DATA" => Artifact::Dataset(r.section(b"DATA", read_dataset)?),
        b"REPT" => Artifact::Report(r.section(b"REPT", read_report)?),
        b"MANN" => Artifact::Surrogate(r.section(b"MANN", read_surrogate)?),
        other => return Err(r.err(format!("unknown artifact tag {:?}", String::from_utf8_lossy(other)))),
    };
    r.section = "trailer".into();
    r.finish()?;
    Ok(artifact)
}

pub fn save_artifact(path: &Path, artifact: &Artifact) -> Result<()> {
    fs::write(path, encode_artifact(artifact)?)?;
    Ok(())
}

pub fn load_artifact(path: &Path) -> Result<Artifact> {
    decode_artifact(&fs::read(path)?)
}
