//! Versioned binary checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic      8 bytes  "SYMCKPT\0"
//! version    u32
//! cfg hash   32 bytes SHA-256 of the compact config JSON
//! config     u64 length + UTF-8 JSON
//! epoch      u64      completed epochs
//! seed       u64      training seed; with the epoch it fixes every RNG stream
//! optimisers 2 x (beta1, beta2, eps: f64; step: u64)   parameters, then hypers
//! tensors    u32 count, then per tensor: u32 name length, name,
//!            u32 rank, u64 dims, f64 values
//! history    u64 count, then per epoch: u64 epoch, f64 train NLL,
//!            3 x (u8 present, f64) for test NLL, test accuracy, marglik,
//!            u32 count + f64 log-precisions
//! checksum   32 bytes SHA-256 of everything above
//! ```
//!
//! Tensor names: `param/<name>`, `adam.m/<name>`, `adam.v/<name>` for each
//! network parameter, then `hyper/rho`, `hyper.m/rho`, `hyper.v/rho`.

use std::path::Path;

use sha2::{Digest, Sha256};
use symmetria_core::optim::Adam;
use symmetria_core::tensor::Tensor;
use symmetria_core::training::{EpochMetrics, TrainState};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::io::atomic_write;

pub const MAGIC: &[u8; 8] = b"SYMCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    /// Network parameter names, in parameter order.
    pub names: Vec<String>,
    pub state: TrainState,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn opt(&mut self, v: Option<f64>) {
        self.u8(v.is_some() as u8);
        self.f64(v.unwrap_or(0.0));
    }
    fn adam(&mut self, a: &Adam) {
        self.f64(a.beta1);
        self.f64(a.beta2);
        self.f64(a.eps);
        self.u64(a.step);
    }
    fn tensor(&mut self, name: &str, t: &Tensor) {
        self.u32(name.len() as u32);
        self.bytes(name.as_bytes());
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            CliError::Format(format!(
                "checkpoint truncated reading {what}: need {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self, what: &str) -> Result<usize> {
        let n = self.u64(what)?;
        usize::try_from(n).ok().filter(|&n| n <= self.buf.len()).ok_or_else(|| {
            CliError::Format(format!("checkpoint {what} length {n} exceeds file size {}", self.buf.len()))
        })
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn opt(&mut self, what: &str) -> Result<Option<f64>> {
        let present = self.u8(what)?;
        let v = self.f64(what)?;
        match present {
            0 => Ok(None),
            1 => Ok(Some(v)),
            p => Err(CliError::Format(format!("checkpoint {what}: bad presence flag {p}"))),
        }
    }
    fn adam(&mut self) -> Result<Adam> {
        let (beta1, beta2, eps) = (self.f64("beta1")?, self.f64("beta2")?, self.f64("eps")?);
        let step = self.u64("optimiser step")?;
        Ok(Adam { beta1, beta2, eps, step, m: Vec::new(), v: Vec::new() })
    }
    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let n = self.u32("tensor name length")? as usize;
        let name = String::from_utf8(self.take(n, "tensor name")?.to_vec())
            .map_err(|_| CliError::Format("checkpoint tensor name is not UTF-8".into()))?;
        let rank = self.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(self.len("tensor dimension")?);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&c| c.saturating_mul(8) <= self.buf.len())
            .ok_or_else(|| CliError::Format(format!("checkpoint tensor {name}: shape {shape:?} exceeds file size")))?;
        let raw = self.take(8 * count, &name)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let t = Tensor::new(shape, data).map_err(|e| CliError::Format(format!("checkpoint tensor {name}: {e}")))?;
        Ok((name, t))
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let s = &self.state;
        let mut w = Writer(Vec::new());
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.bytes(&self.config.hash());
        let json = serde_json::to_vec(&self.config).expect("config serialises");
        w.u64(json.len() as u64);
        w.bytes(&json);
        w.u64(s.epoch as u64);
        w.u64(self.config.train.seed);
        w.adam(&s.opt);
        w.adam(&s.hyper_opt);
        let n = self.names.len();
        w.u32((3 * n + 3) as u32);
        for (prefix, ts) in [("param", &s.params), ("adam.m", &s.opt.m), ("adam.v", &s.opt.v)] {
            for (name, t) in self.names.iter().zip(ts.iter()) {
                w.tensor(&format!("{prefix}/{name}"), t);
            }
        }
        w.tensor("hyper/rho", &Tensor::from_vec(s.rhos.clone()));
        w.tensor("hyper.m/rho", &s.hyper_opt.m[0]);
        w.tensor("hyper.v/rho", &s.hyper_opt.v[0]);
        w.u64(s.history.len() as u64);
        for m in &s.history {
            w.u64(m.epoch as u64);
            w.f64(m.train_nll);
            w.opt(m.test_nll);
            w.opt(m.test_acc);
            w.opt(m.marglik);
            w.u32(m.rhos.len() as u32);
            for &r in &m.rhos {
                w.f64(r);
            }
        }
        let sum = Sha256::digest(&w.0);
        w.bytes(&sum);
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 {
            return Err(CliError::Format(format!("checkpoint too short: {} bytes", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(CliError::Format("not a checkpoint: bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(CliError::Format(format!("checkpoint version {version}, expected {VERSION}")));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(CliError::Format("checkpoint checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let hash: [u8; 32] = r.take(32, "config hash")?.try_into().expect("32 bytes");
        let n = r.len("config")?;
        let text = std::str::from_utf8(r.take(n, "config")?)
            .map_err(|_| CliError::Format("checkpoint config is not UTF-8".into()))?;
        let config = ExperimentConfig::from_json(text)?;
        if config.hash() != hash {
            return Err(CliError::Format("checkpoint config does not match its hash".into()));
        }
        let epoch = r.u64("epoch")? as usize;
        let seed = r.u64("seed")?;
        if seed != config.train.seed {
            return Err(CliError::Format(format!("checkpoint seed {seed} differs from config seed")));
        }
        let mut opt = r.adam()?;
        let mut hyper_opt = r.adam()?;
        let count = r.u32("tensor count")? as usize;
        if count < 3 || !count.is_multiple_of(3) {
            return Err(CliError::Format(format!("checkpoint holds {count} tensors, expected 3 per parameter plus 3")));
        }
        let np = count / 3 - 1;
        let mut names = Vec::with_capacity(np);
        let mut params = Vec::with_capacity(np);
        for (prefix, k) in [("param/", 0), ("adam.m/", 1), ("adam.v/", 2)] {
            for i in 0..np {
                let (name, t) = r.tensor()?;
                let base = name
                    .strip_prefix(prefix)
                    .ok_or_else(|| CliError::Format(format!("checkpoint tensor {name}: expected prefix {prefix}")))?;
                if k == 0 {
                    names.push(base.to_string());
                } else if base != names[i] {
                    return Err(CliError::Format(format!("checkpoint tensor {name}: expected {prefix}{}", names[i])));
                }
                match k {
                    0 => params.push(t),
                    1 => opt.m.push(t),
                    _ => opt.v.push(t),
                }
            }
        }
        let mut hyper = Vec::new();
        for want in ["hyper/rho", "hyper.m/rho", "hyper.v/rho"] {
            let (name, t) = r.tensor()?;
            if name != want {
                return Err(CliError::Format(format!("checkpoint tensor {name}: expected {want}")));
            }
            hyper.push(t);
        }
        let rhos = hyper[0].data().to_vec();
        hyper_opt.v.push(hyper.pop().expect("three hyper tensors"));
        hyper_opt.m.push(hyper.pop().expect("three hyper tensors"));
        let len = r.len("history")?;
        let mut history = Vec::with_capacity(len.min(1 << 16));
        for _ in 0..len {
            let epoch = r.u64("history epoch")? as usize;
            let train_nll = r.f64("train NLL")?;
            let test_nll = r.opt("test NLL")?;
            let test_acc = r.opt("test accuracy")?;
            let marglik = r.opt("marglik")?;
            let k = r.u32("history rho count")? as usize;
            let rh = (0..k).map(|_| r.f64("history rho")).collect::<Result<Vec<_>>>()?;
            history.push(EpochMetrics { epoch, train_nll, test_nll, test_acc, marglik, rhos: rh });
        }
        if r.pos != body.len() {
            return Err(CliError::Format(format!("checkpoint has {} trailing bytes", body.len() - r.pos)));
        }
        let state = TrainState { params, rhos, opt, hyper_opt, epoch, history };
        Ok(Checkpoint { config, names, state })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            CliError::Format(m) => CliError::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Check that the stored tensors fit `net`.
    pub fn check_network(&self, net: &symmetria_core::layers::Network) -> Result<()> {
        if self.names != net.param_names() {
            return Err(CliError::Format("checkpoint parameters do not match the network".into()));
        }
        net.check_params(&self.state.params)?;
        Ok(())
    }
}
