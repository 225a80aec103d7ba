//! Binary checkpoints (little-endian):
//!
//! ```text
//! magic "MDQC" | version u32
//! | in_features u32 | width u32 | n_sage u32 | n_gcn u32 | n_actions u32 | topk_ratio f64
//! | gamma f64 | batch_size u32 | huber_delta f64 | lr f64 | beta1 f64 | beta2 f64 | eps f64
//! | updated u32 | seed u64
//! | for each network: n_tensors u32, then per tensor rows u32, cols u32, data f64[rows·cols]
//! | for each optimizer: step u64, then m tensors, then v tensors (same encoding, no count)
//! ```

use std::path::Path;

use ndarray::Array2;

use super::{AgentError, Learner, LearnerConfig};
use crate::nn::{Adam, AdamConfig, NetworkConfig, QNetwork};

const MAGIC: &[u8; 4] = b"MDQC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub learner: Learner,
    pub seed: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor(&mut self, a: &Array2<f64>) {
        self.u32(a.nrows());
        self.u32(a.ncols());
        for &v in a.iter() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], AgentError> {
        let s = self
            .buf
            .get(self.pos..self.pos + N)
            .ok_or_else(|| AgentError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        self.pos += N;
        Ok(s.try_into().expect("length N"))
    }
    fn u32(&mut self) -> Result<usize, AgentError> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }
    fn u64(&mut self) -> Result<u64, AgentError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64, AgentError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn tensor(&mut self, shape: (usize, usize)) -> Result<Array2<f64>, AgentError> {
        let (r, c) = (self.u32()?, self.u32()?);
        if (r, c) != shape {
            return Err(AgentError::Checkpoint(format!(
                "tensor {r}x{c}, expected {shape:?}"
            )));
        }
        let data = (0..r * c)
            .map(|_| self.f64())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Array2::from_shape_vec((r, c), data).expect("sized"))
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    let n = ck.learner.nets[0].config;
    for v in [n.in_features, n.width, n.n_sage, n.n_gcn, n.n_actions] {
        w.u32(v);
    }
    w.f64(n.topk_ratio);
    let l = ck.learner.config;
    w.f64(l.gamma);
    w.u32(l.batch_size);
    w.f64(l.huber_delta);
    for v in [l.adam.lr, l.adam.beta1, l.adam.beta2, l.adam.eps] {
        w.f64(v);
    }
    w.u32(ck.learner.updated);
    w.u64(ck.seed);
    for net in &ck.learner.nets {
        w.u32(net.params.len());
        net.params.iter().for_each(|p| w.tensor(p));
    }
    for opt in &ck.learner.optimizers {
        w.u64(opt.step);
        opt.m.iter().chain(&opt.v).for_each(|p| w.tensor(p));
    }
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, AgentError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if &r.bytes::<4>()? != MAGIC {
        return Err(AgentError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(AgentError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let (in_features, width, n_sage, n_gcn, n_actions) =
        (r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let topk_ratio = r.f64()?;
    let net_cfg = NetworkConfig {
        in_features,
        width,
        n_sage,
        n_gcn,
        topk_ratio,
        n_actions,
    };
    let gamma = r.f64()?;
    let batch_size = r.u32()?;
    let huber_delta = r.f64()?;
    let adam = AdamConfig {
        lr: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        eps: r.f64()?,
    };
    let config = LearnerConfig {
        gamma,
        batch_size,
        huber_delta,
        adam,
    };
    let updated = r.u32()?;
    if updated > 1 {
        return Err(AgentError::Checkpoint(format!("role flag {updated}")));
    }
    let seed = r.u64()?;
    let shapes = net_cfg.param_shapes();
    let mut nets = Vec::new();
    for _ in 0..2 {
        let count = r.u32()?;
        if count != shapes.len() {
            return Err(AgentError::Checkpoint(format!(
                "{count} tensors, expected {}",
                shapes.len()
            )));
        }
        let params = shapes
            .iter()
            .map(|&s| r.tensor(s))
            .collect::<Result<Vec<_>, _>>()?;
        nets.push(QNetwork::from_params(net_cfg, params)?);
    }
    let mut optimizers = Vec::new();
    for _ in 0..2 {
        let step = r.u64()?;
        let m = shapes
            .iter()
            .map(|&s| r.tensor(s))
            .collect::<Result<Vec<_>, _>>()?;
        let v = shapes
            .iter()
            .map(|&s| r.tensor(s))
            .collect::<Result<Vec<_>, _>>()?;
        optimizers.push(Adam {
            config: adam,
            step,
            m,
            v,
        });
    }
    if r.pos != bytes.len() {
        return Err(AgentError::Checkpoint("trailing bytes".into()));
    }
    let nets: [QNetwork; 2] = nets.try_into().expect("two networks");
    let optimizers: [Adam; 2] = optimizers.try_into().expect("two optimizers");
    Ok(Checkpoint {
        learner: Learner {
            config,
            nets,
            optimizers,
            updated,
        },
        seed,
    })
}

pub fn write_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<(), AgentError> {
    std::fs::write(path, encode_checkpoint(ck))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, AgentError> {
    decode_checkpoint(&std::fs::read(path)?)
}
