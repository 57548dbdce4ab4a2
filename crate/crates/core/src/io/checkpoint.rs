//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "GVCF"  u32 version  u64 epoch
//! u32 len, config text (UTF-8)
//! u8 has_rng [32-byte seed, u64 stream, u128 word position]
//! u32 n_tensors, then per tensor:
//!     u32 len, name (UTF-8), u64 rows, u64 cols, rows·cols f64 values
//! ```

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use thiserror::Error;

use crate::kernel::{AdamState, DenseMatrix};
use crate::ngcf::LayerWeights;
use crate::scalar::Scalar;
use crate::trainer::{ModelParams, Recommender};
use crate::vgae::VariationalEmbeddings;

pub const MAGIC: [u8; 4] = *b"GVCF";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: magic bytes {found:?}")]
    Magic { found: [u8; 4] },
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type CkResult<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn from_matrix<T: Scalar>(name: impl Into<String>, m: &DenseMatrix<T>) -> Self {
        Self {
            name: name.into(),
            rows: m.rows(),
            cols: m.cols(),
            data: m.data().iter().map(|x| x.as_f64()).collect(),
        }
    }

    pub fn to_matrix<T: Scalar>(&self) -> DenseMatrix<T> {
        DenseMatrix::from_fn(self.rows, self.cols, |i, j| T::of(self.data[i * self.cols + j]))
    }
}

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub epoch: u64,
    /// Run configuration echo, `key=value` lines.
    pub config: String,
    pub rng: Option<RngState>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(config: impl Into<String>, epoch: u64) -> Self {
        Self {
            version: FORMAT_VERSION,
            epoch,
            config: config.into(),
            rng: None,
            tensors: Vec::new(),
        }
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, m: &DenseMatrix<T>) {
        self.tensors.push(NamedTensor::from_matrix(name, m));
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn matrix<T: Scalar>(&self, name: &str) -> CkResult<DenseMatrix<T>> {
        self.tensor(name)
            .map(NamedTensor::to_matrix)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        put_str(&mut out, &self.config);
        match &self.rng {
            Some(r) => {
                out.push(1);
                out.extend_from_slice(&r.seed);
                out.extend_from_slice(&r.stream.to_le_bytes());
                out.extend_from_slice(&r.word_pos.to_le_bytes());
            }
            None => out.push(0),
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.extend_from_slice(&(t.rows as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols as u64).to_le_bytes());
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CkResult<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.array("magic")?;
        if magic != MAGIC {
            return Err(CheckpointError::Magic { found: magic });
        }
        let version = u32::from_le_bytes(r.array("version")?);
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let epoch = u64::from_le_bytes(r.array("epoch")?);
        let config = r.string("config")?;
        let rng = match r.array::<1>("rng flag")?[0] {
            0 => None,
            1 => Some(RngState {
                seed: r.array("rng seed")?,
                stream: u64::from_le_bytes(r.array("rng stream")?),
                word_pos: u128::from_le_bytes(r.array("rng position")?),
            }),
            flag => return Err(CheckpointError::Malformed(format!("rng flag {flag}"))),
        };
        let n = u32::from_le_bytes(r.array("tensor count")?) as usize;
        let mut tensors = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let name = r.string("tensor name")?;
            let rows = u64::from_le_bytes(r.array("tensor rows")?) as usize;
            let cols = u64::from_le_bytes(r.array("tensor cols")?) as usize;
            let len = rows
                .checked_mul(cols)
                .filter(|len| len.checked_mul(8).is_some())
                .ok_or_else(|| CheckpointError::Malformed(format!("tensor {name:?} shape {rows}x{cols}")))?;
            let raw = r.take(len * 8, "tensor data")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push(NamedTensor { name, rows, cols, data });
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            version,
            epoch,
            config,
            rng,
            tensors,
        })
    }

    /// Model parameters with their Adam moments.
    pub fn from_model<T: Scalar>(model: &Recommender<T>, config: impl Into<String>, epoch: u64) -> Self {
        let mut ck = Self::new(config, epoch);
        let params = &model.params;
        for (name, (tensor, adam)) in params.tensor_names().into_iter().zip(params.tensors().into_iter().zip(&params.adam)) {
            ck.push(&name, tensor);
            ck.push(format!("{name}.adam_m"), &adam.m);
            ck.push(format!("{name}.adam_v"), &adam.v);
            ck.push(format!("{name}.adam_t"), &DenseMatrix::filled(1, 1, T::of(adam.t as f64)));
        }
        ck.push("shape", &DenseMatrix::from_vec(1, 2, vec![T::of(model.n_users as f64), T::of(model.n_items as f64)]).expect("1x2"));
        ck.push("leaky_slope", &DenseMatrix::filled(1, 1, T::of(model.leaky_slope)));
        ck
    }

    pub fn to_model<T: Scalar>(&self) -> CkResult<Recommender<T>> {
        let shape = self.tensor("shape").ok_or_else(|| CheckpointError::MissingTensor("shape".into()))?;
        if shape.data.len() != 2 {
            return Err(CheckpointError::Malformed("shape tensor must hold two values".into()));
        }
        let (n_users, n_items) = (shape.data[0] as usize, shape.data[1] as usize);
        let leaky_slope = self.matrix::<f64>("leaky_slope")?.get(0, 0);
        let z0 = self.matrix::<T>("z0")?;
        if z0.rows() != n_users + n_items {
            return Err(CheckpointError::Malformed(format!(
                "z0 has {} rows for {n_users} users and {n_items} items",
                z0.rows()
            )));
        }
        let mut layers = Vec::new();
        for l in 1.. {
            let Some(w1) = self.tensor(&format!("layer{l}.w1")) else { break };
            layers.push(LayerWeights {
                w1: w1.to_matrix(),
                w2: self.matrix(&format!("layer{l}.w2"))?,
            });
        }
        let mut params = ModelParams::new(z0, layers);
        let names = params.tensor_names();
        for (name, adam) in names.iter().zip(params.adam.iter_mut()) {
            *adam = AdamState {
                m: self.matrix(&format!("{name}.adam_m"))?,
                v: self.matrix(&format!("{name}.adam_v"))?,
                t: self.matrix::<f64>(&format!("{name}.adam_t"))?.get(0, 0) as u64,
                ..AdamState::new(0, 0)
            };
        }
        for (name, (t, adam)) in names.iter().zip(params.tensors().into_iter().zip(&params.adam)) {
            if t.shape() != adam.m.shape() || t.shape() != adam.v.shape() {
                return Err(CheckpointError::Malformed(format!("Adam state of {name} has the wrong shape")));
            }
        }
        for pair in params.layer_weights.windows(2) {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(CheckpointError::Malformed("layer widths do not chain".into()));
            }
        }
        if params.layer_weights.first().is_some_and(|lw| lw.d_in() != params.z0.cols())
            || params.layer_weights.iter().any(|lw| lw.w1.shape() != lw.w2.shape())
        {
            return Err(CheckpointError::Malformed("layer weights do not match the embeddings".into()));
        }
        Ok(Recommender {
            params,
            n_users,
            n_items,
            leaky_slope,
        })
    }

    pub fn from_embeddings<T: Scalar>(ve: &VariationalEmbeddings<T>, config: impl Into<String>, epoch: u64) -> Self {
        let mut ck = Self::new(config, epoch);
        ck.push("mu", &ve.mu);
        if let Some(ls) = &ve.log_sigma {
            ck.push("log_sigma", ls);
        }
        ck
    }

    pub fn to_embeddings<T: Scalar>(&self) -> CkResult<VariationalEmbeddings<T>> {
        let mu: DenseMatrix<T> = self.matrix("mu")?;
        let log_sigma = match self.tensor("log_sigma") {
            Some(t) if (t.rows, t.cols) == mu.shape() => Some(t.to_matrix()),
            Some(_) => return Err(CheckpointError::Malformed("log_sigma shape differs from mu".into())),
            None => None,
        };
        Ok(VariationalEmbeddings {
            latent_dim: mu.cols(),
            mu,
            log_sigma,
        })
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> CkResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> CkResult<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("exact length"))
    }

    fn string(&mut self, what: &'static str) -> CkResult<String> {
        let len = u32::from_le_bytes(self.array(what)?) as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|e| CheckpointError::Malformed(format!("{what}: {e}")))
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> CkResult<()> {
    fs::write(path, ck.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> CkResult<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::xavier_init;
    use rand::Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        rng.set_stream(4);
        let _: u64 = rng.random();
        let mut ck = Checkpoint::new("init_mode=variational\nseed=11\n", 7);
        ck.push("z0", &xavier_init::<f64, _>(5, 3, &mut rng));
        ck.push("odd", &DenseMatrix::from_vec(1, 3, vec![-0.0, f64::MIN_POSITIVE, 1e300]).unwrap());
        ck.rng = Some(RngState::capture(&rng));
        ck
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let bits = |c: &Checkpoint| c.tensors.iter().flat_map(|t| t.data.iter().map(|x| x.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&ck));
    }

    #[test]
    fn rng_resumes_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        rng.set_stream(2);
        for _ in 0..13 {
            let _: u32 = rng.random();
        }
        let mut resumed = RngState::capture(&rng).restore();
        let a: Vec<u64> = (0..8).map(|_| rng.random()).collect();
        let b: Vec<u64> = (0..8).map(|_| resumed.random()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample().to_bytes();
        for cut in [0, 3, 9, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(CheckpointError::Truncated(_))), "cut {cut}");
        }
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&wrong), Err(CheckpointError::Magic { .. })));
        let mut wrong = bytes.clone();
        wrong[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&wrong), Err(CheckpointError::Version { found: 9, .. })));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(CheckpointError::Malformed(_))));
    }

    #[test]
    fn model_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ModelParams::init(xavier_init::<f64, _>(7, 4, &mut rng), &[3, 2], &mut rng);
        params.adam[1].t = 5;
        params.adam[2].m.set(0, 0, 0.25);
        let model = Recommender {
            params,
            n_users: 3,
            n_items: 4,
            leaky_slope: 0.2,
        };
        let ck = Checkpoint::from_model(&model, "", 3);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap().to_model::<f64>().unwrap();
        assert_eq!(back, model);
    }
}
