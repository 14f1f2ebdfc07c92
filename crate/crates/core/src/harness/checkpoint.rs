//! Binary checkpoints for either model, with optional Adam state.
//!
//! Layout (little-endian):
//!
//! ```text
//! header   "KFGC" | version u32 | kind u8 | sha256(config) [32] | config_len u32 | config JSON
//!          | tensor_count u32 | has_optimizer u8
//! tensor   name_len u16 | name | rank u8 | dims u32 x rank | values f64 x prod(dims)
//! optimizer (if flagged) step u64 | lr, beta1, beta2, eps, weight_decay f64 | moment_count u32
//!          | first moments | second moments (tensor records named "m.<i>" / "v.<i>")
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::classifier::{ClassifierConfig, ClassifierModel};
use crate::error::{Error, Result};
use crate::kernels::AdamState;
use crate::localizer::{LocalizerConfig, LocalizerModel};
use crate::params::Parameters;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"KFGC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Localizer = 1,
    Classifier = 2,
}

impl ModelKind {
    fn from_tag(tag: u8, offset: u64) -> Result<Self> {
        match tag {
            1 => Ok(ModelKind::Localizer),
            2 => Ok(ModelKind::Classifier),
            t => Err(Error::Format {
                offset,
                msg: format!("unknown model kind tag {t}"),
            }),
        }
    }
}

/// Decoded checkpoint contents before they are bound to a model type.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config_json: String,
    pub tensors: Vec<(String, Tensor)>,
    pub optimizer: Option<AdamState>,
}

/// Bytes taken by the header for a config of `config_len` bytes.
pub fn header_len(config_len: usize) -> usize {
    4 + 4 + 1 + 32 + 4 + config_len + 4 + 1
}

/// Bytes taken by one tensor record.
pub fn tensor_record_len(name: &str, shape: &[usize]) -> usize {
    2 + name.len() + 1 + 4 * shape.len() + 8 * shape.iter().product::<usize>()
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    if name.len() > u16::MAX as usize || t.rank() > u8::MAX as usize {
        return Err(Error::Config(format!("tensor {name} cannot be stored")));
    }
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!(
                    "truncated checkpoint while reading {what} ({n} bytes wanted, {} left)",
                    self.buf.len() - self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let start = self.pos as u64;
        let n = self.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(self.take(n, "tensor name")?)
            .map_err(|_| Error::Format {
                offset: start,
                msg: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let rank = self.u8("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32("tensor shape")? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format {
                offset: start,
                msg: format!("tensor {name}: shape {shape:?} overflows"),
            })?;
        let bytes = self.take(len.saturating_mul(8), &format!("values of tensor {name}"))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Format {
            offset: start,
            msg: format!("tensor {name}: {e}"),
        })?;
        Ok((name, t))
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&Sha256::digest(self.config_json.as_bytes()));
        out.extend_from_slice(&(self.config_json.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_json.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        out.push(self.optimizer.is_some() as u8);
        for (name, t) in &self.tensors {
            put_tensor(&mut out, name, t)?;
        }
        if let Some(s) = &self.optimizer {
            out.extend_from_slice(&s.step_count.to_le_bytes());
            for v in [s.lr, s.beta1, s.beta2, s.eps, s.weight_decay] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&(s.first_moment.len() as u32).to_le_bytes());
            for (i, m) in s.first_moment.iter().enumerate() {
                put_tensor(&mut out, &format!("m.{i}"), m)?;
            }
            for (i, v) in s.second_moment.iter().enumerate() {
                put_tensor(&mut out, &format!("v.{i}"), v)?;
            }
        }
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: format!("bad checkpoint magic {:?}", String::from_utf8_lossy(magic)),
            });
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let kind_at = r.pos as u64;
        let kind = ModelKind::from_tag(r.u8("model kind")?, kind_at)?;
        let digest: [u8; 32] = r.take(32, "config digest")?.try_into().unwrap();
        let n = r.u32("config length")? as usize;
        let config_at = r.pos as u64;
        let config = r.take(n, "config")?;
        if Sha256::digest(config).as_slice() != digest {
            return Err(Error::Format {
                offset: config_at,
                msg: "config does not match its digest".into(),
            });
        }
        let config_json = String::from_utf8(config.to_vec()).map_err(|_| Error::Format {
            offset: config_at,
            msg: "config is not UTF-8".into(),
        })?;
        let count = r.u32("tensor count")? as usize;
        let has_opt = r.u8("optimizer flag")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            tensors.push(r.tensor()?);
        }
        let optimizer = match has_opt {
            0 => None,
            1 => {
                let step_count = r.u64("optimizer step")?;
                let lr = r.f64("optimizer lr")?;
                let beta1 = r.f64("optimizer beta1")?;
                let beta2 = r.f64("optimizer beta2")?;
                let eps = r.f64("optimizer eps")?;
                let weight_decay = r.f64("optimizer weight decay")?;
                let m = r.u32("moment count")? as usize;
                let mut first_moment = Vec::new();
                for _ in 0..m {
                    first_moment.push(r.tensor()?.1);
                }
                let mut second_moment = Vec::new();
                for _ in 0..m {
                    second_moment.push(r.tensor()?.1);
                }
                Some(AdamState {
                    first_moment,
                    second_moment,
                    step_count,
                    lr,
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                })
            }
            f => {
                return Err(Error::Format {
                    offset: r.pos as u64 - 1,
                    msg: format!("bad optimizer flag {f}"),
                })
            }
        };
        if r.pos != buf.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                msg: format!("{} trailing bytes", buf.len() - r.pos),
            });
        }
        Ok(Checkpoint {
            kind,
            config_json,
            tensors,
            optimizer,
        })
    }

    /// Parameters followed by `extra` tensors (e.g. batch-norm running statistics).
    pub fn from_model<M: Parameters>(
        kind: ModelKind,
        config_json: String,
        model: &M,
        extra: Vec<(String, &Tensor)>,
        optimizer: Option<&AdamState>,
    ) -> Self {
        let tensors = model
            .named_params()
            .into_iter()
            .chain(extra)
            .map(|(n, t)| (n, t.clone()))
            .collect();
        Checkpoint {
            kind,
            config_json,
            tensors,
            optimizer: optimizer.cloned(),
        }
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Config(format!(
                "checkpoint holds a {:?} model, expected {kind:?}",
                self.kind
            )));
        }
        Ok(())
    }

    fn expect_count(&self, n: usize) -> Result<()> {
        if n != self.tensors.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, model expects {n}",
                self.tensors.len()
            )));
        }
        Ok(())
    }
}

/// Copies stored tensors into `slots`, checking names and shapes in order.
fn fill(stored: &[(String, Tensor)], names: Vec<String>, slots: Vec<&mut Tensor>) -> Result<()> {
    for ((want, slot), (name, t)) in names.iter().zip(slots).zip(stored) {
        if want != name || !slot.same_shape(t) {
            return Err(Error::Config(format!(
                "checkpoint tensor {name} {:?} does not fit model tensor {want} {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t.clone();
    }
    Ok(())
}

/// Either trained model, as restored from disk.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq)]
pub enum SavedModel {
    Localizer(LocalizerModel),
    Classifier(ClassifierModel),
}

impl From<&LocalizerModel> for Checkpoint {
    fn from(m: &LocalizerModel) -> Self {
        let cfg = serde_json::to_string(&m.config).expect("config serializes");
        Checkpoint::from_model(ModelKind::Localizer, cfg, m, Vec::new(), None)
    }
}

impl From<&ClassifierModel> for Checkpoint {
    fn from(m: &ClassifierModel) -> Self {
        let cfg = serde_json::to_string(&m.config).expect("config serializes");
        Checkpoint::from_model(ModelKind::Classifier, cfg, m, m.named_buffers(), None)
    }
}

impl Checkpoint {
    pub fn into_localizer(self) -> Result<(LocalizerModel, Option<AdamState>)> {
        self.expect_kind(ModelKind::Localizer)?;
        let config: LocalizerConfig = serde_json::from_str(&self.config_json)?;
        let mut model = LocalizerModel::zeros(config);
        let names = model.param_names();
        self.expect_count(names.len())?;
        fill(&self.tensors, names, model.params_mut())?;
        Ok((model, self.optimizer))
    }

    pub fn into_classifier(self) -> Result<(ClassifierModel, Option<AdamState>)> {
        self.expect_kind(ModelKind::Classifier)?;
        let config: ClassifierConfig = serde_json::from_str(&self.config_json)?;
        let mut model = ClassifierModel::new(config, 0, 0)?;
        let names = model.param_names();
        let buffer_names: Vec<String> = model.named_buffers().into_iter().map(|(n, _)| n).collect();
        self.expect_count(names.len() + buffer_names.len())?;
        let (params, buffers) = self.tensors.split_at(names.len());
        fill(params, names, model.params_mut())?;
        fill(buffers, buffer_names, model.buffers_mut())?;
        Ok((model, self.optimizer))
    }

    pub fn into_model(self) -> Result<(SavedModel, Option<AdamState>)> {
        match self.kind {
            ModelKind::Localizer => self
                .into_localizer()
                .map(|(m, o)| (SavedModel::Localizer(m), o)),
            ModelKind::Classifier => self
                .into_classifier()
                .map(|(m, o)| (SavedModel::Classifier(m), o)),
        }
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, checkpoint.encode()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&buf)
}

pub fn save_localizer(
    path: &Path,
    model: &LocalizerModel,
    optimizer: Option<&AdamState>,
) -> Result<()> {
    let mut c = Checkpoint::from(model);
    c.optimizer = optimizer.cloned();
    save_checkpoint(path, &c)
}

pub fn save_classifier(
    path: &Path,
    model: &ClassifierModel,
    optimizer: Option<&AdamState>,
) -> Result<()> {
    let mut c = Checkpoint::from(model);
    c.optimizer = optimizer.cloned();
    save_checkpoint(path, &c)
}
