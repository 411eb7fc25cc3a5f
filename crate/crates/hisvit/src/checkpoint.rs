//! Checkpoint bundles.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"VSCK" version:u8
//! config_len:u32 config:utf8            INI text, see `config`
//! n:u32 { name_len:u16 name VSTC }*n    parameters, binary64
//! has_adam:u8 [step:u64 n:u32 { name_len:u16 name VSTC(m) VSTC(v) }*n]
//! n:u32 { step:u64 loss:f64 has_psnr:u8 psnr:f64 }*n
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use hisvit_core::layers::Parameters;
use hisvit_core::net::NetParams;
use hisvit_core::optim::{Adam, Moments};
use hisvit_core::train::{StepLog, TrainConfig, Trainer};
use hisvit_core::Tensor;

use crate::config::{format_train_config, parse_train_config};
use crate::error::{HarnessError, Result};
use crate::vstc::{read_tensor, write_tensor, Dtype};

pub const MAGIC: [u8; 4] = *b"VSCK";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: NetParams,
    pub adam: Option<Adam>,
    pub history: Vec<StepLog>,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Checkpoint {
            config: t.config.clone(),
            params: t.params.clone(),
            adam: Some(t.adam.clone()),
            history: t.history.clone(),
        }
    }

    /// A trainer continuing where this checkpoint stopped.
    pub fn into_trainer(self) -> Result<Trainer> {
        let adam = match self.adam {
            Some(a) => a,
            None => Adam::new(self.config.adam)?,
        };
        Ok(Trainer::resume(self.config, self.params, adam, self.history)?)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&[VERSION])?;
        let text = format_train_config(&self.config);
        write_len(&mut w, text.len())?;
        w.write_all(text.as_bytes())?;

        let named = self.params.named_params();
        write_len(&mut w, named.len())?;
        for (name, p) in &named {
            write_name(&mut w, name)?;
            write_tensor(&mut w, &p.value, Dtype::F64)?;
        }

        match &self.adam {
            None => w.write_all(&[0])?,
            Some(adam) => {
                w.write_all(&[1])?;
                w.write_all(&adam.step.to_le_bytes())?;
                let moments = adam.named_moments(&self.params);
                write_len(&mut w, moments.len())?;
                for (name, m) in &moments {
                    write_name(&mut w, name)?;
                    write_tensor(&mut w, &m.m, Dtype::F64)?;
                    write_tensor(&mut w, &m.v, Dtype::F64)?;
                }
            }
        }

        write_len(&mut w, self.history.len())?;
        for log in &self.history {
            w.write_all(&(log.step as u64).to_le_bytes())?;
            w.write_all(&log.loss.to_le_bytes())?;
            w.write_all(&[u8::from(log.psnr.is_some())])?;
            w.write_all(&log.psnr.unwrap_or(0.0).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 5];
        r.read_exact(&mut head)?;
        if head[..4] != MAGIC {
            return Err(HarnessError::Format("missing VSCK magic".into()));
        }
        if head[4] != VERSION {
            return Err(HarnessError::Format(format!("unsupported checkpoint version {}", head[4])));
        }
        let len = read_u32(&mut r)? as usize;
        let text = String::from_utf8(read_bytes(&mut r, len)?)
            .map_err(|_| HarnessError::Format("config text is not UTF-8".into()))?;
        let config = parse_train_config(&text)?;

        let n = read_u32(&mut r)? as usize;
        let mut stored = BTreeMap::new();
        for _ in 0..n {
            let name = read_name(&mut r)?;
            let (t, _) = read_tensor(&mut r)?;
            if stored.insert(name.clone(), t).is_some() {
                return Err(HarnessError::Format(format!("parameter `{name}` stored twice")));
            }
        }
        let params = restore_params(&config, stored)?;

        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let adam = match flag[0] {
            0 => None,
            1 => {
                let step = read_u64(&mut r)?;
                let n = read_u32(&mut r)? as usize;
                let mut named = Vec::with_capacity(n);
                for _ in 0..n {
                    let name = read_name(&mut r)?;
                    let (m, _) = read_tensor(&mut r)?;
                    let (v, _) = read_tensor(&mut r)?;
                    named.push((name, Moments { m, v }));
                }
                Some(Adam::from_named_moments(config.adam, step, &params, named)?)
            }
            other => return Err(HarnessError::Format(format!("bad optimizer flag {other}"))),
        };

        let n = read_u32(&mut r)? as usize;
        let mut history = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let step = read_u64(&mut r)? as usize;
            let loss = f64::from_bits(read_u64(&mut r)?);
            r.read_exact(&mut flag)?;
            let psnr = f64::from_bits(read_u64(&mut r)?);
            history.push(StepLog {
                step,
                loss,
                psnr: (flag[0] == 1).then_some(psnr),
            });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(HarnessError::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint {
            config,
            params,
            adam,
            history,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        buf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::read(BufReader::new(File::open(path)?))
    }
}

/// Builds the parameter tree from the config and fills it by name.
fn restore_params(config: &TrainConfig, mut stored: BTreeMap<String, Tensor>) -> Result<NetParams> {
    let mut params = NetParams::init(&config.model, config.seed)?;
    let mut err = None;
    params.visit_mut("", &mut |name, p| {
        if err.is_some() {
            return;
        }
        match stored.remove(&name) {
            None => err = Some(HarnessError::Format(format!("checkpoint lacks parameter `{name}`"))),
            Some(t) if t.dims() != p.value.dims() => {
                err = Some(HarnessError::Format(format!(
                    "parameter `{name}` has shape {:?}, config expects {:?}",
                    t.dims(),
                    p.value.dims()
                )))
            }
            Some(t) => p.value = t,
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if let Some(name) = stored.keys().next() {
        return Err(HarnessError::Format(format!("checkpoint has unknown parameter `{name}`")));
    }
    Ok(params)
}

fn write_len<W: Write>(w: &mut W, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| HarnessError::Format("section too long".into()))?;
    w.write_all(&n.to_le_bytes())?;
    Ok(())
}

fn write_name<W: Write>(w: &mut W, name: &str) -> Result<()> {
    let n = u16::try_from(name.len()).map_err(|_| HarnessError::Format(format!("name `{name}` too long")))?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    Ok(())
}

fn read_bytes<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(HarnessError::Format("truncated checkpoint".into()));
    }
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_name<R: Read>(r: &mut R) -> Result<String> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    let bytes = read_bytes(r, u16::from_le_bytes(b) as usize)?;
    String::from_utf8(bytes).map_err(|_| HarnessError::Format("parameter name is not UTF-8".into()))
}
