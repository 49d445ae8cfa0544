//! Versioned binary checkpoint.
//!
//! Layout (all integers little-endian):
//! `"AUGC"`, u32 version, u32-prefixed JSON config, u64 step,
//! u32 parameter count and parameter records, u32 optimizer count and
//! optimizer blocks, then the RNG state as three u64.
//!
//! A parameter record is a u32-prefixed name, u8 rank, rank × u64 extents and
//! the f64 payload. An optimizer block is a u32-prefixed name, u8 rule
//! (0 Adam, 1 RMSProp), u64 step count, the rule's f64 hyperparameters, u32
//! slot count, then per slot two records named `<param>/m` and `<param>/v`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::binio::{put_str, put_u32, put_u64, Cursor};
use crate::error::{Error, Result};
use crate::optim::{Moments, OptimConfig, OptimState};
use crate::params::ParamStore;
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AUGC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Config echo, stored verbatim so re-saving is byte-identical.
    pub config_json: String,
    pub step: u64,
    pub params: ParamStore,
    pub optimizers: Vec<(String, OptimState)>,
    pub rng: RngState,
}

fn put_record(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    put_str(out, name)?;
    let rank = u8::try_from(shape.len()).map_err(|_| Error::Invalid(format!("`{name}` has rank > 255")))?;
    out.push(rank);
    for &e in shape {
        put_u64(out, e as u64);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

fn read_record(c: &mut Cursor<'_>) -> Result<(String, Vec<usize>, Vec<f64>)> {
    let name = c.string("record name")?;
    let rank = c.u8("rank")? as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for _ in 0..rank {
        let at = c.pos;
        let e = c.u64("extent")?;
        let e = usize::try_from(e).ok().filter(|&e| e > 0).ok_or_else(|| Error::Parse {
            offset: at as u64,
            detail: format!("bad extent {e} for `{name}`"),
        })?;
        count = count.checked_mul(e).ok_or_else(|| Error::Parse {
            offset: at as u64,
            detail: format!("extent overflow for `{name}`"),
        })?;
        shape.push(e);
    }
    if count.saturating_mul(8) > c.remaining() {
        return Err(Error::Parse {
            offset: c.pos as u64,
            detail: format!("truncated payload for `{name}`"),
        });
    }
    let data = (0..count).map(|_| c.f64("payload")).collect::<Result<Vec<_>>>()?;
    Ok((name, shape, data))
}

fn hyper(cfg: &OptimConfig) -> (u8, Vec<f64>) {
    match *cfg {
        OptimConfig::Adam { lr, beta1, beta2, eps } => (0, vec![lr, beta1, beta2, eps]),
        OptimConfig::Rmsprop { lr, rho, eps } => (1, vec![lr, rho, eps]),
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_str(&mut out, &self.config_json)?;
        put_u64(&mut out, self.step);
        put_u32(&mut out, self.params.len() as u32);
        for (name, t) in self.params.iter() {
            put_record(&mut out, name, t.shape(), t.data())?;
        }
        put_u32(&mut out, self.optimizers.len() as u32);
        for (name, st) in &self.optimizers {
            put_str(&mut out, name)?;
            let (kind, hp) = hyper(&st.config);
            out.push(kind);
            put_u64(&mut out, st.t);
            for v in hp {
                out.extend_from_slice(&v.to_le_bytes());
            }
            put_u32(&mut out, st.slots.len() as u32);
            for (p, m) in &st.slots {
                put_record(&mut out, &format!("{p}/m"), &[m.first.len()], &m.first)?;
                put_record(&mut out, &format!("{p}/v"), &[m.second.len()], &m.second)?;
            }
        }
        put_u64(&mut out, self.rng.seed);
        put_u64(&mut out, self.rng.stream);
        put_u64(&mut out, self.rng.counter);
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Checkpoint> {
        let mut c = Cursor::new(buf);
        if c.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                detail: "bad magic, expected AUGC".into(),
            });
        }
        let version = c.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Parse {
                offset: 4,
                detail: format!("unsupported checkpoint version {version}"),
            });
        }
        let config_json = c.string("config")?;
        let step = c.u64("step")?;
        let n = c.u32("parameter count")?;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let at = c.pos;
            let (name, shape, data) = read_record(&mut c)?;
            if params.get(&name).is_some() {
                return Err(Error::Parse {
                    offset: at as u64,
                    detail: format!("duplicate parameter `{name}`"),
                });
            }
            params.insert(name, Tensor::new(shape, data)?);
        }
        let n_opt = c.u32("optimizer count")?;
        let mut optimizers = Vec::with_capacity(n_opt as usize);
        for _ in 0..n_opt {
            let name = c.string("optimizer name")?;
            let at = c.pos;
            let kind = c.u8("optimizer rule")?;
            let t = c.u64("optimizer step")?;
            let config = match kind {
                0 => OptimConfig::Adam {
                    lr: c.f64("lr")?,
                    beta1: c.f64("beta1")?,
                    beta2: c.f64("beta2")?,
                    eps: c.f64("eps")?,
                },
                1 => OptimConfig::Rmsprop {
                    lr: c.f64("lr")?,
                    rho: c.f64("rho")?,
                    eps: c.f64("eps")?,
                },
                k => {
                    return Err(Error::Parse {
                        offset: at as u64,
                        detail: format!("unknown optimizer rule {k}"),
                    })
                }
            };
            let n_slots = c.u32("slot count")?;
            let mut slots = BTreeMap::new();
            for _ in 0..n_slots {
                let at = c.pos;
                let (m_name, _, first) = read_record(&mut c)?;
                let (v_name, _, second) = read_record(&mut c)?;
                let param = m_name.strip_suffix("/m").filter(|p| v_name.strip_suffix("/v") == Some(*p));
                let Some(param) = param else {
                    return Err(Error::Parse {
                        offset: at as u64,
                        detail: format!("mismatched moment records `{m_name}` / `{v_name}`"),
                    });
                };
                slots.insert(param.to_string(), Moments { first, second });
            }
            optimizers.push((name, OptimState { config, t, slots }));
        }
        let rng = RngState {
            seed: c.u64("rng seed")?,
            stream: c.u64("rng stream")?,
            counter: c.u64("rng counter")?,
        };
        c.finish()?;
        Ok(Checkpoint {
            config_json,
            step,
            params,
            optimizers,
            rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::decode(&std::fs::read(path)?)
    }

    pub fn optimizer(&self, name: &str) -> Option<&OptimState> {
        self.optimizers.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = ParamStore::new();
        params.insert("f_ab/h0.w", Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, 1e-300, -0.0, 7.5]).unwrap());
        params.insert("f_ab/out.b", Tensor::new(vec![1], vec![f64::MIN_POSITIVE]).unwrap());
        let mut adam = OptimState::new(OptimConfig::adam(1e-3), &params);
        adam.t = 17;
        adam.slots.get_mut("f_ab/out.b").unwrap().first[0] = 0.25;
        let rms = OptimState::new(OptimConfig::rmsprop(0.01), &params);
        Checkpoint {
            config_json: r#"{"seed":3}"#.into(),
            step: 42,
            params,
            optimizers: vec![("gen".into(), adam), ("disc".into(), rms)],
            rng: RngState {
                seed: 3,
                stream: 1,
                counter: 99,
            },
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ck = sample();
        let bytes = ck.encode().unwrap();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode().unwrap(), bytes);
        assert_eq!(&bytes[..4], b"AUGC");
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = sample().encode().unwrap();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            match Checkpoint::decode(&bytes[..cut]) {
                Err(Error::Parse { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Checkpoint::decode(&extra), Err(Error::Parse { .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.augc");
        sample().save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), sample());
    }
}
