//! Binary checkpoint format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! b"GSDMCKPT" | u32 version | u8 variant | u8 eigvec_features
//! u64 feature_dim | u64 hidden | u64 time_dim | u64 step | u64 n_params
//! n_params × f64 (θ tensors then φ tensors, row-major, declaration order)
//! u8 has_optimizer [ u64 opt_step | n_params × f64 m | n_params × f64 v ]
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{Arch, OptimizerState, ScoreNetParams, Variant};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GSDMCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ScoreNetParams,
    /// Optimizer steps completed when the checkpoint was taken.
    pub step: u64,
    pub optimizer: Option<OptimizerState>,
}

fn put_tensors(buf: &mut Vec<u8>, p: &ScoreNetParams) {
    for t in p.tensors() {
        for v in t.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let p = &ckpt.params;
    let mut buf = Vec::with_capacity(64 + 24 * p.num_params());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(match p.arch.variant {
        Variant::Spectral => 0,
        Variant::FullRank => 1,
    });
    buf.push(u8::from(p.arch.eigvec_features));
    for v in [p.arch.feature_dim, p.arch.hidden, p.arch.time_dim] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    buf.extend_from_slice(&ckpt.step.to_le_bytes());
    buf.extend_from_slice(&(p.num_params() as u64).to_le_bytes());
    put_tensors(&mut buf, p);
    match &ckpt.optimizer {
        None => buf.push(0),
        Some(opt) => {
            buf.push(1);
            buf.extend_from_slice(&opt.step.to_le_bytes());
            put_tensors(&mut buf, &opt.m);
            put_tensors(&mut buf, &opt.v);
        }
    }
    buf
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn fill(&mut self, p: &mut ScoreNetParams) -> Result<()> {
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
            }
        }
        Ok(())
    }
}

pub fn from_bytes(data: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { data, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version} (expected {VERSION})")));
    }
    let variant = match r.u8()? {
        0 => Variant::Spectral,
        1 => Variant::FullRank,
        other => return Err(Error::Checkpoint(format!("unknown variant tag {other}"))),
    };
    let eigvec_features = r.u8()? != 0;
    let mut arch = Arch::new(variant, r.u64()? as usize, r.u64()? as usize, r.u64()? as usize);
    arch.eigvec_features = eigvec_features;
    arch.validate().map_err(|e| Error::Checkpoint(format!("invalid header: {e}")))?;
    let step = r.u64()?;
    let n_params = r.u64()?;
    let mut params = ScoreNetParams::init(arch, &mut crate::rng::seeded(0))?;
    if params.num_params() as u64 != n_params {
        return Err(Error::Checkpoint(format!(
            "parameter count {n_params} does not match architecture ({})",
            params.num_params()
        )));
    }
    r.fill(&mut params)?;
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let opt_step = r.u64()?;
            let mut m = params.zeros_like();
            let mut v = params.zeros_like();
            r.fill(&mut m)?;
            r.fill(&mut v)?;
            Some(OptimizerState { step: opt_step, m, v })
        }
        other => return Err(Error::Checkpoint(format!("bad optimizer flag {other}"))),
    };
    if r.pos != data.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", data.len() - r.pos)));
    }
    if !params.all_finite() {
        return Err(Error::Checkpoint("non-finite parameters".into()));
    }
    Ok(Checkpoint { params, step, optimizer })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(ckpt))?;
    f.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    from_bytes(&data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn sample(with_opt: bool) -> Checkpoint {
        let params = ScoreNetParams::random(Arch::new(Variant::Spectral, 3, 5, 4), &mut rng::seeded(1)).unwrap();
        let optimizer = with_opt.then(|| {
            let mut o = OptimizerState::new(&params);
            o.step = 7;
            o.m = ScoreNetParams::random(params.arch, &mut rng::seeded(2)).unwrap();
            o.v = ScoreNetParams::random(params.arch, &mut rng::seeded(3)).unwrap();
            o
        });
        Checkpoint { params, step: 42, optimizer }
    }

    #[test]
    fn round_trip_bit_exact() {
        for with_opt in [false, true] {
            let c = sample(with_opt);
            assert_eq!(from_bytes(&to_bytes(&c)).unwrap(), c);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = sample(true);
        save(&path, &c).unwrap();
        assert_eq!(load(&path).unwrap(), c);
    }

    #[test]
    fn corrupt_header_rejected() {
        let mut b = to_bytes(&sample(false));
        b[0] = b'X';
        assert!(matches!(from_bytes(&b), Err(Error::Checkpoint(_))));
        let mut b = to_bytes(&sample(false));
        b[8] = 9;
        assert!(from_bytes(&b).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn truncated_and_mismatched_rejected() {
        let b = to_bytes(&sample(true));
        assert!(from_bytes(&b[..b.len() - 3]).is_err());
        let mut b = to_bytes(&sample(false));
        // hidden width field
        b[22..30].copy_from_slice(&6u64.to_le_bytes());
        assert!(from_bytes(&b).is_err());
    }
}
