//! Binary checkpoints.
//!
//! Layout (little endian): the 8-byte magic `ASMPGCK1`, a `u32` length and
//! that many bytes of descriptor JSON, a `u64` parameter count, then the
//! parameters as `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AsmPolicy, Policy, PolicyDescriptor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ASMPGCK1";

pub fn write_checkpoint<W: Write>(mut out: W, policy: &dyn AsmPolicy) -> Result<()> {
    let desc = serde_json::to_vec(&policy.descriptor())?;
    let desc_len = u32::try_from(desc.len()).map_err(|_| Error::Checkpoint("descriptor too large".into()))?;
    out.write_all(MAGIC)?;
    out.write_all(&desc_len.to_le_bytes())?;
    out.write_all(&desc)?;
    out.write_all(&(policy.dim() as u64).to_le_bytes())?;
    for v in policy.params() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Policy> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut len4 = [0u8; 4];
    input.read_exact(&mut len4)?;
    let mut desc = vec![0u8; u32::from_le_bytes(len4) as usize];
    input.read_exact(&mut desc)?;
    let desc: PolicyDescriptor = serde_json::from_slice(&desc)?;
    let mut policy = Policy::from_descriptor(&desc)?;
    let mut len8 = [0u8; 8];
    input.read_exact(&mut len8)?;
    let n = u64::from_le_bytes(len8) as usize;
    if n != policy.dim() {
        return Err(Error::Checkpoint(format!(
            "descriptor implies {} parameters, file holds {n}",
            policy.dim()
        )));
    }
    for v in policy.params_mut() {
        input.read_exact(&mut len8)?;
        *v = f64::from_le_bytes(len8);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok(policy)
}

pub fn save_checkpoint(path: impl AsRef<Path>, policy: &dyn AsmPolicy) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), policy)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Policy> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmdp::{Alphabet, Observation};
    use crate::policy::{MlpAsm, ObsInput, StepContext, TabularSoftmaxAsm, TimeBlocks};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tab = TabularSoftmaxAsm::random(Alphabet::new(3, 2, 4).unwrap(), TimeBlocks::PerStep { horizon: 2 }, 2.0, &mut rng);
        let mlp = MlpAsm::xavier(4, 2, ObsInput::OneHot { n_obs: 3 }, 6, &mut rng).unwrap();
        let o = Observation::Symbol(1);
        let ctx = StepContext {
            s_prev: 2,
            a_prev: 1,
            obs: &o,
            t: 2,
        };
        for p in [Policy::Tabular(tab), Policy::Mlp(mlp)] {
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &p).unwrap();
            let q = read_checkpoint(buf.as_slice()).unwrap();
            assert_eq!(p.descriptor(), q.descriptor());
            assert!(p.params().iter().zip(q.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
            let (dp, dq) = (p.joint_dist(&ctx).unwrap(), q.joint_dist(&ctx).unwrap());
            assert!(dp.iter().zip(&dq).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let p = Policy::Tabular(TabularSoftmaxAsm::zeros(Alphabet::new(2, 2, 2).unwrap(), TimeBlocks::Shared));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Checkpoint(_))));
        buf.push(0);
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(Error::Checkpoint(_))));
    }
}
