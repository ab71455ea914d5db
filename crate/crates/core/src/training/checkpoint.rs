//! Binary checkpoints: `PANV1`, config record, parameters, optimizer state, CRC-32.

use std::io::Write;
use std::path::Path;

use super::adam::AdamState;
use crate::error::{Error, Result};
use crate::latent_edit::{Block, NetConfig, PhotoAppNet};

const MAGIC: &[u8; 4] = b"PANV";
const VERSION: u8 = b'1';

/// Parameters plus (optionally) the optimizer state they were trained with.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: PhotoAppNet<f32>,
    pub adam: Option<AdamState>,
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Layout (little-endian): magic, `u32` config length, config JSON, `f32`
/// parameters (per block: w1, b1, w2, b2), `u8` optimizer flag, then if set
/// `u64` step, `f32` first moments, `f32` second moments; trailing `u32` CRC-32
/// of everything before it.
pub fn save_checkpoint(net: &PhotoAppNet<f32>, adam: Option<&AdamState>) -> Result<Vec<u8>> {
    let cfg = serde_json::to_vec(net.config())?;
    let n = net.config().param_count();
    if let Some(st) = adam {
        if st.param_count() != n {
            return Err(Error::Shape(format!(
                "optimizer state holds {} parameters, network has {n}",
                st.param_count()
            )));
        }
    }
    let mut out = Vec::with_capacity(16 + cfg.len() + n * 12);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    for b in net.blocks() {
        for t in b.tensors() {
            put_f32s(&mut out, t);
        }
    }
    match adam {
        Some(st) => {
            out.push(1);
            out.extend_from_slice(&st.t.to_le_bytes());
            put_f32s(&mut out, &st.m);
            put_f32s(&mut out, &st.v);
        }
        None => out.push(0),
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Corrupt("checkpoint ends early".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Corrupt("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a network checkpoint".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Version(format!(
            "checkpoint version {} is not supported",
            bytes[4] as char
        )));
    }
    if bytes.len() < 9 + 1 + 4 {
        return Err(Error::Corrupt("checkpoint is truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Corrupt("checkpoint checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 5 };
    let cfg_len = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
    let config: NetConfig =
        serde_json::from_slice(r.take(cfg_len)?).map_err(|e| Error::Corrupt(format!("config record: {e}")))?;
    let (ld, hid, d_in) = (config.latent_dim, config.hidden, config.input_dim());
    let mut blocks = Vec::with_capacity(config.blocks);
    for _ in 0..config.blocks {
        blocks.push(Block {
            w1: r.f32s(hid * d_in)?,
            b1: r.f32s(hid)?,
            w2: r.f32s(ld * hid)?,
            b2: r.f32s(ld)?,
        });
    }
    let net = PhotoAppNet::from_blocks(config, blocks)?;
    let adam = match r.take(1)?[0] {
        0 => None,
        1 => {
            let t = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            let n = net.config().param_count();
            Some(AdamState {
                t,
                m: r.f32s(n)?,
                v: r.f32s(n)?,
            })
        }
        f => return Err(Error::Corrupt(format!("bad optimizer flag {f}"))),
    };
    if r.pos != body.len() {
        return Err(Error::Corrupt("trailing bytes after checkpoint body".into()));
    }
    Ok(Checkpoint { net, adam })
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_checkpoint_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint_file(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    load_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_net(use_q: bool, seed: u64) -> PhotoAppNet<f32> {
        let mut cfg = NetConfig::reduced(2, 6, 4, 5, use_q);
        cfg.seed = seed;
        let mut net = PhotoAppNet::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for b in net.blocks_mut() {
            for t in b.tensors_mut() {
                t.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
            }
        }
        net
    }

    #[test]
    fn round_trip_is_bitwise() {
        let net = random_net(true, 1);
        let mut st = AdamState::new(net.config().param_count());
        st.t = 17;
        st.m.iter_mut().enumerate().for_each(|(i, v)| *v = i as f32 * 0.5);
        st.v.iter_mut().enumerate().for_each(|(i, v)| *v = 1.0 / (i as f32 + 1.0));
        let bytes = save_checkpoint(&net, Some(&st)).unwrap();
        let ck = load_checkpoint(&bytes).unwrap();
        assert_eq!(ck.net, net);
        assert_eq!(ck.adam.unwrap(), st);

        let bare = load_checkpoint(&save_checkpoint(&net, None).unwrap()).unwrap();
        assert!(bare.adam.is_none());
    }

    #[test]
    fn damaged_files_rejected() {
        let bytes = save_checkpoint(&random_net(false, 2), None).unwrap();
        for cut in [6, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(load_checkpoint(&bytes[..cut]), Err(Error::Corrupt(_))), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        flipped[40] ^= 0x10;
        assert!(matches!(load_checkpoint(&flipped), Err(Error::Corrupt(_))));
        let mut v2 = bytes.clone();
        v2[4] = b'2';
        assert!(matches!(load_checkpoint(&v2), Err(Error::Version(_))));
        assert!(matches!(load_checkpoint(b"hello world"), Err(Error::Format(_))));
    }

    #[test]
    fn atomic_file_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.pan");
        let net = random_net(false, 3);
        write_checkpoint_file(&path, &save_checkpoint(&net, None).unwrap()).unwrap();
        assert_eq!(read_checkpoint_file(&path).unwrap().net, net);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
