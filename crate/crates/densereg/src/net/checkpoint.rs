//! DRN1 checkpoint format: magic, config echo (K, input channels, trunk
//! widths), then named tensors as (name length, name, shape, f32 LE payload).

use std::io::Read;
use std::path::Path;

use crate::{Error, Result};

use super::model::{DenseRegNet, NetConfig};
use super::tensor::Tensor;

pub const DRN1_MAGIC: &[u8; 4] = b"DRN1";

pub fn save_checkpoint(net: &DenseRegNet<f32>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(DRN1_MAGIC);
    buf.extend_from_slice(&(net.cfg.k as u32).to_le_bytes());
    buf.extend_from_slice(&(net.cfg.in_channels as u32).to_le_bytes());
    for w in net.cfg.widths {
        buf.extend_from_slice(&(w as u32).to_le_bytes());
    }
    let names = net.param_names();
    let params = net.params();
    buf.extend_from_slice(&(2 * params.len() as u32).to_le_bytes());
    let mut push_tensor = |name: String, shape: &[usize], data: &[f32]| {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (name, (w, b)) in names.iter().zip(params) {
        push_tensor(format!("{name}.w"), &w.shape, &w.data);
        push_tensor(format!("{name}.b"), &[b.len()], b);
    }
    std::fs::write(path, buf)?;
    Ok(())
}

struct Reader {
    bytes: Vec<u8>,
    pos: usize,
}

impl Reader {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<DenseRegNet<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != DRN1_MAGIC {
        return Err(Error::Format("not a DRN1 checkpoint".into()));
    }
    let k = r.u32()? as usize;
    let in_channels = r.u32()? as usize;
    let mut widths = [0usize; 5];
    for w in &mut widths {
        *w = r.u32()? as usize;
    }
    let cfg = NetConfig { k, in_channels, widths };
    let mut net: DenseRegNet<f32> = DenseRegNet::init(cfg, 0);
    let names = net.param_names();
    let n_tensors = r.u32()? as usize;
    if n_tensors != 2 * names.len() {
        return Err(Error::Format(format!(
            "checkpoint has {n_tensors} tensors, expected {}",
            2 * names.len()
        )));
    }
    let read_tensor = |r: &mut Reader, expect_name: &str| -> Result<(Vec<usize>, Vec<f32>)> {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("bad tensor name".into()))?;
        if name != expect_name {
            return Err(Error::Format(format!(
                "checkpoint tensor order: found {name:?}, expected {expect_name:?}"
            )));
        }
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let data = r
            .take(4 * n)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok((shape, data))
    };
    for (name, (w, b)) in names.iter().zip(net.params_mut()) {
        let (shape, data) = read_tensor(&mut r, &format!("{name}.w"))?;
        if shape != w.shape {
            return Err(Error::Format(format!("checkpoint tensor {name}.w shape mismatch")));
        }
        *w = Tensor::from_vec(&shape, data)?;
        let (shape, data) = read_tensor(&mut r, &format!("{name}.b"))?;
        if shape != [b.len()] {
            return Err(Error::Format(format!("checkpoint tensor {name}.b shape mismatch")));
        }
        *b = data;
    }
    if r.pos != r.bytes.len() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_roundtrip() {
        let net: DenseRegNet<f32> = DenseRegNet::init(NetConfig::new(5), 99);
        let dir = std::env::temp_dir().join("densereg_ckpt_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("net.drn");
        save_checkpoint(&net, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.cfg, net.cfg);
        for ((wa, ba), (wb, bb)) in net.params().iter().zip(back.params().iter()) {
            assert_eq!(wa.data, wb.data);
            assert_eq!(ba, bb);
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = std::env::temp_dir().join("densereg_ckpt_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.drn");
        std::fs::write(&path, b"XXXX").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
