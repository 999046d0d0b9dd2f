//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "EMPKNET\0"
//! version    u32      1
//! n_layers   u32
//! n_layers × { kind u8 (0 dense, 1 glu), activation u8 (255 for glu),
//!              reserved u16 = 0, input u32, output u32 }
//! n_params   u64      must equal the sum of the layers' parameter counts
//! n_aux      u64      trailing auxiliary values (e.g. a policy log-std)
//! params     n_params × f64
//! aux        n_aux × f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Activation, LayerSpec, Network};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EMPKNET\0";
pub const VERSION: u32 = 1;

pub fn write_network<W: Write>(mut w: W, net: &Network, aux: &[f64]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for layer in net.layers() {
        let (kind, act) = match *layer {
            LayerSpec::Dense { activation, .. } => (0u8, activation.code()),
            LayerSpec::Glu { .. } => (1u8, 255u8),
        };
        w.write_all(&[kind, act, 0, 0])?;
        w.write_all(&(layer.input() as u32).to_le_bytes())?;
        w.write_all(&(layer.output() as u32).to_le_bytes())?;
    }
    w.write_all(&(net.param_count() as u64).to_le_bytes())?;
    w.write_all(&(aux.len() as u64).to_le_bytes())?;
    for v in net.params().iter().chain(aux) {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

/// Reads a network and its auxiliary vector.
pub fn read_network<R: Read>(mut r: R) -> Result<(Network, Vec<f64>)> {
    let magic: [u8; 8] = read_array(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n_layers = read_u32(&mut r)? as usize;
    if n_layers == 0 || n_layers > 4096 {
        return Err(Error::Checkpoint(format!("implausible layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let [kind, act, _, _] = read_array::<4, _>(&mut r)?;
        let input = read_u32(&mut r)? as usize;
        let output = read_u32(&mut r)? as usize;
        layers.push(match kind {
            0 => LayerSpec::Dense {
                input,
                output,
                activation: Activation::from_code(act)
                    .ok_or_else(|| Error::Checkpoint(format!("unknown activation code {act}")))?,
            },
            1 => LayerSpec::Glu { input, output },
            other => return Err(Error::Checkpoint(format!("unknown layer kind {other}"))),
        });
    }
    let mut net = Network::new(layers).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let n_params = read_u64(&mut r)? as usize;
    if n_params != net.param_count() {
        return Err(Error::Checkpoint(format!(
            "parameter count {n_params} does not match layer spec ({})",
            net.param_count()
        )));
    }
    let n_aux = read_u64(&mut r)? as usize;
    if n_aux > 1 << 20 {
        return Err(Error::Checkpoint(format!("implausible aux length {n_aux}")));
    }
    for p in net.params_mut() {
        *p = f64::from_le_bytes(read_array(&mut r)?);
    }
    let aux = (0..n_aux)
        .map(|_| Ok(f64::from_le_bytes(read_array(&mut r)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok((net, aux))
}

pub fn save(path: impl AsRef<Path>, net: &Network, aux: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_network(&mut w, net, aux)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(Network, Vec<f64>)> {
    read_network(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng_from_seed;

    fn sample_net() -> Network {
        let mut layers = Network::mlp(4, &[6], 2, Activation::Relu, Activation::Linear);
        layers.insert(1, LayerSpec::Glu { input: 6, output: 6 });
        Network::initialized(layers, &mut rng_from_seed(5)).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let net = sample_net();
        let mut buf = Vec::new();
        write_network(&mut buf, &net, &[-0.5, 1.25]).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 4 + 3 * 12 + 16 + 8 * (net.param_count() + 2));
        let (back, aux) = read_network(buf.as_slice()).unwrap();
        assert_eq!(back, net);
        assert_eq!(aux, vec![-0.5, 1.25]);
    }

    #[test]
    fn header_layout() {
        let net = Network::new(Network::mlp(2, &[], 1, Activation::Linear, Activation::Linear)).unwrap();
        let mut buf = Vec::new();
        write_network(&mut buf, &net, &[]).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &1u32.to_le_bytes());
        assert_eq!(&buf[16..20], &[0, 2, 0, 0]);
        assert_eq!(&buf[20..24], &2u32.to_le_bytes());
        assert_eq!(&buf[24..28], &1u32.to_le_bytes());
        assert_eq!(&buf[28..36], &3u64.to_le_bytes());
    }

    #[test]
    fn rejects_corruption() {
        let net = sample_net();
        let mut buf = Vec::new();
        write_network(&mut buf, &net, &[]).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_network(bad.as_slice()).is_err());
        assert!(read_network(&buf[..buf.len() - 3]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_network(long.as_slice()).is_err());
    }
}
