//! Binary network files: magic, version, a JSON header describing the
//! architecture and normalisation, then little-endian `f64` parameters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::regression::{NetArchitecture, Normalizer, OutputScaling, RegressionNets};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"NNSTNETS";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    arch: NetArchitecture,
    shared: bool,
    input_norm: Normalizer,
    scaling: OutputScaling,
    param_counts: Vec<usize>,
}

pub fn write_nets(nets: &RegressionNets, path: impl AsRef<Path>) -> Result<()> {
    let header = Header {
        arch: nets.arch.clone(),
        shared: !nets.arch.config.is_separate(),
        input_norm: nets.input_norm.clone(),
        scaling: nets.scaling,
        param_counts: nets.block_sizes(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for net in &nets.nets {
        for p in net.params() {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a network file. With `expected` set, any architecture difference is
/// an error.
pub fn read_nets(path: impl AsRef<Path>, expected: Option<&NetArchitecture>) -> Result<RegressionNets> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("{} is not a network file", path.display())));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported network file version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let mut json = vec![0u8; u64::from_le_bytes(b8) as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    if let Some(exp) = expected {
        if exp != &header.arch {
            return Err(Error::Shape(format!(
                "{}: stored architecture {:?} differs from expected {:?}",
                path.display(),
                header.arch,
                exp
            )));
        }
    }
    let sizes = header.arch.layer_sizes();
    if sizes.len() != header.param_counts.len() || header.input_norm.mean.len() != header.arch.d_in {
        return Err(Error::Format(format!("{}: inconsistent header", path.display())));
    }
    let mut nets = Vec::with_capacity(sizes.len());
    for (s, &count) in sizes.iter().zip(&header.param_counts) {
        let mut net = Mlp::zeros(s)?;
        if net.n_params() != count {
            return Err(Error::Format(format!("{}: parameter count mismatch", path.display())));
        }
        for p in net.params_mut() {
            r.read_exact(&mut b8)?;
            *p = f64::from_le_bytes(b8);
        }
        nets.push(net);
    }
    Ok(RegressionNets {
        arch: header.arch,
        nets,
        input_norm: header.input_norm,
        scaling: header.scaling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::regression::NetConfig;

    #[test]
    fn round_trip_and_mismatch() {
        let arch = NetArchitecture {
            d_in: 2,
            d_w: 1,
            config: NetConfig::separate(&[5, 4], &[3], true),
        };
        let mut nets = RegressionNets::he_init(&arch, 4).unwrap();
        nets.scaling.value_shift = 1.25;
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("n.bin");
        write_nets(&nets, &f).unwrap();
        assert_eq!(read_nets(&f, Some(&arch)).unwrap(), nets);
        let other = NetArchitecture {
            config: NetConfig::shared(&[5, 4], true),
            ..arch
        };
        assert!(matches!(read_nets(&f, Some(&other)), Err(Error::Shape(_))));
    }
}
