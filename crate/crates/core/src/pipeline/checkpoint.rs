//! Parameter checkpoint container `XMPW` version 1, little-endian:
//!
//! ```text
//! magic "XMPW" | version u32
//! net spec: input_dim u32, color_channels u32, n_hidden u32, hidden u32...,
//!           feature_dim u32, activation u8, residual_blocks u32,
//!           head_mode u8, bottleneck u32 (0 = none), hand_joints u32
//! collections (f_depth, f_color, g, h): tensor count u32, then per tensor:
//!           name (len u32 + utf8), rank u32, dims u32..., data f64...
//! optimizer u8 flag; when 1: step u64, alpha/beta1/beta2/eps f64,
//!           then first and second moments as per-collection tensor lists
//!           (len u64 + f64...) mirroring the parameter layout
//! config   u8 flag; when 1: len u64 + utf8 config text
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::networks::{Activation, Collection, HeadMode, ModelParams, NetSpec, ParamTensor};
use crate::optim::{AdamHyper, AdamState, Moments};

use super::{PipelineError, Result};

const MAGIC: &[u8; 4] = b"XMPW";
const VERSION: u32 = 1;

pub struct Checkpoint {
    pub spec: NetSpec,
    pub params: ModelParams,
    pub adam: Option<AdamState>,
    pub config_text: Option<String>,
}

fn io_err(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn bad(path: &Path, reason: impl Into<String>) -> PipelineError {
    PipelineError::Malformed {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    write_all(&mut w, ck).map_err(|e| io_err(path, e))
}

fn write_all<W: Write>(w: &mut W, ck: &Checkpoint) -> std::io::Result<()> {
    let u32w = |w: &mut W, v: u32| w.write_all(&v.to_le_bytes());
    let u64w = |w: &mut W, v: u64| w.write_all(&v.to_le_bytes());
    let f64w = |w: &mut W, v: f64| w.write_all(&v.to_le_bytes());

    w.write_all(MAGIC)?;
    u32w(w, VERSION)?;

    let s = &ck.spec;
    u32w(w, s.input_dim as u32)?;
    u32w(w, s.color_channels as u32)?;
    u32w(w, s.hidden_dims.len() as u32)?;
    for d in &s.hidden_dims {
        u32w(w, *d as u32)?;
    }
    u32w(w, s.feature_dim as u32)?;
    w.write_all(&[match s.activation {
        Activation::Relu => 0,
        Activation::Tanh => 1,
    }])?;
    u32w(w, s.residual_blocks_g as u32)?;
    w.write_all(&[match s.head_mode {
        HeadMode::ObjectCorners => 0,
        HeadMode::HandJoints => 1,
    }])?;
    u32w(w, s.bottleneck_dim.unwrap_or(0) as u32)?;
    u32w(w, s.hand_joints as u32)?;

    for c in [
        &ck.params.f_depth,
        &ck.params.f_color,
        &ck.params.map_g,
        &ck.params.head,
    ] {
        u32w(w, c.params.len() as u32)?;
        for p in &c.params {
            u32w(w, p.name.len() as u32)?;
            w.write_all(p.name.as_bytes())?;
            u32w(w, p.shape.len() as u32)?;
            for d in &p.shape {
                u32w(w, *d as u32)?;
            }
            for v in &p.data {
                f64w(w, *v)?;
            }
        }
    }

    match &ck.adam {
        None => w.write_all(&[0])?,
        Some(a) => {
            w.write_all(&[1])?;
            u64w(w, a.step_count)?;
            f64w(w, a.hyper.alpha)?;
            f64w(w, a.hyper.beta1)?;
            f64w(w, a.hyper.beta2)?;
            f64w(w, a.hyper.eps_hat)?;
            for moments in [&a.m, &a.v] {
                for c in [&moments.f_depth, &moments.f_color, &moments.map_g, &moments.head] {
                    u32w(w, c.len() as u32)?;
                    for t in c {
                        u64w(w, t.len() as u64)?;
                        for v in t {
                            f64w(w, *v)?;
                        }
                    }
                }
            }
        }
    }

    match &ck.config_text {
        None => w.write_all(&[0])?,
        Some(text) => {
            w.write_all(&[1])?;
            u64w(w, text.len() as u64)?;
            w.write_all(text.as_bytes())?;
        }
    }
    w.flush()
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    read_all(&mut r, path)
}

fn read_all<R: Read>(r: &mut R, path: &Path) -> Result<Checkpoint> {
    let rd_u32 = |r: &mut R| -> std::io::Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    };
    let rd_u64 = |r: &mut R| -> std::io::Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    };
    let rd_f64 = |r: &mut R| -> std::io::Result<f64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    let rd_u8 = |r: &mut R| -> std::io::Result<u8> {
        let mut b = [0u8; 1];
        r.read_exact(&mut b)?;
        Ok(b[0])
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != MAGIC {
        return Err(bad(path, "bad magic, expected XMPW"));
    }
    let version = rd_u32(r).map_err(|e| io_err(path, e))?;
    if version != VERSION {
        return Err(bad(path, format!("unsupported version {version}")));
    }

    let input_dim = rd_u32(r).map_err(|e| io_err(path, e))? as usize;
    let color_channels = rd_u32(r).map_err(|e| io_err(path, e))? as usize;
    let n_hidden = rd_u32(r).map_err(|e| io_err(path, e))? as usize;
    if n_hidden > 64 {
        return Err(bad(path, format!("implausible hidden layer count {n_hidden}")));
    }
    let mut hidden_dims = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden_dims.push(rd_u32(r).map_err(|e| io_err(path, e))? as usize);
    }
    let feature_dim = rd_u32(r).map_err(|e| io_err(path, e))? as usize;
    let activation = match rd_u8(r).map_err(|e| io_err(path, e))? {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        a => return Err(bad(path, format!("unknown activation tag {a}"))),
    };
    let residual_blocks_g = rd_u32(r).map_err(|e| io_err(path, e))? as usize;
    let head_mode = match rd_u8(r).map_err(|e| io_err(path, e))? {
        0 => HeadMode::ObjectCorners,
        1 => HeadMode::HandJoints,
        h => return Err(bad(path, format!("unknown head tag {h}"))),
    };
    let bottleneck = rd_u32(r).map_err(|e| io_err(path, e))? as usize;
    let hand_joints = rd_u32(r).map_err(|e| io_err(path, e))? as usize;
    let spec = NetSpec {
        input_dim,
        color_channels,
        hidden_dims,
        feature_dim,
        activation,
        residual_blocks_g,
        head_mode,
        bottleneck_dim: (bottleneck > 0).then_some(bottleneck),
        hand_joints,
    };

    let read_collection = |r: &mut R| -> Result<Collection> {
        let count = rd_u32(r).map_err(|e| io_err(path, e))? as usize;
        if count > 4096 {
            return Err(bad(path, format!("implausible tensor count {count}")));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = rd_u32(r).map_err(|e| io_err(path, e))? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes).map_err(|e| io_err(path, e))?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| bad(path, "tensor name is not utf-8"))?;
            let rank = rd_u32(r).map_err(|e| io_err(path, e))? as usize;
            if rank > 4 {
                return Err(bad(path, format!("implausible tensor rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(rd_u32(r).map_err(|e| io_err(path, e))? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(rd_f64(r).map_err(|e| io_err(path, e))?);
            }
            params.push(ParamTensor { name, shape, data });
        }
        Ok(Collection { params })
    };

    let f_depth = read_collection(r)?;
    let f_color = read_collection(r)?;
    let map_g = read_collection(r)?;
    let head = read_collection(r)?;
    let params = ModelParams {
        f_depth,
        f_color,
        map_g,
        head,
    };

    let adam = match rd_u8(r).map_err(|e| io_err(path, e))? {
        0 => None,
        1 => {
            let step_count = rd_u64(r).map_err(|e| io_err(path, e))?;
            let alpha = rd_f64(r).map_err(|e| io_err(path, e))?;
            let beta1 = rd_f64(r).map_err(|e| io_err(path, e))?;
            let beta2 = rd_f64(r).map_err(|e| io_err(path, e))?;
            let eps_hat = rd_f64(r).map_err(|e| io_err(path, e))?;
            let read_moments = |r: &mut R| -> Result<Moments> {
                let mut out = Moments::default();
                for part in [
                    &mut out.f_depth,
                    &mut out.f_color,
                    &mut out.map_g,
                    &mut out.head,
                ] {
                    let count = rd_u32(r).map_err(|e| io_err(path, e))? as usize;
                    for _ in 0..count {
                        let n = rd_u64(r).map_err(|e| io_err(path, e))? as usize;
                        let mut t = Vec::with_capacity(n);
                        for _ in 0..n {
                            t.push(rd_f64(r).map_err(|e| io_err(path, e))?);
                        }
                        part.push(t);
                    }
                }
                Ok(out)
            };
            let m = read_moments(r)?;
            let v = read_moments(r)?;
            Some(AdamState {
                step_count,
                hyper: AdamHyper {
                    alpha,
                    beta1,
                    beta2,
                    eps_hat,
                },
                m,
                v,
            })
        }
        f => return Err(bad(path, format!("unknown optimizer flag {f}"))),
    };

    let config_text = match rd_u8(r).map_err(|e| io_err(path, e))? {
        0 => None,
        1 => {
            let n = rd_u64(r).map_err(|e| io_err(path, e))? as usize;
            let mut bytes = vec![0u8; n];
            r.read_exact(&mut bytes).map_err(|e| io_err(path, e))?;
            Some(String::from_utf8(bytes).map_err(|_| bad(path, "config text is not utf-8"))?)
        }
        f => return Err(bad(path, format!("unknown config flag {f}"))),
    };

    Ok(Checkpoint {
        spec,
        params,
        adam,
        config_text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::init_params;
    use crate::optim::AdamState;

    fn spec() -> NetSpec {
        NetSpec {
            input_dim: 16,
            color_channels: 3,
            hidden_dims: vec![8, 4],
            feature_dim: 6,
            activation: Activation::Tanh,
            residual_blocks_g: 2,
            head_mode: HeadMode::HandJoints,
            bottleneck_dim: Some(3),
            hand_joints: 6,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let spec = spec();
        let params = init_params(&spec, 99).unwrap();
        let mut adam = AdamState::new(&params, AdamHyper::default()).unwrap();
        adam.step_count = 17;
        adam.m.f_depth[0][3] = 0.125;
        adam.v.head[1][0] = 2.5;
        let ck = Checkpoint {
            spec: spec.clone(),
            params: params.clone(),
            adam: Some(adam.clone()),
            config_text: Some("beta = 0.02\n".into()),
        };
        let dir = std::env::temp_dir().join(format!("xmpw_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ck.xmpw");
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.spec, spec);
        assert_eq!(back.params, params);
        assert_eq!(back.adam.unwrap(), adam);
        assert_eq!(back.config_text.as_deref(), Some("beta = 0.02\n"));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = std::env::temp_dir().join(format!("xmpw_bad_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("junk.xmpw");
        std::fs::write(&path, b"XMPDxxxxxxxx").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(PipelineError::Malformed { .. })
        ));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
