//! Binary model files: magic, version, kind, JSON hyperparameters, then a
//! little-endian payload of trees or weight tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{DecisionTree, ForestModel, ForestParams, ForestVariant, Geometry, Model, ModelKind, NetConfig, NetKind, Network, Node};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HPMODEL\0";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ForestHeader {
    params: ForestParams,
}

#[derive(Serialize, Deserialize)]
struct NetHeader {
    config: NetConfig,
    geometry: Geometry,
    loss_curve: Vec<f64>,
}

fn kind_code(k: ModelKind) -> u8 {
    ModelKind::ALL.iter().position(|&x| x == k).expect("listed kind") as u8
}

pub fn encode_model(model: &Model, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u8(kind_code(model.kind()))?;
    let header = match model {
        Model::Forest(f) => serde_json::to_vec(&ForestHeader { params: f.params.clone() }),
        Model::Network(n) => serde_json::to_vec(&NetHeader {
            config: n.config.clone(),
            geometry: n.geometry,
            loss_curve: n.loss_curve.clone(),
        }),
    }
    .map_err(std::io::Error::other)?;
    w.write_u32::<LE>(header.len() as u32)?;
    w.write_all(&header)?;
    match model {
        Model::Forest(f) => {
            w.write_u64::<LE>(f.n_features as u64)?;
            for cw in f.class_weights {
                w.write_f64::<LE>(cw)?;
            }
            w.write_u32::<LE>(f.trees.len() as u32)?;
            for t in &f.trees {
                w.write_u32::<LE>(t.nodes.len() as u32)?;
                for n in &t.nodes {
                    w.write_u32::<LE>(n.feature)?;
                    w.write_f64::<LE>(n.threshold)?;
                    w.write_u32::<LE>(n.left)?;
                    w.write_u32::<LE>(n.right)?;
                    w.write_f64::<LE>(n.p1)?;
                    w.write_u32::<LE>(n.n_samples)?;
                    w.write_u32::<LE>(n.counts[0])?;
                    w.write_u32::<LE>(n.counts[1])?;
                }
            }
        }
        Model::Network(n) => {
            let params = n.params();
            w.write_u32::<LE>(params.len() as u32)?;
            for p in params {
                w.write_u32::<LE>(p.ndim() as u32)?;
                for &d in p.shape() {
                    w.write_u64::<LE>(d as u64)?;
                }
                for &v in p.iter() {
                    w.write_f64::<LE>(v)?;
                }
            }
        }
    }
    Ok(())
}

pub fn write_model(model: &Model, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode_model(model, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn decode(path: &Path, mut r: impl Read) -> Result<Model> {
    let bad = |reason: &str| Error::format(path, reason.to_string());
    let io = |e: std::io::Error| Error::format(path, format!("truncated model file: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(bad("not a model file (bad magic)"));
    }
    let version = r.read_u32::<LE>().map_err(io)?;
    if version != VERSION {
        return Err(bad(&format!("unsupported model version {version}")));
    }
    let kind = *ModelKind::ALL.get(r.read_u8().map_err(io)? as usize).ok_or_else(|| bad("unknown model kind"))?;
    let len = r.read_u32::<LE>().map_err(io)? as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header).map_err(io)?;
    let json_err = |e: serde_json::Error| bad(&format!("bad header: {e}"));
    match kind {
        ModelKind::Rf | ModelKind::Et => {
            let h: ForestHeader = serde_json::from_slice(&header).map_err(json_err)?;
            let n_features = r.read_u64::<LE>().map_err(io)? as usize;
            let class_weights = [r.read_f64::<LE>().map_err(io)?, r.read_f64::<LE>().map_err(io)?];
            let n_trees = r.read_u32::<LE>().map_err(io)? as usize;
            let mut trees = Vec::with_capacity(n_trees);
            for _ in 0..n_trees {
                let n_nodes = r.read_u32::<LE>().map_err(io)? as usize;
                let mut nodes = Vec::with_capacity(n_nodes);
                for _ in 0..n_nodes {
                    nodes.push(Node {
                        feature: r.read_u32::<LE>().map_err(io)?,
                        threshold: r.read_f64::<LE>().map_err(io)?,
                        left: r.read_u32::<LE>().map_err(io)?,
                        right: r.read_u32::<LE>().map_err(io)?,
                        p1: r.read_f64::<LE>().map_err(io)?,
                        n_samples: r.read_u32::<LE>().map_err(io)?,
                        counts: [r.read_u32::<LE>().map_err(io)?, r.read_u32::<LE>().map_err(io)?],
                    });
                }
                let tree = DecisionTree { nodes };
                tree.validate(n_features).map_err(|e| bad(&e.to_string()))?;
                trees.push(tree);
            }
            if trees.is_empty() {
                return Err(bad("forest has no trees"));
            }
            let variant = if kind == ModelKind::Rf { ForestVariant::Rf } else { ForestVariant::Et };
            Ok(Model::Forest(ForestModel {
                variant,
                params: h.params,
                class_weights,
                n_features,
                trees,
            }))
        }
        ModelKind::Mlp | ModelKind::Fusion => {
            let h: NetHeader = serde_json::from_slice(&header).map_err(json_err)?;
            let net_kind = if kind == ModelKind::Mlp { NetKind::Mlp } else { NetKind::Fusion };
            let mut net = Network::new(net_kind, h.geometry, h.config, 0).map_err(|e| bad(&e.to_string()))?;
            net.loss_curve = h.loss_curve;
            let count = r.read_u32::<LE>().map_err(io)? as usize;
            let mut params = net.params_mut();
            if count != params.len() {
                return Err(bad("tensor count does not match the architecture"));
            }
            for p in params.iter_mut() {
                let ndim = r.read_u32::<LE>().map_err(io)? as usize;
                let shape = (0..ndim).map(|_| r.read_u64::<LE>().map(|d| d as usize)).collect::<std::io::Result<Vec<_>>>().map_err(io)?;
                if shape != p.shape() {
                    return Err(bad("tensor shape does not match the architecture"));
                }
                let data = (0..p.len()).map(|_| r.read_f64::<LE>()).collect::<std::io::Result<Vec<_>>>().map_err(io)?;
                **p = ArrayD::from_shape_vec(IxDyn(&shape), data).map_err(|e| bad(&e.to_string()))?;
            }
            Ok(Model::Network(net))
        }
    }
}

pub fn read_model(path: &Path) -> Result<Model> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode(path, BufReader::new(file))
}
