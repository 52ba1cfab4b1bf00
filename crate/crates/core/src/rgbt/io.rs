//! `SGBT` model files.
//!
//! ```text
//! "SGBT" | version u16
//!        | n_rounds u32 | max_depth u32 | learning_rate f64 | l2_lambda f64
//!        | min_gain f64 | min_child_hessian f64 | n_features u32 | base_margin f64
//!        | tree_count u32 | trees...
//! tree := preorder nodes; tag u8 0 = leaf (weight f64), 1 = split (feature u32, threshold f64)
//! ```
//! Little-endian throughout.

use std::fs;
use std::io::Read;
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{GbtModel, GbtParams, RgbtError, TreeNode};

const MAGIC: &[u8; 4] = b"SGBT";
const VERSION: u16 = 1;
/// Guards recursion on corrupt input; real trees are far shallower.
const MAX_DECODE_DEPTH: usize = 64;

fn corrupt(msg: impl Into<String>) -> RgbtError {
    RgbtError::CorruptFile(msg.into())
}

fn truncated(_: std::io::Error) -> RgbtError {
    corrupt("truncated SGBT block")
}

fn write_tree(node: &TreeNode, out: &mut Vec<u8>) {
    match node {
        TreeNode::Leaf { weight } => {
            out.push(0);
            out.write_f64::<LE>(*weight).unwrap();
        }
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            out.push(1);
            out.write_u32::<LE>(*feature as u32).unwrap();
            out.write_f64::<LE>(*threshold).unwrap();
            write_tree(left, out);
            write_tree(right, out);
        }
    }
}

/// Appends the SGBT encoding of `model` to `out`.
pub fn write_model(model: &GbtModel, out: &mut Vec<u8>) {
    let p = &model.params;
    out.extend_from_slice(MAGIC);
    out.write_u16::<LE>(VERSION).unwrap();
    out.write_u32::<LE>(p.n_rounds as u32).unwrap();
    out.write_u32::<LE>(p.max_depth as u32).unwrap();
    out.write_f64::<LE>(p.learning_rate).unwrap();
    out.write_f64::<LE>(p.l2_lambda).unwrap();
    out.write_f64::<LE>(p.min_gain).unwrap();
    out.write_f64::<LE>(p.min_child_hessian).unwrap();
    out.write_u32::<LE>(model.n_features as u32).unwrap();
    out.write_f64::<LE>(model.base_margin).unwrap();
    out.write_u32::<LE>(model.trees.len() as u32).unwrap();
    for t in &model.trees {
        write_tree(t, out);
    }
}

pub fn encode_model(model: &GbtModel) -> Vec<u8> {
    let mut out = Vec::new();
    write_model(model, &mut out);
    out
}

fn read_tree(r: &mut impl Read, n_features: usize, depth: usize) -> Result<TreeNode, RgbtError> {
    if depth > MAX_DECODE_DEPTH {
        return Err(corrupt("tree nesting too deep"));
    }
    match r.read_u8().map_err(truncated)? {
        0 => {
            let weight = r.read_f64::<LE>().map_err(truncated)?;
            if !weight.is_finite() {
                return Err(corrupt("non-finite leaf weight"));
            }
            Ok(TreeNode::leaf(weight))
        }
        1 => {
            let feature = r.read_u32::<LE>().map_err(truncated)? as usize;
            if feature >= n_features {
                return Err(corrupt(format!("split feature {feature} out of range")));
            }
            let threshold = r.read_f64::<LE>().map_err(truncated)?;
            if threshold.is_nan() {
                return Err(corrupt("NaN split threshold"));
            }
            let left = read_tree(r, n_features, depth + 1)?;
            let right = read_tree(r, n_features, depth + 1)?;
            Ok(TreeNode::Split {
                feature,
                threshold,
                left: Box::new(left),
                right: Box::new(right),
            })
        }
        tag => Err(corrupt(format!("unknown node tag {tag}"))),
    }
}

/// Reads one SGBT block from `r`, leaving the reader just past it.
pub fn read_model(r: &mut impl Read) -> Result<GbtModel, RgbtError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic, expected SGBT"));
    }
    let version = r.read_u16::<LE>().map_err(truncated)?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let params = GbtParams {
        n_rounds: r.read_u32::<LE>().map_err(truncated)? as usize,
        max_depth: r.read_u32::<LE>().map_err(truncated)? as usize,
        learning_rate: r.read_f64::<LE>().map_err(truncated)?,
        l2_lambda: r.read_f64::<LE>().map_err(truncated)?,
        min_gain: r.read_f64::<LE>().map_err(truncated)?,
        min_child_hessian: r.read_f64::<LE>().map_err(truncated)?,
    };
    params
        .validate()
        .map_err(|e| corrupt(format!("invalid params block: {e}")))?;
    let n_features = r.read_u32::<LE>().map_err(truncated)? as usize;
    let base_margin = r.read_f64::<LE>().map_err(truncated)?;
    let count = r.read_u32::<LE>().map_err(truncated)? as usize;
    if count > params.n_rounds {
        return Err(corrupt(format!(
            "{count} trees exceeds n_rounds {}",
            params.n_rounds
        )));
    }
    let trees = (0..count)
        .map(|_| read_tree(r, n_features, 0))
        .collect::<Result<_, _>>()?;
    Ok(GbtModel {
        trees,
        params,
        base_margin,
        n_features,
    })
}

pub fn decode_model(bytes: &[u8]) -> Result<GbtModel, RgbtError> {
    let mut cur = bytes;
    let model = read_model(&mut cur)?;
    if !cur.is_empty() {
        return Err(corrupt(format!("{} trailing bytes", cur.len())));
    }
    Ok(model)
}

pub fn save_model(model: &GbtModel, path: impl AsRef<Path>) -> Result<(), RgbtError> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<GbtModel, RgbtError> {
    decode_model(&fs::read(path)?)
}
