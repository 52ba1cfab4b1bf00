//! `SFNT` model files.
//!
//! ```text
//! "SFNT" | version u16 | input_h u32 | input_w u32 | n_blocks u32
//!        | n_blocks × (out_channels u32, kernel u32, stride u32)
//!        | feature_dim u32 | num_writers u32 | forgery_head u8 | seed u64
//!        | parameters f32 × N (declaration order)
//! ```
//! Little-endian throughout. N is implied by the config; the file must end
//! exactly after the last parameter.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{ConvBlock, FeatNet, FeatNetError, Layout, NetConfig};

const MAGIC: &[u8; 4] = b"SFNT";
const VERSION: u16 = 1;

fn corrupt(msg: impl Into<String>) -> FeatNetError {
    FeatNetError::CorruptFile(msg.into())
}

fn truncated(_: std::io::Error) -> FeatNetError {
    corrupt("truncated model file")
}

pub fn encode_model(net: &FeatNet) -> Vec<u8> {
    let cfg = net.config();
    let mut out = Vec::with_capacity(64 + 4 * net.num_params());
    out.extend_from_slice(MAGIC);
    // writes into a Vec cannot fail
    out.write_u16::<LE>(VERSION).unwrap();
    out.write_u32::<LE>(cfg.input_height as u32).unwrap();
    out.write_u32::<LE>(cfg.input_width as u32).unwrap();
    out.write_u32::<LE>(cfg.conv_blocks.len() as u32).unwrap();
    for b in &cfg.conv_blocks {
        out.write_u32::<LE>(b.out_channels as u32).unwrap();
        out.write_u32::<LE>(b.kernel_size as u32).unwrap();
        out.write_u32::<LE>(b.stride as u32).unwrap();
    }
    out.write_u32::<LE>(cfg.feature_dim as u32).unwrap();
    out.write_u32::<LE>(cfg.num_writers as u32).unwrap();
    out.write_u8(u8::from(cfg.forgery_head)).unwrap();
    out.write_u64::<LE>(cfg.seed).unwrap();
    for &p in net.params() {
        out.write_f32::<LE>(p as f32).unwrap();
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<FeatNet, FeatNetError> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic, expected SFNT"));
    }
    let version = cur.read_u16::<LE>().map_err(truncated)?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let u32_field = |cur: &mut Cursor<&[u8]>| cur.read_u32::<LE>().map(|v| v as usize).map_err(truncated);
    let input_height = u32_field(&mut cur)?;
    let input_width = u32_field(&mut cur)?;
    let n_blocks = u32_field(&mut cur)?;
    if n_blocks > 64 {
        return Err(corrupt(format!("implausible block count {n_blocks}")));
    }
    let mut conv_blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let out_channels = u32_field(&mut cur)?;
        let kernel_size = u32_field(&mut cur)?;
        let stride = u32_field(&mut cur)?;
        conv_blocks.push(ConvBlock::new(out_channels, kernel_size, stride));
    }
    let feature_dim = u32_field(&mut cur)?;
    let num_writers = u32_field(&mut cur)?;
    let forgery_head = match cur.read_u8().map_err(truncated)? {
        0 => false,
        1 => true,
        v => return Err(corrupt(format!("bad forgery_head flag {v}"))),
    };
    let seed = cur.read_u64::<LE>().map_err(truncated)?;
    let config = NetConfig {
        input_height,
        input_width,
        conv_blocks,
        feature_dim,
        num_writers,
        forgery_head,
        seed,
    };
    config
        .validate()
        .map_err(|e| corrupt(format!("invalid config block: {e}")))?;

    let n = Layout::of(&config).total;
    let rest = bytes.len() - cur.position() as usize;
    if rest != 4 * n {
        return Err(corrupt(format!(
            "expected {} parameter bytes, found {rest}",
            4 * n
        )));
    }
    let mut params = vec![0f32; n];
    cur.read_f32_into::<LE>(&mut params).map_err(truncated)?;
    FeatNet::from_parts(config, params.into_iter().map(f64::from).collect())
}

pub fn save_model(net: &FeatNet, path: impl AsRef<Path>) -> Result<(), FeatNetError> {
    fs::write(path, encode_model(net))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FeatNet, FeatNetError> {
    decode_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featnet::init_network;

    fn net() -> FeatNet {
        init_network(&NetConfig {
            input_height: 8,
            input_width: 9,
            conv_blocks: vec![ConvBlock::new(2, 3, 1), ConvBlock::new(2, 5, 2)],
            feature_dim: 3,
            num_writers: 4,
            forgery_head: true,
            seed: 99,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let n = net();
        let bytes = encode_model(&n);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, n);
        assert_eq!(encode_model(&back), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = encode_model(&net());
        assert_eq!(&bytes[..4], b"SFNT");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 8);
    }

    #[test]
    fn detects_bad_magic_and_truncation() {
        let mut bytes = encode_model(&net());
        let cut = bytes[..bytes.len() - 3].to_vec();
        assert!(matches!(decode_model(&cut), Err(FeatNetError::CorruptFile(_))));
        assert!(matches!(decode_model(&bytes[..7]), Err(FeatNetError::CorruptFile(_))));
        bytes[0] = b'X';
        assert!(matches!(decode_model(&bytes), Err(FeatNetError::CorruptFile(_))));
    }
}
