//! Writes and re-reads every binary format: extractor (SFNT), boosted
//! trees (SGBT), ensemble (SENS) and feature matrices (SFTV).

use sigverify::datasets::{decode_features, encode_features};
use sigverify::featnet::{self, init_network, ConvBlock, NetConfig};
use sigverify::rgbt::{self, train_gbt, GbtParams};
use sigverify::stacker::{decode_ensemble, encode_ensemble, train_ensemble, EnsembleParams};
use sigverify::synth::{complementary_branches, two_moons};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = init_network(&NetConfig {
        input_height: 16,
        input_width: 24,
        conv_blocks: vec![ConvBlock::new(4, 3, 2)],
        feature_dim: 8,
        num_writers: 5,
        forgery_head: true,
        seed: 1,
    })?;
    let bytes = featnet::encode_model(&net);
    assert_eq!(featnet::decode_model(&bytes)?, net);
    println!("SFNT  {:>6} bytes", bytes.len());

    let (x, y) = two_moons(300, 0.2, 1);
    let gbt = train_gbt(x.view(), &y, &GbtParams { n_rounds: 20, ..GbtParams::default() })?;
    let bytes = rgbt::encode_model(&gbt);
    assert_eq!(rgbt::decode_model(&bytes)?, gbt);
    println!("SGBT  {:>6} bytes", bytes.len());

    let (a, b, y) = complementary_branches(300, 0.3, 2);
    let fit = train_ensemble(&a, &b, &y, &EnsembleParams::default())?;
    let bytes = encode_ensemble(&fit.model);
    assert_eq!(decode_ensemble(&bytes)?, fit.model);
    println!("SENS  {:>6} bytes", bytes.len());

    let features = x.mapv(|v| v as f32 as f64);
    let bytes = encode_features(&features, &y)?;
    let (back, labels) = decode_features(&bytes)?;
    assert_eq!((back, labels), (features, y));
    println!("SFTV  {:>6} bytes", bytes.len());

    let mut broken = bytes.clone();
    broken.truncate(bytes.len() - 1);
    println!("truncated SFTV: {}", decode_features(&broken).unwrap_err());
    Ok(())
}
