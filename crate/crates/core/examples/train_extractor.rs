//! Trains a small signet-f extractor on rendered signatures and extracts
//! one feature vector per image.

use sigverify::featnet::{
    extract_batch, init_network, train_with_history, ConvBlock, LabeledImage, NetConfig,
    Objective, TrainSpec,
};
use sigverify::preprocess::{preprocess_image, PreprocessConfig};
use sigverify::synth::{render_sample, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let synth = SynthConfig::default();
    let pre = PreprocessConfig {
        canvas_height: 80,
        canvas_width: 120,
        out_height: 32,
        out_width: 48,
    };
    let writers = 8;
    let mut samples = Vec::new();
    for w in 0..writers {
        for (forged, count) in [(false, 4), (true, 4)] {
            for v in 0..count {
                let image = preprocess_image(&render_sample(&synth, w, forged, v), &pre)?;
                samples.push(LabeledImage {
                    image,
                    writer: w,
                    forged,
                });
            }
        }
    }
    let cfg = NetConfig {
        input_height: 32,
        input_width: 48,
        conv_blocks: vec![ConvBlock::new(8, 3, 1), ConvBlock::new(16, 3, 1)],
        feature_dim: 16,
        num_writers: writers,
        forgery_head: true,
        seed: 5,
    };
    let spec = TrainSpec {
        epochs: 8,
        batch_size: 16,
        learning_rate: 0.05,
        ..TrainSpec::default()
    };
    let net = init_network(&cfg)?;
    println!("{} parameters", net.num_params());
    let (net, history) = train_with_history(net, &samples, &spec, Objective::SignetF)?;
    for (epoch, loss) in history.iter().enumerate() {
        println!("epoch {:>2}  loss {loss:.4}", epoch + 1);
    }
    let images: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
    let features = extract_batch(&net, &images)?;
    println!("feature matrix {}x{}", features.nrows(), features.ncols());
    Ok(())
}
