//! Generates the synthetic corpus in a temporary directory and runs the
//! full experiment on it with the bundled toy config.

use std::time::Instant;

use sigverify::evalcli::{run_experiment, RunConfig};
use sigverify::synth::{generate_corpus, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let corpus = dir.path().join("corpus");
    let n = generate_corpus(&SynthConfig::default(), &corpus)?;
    println!("generated {n} images");

    let mut cfg = RunConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/synthetic.toml"))?;
    cfg.dataset.root = corpus;
    cfg.out_dir = dir.path().join("out");

    let start = Instant::now();
    let run = run_experiment(&cfg)?;
    println!("{}", run.report.table());
    println!("signet loss by epoch:   {:?}", run.signet_history);
    println!("signet-f loss by epoch: {:?}", run.signetf_history);
    println!("finished in {:.1?}", start.elapsed());
    Ok(())
}
