//! Two boosted branches, each informative on a different half of the data,
//! combined by the logistic-regression stacker.

use ndarray::{s, Array2};
use sigverify::evalcli::evaluate_ensemble;
use sigverify::stacker::{train_ensemble, EnsembleParams};
use sigverify::synth::complementary_branches;

fn head(m: &Array2<f64>, n: usize) -> Array2<f64> {
    m.slice(s![..n, ..]).to_owned()
}

fn tail(m: &Array2<f64>, n: usize) -> Array2<f64> {
    m.slice(s![n.., ..]).to_owned()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (a, b, y) = complementary_branches(1500, 0.35, 11);
    let cut = 1000;
    for folds in [0, 5] {
        let params = EnsembleParams {
            oof_folds: folds,
            ..EnsembleParams::default()
        };
        let fit = train_ensemble(&head(&a, cut), &head(&b, cut), &y[..cut], &params)?;
        let report = evaluate_ensemble(&fit.model, &tail(&a, cut), &tail(&b, cut), &y[cut..])?;
        let c = fit.model.combiner;
        println!(
            "oof_folds={folds}: combiner w=[{:.3}, {:.3}] b={:.3}",
            c.weights[0], c.weights[1], c.bias
        );
        print!("{}", report.table());
    }
    Ok(())
}
