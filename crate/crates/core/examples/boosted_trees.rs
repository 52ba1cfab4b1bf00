//! Boosted trees with the default settings (depth 3, learning rate 0.1,
//! 100 rounds) on a two-moons problem.

use ndarray::{s, Array2};
use sigverify::evalcli::accuracy_at_threshold;
use sigverify::rgbt::{train_gbt_traced, GbtParams};
use sigverify::synth::two_moons;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (x, y) = two_moons(2000, 0.2, 7);
    let (x_train, x_test): (Array2<f64>, Array2<f64>) =
        (x.slice(s![..1400, ..]).to_owned(), x.slice(s![1400.., ..]).to_owned());
    let (y_train, y_test) = y.split_at(1400);

    let (model, trace) = train_gbt_traced(x_train.view(), y_train, &GbtParams::default())?;
    for (round, loss) in trace.log_loss.iter().enumerate().step_by(20) {
        println!("round {round:>3}  train log-loss {loss:.4}");
    }
    let probs = model.predict_proba_batch(&x_test)?;
    println!(
        "{} trees, {} leaves, test accuracy {:.3}",
        model.trees.len(),
        model.trees.iter().map(|t| t.num_leaves()).sum::<usize>(),
        accuracy_at_threshold(&probs, y_test, 0.5)?
    );
    Ok(())
}
