//! Threshold accuracy, best-threshold accuracy and FAR/FRR on a handful of
//! forgery scores.

use sigverify::evalcli::{accuracy_at_threshold, far_frr, max_accuracy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let probs = [0.05, 0.2, 0.35, 0.42, 0.48, 0.55, 0.61, 0.7, 0.83, 0.9];
    let labels = [0, 0, 0, 1, 0, 0, 1, 1, 1, 1];
    println!("accuracy @ 0.5: {:.2}", accuracy_at_threshold(&probs, &labels, 0.5)?);
    let (best, t) = max_accuracy(&probs, &labels)?;
    println!("best accuracy:  {best:.2} at threshold {t:.3}");
    for t in [0.3, 0.5, t, 0.8] {
        let (far, frr) = far_frr(&probs, &labels, t)?;
        println!("t={t:.3}  FAR={far:.2}  FRR={frr:.2}");
    }
    Ok(())
}
