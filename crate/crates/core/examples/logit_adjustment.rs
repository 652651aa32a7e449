//! Plain and logit-adjusted cross-entropy on the same logits under a skewed
//! prior, including a class the prior never saw.

use scala_sfl::losses::{cross_entropy, logit_adjusted_ce, predict, predict_balanced, LabelDistribution};
use scala_sfl::tensor::Tensor2D;

fn main() -> scala_sfl::Result<()> {
    let logits = Tensor2D::from_vec(2, 4, vec![2.0, 1.0, 0.5, -1.0, 0.2, 0.1, 1.5, 0.0])?;
    let labels = [0, 2];
    let prior = LabelDistribution::new(vec![0.7, 0.2, 0.1, 0.0])?;

    let plain = cross_entropy(&logits, &labels)?;
    let adjusted = logit_adjusted_ce(&logits, &labels, &prior)?;
    println!("plain CE    {:.5}", plain.value);
    println!("adjusted CE {:.5}", adjusted.value);
    for r in 0..logits.rows() {
        println!("row {r} dL/dz plain    {:+.4?}", plain.logit_grad.row(r));
        println!("row {r} dL/dz adjusted {:+.4?}", adjusted.logit_grad.row(r));
    }
    // class 3 has zero prior: its adjusted gradient is exactly 0
    assert!(adjusted.logit_grad.row(0)[3] == 0.0);

    println!("argmax predictions   {:?}", predict(&logits));
    println!("balanced predictions {:?}", predict_balanced(&logits, &prior)?);

    let uniform = logit_adjusted_ce(&logits, &labels, &LabelDistribution::uniform(4))?;
    println!("uniform prior gap {:e}", (uniform.value - plain.value).abs());
    Ok(())
}
