//! Batch instance discrimination on fixed embeddings: labels, temperature,
//! cross-entropy and head re-initialization.

use sar_wcl::discrimination::{
    assign_batch_instance_labels, entropy, instance_cross_entropy, instance_probabilities, reinit_head, ClassifierHead,
};
use sar_wcl::matrix::Matrix;
use sar_wcl::rng::seeded;

fn main() -> sar_wcl::Result<()> {
    let mut rng = seeded(1);
    let (n, d) = (4, 6);
    let emb = Matrix::from_rows(
        &(0..n)
            .map(|i| (0..d).map(|j| ((i * d + j) as f64 * 0.7).sin()).collect())
            .collect::<Vec<_>>(),
    )?;
    let labels = assign_batch_instance_labels(n)?;
    println!("labels {:?}", labels.as_slice());

    let mut head = ClassifierHead::new(n, d, &mut rng);
    for t in [0.5, 1.0, 2.0] {
        let p = instance_probabilities(emb.row(0), &head, t, n)?;
        println!("T={t}: P(.|v0) = {p:.3?}  entropy {:.3}", entropy(&p));
    }

    // a few plain gradient steps on the head alone
    for step in 0..5 {
        let ce = instance_cross_entropy(&emb, &head, &labels, 2.0)?;
        println!("step {step}: loss {:.4}", ce.loss);
        for (w, g) in head.weights_mut().as_mut_slice().iter_mut().zip(ce.grad_weights.as_slice()) {
            *w -= 2.0 * g;
        }
    }
    reinit_head(&mut head, &mut rng);
    println!("after reinit: loss {:.4}", instance_cross_entropy(&emb, &head, &labels, 2.0)?.loss);
    Ok(())
}
