//! Bias/variance decomposition of a small ensemble at a few inputs, under
//! cross-entropy and squared error.
//!
//! cargo run --example bias_variance

use decent_bva::bv::EnsembleView;
use decent_bva::nn::{ArchSpec, LossKind, ModelState, OneHot};
use decent_bva::TensorBuffer;

fn main() -> decent_bva::Result<()> {
    let arch = ArchSpec::mlp(2, &[8], 3);
    let members: Vec<ModelState> = (0..4).map(|s| ModelState::init(arch.clone(), s)).collect::<Result<_, _>>()?;
    let ensemble = EnsembleView::new(&members)?;
    let target = OneHot::new(0, 3)?;

    for point in [[0.1, 0.1], [0.5, 0.5], [0.9, 0.2]] {
        let x = TensorBuffer::vector(point.to_vec());
        for kind in [LossKind::CrossEntropy, LossKind::Mse] {
            let r = ensemble.report(&x, &target, kind)?;
            println!(
                "x={point:?} {kind:?}: main {:.3?} bias {:.4} variance {:.4} |grad bias|_1 {:.4} |grad variance|_1 {:.4}",
                r.main_prediction,
                r.bias,
                r.variance,
                r.grad_bias.data().iter().map(|g| g.abs()).sum::<f64>(),
                r.grad_variance.data().iter().map(|g| g.abs()).sum::<f64>(),
            );
        }
    }

    let copies = vec![members[0].clone(); 3];
    let same = EnsembleView::new(&copies)?;
    let x = TensorBuffer::vector(vec![0.3, 0.7]);
    println!(
        "identical members: mse variance {}, ce variance {:.4} (the entropy of their shared prediction)",
        same.variance_mse(&x)?,
        same.variance_ce(&x)?
    );
    Ok(())
}
