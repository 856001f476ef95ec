//! Trains one MLP on separable blobs, then attacks it with FGSM and PGD at
//! growing budgets, and attacks a small ensemble with BV-FGSM and BV-PGD.
//!
//! cargo run --release --example attacks

use decent_bva::attacks::{attack_set, AttackConfig, AttackKind, AttackTarget};
use decent_bva::bv::EnsembleView;
use decent_bva::data::{synth_blobs, BlobSpec, LabeledSet, Sample};
use decent_bva::harness::accuracy;
use decent_bva::nn::{ArchSpec, LossKind, Mode, ModelState, Sgd};

fn train(set: &LabeledSet, seed: u64) -> decent_bva::Result<ModelState> {
    let mut model = ModelState::init(ArchSpec::mlp(2, &[16], 2), seed)?;
    let sgd = Sgd::new(0.05, 0.9);
    let mut velocity = vec![0.0; model.param_count()];
    let order: Vec<usize> = (0..set.len()).collect();
    for _ in 0..30 {
        for chunk in order.chunks(16) {
            let batch: Vec<Sample<'_>> = chunk.iter().map(|&i| set.sample(i)).collect();
            let g = model.grad_params(&batch, LossKind::CrossEntropy, Mode::Eval)?;
            sgd.step(&mut model, &g, &mut velocity)?;
        }
    }
    Ok(model)
}

fn main() -> decent_bva::Result<()> {
    let spec = BlobSpec {
        classes: 2,
        per_class: 100,
        dims: 2,
        spread: 0.1,
    };
    let train_set = synth_blobs(&spec, 1)?;
    let test = synth_blobs(&BlobSpec { per_class: 200, ..spec }, 2)?;
    let model = train(&train_set, 3)?;
    println!("clean accuracy {:.3}", accuracy(&model, &test)?);

    println!("{:>6} {:>8} {:>8} {:>8}", "eps", "fgsm", "pgd10", "pgd20");
    for eps in [0.05, 0.1, 0.2, 0.3] {
        let mut row = format!("{eps:>6}");
        for cfg in [AttackConfig::new(AttackKind::Fgsm, eps), AttackConfig::pgd(eps, 10), AttackConfig::pgd(eps, 20)] {
            let adv = attack_set(AttackTarget::Model(&model), &test, &cfg, 0, 0)?;
            row += &format!(" {:>8.3}", accuracy(&model, &adv.examples)?);
        }
        println!("{row}");
    }

    let members: Vec<ModelState> = (10..14).map(|s| train(&train_set, s)).collect::<Result<_, _>>()?;
    let ensemble = EnsembleView::new(&members)?;
    for kind in [AttackKind::BvFgsm, AttackKind::BvPgd] {
        let mut cfg = AttackConfig::new(kind, 0.1);
        if kind == AttackKind::BvPgd {
            cfg.steps = 10;
        }
        let adv = attack_set(AttackTarget::Ensemble(ensemble), &test, &cfg, 0, 0)?;
        let hit: Vec<String> = members
            .iter()
            .map(|m| accuracy(m, &adv.examples).map(|a| format!("{a:.3}")))
            .collect::<Result<_, _>>()?;
        println!("{}: member accuracy on perturbed test set [{}]", cfg.default_name(), hit.join(", "));
    }
    Ok(())
}
