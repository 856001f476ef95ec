use rayon::prelude::*;

use super::config::NamedAttack;
use crate::attacks::{attack_set, AttackTarget};
use crate::data::LabeledSet;
use crate::error::Result;
use crate::nn::ModelState;

/// Clean accuracy plus one robust accuracy per attack, in attack order.
#[derive(Debug, Clone, PartialEq)]
pub struct Accuracy {
    pub clean: f64,
    pub robust: Vec<(String, f64)>,
}

/// Fraction of `set` whose argmax prediction matches the label; 0 when empty.
pub fn accuracy(model: &ModelState, set: &LabeledSet) -> Result<f64> {
    if set.is_empty() {
        return Ok(0.0);
    }
    let hits = (0..set.len())
        .into_par_iter()
        .map(|i| Ok(usize::from(model.predict(&set.features()[i])?.argmax() == set.labels()[i])))
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / set.len() as f64)
}

/// Evaluates `model` on `test` as is and under each attack. `seed` feeds
/// attacks with a random start.
pub fn evaluate(model: &ModelState, test: &LabeledSet, attacks: &[NamedAttack], seed: u64) -> Result<Accuracy> {
    let clean = accuracy(model, test)?;
    let mut robust = Vec::with_capacity(attacks.len());
    for (i, a) in attacks.iter().enumerate() {
        let adv = attack_set(AttackTarget::Model(model), test, &a.config, 0, crate::seed::derive(seed, &[i as u64]))?;
        let acc = accuracy(model, &adv.examples)?;
        if !a.config.random_start && acc > clean + 1e-9 {
            log::warn!("{}: robust accuracy {acc} exceeds clean accuracy {clean}", a.name);
        }
        robust.push((a.name.clone(), acc));
    }
    Ok(Accuracy { clean, robust })
}
