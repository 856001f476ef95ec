use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackKind};
use crate::error::{Error, Result};
use crate::nn::LossKind;

/// Training protocol variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Plain federated averaging, no perturbed examples.
    Fedavg,
    /// Server perturbs its set with FGSM against the freshly aggregated model.
    DecentBaseline,
    /// Ensemble attack on the bias term only.
    DecentBias,
    /// Ensemble attack on the variance term only.
    DecentVariance,
    /// Ensemble attack on bias plus lambda times variance.
    DecentBva,
    /// Clients adversarially train on FGSM versions of their own data.
    FedavgRobustLocal,
    /// `DecentBva` with adversarial local training on top.
    DecentBvaLocal,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::Fedavg,
        Mode::DecentBaseline,
        Mode::DecentBias,
        Mode::DecentVariance,
        Mode::DecentBva,
        Mode::FedavgRobustLocal,
        Mode::DecentBvaLocal,
    ];

    pub fn robust_local(self) -> bool {
        matches!(self, Mode::FedavgRobustLocal | Mode::DecentBvaLocal)
    }

    /// Whether the server runs the ensemble attack on client models.
    pub fn uses_ensemble_attack(self) -> bool {
        matches!(
            self,
            Mode::DecentBias | Mode::DecentVariance | Mode::DecentBva | Mode::DecentBvaLocal
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Fedavg => "fedavg",
            Mode::DecentBaseline => "decent_baseline",
            Mode::DecentBias => "decent_bias",
            Mode::DecentVariance => "decent_variance",
            Mode::DecentBva => "decent_bva",
            Mode::FedavgRobustLocal => "fedavg_robust_local",
            Mode::DecentBvaLocal => "decent_bva_local",
        }
    }
}

/// Per-round protocol parameters shared by server and clients.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundPlan {
    pub fraction: f64,
    pub total_clients: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Training loss.
    pub loss: LossKind,
    pub mode: Mode,
    /// Server attack; its lambda/variance settings are overridden by the
    /// bias-only and variance-only modes. Its epsilon also drives local
    /// adversarial training in the robust-local modes.
    pub attack: AttackConfig,
    /// Keep each client's momentum buffer between rounds.
    pub persist_momentum: bool,
}

impl RoundPlan {
    pub fn new(mode: Mode, total_clients: usize, attack: AttackConfig) -> Self {
        Self {
            fraction: 0.1,
            total_clients,
            local_epochs: 1,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            loss: LossKind::CrossEntropy,
            mode,
            attack,
            persist_momentum: false,
        }
    }

    /// `max(floor(F * K), 1)`.
    pub fn sampled_count(&self) -> usize {
        let m = (self.fraction * self.total_clients as f64 + 1e-9).floor() as usize;
        m.clamp(1, self.total_clients.max(1))
    }

    /// The attack the server runs after collecting updates, if any.
    pub fn server_attack(&self) -> Option<AttackConfig> {
        let mut cfg = self.attack.clone();
        match self.mode {
            Mode::Fedavg | Mode::FedavgRobustLocal => return None,
            Mode::DecentBaseline => {
                return Some(AttackConfig {
                    clip: self.attack.clip,
                    loss: self.attack.loss,
                    ..AttackConfig::new(AttackKind::Fgsm, self.attack.epsilon)
                })
            }
            Mode::DecentBias => {
                cfg.lambda = 0.0;
                cfg.variance_only = false;
            }
            Mode::DecentVariance => cfg.variance_only = true,
            Mode::DecentBva | Mode::DecentBvaLocal => {}
        }
        Some(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Plan(m));
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad(format!("fraction must lie in (0, 1], got {}", self.fraction));
        }
        if self.total_clients == 0 {
            return bad("at least one client is required".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        self.attack.validate()?;
        if self.mode.uses_ensemble_attack() && !self.attack.kind.uses_ensemble() {
            return bad(format!(
                "mode {} needs a bv_fgsm or bv_pgd server attack, got {:?}",
                self.mode.name(),
                self.attack.kind
            ));
        }
        Ok(())
    }
}
