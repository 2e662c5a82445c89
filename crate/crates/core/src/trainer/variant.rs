//! Named algorithm variants expressed as a small flag structure.
//!
//! Every shipped algorithm — the hierarchical method, the sequential
//! baseline, independent learners, and the ablations — is one setting of six
//! orthogonal flags plus an optional pinned gradient-step schedule. Presets
//! are addressable by name from the CLI.

use crate::error::{CoreError, Result};
use crate::sac::LogpMode;

/// Actor architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActorKind {
    /// Feature extractor + parallel subnetworks + cross-attention head.
    Hlc,
    /// Plain two-layer MLP head.
    Mlp,
}

/// How an agent's policy updates are applied within one actor pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    /// One optimizer step per associated critic, ascending by receptive
    /// field, resampling the agent's action between steps.
    Sequential,
    /// All associated critics' gradients computed at the same pre-update
    /// policy on one shared sample, averaged, and applied once.
    AveragedGradients,
}

/// Which critic groups the trainer builds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticSet {
    /// One local critic per agent plus the full-team critic.
    LocalAndCentralized,
    /// Only the full-team critic (sequential-baseline setting).
    CentralizedOnly,
    /// Only per-agent local critics (independent learners).
    LocalOnly,
}

/// Architecture of critics spanning more than one agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CentralizedKind {
    /// Per-member embedders into a transformer encoder with a pooled head.
    Transformer,
    /// MLP over the flat concatenation of member observations and actions.
    MlpConcat,
}

/// What each agent's policy network reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActorInput {
    /// The agent's own observation.
    LocalObs,
    /// The concatenation of every agent's observation.
    GlobalConcat,
}

/// A complete algorithm variant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariantSpec {
    pub name: String,
    pub actor_kind: ActorKind,
    pub logp_mode: LogpMode,
    pub update_mode: UpdateMode,
    pub critic_set: CriticSet,
    pub centralized_kind: CentralizedKind,
    pub actor_input: ActorInput,
    /// Pinned gradient steps per train step; `None` defers to the run
    /// configuration.
    pub g_steps: Option<usize>,
    /// Pinned actor update interval; `None` defers to the run configuration.
    pub f_interval: Option<usize>,
}

/// Preset names in CLI listing order.
pub const VARIANT_NAMES: [&str; 10] = [
    "hlc",
    "hlc_simple",
    "hlc_singlelogp",
    "hlc_simple_singlelogp",
    "hlc_average",
    "hasac",
    "hasac_g4i2",
    "hasac_globalcritic",
    "hasac_global",
    "isac",
];

impl VariantSpec {
    /// Looks up a named preset.
    pub fn preset(name: &str) -> Result<VariantSpec> {
        let base_hlc = |name: &str| VariantSpec {
            name: name.to_string(),
            actor_kind: ActorKind::Hlc,
            logp_mode: LogpMode::Averaged,
            update_mode: UpdateMode::Sequential,
            critic_set: CriticSet::LocalAndCentralized,
            centralized_kind: CentralizedKind::Transformer,
            actor_input: ActorInput::LocalObs,
            g_steps: None,
            f_interval: None,
        };
        let base_hasac = |name: &str| VariantSpec {
            name: name.to_string(),
            actor_kind: ActorKind::Mlp,
            logp_mode: LogpMode::Single,
            update_mode: UpdateMode::Sequential,
            critic_set: CriticSet::CentralizedOnly,
            centralized_kind: CentralizedKind::Transformer,
            actor_input: ActorInput::LocalObs,
            g_steps: Some(1),
            f_interval: Some(1),
        };
        let v = match name {
            "hlc" => base_hlc(name),
            "hlc_simple" => VariantSpec {
                actor_kind: ActorKind::Mlp,
                ..base_hlc(name)
            },
            "hlc_singlelogp" => VariantSpec {
                logp_mode: LogpMode::Single,
                ..base_hlc(name)
            },
            "hlc_simple_singlelogp" => VariantSpec {
                actor_kind: ActorKind::Mlp,
                logp_mode: LogpMode::Single,
                ..base_hlc(name)
            },
            "hlc_average" => VariantSpec {
                update_mode: UpdateMode::AveragedGradients,
                ..base_hlc(name)
            },
            "hasac" => base_hasac(name),
            "hasac_g4i2" => VariantSpec {
                g_steps: Some(4),
                f_interval: Some(2),
                ..base_hasac(name)
            },
            "hasac_globalcritic" => VariantSpec {
                centralized_kind: CentralizedKind::MlpConcat,
                ..base_hasac(name)
            },
            "hasac_global" => VariantSpec {
                centralized_kind: CentralizedKind::MlpConcat,
                actor_input: ActorInput::GlobalConcat,
                ..base_hasac(name)
            },
            "isac" => VariantSpec {
                critic_set: CriticSet::LocalOnly,
                ..base_hasac(name)
            },
            _ => {
                return Err(CoreError::UnknownName {
                    kind: "algorithm",
                    name: name.to_string(),
                    available: VARIANT_NAMES.join(", "),
                })
            }
        };
        Ok(v)
    }

    /// Rejects incoherent flag combinations.
    pub fn validate(&self) -> Result<()> {
        if self.actor_input == ActorInput::GlobalConcat && self.actor_kind == ActorKind::Hlc {
            return Err(CoreError::Config(
                "global-concatenation actor input requires the MLP actor".to_string(),
            ));
        }
        if let Some(g) = self.g_steps {
            if g == 0 {
                return Err(CoreError::Config("g_steps must be at least 1".to_string()));
            }
        }
        if let Some(f) = self.f_interval {
            if f == 0 {
                return Err(CoreError::Config(
                    "f_interval must be at least 1".to_string(),
                ));
            }
        }
        Ok(())
    }

    /// Whether per-agent local critics exist.
    pub fn uses_local_critics(&self) -> bool {
        matches!(
            self.critic_set,
            CriticSet::LocalAndCentralized | CriticSet::LocalOnly
        )
    }

    /// Whether the full-team critic exists.
    pub fn uses_centralized_critic(&self) -> bool {
        matches!(
            self.critic_set,
            CriticSet::LocalAndCentralized | CriticSet::CentralizedOnly
        )
    }

    /// Default transformer feed-forward width for the team critic: the
    /// hierarchical family uses 512, the sequential baseline family 256.
    pub fn default_lead_ffn(&self) -> usize {
        match self.critic_set {
            CriticSet::LocalAndCentralized => 512,
            _ => 256,
        }
    }

    /// One-line human-readable summary for CLI listings.
    pub fn describe(&self) -> String {
        let mut parts: Vec<String> = Vec::new();
        parts.push(
            match self.actor_kind {
                ActorKind::Hlc => "attention actor",
                ActorKind::Mlp => "mlp actor",
            }
            .to_string(),
        );
        if self.actor_input == ActorInput::GlobalConcat {
            parts.push("global obs input".to_string());
        }
        parts.push(
            match self.critic_set {
                CriticSet::LocalAndCentralized => "local + team critics",
                CriticSet::CentralizedOnly => "team critic only",
                CriticSet::LocalOnly => "local critics only",
            }
            .to_string(),
        );
        if self.critic_set != CriticSet::LocalOnly
            && self.centralized_kind == CentralizedKind::MlpConcat
        {
            parts.push("concat-mlp team critic".to_string());
        }
        parts.push(
            match self.update_mode {
                UpdateMode::Sequential => "sequential policy updates",
                UpdateMode::AveragedGradients => "averaged policy updates",
            }
            .to_string(),
        );
        if self.logp_mode == LogpMode::Averaged {
            parts.push("joint entropy in actor loss".to_string());
        }
        if let (Some(g), Some(f)) = (self.g_steps, self.f_interval) {
            parts.push(format!("G={g} F={f}"));
        }
        parts.join(", ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_named_presets_resolve_and_validate() {
        for name in VARIANT_NAMES {
            let v = VariantSpec::preset(name).unwrap();
            assert_eq!(v.name, name);
            v.validate().unwrap();
        }
    }

    #[test]
    fn unknown_name_lists_the_alternatives() {
        let err = VariantSpec::preset("sacq").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sacq"));
        assert!(msg.contains("hlc_average"));
        assert!(msg.contains("isac"));
    }

    #[test]
    fn preset_flags_match_their_definitions() {
        let hlc = VariantSpec::preset("hlc").unwrap();
        assert_eq!(hlc.actor_kind, ActorKind::Hlc);
        assert_eq!(hlc.logp_mode, LogpMode::Averaged);
        assert_eq!(hlc.update_mode, UpdateMode::Sequential);
        assert_eq!(hlc.critic_set, CriticSet::LocalAndCentralized);
        assert_eq!(hlc.centralized_kind, CentralizedKind::Transformer);
        assert_eq!(hlc.actor_input, ActorInput::LocalObs);
        assert_eq!(hlc.g_steps, None);
        assert_eq!(hlc.f_interval, None);

        let simple = VariantSpec::preset("hlc_simple").unwrap();
        assert_eq!(simple.actor_kind, ActorKind::Mlp);
        assert_eq!(simple.logp_mode, LogpMode::Averaged);

        let single = VariantSpec::preset("hlc_singlelogp").unwrap();
        assert_eq!(single.actor_kind, ActorKind::Hlc);
        assert_eq!(single.logp_mode, LogpMode::Single);

        let both = VariantSpec::preset("hlc_simple_singlelogp").unwrap();
        assert_eq!(both.actor_kind, ActorKind::Mlp);
        assert_eq!(both.logp_mode, LogpMode::Single);

        let avg = VariantSpec::preset("hlc_average").unwrap();
        assert_eq!(avg.update_mode, UpdateMode::AveragedGradients);
        assert_eq!(avg.critic_set, CriticSet::LocalAndCentralized);

        let hasac = VariantSpec::preset("hasac").unwrap();
        assert_eq!(hasac.actor_kind, ActorKind::Mlp);
        assert_eq!(hasac.logp_mode, LogpMode::Single);
        assert_eq!(hasac.critic_set, CriticSet::CentralizedOnly);
        assert_eq!(hasac.centralized_kind, CentralizedKind::Transformer);
        assert_eq!(hasac.g_steps, Some(1));
        assert_eq!(hasac.f_interval, Some(1));

        let g4 = VariantSpec::preset("hasac_g4i2").unwrap();
        assert_eq!(g4.g_steps, Some(4));
        assert_eq!(g4.f_interval, Some(2));
        assert_eq!(g4.critic_set, CriticSet::CentralizedOnly);

        let gc = VariantSpec::preset("hasac_globalcritic").unwrap();
        assert_eq!(gc.centralized_kind, CentralizedKind::MlpConcat);
        assert_eq!(gc.actor_input, ActorInput::LocalObs);

        let gg = VariantSpec::preset("hasac_global").unwrap();
        assert_eq!(gg.centralized_kind, CentralizedKind::MlpConcat);
        assert_eq!(gg.actor_input, ActorInput::GlobalConcat);

        let isac = VariantSpec::preset("isac").unwrap();
        assert_eq!(isac.critic_set, CriticSet::LocalOnly);
        assert_eq!(isac.g_steps, Some(1));
        assert!(!isac.uses_centralized_critic());
        assert!(isac.uses_local_critics());
        assert!(!hasac.uses_local_critics());
    }

    #[test]
    fn global_input_with_hierarchical_actor_is_rejected() {
        let mut v = VariantSpec::preset("hasac_global").unwrap();
        v.actor_kind = ActorKind::Hlc;
        assert!(v.validate().is_err());
    }

    #[test]
    fn lead_ffn_default_follows_the_family() {
        assert_eq!(VariantSpec::preset("hlc").unwrap().default_lead_ffn(), 512);
        assert_eq!(
            VariantSpec::preset("hlc_simple").unwrap().default_lead_ffn(),
            512
        );
        assert_eq!(
            VariantSpec::preset("hasac").unwrap().default_lead_ffn(),
            256
        );
    }
}
