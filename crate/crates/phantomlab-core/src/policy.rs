//! Flaw and mitigation toggles that determine cloud guard behavior.
//!
//! A [`PolicyConfig`] names the platform type, the design flaws left open,
//! and the mitigations deployed. A mitigation, when present, overrides the
//! corresponding flaw: M1 (strict device authentication) overrides F1.1
//! identity-forgery acceptance, M2 (comprehensive authorization checking)
//! overrides F3 and F4, and M3 (state-transition validity enforcement)
//! overrides the whole F1.x family and F2.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::states::PlatformType;

/// The identified guard flaws.
///
/// * `F1_1` — cloud accepts device registration outside S1 (Type I), leaking
///   the device ID for any known identity.
/// * `F1_2` — cloud accepts device-side binding while running (Type II),
///   overwriting ownership.
/// * `F1_3` — cloud accepts device login while running, evicting the live
///   connection.
/// * `F2` — unbinding leaves the registration and any live connection behind
///   (dangling device).
/// * `F3` — no account-based authorization check on device login.
/// * `F4` — device-side unbinding carries no user credentials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Flaw {
    #[serde(rename = "F1.1", alias = "F1_1", alias = "f1.1", alias = "f1_1")]
    F1_1,
    #[serde(rename = "F1.2", alias = "F1_2", alias = "f1.2", alias = "f1_2")]
    F1_2,
    #[serde(rename = "F1.3", alias = "F1_3", alias = "f1.3", alias = "f1_3")]
    F1_3,
    #[serde(rename = "F2", alias = "f2")]
    F2,
    #[serde(rename = "F3", alias = "f3")]
    F3,
    #[serde(rename = "F4", alias = "f4")]
    F4,
}

impl Flaw {
    pub const ALL: [Flaw; 6] = [Flaw::F1_1, Flaw::F1_2, Flaw::F1_3, Flaw::F2, Flaw::F3, Flaw::F4];

    pub fn name(self) -> &'static str {
        match self {
            Flaw::F1_1 => "F1.1",
            Flaw::F1_2 => "F1.2",
            Flaw::F1_3 => "F1.3",
            Flaw::F2 => "F2",
            Flaw::F3 => "F3",
            Flaw::F4 => "F4",
        }
    }
}

impl fmt::Display for Flaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Flaw {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', ".").as_str() {
            "f1.1" => Ok(Flaw::F1_1),
            "f1.2" => Ok(Flaw::F1_2),
            "f1.3" => Ok(Flaw::F1_3),
            "f2" => Ok(Flaw::F2),
            "f3" => Ok(Flaw::F3),
            "f4" => Ok(Flaw::F4),
            _ => Err(ConfigError::UnknownFlaw(s.to_owned())),
        }
    }
}

/// The defensive policy families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mitigation {
    /// Strict device authentication: per-device secret checked on every
    /// device request, plus salted device-ID generation.
    #[serde(rename = "M1", alias = "m1")]
    M1DeviceAuth,
    /// Comprehensive authorization checking on device-side requests.
    #[serde(rename = "M2", alias = "m2")]
    M2AuthzChecks,
    /// State-transition validity enforcement and three-entity synchronization.
    #[serde(rename = "M3", alias = "m3")]
    M3StateGuard,
}

impl Mitigation {
    pub const ALL: [Mitigation; 3] = [
        Mitigation::M1DeviceAuth,
        Mitigation::M2AuthzChecks,
        Mitigation::M3StateGuard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mitigation::M1DeviceAuth => "M1",
            Mitigation::M2AuthzChecks => "M2",
            Mitigation::M3StateGuard => "M3",
        }
    }
}

impl fmt::Display for Mitigation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mitigation {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(Mitigation::M1DeviceAuth),
            "m2" => Ok(Mitigation::M2AuthzChecks),
            "m3" => Ok(Mitigation::M3StateGuard),
            _ => Err(ConfigError::UnknownMitigation(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("flaw {flaw} only applies to {expected:?} platforms")]
    FlawPlatformMismatch { flaw: Flaw, expected: PlatformType },
    #[error("unknown flaw name: {0}")]
    UnknownFlaw(String),
    #[error("unknown mitigation name: {0}")]
    UnknownMitigation(String),
    #[error("unparsable policy config: {0}")]
    Unparsable(String),
}

/// Cloud guard configuration: platform type plus flaw and mitigation toggles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub platform: PlatformType,
    #[serde(default)]
    pub flaws: BTreeSet<Flaw>,
    #[serde(default)]
    pub mitigations: BTreeSet<Mitigation>,
}

impl PolicyConfig {
    pub fn new(
        platform: PlatformType,
        flaws: impl IntoIterator<Item = Flaw>,
        mitigations: impl IntoIterator<Item = Mitigation>,
    ) -> Result<Self, ConfigError> {
        let config = PolicyConfig {
            platform,
            flaws: flaws.into_iter().collect(),
            mitigations: mitigations.into_iter().collect(),
        };
        config.validate()?;
        Ok(config)
    }

    /// Rejects flaw toggles that are meaningless for the platform type.
    pub fn validate(&self) -> Result<(), ConfigError> {
        for flaw in &self.flaws {
            let expected = match flaw {
                Flaw::F1_1 | Flaw::F4 => Some(PlatformType::TypeI),
                Flaw::F1_2 => Some(PlatformType::TypeII),
                _ => None,
            };
            if let Some(expected) = expected {
                if self.platform != expected {
                    return Err(ConfigError::FlawPlatformMismatch {
                        flaw: *flaw,
                        expected,
                    });
                }
            }
        }
        Ok(())
    }

    /// Loads a policy from structured text (TOML with keys `platform`,
    /// `flaws`, `mitigations`).
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: PolicyConfig =
            toml::from_str(text).map_err(|e| ConfigError::Unparsable(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn has_mitigation(&self, m: Mitigation) -> bool {
        self.mitigations.contains(&m)
    }

    /// Whether a flaw is toggled on and not overridden by a mitigation.
    pub fn flaw_active(&self, flaw: Flaw) -> bool {
        if !self.flaws.contains(&flaw) {
            return false;
        }
        let overridden = match flaw {
            Flaw::F1_1 => {
                self.has_mitigation(Mitigation::M1DeviceAuth)
                    || self.has_mitigation(Mitigation::M3StateGuard)
            }
            Flaw::F1_2 | Flaw::F1_3 | Flaw::F2 => self.has_mitigation(Mitigation::M3StateGuard),
            Flaw::F3 | Flaw::F4 => self.has_mitigation(Mitigation::M2AuthzChecks),
        };
        !overridden
    }

    /// Flaws currently active after mitigation overrides.
    pub fn active_flaws(&self) -> BTreeSet<Flaw> {
        self.flaws
            .iter()
            .copied()
            .filter(|f| self.flaw_active(*f))
            .collect()
    }
}

/// Renders a flaw set as `{F1.1, F1.3}` for summaries.
pub fn format_flaw_set(flaws: &BTreeSet<Flaw>) -> String {
    let names: Vec<&str> = flaws.iter().map(|f| f.name()).collect();
    format!("{{{}}}", names.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn platform_mismatched_flaws_are_rejected_at_load() {
        assert!(matches!(
            PolicyConfig::new(PlatformType::TypeII, [Flaw::F1_1], []),
            Err(ConfigError::FlawPlatformMismatch { .. })
        ));
        assert!(matches!(
            PolicyConfig::new(PlatformType::TypeI, [Flaw::F1_2], []),
            Err(ConfigError::FlawPlatformMismatch { .. })
        ));
        assert!(matches!(
            PolicyConfig::new(PlatformType::TypeII, [Flaw::F4], []),
            Err(ConfigError::FlawPlatformMismatch { .. })
        ));
        assert!(PolicyConfig::new(PlatformType::TypeII, [Flaw::F2], []).is_ok());
    }

    #[test]
    fn mitigations_override_their_flaws() {
        let config = PolicyConfig::new(
            PlatformType::TypeI,
            [Flaw::F1_1, Flaw::F1_3, Flaw::F2, Flaw::F3, Flaw::F4],
            [Mitigation::M2AuthzChecks],
        )
        .unwrap();
        assert!(config.flaw_active(Flaw::F1_1));
        assert!(config.flaw_active(Flaw::F2));
        assert!(!config.flaw_active(Flaw::F3));
        assert!(!config.flaw_active(Flaw::F4));

        let config = PolicyConfig::new(
            PlatformType::TypeI,
            [Flaw::F1_1, Flaw::F1_3, Flaw::F2, Flaw::F3, Flaw::F4],
            [Mitigation::M3StateGuard],
        )
        .unwrap();
        assert!(!config.flaw_active(Flaw::F1_1));
        assert!(!config.flaw_active(Flaw::F1_3));
        assert!(!config.flaw_active(Flaw::F2));
        assert!(config.flaw_active(Flaw::F3));
    }

    #[test]
    fn toml_round_trip() {
        let config = PolicyConfig::from_toml(
            r#"
            platform = "typei"
            flaws = ["F1.1", "F2"]
            mitigations = ["M1"]
            "#,
        )
        .unwrap();
        assert_eq!(config.platform, PlatformType::TypeI);
        assert!(config.flaws.contains(&Flaw::F2));
        assert!(config.has_mitigation(Mitigation::M1DeviceAuth));
        assert!(!config.flaw_active(Flaw::F1_1));
    }

    #[test]
    fn flaw_names_parse_in_both_spellings() {
        assert_eq!("f1_1".parse::<Flaw>().unwrap(), Flaw::F1_1);
        assert_eq!("F1.3".parse::<Flaw>().unwrap(), Flaw::F1_3);
        assert!("f9".parse::<Flaw>().is_err());
    }
}
