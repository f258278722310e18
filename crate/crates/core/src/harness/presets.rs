//! Configurations shipped with the repository under `presets/`.

use super::config::{ConfigError, SimConfig};

pub const PRESETS: [(&str, &str); 6] = [
    ("paper-baseline", include_str!("../../../../presets/paper-baseline.toml")),
    ("baseline-64bit", include_str!("../../../../presets/baseline-64bit.toml")),
    ("baseline-128bit", include_str!("../../../../presets/baseline-128bit.toml")),
    ("desk-scale", include_str!("../../../../presets/desk-scale.toml")),
    ("fig6-permissions", include_str!("../../../../presets/fig6-permissions.toml")),
    ("sharing-observer", include_str!("../../../../presets/sharing-observer.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn preset(name: &str) -> Result<SimConfig, ConfigError> {
    let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
        ConfigError::Invalid(format!(
            "unknown preset {name:?} (known: {})",
            names().collect::<Vec<_>>().join(", ")
        ))
    })?;
    SimConfig::from_toml(text)
}
