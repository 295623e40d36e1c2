use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linear::TrainConfig;
use crate::tree::{ForestConfig, GbtConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeFamily {
    Logistic,
    LinearSvm,
    RandomForest,
    Gbt,
}

impl ProbeFamily {
    pub const ALL: [ProbeFamily; 4] = [
        ProbeFamily::Logistic,
        ProbeFamily::LinearSvm,
        ProbeFamily::Gbt,
        ProbeFamily::RandomForest,
    ];

    pub fn key(self) -> &'static str {
        match self {
            ProbeFamily::Logistic => "logistic",
            ProbeFamily::LinearSvm => "linear_svm",
            ProbeFamily::RandomForest => "random_forest",
            ProbeFamily::Gbt => "gbt",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.key() == key)
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ProbeFamily::Logistic => "Logistic",
            ProbeFamily::LinearSvm => "Linear SVM",
            ProbeFamily::RandomForest => "Random Forest",
            ProbeFamily::Gbt => "GBT",
        }
    }

    pub fn is_linear(self) -> bool {
        matches!(self, ProbeFamily::Logistic | ProbeFamily::LinearSvm)
    }
}

impl fmt::Display for ProbeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ProbeConfig {
    Logistic(TrainConfig),
    LinearSvm(TrainConfig),
    RandomForest(ForestConfig),
    Gbt(GbtConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub name: String,
    pub config: ProbeConfig,
}

impl ProbeSpec {
    pub fn new(name: impl Into<String>, config: ProbeConfig) -> Self {
        ProbeSpec {
            name: name.into(),
            config,
        }
    }

    /// The family's defaults, named by its display name.
    pub fn default_for(family: ProbeFamily) -> Self {
        let config = match family {
            ProbeFamily::Logistic => ProbeConfig::Logistic(TrainConfig::default()),
            ProbeFamily::LinearSvm => ProbeConfig::LinearSvm(TrainConfig::default()),
            ProbeFamily::RandomForest => ProbeConfig::RandomForest(ForestConfig::default()),
            ProbeFamily::Gbt => ProbeConfig::Gbt(GbtConfig::default()),
        };
        ProbeSpec::new(family.display_name(), config)
    }

    pub fn logistic() -> Self {
        Self::default_for(ProbeFamily::Logistic)
    }

    pub fn linear_svm() -> Self {
        Self::default_for(ProbeFamily::LinearSvm)
    }

    pub fn random_forest() -> Self {
        Self::default_for(ProbeFamily::RandomForest)
    }

    pub fn gbt() -> Self {
        Self::default_for(ProbeFamily::Gbt)
    }

    pub fn family(&self) -> ProbeFamily {
        match self.config {
            ProbeConfig::Logistic(_) => ProbeFamily::Logistic,
            ProbeConfig::LinearSvm(_) => ProbeFamily::LinearSvm,
            ProbeConfig::RandomForest(_) => ProbeFamily::RandomForest,
            ProbeConfig::Gbt(_) => ProbeFamily::Gbt,
        }
    }

    pub fn linear_config(&self) -> Option<&TrainConfig> {
        match &self.config {
            ProbeConfig::Logistic(c) | ProbeConfig::LinearSvm(c) => Some(c),
            _ => None,
        }
    }

    /// Sets the seed of every randomised component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self.config {
            ProbeConfig::Logistic(c) | ProbeConfig::LinearSvm(c) => c.seed = seed,
            ProbeConfig::RandomForest(c) => c.seed = seed,
            ProbeConfig::Gbt(c) => c.seed = seed,
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        match &self.config {
            ProbeConfig::Logistic(c) | ProbeConfig::LinearSvm(c) => c.validate(),
            ProbeConfig::RandomForest(c) => c.validate(),
            ProbeConfig::Gbt(c) => c.validate(),
        }
    }
}
