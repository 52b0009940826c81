//! The six-component encoder–decoder and the sharing registry.

mod checkpoint;
mod network;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedTensor};
pub use network::{
    build_model, build_model_with_rng, ComponentParams, Encoded, LstmParams, LstmState, Memory,
    Mode, ModelTask, MultiTaskModel, Owner,
};

/// Model components in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Component {
    /// Source embeddings.
    S,
    /// Bidirectional encoder.
    E,
    /// Attention.
    A,
    /// Target embeddings.
    T,
    /// Decoder.
    D,
    /// Output prediction layer.
    P,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::S,
        Component::E,
        Component::A,
        Component::T,
        Component::D,
        Component::P,
    ];

    pub fn letter(self) -> char {
        b"SEATDP"[self as usize] as char
    }

    pub fn from_letter(c: char) -> Option<Self> {
        "SEATDP".find(c.to_ascii_uppercase()).map(|i| Self::ALL[i])
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// The subset of components shared across all tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SharingConfig {
    bits: u8,
}

impl SharingConfig {
    pub fn none() -> Self {
        Self { bits: 0 }
    }

    pub fn all() -> Self {
        Self { bits: 0b11_1111 }
    }

    pub fn from_components(components: &[Component]) -> Self {
        Self {
            bits: components.iter().fold(0, |acc, c| acc | c.bit()),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut bits = 0u8;
        for ch in text.trim().chars() {
            let c = Component::from_letter(ch).ok_or_else(|| {
                Error::Parse(format!(
                    "unknown component letter {ch:?} in sharing config {text:?}"
                ))
            })?;
            if bits & c.bit() != 0 {
                return Err(Error::Parse(format!(
                    "component {ch:?} listed twice in {text:?}"
                )));
            }
            bits |= c.bit();
        }
        Ok(Self { bits })
    }

    pub fn shares(self, c: Component) -> bool {
        self.bits & c.bit() != 0
    }

    pub fn shared(self) -> Vec<Component> {
        Component::ALL
            .into_iter()
            .filter(|&c| self.shares(c))
            .collect()
    }

    pub fn len(self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.bits == 0
    }

    /// All 64 configurations ordered by size, then lexicographically by
    /// position in S,E,A,T,D,P.
    pub fn enumerate() -> Vec<Self> {
        let mut all: Vec<Self> = (0u8..64).map(|bits| Self { bits }).collect();
        all.sort_by_key(|c| {
            let positions: Vec<usize> = c.shared().iter().map(|&x| x as usize).collect();
            (c.len(), positions)
        });
        all
    }
}

/// Convenience alias for [`SharingConfig::enumerate`].
pub fn enumerate_configs() -> Vec<SharingConfig> {
    SharingConfig::enumerate()
}

impl fmt::Display for SharingConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.shared() {
            write!(f, "{}", c.letter())?;
        }
        Ok(())
    }
}

impl FromStr for SharingConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl TryFrom<String> for SharingConfig {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::parse(&s)
    }
}

impl From<SharingConfig> for String {
    fn from(c: SharingConfig) -> Self {
        c.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub embed_dim: usize,
    /// Encoder output width (both directions together) and decoder width.
    pub hidden_dim: usize,
    pub dropout: f64,
    pub batch_size_main: usize,
    pub aux_tokens_per_batch: usize,
    /// Adam step size.
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
}

fn default_learning_rate() -> f64 {
    1e-3
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            embed_dim: 60,
            hidden_dim: 300,
            dropout: 0.2,
            batch_size_main: 30,
            aux_tokens_per_batch: 10,
            learning_rate: default_learning_rate(),
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("batch_size_main", self.batch_size_main),
            ("aux_tokens_per_batch", self.aux_tokens_per_batch),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Contract(format!("{name} must be positive")));
            }
        }
        if !self.hidden_dim.is_multiple_of(2) {
            return Err(Error::Contract(format!(
                "hidden_dim {} must be even to split across encoder directions",
                self.hidden_dim
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Contract(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Contract(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Small dimensions for tests and desk-scale runs.
    pub fn tiny(embed_dim: usize, hidden_dim: usize) -> Self {
        Self {
            embed_dim,
            hidden_dim,
            ..Self::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_examples() {
        let se = SharingConfig::parse("SE").unwrap();
        assert_eq!(se.shared(), vec![Component::S, Component::E]);
        assert!(SharingConfig::parse("").unwrap().is_empty());
        let seatd = SharingConfig::parse("seatd").unwrap();
        assert!(!seatd.shares(Component::P) && seatd.len() == 5);
        assert_eq!(SharingConfig::parse("DS").unwrap().to_string(), "SD");
    }

    #[test]
    fn parse_errors_name_the_character() {
        let e = SharingConfig::parse("SX").unwrap_err().to_string();
        assert!(e.contains("'X'"), "{e}");
        let e = SharingConfig::parse("SES").unwrap_err().to_string();
        assert!(e.contains("'S'"), "{e}");
    }

    #[test]
    fn enumeration_order() {
        let all = enumerate_configs();
        assert_eq!(all.len(), 64);
        assert!(all[0].is_empty());
        assert_eq!(all[63], SharingConfig::all());
        assert_eq!(all[1].to_string(), "S");
        assert_eq!(all[7].to_string(), "SE");
        assert_eq!(all.iter().filter(|c| c.len() == 4).count(), 15);
        let mut names: Vec<String> = all.iter().map(|c| c.to_string()).collect();
        names.dedup();
        assert_eq!(names.len(), 64);
    }

    #[test]
    fn hyperparams_defaults_and_validation() {
        let hp = HyperParams::default();
        assert_eq!(
            (
                hp.embed_dim,
                hp.hidden_dim,
                hp.batch_size_main,
                hp.aux_tokens_per_batch
            ),
            (60, 300, 30, 10)
        );
        hp.validate().unwrap();
        assert!(HyperParams::tiny(8, 13).validate().is_err());
        assert!(HyperParams { dropout: 1.0, ..hp }.validate().is_err());
    }

    #[test]
    fn serde_uses_canonical_string() {
        let c = SharingConfig::parse("PDS").unwrap();
        assert_eq!(serde_json::to_string(&c).unwrap(), "\"SDP\"");
    }
}
