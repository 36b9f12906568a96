//! The decoder: cascaded fusion (CFM), camouflage identification (CIM) and
//! similarity aggregation (SAM) modules.

mod cfm;
mod cim;
mod sam;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cfm::Cfm;
pub use cim::{ChannelAttention, Cim, SpatialAttention};
pub use sam::{NodeReasoning, Sam, SamTrace};

/// Which decoder wiring to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoCfm,
    NoCim,
    NoSam,
    SamNogcn,
    SamConv,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 6] = [
        AblationVariant::Full,
        AblationVariant::NoCfm,
        AblationVariant::NoCim,
        AblationVariant::NoSam,
        AblationVariant::SamNogcn,
        AblationVariant::SamConv,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoCfm => "no_cfm",
            AblationVariant::NoCim => "no_cim",
            AblationVariant::NoSam => "no_sam",
            AblationVariant::SamNogcn => "sam_nogcn",
            AblationVariant::SamConv => "sam_conv",
        }
    }

    /// Column heading used in ablation tables.
    pub fn column(self) -> &'static str {
        match self {
            AblationVariant::Full => "Final",
            AblationVariant::NoCfm => "w/o CFM",
            AblationVariant::NoCim => "w/o CIM",
            AblationVariant::NoSam => "w/o SAM",
            AblationVariant::SamNogcn => "w/o GCN",
            AblationVariant::SamConv => "w/ Conv",
        }
    }

    pub fn uses_cfm(self) -> bool {
        self != AblationVariant::NoCfm
    }

    pub fn uses_cim(self) -> bool {
        self != AblationVariant::NoCim
    }

    pub fn uses_sam(self) -> bool {
        self != AblationVariant::NoSam
    }

    pub fn node_reasoning(self) -> NodeReasoning {
        match self {
            AblationVariant::SamNogcn => NodeReasoning::Identity,
            AblationVariant::SamConv => NodeReasoning::Conv,
            _ => NodeReasoning::Gcn,
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationVariant::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown ablation variant '{s}' (expected one of full, no_cfm, no_cim, no_sam, sam_nogcn, sam_conv)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    /// Width of X2', X3', X4', T1 and Z.
    pub channel: usize,
    /// Side of the adaptive pool applied before the center crop in SAM.
    pub sam_pool: usize,
    /// Side of the cropped node grid; the graph has `sam_nodes^2` nodes.
    pub sam_nodes: usize,
    /// Node state dimension (channels of Q and K).
    pub sam_state: usize,
    /// Channel reduction ratio inside the channel attention.
    pub cim_reduction: usize,
    pub variant: AblationVariant,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            channel: 32,
            sam_pool: 6,
            sam_nodes: 4,
            sam_state: 16,
            cim_reduction: 16,
            variant: AblationVariant::Full,
        }
    }
}

impl DecoderConfig {
    pub fn desk() -> Self {
        Self {
            channel: 16,
            sam_state: 8,
            cim_reduction: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self, low_level_channels: usize) -> Result<()> {
        if self.channel < 2 {
            return Err(Error::Config(format!(
                "decoder channel must be >= 2 (SAM selects the second softmax channel), got {}",
                self.channel
            )));
        }
        if self.sam_nodes == 0 || self.sam_nodes > self.sam_pool {
            return Err(Error::Config(format!(
                "sam_nodes {} must be in 1..={}",
                self.sam_nodes, self.sam_pool
            )));
        }
        if self.sam_state == 0 || self.sam_state > self.channel {
            return Err(Error::Config(format!(
                "sam_state {} must be in 1..={}",
                self.sam_state, self.channel
            )));
        }
        if self.cim_reduction == 0 || !low_level_channels.is_multiple_of(self.cim_reduction) {
            return Err(Error::Config(format!(
                "{low_level_channels} low-level channels not divisible by reduction {}",
                self.cim_reduction
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_tags_round_trip() {
        for v in AblationVariant::ALL {
            assert_eq!(v.tag().parse::<AblationVariant>().unwrap(), v);
        }
        assert!(matches!("sam_gat".parse::<AblationVariant>(), Err(Error::Config(_))));
    }

    #[test]
    fn config_invariants() {
        let ok = DecoderConfig::default();
        ok.validate(64).unwrap();
        assert!(DecoderConfig { channel: 1, sam_state: 1, ..ok.clone() }.validate(64).is_err());
        assert!(DecoderConfig { sam_nodes: 7, ..ok.clone() }.validate(64).is_err());
        assert!(DecoderConfig { sam_state: 33, ..ok.clone() }.validate(64).is_err());
        assert!(ok.validate(40).is_err());
    }
}
