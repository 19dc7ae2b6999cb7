use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel widths of the HF, MF, LF and (for four branches) 1/8-scale maps.
pub const DEFAULT_BRANCH_CHANNELS: [usize; 4] = [64, 128, 128, 128];

/// Architectural hyperparameters of a FAN network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FanConfig {
    pub num_branches: usize,
    pub cagrdbs_per_branch: usize,
    pub rdbs_per_cagrdb: usize,
    pub rdb_layers: usize,
    pub rdb_growth: usize,
    pub branch_channels: Vec<usize>,
    pub ca_enabled: bool,
    pub nl_enabled: bool,
    pub ca_reduction: usize,
    pub leaky_slope: f64,
    pub scale: usize,
    pub global_bicubic_skip: bool,
    /// Width of the reconstruction trunk after the fusion reduction conv.
    pub fusion_channels: usize,
    /// Largest spatial position count the recorded (trainable) non-local
    /// block accepts.
    pub max_nl_positions: usize,
}

impl Default for FanConfig {
    fn default() -> Self {
        FanConfig::fan(3)
    }
}

impl FanConfig {
    /// FAN-`branches` with the default widths.
    pub fn fan(branches: usize) -> Self {
        FanConfig {
            num_branches: branches,
            cagrdbs_per_branch: 4,
            rdbs_per_cagrdb: 3,
            rdb_layers: 8,
            rdb_growth: 32,
            branch_channels: DEFAULT_BRANCH_CHANNELS[..branches.min(4)].to_vec(),
            ca_enabled: true,
            nl_enabled: true,
            ca_reduction: 16,
            leaky_slope: 0.2,
            scale: 4,
            global_bicubic_skip: false,
            fusion_channels: 64,
            max_nl_positions: 4096,
        }
    }

    /// Small three-branch network for smoke training: one CA-GRDB per
    /// branch, growth 16, narrow widths and the global bicubic skip.
    pub fn reduced() -> Self {
        FanConfig {
            cagrdbs_per_branch: 1,
            rdb_growth: 16,
            branch_channels: vec![16, 32, 32],
            ca_reduction: 4,
            fusion_channels: 16,
            global_bicubic_skip: true,
            ..FanConfig::fan(3)
        }
    }

    /// Input height and width must be multiples of this.
    pub fn input_multiple(&self) -> usize {
        4.max(1 << self.num_branches.saturating_sub(1))
    }

    /// Channels of the concatenated, aligned branch maps.
    pub fn concat_channels(&self) -> usize {
        self.branch_channels.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(1..=4).contains(&self.num_branches) {
            return fail(format!("num_branches must be 1..=4, got {}", self.num_branches));
        }
        if self.branch_channels.len() != self.num_branches {
            return fail(format!(
                "branch_channels lists {} widths for {} branches",
                self.branch_channels.len(),
                self.num_branches
            ));
        }
        if self.scale != 4 {
            return fail(format!("only scale 4 is supported, got {}", self.scale));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return fail(format!("leaky_slope must be in (0, 1), got {}", self.leaky_slope));
        }
        for (name, v) in [
            ("cagrdbs_per_branch", self.cagrdbs_per_branch),
            ("rdbs_per_cagrdb", self.rdbs_per_cagrdb),
            ("rdb_layers", self.rdb_layers),
            ("rdb_growth", self.rdb_growth),
            ("ca_reduction", self.ca_reduction),
            ("fusion_channels", self.fusion_channels),
            ("max_nl_positions", self.max_nl_positions),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if let Some(&c) = self.branch_channels.iter().find(|&&c| c == 0) {
            return fail(format!("branch width {c} must be positive"));
        }
        if self.ca_enabled {
            if let Some(&c) = self.branch_channels.iter().find(|&&c| c % self.ca_reduction != 0) {
                return fail(format!(
                    "branch width {c} is not divisible by ca_reduction {}",
                    self.ca_reduction
                ));
            }
        }
        if self.nl_enabled && self.concat_channels() < 2 {
            return fail("non-local block needs at least 2 channels".into());
        }
        Ok(())
    }
}
