use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "sMRI")]
    Smri,
    #[serde(rename = "MD-DTI")]
    MdDti,
}

impl Modality {
    pub fn short(self) -> &'static str {
        match self {
            Modality::Smri => "sMRI",
            Modality::MdDti => "DTI",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Smri => "sMRI",
            Modality::MdDti => "MD-DTI",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiName {
    LeftHippocampus,
    RightHippocampus,
    /// Left ROI plus the mirror-flipped right ROI, pooled into one pipeline.
    #[serde(rename = "merged_LR")]
    MergedLr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PipelineInput {
    pub modality: Modality,
    pub roi: RoiName,
}

impl fmt::Display for PipelineInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = match self.roi {
            RoiName::LeftHippocampus => "L",
            RoiName::RightHippocampus => "R",
            RoiName::MergedLr => "LR",
        };
        write!(f, "{}_{}", self.modality.short(), side)
    }
}

/// The four supported pipeline input sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InputMode {
    #[serde(rename = "DTI_L+DTI_R")]
    DtiLr,
    #[serde(rename = "sMRI_L+sMRI_R")]
    SmriLr,
    #[serde(rename = "sMRI_L+sMRI_R+DTI_L+DTI_R")]
    Fusion,
    #[serde(rename = "sMRI_LR+DTI_LR")]
    MergedFusion,
}

impl InputMode {
    pub const ALL: [InputMode; 4] = [
        InputMode::DtiLr,
        InputMode::SmriLr,
        InputMode::Fusion,
        InputMode::MergedFusion,
    ];

    pub fn pipelines(self) -> Vec<PipelineInput> {
        use Modality::*;
        use RoiName::*;
        let p = |modality, roi| PipelineInput { modality, roi };
        match self {
            InputMode::DtiLr => vec![p(MdDti, LeftHippocampus), p(MdDti, RightHippocampus)],
            InputMode::SmriLr => vec![p(Smri, LeftHippocampus), p(Smri, RightHippocampus)],
            InputMode::Fusion => vec![
                p(Smri, LeftHippocampus),
                p(Smri, RightHippocampus),
                p(MdDti, LeftHippocampus),
                p(MdDti, RightHippocampus),
            ],
            InputMode::MergedFusion => vec![p(Smri, MergedLr), p(MdDti, MergedLr)],
        }
    }

    /// True when each subject sample yields a left and a mirrored-right network sample.
    pub fn is_merged(self) -> bool {
        self == InputMode::MergedFusion
    }

    pub fn modalities(self) -> Vec<Modality> {
        let mut m: Vec<Modality> = self.pipelines().iter().map(|p| p.modality).collect();
        m.sort();
        m.dedup();
        m
    }

    pub fn label(self) -> &'static str {
        match self {
            InputMode::DtiLr => "DTI_L+DTI_R",
            InputMode::SmriLr => "sMRI_L+sMRI_R",
            InputMode::Fusion => "sMRI_L+sMRI_R+DTI_L+DTI_R",
            InputMode::MergedFusion => "sMRI_LR+DTI_LR",
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for InputMode {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        InputMode::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown input mode {s:?}")))
    }
}

/// Architecture presets: number of conv layers, kernel sizes, filter counts, FC widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Preset {
    C1,
    C2,
    C3,
    C4,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::C1, Preset::C2, Preset::C3, Preset::C4];

    pub fn kernel_sizes(self) -> &'static [usize] {
        match self {
            Preset::C1 => &[5, 4, 3, 3],
            Preset::C2 => &[5, 4, 3, 3, 3],
            Preset::C3 => &[7, 6, 5, 4, 3],
            Preset::C4 => &[7, 6, 5, 4, 3, 3],
        }
    }

    pub fn filter_counts(self) -> &'static [usize] {
        match self {
            Preset::C1 => &[16, 32, 64, 128],
            Preset::C2 => &[16, 32, 64, 128, 128],
            Preset::C3 => &[16, 32, 64, 128, 256],
            Preset::C4 => &[16, 32, 64, 128, 256, 256],
        }
    }

    pub fn fc_units(self) -> &'static [usize] {
        match self {
            Preset::C1 | Preset::C2 => &[16, 8],
            Preset::C3 => &[32, 8],
            Preset::C4 => &[16],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::C1 => "C1",
            Preset::C2 => "C2",
            Preset::C3 => "C3",
            Preset::C4 => "C4",
        }
    }

    /// ROI sizes each preset was paired with in the reference experiments.
    pub fn paired_roi_sizes(self) -> &'static [usize] {
        match self {
            Preset::C1 | Preset::C2 => &[28, 38],
            Preset::C3 | Preset::C4 => &[42, 48],
        }
    }
}

impl FromStr for Preset {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown preset {s:?}")))
    }
}

/// The (ROI size, preset) pairings of the reference grid.
pub const REFERENCE_PAIRINGS: [(usize, Preset); 8] = [
    (28, Preset::C1),
    (28, Preset::C2),
    (38, Preset::C1),
    (38, Preset::C2),
    (42, Preset::C3),
    (42, Preset::C4),
    (48, Preset::C3),
    (48, Preset::C4),
];

fn default_dropout() -> f64 {
    0.5
}
fn default_classes() -> usize {
    2
}
fn default_bn_epsilon() -> f64 {
    1e-5
}
fn default_bn_momentum() -> f64 {
    0.9
}

/// Declarative network description: conv stack, head widths, and inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub name: String,
    pub conv_kernel_sizes: Vec<usize>,
    pub conv_filter_counts: Vec<usize>,
    pub fc_units: Vec<usize>,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    pub roi_size: usize,
    pub input_mode: InputMode,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    /// One conv tower reused by every pipeline instead of one tower each.
    #[serde(default)]
    pub shared_weights: bool,
    #[serde(default = "default_bn_epsilon")]
    pub bn_epsilon: f64,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
}

impl NetworkConfig {
    pub fn preset(preset: Preset, roi_size: usize, input_mode: InputMode) -> Self {
        NetworkConfig {
            name: preset.name().to_string(),
            conv_kernel_sizes: preset.kernel_sizes().to_vec(),
            conv_filter_counts: preset.filter_counts().to_vec(),
            fc_units: preset.fc_units().to_vec(),
            dropout_rate: default_dropout(),
            roi_size,
            input_mode,
            num_classes: default_classes(),
            shared_weights: false,
            bn_epsilon: default_bn_epsilon(),
            bn_momentum: default_bn_momentum(),
        }
    }

    pub fn pipelines(&self) -> Vec<PipelineInput> {
        self.input_mode.pipelines()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.conv_kernel_sizes.is_empty() {
            return Err(ModelError::Config("network needs at least one conv layer".into()));
        }
        if self.conv_kernel_sizes.len() != self.conv_filter_counts.len() {
            return Err(ModelError::Config(format!(
                "conv_kernel_sizes has {} entries but conv_filter_counts has {}",
                self.conv_kernel_sizes.len(),
                self.conv_filter_counts.len()
            )));
        }
        if self.conv_kernel_sizes.contains(&0) || self.conv_filter_counts.contains(&0) || self.fc_units.contains(&0) {
            return Err(ModelError::Config("kernel sizes, filter counts and FC widths must be >= 1".into()));
        }
        if self.roi_size == 0 {
            return Err(ModelError::Config("roi_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Config(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        if self.num_classes < 2 {
            return Err(ModelError::Config("num_classes must be >= 2".into()));
        }
        if !(self.bn_epsilon > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(ModelError::Config("bn_epsilon must be > 0 and bn_momentum in [0, 1]".into()));
        }
        Ok(())
    }

    /// Spatial extent entering each conv block, plus whether the block pools.
    ///
    /// A block pools while every extent is still >= 2; once the ladder
    /// bottoms out, that block and all later ones skip pooling.
    pub fn shape_ladder(&self) -> Vec<(usize, bool)> {
        let mut extent = self.roi_size;
        let mut pooling = true;
        self.conv_kernel_sizes
            .iter()
            .map(|_| {
                let entering = extent;
                pooling = pooling && extent >= 2;
                if pooling {
                    extent /= 2;
                }
                (entering, pooling)
            })
            .collect()
    }

    pub fn final_extent(&self) -> usize {
        let ladder = self.shape_ladder();
        match ladder.last() {
            Some(&(e, true)) => e / 2,
            Some(&(e, false)) => e,
            None => self.roi_size,
        }
    }

    /// Flattened feature length of one pipeline.
    pub fn flatten_len(&self) -> usize {
        let e = self.final_extent();
        self.conv_filter_counts.last().copied().unwrap_or(0) * e * e * e
    }

    pub fn head_input_len(&self) -> usize {
        self.flatten_len() * self.pipelines().len()
    }
}
