use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{CLIP_FRAMES, INPUT_DIM, OUTPUT_DIM, PHASE_DIM, POSE_DIM};

/// Every size the network family depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub phase: usize,
    pub output: usize,
    pub hidden: usize,
    pub experts: usize,
    pub gating_hidden: usize,
    pub clip_frames: usize,
    pub clip_channels: usize,
    pub conv_channels: usize,
    pub kernel: usize,
    pub pool: usize,
    pub film_hidden: usize,
}

impl Dims {
    /// Full-size network.
    pub const fn full() -> Dims {
        Dims {
            input: INPUT_DIM,
            phase: PHASE_DIM,
            output: OUTPUT_DIM,
            hidden: 512,
            experts: 8,
            gating_hidden: 32,
            clip_frames: CLIP_FRAMES,
            clip_channels: POSE_DIM,
            conv_channels: 256,
            kernel: 25,
            pool: 2,
            film_hidden: 2048,
        }
    }

    /// Same inputs and outputs, narrower hidden and generator layers so a
    /// few thousand steps run on one CPU core.
    pub const fn desk() -> Dims {
        Dims {
            hidden: 128,
            conv_channels: 16,
            film_hidden: 256,
            ..Dims::full()
        }
    }

    /// Toy sizes for gradient checks.
    pub const fn tiny() -> Dims {
        Dims {
            input: 8,
            phase: 4,
            output: 8,
            hidden: 16,
            experts: 3,
            gating_hidden: 5,
            clip_frames: 8,
            clip_channels: 3,
            conv_channels: 2,
            kernel: 3,
            pool: 2,
            film_hidden: 6,
        }
    }

    pub fn preset(name: &str) -> Option<Dims> {
        match name {
            "full" => Some(Dims::full()),
            "desk" => Some(Dims::desk()),
            "tiny" => Some(Dims::tiny()),
            _ => None,
        }
    }

    /// Length of a style embedding: scale and shift for both hidden layers.
    pub fn embedding_len(&self) -> usize {
        4 * self.hidden
    }

    pub fn pooled_frames(&self) -> usize {
        self.clip_frames / (self.pool * self.pool)
    }

    pub fn conv_flat(&self) -> usize {
        self.conv_channels * self.pooled_frames()
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.input,
            self.phase,
            self.output,
            self.hidden,
            self.experts,
            self.gating_hidden,
            self.clip_frames,
            self.clip_channels,
            self.conv_channels,
            self.kernel,
            self.pool,
            self.film_hidden,
        ];
        if all.contains(&0) {
            return Err(Error::invalid("every dimension must be positive"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::invalid(format!("kernel size {} must be odd", self.kernel)));
        }
        if self.clip_frames % (self.pool * self.pool) != 0 {
            return Err(Error::invalid(format!(
                "clip length {} is not divisible by pool {} twice",
                self.clip_frames, self.pool
            )));
        }
        if self.hidden < 2 {
            return Err(Error::invalid("layer norm needs at least two hidden units"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModulatorMode {
    Film,
    OneHot,
    Resad,
}

impl ModulatorMode {
    pub fn code(self) -> u8 {
        match self {
            ModulatorMode::Film => 0,
            ModulatorMode::OneHot => 1,
            ModulatorMode::Resad => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [ModulatorMode::Film, ModulatorMode::OneHot, ModulatorMode::Resad]
            .get(c as usize)
            .copied()
    }
}

impl fmt::Display for ModulatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModulatorMode::Film => "film",
            ModulatorMode::OneHot => "onehot",
            ModulatorMode::Resad => "resad",
        })
    }
}

impl FromStr for ModulatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "film" => Ok(ModulatorMode::Film),
            "onehot" | "one-hot" => Ok(ModulatorMode::OneHot),
            "resad" => Ok(ModulatorMode::Resad),
            _ => Err(Error::invalid(format!("unknown modulator mode {s:?}"))),
        }
    }
}

/// Architecture of one model instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dims: Dims,
    pub mode: ModulatorMode,
    /// Number of styles with their own parameters (onehot, resad).
    pub styles: usize,
    pub dropout: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.mode != ModulatorMode::Film && self.styles == 0 {
            return Err(Error::invalid(format!("{} mode needs a fixed style count", self.mode)));
        }
        Ok(())
    }
}

/// Parameter totals: synthesis plus gating (`asn`), style modulator (`smn`)
/// and the per-style payload needed at runtime (`psr`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCounts {
    pub asn: u64,
    pub smn: u64,
    pub psr: u64,
}

fn dense(i: usize, o: usize) -> u64 {
    (i * o + o) as u64
}

pub fn count_parameters(dims: &Dims, mode: ModulatorMode, styles: usize) -> ParameterCounts {
    let d = dims;
    let gating = dense(d.phase, d.gating_hidden)
        + dense(d.gating_hidden, d.gating_hidden)
        + dense(d.gating_hidden, d.experts);
    let expert = dense(d.input, d.hidden) + dense(d.hidden, d.hidden) + dense(d.hidden, d.output);
    let asn = gating + d.experts as u64 * expert;
    let (smn, psr) = match mode {
        ModulatorMode::Film => {
            let conv = (d.conv_channels * d.clip_channels * d.kernel + d.conv_channels)
                + (d.conv_channels * d.conv_channels * d.kernel + d.conv_channels);
            let smn = conv as u64
                + dense(d.conv_flat(), d.film_hidden)
                + dense(d.film_hidden, d.embedding_len());
            (smn, d.embedding_len() as u64)
        }
        ModulatorMode::OneHot => {
            let per = (d.experts * d.hidden) as u64;
            (per * styles as u64, per)
        }
        ModulatorMode::Resad => {
            let per = dense(d.hidden, d.hidden);
            (per * styles as u64, per)
        }
    };
    ParameterCounts { asn, smn, psr }
}
