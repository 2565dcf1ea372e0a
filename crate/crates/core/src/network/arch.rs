use serde::{Deserialize, Serialize};

use crate::autodiff::Padding;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kernel: usize,
    pub out_channels: usize,
}

const fn spec(kernel: usize, out_channels: usize) -> LayerSpec {
    LayerSpec { kernel, out_channels }
}

/// Layer tables of the three sub-networks.
///
/// The extractor uses valid padding and takes RGB planes; the correlator and
/// head use same padding. The correlator input is the two feature maps
/// concatenated, the head input is the per-plane scores of all `depths`
/// planes stacked along channels, and the head emits `depths + 3` channels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub depths: usize,
    pub extractor: Vec<LayerSpec>,
    pub correlator: Vec<LayerSpec>,
    pub head: Vec<LayerSpec>,
}

pub const EXTRACTOR_PADDING: Padding = Padding::Valid;
pub const CORRELATOR_PADDING: Padding = Padding::Same;
pub const HEAD_PADDING: Padding = Padding::Same;

impl ArchConfig {
    /// Full-size tables; the head variant exists for 16 and 64 levels.
    pub fn full(depths: usize) -> Result<Self> {
        let head = match depths {
            64 => vec![spec(3, 512), spec(3, 256), spec(3, 128), spec(3, 67)],
            16 => vec![spec(3, 128), spec(3, 64), spec(3, 32), spec(3, 19)],
            d => return Err(Error::Config(format!("full-size head exists for 16 or 64 depth levels, not {d}"))),
        };
        let extractor = [13, 13, 13, 13, 9, 9, 5, 5, 5, 5]
            .into_iter()
            .zip([8, 8, 16, 16, 32, 32, 64, 64, 128, 128])
            .map(|(k, c)| spec(k, c))
            .collect();
        let correlator = [128, 128, 64, 64, 32, 32, 16, 16].into_iter().map(|c| spec(3, c)).collect();
        let arch = ArchConfig {
            depths,
            extractor,
            correlator,
            head,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Small network with the same structure, for desk-scale training and
    /// gradient checks. Shrinks the input by 8 pixels.
    pub fn toy(depths: usize) -> Result<Self> {
        let arch = ArchConfig {
            depths,
            extractor: vec![spec(5, 8), spec(3, 12), spec(3, 12)],
            correlator: vec![spec(3, 12), spec(3, 4)],
            head: vec![spec(3, 32), spec(3, depths + 3)],
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.depths < 2 {
            return bad(format!("need at least 2 depth levels, got {}", self.depths));
        }
        for (name, stack) in [("extractor", &self.extractor), ("correlator", &self.correlator), ("head", &self.head)] {
            if stack.is_empty() {
                return bad(format!("{name} has no layers"));
            }
            if let Some(l) = stack.iter().find(|l| l.kernel % 2 == 0 || l.kernel == 0 || l.out_channels == 0) {
                return bad(format!("{name} layer {l:?} needs an odd kernel and at least one channel"));
            }
        }
        let last = self.head.last().map(|l| l.out_channels);
        if last != Some(self.depths + 3) {
            return bad(format!(
                "head must emit depths + 3 = {} channels, emits {last:?}",
                self.depths + 3
            ));
        }
        Ok(())
    }

    pub fn feature_channels(&self) -> usize {
        self.extractor.last().map_or(0, |l| l.out_channels)
    }

    pub fn score_channels(&self) -> usize {
        self.correlator.last().map_or(0, |l| l.out_channels)
    }

    pub fn head_input_channels(&self) -> usize {
        self.depths * self.score_channels()
    }

    /// Pixels lost per side pair by the valid-padded extractor.
    pub fn shrink(&self) -> usize {
        self.extractor.iter().map(|l| l.kernel - 1).sum()
    }

    pub fn output_size(&self, input: usize) -> Result<usize> {
        input
            .checked_sub(self.shrink())
            .filter(|o| *o > 0)
            .ok_or_else(|| Error::Shape(format!("input {input} is too small for extractor shrink {}", self.shrink())))
    }

    /// `(in_channels, spec)` for every layer of the three stacks.
    pub fn stacks(&self) -> [(Vec<(usize, LayerSpec)>, Padding); 3] {
        let chain = |first: usize, stack: &[LayerSpec]| {
            let mut cin = first;
            stack
                .iter()
                .map(|l| {
                    let r = (cin, *l);
                    cin = l.out_channels;
                    r
                })
                .collect()
        };
        [
            (chain(3, &self.extractor), EXTRACTOR_PADDING),
            (chain(2 * self.feature_channels(), &self.correlator), CORRELATOR_PADDING),
            (chain(self.head_input_channels(), &self.head), HEAD_PADDING),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_extractor_maps_112_to_32() {
        let a = ArchConfig::full(64).unwrap();
        assert_eq!(a.shrink(), 4 * 12 + 2 * 8 + 4 * 4);
        assert_eq!(a.output_size(112).unwrap(), 32);
        assert_eq!(a.head_input_channels(), 1024);
        assert_eq!(ArchConfig::full(16).unwrap().head_input_channels(), 256);
        assert_eq!(a.stacks()[1].0[0].0, 256);
    }

    #[test]
    fn head_width_tracks_depths() {
        assert_eq!(ArchConfig::full(64).unwrap().head.last().unwrap().out_channels, 67);
        assert_eq!(ArchConfig::full(16).unwrap().head.last().unwrap().out_channels, 19);
        assert!(ArchConfig::full(32).is_err());
        let mut t = ArchConfig::toy(4).unwrap();
        t.head.last_mut().unwrap().out_channels = 6;
        assert!(t.validate().is_err());
    }
}
