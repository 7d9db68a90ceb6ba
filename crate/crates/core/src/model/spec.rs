use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Shape of the encoder-decoder network.
///
/// Encoder level `l` (1-based) runs at resolution `input_size / 2^(l-1)` with
/// `base_channels · 2^(l-1)` channels. Levels listed in `inception_levels`
/// use a four-branch inception block instead of two stacked 3×3 convs.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NetworkSpec {
    pub input_size: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub inception_levels: BTreeSet<usize>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            input_size: 64,
            depth: 3,
            base_channels: 8,
            inception_levels: [2, 3].into_iter().collect(),
        }
    }
}

/// Channel split of an inception block, in concatenation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InceptionWidths {
    pub branch1x1: usize,
    pub branch3x3: usize,
    pub branch5x5: usize,
    pub branch_pool: usize,
}

impl InceptionWidths {
    /// Even split of `out_channels`, remainder to the 3×3 branch.
    pub fn split(out_channels: usize) -> Self {
        let q = out_channels / 4;
        InceptionWidths {
            branch1x1: q,
            branch3x3: q + out_channels % 4,
            branch5x5: q,
            branch_pool: q,
        }
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.branch1x1, self.branch3x3, self.branch5x5, self.branch_pool]
    }
}

/// One convolution in the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub id: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    /// Spatial side of the square feature map the layer runs on.
    pub resolution: usize,
}

impl LayerShape {
    pub fn macs(&self) -> u64 {
        (self.c_in * self.c_out * self.kernel * self.kernel * self.resolution * self.resolution) as u64
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.c_out, self.c_in, self.kernel, self.kernel]
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::InvalidSpec(format!("depth must be >= 2, got {}", self.depth)));
        }
        if self.base_channels < 4 {
            return Err(Error::InvalidSpec(format!(
                "base_channels must be >= 4, got {}",
                self.base_channels
            )));
        }
        if self.depth >= 32 {
            return Err(Error::InvalidSpec(format!("depth {} is too large", self.depth)));
        }
        let divisor = 1usize << self.depth;
        if self.input_size == 0 || !self.input_size.is_multiple_of(divisor) {
            return Err(Error::InvalidSpec(format!(
                "input_size {} must be divisible by 2^depth = {divisor}",
                self.input_size
            )));
        }
        if let Some(&bad) = self.inception_levels.iter().find(|&&l| l == 0 || l > self.depth) {
            return Err(Error::InvalidSpec(format!(
                "inception level {bad} outside encoder levels 1..={}",
                self.depth
            )));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << (level - 1)
    }

    pub fn resolution(&self, level: usize) -> usize {
        self.input_size >> (level - 1)
    }

    fn level_input_channels(&self, level: usize) -> usize {
        if level == 1 {
            1
        } else {
            self.channels(level - 1)
        }
    }

    pub fn uses_inception(&self, level: usize) -> bool {
        self.inception_levels.contains(&level)
    }

    /// Every convolution of the encoder level, in forward order.
    pub fn encoder_layers(&self, level: usize, use_inception: bool) -> Vec<LayerShape> {
        let c_in = self.level_input_channels(level);
        let c = self.channels(level);
        let res = self.resolution(level);
        let layer = |name: &str, c_in, c_out, kernel| LayerShape {
            id: format!("enc{level}.{name}"),
            c_in,
            c_out,
            kernel,
            resolution: res,
        };
        if use_inception && self.uses_inception(level) {
            let w = InceptionWidths::split(c);
            vec![
                layer("inception.branch1x1", c_in, w.branch1x1, 1),
                layer("inception.reduce3x3", c_in, w.branch3x3, 1),
                layer("inception.branch3x3", w.branch3x3, w.branch3x3, 3),
                layer("inception.reduce5x5", c_in, w.branch5x5, 1),
                layer("inception.branch5x5", w.branch5x5, w.branch5x5, 5),
                layer("inception.branchpool", c_in, w.branch_pool, 1),
            ]
        } else {
            vec![layer("conv1", c_in, c, 3), layer("conv2", c, c, 3)]
        }
    }

    /// Decoder level `level` (1..depth) fuses the level below with the
    /// encoder skip at `level`.
    pub fn decoder_layers(&self, level: usize) -> Vec<LayerShape> {
        let c = self.channels(level);
        vec![
            // pointwise projection at the coarse resolution, then nearest
            // upsampling; equivalent to upsample-then-1×1
            LayerShape {
                id: format!("dec{level}.up"),
                c_in: self.channels(level + 1),
                c_out: c,
                kernel: 1,
                resolution: self.resolution(level + 1),
            },
            LayerShape {
                id: format!("dec{level}.conv"),
                c_in: 2 * c,
                c_out: c,
                kernel: 3,
                resolution: self.resolution(level),
            },
        ]
    }

    pub fn head_layer(&self) -> LayerShape {
        LayerShape {
            id: "head".into(),
            c_in: self.base_channels,
            c_out: 1,
            kernel: 1,
            resolution: self.input_size,
        }
    }

    /// Complete layer list in forward order.
    pub fn layer_plan(&self) -> Vec<LayerShape> {
        let mut plan = Vec::new();
        for level in 1..=self.depth {
            plan.extend(self.encoder_layers(level, true));
        }
        for level in (1..self.depth).rev() {
            plan.extend(self.decoder_layers(level));
        }
        plan.push(self.head_layer());
        plan
    }
}

/// Multiply-accumulate counts of one single-image forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacCount {
    pub encoder: u64,
    pub decoder: u64,
    pub head: u64,
}

impl MacCount {
    pub fn total(&self) -> u64 {
        self.encoder + self.decoder + self.head
    }
}

/// MACs of a `kernel × kernel` convolution producing an `h × w` map.
pub fn conv_macs(c_in: usize, c_out: usize, kernel: usize, h: usize, w: usize) -> u64 {
    (c_in * c_out * kernel * kernel * h * w) as u64
}

/// Closed-form MAC count. With `use_inception = false` every encoder level is
/// a plain double-3×3 block, which is the baseline the inception encoder is
/// measured against. Pooling and elementwise work are not counted.
pub fn count_macs(spec: &NetworkSpec, use_inception: bool) -> Result<MacCount> {
    spec.validate()?;
    let mut encoder = 0;
    for level in 1..=spec.depth {
        let c_in = spec.level_input_channels(level);
        let c = spec.channels(level);
        let s = spec.resolution(level);
        encoder += if use_inception && spec.uses_inception(level) {
            let w = InceptionWidths::split(c);
            conv_macs(c_in, w.branch1x1, 1, s, s)
                + conv_macs(c_in, w.branch3x3, 1, s, s)
                + conv_macs(w.branch3x3, w.branch3x3, 3, s, s)
                + conv_macs(c_in, w.branch5x5, 1, s, s)
                + conv_macs(w.branch5x5, w.branch5x5, 5, s, s)
                + conv_macs(c_in, w.branch_pool, 1, s, s)
        } else {
            conv_macs(c_in, c, 3, s, s) + conv_macs(c, c, 3, s, s)
        };
    }
    let mut decoder = 0;
    for level in 1..spec.depth {
        let c = spec.channels(level);
        let coarse = spec.resolution(level + 1);
        let fine = spec.resolution(level);
        decoder += conv_macs(spec.channels(level + 1), c, 1, coarse, coarse) + conv_macs(2 * c, c, 3, fine, fine);
    }
    let head = conv_macs(spec.base_channels, 1, 1, spec.input_size, spec.input_size);
    Ok(MacCount { encoder, decoder, head })
}
