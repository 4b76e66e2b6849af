use crate::error::{Error, Result};

/// Total spatial reduction between the input and the deepest encoder block.
pub const DOWNSAMPLE_FACTOR: usize = 32;

/// `(input maps, output maps)` of encoder blocks 1 to 4.
pub const ENCODER_WIDTHS: [(usize, usize); 4] = [(64, 64), (64, 128), (128, 256), (256, 512)];
/// `(input maps, output maps)` of decoder blocks 1 to 4.
pub const DECODER_WIDTHS: [(usize, usize); 4] = [(64, 64), (128, 64), (256, 128), (512, 256)];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkConfig {
    pub num_classes: usize,
    pub in_channels: usize,
    /// `(height, width)` of the network input.
    pub input_hw: (usize, usize),
    /// Add each encoder block's input to its decoder block's output.
    pub bypass: bool,
    pub encoder_widths: [(usize, usize); 4],
    pub decoder_widths: [(usize, usize); 4],
}

impl LinkConfig {
    /// RGB input, full widths, bypass on.
    pub fn new(num_classes: usize, input_hw: (usize, usize)) -> Self {
        Self {
            num_classes,
            in_channels: 3,
            input_hw,
            bypass: true,
            encoder_widths: ENCODER_WIDTHS,
            decoder_widths: DECODER_WIDTHS,
        }
    }

    pub fn with_bypass(mut self, bypass: bool) -> Self {
        self.bypass = bypass;
        self
    }

    pub fn with_in_channels(mut self, in_channels: usize) -> Self {
        self.in_channels = in_channels;
        self
    }

    pub fn with_input_hw(mut self, input_hw: (usize, usize)) -> Self {
        self.input_hw = input_hw;
        self
    }

    /// Divides every feature-map width by `divisor` (which must divide them all).
    pub fn with_width_divisor(mut self, divisor: usize) -> Result<Self> {
        if divisor == 0 {
            return Err(Error::Config("width divisor must be positive".into()));
        }
        let scale = |(m, n): (usize, usize)| -> Result<(usize, usize)> {
            if m % divisor != 0 || n % divisor != 0 {
                return Err(Error::Config(format!(
                    "width divisor {divisor} does not divide block widths ({m}, {n})"
                )));
            }
            Ok((m / divisor, n / divisor))
        };
        for i in 0..4 {
            self.encoder_widths[i] = scale(self.encoder_widths[i])?;
            self.decoder_widths[i] = scale(self.decoder_widths[i])?;
        }
        Ok(self)
    }

    /// Channels produced by the initial block (input width of encoder block 1).
    pub fn stem_width(&self) -> usize {
        self.encoder_widths[0].0
    }

    /// Channels between the two upsampling layers of the final block.
    pub fn final_width(&self) -> usize {
        self.stem_width() / 2
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_hw;
        if h == 0 || w == 0 || h % DOWNSAMPLE_FACTOR != 0 || w % DOWNSAMPLE_FACTOR != 0 {
            return Err(Error::Config(format!(
                "input height and width must be positive multiples of {DOWNSAMPLE_FACTOR}, got {h}x{w}"
            )));
        }
        if self.num_classes == 0 || self.in_channels == 0 {
            return Err(Error::Config(
                "class and input-channel counts must be positive".into(),
            ));
        }
        let enc = &self.encoder_widths;
        let dec = &self.decoder_widths;
        if enc.iter().chain(dec).any(|&(m, n)| m == 0 || n == 0) {
            return Err(Error::Config("block widths must be positive".into()));
        }
        for i in 0..3 {
            if enc[i].1 != enc[i + 1].0 {
                return Err(Error::Config(format!(
                    "encoder block {} outputs {} maps but block {} expects {}",
                    i + 1,
                    enc[i].1,
                    i + 2,
                    enc[i + 1].0
                )));
            }
        }
        for i in 0..4 {
            if dec[i].0 != enc[i].1 || dec[i].1 != enc[i].0 {
                return Err(Error::Config(format!(
                    "decoder block {} widths {:?} must mirror encoder block {} widths {:?}",
                    i + 1,
                    dec[i],
                    i + 1,
                    enc[i]
                )));
            }
            if !dec[i].0.is_multiple_of(4) {
                return Err(Error::Config(format!(
                    "decoder block {} input width {} is not divisible by 4",
                    i + 1,
                    dec[i].0
                )));
            }
        }
        if self.stem_width() < 2 || !self.stem_width().is_multiple_of(2) {
            return Err(Error::Config(format!(
                "initial block width {} must be even",
                self.stem_width()
            )));
        }
        Ok(())
    }
}

/// Rounds a resolution up to the next size the network accepts.
pub fn padded_hw(h: usize, w: usize) -> (usize, usize) {
    (
        h.div_ceil(DOWNSAMPLE_FACTOR).max(1) * DOWNSAMPLE_FACTOR,
        w.div_ceil(DOWNSAMPLE_FACTOR).max(1) * DOWNSAMPLE_FACTOR,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        LinkConfig::new(20, (512, 1024)).validate().unwrap();
        LinkConfig::new(12, (64, 64))
            .with_width_divisor(16)
            .unwrap()
            .validate()
            .unwrap();
    }

    #[test]
    fn rejects_indivisible_resolution() {
        for hw in [(360, 640), (64, 70), (62, 64), (0, 64)] {
            let err = LinkConfig::new(3, hw).validate().unwrap_err();
            assert!(err.to_string().contains("multiples of 32"), "{err}");
        }
    }

    #[test]
    fn rejects_mismatched_widths() {
        let mut c = LinkConfig::new(3, (64, 64));
        c.decoder_widths[2] = (128, 128);
        assert!(c.validate().is_err());
        let mut c = LinkConfig::new(3, (64, 64));
        c.encoder_widths[1] = (64, 96);
        assert!(c.validate().is_err());
        // divisor 64 leaves decoder block 1 with a width of 1, not divisible by 4
        let c = LinkConfig::new(3, (64, 64)).with_width_divisor(64).unwrap();
        assert!(c.validate().is_err());
        assert!(LinkConfig::new(3, (64, 64)).with_width_divisor(3).is_err());
    }

    #[test]
    fn padding_rounds_up() {
        assert_eq!(padded_hw(360, 640), (384, 640));
        assert_eq!(padded_hw(720, 1280), (736, 1280));
        assert_eq!(padded_hw(64, 96), (64, 96));
    }
}
