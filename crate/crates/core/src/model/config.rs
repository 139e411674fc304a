use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvLayer {
    pub const fn new(channels: usize, kernel: usize, stride: usize) -> Self {
        Self { channels, kernel, stride }
    }
}

/// Multiplicative Gumbel temperature annealing with a floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GumbelSchedule {
    pub start: f64,
    pub floor: f64,
    pub decay: f64,
}

impl GumbelSchedule {
    pub fn at(&self, step: u64) -> f64 {
        (self.start * self.decay.powf(step as f64)).max(self.floor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub conv_spec: Vec<ConvLayer>,
    pub model_dim: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub num_codebooks: usize,
    pub entries_per_book: usize,
    pub gumbel: GumbelSchedule,
    pub mask_prob: f64,
    pub mask_span_len: usize,
    /// Kernel width of the convolutional positional embedding (odd).
    pub pos_conv_kernel: usize,
    pub learned_mask_emb: bool,
}

impl ModelConfig {
    /// Base-architecture sizes: 12 blocks, model dimension 768, 8 heads,
    /// 2 codebooks of 320 entries, dropout 0.1.
    pub fn paper() -> Self {
        let mut conv_spec = vec![ConvLayer::new(512, 10, 5)];
        conv_spec.extend(std::iter::repeat_n(ConvLayer::new(512, 3, 2), 4));
        conv_spec.extend(std::iter::repeat_n(ConvLayer::new(512, 2, 2), 2));
        Self {
            conv_spec,
            model_dim: 768,
            num_blocks: 12,
            num_heads: 8,
            ffn_dim: 3072,
            dropout: 0.1,
            num_codebooks: 2,
            entries_per_book: 320,
            gumbel: GumbelSchedule { start: 2.0, floor: 0.5, decay: 0.999_995 },
            mask_prob: 0.065,
            mask_span_len: 10,
            pos_conv_kernel: 127,
            learned_mask_emb: true,
        }
    }

    /// CPU-trainable profile (about 20x downsampling).
    pub fn desk() -> Self {
        Self {
            conv_spec: vec![ConvLayer::new(64, 10, 5), ConvLayer::new(64, 3, 2), ConvLayer::new(64, 3, 2)],
            model_dim: 64,
            num_blocks: 2,
            num_heads: 2,
            ffn_dim: 256,
            dropout: 0.1,
            num_codebooks: 2,
            entries_per_book: 32,
            gumbel: GumbelSchedule { start: 2.0, floor: 0.5, decay: 0.995 },
            mask_prob: 0.065,
            mask_span_len: 10,
            pos_conv_kernel: 15,
            learned_mask_emb: true,
        }
    }

    /// All constraint violations, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.conv_spec.is_empty() {
            errs.push("model.conv_spec must not be empty".into());
        }
        for (i, l) in self.conv_spec.iter().enumerate() {
            if l.channels == 0 || l.kernel == 0 || l.stride == 0 {
                errs.push(format!("model.conv_spec[{i}]: channels, kernel and stride must be >= 1"));
            }
        }
        if self.model_dim == 0 {
            errs.push("model.model_dim must be >= 1".into());
        }
        if self.num_heads == 0 || self.model_dim % self.num_heads.max(1) != 0 {
            errs.push(format!("model.model_dim {} not divisible by num_heads {}", self.model_dim, self.num_heads));
        }
        if self.num_codebooks == 0 || self.model_dim % self.num_codebooks.max(1) != 0 {
            errs.push(format!(
                "model.model_dim {} not divisible by num_codebooks {}",
                self.model_dim, self.num_codebooks
            ));
        }
        if self.entries_per_book < 2 {
            errs.push("model.entries_per_book must be >= 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            errs.push(format!("model.dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            errs.push(format!("model.mask_prob {} outside [0, 1]", self.mask_prob));
        }
        if self.mask_span_len == 0 {
            errs.push("model.mask_span_len must be >= 1".into());
        }
        if self.pos_conv_kernel % 2 == 0 {
            errs.push("model.pos_conv_kernel must be odd".into());
        }
        let g = &self.gumbel;
        if !(g.start > 0.0 && g.floor > 0.0 && g.floor <= g.start && g.decay > 0.0 && g.decay <= 1.0) {
            errs.push("model.gumbel needs 0 < floor <= start and 0 < decay <= 1".into());
        }
        errs
    }

    pub fn codebook_dim(&self) -> usize {
        self.model_dim / self.num_codebooks
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    /// Latent frames produced from `samples` waveform samples, if any.
    pub fn latent_len(&self, samples: usize) -> Option<usize> {
        let mut t = samples;
        for l in &self.conv_spec {
            if t < l.kernel {
                return None;
            }
            t = (t - l.kernel) / l.stride + 1;
        }
        Some(t)
    }

    /// Shortest waveform that yields one latent frame.
    pub fn min_samples(&self) -> usize {
        let mut need = 1;
        for l in self.conv_spec.iter().rev() {
            need = (need - 1) * l.stride + l.kernel;
        }
        need
    }

    /// Product of all conv strides.
    pub fn total_stride(&self) -> usize {
        self.conv_spec.iter().map(|l| l.stride).product()
    }

    pub fn encoder_channels(&self) -> usize {
        self.conv_spec.last().map(|l| l.channels).unwrap_or(1)
    }
}
