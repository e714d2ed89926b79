use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{BlurSettings, EncoderSettings, SynthConfig, TrainConfig};
use crate::spectral::{BandSpec, CANONICAL_BAND_NAMES};

/// Filter-bank layout. Absent edges fall back to the canonical
/// δ/θ/α/β/γ rhythms at the dataset's sample rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandSettings {
    pub edges: Option<Vec<f64>>,
    pub gamma: Option<Vec<f64>>,
    pub gamma_bounds: [f64; 2],
    /// Crossfade width in Hz.
    pub delta: f64,
    pub names: Option<Vec<String>>,
}

impl Default for BandSettings {
    fn default() -> Self {
        Self {
            edges: None,
            gamma: None,
            gamma_bounds: [0.5, 2.0],
            delta: 1.0,
            names: None,
        }
    }
}

impl BandSettings {
    pub fn resolve(&self, sample_rate: f64) -> Result<BandSpec> {
        let canonical = BandSpec::canonical(sample_rate);
        let base_edges = self.edges.clone().unwrap_or(canonical.base_edges);
        let n = base_edges.len().saturating_sub(1);
        let names = match &self.names {
            Some(names) => names.clone(),
            None if n == CANONICAL_BAND_NAMES.len() => canonical.names,
            None => Vec::new(),
        };
        let spec = BandSpec {
            gamma: self.gamma.clone().unwrap_or_else(|| vec![1.0; n]),
            base_edges,
            gamma_bounds: (self.gamma_bounds[0], self.gamma_bounds[1]),
            delta: self.delta,
            names,
        };
        spec.effective_edges(sample_rate)
            .map_err(|e| Error::Config(format!("[bands]: {e}")))?;
        Ok(spec)
    }
}

/// Everything a run needs, as one TOML document with one table per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub encoder: EncoderSettings,
    pub blur: BlurSettings,
    pub bands: BandSettings,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config types serialize to TOML")
    }

    /// Override the synthesis and training seeds together.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn band_spec(&self, sample_rate: f64) -> Result<BandSpec> {
        self.bands.resolve(sample_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::FusionMode;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn serialized_defaults_parse_back() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected_everywhere() {
        for doc in [
            "bogus = 1",
            "[train]\nw_1 = 0.1",
            "[synth]\nn_clases = 3",
            "[blur]\nsigm = 2.0",
            "[bands]\nedge = [1.0, 2.0]",
            "[encoder]\nembed = 8",
            "[nonsense]",
        ] {
            assert!(matches!(RunConfig::parse(doc), Err(Error::Config(_))), "{doc}");
        }
    }

    #[test]
    fn partial_tables_fill_defaults() {
        let cfg = RunConfig::parse(
            "[train]\nuse_bound = false\nfusion_mode = \"learnable_mask\"\n[synth]\nn_classes = 2",
        )
        .unwrap();
        assert!(!cfg.train.use_bound);
        assert_eq!(cfg.train.fusion_mode, FusionMode::LearnableMask);
        assert_eq!(cfg.train.w1, 0.01);
        assert_eq!(cfg.synth.n_classes, 2);
        assert_eq!(cfg.synth.samples, 250);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::parse("[train]\nbatch_size = 1").is_err());
        assert!(RunConfig::parse("[train]\nfusion_mode = \"sideways\"").is_err());
        assert!(RunConfig::parse("[train]\nw1 = \"a lot\"").is_err());
    }

    #[test]
    fn band_settings_resolution() {
        let spec = BandSettings::default().resolve(250.0).unwrap();
        assert_eq!(spec, BandSpec::canonical(250.0));
        let custom = BandSettings {
            edges: Some(vec![1.0, 10.0, 20.0]),
            ..BandSettings::default()
        }
        .resolve(100.0)
        .unwrap();
        assert_eq!(custom.n_bands(), 2);
        assert_eq!(custom.band_name(1), "band2");
        let collapsed = BandSettings {
            edges: Some(vec![1.0, 10.0, 5.0]),
            ..BandSettings::default()
        };
        assert!(matches!(collapsed.resolve(100.0), Err(Error::Config(_))));
    }

    #[test]
    fn seed_override_touches_both_stages() {
        let cfg = RunConfig::default().with_seed(9);
        assert_eq!((cfg.synth.seed, cfg.train.seed), (9, 9));
    }
}
