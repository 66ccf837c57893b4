//! Model, training and synthetic-data configuration as one JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::coattn::DirectionMode;
use crate::encoder::{grid_side, Extraction};
use crate::error::{DcnError, Result};
use crate::predict::{HeadVariant, SummaryMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub decay_epochs: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub dropout_fc: f64,
    pub dropout_lstm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.99,
            adam_eps: 1e-8,
            decay_epochs: 4.0,
            max_epochs: 16,
            batch_size: 32,
            weight_decay: 0.0001,
            dropout_fc: 0.3,
            dropout_lstm: 0.1,
            seed: 1,
        }
    }
}

impl TrainConfig {
    /// Recipe for the small synthetic task: a higher rate, smaller batches,
    /// slower decay and no dropout. The default is the full-size recipe.
    pub fn desk() -> Self {
        TrainConfig {
            lr: 0.003,
            decay_epochs: 7.0,
            max_epochs: 20,
            batch_size: 16,
            dropout_fc: 0.0,
            dropout_lstm: 0.0,
            ..TrainConfig::default()
        }
    }
}

/// Synthetic planted-rule dataset parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// Dimension of the latent region descriptor rendered into the maps.
    pub feature_dim: usize,
    /// Objects (each with a distinct attribute) placed in every image.
    pub objects_per_image: usize,
    pub region_noise: f64,
    pub pixel_noise: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_train: 5000,
            n_test: 1000,
            feature_dim: 16,
            objects_per_image: 5,
            region_noise: 0.1,
            pixel_noise: 0.05,
            seed: 2024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DcnConfig {
    pub d: usize,
    pub h: usize,
    pub k: usize,
    pub l: usize,
    pub t: usize,
    pub n_max: usize,
    pub e: usize,
    /// Channels of the finest feature level; each coarser level doubles it.
    pub c: usize,
    pub n_objects: usize,
    /// Attributes double as the answer set.
    pub n_attributes: usize,
    pub direction: DirectionMode,
    pub head: HeadVariant,
    pub summary: SummaryMode,
    pub extraction: Extraction,
    pub layer_attn_hidden: usize,
    /// Hidden width of the summary score MLPs; `null` means `d`.
    pub summary_hidden: Option<usize>,
    pub head_hidden: usize,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for DcnConfig {
    fn default() -> Self {
        DcnConfig {
            d: 32,
            h: 4,
            k: 3,
            l: 3,
            t: 16,
            n_max: 14,
            e: 16,
            c: 8,
            n_objects: 8,
            n_attributes: 8,
            direction: DirectionMode::Both,
            head: HeadVariant::SumMlp,
            summary: SummaryMode::Attention,
            extraction: Extraction::LayerAttention,
            layer_attn_hidden: 32,
            summary_hidden: None,
            head_hidden: 64,
            train: TrainConfig::desk(),
            data: DataConfig::default(),
        }
    }
}

impl DcnConfig {
    /// Dimensions of the full-size model: d = 1024, 14 x 14 regions, 300-d
    /// word vectors, ResNet-like channel counts, 3113 answers.
    pub fn full_scale(head: HeadVariant) -> Self {
        DcnConfig {
            d: 1024,
            h: 4,
            k: 3,
            l: 3,
            t: 196,
            n_max: 14,
            e: 300,
            c: 256,
            n_objects: 196,
            n_attributes: 3113,
            head,
            layer_attn_hidden: 724,
            summary_hidden: None,
            head_hidden: 1024,
            train: TrainConfig::default(),
            ..DcnConfig::default()
        }
    }

    pub fn summary_hidden(&self) -> usize {
        self.summary_hidden.unwrap_or(self.d)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: usize| {
            if v == 0 {
                Err(DcnError::config(field, "must be positive"))
            } else {
                Ok(())
            }
        };
        positive("d", self.d)?;
        positive("h", self.h)?;
        positive("l", self.l)?;
        positive("e", self.e)?;
        positive("c", self.c)?;
        positive("n_max", self.n_max)?;
        positive("layer_attn_hidden", self.layer_attn_hidden)?;
        positive("head_hidden", self.head_hidden)?;
        positive("train.max_epochs", self.train.max_epochs)?;
        positive("train.batch_size", self.train.batch_size)?;
        positive("data.n_train", self.data.n_train)?;
        positive("data.n_test", self.data.n_test)?;
        positive("data.feature_dim", self.data.feature_dim)?;
        if self.summary_hidden == Some(0) {
            return Err(DcnError::config("summary_hidden", "must be positive"));
        }
        if !self.d.is_multiple_of(2) {
            return Err(DcnError::config("d", format!("must be even, got {}", self.d)));
        }
        if !self.d.is_multiple_of(self.h) {
            return Err(DcnError::config("h", format!("{} does not divide d = {}", self.h, self.d)));
        }
        grid_side(self.t)?;
        if self.n_objects < 4 {
            return Err(DcnError::config("n_objects", "need at least 4 objects"));
        }
        if self.n_attributes < 4 {
            return Err(DcnError::config("n_attributes", "need at least 4 attributes"));
        }
        let per_image_limit = self.n_objects.min(self.n_attributes).min(self.t);
        if !(2..=per_image_limit).contains(&self.data.objects_per_image) {
            return Err(DcnError::config(
                "data.objects_per_image",
                format!("{} outside 2..={per_image_limit}", self.data.objects_per_image),
            ));
        }
        let tr = &self.train;
        let unit = |field: &str, v: f64, open_low: bool| {
            let ok = if open_low { v > 0.0 && v < 1.0 } else { (0.0..1.0).contains(&v) };
            if ok {
                Ok(())
            } else {
                Err(DcnError::config(field, format!("{v} outside the allowed range")))
            }
        };
        unit("train.lr", tr.lr, false)?;
        unit("train.beta1", tr.beta1, true)?;
        unit("train.beta2", tr.beta2, true)?;
        unit("train.weight_decay", tr.weight_decay, false)?;
        unit("train.dropout_fc", tr.dropout_fc, false)?;
        unit("train.dropout_lstm", tr.dropout_lstm, false)?;
        if !(tr.adam_eps > 0.0) {
            return Err(DcnError::config("train.adam_eps", "must be positive"));
        }
        if !(tr.decay_epochs >= 1.0) {
            return Err(DcnError::config("train.decay_epochs", "must be at least 1"));
        }
        if !(self.data.region_noise >= 0.0) || !(self.data.pixel_noise >= 0.0) {
            return Err(DcnError::config("data.region_noise", "noise levels must be nonnegative"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: DcnConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `key=value` overrides; keys are dotted paths such as
    /// `train.lr`, values are parsed as JSON and fall back to strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| DcnError::config(item, "override must look like key=value"))?;
            let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut slot = &mut doc;
            for part in key.split('.') {
                slot = slot
                    .as_object_mut()
                    .and_then(|o| o.get_mut(part))
                    .ok_or_else(|| DcnError::config(key, "unknown config field"))?;
            }
            *slot = value;
        }
        let cfg: DcnConfig = serde_json::from_value(doc).map_err(|e| DcnError::config("--set", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = DcnConfig::default();
        cfg.validate().unwrap();
        assert_eq!((cfg.h, cfg.k, cfg.l), (4, 3, 3));
        let back = DcnConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        DcnConfig::full_scale(HeadVariant::Inner).validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg = DcnConfig::from_json(r#"{"d": 16, "head": 18, "direction": "question_guided", "train": {"lr": 0.0}}"#).unwrap();
        assert_eq!(cfg.d, 16);
        assert_eq!(cfg.head, HeadVariant::CatMlp);
        assert_eq!(cfg.direction, DirectionMode::QuestionGuided);
        assert_eq!(cfg.train.lr, 0.0);
        assert_eq!(cfg.train.beta2, 0.99);
    }

    #[test]
    fn invalid_fields_are_named() {
        let err = DcnConfig::from_json(r#"{"d": 30, "h": 4}"#).unwrap_err();
        assert!(matches!(&err, DcnError::Config { field, .. } if field == "h"), "{err}");
        let err = DcnConfig::from_json(r#"{"t": 15}"#).unwrap_err();
        assert!(matches!(&err, DcnError::Config { field, .. } if field == "t"));
        let err = DcnConfig::from_json(r#"{"head": 19}"#).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = DcnConfig::from_json(r#"{"bogus": 1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"));
        assert!(DcnConfig::from_json("{not json").is_err());
    }

    #[test]
    fn overrides() {
        let cfg = DcnConfig::default()
            .with_overrides(&["k=5", "train.lr=0", "direction=image_guided", "extraction=last_layer"])
            .unwrap();
        assert_eq!(cfg.k, 5);
        assert_eq!(cfg.train.lr, 0.0);
        assert_eq!(cfg.direction, DirectionMode::ImageGuided);
        assert_eq!(cfg.extraction, Extraction::LastLayer);
        let err = DcnConfig::default().with_overrides(&["nope=1"]).unwrap_err();
        assert!(matches!(err, DcnError::Config { field, .. } if field == "nope"));
        assert!(DcnConfig::default().with_overrides(&["h=5"]).is_err());
    }
}
