//! A trained network together with its anchors: image in, boxes out.

use image::DynamicImage;
use tinydet_core::geometry::Letterbox;
use tinydet_core::grid::GridPrediction;
use tinydet_core::ingest::AnchorSet;
use tinydet_core::postprocess::{decode, diou_nms, Detection};

use crate::error::{DetectorError, Result};
use crate::model::Model;
use crate::preprocess::{batch, preprocess};

#[derive(Debug, Clone)]
pub struct Detector {
    pub model: Model,
    pub anchors: AnchorSet,
}

impl Detector {
    pub fn new(model: Model, anchors: AnchorSet) -> Result<Self> {
        if anchors.len() != model.config.n_anchors {
            return Err(DetectorError::Config(format!("{} anchors for a head with {} per cell", anchors.len(), model.config.n_anchors)));
        }
        Ok(Self { model, anchors })
    }

    pub fn input_size(&self) -> usize {
        self.model.config.input_size
    }

    pub fn predict(&self, image: &DynamicImage) -> Result<(GridPrediction, Letterbox)> {
        let (input, lb) = preprocess(image, self.input_size());
        let mut out = self.model.forward(&batch(&[&input], self.input_size()))?;
        Ok((out.remove(0), lb))
    }

    /// Decoded, suppressed detections in source-image pixels, by descending confidence.
    pub fn detect(&self, image: &DynamicImage, conf_threshold: f64, nms_threshold: f64) -> Result<Vec<Detection>> {
        let (pred, lb) = self.predict(image)?;
        let decoded = decode(&pred, &self.anchors, conf_threshold, &lb)?;
        Ok(diou_nms(&decoded, nms_threshold)?)
    }
}
