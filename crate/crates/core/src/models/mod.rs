//! Networks built on the `anglekit-tensor` autodiff graph, plus the
//! coarse-to-fine inference pipeline.

pub mod classifier;
pub mod layers;
pub mod localizer;
pub mod pipeline;

use anglekit_tensor::{Graph, Mode, NodeId, ParamStore};

use crate::error::{Error, Result};
use crate::geometry::Heatmap;
use crate::raster::Raster;

pub use classifier::{Classifier, ClassifierConfig};
pub use localizer::{EncoderConfig, EncoderVariant, Localizer, LocalizerConfig, SkipMode};
pub use pipeline::{localize_two_stage, stage1_frame, stage2_frame, HeatmapPredictor, Stage1Frame, Stage2Frame, TwoStageOutput};

/// Images per forward pass during inference.
pub const INFERENCE_BATCH: usize = 8;

/// A model whose parameters live in one [`ParamStore`] and whose forward
/// pass ends in a sigmoid.
pub trait Network {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId>;
}

/// Eval-mode forward over equal-sized rasters; one output tensor per chunk.
fn forward_chunks(net: &dyn Network, inputs: &[Raster], mut visit: impl FnMut(&[f32], &[usize]) -> Result<()>) -> Result<()> {
    for chunk in inputs.chunks(INFERENCE_BATCH) {
        let refs: Vec<&Raster> = chunk.iter().collect();
        let mut g = Graph::new(Mode::Eval);
        let x = g.input(Raster::batch_tensor(&refs)?, false);
        let y = net.forward(&mut g, x)?;
        visit(g.value(y).data(), g.shape(y))?;
    }
    Ok(())
}

impl Classifier {
    /// Closure probability for each input.
    pub fn predict(&self, inputs: &[Raster]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(inputs.len());
        forward_chunks(self, inputs, |data, _| {
            out.extend(data.iter().map(|&v| f64::from(v)));
            Ok(())
        })?;
        Ok(out)
    }
}

impl HeatmapPredictor for Localizer {
    fn predict(&self, inputs: &[Raster]) -> Result<Vec<Heatmap>> {
        let mut out = Vec::with_capacity(inputs.len());
        let stride = self.cfg.heatmap_stride;
        forward_chunks(self, inputs, |data, shape| {
            let (h, w) = (shape[2], shape[3]);
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid("non-finite heatmap output".into()));
            }
            for item in data.chunks(h * w) {
                out.push(Heatmap::new(w, h, stride, item.to_vec())?);
            }
            Ok(())
        })?;
        Ok(out)
    }
}
