//! Greedy iterative motion segmentation: estimate the dominant motion of
//! the remaining events, classify them by first-variation magnitude, emit
//! the fitting events as a cluster, and recurse on the residuals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::EventSlice;
use crate::metrics::{self, Bbox, DenoiseConfig};
use crate::objective;
use crate::optim::{self, OptimizerConfig};
use crate::variation::{self, SplitRule};
use crate::warp::{MotionModel, WarpKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdPolicy {
    Otsu,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct SegmentationConfig {
    /// Warp family fitted to each cluster.
    pub warp_kind: WarpKind,
    pub epsilon: f64,
    pub use_polarity: bool,
    pub threshold: ThresholdPolicy,
    pub rule: SplitRule,
    pub optimizer: OptimizerConfig,
    /// Stop once the residual set shrinks below this fraction of the
    /// original event count.
    pub min_residual_fraction: f64,
    pub max_clusters: usize,
    /// Motion applied on the first iteration instead of optimizing, e.g. a
    /// depth + ego-motion flow field for the static background. Later
    /// iterations always optimize.
    pub external_motion: Option<MotionModel>,
    /// Box extraction for cluster diagnostics.
    pub denoise: DenoiseConfig,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            warp_kind: WarpKind::Translation2D,
            epsilon: objective::DEFAULT_EPSILON,
            use_polarity: false,
            threshold: ThresholdPolicy::Otsu,
            rule: SplitRule::AboveIsFit,
            optimizer: OptimizerConfig::default(),
            min_residual_fraction: 0.05,
            max_clusters: 8,
            external_motion: None,
            denoise: DenoiseConfig::default(),
        }
    }
}

impl SegmentationConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.min_residual_fraction) {
            return Err(Error::Spec(
                "min_residual_fraction must lie in [0, 1)".into(),
            ));
        }
        if self.max_clusters == 0 {
            return Err(Error::Spec("max_clusters must be at least 1".into()));
        }
        if self.warp_kind == WarpKind::DenseFlow {
            return Err(Error::Spec(
                "denseflow cannot be fitted; pass it as external_motion".into(),
            ));
        }
        Ok(())
    }
}

/// One segmented cluster, in dominance order.
#[derive(Debug, Clone)]
pub struct ClusterResult {
    /// 1-based, in extraction order.
    pub cluster_id: usize,
    pub model: MotionModel,
    /// Indices into the original slice.
    pub event_indices: Vec<usize>,
    /// Cluster-events variance under the identity warp.
    pub contrast_before: f64,
    /// Cluster-events variance under the fitted warp.
    pub contrast_after: f64,
    /// contrast_after / contrast_before.
    pub fwl: f64,
    pub bbox: Option<Bbox>,
}

/// Optimizer trace of one extraction iteration, for diagnostics dumps.
#[derive(Debug, Clone)]
pub struct ClusterTrace {
    pub cluster_id: usize,
    pub points: Vec<crate::optim::TracePoint>,
}

#[derive(Debug, Clone)]
pub struct SegmentationOutput {
    pub clusters: Vec<ClusterResult>,
    /// Events no motion hypothesis claimed.
    pub noise_indices: Vec<usize>,
    pub stop: StopCause,
    /// Per-cluster optimization traces (empty for an external first motion).
    pub traces: Vec<ClusterTrace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopCause {
    ResidualBelowMinimum,
    MaxClusters,
    NoProgress,
    ResidualEmpty,
}

/// Run the iterative segmentation loop on a slice.
pub fn segment(slice: &EventSlice, config: &SegmentationConfig) -> Result<SegmentationOutput> {
    config.validate()?;
    if slice.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n_total = slice.len();
    let min_residual = (config.min_residual_fraction * n_total as f64).ceil() as usize;

    // Residual indices into the original slice.
    let mut residual: Vec<usize> = (0..n_total).collect();
    let mut clusters: Vec<ClusterResult> = Vec::new();
    let mut traces: Vec<ClusterTrace> = Vec::new();
    let stop;

    loop {
        if residual.is_empty() {
            stop = StopCause::ResidualEmpty;
            break;
        }
        if residual.len() < min_residual.max(2) {
            stop = StopCause::ResidualBelowMinimum;
            break;
        }
        if clusters.len() >= config.max_clusters {
            stop = StopCause::MaxClusters;
            break;
        }

        let sub = slice.subset(&residual);
        let mut trace = Vec::new();
        let model = if clusters.is_empty() && config.external_motion.is_some() {
            config.external_motion.clone().unwrap()
        } else {
            let theta0 = vec![0.0; config.warp_kind.dof()];
            let result = optim::maximize(&sub, config.warp_kind, &theta0, &config.optimizer)?;
            trace = result.trace;
            MotionModel::from_params(config.warp_kind, &result.theta_star)?
        };

        let field = variation::variation(&sub, &model, config.epsilon, config.use_polarity)?;
        let threshold = match config.threshold {
            ThresholdPolicy::Fixed(t) => t,
            ThresholdPolicy::Otsu => match variation::otsu_threshold(&field) {
                Ok(t) => t,
                // All magnitudes equal: no statistical split exists, treat
                // as no progress rather than aborting on noise-only residue.
                Err(Error::Degenerate(_)) => {
                    stop = StopCause::NoProgress;
                    break;
                }
                Err(e) => return Err(e),
            },
        };
        let split = variation::split(&field, threshold, config.rule);
        if split.fit_indices.is_empty() {
            stop = StopCause::NoProgress;
            break;
        }

        // Map local residual positions back to original slice indices.
        let cluster_indices: Vec<usize> =
            split.fit_indices.iter().map(|&k| residual[k]).collect();
        let next_residual: Vec<usize> =
            split.residual_indices.iter().map(|&k| residual[k]).collect();

        let cluster_slice = slice.subset(&cluster_indices);
        let contrast_after =
            objective::contrast_of(&cluster_slice, &model, config.epsilon, config.use_polarity)?
                .value;
        let identity = MotionModel::Translation2D { v: [0.0, 0.0] };
        let contrast_before =
            objective::contrast_of(&cluster_slice, &identity, config.epsilon, config.use_polarity)?
                .value;
        let fwl = if contrast_before > 0.0 {
            contrast_after / contrast_before
        } else {
            f64::NAN
        };
        let bbox = metrics::extract_bbox(&cluster_slice, &model, &config.denoise)?;

        traces.push(ClusterTrace {
            cluster_id: clusters.len() + 1,
            points: trace,
        });
        clusters.push(ClusterResult {
            cluster_id: clusters.len() + 1,
            model,
            event_indices: cluster_indices,
            contrast_before,
            contrast_after,
            fwl,
            bbox,
        });
        residual = next_residual;
    }

    Ok(SegmentationOutput {
        clusters,
        noise_indices: residual,
        stop,
        traces,
    })
}

// ---------------------------------------------------------------------------
// External JSON schema for cluster output.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub id: usize,
    pub theta: Vec<f64>,
    pub warp_kind: WarpKind,
    pub n_events: usize,
    pub event_indices: Vec<usize>,
    pub fwl: f64,
    pub bbox: Option<Bbox>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClustersFile {
    pub version: u32,
    pub clusters: Vec<ClusterRecord>,
    pub noise_indices: Vec<usize>,
}

impl ClustersFile {
    pub fn from_output(output: &SegmentationOutput) -> Self {
        ClustersFile {
            version: 1,
            clusters: output
                .clusters
                .iter()
                .map(|c| ClusterRecord {
                    id: c.cluster_id,
                    // DenseFlow fields are inputs, not estimates; they
                    // serialize as an empty parameter vector.
                    theta: c.model.params(),
                    warp_kind: c.model.kind(),
                    n_events: c.event_indices.len(),
                    event_indices: c.event_indices.clone(),
                    fwl: c.fwl,
                    bbox: c.bbox,
                })
                .collect(),
            noise_indices: output.noise_indices.clone(),
        }
    }
}
