use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use serde_json::json;

use evseg_core::error::{Error, Result};
use evseg_core::event::{self, SensorGeometry};
use evseg_core::imageio;
use evseg_core::metrics::{self, DenoiseConfig};
use evseg_core::objective;
use evseg_core::optim::OptimizerConfig;
use evseg_core::segment::{self, ClustersFile, SegmentationConfig, ThresholdPolicy};
use evseg_core::synth::{self, GroundTruth, SceneSpec};
use evseg_core::variation::{self, SplitRule};
use evseg_core::warp::{self, MotionModel, WarpKind};

use crate::manifest::RunManifest;

// ---------------------------------------------------------------------------
// Shared argument groups

#[derive(Args, Clone, Serialize)]
pub struct GeometryArgs {
    /// Sensor width in pixels.
    #[arg(long)]
    pub width: u32,
    /// Sensor height in pixels.
    #[arg(long)]
    pub height: u32,
    /// Focal length x (px); required for rotation3d and denseflow.
    #[arg(long)]
    pub fx: Option<f64>,
    /// Focal length y (px).
    #[arg(long)]
    pub fy: Option<f64>,
    /// Principal point x (px).
    #[arg(long)]
    pub cx: Option<f64>,
    /// Principal point y (px).
    #[arg(long)]
    pub cy: Option<f64>,
}

impl GeometryArgs {
    fn build(&self, need_intrinsics: bool) -> Result<SensorGeometry> {
        match (self.fx, self.fy, self.cx, self.cy) {
            (Some(fx), Some(fy), Some(cx), Some(cy)) => {
                SensorGeometry::new(self.width, self.height, fx, fy, cx, cy)
            }
            _ if need_intrinsics => Err(Error::Spec(
                "this warp needs --fx --fy --cx --cy".into(),
            )),
            _ => Ok(SensorGeometry::with_size(self.width, self.height)),
        }
    }
}

#[derive(Clone, Copy, Debug, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WarpArg {
    Translation2d,
    Rotation3d,
    Denseflow,
}

fn parse_vec3(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Spec(format!("expected three comma-separated reals, got `{text}`")))?;
    if parts.len() != 3 {
        return Err(Error::Spec(format!(
            "expected three comma-separated reals, got `{text}`"
        )));
    }
    Ok([parts[0], parts[1], parts[2]])
}

fn parse_threshold(text: &str) -> Result<ThresholdPolicy> {
    if text.eq_ignore_ascii_case("otsu") {
        Ok(ThresholdPolicy::Otsu)
    } else {
        text.parse::<f64>()
            .map(ThresholdPolicy::Fixed)
            .map_err(|_| Error::Spec(format!("threshold must be `otsu` or a real, got `{text}`")))
    }
}

// ---------------------------------------------------------------------------
// synth

#[derive(Args, Serialize)]
pub struct SynthArgs {
    /// Scene description file (TOML mirroring the scene-spec fields).
    #[arg(long)]
    pub scene: PathBuf,
    /// Output events file.
    #[arg(long)]
    pub out: PathBuf,
    /// Output ground-truth JSON.
    #[arg(long)]
    pub gt: PathBuf,
    /// Override the scene's RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run_synth(args: &SynthArgs) -> Result<()> {
    // An unreadable scene path is a usage error for this command.
    let text = fs::read_to_string(&args.scene)
        .map_err(|e| Error::Spec(format!("cannot read scene file {}: {e}", args.scene.display())))?;
    let mut spec: SceneSpec =
        toml::from_str(&text).map_err(|e| Error::Spec(format!("bad scene file: {e}")))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }

    let mut manifest = RunManifest::new(json!({
        "command": "synth",
        "scene": args.scene,
        "seed": spec.seed,
    }));
    manifest.add_input(&args.scene)?;

    let (slice, gt) = manifest.record("generate", || synth::generate(&spec))?;
    manifest.record("write-events", || event::save_events_to_path(&args.out, &slice))?;
    manifest.record("write-gt", || -> Result<()> {
        let json = serde_json::to_string_pretty(&gt).expect("ground truth serializes");
        fs::write(&args.gt, json)?;
        Ok(())
    })?;

    manifest.write(&args.out.with_extension("manifest.json"))?;
    eprintln!(
        "synthesized {} events ({} objects) -> {}",
        slice.len(),
        gt.objects.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// segment

#[derive(Args, Serialize)]
pub struct SegmentArgs {
    /// Input events file (`t x y p` lines).
    #[arg(long)]
    pub events: PathBuf,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    /// Warp family fitted per cluster; denseflow uses the depth flow for
    /// the first cluster and translation2d afterwards.
    #[arg(long, value_enum, default_value = "translation2d")]
    pub warp: WarpArg,
    /// Depth map for the denseflow warp (.pgm = 16-bit millimeters, else
    /// raw little-endian f32 meters).
    #[arg(long)]
    pub flow_from_depth: Option<PathBuf>,
    /// Camera linear velocity m/s, `a,b,c`.
    #[arg(long, allow_hyphen_values = true)]
    pub lin_vel: Option<String>,
    /// Camera angular velocity rad/s, `a,b,c`.
    #[arg(long, allow_hyphen_values = true)]
    pub ang_vel: Option<String>,
    /// Slice window in milliseconds.
    #[arg(long, default_value_t = 10.0)]
    pub slice_ms: f64,
    /// Gaussian footprint std in pixels.
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    /// `otsu` or a fixed raw-magnitude threshold.
    #[arg(long, default_value = "otsu")]
    pub threshold: String,
    /// Treat magnitudes below the threshold as the fitting cluster.
    #[arg(long, default_value_t = false)]
    pub invert_rule: bool,
    #[arg(long, default_value_t = 0.05)]
    pub min_residual_frac: f64,
    #[arg(long, default_value_t = 8)]
    pub max_clusters: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    /// Accumulate signed polarity instead of unit mass.
    #[arg(long, default_value_t = false)]
    pub use_polarity: bool,
    /// Dump per-cluster optimizer traces as CSV.
    #[arg(long, default_value_t = false)]
    pub trace: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

struct SegmentSetup {
    geometry: SensorGeometry,
    config: SegmentationConfig,
}

fn build_segment_setup(
    warp: WarpArg,
    geometry_args: &GeometryArgs,
    flow_from_depth: &Option<PathBuf>,
    lin_vel: &Option<String>,
    ang_vel: &Option<String>,
    epsilon: f64,
    threshold: &str,
    invert_rule: bool,
    min_residual_frac: f64,
    max_clusters: usize,
    lr: f64,
    max_iters: usize,
    patience: usize,
    use_polarity: bool,
) -> Result<SegmentSetup> {
    let need_intrinsics = !matches!(warp, WarpArg::Translation2d);
    let geometry = geometry_args.build(need_intrinsics)?;

    let (warp_kind, external_motion) = match warp {
        WarpArg::Translation2d => (WarpKind::Translation2D, None),
        WarpArg::Rotation3d => (WarpKind::Rotation3D, None),
        WarpArg::Denseflow => {
            let depth_path = flow_from_depth.as_ref().ok_or_else(|| {
                Error::Spec("--warp denseflow needs --flow-from-depth".into())
            })?;
            let nu = parse_vec3(lin_vel.as_deref().ok_or_else(|| {
                Error::Spec("--warp denseflow needs --lin-vel a,b,c".into())
            })?)?;
            let omega = parse_vec3(ang_vel.as_deref().ok_or_else(|| {
                Error::Spec("--warp denseflow needs --ang-vel a,b,c".into())
            })?)?;
            let depth = imageio::load_depth_map(depth_path, &geometry)?;
            let flow = warp::build_motion_field(&depth, nu, omega, &geometry)?;
            // The depth flow explains the first (background) cluster;
            // residual objects are fitted with image-plane translations.
            (WarpKind::Translation2D, Some(flow))
        }
    };

    let config = SegmentationConfig {
        warp_kind,
        epsilon,
        use_polarity,
        threshold: parse_threshold(threshold)?,
        rule: if invert_rule {
            SplitRule::BelowIsFit
        } else {
            SplitRule::AboveIsFit
        },
        optimizer: OptimizerConfig {
            learning_rate: lr,
            max_iters,
            patience,
            epsilon,
            use_polarity,
            ..OptimizerConfig::default()
        },
        min_residual_fraction: min_residual_frac,
        max_clusters,
        external_motion,
        denoise: DenoiseConfig::default(),
    };
    Ok(SegmentSetup { geometry, config })
}

fn write_pgm_if_normalizable(path: &Path, image: &[f64], g: &SensorGeometry) -> Result<bool> {
    match imageio::encode_pgm_minmax(image, g.width, g.height) {
        Ok(bytes) => {
            fs::write(path, bytes)?;
            Ok(true)
        }
        Err(Error::Degenerate(_)) => Ok(false),
        Err(e) => Err(e),
    }
}

pub fn run_segment(args: &SegmentArgs) -> Result<()> {
    if !(args.slice_ms > 0.0) {
        return Err(Error::Spec("--slice-ms must be positive".into()));
    }
    let setup = build_segment_setup(
        args.warp,
        &args.geometry,
        &args.flow_from_depth,
        &args.lin_vel,
        &args.ang_vel,
        args.epsilon,
        &args.threshold,
        args.invert_rule,
        args.min_residual_frac,
        args.max_clusters,
        args.lr,
        args.max_iters,
        args.patience,
        args.use_polarity,
    )?;

    fs::create_dir_all(&args.out_dir)?;
    let mut manifest = RunManifest::new(serde_json::to_value(args).expect("args serialize"));
    manifest.add_input(&args.events)?;
    if let Some(depth) = &args.flow_from_depth {
        manifest.add_input(depth)?;
    }

    let stream = manifest.record("load-events", || {
        event::load_events(&args.events, setup.geometry)
    })?;
    let slices = event::slice_by_duration(&stream, args.slice_ms / 1000.0)?;
    eprintln!("{} events in {} slices", stream.len(), slices.len());

    // On failure the manifest still lands next to whatever slices were
    // written, carrying the error so partial outputs are identifiable.
    match segment_slices(args, &setup, &slices, &mut manifest) {
        Ok(()) => {
            manifest.write(&args.out_dir.join("manifest.json"))?;
            Ok(())
        }
        Err(err) => {
            manifest.config["error"] = json!(err.to_string());
            let _ = manifest.write(&args.out_dir.join("manifest.json"));
            Err(err)
        }
    }
}

fn segment_slices(
    args: &SegmentArgs,
    setup: &SegmentSetup,
    slices: &[event::EventSlice],
    manifest: &mut RunManifest,
) -> Result<()> {
    let mut summary: Vec<serde_json::Value> = Vec::new();

    for (idx, slice) in slices.iter().enumerate() {
        let stem = format!("slice_{idx:04}");
        let output = manifest.record(&format!("{stem}.segment"), || {
            segment::segment(slice, &setup.config)
        })?;

        let file = ClustersFile::from_output(&output);
        let json = serde_json::to_string_pretty(&file).expect("clusters serialize");
        fs::write(args.out_dir.join(format!("{stem}.clusters.json")), json)?;

        for cluster in &output.clusters {
            let sub = slice.subset(&cluster.event_indices);
            let warped = warp::warp(&sub, &cluster.model)?;
            let iwe = objective::accumulate_iwe(&warped, args.epsilon, args.use_polarity)?;
            write_pgm_if_normalizable(
                &args
                    .out_dir
                    .join(format!("{stem}.cluster_{:02}.iwe.pgm", cluster.cluster_id)),
                iwe.pixels(),
                &setup.geometry,
            )?;
        }

        // Variation heat map of the whole slice under the dominant motion.
        let mvi_model = output
            .clusters
            .first()
            .map(|c| c.model.clone())
            .unwrap_or(MotionModel::Translation2D { v: [0.0, 0.0] });
        let mvi = variation::mvi(slice, &mvi_model, args.epsilon, args.use_polarity)?;
        write_pgm_if_normalizable(
            &args.out_dir.join(format!("{stem}.mvi.pgm")),
            &mvi,
            &setup.geometry,
        )?;

        if args.trace {
            for trace in &output.traces {
                let mut text = String::from("iter,");
                let dof = setup.config.warp_kind.dof();
                for j in 0..dof {
                    text.push_str(&format!("theta{j},"));
                }
                text.push_str("contrast\n");
                for (i, point) in trace.points.iter().enumerate() {
                    text.push_str(&format!("{i},"));
                    for v in &point.theta {
                        text.push_str(&format!("{v},"));
                    }
                    text.push_str(&format!("{}\n", point.contrast));
                }
                fs::write(
                    args.out_dir
                        .join(format!("{stem}.cluster_{:02}.trace.csv", trace.cluster_id)),
                    text,
                )?;
            }
        }
        eprintln!(
            "{stem}: {} events -> {} clusters + {} noise ({:?})",
            slice.len(),
            output.clusters.len(),
            output.noise_indices.len(),
            output.stop
        );
        summary.push(json!({
            "slice": idx,
            "n_events": slice.len(),
            "n_clusters": output.clusters.len(),
            "n_noise": output.noise_indices.len(),
            "stop": output.stop,
        }));
    }

    // One report on standard output once every slice is done.
    let mut stdout = std::io::stdout().lock();
    writeln!(
        stdout,
        "{}",
        serde_json::to_string(&json!({ "slices": summary })).unwrap()
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

#[derive(Args, Serialize)]
pub struct EvalArgs {
    /// Predicted clusters JSON (from `segment`).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth JSON (from `synth`).
    #[arg(long)]
    pub gt: PathBuf,
    /// The events both files describe.
    #[arg(long)]
    pub events: PathBuf,
    #[command(flatten)]
    pub geometry: GeometryArgs,
}

fn model_of_record(record: &segment::ClusterRecord) -> Result<MotionModel> {
    match record.warp_kind {
        WarpKind::DenseFlow => Err(Error::Shape(
            "clusters file holds a denseflow cluster; its flow field is not \
             serialized, so it cannot be re-evaluated"
                .into(),
        )),
        kind => MotionModel::from_params(kind, &record.theta),
    }
}

pub fn run_eval(args: &EvalArgs) -> Result<()> {
    let pred_text = fs::read_to_string(&args.pred)?;
    let needs_intrinsics = pred_text.contains("rotation3d");
    let geometry = args.geometry.build(needs_intrinsics)?;
    let slice = event::load_events(&args.events, geometry)?;
    let pred: ClustersFile = serde_json::from_str(&pred_text)
        .map_err(|e| Error::Shape(format!("bad clusters file: {e}")))?;
    let gt: GroundTruth = serde_json::from_str(&fs::read_to_string(&args.gt)?)
        .map_err(|e| Error::Shape(format!("bad ground-truth file: {e}")))?;

    if gt.labels.len() != slice.len() {
        return Err(Error::Shape(format!(
            "ground truth has {} labels for {} events",
            gt.labels.len(),
            slice.len()
        )));
    }

    let clusters: Vec<(MotionModel, Vec<usize>)> = pred
        .clusters
        .iter()
        .map(|c| Ok((model_of_record(c)?, c.event_indices.clone())))
        .collect::<Result<_>>()?;
    let fwl = metrics::segmented_fwl(&slice, &clusters, 1.0, false)?;

    let pred_indices: Vec<Vec<usize>> = pred
        .clusters
        .iter()
        .map(|c| c.event_indices.clone())
        .collect();
    let accuracy = metrics::label_accuracy(&pred_indices, slice.len(), &gt)?;

    let per_cluster: Vec<serde_json::Value> = accuracy
        .per_cluster
        .iter()
        .map(|m| {
            let iou = m.gt_label.and_then(|label| {
                let gt_box = &gt.objects[label as usize - 1].bbox;
                pred.clusters[m.cluster_id - 1]
                    .bbox
                    .map(|b| metrics::iou(&b, gt_box))
            });
            json!({
                "id": m.cluster_id,
                "iou": iou,
                "accuracy": m.accuracy,
            })
        })
        .collect();

    let report = json!({
        "fwl": fwl,
        "per_cluster": per_cluster,
        "overall_accuracy": accuracy.overall,
    });
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{}", serde_json::to_string_pretty(&report).unwrap())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// render

#[derive(Args, Serialize)]
pub struct RenderArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    /// Inline parameters `vx,vy` (or `wx,wy,wz`), or a JSON file with
    /// `{"warp_kind": ..., "theta": [...]}`.
    #[arg(long, allow_hyphen_values = true)]
    pub model: String,
    #[arg(long, value_enum, default_value = "translation2d")]
    pub warp: WarpArg,
    /// Which image to produce.
    #[arg(long, value_enum)]
    pub what: RenderWhat,
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = false)]
    pub use_polarity: bool,
    /// Output PGM path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also dump the image as raw little-endian f32.
    #[arg(long)]
    pub raw_out: Option<PathBuf>,
    /// For MVI renders, dump per-event magnitudes as `index,magnitude` CSV.
    #[arg(long)]
    pub magnitudes_csv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderWhat {
    Iwe,
    Mvi,
}

fn parse_model(text: &str, warp: WarpArg) -> Result<MotionModel> {
    // Inline comma-separated parameters first, else a JSON file.
    let inline: Option<Vec<f64>> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>().ok())
        .collect();
    if let Some(theta) = inline {
        let kind = match warp {
            WarpArg::Translation2d => WarpKind::Translation2D,
            WarpArg::Rotation3d => WarpKind::Rotation3D,
            WarpArg::Denseflow => {
                return Err(Error::Spec(
                    "denseflow cannot be given inline; render uses translation2d or rotation3d"
                        .into(),
                ))
            }
        };
        return MotionModel::from_params(kind, &theta);
    }
    #[derive(serde::Deserialize)]
    struct ModelFile {
        warp_kind: WarpKind,
        theta: Vec<f64>,
    }
    let parsed: ModelFile = serde_json::from_str(&fs::read_to_string(text)?)
        .map_err(|e| Error::Spec(format!("bad model file `{text}`: {e}")))?;
    MotionModel::from_params(parsed.warp_kind, &parsed.theta)
}

pub fn run_render(args: &RenderArgs) -> Result<()> {
    let need_intrinsics = matches!(args.warp, WarpArg::Rotation3d);
    let geometry = args.geometry.build(need_intrinsics)?;
    let slice = event::load_events(&args.events, geometry)?;
    let model = parse_model(&args.model, args.warp)?;

    let mut manifest = RunManifest::new(serde_json::to_value(args).expect("args serialize"));
    manifest.add_input(&args.events)?;

    let image = match args.what {
        RenderWhat::Iwe => {
            let warped = warp::warp(&slice, &model)?;
            let iwe = objective::accumulate_iwe(&warped, args.epsilon, args.use_polarity)?;
            iwe.pixels().to_vec()
        }
        RenderWhat::Mvi => variation::mvi(&slice, &model, args.epsilon, args.use_polarity)?,
    };
    let bytes = imageio::encode_pgm_minmax(&image, geometry.width, geometry.height)?;
    fs::write(&args.out, bytes)?;
    if let Some(raw) = &args.raw_out {
        imageio::write_f32_raw(raw, &image)?;
    }
    if let Some(csv) = &args.magnitudes_csv {
        let field = variation::variation(&slice, &model, args.epsilon, args.use_polarity)?;
        let mut text = String::from("index,magnitude\n");
        for (i, m) in field.magnitudes.iter().enumerate() {
            text.push_str(&format!("{i},{m}\n"));
        }
        fs::write(csv, text)?;
    }
    manifest.write(&args.out.with_extension("manifest.json"))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Args, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    /// Blur stds to test, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub sigmas: Vec<f64>,
    /// Mask thresholds to test, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub thresholds: Vec<f64>,
    #[arg(long, default_value = "otsu")]
    pub threshold: String,
    #[arg(long, default_value_t = 0.05)]
    pub min_residual_frac: f64,
    #[arg(long, default_value_t = 8)]
    pub max_clusters: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_sweep(args: &SweepArgs) -> Result<()> {
    let setup = build_segment_setup(
        WarpArg::Translation2d,
        &args.geometry,
        &None,
        &None,
        &None,
        args.epsilon,
        &args.threshold,
        false,
        args.min_residual_frac,
        args.max_clusters,
        args.lr,
        args.max_iters,
        args.patience,
        false,
    )?;
    let slice = event::load_events(&args.events, setup.geometry)?;
    let gt: GroundTruth = serde_json::from_str(&fs::read_to_string(&args.gt)?)
        .map_err(|e| Error::Shape(format!("bad ground-truth file: {e}")))?;

    let mut manifest = RunManifest::new(serde_json::to_value(args).expect("args serialize"));
    manifest.add_input(&args.events)?;
    manifest.add_input(&args.gt)?;

    let cells = manifest.record("sweep", || {
        metrics::sensitivity_sweep(&slice, &gt, &args.sigmas, &args.thresholds, &setup.config)
    })?;

    let mut text = String::from("sigma,threshold,iou\n");
    for cell in &cells {
        text.push_str(&format!("{},{},{}\n", cell.sigma, cell.threshold, cell.iou));
    }
    fs::write(&args.out, text)?;
    manifest.write(&args.out.with_extension("manifest.json"))?;
    eprintln!("{} sweep cells -> {}", cells.len(), args.out.display());
    Ok(())
}
