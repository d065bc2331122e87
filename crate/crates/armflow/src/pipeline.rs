//! End-to-end run orchestration. Every command operates inside one named run
//! directory under the output root, so a sequence of invocations (generate,
//! train, evaluate, track, report) composes into a single experiment whose
//! artifacts all live side by side:
//!
//! ```text
//! <out>/<run>/
//!   run.meta         resolved configuration echo (rewritten by every command)
//!   data/<split>/    rendered datasets (train / reference / test)
//!   checkpoints/     model weights and the estimated sensor-noise model
//!   frames/          predicted image sequences (binary PPM)
//!   masks/           occlusion masks (binary PGM, 255 = occluded)
//!   metrics.csv      accumulated metric rows, one file per run
//! ```
//!
//! Commands return a one-line human summary for the caller to print; all
//! detailed output goes to files. Artifacts a command depends on but cannot
//! find (datasets, checkpoints) surface as [`Error::MissingArtifact`] so the
//! command-line wrapper can map them to a distinct exit code.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use crate::config::RunConfig;
use crate::ekf::{
    estimate_sensor_noise, image_to_obs, track_ekf, GaussianBelief, KnnFlowObservation,
    SensorNoiseModel, TransitionModel,
};
use crate::error::{Error, Result};
use crate::forward::{
    nn_baseline_predict, train_deconv, train_forward, DeconvBaseline, FlowBranch, KnnFlowModel,
};
use crate::inverse::{track_by_inverse, train_inverse, InverseCnn};
use crate::knn::ReferenceStore;
use crate::metrics::{
    append_metrics, deg_to_rad, per_joint_rmse, rad_to_deg, read_metrics, write_ekf_trajectory,
    write_inverse_trajectory, MetricsRow,
};
use crate::occlusion::{bidirectional_flow, evaluate_occlusion, symmetry_check};
use crate::sim::{self, Dataset, JointConfig};
use ftnn::Tensor;

// ---------------------------------------------------------------------------
// Run directory layout
// ---------------------------------------------------------------------------

/// Resolved locations of a run's artifacts.
#[derive(Debug, Clone)]
pub struct RunPaths {
    out: PathBuf,
    run: String,
    pub root: PathBuf,
    pub checkpoints: PathBuf,
    pub frames: PathBuf,
    pub masks: PathBuf,
}

impl RunPaths {
    pub fn new(cfg: &RunConfig) -> RunPaths {
        let out = PathBuf::from(&cfg.out);
        let root = out.join(&cfg.run);
        RunPaths {
            out,
            run: cfg.run.clone(),
            checkpoints: root.join("checkpoints"),
            frames: root.join("frames"),
            masks: root.join("masks"),
            root,
        }
    }

    /// Creates the run directories and writes the configuration echo. Every
    /// command calls this first, so `run.meta` always reflects the exact
    /// configuration of the most recent command that touched the run.
    pub fn prepare(cfg: &RunConfig) -> Result<RunPaths> {
        let paths = RunPaths::new(cfg);
        fs::create_dir_all(&paths.checkpoints)?;
        fs::create_dir_all(&paths.frames)?;
        fs::create_dir_all(&paths.masks)?;
        fs::write(paths.meta(), cfg.meta_string())?;
        Ok(paths)
    }

    pub fn meta(&self) -> PathBuf {
        self.root.join("run.meta")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn data(&self, split: &str) -> PathBuf {
        sim::dataset_dir(&self.out, &self.run, split)
    }

    pub fn forward_ckpt(&self) -> PathBuf {
        self.checkpoints.join("forward.ftnn")
    }

    pub fn deconv_ckpt(&self) -> PathBuf {
        self.checkpoints.join("deconv.ftnn")
    }

    pub fn inverse_ckpt(&self) -> PathBuf {
        self.checkpoints.join("inverse.ftnn")
    }

    pub fn noise_model(&self, k: usize, rank: usize) -> PathBuf {
        self.checkpoints.join(format!("noise-k{k}-r{rank}.txt"))
    }
}

// ---------------------------------------------------------------------------
// Shared loaders
// ---------------------------------------------------------------------------

fn load_split(cfg: &RunConfig, split: &str) -> Result<Dataset> {
    let dir = RunPaths::new(cfg).data(split);
    if !sim::dataset_exists(&dir) {
        return Err(Error::MissingArtifact(format!(
            "{split} dataset at {} (run gen-data first)",
            dir.display()
        )));
    }
    sim::load_dataset(&dir)
}

fn load_branch(cfg: &RunConfig, paths: &RunPaths) -> Result<FlowBranch> {
    FlowBranch::load(&paths.forward_ckpt(), cfg.dof, cfg.image_size)
}

/// Trained flow branch plus the reference set it warps from.
fn load_knn_model(cfg: &RunConfig, paths: &RunPaths) -> Result<KnnFlowModel> {
    let branch = load_branch(cfg, paths)?;
    let refs = load_split(cfg, "reference")?;
    KnnFlowModel::new(branch, refs, cfg.k)
}

/// States and rendered frames of the lowest-numbered trajectory in a dataset,
/// in step order. Tracking and prediction commands all follow this sequence
/// so their outputs line up frame for frame.
fn first_trajectory(ds: &Dataset) -> Result<(Vec<JointConfig>, Vec<Tensor>)> {
    let id = ds
        .records
        .iter()
        .filter_map(|r| r.trajectory_id)
        .min()
        .ok_or_else(|| Error::Dataset("dataset has no trajectory annotations".into()))?;
    let mut states = Vec::new();
    let mut frames = Vec::new();
    for r in &ds.records {
        if r.trajectory_id == Some(id) {
            states.push(r.angles.clone());
            frames.push(r.image.clone());
        }
    }
    Ok((states, frames))
}

/// Model column value for metric rows and frame filenames. The neighbour
/// count is part of the identity of the flow model, so it is baked into the
/// tag rather than kept in a separate column.
fn model_tag(cfg: &RunConfig, model: &str) -> String {
    match model {
        "knnflow" => format!("knnflow-k{}", cfg.k),
        other => other.to_string(),
    }
}

fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    fs::write(path, s)?;
    Ok(())
}

fn final_loss(losses: &[f64]) -> String {
    match losses.last() {
        Some(l) => format!("{l:.6}"),
        None => "n/a".into(),
    }
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

/// Renders the three splits. Trajectory data (train/test) interpolates random
/// endpoint pairs; the reference split is i.i.d. uniform over joint limits.
/// Each split gets its own derived seed so resizing one split never perturbs
/// the others.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<String> {
    let paths = RunPaths::prepare(cfg)?;
    let arm = cfg.arm()?;
    let occ = cfg.occluder_model()?;

    let train = sim::generate_trajectory_dataset(
        &arm,
        cfg.train_trajectories,
        cfg.steps_per_trajectory,
        cfg.seed,
        occ.as_ref(),
    )?;
    sim::save_dataset(&paths.data("train"), &train, &arm, cfg.seed)?;

    let ref_seed = cfg.seed.wrapping_add(1);
    let refs = sim::generate_uniform_dataset(&arm, cfg.n_reference, ref_seed, occ.as_ref())?;
    sim::save_dataset(&paths.data("reference"), &refs, &arm, ref_seed)?;

    let test_seed = cfg.seed.wrapping_add(2);
    let test = sim::generate_trajectory_dataset(
        &arm,
        cfg.test_trajectories,
        cfg.test_steps,
        test_seed,
        occ.as_ref(),
    )?;
    sim::save_dataset(&paths.data("test"), &test, &arm, test_seed)?;

    Ok(format!(
        "wrote {} train / {} reference / {} test samples under {}",
        train.len(),
        refs.len(),
        test.len(),
        paths.root.display()
    ))
}

// ---------------------------------------------------------------------------
// Training commands
// ---------------------------------------------------------------------------

pub fn cmd_train_forward(cfg: &RunConfig) -> Result<String> {
    let paths = RunPaths::prepare(cfg)?;
    let train = load_split(cfg, "train")?;
    let refs = load_split(cfg, "reference")?;
    let store = ReferenceStore::build(&refs)?;
    let mut branch = FlowBranch::new(cfg.dof, cfg.image_size, cfg.seed)?;
    let tc = cfg.train_config();
    let losses = train_forward(&mut branch, &train, &store, &refs, &tc, |epoch, _loss, net| {
        let snap = paths.checkpoints.join(format!("forward-epoch-{epoch:03}.ftnn"));
        ftnn::save_checkpoint(net, &snap)?;
        Ok(())
    })?;
    branch.save(&paths.forward_ckpt())?;
    write_loss_csv(&paths.root.join("forward-loss.csv"), &losses)?;
    Ok(format!(
        "trained flow branch for {} epochs (final loss {}) -> {}",
        losses.len(),
        final_loss(&losses),
        paths.forward_ckpt().display()
    ))
}

pub fn cmd_train_deconv(cfg: &RunConfig) -> Result<String> {
    let paths = RunPaths::prepare(cfg)?;
    let train = load_split(cfg, "train")?;
    let mut model = DeconvBaseline::new(cfg.dof, cfg.image_size, cfg.seed)?;
    let tc = cfg.train_config();
    let losses = train_deconv(&mut model, &train, &tc, |epoch, _loss, net| {
        let snap = paths.checkpoints.join(format!("deconv-epoch-{epoch:03}.ftnn"));
        ftnn::save_checkpoint(net, &snap)?;
        Ok(())
    })?;
    model.save(&paths.deconv_ckpt())?;
    write_loss_csv(&paths.root.join("deconv-loss.csv"), &losses)?;
    Ok(format!(
        "trained deconv baseline for {} epochs (final loss {}) -> {}",
        losses.len(),
        final_loss(&losses),
        paths.deconv_ckpt().display()
    ))
}

pub fn cmd_train_inverse(cfg: &RunConfig) -> Result<String> {
    let paths = RunPaths::prepare(cfg)?;
    let train = load_split(cfg, "train")?;
    let mut model = InverseCnn::new(cfg.dof, cfg.image_size, cfg.seed)?;
    let tc = cfg.train_config();
    let losses = train_inverse(&mut model, &train, &tc, |epoch, _loss, net| {
        let snap = paths.checkpoints.join(format!("inverse-epoch-{epoch:03}.ftnn"));
        ftnn::save_checkpoint(net, &snap)?;
        Ok(())
    })?;
    model.save(&paths.inverse_ckpt())?;
    write_loss_csv(&paths.root.join("inverse-loss.csv"), &losses)?;
    Ok(format!(
        "trained inverse model for {} epochs (final loss {}) -> {}",
        losses.len(),
        final_loss(&losses),
        paths.inverse_ckpt().display()
    ))
}

// ---------------------------------------------------------------------------
// predict / eval
// ---------------------------------------------------------------------------

enum Predictor {
    KnnFlow(KnnFlowModel),
    Deconv(DeconvBaseline),
    Nearest(ReferenceStore, Dataset),
}

impl Predictor {
    fn build(cfg: &RunConfig, paths: &RunPaths, model: &str) -> Result<Predictor> {
        match model {
            "knnflow" => Ok(Predictor::KnnFlow(load_knn_model(cfg, paths)?)),
            "deconv" => Ok(Predictor::Deconv(DeconvBaseline::load(
                &paths.deconv_ckpt(),
                cfg.dof,
                cfg.image_size,
            )?)),
            "nn" => {
                let refs = load_split(cfg, "reference")?;
                let store = ReferenceStore::build(&refs)?;
                Ok(Predictor::Nearest(store, refs))
            }
            other => Err(Error::Config(format!(
                "unknown model '{other}' (expected knnflow, deconv, or nn)"
            ))),
        }
    }

    fn predict(&self, x: &[f64]) -> Result<Tensor> {
        match self {
            Predictor::KnnFlow(m) => m.predict(x),
            Predictor::Deconv(m) => m.predict(x),
            Predictor::Nearest(store, refs) => Ok(nn_baseline_predict(store, refs, x)?.clone()),
        }
    }
}

/// Predicts the first test trajectory frame by frame and writes the result
/// as a PPM sequence for eyeballing against `data/test`.
pub fn cmd_predict(cfg: &RunConfig, model: &str) -> Result<String> {
    let paths = RunPaths::prepare(cfg)?;
    let test = load_split(cfg, "test")?;
    let (states, _) = first_trajectory(&test)?;
    let predictor = Predictor::build(cfg, &paths, model)?;
    let tag = model_tag(cfg, model);
    for (i, q) in states.iter().enumerate() {
        let img = predictor.predict(q)?;
        sim::write_ppm(&paths.frames.join(format!("{tag}-{i:04}.ppm")), &img)?;
    }
    Ok(format!(
        "wrote {} predicted frames ({tag}) to {}",
        states.len(),
        paths.frames.display()
    ))
}

/// Scores a forward model on the whole test split and appends one metrics
/// row. Errors are pooled over every pixel of every frame; predictions are
/// scored one frame at a time so large splits never sit in memory twice.
pub fn cmd_eval(cfg: &RunConfig, model: &str) -> Result<String> {
    let paths = RunPaths::prepare(cfg)?;
    let test = load_split(cfg, "test")?;
    if test.is_empty() {
        return Err(Error::Dataset("test split is empty".into()));
    }
    let predictor = Predictor::build(cfg, &paths, model)?;

    let mut abs_sum = 0.0f64;
    let mut sq_sum = 0.0f64;
    let mut count = 0usize;
    for rec in &test.records {
        let pred = predictor.predict(&rec.angles)?;
        for (&p, &t) in pred.data().iter().zip(rec.image.data()) {
            let d = p as f64 - t as f64;
            abs_sum += d.abs();
            sq_sum += d * d;
            count += 1;
        }
    }
    let mean_l1 = abs_sum / count as f64;
    let rms = (sq_sum / count as f64).sqrt();

    let tag = model_tag(cfg, model);
    let row = MetricsRow {
        kind: "image".into(),
        model: tag.clone(),
        split: "test".into(),
        mean_l1: Some(mean_l1),
        rms: Some(rms),
        ..Default::default()
    };
    append_metrics(&paths.metrics(), &[row])?;
    Ok(format!(
        "{tag} on test: mean L1 {mean_l1:.6}, rms {rms:.6} over {} frames",
        test.len()
    ))
}

// ---------------------------------------------------------------------------
// Tracking commands
// ---------------------------------------------------------------------------

/// Deliberately wrong starting guess: each joint pushed off truth by the
/// configured offset, alternating sign per joint so the error is not a pure
/// global rotation, clamped back inside joint limits.
fn offset_prior_state(truth: &[f64], offset_rad: f64, limit: f64) -> Vec<f64> {
    truth
        .iter()
        .enumerate()
        .map(|(j, &q)| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            (q + sign * offset_rad).clamp(-limit, limit)
        })
        .collect()
}

/// Sensor-noise model for the current (k, rank): loaded from the run's
/// checkpoint directory when present, otherwise estimated from forward-model
/// residuals on the train split (strided down to at most 512 samples) and
/// saved for reuse.
fn load_or_estimate_noise(
    cfg: &RunConfig,
    paths: &RunPaths,
    model: &KnnFlowModel,
) -> Result<SensorNoiseModel> {
    let path = paths.noise_model(cfg.k, cfg.rank);
    if path.is_file() {
        return SensorNoiseModel::load(&path);
    }
    let train = load_split(cfg, "train")?;
    if train.is_empty() {
        return Err(Error::Dataset("train split is empty".into()));
    }
    let stride = (train.len() / 512).max(1);
    let mut residuals = Vec::new();
    for rec in train.records.iter().step_by(stride) {
        let pred = model.predict(&rec.angles)?;
        let r: Vec<f64> = rec
            .image
            .data()
            .iter()
            .zip(pred.data())
            .map(|(&t, &p)| t as f64 - p as f64)
            .collect();
        residuals.push(r);
    }
    let noise = estimate_sensor_noise(&residuals, cfg.rank)?;
    noise.save(&path)?;
    Ok(noise)
}

/// Tracks the first test trajectory with the filter, starting from a prior
/// offset from the true initial pose. Writes the per-frame trajectory CSV and
/// appends one per-joint RMSE row (in degrees) per joint.
pub fn cmd_track_ekf(cfg: &RunConfig) -> Result<String> {
    let paths = RunPaths::prepare(cfg)?;
    let model = load_knn_model(cfg, &paths)?;
    let test = load_split(cfg, "test")?;
    let (truth, frames) = first_trajectory(&test)?;
    let noise = load_or_estimate_noise(cfg, &paths, &model)?;

    let obs = KnnFlowObservation { model: &model };
    let trans = TransitionModel {
        dof: cfg.dof,
        dt: cfg.dt,
        gamma: cfg.gamma,
    };
    let offset_rad = deg_to_rad(cfg.prior_offset_deg);
    let x0 = offset_prior_state(&truth[0], offset_rad, cfg.joint_limit);
    let prior = GaussianBelief::from_prior(&x0, offset_rad.abs().max(1e-3));
    let observations: Vec<DVector<f64>> = frames.iter().map(image_to_obs).collect();
    let beliefs = track_ekf(&obs, &trans, &noise, &observations, &prior)?;

    let traj_csv = paths
        .root
        .join(format!("track-ekf-offset{}.csv", cfg.prior_offset_deg));
    write_ekf_trajectory(&traj_csv, &truth, &beliefs)?;

    let estimates: Vec<JointConfig> = beliefs.iter().map(|b| b.current()).collect();
    let rmse = per_joint_rmse(&estimates, &truth)?;
    let rows: Vec<MetricsRow> = rmse
        .iter()
        .enumerate()
        .map(|(j, &r)| MetricsRow {
            kind: "tracking".into(),
            model: "ekf".into(),
            split: "test".into(),
            offset_deg: Some(cfg.prior_offset_deg),
            joint: Some(j),
            rmse: Some(rad_to_deg(r)),
            ..Default::default()
        })
        .collect();
    append_metrics(&paths.metrics(), &rows)?;

    let per_joint: Vec<String> = rmse
        .iter()
        .map(|&r| format!("{:.2}", rad_to_deg(r)))
        .collect();
    Ok(format!(
        "tracked {} frames from {}° offset; per-joint rmse [{}]° -> {}",
        frames.len(),
        cfg.prior_offset_deg,
        per_joint.join(", "),
        traj_csv.display()
    ))
}

/// Tracks the same trajectory by running the inverse model on each frame
/// independently, with no temporal filtering.
pub fn cmd_track_inverse(cfg: &RunConfig) -> Result<String> {
    let paths = RunPaths::prepare(cfg)?;
    let model = InverseCnn::load(&paths.inverse_ckpt(), cfg.dof, cfg.image_size)?;
    let test = load_split(cfg, "test")?;
    let (truth, frames) = first_trajectory(&test)?;
    let estimates = track_by_inverse(&model, &frames)?;

    let traj_csv = paths.root.join("track-inverse.csv");
    write_inverse_trajectory(&traj_csv, &truth, &estimates)?;

    let rmse = per_joint_rmse(&estimates, &truth)?;
    let rows: Vec<MetricsRow> = rmse
        .iter()
        .enumerate()
        .map(|(j, &r)| MetricsRow {
            kind: "tracking".into(),
            model: "inverse".into(),
            split: "test".into(),
            joint: Some(j),
            rmse: Some(rad_to_deg(r)),
            ..Default::default()
        })
        .collect();
    append_metrics(&paths.metrics(), &rows)?;

    let per_joint: Vec<String> = rmse
        .iter()
        .map(|&r| format!("{:.2}", rad_to_deg(r)))
        .collect();
    Ok(format!(
        "inverse-tracked {} frames; per-joint rmse [{}]° -> {}",
        frames.len(),
        per_joint.join(", "),
        traj_csv.display()
    ))
}

// ---------------------------------------------------------------------------
// occlusion
// ---------------------------------------------------------------------------

/// Flow-symmetry occlusion analysis on the endpoints of the first test
/// trajectory: flows are computed both ways between the first and last frame,
/// the round-trip residual is thresholded over the first frame's arm pixels,
/// and the mask is written as a PGM. When the scene has a configured
/// occluder, the geometric transition truth is written alongside and the
/// detection is scored.
pub fn cmd_occlusion(cfg: &RunConfig) -> Result<String> {
    let paths = RunPaths::prepare(cfg)?;
    let branch = load_branch(cfg, &paths)?;
    let test = load_split(cfg, "test")?;
    let (states, _) = first_trajectory(&test)?;
    if states.len() < 2 {
        return Err(Error::Dataset(
            "occlusion analysis needs a trajectory with at least two frames".into(),
        ));
    }
    let q1 = &states[0];
    let q2 = &states[states.len() - 1];

    let arm = cfg.arm()?;
    let arm_mask = sim::silhouette(&arm, q1)?;
    let (flow_fwd, flow_bwd) = bidirectional_flow(&branch, q1, q2)?;
    let mask = symmetry_check(&flow_fwd, &flow_bwd, &arm_mask, cfg.epsilon_px)?;
    let n = cfg.image_size;
    sim::write_pgm(&paths.masks.join("occlusion.pgm"), &mask, n, n)?;

    let occ = cfg.occluder_model()?;
    let (precision, recall) = if occ.is_some() {
        let (truth, _) = sim::transition_occlusion_truth(&arm, q1, q2, occ.as_ref())?;
        sim::write_pgm(&paths.masks.join("occlusion-truth.pgm"), &truth, n, n)?;
        let (p, r) = evaluate_occlusion(&mask, &truth)?;
        (Some(p), Some(r))
    } else {
        (None, None)
    };

    let row = MetricsRow {
        kind: "occlusion".into(),
        model: "flow-symmetry".into(),
        split: "test".into(),
        epsilon_px: Some(cfg.epsilon_px),
        precision,
        recall,
        ..Default::default()
    };
    append_metrics(&paths.metrics(), &[row])?;

    let flagged = mask.iter().filter(|&&b| b).count();
    let scored = match (precision, recall) {
        (Some(p), Some(r)) => format!("precision {p:.3}, recall {r:.3}"),
        _ => "no occluder configured, mask unscored".into(),
    };
    Ok(format!(
        "flagged {flagged} px at epsilon {} px; {scored} -> {}",
        cfg.epsilon_px,
        paths.masks.join("occlusion.pgm").display()
    ))
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn fmt_opt(v: Option<f64>, width: usize, prec: usize) -> String {
    match v {
        Some(x) => format!("{x:>width$.prec$}"),
        None => format!("{:>width$}", "-"),
    }
}

/// Renders the run's accumulated metrics as a plain-text table, grouped by
/// metric kind. Pure read-modelled on the CSV, so it can run any time after
/// at least one scoring command.
pub fn cmd_report(cfg: &RunConfig) -> Result<String> {
    let paths = RunPaths::prepare(cfg)?;
    let metrics_path = paths.metrics();
    if !metrics_path.is_file() {
        return Err(Error::MissingArtifact(format!(
            "metrics file {} (run eval, track-ekf, track-inverse, or occlusion first)",
            metrics_path.display()
        )));
    }
    let rows = read_metrics(&metrics_path)?;
    let mut out = format!("run {}\n", paths.root.display());

    let image: Vec<&MetricsRow> = rows.iter().filter(|r| r.kind == "image").collect();
    if !image.is_empty() {
        out.push_str("\nimage prediction (test split)\n");
        out.push_str(&format!("  {:<14} {:>10} {:>10}\n", "model", "mean_l1", "rms"));
        for r in image {
            out.push_str(&format!(
                "  {:<14} {} {}\n",
                r.model,
                fmt_opt(r.mean_l1, 10, 6),
                fmt_opt(r.rms, 10, 6)
            ));
        }
    }

    let tracking: Vec<&MetricsRow> = rows.iter().filter(|r| r.kind == "tracking").collect();
    if !tracking.is_empty() {
        out.push_str("\ntracking rmse per joint (degrees)\n");
        out.push_str(&format!(
            "  {:<10} {:>10} {:>6} {:>10}\n",
            "model", "offset_deg", "joint", "rmse_deg"
        ));
        for r in &tracking {
            let joint = match r.joint {
                Some(j) => format!("{j:>6}"),
                None => format!("{:>6}", "-"),
            };
            out.push_str(&format!(
                "  {:<10} {} {} {}\n",
                r.model,
                fmt_opt(r.offset_deg, 10, 1),
                joint,
                fmt_opt(r.rmse, 10, 3)
            ));
        }
    }

    let occl: Vec<&MetricsRow> = rows.iter().filter(|r| r.kind == "occlusion").collect();
    if !occl.is_empty() {
        out.push_str("\nocclusion detection\n");
        out.push_str(&format!(
            "  {:<14} {:>10} {:>10} {:>10}\n",
            "model", "epsilon_px", "precision", "recall"
        ));
        for r in occl {
            out.push_str(&format!(
                "  {:<14} {} {} {}\n",
                r.model,
                fmt_opt(r.epsilon_px, 10, 2),
                fmt_opt(r.precision, 10, 3),
                fmt_opt(r.recall, 10, 3)
            ));
        }
    }

    if rows.is_empty() {
        out.push_str("\nno metrics recorded yet\n");
    }
    Ok(out)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    /// Small world that exercises every command quickly: 16 px images,
    /// 2-dof arm, a handful of samples, one training epoch.
    fn tiny_config(out: &Path, run: &str) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.out = out.to_string_lossy().into_owned();
        cfg.run = run.into();
        cfg.image_size = 16;
        cfg.dof = 2;
        cfg.link_lengths = vec![0.22, 0.18];
        cfg.link_widths = vec![0.09, 0.07];
        cfg.train_trajectories = 4;
        cfg.steps_per_trajectory = 3;
        cfg.n_reference = 12;
        cfg.test_trajectories = 2;
        cfg.test_steps = 4;
        cfg.k = 1;
        cfg.epochs = 1;
        cfg.batch_size = 4;
        cfg.rank = 4;
        cfg.occluder = "rect".into();
        cfg.validate().unwrap();
        cfg
    }

    fn temp_out(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("armflow_pipeline_{tag}"));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn commands_fail_cleanly_without_their_inputs() {
        let out = temp_out("missing");
        let cfg = tiny_config(&out, "empty");
        // No datasets yet: training and evaluation must point at gen-data.
        for err in [
            cmd_train_forward(&cfg).unwrap_err(),
            cmd_eval(&cfg, "nn").unwrap_err(),
            cmd_report(&cfg).unwrap_err(),
        ] {
            assert!(matches!(err, Error::MissingArtifact(_)), "got {err}");
        }
        // Datasets but no checkpoint: model loading is the missing piece.
        cmd_gen_data(&cfg).unwrap();
        let err = cmd_predict(&cfg, "knnflow").unwrap_err();
        assert!(matches!(err, Error::MissingArtifact(_)), "got {err}");
        // The inverse net needs a 32-multiple image size to even construct,
        // so its missing-checkpoint path is probed on a 32 px config.
        let mut inv_cfg = tiny_config(&out, "empty-inv");
        inv_cfg.image_size = 32;
        let err = cmd_track_inverse(&inv_cfg).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact(_)), "got {err}");
    }

    #[test]
    fn unknown_model_name_is_a_config_error() {
        let out = temp_out("badmodel");
        let cfg = tiny_config(&out, "bad");
        cmd_gen_data(&cfg).unwrap();
        let err = cmd_eval(&cfg, "resnet").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err}");
    }

    #[test]
    fn gen_data_is_reproducible_across_runs() {
        let out = temp_out("repro");
        let a = tiny_config(&out, "a");
        let b = tiny_config(&out, "b");
        cmd_gen_data(&a).unwrap();
        cmd_gen_data(&b).unwrap();
        for split in ["train", "reference", "test"] {
            let ma = fs::read(RunPaths::new(&a).data(split).join("manifest.csv")).unwrap();
            let mb = fs::read(RunPaths::new(&b).data(split).join("manifest.csv")).unwrap();
            assert_eq!(ma, mb, "{split} manifests differ");
        }
        let ia = fs::read(RunPaths::new(&a).data("train").join("images/000000.ppm")).unwrap();
        let ib = fs::read(RunPaths::new(&b).data("train").join("images/000000.ppm")).unwrap();
        assert_eq!(ia, ib);
    }

    /// One pass over the whole command surface on the tiny world. Slowest
    /// test in the module (a real training epoch plus an EKF run), but it is
    /// the only place the commands are checked to compose end to end.
    #[test]
    fn full_pipeline_composes_on_a_tiny_world() {
        let out = temp_out("full");
        let cfg = tiny_config(&out, "tiny");
        let paths = RunPaths::new(&cfg);

        cmd_gen_data(&cfg).unwrap();
        assert!(paths.meta().is_file());

        cmd_train_forward(&cfg).unwrap();
        assert!(paths.forward_ckpt().is_file());
        assert!(paths.root.join("forward-loss.csv").is_file());

        cmd_train_deconv(&cfg).unwrap();
        let mut inv_cfg = cfg.clone();
        // The inverse net downsamples by 32, so it gets its own image size;
        // everything else in this test stays on the 16 px world.
        inv_cfg.image_size = 32;
        inv_cfg.run = "tiny-inv".into();
        cmd_gen_data(&inv_cfg).unwrap();
        cmd_train_inverse(&inv_cfg).unwrap();
        cmd_track_inverse(&inv_cfg).unwrap();
        let inv_rows = read_metrics(&RunPaths::new(&inv_cfg).metrics()).unwrap();
        assert_eq!(inv_rows.len(), inv_cfg.dof, "one rmse row per joint");
        assert!(inv_rows.iter().all(|r| r.model == "inverse"));

        for model in ["knnflow", "deconv", "nn"] {
            cmd_eval(&cfg, model).unwrap();
        }
        cmd_predict(&cfg, "knnflow").unwrap();
        assert!(paths.frames.join("knnflow-k1-0000.ppm").is_file());

        cmd_track_ekf(&cfg).unwrap();
        assert!(paths.noise_model(cfg.k, cfg.rank).is_file());
        assert!(paths.root.join("track-ekf-offset10.csv").is_file());

        cmd_occlusion(&cfg).unwrap();
        assert!(paths.masks.join("occlusion.pgm").is_file());
        assert!(paths.masks.join("occlusion-truth.pgm").is_file());

        let rows = read_metrics(&paths.metrics()).unwrap();
        let kinds: Vec<&str> = rows.iter().map(|r| r.kind.as_str()).collect();
        assert!(kinds.contains(&"image"));
        assert!(kinds.contains(&"tracking"));
        assert!(kinds.contains(&"occlusion"));
        let image_models: Vec<&str> = rows
            .iter()
            .filter(|r| r.kind == "image")
            .map(|r| r.model.as_str())
            .collect();
        assert_eq!(image_models, ["knnflow-k1", "deconv", "nn"]);

        let report = cmd_report(&cfg).unwrap();
        assert!(report.contains("knnflow-k1"));
        assert!(report.contains("tracking rmse per joint"));
        assert!(report.contains("flow-symmetry"));

        // The meta echo parses back into the exact configuration.
        let meta = fs::read_to_string(paths.meta()).unwrap();
        let mut back = RunConfig::default();
        for line in meta.lines() {
            let (k, v) = line.split_once('=').unwrap();
            back.set(k.trim(), v.trim()).unwrap();
        }
        assert_eq!(back, cfg);
    }
}
