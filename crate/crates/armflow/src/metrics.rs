//! Evaluation metrics and the CSV artifacts the pipeline writes.
//!
//! All runs append to one `metrics.csv` with a fixed column set; rows leave
//! inapplicable cells empty. f64 values are written with Rust's
//! shortest-roundtrip formatting, so identical runs produce identical bytes.

use crate::ekf::GaussianBelief;
use crate::error::{Error, Result};
use crate::sim::JointConfig;
use ftnn::Tensor;
use std::fmt::Write as _;
use std::path::Path;

/// Mean absolute error and root-mean-square error over aligned image lists,
/// pooled across all frames, channels, and pixels.
pub fn compute_metrics(predictions: &[Tensor], ground_truth: &[Tensor]) -> Result<(f64, f64)> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} ground-truth frames",
            predictions.len(),
            ground_truth.len()
        )));
    }
    let mut n = 0usize;
    let mut abs = 0.0f64;
    let mut sq = 0.0f64;
    for (p, t) in predictions.iter().zip(ground_truth) {
        if p.shape() != t.shape() {
            return Err(Error::Shape(format!(
                "frame shapes differ: {:?} vs {:?}",
                p.shape(),
                t.shape()
            )));
        }
        for (&a, &b) in p.data().iter().zip(t.data()) {
            let d = a as f64 - b as f64;
            abs += d.abs();
            sq += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Shape("no pixels to compare".into()));
    }
    Ok((abs / n as f64, (sq / n as f64).sqrt()))
}

/// Root-mean-square error per joint over aligned state sequences (radians in,
/// radians out).
pub fn per_joint_rmse(estimates: &[JointConfig], truth: &[JointConfig]) -> Result<Vec<f64>> {
    if estimates.len() != truth.len() || estimates.is_empty() {
        return Err(Error::Shape(format!(
            "{} estimates vs {} truth states",
            estimates.len(),
            truth.len()
        )));
    }
    let dof = truth[0].len();
    let mut acc = vec![0.0f64; dof];
    for (e, t) in estimates.iter().zip(truth) {
        if e.len() != dof || t.len() != dof {
            return Err(Error::Shape("state dimension mismatch".into()));
        }
        for j in 0..dof {
            let d = e[j] - t[j];
            acc[j] += d * d;
        }
    }
    Ok(acc.iter().map(|&s| (s / estimates.len() as f64).sqrt()).collect())
}

/// Mean absolute joint error of one estimate against one truth state.
pub fn mean_abs_error(estimate: &[f64], truth: &[f64]) -> f64 {
    estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / estimate.len() as f64
}

pub fn rad_to_deg(rad: f64) -> f64 {
    rad * 180.0 / std::f64::consts::PI
}

pub fn deg_to_rad(deg: f64) -> f64 {
    deg * std::f64::consts::PI / 180.0
}

// ---------------------------------------------------------------------------
// metrics.csv
// ---------------------------------------------------------------------------

pub const METRICS_HEADER: &str =
    "kind,model,split,offset_deg,epsilon_px,joint,mean_l1,rms,rmse,precision,recall";

/// One metrics.csv row. `kind` is the experiment family (image, tracking,
/// occlusion); inapplicable fields stay `None` and serialize as empty cells.
#[derive(Debug, Clone, Default)]
pub struct MetricsRow {
    pub kind: String,
    pub model: String,
    pub split: String,
    pub offset_deg: Option<f64>,
    pub epsilon_px: Option<f64>,
    pub joint: Option<usize>,
    pub mean_l1: Option<f64>,
    pub rms: Option<f64>,
    pub rmse: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

fn cell_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.kind,
            self.model,
            self.split,
            cell_f64(self.offset_deg),
            cell_f64(self.epsilon_px),
            self.joint.map(|j| j.to_string()).unwrap_or_default(),
            cell_f64(self.mean_l1),
            cell_f64(self.rms),
            cell_f64(self.rmse),
            cell_f64(self.precision),
            cell_f64(self.recall),
        )
    }
}

/// Appends rows to `metrics.csv`, writing the header first if the file does
/// not exist yet.
pub fn append_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut text = String::new();
    if !path.exists() {
        text.push_str(METRICS_HEADER);
        text.push('\n');
    }
    for row in rows {
        let _ = writeln!(text, "{}", row.to_csv());
    }
    use std::io::Write as _;
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}

/// Reads metrics.csv back into rows (used by `report` and tests).
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| Error::MissingArtifact(format!("metrics file {}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => {
            return Err(Error::Dataset(format!(
                "unexpected metrics header: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let parse_f = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse::<f64>()
                .map(Some)
                .map_err(|e| Error::Dataset(format!("bad metrics value {s:?}: {e}")))
        }
    };
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 11 {
            return Err(Error::Dataset(format!("metrics row has {} cells", cells.len())));
        }
        rows.push(MetricsRow {
            kind: cells[0].to_string(),
            model: cells[1].to_string(),
            split: cells[2].to_string(),
            offset_deg: parse_f(cells[3])?,
            epsilon_px: parse_f(cells[4])?,
            joint: if cells[5].is_empty() {
                None
            } else {
                Some(cells[5].parse().map_err(|_| {
                    Error::Dataset(format!("bad joint index {:?}", cells[5]))
                })?)
            },
            mean_l1: parse_f(cells[6])?,
            rms: parse_f(cells[7])?,
            rmse: parse_f(cells[8])?,
            precision: parse_f(cells[9])?,
            recall: parse_f(cells[10])?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Trajectory CSVs
// ---------------------------------------------------------------------------

/// Long-format tracking trajectory: one row per (frame, joint) with the true
/// angle, the filter mean, and the filter variance for that joint.
pub fn write_ekf_trajectory(
    path: &Path,
    truth: &[JointConfig],
    beliefs: &[GaussianBelief],
) -> Result<()> {
    if truth.len() != beliefs.len() {
        return Err(Error::Shape(format!(
            "{} truth states vs {} beliefs",
            truth.len(),
            beliefs.len()
        )));
    }
    let mut text = String::from("frame,joint,truth,estimate,variance\n");
    for (f, (t, b)) in truth.iter().zip(beliefs).enumerate() {
        let mean = b.current();
        let var = b.current_variances();
        for j in 0..t.len() {
            let _ = writeln!(text, "{f},{j},{},{},{}", t[j], mean[j], var[j]);
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Long-format stateless-tracking trajectory: one row per (frame, joint).
pub fn write_inverse_trajectory(
    path: &Path,
    truth: &[JointConfig],
    estimates: &[JointConfig],
) -> Result<()> {
    if truth.len() != estimates.len() {
        return Err(Error::Shape(format!(
            "{} truth states vs {} estimates",
            truth.len(),
            estimates.len()
        )));
    }
    let mut text = String::from("frame,joint,truth,estimate\n");
    for (f, (t, e)) in truth.iter().zip(estimates).enumerate() {
        for j in 0..t.len() {
            let _ = writeln!(text, "{f},{j},{},{}", t[j], e[j]);
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_metrics_match_hand_computed_cases() {
        let a = Tensor::full(vec![3, 2, 2], 0.25);
        let b = Tensor::full(vec![3, 2, 2], 0.75);
        // Identical images.
        assert_eq!(compute_metrics(&[a.clone()], &[a.clone()]).unwrap(), (0.0, 0.0));
        // Constant error 0.5 everywhere.
        let (l1, rms) = compute_metrics(&[a.clone()], &[b.clone()]).unwrap();
        assert!((l1 - 0.5).abs() < 1e-12 && (rms - 0.5).abs() < 1e-12);
        // Half the pixels off by 1.0.
        let mut half = vec![0.0f32; 8];
        half.extend(vec![1.0f32; 8]);
        let c = Tensor::new(vec![1, 4, 4], half).unwrap();
        let z = Tensor::zeros(vec![1, 4, 4]);
        let (l1, rms) = compute_metrics(&[c], &[z]).unwrap();
        assert!((l1 - 0.5).abs() < 1e-12);
        assert!((rms - 0.5f64.sqrt()).abs() < 1e-12);
        // rms ≥ mean L1 on arbitrary data, and mismatches error.
        assert!(rms >= l1);
        assert!(compute_metrics(&[a.clone()], &[]).is_err());
        assert!(compute_metrics(&[a], &[Tensor::zeros(vec![3, 4, 4])]).is_err());
    }

    #[test]
    fn per_joint_rmse_is_componentwise() {
        let truth = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let est = vec![vec![0.3, -0.1], vec![-0.3, 0.1]];
        let rmse = per_joint_rmse(&est, &truth).unwrap();
        assert!((rmse[0] - 0.3).abs() < 1e-12);
        assert!((rmse[1] - 0.1).abs() < 1e-12);
        assert!(per_joint_rmse(&est, &truth[..1].to_vec()).is_err());
        assert!((mean_abs_error(&[0.2, -0.4], &[0.0, 0.0]) - 0.3).abs() < 1e-12);
        assert!((rad_to_deg(deg_to_rad(17.5)) - 17.5).abs() < 1e-12);
    }

    #[test]
    fn metrics_csv_roundtrips_and_appends_with_one_header() {
        let dir = std::env::temp_dir().join("armflow_metrics_csv");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("metrics.csv");
        std::fs::remove_file(&path).ok();

        let row1 = MetricsRow {
            kind: "image".into(),
            model: "knnflow-k1".into(),
            split: "test".into(),
            mean_l1: Some(0.0123),
            rms: Some(0.0456),
            ..Default::default()
        };
        let row2 = MetricsRow {
            kind: "tracking".into(),
            model: "ekf".into(),
            split: "test".into(),
            offset_deg: Some(10.0),
            joint: Some(2),
            rmse: Some(1.25),
            ..Default::default()
        };
        append_metrics(&path, &[row1.clone()]).unwrap();
        append_metrics(&path, &[row2.clone()]).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER);

        let rows = read_metrics(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].model, "knnflow-k1");
        assert_eq!(rows[0].mean_l1, Some(0.0123));
        assert_eq!(rows[0].rmse, None);
        assert_eq!(rows[1].offset_deg, Some(10.0));
        assert_eq!(rows[1].joint, Some(2));
        std::fs::remove_file(&path).ok();
        assert!(read_metrics(&path).is_err());
    }

    #[test]
    fn trajectory_csvs_have_one_row_per_frame_and_joint() {
        let dir = std::env::temp_dir().join("armflow_traj_csv");
        std::fs::create_dir_all(&dir).unwrap();
        let truth = vec![vec![0.1, 0.2], vec![0.3, 0.4], vec![0.5, 0.6]];
        let beliefs: Vec<GaussianBelief> =
            truth.iter().map(|q| GaussianBelief::from_prior(q, 0.1)).collect();
        let p1 = dir.join("ekf.csv");
        write_ekf_trajectory(&p1, &truth, &beliefs).unwrap();
        let text = std::fs::read_to_string(&p1).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 2);
        assert!(text.starts_with("frame,joint,truth,estimate,variance\n"));
        // Prior beliefs carry the truth as mean and 0.01 variance.
        assert!(text.lines().nth(1).unwrap().starts_with("0,0,0.1,0.1,0.01"));

        let p2 = dir.join("inv.csv");
        write_inverse_trajectory(&p2, &truth, &truth).unwrap();
        let text = std::fs::read_to_string(&p2).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 2);
        std::fs::remove_file(&p1).ok();
        std::fs::remove_file(&p2).ok();
    }
}
