//! Run configuration: a flat `key = value` text file with `#` comments.
//!
//! Every run resolves to one `RunConfig`; command-line flags override file
//! values through the same [`RunConfig::set`] path, and the resolved config
//! is echoed to `run.meta` so any artifact can be reproduced from its run
//! directory alone. Unknown keys are rejected rather than ignored — a typo
//! should fail loudly, not silently fall back to a default.

use crate::error::{Error, Result};
use crate::forward::TrainConfig;
use crate::sim::{ArmModel, Occluder, OccluderShape};
use std::path::Path;

/// Color of the static foreground occluder (a warm light gray distinct from
/// the background and every link color).
pub const OCCLUDER_COLOR: [f32; 3] = [0.82, 0.78, 0.72];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: String,
    pub run: String,
    pub image_size: usize,
    pub dof: usize,
    pub link_lengths: Vec<f64>,
    pub link_widths: Vec<f64>,
    pub base_x: f64,
    pub base_y: f64,
    pub joint_limit: f64,
    pub train_trajectories: usize,
    pub steps_per_trajectory: usize,
    pub n_reference: usize,
    pub test_trajectories: usize,
    pub test_steps: usize,
    pub k: usize,
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub rank: usize,
    pub dt: f64,
    pub prior_offset_deg: f64,
    pub epsilon_px: f64,
    pub occluder: String,
    pub occluder_x: f64,
    pub occluder_y: f64,
    pub occluder_w: f64,
    pub occluder_h: f64,
    pub occluder_r: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            out: "out".into(),
            run: "run".into(),
            image_size: 64,
            dof: 3,
            link_lengths: vec![0.18, 0.15, 0.12],
            link_widths: vec![0.07, 0.055, 0.04],
            base_x: 0.5,
            base_y: 0.5,
            joint_limit: 2.6,
            train_trajectories: 100,
            steps_per_trajectory: 20,
            n_reference: 500,
            test_trajectories: 20,
            test_steps: 50,
            k: 1,
            lambda: 1e-5,
            lr: 1e-3,
            epochs: 10,
            batch_size: 16,
            gamma: 1e-6,
            rank: 32,
            dt: 1.0,
            prior_offset_deg: 10.0,
            epsilon_px: 1.5,
            occluder: "none".into(),
            occluder_x: 0.55,
            occluder_y: 0.55,
            occluder_w: 0.2,
            occluder_h: 0.25,
            occluder_r: 0.12,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("cannot parse {key} = {value:?}")))
        })
        .collect()
}

impl RunConfig {
    /// Applies one `key = value` assignment; rejects unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "out" => self.out = value.to_string(),
            "run" => self.run = value.to_string(),
            "image_size" => self.image_size = parse_num(key, value)?,
            "dof" => self.dof = parse_num(key, value)?,
            "link_lengths" => self.link_lengths = parse_list(key, value)?,
            "link_widths" => self.link_widths = parse_list(key, value)?,
            "base_x" => self.base_x = parse_num(key, value)?,
            "base_y" => self.base_y = parse_num(key, value)?,
            "joint_limit" => self.joint_limit = parse_num(key, value)?,
            "train_trajectories" => self.train_trajectories = parse_num(key, value)?,
            "steps_per_trajectory" => self.steps_per_trajectory = parse_num(key, value)?,
            "n_reference" => self.n_reference = parse_num(key, value)?,
            "test_trajectories" => self.test_trajectories = parse_num(key, value)?,
            "test_steps" => self.test_steps = parse_num(key, value)?,
            "k" => self.k = parse_num(key, value)?,
            "lambda" => self.lambda = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "gamma" => self.gamma = parse_num(key, value)?,
            "rank" => self.rank = parse_num(key, value)?,
            "dt" => self.dt = parse_num(key, value)?,
            "prior_offset_deg" => self.prior_offset_deg = parse_num(key, value)?,
            "epsilon_px" => self.epsilon_px = parse_num(key, value)?,
            "occluder" => self.occluder = value.to_string(),
            "occluder_x" => self.occluder_x = parse_num(key, value)?,
            "occluder_y" => self.occluder_y = parse_num(key, value)?,
            "occluder_w" => self.occluder_w = parse_num(key, value)?,
            "occluder_h" => self.occluder_h = parse_num(key, value)?,
            "occluder_r" => self.occluder_r = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Loads a config file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::MissingArtifact(format!("config file {}", path.display())))?;
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.dof < 2 {
            return fail(format!("dof must be ≥ 2, got {}", self.dof));
        }
        if self.link_lengths.len() != self.dof || self.link_widths.len() != self.dof {
            return fail(format!(
                "link_lengths/link_widths must have dof = {} entries",
                self.dof
            ));
        }
        if self.image_size < 8 {
            return fail(format!("image_size must be ≥ 8, got {}", self.image_size));
        }
        if self.steps_per_trajectory < 1 || self.test_steps < 1 {
            return fail("trajectory steps must be ≥ 1".into());
        }
        if self.k < 1 {
            return fail("k must be ≥ 1".into());
        }
        if self.batch_size < 1 {
            return fail("batch_size must be ≥ 1".into());
        }
        if self.rank < 1 {
            return fail("rank must be ≥ 1".into());
        }
        if !(self.lambda >= 0.0) || !(self.lr > 0.0) {
            return fail("lambda must be ≥ 0 and lr > 0".into());
        }
        if !(self.gamma > 0.0) || !(self.dt > 0.0) {
            return fail("gamma and dt must be positive".into());
        }
        if !(self.epsilon_px > 0.0) {
            return fail(format!("epsilon_px must be positive, got {}", self.epsilon_px));
        }
        if !matches!(self.occluder.as_str(), "none" | "rect" | "disc") {
            return fail(format!(
                "occluder must be none, rect, or disc, got {:?}",
                self.occluder
            ));
        }
        Ok(())
    }

    pub fn arm(&self) -> Result<ArmModel> {
        ArmModel::new(
            self.image_size,
            &self.link_lengths,
            &self.link_widths,
            (self.base_x, self.base_y),
            self.joint_limit,
        )
    }

    /// The configured occluder, with fractional geometry scaled to pixels.
    pub fn occluder_model(&self) -> Result<Option<Occluder>> {
        let s = self.image_size as f64;
        let shape = match self.occluder.as_str() {
            "none" => return Ok(None),
            "rect" => OccluderShape::Rect {
                x: self.occluder_x * s,
                y: self.occluder_y * s,
                w: self.occluder_w * s,
                h: self.occluder_h * s,
            },
            "disc" => OccluderShape::Disc {
                cx: self.occluder_x * s,
                cy: self.occluder_y * s,
                r: self.occluder_r * s,
            },
            other => return Err(Error::Config(format!("occluder must be none, rect, or disc, got {other:?}"))),
        };
        Occluder::new(shape, OCCLUDER_COLOR, self.image_size).map(Some)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            lambda: self.lambda,
            seed: self.seed,
        }
    }

    /// Stable, complete echo of the resolved config (the `run.meta` body).
    /// Deliberately carries no timestamps or host details: two runs with the
    /// same config must produce byte-identical artifacts.
    pub fn meta_string(&self) -> String {
        let list = |v: &[f64]| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("seed", self.seed.to_string());
        kv("out", self.out.clone());
        kv("run", self.run.clone());
        kv("image_size", self.image_size.to_string());
        kv("dof", self.dof.to_string());
        kv("link_lengths", list(&self.link_lengths));
        kv("link_widths", list(&self.link_widths));
        kv("base_x", self.base_x.to_string());
        kv("base_y", self.base_y.to_string());
        kv("joint_limit", self.joint_limit.to_string());
        kv("train_trajectories", self.train_trajectories.to_string());
        kv("steps_per_trajectory", self.steps_per_trajectory.to_string());
        kv("n_reference", self.n_reference.to_string());
        kv("test_trajectories", self.test_trajectories.to_string());
        kv("test_steps", self.test_steps.to_string());
        kv("k", self.k.to_string());
        kv("lambda", self.lambda.to_string());
        kv("lr", self.lr.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("gamma", self.gamma.to_string());
        kv("rank", self.rank.to_string());
        kv("dt", self.dt.to_string());
        kv("prior_offset_deg", self.prior_offset_deg.to_string());
        kv("epsilon_px", self.epsilon_px.to_string());
        kv("occluder", self.occluder.clone());
        kv("occluder_x", self.occluder_x.to_string());
        kv("occluder_y", self.occluder_y.to_string());
        kv("occluder_w", self.occluder_w.to_string());
        kv("occluder_h", self.occluder_h.to_string());
        kv("occluder_r", self.occluder_r.to_string());
        s
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_build_an_arm() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let arm = cfg.arm().unwrap();
        assert_eq!(arm.dof, 3);
        assert_eq!(arm.image_size, 64);
        assert!(cfg.occluder_model().unwrap().is_none());
    }

    #[test]
    fn files_parse_with_comments_and_unknown_keys_fail() {
        let dir = std::env::temp_dir().join("armflow_config");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(
            &path,
            "# experiment setup\nseed = 42\nk = 2   # ensemble size\n\nepochs = 3\n",
        )
        .unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.k, 2);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.image_size, 64, "unset keys keep defaults");

        std::fs::write(&path, "sed = 42\n").unwrap();
        let err = RunConfig::from_file(&path).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "typo must be rejected: {err}");

        std::fs::write(&path, "seed\n").unwrap();
        assert!(RunConfig::from_file(&path).is_err());
        assert!(matches!(
            RunConfig::from_file(&dir.join("absent.cfg")).unwrap_err(),
            Error::MissingArtifact(_)
        ));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn validation_catches_inconsistent_geometry_and_ranges() {
        let mut cfg = RunConfig::default();
        cfg.dof = 4;
        assert!(cfg.validate().is_err(), "length lists no longer match dof");
        cfg = RunConfig::default();
        cfg.epsilon_px = 0.0;
        assert!(cfg.validate().is_err());
        cfg = RunConfig::default();
        cfg.occluder = "sphere".into();
        assert!(cfg.validate().is_err());
        cfg = RunConfig::default();
        cfg.k = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn occluder_scaling_and_meta_echo_are_stable() {
        let mut cfg = RunConfig::default();
        cfg.occluder = "rect".into();
        let occ = cfg.occluder_model().unwrap().unwrap();
        match occ.shape {
            OccluderShape::Rect { x, y, w, h } => {
                assert!((x - 0.55 * 64.0).abs() < 1e-12);
                assert!((y - 0.55 * 64.0).abs() < 1e-12);
                assert!((w - 0.2 * 64.0).abs() < 1e-12);
                assert!((h - 0.25 * 64.0).abs() < 1e-12);
            }
            _ => panic!("expected a rectangle"),
        }
        // The meta echo round-trips through set(): every line is a valid
        // assignment and reproduces the same config.
        let meta = cfg.meta_string();
        let mut back = RunConfig::default();
        for line in meta.lines() {
            let (k, v) = line.split_once('=').unwrap();
            back.set(k.trim(), v.trim()).unwrap();
        }
        assert_eq!(back, cfg);
    }
}
