//! Deterministic planar-arm simulator and renderer.
//!
//! The simulator is the data source for everything else: it renders
//! configuration/image pairs, produces linear joint-space trajectories and
//! uniform reference sets, and — because the geometry is exact — serves as
//! the ground-truth oracle for occlusion experiments.
//!
//! Conventions: kinematics live in "math" coordinates (x right, y up, units
//! of pixels, origin at the image's bottom-left corner). Rasterization maps a
//! pixel at (row, col) to math coordinates (col + 0.5, H − row − 0.5) at its
//! center. Images are `ftnn::Tensor`s laid out [3, H, W] with values in
//! [0, 1]. All rendering is pure `f64` arithmetic in a fixed order, so a
//! given scene renders bit-identically every time.

use crate::error::{Error, Result};
use ftnn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

/// Joint angles in radians, one per degree of freedom.
pub type JointConfig = Vec<f64>;

pub const BACKGROUND: [f32; 3] = [0.06, 0.06, 0.08];

// ---------------------------------------------------------------------------
// Arm model
// ---------------------------------------------------------------------------

/// Geometry of the planar arm plus rendering attributes.
///
/// Lengths, widths and the base position are given as fractions of the image
/// side and converted to pixels on construction. Each link gets a distinct
/// color so the renderer produces texture the flow model can latch onto.
#[derive(Debug, Clone)]
pub struct ArmModel {
    pub dof: usize,
    pub image_size: usize,
    /// Link lengths in pixels.
    pub lengths: Vec<f64>,
    /// Full link widths (capsule diameters) in pixels.
    pub widths: Vec<f64>,
    /// Base joint position in math coordinates (pixels).
    pub base: (f64, f64),
    pub colors: Vec<[f32; 3]>,
    /// Symmetric joint limits: angle i must lie in [-limit, limit].
    pub joint_limit: f64,
}

const LINK_PALETTE: [[f32; 3]; 6] = [
    [0.85, 0.20, 0.20],
    [0.20, 0.80, 0.25],
    [0.25, 0.40, 0.90],
    [0.85, 0.75, 0.20],
    [0.70, 0.25, 0.80],
    [0.20, 0.75, 0.75],
];

impl ArmModel {
    /// Builds and validates an arm. `lengths_frac`, `widths_frac` and
    /// `base_frac` are fractions of the (square) image side.
    pub fn new(
        image_size: usize,
        lengths_frac: &[f64],
        widths_frac: &[f64],
        base_frac: (f64, f64),
        joint_limit: f64,
    ) -> Result<Self> {
        let dof = lengths_frac.len();
        if dof < 2 {
            return Err(Error::Config(format!("arm needs at least 2 links, got {dof}")));
        }
        if widths_frac.len() != dof {
            return Err(Error::Config("one width per link required".into()));
        }
        if dof > LINK_PALETTE.len() {
            return Err(Error::Config(format!("at most {} links supported", LINK_PALETTE.len())));
        }
        if joint_limit <= 0.0 || joint_limit > std::f64::consts::PI {
            return Err(Error::Config("joint limit must be in (0, pi]".into()));
        }
        let side = image_size as f64;
        let lengths: Vec<f64> = lengths_frac.iter().map(|l| l * side).collect();
        let widths: Vec<f64> = widths_frac.iter().map(|w| w * side).collect();
        if lengths.iter().any(|&l| l <= 0.0) || widths.iter().any(|&w| w <= 0.0) {
            return Err(Error::Config("link lengths and widths must be positive".into()));
        }
        let base = (base_frac.0 * side, base_frac.1 * side);

        // The arm must fit in frame at maximal extension, half-width included.
        let reach: f64 = lengths.iter().sum::<f64>()
            + widths.iter().cloned().fold(0.0, f64::max) / 2.0;
        let margin = [base.0, side - base.0, base.1, side - base.1]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if reach > margin {
            return Err(Error::Config(format!(
                "arm reach {reach:.1}px exceeds frame margin {margin:.1}px"
            )));
        }

        Ok(ArmModel {
            dof,
            image_size,
            lengths,
            widths,
            base,
            colors: LINK_PALETTE[..dof].to_vec(),
            joint_limit,
        })
    }

    pub fn check_limits(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dof {
            return Err(Error::Shape(format!(
                "configuration has {} angles, arm has {} joints",
                q.len(),
                self.dof
            )));
        }
        for (i, &a) in q.iter().enumerate() {
            if !a.is_finite() || a.abs() > self.joint_limit {
                return Err(Error::Config(format!(
                    "joint {i} angle {a} outside ±{}",
                    self.joint_limit
                )));
            }
        }
        Ok(())
    }

    /// Draws one uniform in-limits configuration. Angles are drawn in joint
    /// order so a fixed seed fixes the whole sequence.
    pub fn sample_config<R: Rng>(&self, rng: &mut R) -> JointConfig {
        (0..self.dof)
            .map(|_| rng.gen_range(-self.joint_limit..self.joint_limit))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Kinematics
// ---------------------------------------------------------------------------

/// Positions of the base and every link endpoint (dof + 1 points, math
/// coordinates). Endpoint i+1 is the tip of link i; angles accumulate along
/// the chain.
pub fn forward_kinematics(arm: &ArmModel, q: &[f64]) -> Result<Vec<(f64, f64)>> {
    arm.check_limits(q)?;
    let mut pts = Vec::with_capacity(arm.dof + 1);
    let mut pos = arm.base;
    pts.push(pos);
    let mut theta = 0.0;
    for i in 0..arm.dof {
        theta += q[i];
        pos = (
            pos.0 + arm.lengths[i] * theta.cos(),
            pos.1 + arm.lengths[i] * theta.sin(),
        );
        pts.push(pos);
    }
    Ok(pts)
}

/// Cumulative link angles (θ_i = q_0 + … + q_i).
fn cumulative_angles(q: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    q.iter()
        .map(|&a| {
            acc += a;
            acc
        })
        .collect()
}

fn dist2_point_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let ab = (b.0 - a.0, b.1 - a.1);
    let ap = (p.0 - a.0, p.1 - a.1);
    let len2 = ab.0 * ab.0 + ab.1 * ab.1;
    let t = ((ap.0 * ab.0 + ap.1 * ab.1) / len2).clamp(0.0, 1.0);
    let c = (a.0 + t * ab.0, a.1 + t * ab.1);
    let d = (p.0 - c.0, p.1 - c.1);
    d.0 * d.0 + d.1 * d.1
}

// ---------------------------------------------------------------------------
// Occluders
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum OccluderShape {
    /// Axis-aligned rectangle: lower-left corner (x, y), extent (w, h), math
    /// coordinates in pixels.
    Rect { x: f64, y: f64, w: f64, h: f64 },
    Disc { cx: f64, cy: f64, r: f64 },
}

/// A static foreground object drawn over the arm.
#[derive(Debug, Clone)]
pub struct Occluder {
    pub shape: OccluderShape,
    pub color: [f32; 3],
}

impl Occluder {
    /// Validates that the shape lies strictly inside a `size`×`size` frame.
    pub fn new(shape: OccluderShape, color: [f32; 3], size: usize) -> Result<Self> {
        let s = size as f64;
        let inside = match shape {
            OccluderShape::Rect { x, y, w, h } => {
                w > 0.0 && h > 0.0 && x > 0.0 && y > 0.0 && x + w < s && y + h < s
            }
            OccluderShape::Disc { cx, cy, r } => {
                r > 0.0 && cx - r > 0.0 && cy - r > 0.0 && cx + r < s && cy + r < s
            }
        };
        if !inside {
            return Err(Error::Config("occluder must lie strictly inside the frame".into()));
        }
        Ok(Occluder { shape, color })
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        match self.shape {
            OccluderShape::Rect { x, y, w, h } => {
                p.0 >= x && p.0 <= x + w && p.1 >= y && p.1 <= y + h
            }
            OccluderShape::Disc { cx, cy, r } => {
                let d = (p.0 - cx, p.1 - cy);
                d.0 * d.0 + d.1 * d.1 <= r * r
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// Color of the scene at one math-space point: links in chain order (later
/// links painted over earlier), occluder on top of everything.
fn shade(arm: &ArmModel, pts: &[(f64, f64)], occluder: Option<&Occluder>, p: (f64, f64)) -> [f32; 3] {
    let mut color = BACKGROUND;
    for i in 0..arm.dof {
        let half = arm.widths[i] / 2.0;
        if dist2_point_segment(p, pts[i], pts[i + 1]) <= half * half {
            color = arm.colors[i];
        }
    }
    if let Some(occ) = occluder {
        if occ.contains(p) {
            color = occ.color;
        }
    }
    color
}

/// Subpixel sample offsets for 2×2 supersampling (fractions of a pixel).
const SUBSAMPLES: [(f64, f64); 4] = [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)];

/// Renders the arm (and optional occluder) to a [3, H, W] image.
///
/// Anti-aliasing comes from 2×2 supersampling, which keeps pixel intensities
/// piecewise-smooth in the joint angles — a requirement for linearizing the
/// learned models downstream.
pub fn render(arm: &ArmModel, q: &[f64], occluder: Option<&Occluder>) -> Result<Tensor> {
    let pts = forward_kinematics(arm, q)?;
    let n = arm.image_size;
    let mut data = vec![0.0f32; 3 * n * n];
    for row in 0..n {
        for col in 0..n {
            let mut acc = [0.0f64; 3];
            for (ox, oy) in SUBSAMPLES {
                let x = col as f64 + ox;
                let y = n as f64 - (row as f64 + oy);
                let c = shade(arm, &pts, occluder, (x, y));
                for ch in 0..3 {
                    acc[ch] += c[ch] as f64;
                }
            }
            for ch in 0..3 {
                data[ch * n * n + row * n + col] = (acc[ch] / 4.0) as f32;
            }
        }
    }
    Ok(Tensor::new(vec![3, n, n], data).expect("render buffer sized to shape"))
}

/// Anti-aliased arm silhouette: true where any subsample hits any link.
pub fn silhouette(arm: &ArmModel, q: &[f64]) -> Result<Vec<bool>> {
    let pts = forward_kinematics(arm, q)?;
    let n = arm.image_size;
    let mut mask = vec![false; n * n];
    for row in 0..n {
        for col in 0..n {
            'sub: for (ox, oy) in SUBSAMPLES {
                let x = col as f64 + ox;
                let y = n as f64 - (row as f64 + oy);
                for i in 0..arm.dof {
                    let half = arm.widths[i] / 2.0;
                    if dist2_point_segment((x, y), pts[i], pts[i + 1]) <= half * half {
                        mask[row * n + col] = true;
                        break 'sub;
                    }
                }
            }
        }
    }
    Ok(mask)
}

/// Arm pixels (of the occluder-free rendering of `q`) whose color changes
/// when the occluder is painted in — the static-scene occlusion ground truth.
pub fn occlusion_ground_truth(
    arm: &ArmModel,
    q: &[f64],
    occluder: Option<&Occluder>,
) -> Result<Vec<bool>> {
    let n = arm.image_size;
    let sil = silhouette(arm, q)?;
    let occ = match occluder {
        None => return Ok(vec![false; n * n]),
        Some(o) => o,
    };
    let plain = render(arm, q, None)?;
    let covered = render(arm, q, Some(occ))?;
    let mut mask = vec![false; n * n];
    for p in 0..n * n {
        if !sil[p] {
            continue;
        }
        for ch in 0..3 {
            if plain.data()[ch * n * n + p] != covered.data()[ch * n * n + p] {
                mask[p] = true;
                break;
            }
        }
    }
    Ok(mask)
}

/// Pixel-center arm mask plus, per arm pixel, the topmost link index and the
/// pixel's coordinates in that link's frame. This is the material-point map
/// used by the transition ground truth.
fn material_points(arm: &ArmModel, q: &[f64]) -> Result<Vec<Option<(usize, (f64, f64))>>> {
    let pts = forward_kinematics(arm, q)?;
    let thetas = cumulative_angles(q);
    let n = arm.image_size;
    let mut out = vec![None; n * n];
    for row in 0..n {
        for col in 0..n {
            let p = (col as f64 + 0.5, n as f64 - (row as f64 + 0.5));
            // Later links overdraw earlier ones, so scan back to front.
            for i in (0..arm.dof).rev() {
                let half = arm.widths[i] / 2.0;
                if dist2_point_segment(p, pts[i], pts[i + 1]) <= half * half {
                    let (s, c) = thetas[i].sin_cos();
                    let d = (p.0 - pts[i].0, p.1 - pts[i].1);
                    // Rotate by −θ_i into the link frame.
                    let local = (c * d.0 + s * d.1, -s * d.0 + c * d.1);
                    out[row * n + col] = Some((i, local));
                    break;
                }
            }
        }
    }
    Ok(out)
}

/// Ground truth for motion occlusion: for every arm pixel (center-tested) of
/// the first configuration, true iff its material point is hidden in the
/// second configuration — covered by the occluder, or overdrawn by a link
/// later in the chain. Returned alongside the pixel-center arm mask the
/// prediction should be restricted to.
pub fn transition_occlusion_truth(
    arm: &ArmModel,
    q1: &[f64],
    q2: &[f64],
    occluder: Option<&Occluder>,
) -> Result<(Vec<bool>, Vec<bool>)> {
    let mats = material_points(arm, q1)?;
    let pts2 = forward_kinematics(arm, q2)?;
    let thetas2 = cumulative_angles(q2);
    let n = arm.image_size;
    let mut arm_mask = vec![false; n * n];
    let mut truth = vec![false; n * n];
    for p in 0..n * n {
        let (link, local) = match mats[p] {
            Some(m) => m,
            None => continue,
        };
        arm_mask[p] = true;
        let (s, c) = thetas2[link].sin_cos();
        let world = (
            pts2[link].0 + c * local.0 - s * local.1,
            pts2[link].1 + s * local.0 + c * local.1,
        );
        let mut hidden = occluder.map(|o| o.contains(world)).unwrap_or(false);
        if !hidden {
            for l in link + 1..arm.dof {
                let half = arm.widths[l] / 2.0;
                if dist2_point_segment(world, pts2[l], pts2[l + 1]) <= half * half {
                    hidden = true;
                    break;
                }
            }
        }
        truth[p] = hidden;
    }
    Ok((truth, arm_mask))
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// One labeled sample: exact state, rendered observation, provenance ids.
#[derive(Debug, Clone)]
pub struct DatasetRecord {
    pub sample_id: u32,
    /// None for i.i.d. uniform samples; Some(t) groups trajectory steps.
    pub trajectory_id: Option<u32>,
    pub angles: JointConfig,
    pub image: Tensor,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn keys(&self) -> Vec<JointConfig> {
        self.records.iter().map(|r| r.angles.clone()).collect()
    }

    pub fn by_id(&self, id: u32) -> Option<&DatasetRecord> {
        self.records.iter().find(|r| r.sample_id == id)
    }
}

/// Uniform in-limits configurations, separated from rendering so statistical
/// tests can run on thousands of draws cheaply.
pub fn sample_uniform_configs(arm: &ArmModel, n: usize, seed: u64) -> Vec<JointConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| arm.sample_config(&mut rng)).collect()
}

/// n i.i.d. uniform samples; trajectory id is None for every record.
pub fn generate_uniform_dataset(
    arm: &ArmModel,
    n: usize,
    seed: u64,
    occluder: Option<&Occluder>,
) -> Result<Dataset> {
    let mut records = Vec::with_capacity(n);
    for (i, q) in sample_uniform_configs(arm, n, seed).into_iter().enumerate() {
        let image = render(arm, &q, occluder)?;
        records.push(DatasetRecord {
            sample_id: i as u32,
            trajectory_id: None,
            angles: q,
            image,
        });
    }
    Ok(Dataset { records })
}

/// Linear joint-space trajectories: each one interpolates two uniform
/// within-limits endpoints over `steps` samples (degenerate single-step
/// trajectories sit at their start point).
pub fn generate_trajectory_dataset(
    arm: &ArmModel,
    n_traj: usize,
    steps: usize,
    seed: u64,
    occluder: Option<&Occluder>,
) -> Result<Dataset> {
    if n_traj < 1 || steps < 1 {
        return Err(Error::Config("need at least one trajectory and one step".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n_traj * steps);
    let mut sample_id = 0u32;
    for traj in 0..n_traj {
        let a = arm.sample_config(&mut rng);
        let b = arm.sample_config(&mut rng);
        for step in 0..steps {
            let t = if steps == 1 {
                0.0
            } else {
                step as f64 / (steps - 1) as f64
            };
            let q: JointConfig = a
                .iter()
                .zip(&b)
                .map(|(&ai, &bi)| ai + (bi - ai) * t)
                .collect();
            let image = render(arm, &q, occluder)?;
            records.push(DatasetRecord {
                sample_id,
                trajectory_id: Some(traj as u32),
                angles: q,
                image,
            });
            sample_id += 1;
        }
    }
    Ok(Dataset { records })
}

// ---------------------------------------------------------------------------
// Image files (binary PPM / PGM)
// ---------------------------------------------------------------------------

/// Writes a [3, H, W] image as binary PPM (P6, maxval 255).
pub fn write_ppm(path: &Path, img: &Tensor) -> Result<()> {
    if img.rank() != 3 || img.shape()[0] != 3 {
        return Err(Error::Shape(format!("expected [3,H,W] image, got {:?}", img.shape())));
    }
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    write!(out, "P6\n{w} {h}\n255\n")?;
    let d = img.data();
    let mut row = Vec::with_capacity(3 * w);
    for p in 0..h * w {
        for ch in 0..3 {
            let v = d[ch * h * w + p].clamp(0.0, 1.0);
            row.push((v * 255.0).round() as u8);
        }
        if row.len() == 3 * w {
            out.write_all(&row)?;
            row.clear();
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes a boolean mask as binary PGM (P5): 0 = false/visible, 255 = true.
pub fn write_pgm(path: &Path, mask: &[bool], h: usize, w: usize) -> Result<()> {
    if mask.len() != h * w {
        return Err(Error::Shape("mask length must equal h*w".into()));
    }
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    write!(out, "P5\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = mask.iter().map(|&b| if b { 255 } else { 0 }).collect();
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

/// Reads a binary P6 PPM into a [3, H, W] tensor with values in [0, 1].
pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|_| Error::MissingArtifact(format!("image file {}", path.display())))?
        .read_to_end(&mut bytes)?;
    let bad = |msg: &str| Error::Dataset(format!("{}: {msg}", path.display()));

    // Header: magic, width, height, maxval — whitespace separated, with
    // optional '#' comment lines.
    let mut pos = 0usize;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("not a binary P6 file"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    if fields[3] != "255" {
        return Err(bad("expected maxval 255"));
    }
    pos += 1; // single whitespace byte after maxval
    if bytes.len() < pos + 3 * h * w {
        return Err(bad("pixel payload truncated"));
    }
    let mut data = vec![0.0f32; 3 * h * w];
    for p in 0..h * w {
        for ch in 0..3 {
            data[ch * h * w + p] = bytes[pos + 3 * p + ch] as f32 / 255.0;
        }
    }
    Ok(Tensor::new(vec![3, h, w], data).expect("sized buffer"))
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

fn traj_field(t: Option<u32>) -> String {
    match t {
        Some(v) => v.to_string(),
        None => "NONE".to_string(),
    }
}

/// Writes `manifest.csv`, a `dataset.meta` echo of the generation inputs, and
/// one PPM per record under `dir/images/`.
pub fn save_dataset(dir: &Path, ds: &Dataset, arm: &ArmModel, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir.join("images"))?;
    let mut manifest = BufWriter::new(std::fs::File::create(dir.join("manifest.csv"))?);
    write!(manifest, "sample_id,trajectory_id")?;
    for j in 0..arm.dof {
        write!(manifest, ",angle{j}")?;
    }
    writeln!(manifest, ",image")?;
    for rec in &ds.records {
        let img_rel = format!("images/{:06}.ppm", rec.sample_id);
        write_ppm(&dir.join(&img_rel), &rec.image)?;
        write!(manifest, "{},{}", rec.sample_id, traj_field(rec.trajectory_id))?;
        for a in &rec.angles {
            write!(manifest, ",{a}")?;
        }
        writeln!(manifest, ",{img_rel}")?;
    }
    manifest.flush()?;

    let mut meta = BufWriter::new(std::fs::File::create(dir.join("dataset.meta"))?);
    writeln!(meta, "seed = {seed}")?;
    writeln!(meta, "records = {}", ds.records.len())?;
    writeln!(meta, "dof = {}", arm.dof)?;
    writeln!(meta, "image_size = {}", arm.image_size)?;
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    writeln!(meta, "link_lengths_px = {}", join(&arm.lengths))?;
    writeln!(meta, "link_widths_px = {}", join(&arm.widths))?;
    writeln!(meta, "base_px = {},{}", arm.base.0, arm.base.1)?;
    writeln!(meta, "joint_limit = {}", arm.joint_limit)?;
    meta.flush()?;
    Ok(())
}

/// Loads a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.csv");
    let file = std::fs::File::open(&manifest_path)
        .map_err(|_| Error::MissingArtifact(format!("dataset manifest {}", manifest_path.display())))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Dataset("empty manifest".into()))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "sample_id" || *cols.last().unwrap() != "image" {
        return Err(Error::Dataset("unrecognized manifest header".into()));
    }
    let dof = cols.len() - 3;
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != cols.len() {
            return Err(Error::Dataset(format!("manifest row has {} fields", parts.len())));
        }
        let sample_id: u32 = parts[0]
            .parse()
            .map_err(|_| Error::Dataset("bad sample id".into()))?;
        let trajectory_id = if parts[1] == "NONE" {
            None
        } else {
            Some(parts[1].parse().map_err(|_| Error::Dataset("bad trajectory id".into()))?)
        };
        let mut angles = Vec::with_capacity(dof);
        for a in &parts[2..2 + dof] {
            angles.push(a.parse().map_err(|_| Error::Dataset("bad angle".into()))?);
        }
        let image = read_ppm(&dir.join(parts[2 + dof]))?;
        records.push(DatasetRecord {
            sample_id,
            trajectory_id,
            angles,
            image,
        });
    }
    if records.is_empty() {
        return Err(Error::Dataset(format!("dataset at {} has no records", dir.display())));
    }
    Ok(Dataset { records })
}

/// Convenience: `dir` exists and holds a manifest.
pub fn dataset_exists(dir: &Path) -> bool {
    dir.join("manifest.csv").is_file()
}

pub fn dataset_dir(out: &Path, run: &str, split: &str) -> PathBuf {
    out.join(run).join("data").join(split)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_arm() -> ArmModel {
        ArmModel::new(
            64,
            &[0.18, 0.15, 0.12],
            &[0.07, 0.055, 0.04],
            (0.5, 0.5),
            2.6,
        )
        .unwrap()
    }

    #[test]
    fn straight_arm_reaches_sum_of_lengths() {
        let arm = ArmModel::new(64, &[0.2, 0.2], &[0.05, 0.05], (0.5, 0.5), 3.0).unwrap();
        let pts = forward_kinematics(&arm, &[0.0, 0.0]).unwrap();
        let tip = *pts.last().unwrap();
        assert!((tip.0 - (arm.base.0 + arm.lengths[0] + arm.lengths[1])).abs() < 1e-12);
        assert!((tip.1 - arm.base.1).abs() < 1e-12);
    }

    #[test]
    fn quarter_turn_points_straight_up() {
        let arm = ArmModel::new(64, &[0.2, 0.2], &[0.05, 0.05], (0.5, 0.5), 3.0).unwrap();
        let pts = forward_kinematics(&arm, &[std::f64::consts::FRAC_PI_2, 0.0]).unwrap();
        let tip = *pts.last().unwrap();
        assert!((tip.0 - arm.base.0).abs() < 1e-9);
        assert!((tip.1 - (arm.base.1 + arm.lengths[0] + arm.lengths[1])).abs() < 1e-9);
    }

    #[test]
    fn tip_never_leaves_the_reachable_disc() {
        let arm = desk_arm();
        let reach: f64 = arm.lengths.iter().sum();
        for q in sample_uniform_configs(&arm, 50, 11) {
            let pts = forward_kinematics(&arm, &q).unwrap();
            let tip = pts.last().unwrap();
            let d = ((tip.0 - arm.base.0).powi(2) + (tip.1 - arm.base.1).powi(2)).sqrt();
            assert!(d <= reach + 1e-9);
        }
    }

    #[test]
    fn out_of_limit_configurations_are_rejected() {
        let arm = desk_arm();
        assert!(forward_kinematics(&arm, &[2.7, 0.0, 0.0]).is_err());
        assert!(forward_kinematics(&arm, &[0.0, 0.0]).is_err());
        assert!(ArmModel::new(64, &[0.5, 0.5], &[0.05, 0.05], (0.5, 0.5), 2.6).is_err());
    }

    #[test]
    fn rendering_is_bit_deterministic() {
        let arm = desk_arm();
        let q = vec![0.4, -0.9, 1.3];
        let a = render(&arm, &q, None).unwrap();
        let b = render(&arm, &q, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_angle_perturbations_barely_change_the_image() {
        let arm = desk_arm();
        let q = vec![0.3, 0.7, -0.5];
        let q2 = vec![0.3 + 1e-9, 0.7, -0.5];
        let a = render(&arm, &q, None).unwrap();
        let b = render(&arm, &q2, None).unwrap();
        let mad: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x - y).abs() as f64)
            .sum::<f64>()
            / a.len() as f64;
        assert!(mad < 1e-3, "mean abs diff {mad}");
    }

    #[test]
    fn occluder_paints_over_the_tip() {
        let arm = desk_arm();
        let q = vec![0.8, 0.5, 0.3];
        let pts = forward_kinematics(&arm, &q).unwrap();
        let tip = *pts.last().unwrap();
        let occ = Occluder::new(
            OccluderShape::Rect { x: tip.0 - 4.0, y: tip.1 - 4.0, w: 8.0, h: 8.0 },
            [0.9, 0.8, 0.15],
            64,
        )
        .unwrap();
        let img = render(&arm, &q, Some(&occ)).unwrap();
        let n = arm.image_size;
        let col = tip.0 as usize;
        let row = n - 1 - (tip.1 as usize);
        for ch in 0..3 {
            let v = img.data()[ch * n * n + row * n + col];
            assert!((v - occ.color[ch]).abs() < 1e-6);
        }
    }

    #[test]
    fn pixels_near_the_link_axis_are_not_background() {
        let arm = desk_arm();
        let q = vec![0.9, -0.4, 0.6];
        let pts = forward_kinematics(&arm, &q).unwrap();
        let img = render(&arm, &q, None).unwrap();
        let n = arm.image_size;
        // March along each link center line and check the covering pixel.
        for i in 0..arm.dof {
            for t in [0.2, 0.5, 0.8] {
                let x = pts[i].0 + t * (pts[i + 1].0 - pts[i].0);
                let y = pts[i].1 + t * (pts[i + 1].1 - pts[i].1);
                let col = x as usize;
                let row = n - 1 - (y as usize);
                let p = row * n + col;
                let is_bg = (0..3).all(|ch| {
                    (img.data()[ch * n * n + p] - BACKGROUND[ch]).abs() < 1e-6
                });
                assert!(!is_bg, "link {i} center at t={t} rendered as background");
            }
        }
    }

    #[test]
    fn trajectory_dataset_counts_and_interpolation() {
        let arm = desk_arm();
        let ds = generate_trajectory_dataset(&arm, 5, 4, 3, None).unwrap();
        assert_eq!(ds.len(), 20);
        let mut trajs: Vec<u32> = ds.records.iter().filter_map(|r| r.trajectory_id).collect();
        trajs.dedup();
        assert_eq!(trajs.len(), 5);
        // Interior samples lie on the segment between their endpoints.
        for tr in 0..5 {
            let steps: Vec<&DatasetRecord> = ds
                .records
                .iter()
                .filter(|r| r.trajectory_id == Some(tr))
                .collect();
            let (a, b) = (&steps[0].angles, &steps[3].angles);
            for (si, s) in steps.iter().enumerate() {
                let t = si as f64 / 3.0;
                for j in 0..arm.dof {
                    let want = a[j] + (b[j] - a[j]) * t;
                    assert!((s.angles[j] - want).abs() < 1e-6);
                }
            }
        }
        // Degenerate one-step trajectories are a single start-point sample.
        let ds1 = generate_trajectory_dataset(&arm, 3, 1, 3, None).unwrap();
        assert_eq!(ds1.len(), 3);
    }

    #[test]
    fn uniform_configs_have_uniform_means() {
        let arm = desk_arm();
        let configs = sample_uniform_configs(&arm, 10_000, 5);
        assert_eq!(sample_uniform_configs(&arm, 10_000, 5), configs);
        let half_width = arm.joint_limit;
        // Var of U(−L, L) is L²/3; the mean of n draws has std L/sqrt(3n).
        let se = half_width / (3.0 * configs.len() as f64).sqrt();
        for j in 0..arm.dof {
            let mean: f64 = configs.iter().map(|q| q[j]).sum::<f64>() / configs.len() as f64;
            assert!(mean.abs() < 3.0 * se, "joint {j} mean {mean} vs 3se {}", 3.0 * se);
        }
        assert!(generate_uniform_dataset(&arm, 0, 1, None).unwrap().is_empty());
    }

    #[test]
    fn static_occlusion_truth_edge_cases() {
        let arm = desk_arm();
        let q = vec![0.2, 0.4, -0.3];
        let none = occlusion_ground_truth(&arm, &q, None).unwrap();
        assert!(none.iter().all(|&b| !b));

        // A rectangle covering the whole reachable area ⇒ mask == silhouette.
        let occ = Occluder::new(
            OccluderShape::Rect { x: 1.0, y: 1.0, w: 62.0, h: 62.0 },
            [0.9, 0.8, 0.15],
            64,
        )
        .unwrap();
        let mask = occlusion_ground_truth(&arm, &q, Some(&occ)).unwrap();
        let sil = silhouette(&arm, &q).unwrap();
        assert_eq!(mask, sil);

        // An occluder disjoint from the silhouette flags nothing. The arm
        // below points left/up from center, so the bottom-right corner is free.
        let far = Occluder::new(
            OccluderShape::Rect { x: 52.0, y: 2.0, w: 10.0, h: 8.0 },
            [0.9, 0.8, 0.15],
            64,
        )
        .unwrap();
        let q_left = vec![2.4, 0.3, 0.2];
        let mask = occlusion_ground_truth(&arm, &q_left, Some(&far)).unwrap();
        assert!(mask.iter().all(|&b| !b));
    }

    #[test]
    fn ppm_roundtrip_preserves_quantized_pixels() {
        let arm = desk_arm();
        let img = render(&arm, &[0.5, -0.2, 0.9], None).unwrap();
        let dir = std::env::temp_dir().join("armflow_ppm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("img.ppm");
        write_ppm(&path, &img).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (&a, &b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn dataset_roundtrip_preserves_ids_and_angles() {
        let arm = desk_arm();
        let ds = generate_trajectory_dataset(&arm, 2, 3, 9, None).unwrap();
        let dir = std::env::temp_dir().join("armflow_ds_test");
        std::fs::remove_dir_all(&dir).ok();
        save_dataset(&dir, &ds, &arm, 9).unwrap();
        let back = load_dataset(&dir).unwrap();
        assert_eq!(back.len(), ds.len());
        for (a, b) in ds.records.iter().zip(&back.records) {
            assert_eq!(a.sample_id, b.sample_id);
            assert_eq!(a.trajectory_id, b.trajectory_id);
            assert_eq!(a.angles, b.angles);
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
