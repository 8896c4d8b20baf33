//! Synthetic two-view ground truth: random relative poses, correspondence
//! sets with a controlled outlier fraction and coordinate noise, synthetic
//! match-quality ratios, and JSONL dataset serialization.
//!
//! Labels are recomputed geometrically against the ground-truth essential
//! matrix rather than trusting the generator's intent: coordinate noise can
//! demote an intended inlier, and a random outlier can land on the epipolar
//! constraint by accident. The classifier's ground truth is therefore
//! exactly the evaluation criterion.

use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};

use crate::epipolar::{essential_from_rt, label_inliers, Correspondence};

/// Half-extent of the normalized image plane; points project into
/// `[-0.5, 0.5]^2` in both views.
pub const VIEW_HALF_EXTENT: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("could not place a point visible in both views")]
    FrustumExhausted,
    #[error("pair kept fewer than 8 geometric inliers after {attempts} attempts")]
    TooFewInliers { attempts: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {detail}")]
    BadRecord { line: usize, detail: String },
}

/// Controls for one synthetic pair.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Correspondences per pair.
    pub points_per_pair: usize,
    /// Target fraction of intended inliers (per-row Bernoulli).
    pub inlier_rate: f64,
    /// Gaussian noise added to every inlier coordinate (normalized units).
    pub noise_sigma: f64,
    /// Scene depth range (camera-1 z).
    pub depth_range: (f64, f64),
    /// Relative rotation magnitude range, degrees.
    pub rotation_range_deg: (f64, f64),
    /// Relative translation length.
    pub translation_magnitude: f64,
    /// Beta shape for inlier match ratios (mass toward 0).
    pub ratio_inlier_beta: (f64, f64),
    /// Beta shape for outlier match ratios (mass toward 1).
    pub ratio_outlier_beta: (f64, f64),
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            points_per_pair: 512,
            inlier_rate: 0.3,
            noise_sigma: 1e-3,
            depth_range: (3.0, 8.0),
            rotation_range_deg: (2.0, 15.0),
            translation_magnitude: 0.5,
            ratio_inlier_beta: (2.0, 5.0),
            ratio_outlier_beta: (5.0, 2.0),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |msg: String| Err(SynthError::InvalidConfig(msg));
        if !(0.0 < self.inlier_rate && self.inlier_rate < 1.0) {
            return err(format!("inlier_rate {} not in (0, 1)", self.inlier_rate));
        }
        if self.inlier_rate * (self.points_per_pair as f64) < 8.0 {
            return err(format!(
                "expected inliers {:.1} < 8; raise points_per_pair or inlier_rate",
                self.inlier_rate * self.points_per_pair as f64
            ));
        }
        if !(self.noise_sigma >= 0.0) {
            return err(format!("noise_sigma {} must be >= 0", self.noise_sigma));
        }
        if !(0.0 < self.depth_range.0 && self.depth_range.0 < self.depth_range.1) {
            return err(format!("depth_range {:?} must satisfy 0 < lo < hi", self.depth_range));
        }
        if !(0.0 <= self.rotation_range_deg.0
            && self.rotation_range_deg.0 <= self.rotation_range_deg.1)
        {
            return err(format!("rotation_range_deg {:?} invalid", self.rotation_range_deg));
        }
        if !(self.translation_magnitude > 0.0) {
            return err("translation_magnitude must be positive".into());
        }
        for (name, (a, b)) in [
            ("ratio_inlier_beta", self.ratio_inlier_beta),
            ("ratio_outlier_beta", self.ratio_outlier_beta),
        ] {
            if !(a > 0.0 && b > 0.0) {
                return err(format!("{name} {:?} must be positive", (a, b)));
            }
        }
        Ok(())
    }
}

/// One labeled synthetic pair.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondencePair {
    pub pair_id: String,
    pub coords: Vec<Correspondence>,
    /// Match-quality ratio per correspondence, in `[0, 1]`.
    pub ratios: Vec<f64>,
    /// Geometric ground truth against `e_gt`.
    pub labels: Vec<bool>,
    pub e_gt: Matrix3<f64>,
    pub r_gt: Matrix3<f64>,
    pub t_gt: Vector3<f64>,
}

impl CorrespondencePair {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn inlier_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

fn random_unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(rand_distr::StandardNormal),
            rng.sample::<f64, _>(rand_distr::StandardNormal),
            rng.sample::<f64, _>(rand_distr::StandardNormal),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Samples a depth-range point in camera 1's frustum that projects inside
/// both views with positive depth.
fn sample_visible_point(
    rng: &mut ChaCha8Rng,
    cfg: &SceneConfig,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
) -> Result<(Vector3<f64>, [f64; 4]), SynthError> {
    for _ in 0..1000 {
        let z = rng.gen_range(cfg.depth_range.0..cfg.depth_range.1);
        let u = rng.gen_range(-VIEW_HALF_EXTENT..VIEW_HALF_EXTENT);
        let v = rng.gen_range(-VIEW_HALF_EXTENT..VIEW_HALF_EXTENT);
        let p = Vector3::new(u * z, v * z, z);
        let q = r * p + t;
        if q.z <= 0.1 {
            continue;
        }
        let (qx, qy) = (q.x / q.z, q.y / q.z);
        if qx.abs() <= VIEW_HALF_EXTENT && qy.abs() <= VIEW_HALF_EXTENT {
            return Ok((p, [u, v, qx, qy]));
        }
    }
    Err(SynthError::FrustumExhausted)
}

/// Generates one pair: pose, points, noise, ratios, geometric labels.
/// Regenerates (bounded) if noise demotion leaves fewer than 8 inliers.
pub fn generate_pair(
    rng: &mut ChaCha8Rng,
    cfg: &SceneConfig,
    pair_id: &str,
) -> Result<CorrespondencePair, SynthError> {
    cfg.validate()?;
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE))
        .expect("finite nonnegative sigma");
    let beta_in = Beta::new(cfg.ratio_inlier_beta.0, cfg.ratio_inlier_beta.1)
        .expect("validated beta shape");
    let beta_out = Beta::new(cfg.ratio_outlier_beta.0, cfg.ratio_outlier_beta.1)
        .expect("validated beta shape");

    const MAX_ATTEMPTS: usize = 32;
    for attempt in 1..=MAX_ATTEMPTS {
        let angle = rng
            .gen_range(cfg.rotation_range_deg.0..=cfg.rotation_range_deg.1)
            .to_radians();
        let axis = Unit::new_normalize(random_unit_vector(rng));
        let r = Rotation3::from_axis_angle(&axis, angle).into_inner();
        let t = random_unit_vector(rng) * cfg.translation_magnitude;
        let e = essential_from_rt(&r, &t).expect("nonzero translation");

        let n = cfg.points_per_pair;
        let mut coords = Vec::with_capacity(n);
        let mut ratios = Vec::with_capacity(n);
        for _ in 0..n {
            let intended_inlier = rng.gen_bool(cfg.inlier_rate);
            if intended_inlier {
                let (_, [u, v, qx, qy]) = sample_visible_point(rng, cfg, &r, &t)?;
                let jitter = |rng: &mut ChaCha8Rng| {
                    if cfg.noise_sigma > 0.0 {
                        noise.sample(rng)
                    } else {
                        0.0
                    }
                };
                coords.push(Correspondence::new(
                    u + jitter(rng),
                    v + jitter(rng),
                    qx + jitter(rng),
                    qy + jitter(rng),
                ));
                ratios.push(beta_in.sample(rng));
            } else {
                // Both views drawn independently: no geometric relation.
                coords.push(Correspondence::new(
                    rng.gen_range(-VIEW_HALF_EXTENT..VIEW_HALF_EXTENT),
                    rng.gen_range(-VIEW_HALF_EXTENT..VIEW_HALF_EXTENT),
                    rng.gen_range(-VIEW_HALF_EXTENT..VIEW_HALF_EXTENT),
                    rng.gen_range(-VIEW_HALF_EXTENT..VIEW_HALF_EXTENT),
                ));
                ratios.push(beta_out.sample(rng));
            }
        }

        let labels = label_inliers(&e, &coords);
        if labels.iter().filter(|&&l| l).count() >= 8 {
            return Ok(CorrespondencePair {
                pair_id: pair_id.to_string(),
                coords,
                ratios,
                labels,
                e_gt: e,
                r_gt: r,
                t_gt: t,
            });
        }
        if attempt == MAX_ATTEMPTS {
            break;
        }
    }
    Err(SynthError::TooFewInliers {
        attempts: MAX_ATTEMPTS,
    })
}

/// Derives an independent per-pair RNG from the root seed and the pair's
/// global index, so generation order never matters.
pub fn pair_rng(base_seed: u64, pair_index: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&base_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&pair_index.to_le_bytes());
    seed[16] = 0x9e; // domain tag: dataset pair stream
    ChaCha8Rng::from_seed(seed)
}

/// Whole-dataset controls: scene shape, size, split fractions, root seed.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetConfig {
    pub scene: SceneConfig,
    pub n_pairs: usize,
    /// Train/val/test fractions; must sum to 1.
    pub split: (f64, f64, f64),
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            scene: SceneConfig::default(),
            n_pairs: 100,
            split: (0.8, 0.1, 0.1),
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        self.scene.validate()?;
        if self.n_pairs < 3 {
            return Err(SynthError::InvalidConfig(format!(
                "n_pairs {} < 3",
                self.n_pairs
            )));
        }
        let (a, b, c) = self.split;
        if a < 0.0 || b < 0.0 || c < 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(SynthError::InvalidConfig(format!(
                "split {:?} must be nonnegative and sum to 1",
                self.split
            )));
        }
        Ok(())
    }

    /// Pair counts per split: train and val round to nearest, test takes
    /// the remainder.
    pub fn split_counts(&self) -> (usize, usize, usize) {
        let train = (self.n_pairs as f64 * self.split.0).round() as usize;
        let val = (self.n_pairs as f64 * self.split.1).round() as usize;
        let train = train.min(self.n_pairs);
        let val = val.min(self.n_pairs - train);
        (train, val, self.n_pairs - train - val)
    }
}

/// Where a generated dataset landed.
#[derive(Clone, Debug, serde::Serialize)]
pub struct DatasetPaths {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
    pub counts: (usize, usize, usize),
}

/// Generates the three split files under `out_dir` (train.jsonl, val.jsonl,
/// test.jsonl). Deterministic: same config, same bytes.
pub fn generate_dataset(cfg: &DatasetConfig, out_dir: &Path) -> Result<DatasetPaths, SynthError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let (n_train, n_val, n_test) = cfg.split_counts();
    let paths = DatasetPaths {
        train: out_dir.join("train.jsonl"),
        val: out_dir.join("val.jsonl"),
        test: out_dir.join("test.jsonl"),
        counts: (n_train, n_val, n_test),
    };
    let mut global_index = 0u64;
    for (split_name, count, path) in [
        ("train", n_train, &paths.train),
        ("val", n_val, &paths.val),
        ("test", n_test, &paths.test),
    ] {
        let mut pairs = Vec::with_capacity(count);
        for k in 0..count {
            let id = format!("pair-{split_name}-{k:05}");
            let mut rng = pair_rng(cfg.seed, global_index);
            pairs.push(generate_pair(&mut rng, &cfg.scene, &id)?);
            global_index += 1;
        }
        write_dataset(path, &pairs)?;
    }
    Ok(paths)
}

fn matrix_row_major(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[3 * r + c] = m[(r, c)];
        }
    }
    out
}

fn fmt_floats(vals: impl IntoIterator<Item = f64>) -> String {
    // 17 significant digits: lossless f64 round trip.
    vals.into_iter()
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Writes pairs as JSON Lines; every float carries 17 significant digits so
/// reading reproduces the exact values.
pub fn write_dataset(path: &Path, pairs: &[CorrespondencePair]) -> Result<(), SynthError> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for p in pairs {
        debug_assert!(
            p.pair_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_'),
            "pair ids stay in the unescaped JSON string alphabet"
        );
        let coords = fmt_floats(
            p.coords
                .iter()
                .flat_map(|c| [c.x1, c.y1, c.x2, c.y2]),
        );
        let labels = p
            .labels
            .iter()
            .map(|&l| if l { "1" } else { "0" })
            .collect::<Vec<_>>()
            .join(",");
        writeln!(
            out,
            "{{\"pair_id\":\"{}\",\"n\":{},\"coords\":[{}],\"ratios\":[{}],\"labels\":[{}],\"e_gt\":[{}],\"r_gt\":[{}],\"t_gt\":[{}]}}",
            p.pair_id,
            p.len(),
            coords,
            fmt_floats(p.ratios.iter().copied()),
            labels,
            fmt_floats(matrix_row_major(&p.e_gt)),
            fmt_floats(matrix_row_major(&p.r_gt)),
            fmt_floats([p.t_gt.x, p.t_gt.y, p.t_gt.z]),
        )?;
    }
    Ok(())
}

#[derive(serde::Deserialize)]
struct PairRecord {
    pair_id: String,
    n: usize,
    coords: Vec<f64>,
    ratios: Vec<f64>,
    labels: Vec<u8>,
    e_gt: Vec<f64>,
    r_gt: Vec<f64>,
    t_gt: Vec<f64>,
}

/// Reads a JSONL dataset; malformed records report their 1-based line.
pub fn read_dataset(path: &Path) -> Result<Vec<CorrespondencePair>, SynthError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord =
            serde_json::from_str(&line).map_err(|e| SynthError::BadRecord {
                line: line_no,
                detail: e.to_string(),
            })?;
        let bad = |detail: String| SynthError::BadRecord {
            line: line_no,
            detail,
        };
        if rec.coords.len() != 4 * rec.n {
            return Err(bad(format!(
                "coords length {} != 4n = {}",
                rec.coords.len(),
                4 * rec.n
            )));
        }
        if rec.ratios.len() != rec.n || rec.labels.len() != rec.n {
            return Err(bad("ratios/labels length mismatch".into()));
        }
        if rec.e_gt.len() != 9 || rec.r_gt.len() != 9 || rec.t_gt.len() != 3 {
            return Err(bad("pose block lengths must be 9/9/3".into()));
        }
        if let Some(&l) = rec.labels.iter().find(|&&l| l > 1) {
            return Err(bad(format!("label {l} not in {{0, 1}}")));
        }
        pairs.push(CorrespondencePair {
            pair_id: rec.pair_id,
            coords: rec
                .coords
                .chunks_exact(4)
                .map(|c| Correspondence::new(c[0], c[1], c[2], c[3]))
                .collect(),
            ratios: rec.ratios,
            labels: rec.labels.iter().map(|&l| l == 1).collect(),
            e_gt: Matrix3::from_row_slice(&rec.e_gt),
            r_gt: Matrix3::from_row_slice(&rec.r_gt),
            t_gt: Vector3::new(rec.t_gt[0], rec.t_gt[1], rec.t_gt[2]),
        });
    }
    Ok(pairs)
}
