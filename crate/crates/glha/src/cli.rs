//! Command front end: resolves one JSON run config into dataset generation,
//! prior fitting, training, evaluation, the weight-solver theorem fuzz, and
//! the pose benchmark, emitting machine-readable outputs that embed the
//! resolved config so every run is self-describing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{load_checkpoint, save_checkpoint, AdError};
use crate::cascade::{
    evaluate_cascade, train_cascade, CascadeConfig, CascadeError, CascadeModel, EvalReport, Init,
    PostProcess, TrainOptions, TrainReport,
};
use crate::epipolar::{map_at, pose_error, recover_pose};
use crate::guided::{run_theorem_fuzz, LossKind, TheoremFuzzReport};
use crate::prior::{PriorError, PriorModel, DEFAULT_BINS};
use crate::ransac::{ransac_essential, RansacConfig, RansacError};
use crate::synth::{
    generate_dataset, read_dataset, CorrespondencePair, DatasetConfig, SceneConfig, SynthError,
};

/// Failures split by whose fault they are: bad configuration (exit code 2)
/// or a failure while doing the work (exit code 3).
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Runtime(_) => "runtime",
        }
    }

    /// The JSON error object printed on the error stream.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": { "kind": self.kind(), "message": self.to_string() } })
            .to_string()
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidConfig(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<CascadeError> for CliError {
    fn from(e: CascadeError) -> Self {
        match e {
            CascadeError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<RansacError> for CliError {
    fn from(e: RansacError) -> Self {
        match e {
            RansacError::InvalidConfig(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<PriorError> for CliError {
    fn from(e: PriorError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<AdError> for CliError {
    fn from(e: AdError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub n_pairs: usize,
    /// Train/val/test fractions, summing to 1.
    pub split: (f64, f64, f64),
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            n_pairs: 100,
            split: (0.8, 0.1, 0.1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoremSection {
    pub samples: usize,
    /// Guidance exponents the weight solver is fuzzed against.
    pub guidance: Vec<f64>,
}

impl Default for TheoremSection {
    fn default() -> Self {
        TheoremSection {
            samples: 10_000,
            guidance: vec![0.2, 0.5, 1.0, 2.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Curve-record and validation cadence in iterations.
    pub eval_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { eval_every: 250 }
    }
}

/// File locations. Anything left unset resolves under the output directory:
/// `data/`, `prior.json`, and `checkpoint.bin`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub data: Option<PathBuf>,
    pub prior: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostKind {
    Weighted8pt,
    Ransac,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl SplitKind {
    fn file_name(self) -> &'static str {
        match self {
            SplitKind::Train => "train.jsonl",
            SplitKind::Val => "val.jsonl",
            SplitKind::Test => "test.jsonl",
        }
    }
}

/// One JSON document drives every command. All randomness flows from the
/// root `seed`: the sub-config seeds are overwritten with it during
/// resolution so a config cannot smuggle in a second entropy source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scene: SceneConfig,
    pub dataset: DatasetSection,
    pub cascade: CascadeConfig,
    pub ransac: RansacConfig,
    /// One of `guided`, `ibce`, `ce`. `focal` and `floss` are recognized
    /// but unsupported.
    pub loss: String,
    /// When false the refinement modules are dropped and only the final
    /// guidance exponent is kept: a plain single-stage classifier.
    pub cascade_enabled: bool,
    pub post: PostKind,
    pub eval_split: SplitKind,
    pub theorem: TheoremSection,
    pub train: TrainSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            scene: SceneConfig::default(),
            dataset: DatasetSection::default(),
            cascade: CascadeConfig::default(),
            ransac: RansacConfig::default(),
            loss: "guided".to_string(),
            cascade_enabled: true,
            post: PostKind::Weighted8pt,
            eval_split: SplitKind::Test,
            theorem: TheoremSection::default(),
            train: TrainSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn loss_kind(&self) -> Result<LossKind, CliError> {
        match self.loss.as_str() {
            "guided" => Ok(LossKind::Guided),
            "ibce" => Ok(LossKind::InstanceBalanced),
            "ce" => Ok(LossKind::CrossEntropy),
            "focal" | "floss" => Err(CliError::Config(format!(
                "loss '{}' is recognized but unsupported; use guided, ibce, or ce",
                self.loss
            ))),
            other => Err(CliError::Config(format!(
                "unknown loss '{other}'; use guided, ibce, or ce"
            ))),
        }
    }

    /// Copies the root seed into every sub-config, folds the cascade switch
    /// into the architecture, fills unset paths from the output directory,
    /// and validates everything. The result is what gets embedded in
    /// outputs.
    pub fn resolve(&self, out_dir: &Path) -> Result<RunConfig, CliError> {
        let mut resolved = self.clone();
        resolved.cascade.seed = self.seed;
        resolved.ransac.seed = self.seed;
        if !resolved.cascade_enabled {
            let final_n = *resolved
                .cascade
                .guidance
                .last()
                .ok_or_else(|| CliError::Config("empty guidance schedule".into()))?;
            resolved.cascade.refinement_modules = 0;
            resolved.cascade.guidance = vec![final_n];
            resolved.cascade.eta = Vec::new();
        }
        let paths = &mut resolved.paths;
        paths.data = Some(paths.data.clone().unwrap_or_else(|| out_dir.join("data")));
        paths.prior = Some(
            paths
                .prior
                .clone()
                .unwrap_or_else(|| out_dir.join("prior.json")),
        );
        paths.checkpoint = Some(
            paths
                .checkpoint
                .clone()
                .unwrap_or_else(|| out_dir.join("checkpoint.bin")),
        );
        resolved.validate()?;
        Ok(resolved)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.scene
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.cascade
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.ransac
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.loss_kind()?;
        let (a, b, c) = self.dataset.split;
        if a < 0.0 || b < 0.0 || c < 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(CliError::Config(format!(
                "dataset split {:?} must be nonnegative and sum to 1",
                self.dataset.split
            )));
        }
        if self.dataset.n_pairs < 3 {
            return Err(CliError::Config(format!(
                "dataset n_pairs {} < 3",
                self.dataset.n_pairs
            )));
        }
        if self.theorem.samples == 0 || self.theorem.guidance.is_empty() {
            return Err(CliError::Config(
                "theorem needs samples >= 1 and a nonempty guidance list".into(),
            ));
        }
        if self
            .theorem
            .guidance
            .iter()
            .any(|&n| !n.is_finite() || n <= 0.0)
        {
            return Err(CliError::Config(
                "theorem guidance exponents must be positive and finite".into(),
            ));
        }
        if self.train.eval_every == 0 {
            return Err(CliError::Config("train.eval_every must be >= 1".into()));
        }
        Ok(())
    }

    fn data_file(&self, split: SplitKind) -> PathBuf {
        self.paths
            .data
            .as_ref()
            .expect("resolved config")
            .join(split.file_name())
    }

    fn prior_path(&self) -> &Path {
        self.paths.prior.as_deref().expect("resolved config")
    }

    fn checkpoint_path(&self) -> &Path {
        self.paths.checkpoint.as_deref().expect("resolved config")
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serialization failed: {e}")))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn load_split(config: &RunConfig, split: SplitKind) -> Result<Vec<CorrespondencePair>, CliError> {
    let path = config.data_file(split);
    let pairs = read_dataset(&path)?;
    if pairs.is_empty() {
        return Err(CliError::Runtime(format!(
            "dataset split {} is empty",
            path.display()
        )));
    }
    Ok(pairs)
}

fn load_model(config: &RunConfig) -> Result<(CascadeModel, PriorModel), CliError> {
    let prior = PriorModel::load(config.prior_path())?;
    let mut model = CascadeModel::new(&config.cascade, Init::Zeros)?;
    load_checkpoint(config.checkpoint_path(), &mut model.params, None)?;
    Ok((model, prior))
}

fn post_process(config: &RunConfig) -> PostProcess {
    match config.post {
        PostKind::Weighted8pt => PostProcess::WeightedEightPoint,
        PostKind::Ransac => PostProcess::Ransac(config.ransac),
    }
}

#[derive(Serialize)]
struct GenOutput<'a> {
    config: &'a RunConfig,
    deterministic: bool,
    counts: (usize, usize, usize),
    train: PathBuf,
    val: PathBuf,
    test: PathBuf,
}

/// `gen`: writes train/val/test JSONL splits plus `manifest.json`.
pub fn cmd_gen(config: &RunConfig, out_dir: &Path, deterministic: bool) -> Result<(), CliError> {
    let dataset_cfg = DatasetConfig {
        scene: config.scene.clone(),
        n_pairs: config.dataset.n_pairs,
        split: config.dataset.split,
        seed: config.seed,
    };
    let data_dir = config.paths.data.as_ref().expect("resolved config");
    let paths = generate_dataset(&dataset_cfg, data_dir)?;
    write_json(
        &out_dir.join("manifest.json"),
        &GenOutput {
            config,
            deterministic,
            counts: paths.counts,
            train: paths.train,
            val: paths.val,
            test: paths.test,
        },
    )
}

#[derive(Serialize)]
struct PriorOutput<'a> {
    config: &'a RunConfig,
    deterministic: bool,
    inlier_samples: usize,
    outlier_samples: usize,
    bins: usize,
    prior: PathBuf,
}

/// `prior`: fits the class-conditional ratio densities on the train split.
pub fn cmd_prior(config: &RunConfig, out_dir: &Path, deterministic: bool) -> Result<(), CliError> {
    let pairs = load_split(config, SplitKind::Train)?;
    let mut inliers = Vec::new();
    let mut outliers = Vec::new();
    for pair in &pairs {
        for (&r, &l) in pair.ratios.iter().zip(&pair.labels) {
            if l {
                inliers.push(r);
            } else {
                outliers.push(r);
            }
        }
    }
    let model = PriorModel::fit(&inliers, &outliers, DEFAULT_BINS)?;
    model.save(config.prior_path())?;
    write_json(
        &out_dir.join("prior_summary.json"),
        &PriorOutput {
            config,
            deterministic,
            inlier_samples: inliers.len(),
            outlier_samples: outliers.len(),
            bins: DEFAULT_BINS,
            prior: config.prior_path().to_path_buf(),
        },
    )
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    config: &'a RunConfig,
    deterministic: bool,
    iterations: usize,
    skipped_pairs_total: usize,
    checkpoint: PathBuf,
    curves: PathBuf,
    /// Last recorded curve row, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    r#final: Option<serde_json::Value>,
}

fn write_curves_csv(path: &Path, report: &TrainReport, stages: usize) -> Result<(), CliError> {
    let mut text = String::from("iter,loss_total,loss_reg");
    for s in 0..stages {
        text.push_str(&format!(",loss_stage{s}"));
    }
    for s in 0..stages {
        text.push_str(&format!(",lambda_stage{s}"));
    }
    text.push_str(",skipped_pairs,val_precision,val_recall");
    for s in 0..stages {
        text.push_str(&format!(",val_f{s}"));
    }
    text.push('\n');
    for point in &report.curves {
        text.push_str(&format!(
            "{},{},{}",
            point.iter, point.loss_total, point.loss_reg
        ));
        for v in &point.loss_stages {
            text.push_str(&format!(",{v}"));
        }
        for v in &point.lambda_stages {
            text.push_str(&format!(",{v}"));
        }
        text.push_str(&format!(
            ",{},{},{}",
            point.skipped_pairs, point.val_precision, point.val_recall
        ));
        for v in &point.val_stage_f {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// `train`: optimizes a fresh model on the train split, writes the
/// checkpoint, `curves.csv`, and `train_summary.json`.
pub fn cmd_train(config: &RunConfig, out_dir: &Path, deterministic: bool) -> Result<(), CliError> {
    let train_pairs = load_split(config, SplitKind::Train)?;
    let val_pairs = load_split(config, SplitKind::Val).unwrap_or_default();
    let prior = PriorModel::load(config.prior_path())?;
    let mut model = CascadeModel::new(&config.cascade, Init::Seeded(config.seed))?;
    let opts = TrainOptions {
        loss: config.loss_kind()?,
        eval_every: config.train.eval_every,
    };
    let report = train_cascade(&mut model, &prior, &train_pairs, &val_pairs, &opts)?;
    save_checkpoint(config.checkpoint_path(), &model.params, None)?;
    let curves_path = out_dir.join("curves.csv");
    write_curves_csv(&curves_path, &report, config.cascade.stages())?;
    let last = report
        .curves
        .last()
        .map(serde_json::to_value)
        .transpose()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_json(
        &out_dir.join("train_summary.json"),
        &TrainOutput {
            config,
            deterministic,
            iterations: report.iterations,
            skipped_pairs_total: report.skipped_pairs_total,
            checkpoint: config.checkpoint_path().to_path_buf(),
            curves: curves_path,
            r#final: last,
        },
    )
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    config: &'a RunConfig,
    deterministic: bool,
    split: SplitKind,
    #[serde(flatten)]
    report: EvalReport,
}

/// `eval`: scores the checkpointed model on the configured split and writes
/// `metrics.json` (summary plus every per-pair record it is derived from).
pub fn cmd_eval(config: &RunConfig, out_dir: &Path, deterministic: bool) -> Result<(), CliError> {
    let pairs = load_split(config, config.eval_split)?;
    let (model, prior) = load_model(config)?;
    let report = evaluate_cascade(&model, &prior, &pairs, &post_process(config))?;
    write_json(
        &out_dir.join("metrics.json"),
        &EvalOutput {
            config,
            deterministic,
            split: config.eval_split,
            report,
        },
    )
}

#[derive(Serialize)]
struct TheoremOutput<'a> {
    config: &'a RunConfig,
    deterministic: bool,
    passed: bool,
    #[serde(flatten)]
    report: TheoremFuzzReport,
}

/// `theorem`: fuzzes the guided-weight solver's negative-correlation
/// guarantee and writes `report.json`.
pub fn cmd_theorem(config: &RunConfig, out_dir: &Path, deterministic: bool) -> Result<(), CliError> {
    let report = run_theorem_fuzz(config.theorem.samples, &config.theorem.guidance, config.seed);
    let passed = report.violations == 0 && report.sum_violations == 0;
    write_json(
        &out_dir.join("report.json"),
        &TheoremOutput {
            config,
            deterministic,
            passed,
            report,
        },
    )
}

#[derive(Serialize)]
struct PoseArm {
    map5: f64,
    map10: f64,
    failure_rate: f64,
    per_pair: Vec<PosePairRecord>,
}

#[derive(Serialize)]
struct PosePairRecord {
    pair_id: String,
    rot_deg: f64,
    trans_deg: f64,
    failed: bool,
}

#[derive(Serialize)]
struct PosebenchOutput<'a> {
    config: &'a RunConfig,
    deterministic: bool,
    split: SplitKind,
    /// Robust estimation straight on the raw correspondences.
    raw: PoseArm,
    /// Classifier-filtered correspondences, then robust estimation.
    classified: PoseArm,
    classified_precision: f64,
    classified_recall: f64,
}

fn raw_ransac_arm(pairs: &[CorrespondencePair], base: &RansacConfig) -> PoseArm {
    let mut per_pair = Vec::with_capacity(pairs.len());
    let mut errors = Vec::with_capacity(pairs.len());
    for (k, pair) in pairs.iter().enumerate() {
        let config = RansacConfig {
            seed: base.seed.wrapping_add(k as u64),
            ..*base
        };
        let estimate = ransac_essential(&pair.coords, &config)
            .map_err(CliError::from)
            .and_then(|res| recover_pose(&res.essential, &pair.coords).map_err(|e| CliError::Runtime(e.to_string())));
        let (rot_deg, trans_deg, failed) = match estimate {
            Ok(est) => {
                let err = pose_error(&est.rotation, &est.translation, &pair.r_gt, &pair.t_gt);
                (err.rot_deg, err.trans_deg, false)
            }
            Err(_) => (180.0, 180.0, true),
        };
        errors.push(rot_deg.max(trans_deg));
        per_pair.push(PosePairRecord {
            pair_id: pair.pair_id.clone(),
            rot_deg,
            trans_deg,
            failed,
        });
    }
    PoseArm {
        map5: map_at(&errors, 5),
        map10: map_at(&errors, 10),
        failure_rate: per_pair.iter().filter(|r| r.failed).count() as f64 / pairs.len() as f64,
        per_pair,
    }
}

/// `posebench`: the same robust estimator with and without the trained
/// classifier in front, side by side on the configured split.
pub fn cmd_posebench(
    config: &RunConfig,
    out_dir: &Path,
    deterministic: bool,
) -> Result<(), CliError> {
    let pairs = load_split(config, config.eval_split)?;
    let (model, prior) = load_model(config)?;
    let raw = raw_ransac_arm(&pairs, &config.ransac);
    let report = evaluate_cascade(
        &model,
        &prior,
        &pairs,
        &PostProcess::Ransac(config.ransac),
    )?;
    let classified = PoseArm {
        map5: report.map5,
        map10: report.map10,
        failure_rate: report.per_pair.iter().filter(|m| m.pose_failed).count() as f64
            / report.per_pair.len() as f64,
        per_pair: report
            .per_pair
            .iter()
            .map(|m| PosePairRecord {
                pair_id: m.pair_id.clone(),
                rot_deg: m.rot_deg,
                trans_deg: m.trans_deg,
                failed: m.pose_failed,
            })
            .collect(),
    };
    write_json(
        &out_dir.join("posebench.json"),
        &PosebenchOutput {
            config,
            deterministic,
            split: config.eval_split,
            raw,
            classified,
            classified_precision: report.precision,
            classified_recall: report.recall,
        },
    )
}

/// Runs one command end to end: load config, resolve against the output
/// directory, create it, dispatch.
pub fn run_command(
    command: &str,
    config_path: &Path,
    out_dir: &Path,
    deterministic: bool,
) -> Result<(), CliError> {
    let config = RunConfig::from_file(config_path)?.resolve(out_dir)?;
    fs::create_dir_all(out_dir)?;
    match command {
        "gen" => cmd_gen(&config, out_dir, deterministic),
        "prior" => cmd_prior(&config, out_dir, deterministic),
        "train" => cmd_train(&config, out_dir, deterministic),
        "eval" => cmd_eval(&config, out_dir, deterministic),
        "theorem" => cmd_theorem(&config, out_dir, deterministic),
        "posebench" => cmd_posebench(&config, out_dir, deterministic),
        other => Err(CliError::Config(format!("unknown command '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_resolves_to_defaults() {
        let config = RunConfig::from_json("{}").unwrap();
        assert_eq!(config, RunConfig::default());
        let resolved = config.resolve(Path::new("out")).unwrap();
        assert_eq!(resolved.paths.data.as_deref(), Some(Path::new("out/data")));
        assert_eq!(resolved.cascade.seed, 0);
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        assert!(matches!(
            RunConfig::from_json(r#"{"bogus": 1}"#),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_json(r#"{"scene": {"bogus": 1}}"#),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_json(r#"{"cascade": {"bogus": 1}}"#),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_json(r#"{"ransac": {"bogus": 1}}"#),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn partial_nested_sections_keep_other_defaults() {
        let config = RunConfig::from_json(r#"{"scene": {"inlier_rate": 0.1}}"#).unwrap();
        assert_eq!(config.scene.inlier_rate, 0.1);
        assert_eq!(config.scene.points_per_pair, SceneConfig::default().points_per_pair);
    }

    #[test]
    fn unsupported_and_unknown_losses_are_config_errors() {
        for loss in ["focal", "floss"] {
            let config = RunConfig {
                loss: loss.to_string(),
                ..RunConfig::default()
            };
            let err = config.loss_kind().unwrap_err();
            assert!(err.to_string().contains("unsupported"), "{err}");
            assert_eq!(err.exit_code(), 2);
        }
        let config = RunConfig {
            loss: "hinge".to_string(),
            ..RunConfig::default()
        };
        assert!(matches!(config.loss_kind(), Err(CliError::Config(_))));
    }

    #[test]
    fn root_seed_overrides_sub_config_seeds() {
        let config = RunConfig::from_json(
            r#"{"seed": 9, "cascade": {"seed": 1}, "ransac": {"seed": 2}}"#,
        )
        .unwrap();
        let resolved = config.resolve(Path::new("out")).unwrap();
        assert_eq!(resolved.cascade.seed, 9);
        assert_eq!(resolved.ransac.seed, 9);
    }

    #[test]
    fn disabling_the_cascade_drops_refinement_modules() {
        let config = RunConfig::from_json(r#"{"cascade_enabled": false}"#).unwrap();
        let resolved = config.resolve(Path::new("out")).unwrap();
        assert_eq!(resolved.cascade.refinement_modules, 0);
        assert_eq!(resolved.cascade.guidance, vec![0.2]);
        assert!(resolved.cascade.eta.is_empty());
    }

    #[test]
    fn explicit_paths_survive_resolution() {
        let config =
            RunConfig::from_json(r#"{"paths": {"prior": "/tmp/p.json"}}"#).unwrap();
        let resolved = config.resolve(Path::new("out")).unwrap();
        assert_eq!(resolved.paths.prior.as_deref(), Some(Path::new("/tmp/p.json")));
        assert_eq!(
            resolved.paths.checkpoint.as_deref(),
            Some(Path::new("out/checkpoint.bin"))
        );
    }

    #[test]
    fn error_objects_carry_kind_and_exit_code() {
        let config_err = CliError::Config("bad".into());
        assert_eq!(config_err.exit_code(), 2);
        assert!(config_err.to_json().contains("\"kind\":\"config\""));
        let runtime_err = CliError::Runtime("broke".into());
        assert_eq!(runtime_err.exit_code(), 3);
        assert!(runtime_err.to_json().contains("\"kind\":\"runtime\""));
    }

    #[test]
    fn invalid_splits_and_theorem_sections_are_rejected() {
        let bad_split = RunConfig {
            dataset: DatasetSection {
                n_pairs: 10,
                split: (0.5, 0.1, 0.1),
            },
            ..RunConfig::default()
        };
        assert!(matches!(
            bad_split.resolve(Path::new("out")),
            Err(CliError::Config(_))
        ));
        let bad_theorem = RunConfig {
            theorem: TheoremSection {
                samples: 100,
                guidance: vec![-1.0],
            },
            ..RunConfig::default()
        };
        assert!(matches!(
            bad_theorem.resolve(Path::new("out")),
            Err(CliError::Config(_))
        ));
    }
}
