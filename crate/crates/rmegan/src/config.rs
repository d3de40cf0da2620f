//! Experiment configuration: line-oriented `section.key = value` text.
//!
//! Blank lines and `#` comments are ignored, unknown or repeated keys are
//! errors, and every key has a default. [`ExperimentConfig::render`] writes
//! the fully resolved configuration in the same syntax, so a rendered file
//! parses back to an identical configuration.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rmegan_core::eval::{EvalConfig, NamedMask};
use rmegan_core::grid::Grid;
use rmegan_core::interp::{Neighborhood, RbfKernel};
use rmegan_core::losses::{GradientForm, LossWeights, SsimConfig};
use rmegan_core::nn::{Conditioning, DiscriminatorConfig, GeneratorConfig, LrSchedule, TrainConfig};
use rmegan_core::sampling::SamplingSetup;
use rmegan_core::scene::SceneConfig;

use crate::error::{read_file, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Mbi,
    Idw,
    Rbf,
    Kriging,
    RmeGan,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Mbi => "mbi",
            EstimatorKind::Idw => "idw",
            EstimatorKind::Rbf => "rbf",
            EstimatorKind::Kriging => "kriging",
            EstimatorKind::RmeGan => "rme_gan",
        }
    }
}

impl FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "mbi" => EstimatorKind::Mbi,
            "idw" => EstimatorKind::Idw,
            "rbf" => EstimatorKind::Rbf,
            "kriging" => EstimatorKind::Kriging,
            "rme_gan" => EstimatorKind::RmeGan,
            _ => return Err(format!("unknown estimator {s:?}; expected mbi, idw, rbf, kriging or rme_gan")),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    /// Estimators run by `estimate` and `eval`, in order.
    pub kinds: Vec<EstimatorKind>,
    pub idw_power: f64,
    pub rbf_kernel: RbfKernel,
    /// `None` derives the shape parameter from the observation spacing.
    pub rbf_eps: Option<f64>,
    pub rbf_ridge: f64,
    pub kriging_lag_bins: usize,
    pub kriging_neighborhood: Neighborhood,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            kinds: vec![EstimatorKind::Mbi, EstimatorKind::Idw, EstimatorKind::Rbf, EstimatorKind::Kriging],
            idw_power: 2.0,
            rbf_kernel: RbfKernel::Multiquadric,
            rbf_eps: None,
            rbf_ridge: 1e-10,
            kriging_lag_bins: 12,
            kriging_neighborhood: Neighborhood::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub n_regions: usize,
    /// Train, test, validation proportions.
    pub split_ratios: (usize, usize, usize),
    /// Exact train, test, validation counts; overrides the ratios.
    pub split_counts: Option<(usize, usize, usize)>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { n_regions: 8, split_ratios: (5, 1, 1), split_counts: None }
    }
}

/// Rectangular evaluation area.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskRect {
    pub name: String,
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl MaskRect {
    pub fn to_mask(&self, height: usize, width: usize) -> Result<NamedMask> {
        if self.height == 0 || self.width == 0 || self.row + self.height > height || self.col + self.width > width {
            return Err(rmegan_core::Error::InvalidInput(format!(
                "mask {} ({}, {}, {}x{}) does not fit the {height}x{width} grid",
                self.name, self.row, self.col, self.height, self.width
            ))
            .into());
        }
        let mask = Grid::from_fn(height, width, |r, c| {
            let inside = (self.row..self.row + self.height).contains(&r) && (self.col..self.col + self.width).contains(&c);
            if inside {
                1.0
            } else {
                0.0
            }
        });
        Ok(NamedMask { name: self.name.clone(), mask })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    /// Outage thresholds on the 8-bit scale.
    pub thresholds: Vec<f64>,
    pub histogram_bins: usize,
    pub masks: Vec<MaskRect>,
    /// Also evaluate every estimator under all three sampling setups.
    pub zero_shot: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { thresholds: vec![5.0, 25.0], histogram_bins: 50, masks: Vec::new(), zero_shot: false }
    }
}

impl EvalSection {
    pub fn eval_config(&self, height: usize, width: usize) -> Result<EvalConfig> {
        Ok(EvalConfig {
            outage_thresholds: self.thresholds.iter().map(|t| t / 255.0).collect(),
            masks: self.masks.iter().map(|m| m.to_mask(height, width)).collect::<Result<_>>()?,
            histogram_bins: self.histogram_bins,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    Reduced,
    Table1,
}

/// Flat training settings; [`TrainSection::to_train_config`] assembles the
/// trainer configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    /// Name of the preset the other fields started from.
    pub preset: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub cosine: bool,
    pub lr_final_fraction: f64,
    pub tau: f64,
    pub patience: usize,
    pub max_phase1_epochs: Option<usize>,
    pub conditioning: Conditioning,
    pub non_saturating: bool,
    pub gradient_form: GradientForm,
    pub restore_best: bool,
    pub ssim_levels: usize,
    pub generator: GeneratorKind,
    pub depth: usize,
    pub base_channels: usize,
    pub disc_base: usize,
    pub n_segments: Option<usize>,
    pub n_freq: Option<usize>,
    pub compactness: f64,
    pub slic_iters: usize,
    pub mask_channel: bool,
    pub augment_dihedral: bool,
    pub augment_draws: usize,
    pub augment_copies: usize,
    pub phase1: LossWeights,
    pub phase2: LossWeights,
}

impl TrainSection {
    pub fn preset(name: &str) -> std::result::Result<Self, String> {
        let mut s = Self::from_config(&match name {
            "default" => TrainConfig::default(),
            "toy" => TrainConfig::toy(0),
            _ => return Err(format!("unknown preset {name:?}; expected default or toy")),
        });
        s.preset = name.to_string();
        Ok(s)
    }

    fn from_config(c: &TrainConfig) -> Self {
        let (cosine, lr_final_fraction) = match c.lr_schedule {
            LrSchedule::Constant => (false, 0.0),
            LrSchedule::Cosine { final_fraction } => (true, final_fraction),
        };
        let base = c.generator.encoder.first().map_or(16, |l| l.out_ch);
        Self {
            preset: String::new(),
            epochs: c.epochs,
            batch_size: c.batch_size,
            lr: c.adam.lr,
            beta1: c.adam.beta1,
            beta2: c.adam.beta2,
            adam_eps: c.adam.eps,
            cosine,
            lr_final_fraction,
            tau: c.tau,
            patience: c.patience,
            max_phase1_epochs: c.max_phase1_epochs,
            conditioning: c.conditioning,
            non_saturating: c.non_saturating,
            gradient_form: c.gradient_form,
            restore_best: c.restore_best,
            ssim_levels: c.ssim.levels,
            generator: GeneratorKind::Reduced,
            depth: c.generator.encoder.len().saturating_sub(1),
            base_channels: base,
            disc_base: c.discriminator.channels.first().copied().unwrap_or(8),
            n_segments: c.prep.n_segments,
            n_freq: c.prep.n_freq,
            compactness: c.prep.compactness,
            slic_iters: c.prep.slic_iters,
            mask_channel: c.prep.mask_channel,
            augment_dihedral: c.augment.dihedral,
            augment_draws: c.augment.draws,
            augment_copies: c.augment.copies,
            phase1: c.phase1,
            phase2: c.phase2,
        }
    }

    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        let mut c = TrainConfig::default();
        c.epochs = self.epochs;
        c.batch_size = self.batch_size;
        c.seed = seed;
        c.adam.lr = self.lr;
        c.adam.beta1 = self.beta1;
        c.adam.beta2 = self.beta2;
        c.adam.eps = self.adam_eps;
        c.lr_schedule = if self.cosine {
            LrSchedule::Cosine { final_fraction: self.lr_final_fraction }
        } else {
            LrSchedule::Constant
        };
        c.tau = self.tau;
        c.patience = self.patience;
        c.max_phase1_epochs = self.max_phase1_epochs;
        c.conditioning = self.conditioning;
        c.non_saturating = self.non_saturating;
        c.gradient_form = self.gradient_form;
        c.restore_best = self.restore_best;
        c.ssim = SsimConfig::uniform(self.ssim_levels);
        c.generator = match self.generator {
            GeneratorKind::Reduced => GeneratorConfig::reduced(self.depth, self.base_channels),
            GeneratorKind::Table1 => GeneratorConfig::table1(),
        };
        c.generator.input_channels = if self.mask_channel { 4 } else { 3 };
        c.discriminator = DiscriminatorConfig::with_base(self.disc_base);
        c.prep.n_segments = self.n_segments;
        c.prep.n_freq = self.n_freq;
        c.prep.compactness = self.compactness;
        c.prep.slic_iters = self.slic_iters;
        c.prep.mask_channel = self.mask_channel;
        c.augment.dihedral = self.augment_dihedral;
        c.augment.draws = self.augment_draws;
        c.augment.copies = self.augment_copies;
        c.phase1 = self.phase1;
        c.phase2 = self.phase2;
        c
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        Self::preset("default").expect("built-in preset")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Seeds scene generation, sampling, splits and training.
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: usize,
    pub scene: SceneConfig,
    pub dataset: DatasetConfig,
    pub sampling: SamplingSetup,
    pub estimator: EstimatorConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("rmegan-out"),
            jobs: 1,
            scene: SceneConfig::default(),
            dataset: DatasetConfig::default(),
            sampling: SamplingSetup::SETUP1,
            estimator: EstimatorConfig::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, found {v:?}")),
    }
}

fn parse_auto<T: FromStr>(v: &str) -> std::result::Result<Option<T>, String> {
    if v == "auto" {
        Ok(None)
    } else {
        parse(v).map(Some)
    }
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse(s.trim())).collect()
}

fn parse_triple(v: &str) -> std::result::Result<(usize, usize, usize), String> {
    match parse_list::<usize>(v)?.as_slice() {
        &[a, b, c] => Ok((a, b, c)),
        _ => Err(format!("expected three comma-separated counts, found {v:?}")),
    }
}

fn auto<T: Display>(v: Option<T>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

fn list<T: Display>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn triple(v: (usize, usize, usize)) -> String {
    format!("{},{},{}", v.0, v.1, v.2)
}

fn parse_masks(v: &str) -> std::result::Result<Vec<MaskRect>, String> {
    let mut out = Vec::new();
    for part in v.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, rect) = part
            .split_once('@')
            .ok_or_else(|| format!("mask {part:?} must look like name@row,col,height,width"))?;
        match parse_list::<usize>(rect)?.as_slice() {
            &[row, col, height, width] => out.push(MaskRect { name: name.trim().to_string(), row, col, height, width }),
            _ => return Err(format!("mask {part:?} needs four numbers")),
        }
    }
    Ok(out)
}

fn render_masks(v: &[MaskRect]) -> String {
    v.iter()
        .map(|m| format!("{}@{},{},{},{}", m.name, m.row, m.col, m.height, m.width))
        .collect::<Vec<_>>()
        .join(";")
}

const LOSS_KEYS: [&str; 7] = ["adversarial", "mse", "tv", "gradient", "ssim", "geo", "hpf"];

fn loss_field<'a>(w: &'a mut LossWeights, key: &str) -> Option<&'a mut f64> {
    Some(match key {
        "adversarial" => &mut w.adversarial,
        "mse" => &mut w.mse,
        "tv" => &mut w.tv,
        "gradient" => &mut w.gradient,
        "ssim" => &mut w.ssim,
        "geo" => &mut w.geo,
        "hpf" => &mut w.hpf,
        _ => return None,
    })
}

fn kernel_name(k: RbfKernel) -> &'static str {
    match k {
        RbfKernel::Gaussian => "gaussian",
        RbfKernel::Multiquadric => "multiquadric",
        RbfKernel::ThinPlate => "thin_plate",
    }
}

fn neighborhood_name(n: Neighborhood) -> String {
    match n {
        Neighborhood::Auto => "auto".into(),
        Neighborhood::Global => "global".into(),
        Neighborhood::Nearest(k) => k.to_string(),
    }
}

fn config_error(msg: String) -> Error {
    rmegan_core::Error::Parameter(msg).into()
}

impl ExperimentConfig {
    /// Reads a config file; `None` gives the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = String::from_utf8(read_file(p)?).map_err(|_| Error::Config {
                    path: p.to_path_buf(),
                    line: 0,
                    msg: "config is not UTF-8".into(),
                })?;
                Self::parse(&text, p)
            }
        }
    }

    /// Parses config text. `train.preset` is applied before every other key
    /// wherever it appears. Line 0 in an error means a cross-key check.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Config { path: path.to_path_buf(), line, msg };
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| err(line, format!("expected `section.key = value`, found {body:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if !k.contains('.') {
                return Err(err(line, format!("key {k:?} needs a section prefix")));
            }
            if let Some((first, ..)) = entries.iter().find(|e| e.1 == k) {
                return Err(err(line, format!("{k} already set on line {first}")));
            }
            entries.push((line, k.to_string(), v.to_string()));
        }
        let mut cfg = Self::default();
        if let Some((line, _, v)) = entries.iter().find(|e| e.1 == "train.preset") {
            cfg.train = TrainSection::preset(v).map_err(|m| err(*line, m))?;
        }
        for (line, k, v) in entries.iter().filter(|e| e.1 != "train.preset") {
            cfg.set(k, v).map_err(|m| err(*line, format!("{k}: {m}")))?;
        }
        cfg.validate().map_err(|e| err(0, e.to_string()))?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn scene_config(&self) -> SceneConfig {
        SceneConfig { seed: self.seed, ..self.scene.clone() }
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.to_train_config(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene_config().validate()?;
        self.train_config().validate()?;
        if self.jobs == 0 {
            return Err(config_error("run.jobs must be at least 1".into()));
        }
        if self.dataset.n_regions == 0 {
            return Err(config_error("dataset.n_regions must be positive".into()));
        }
        if let Some((a, b, c)) = self.dataset.split_counts {
            if a + b + c != self.dataset.n_regions {
                return Err(config_error(format!(
                    "dataset.split_counts {a},{b},{c} must add up to dataset.n_regions = {}",
                    self.dataset.n_regions
                )));
            }
        }
        if self.estimator.kinds.is_empty() {
            return Err(config_error("estimator.kind lists no estimators".into()));
        }
        for m in &self.eval.masks {
            m.to_mask(self.scene.height, self.scene.width)?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let s = &mut self.scene;
        let t = &mut self.train;
        let e = &mut self.estimator;
        match key {
            "run.seed" => self.seed = parse(v)?,
            "run.out" => self.out = PathBuf::from(v),
            "run.jobs" => self.jobs = parse(v)?,
            "scene.height" => s.height = parse(v)?,
            "scene.width" => s.width = parse(v)?,
            "scene.n_tx" => s.n_tx = parse(v)?,
            "scene.alpha_min" => s.alpha_range.0 = parse(v)?,
            "scene.alpha_max" => s.alpha_range.1 = parse(v)?,
            "scene.theta_min" => s.theta_range.0 = parse(v)?,
            "scene.theta_max" => s.theta_range.1 = parse(v)?,
            "scene.wall_loss_db" => s.wall_loss_db = parse(v)?,
            "scene.noise_sigma_db" => s.noise_sigma_db = parse(v)?,
            "scene.n_buildings" => s.n_buildings = parse(v)?,
            "scene.building_min" => s.building_size_range.0 = parse(v)?,
            "scene.building_max" => s.building_size_range.1 = parse(v)?,
            "scene.dmin" => s.dmin = parse(v)?,
            "scene.dmax" => s.dmax = parse(v)?,
            "dataset.n_regions" => self.dataset.n_regions = parse(v)?,
            "dataset.split_ratios" => self.dataset.split_ratios = parse_triple(v)?,
            "dataset.split_counts" => {
                self.dataset.split_counts = if v == "auto" { None } else { Some(parse_triple(v)?) }
            }
            "sampling.setup" => {
                self.sampling = match v {
                    "uniform" => SamplingSetup::SETUP1,
                    "unbalanced" => SamplingSetup::SETUP2,
                    "split" => SamplingSetup::SETUP3,
                    _ => return Err(format!("unknown setup {v:?}; expected uniform, unbalanced or split")),
                }
            }
            "sampling.ratio" | "sampling.lo" | "sampling.hi" | "sampling.ratio_a" | "sampling.ratio_b" => {
                let x: f64 = parse(v)?;
                let field = match (&mut self.sampling, key) {
                    (SamplingSetup::Uniform { ratio }, "sampling.ratio") => ratio,
                    (SamplingSetup::Unbalanced { lo, .. }, "sampling.lo") => lo,
                    (SamplingSetup::Unbalanced { hi, .. }, "sampling.hi") => hi,
                    (SamplingSetup::Split { ratio_a, .. }, "sampling.ratio_a") => ratio_a,
                    (SamplingSetup::Split { ratio_b, .. }, "sampling.ratio_b") => ratio_b,
                    (setup, _) => return Err(format!("does not apply to the {} setup", setup.name())),
                };
                *field = x;
            }
            "estimator.kind" => e.kinds = parse_list(v)?,
            "estimator.idw_power" => e.idw_power = parse(v)?,
            "estimator.rbf_kernel" => {
                e.rbf_kernel = match v {
                    "gaussian" => RbfKernel::Gaussian,
                    "multiquadric" => RbfKernel::Multiquadric,
                    "thin_plate" => RbfKernel::ThinPlate,
                    _ => return Err(format!("unknown kernel {v:?}; expected gaussian, multiquadric or thin_plate")),
                }
            }
            "estimator.rbf_eps" => e.rbf_eps = parse_auto(v)?,
            "estimator.rbf_ridge" => e.rbf_ridge = parse(v)?,
            "estimator.kriging_lag_bins" => e.kriging_lag_bins = parse(v)?,
            "estimator.kriging_neighborhood" => {
                e.kriging_neighborhood = match v {
                    "auto" => Neighborhood::Auto,
                    "global" => Neighborhood::Global,
                    n => Neighborhood::Nearest(parse(n)?),
                }
            }
            "train.epochs" => t.epochs = parse(v)?,
            "train.batch_size" => t.batch_size = parse(v)?,
            "train.lr" => t.lr = parse(v)?,
            "train.beta1" => t.beta1 = parse(v)?,
            "train.beta2" => t.beta2 = parse(v)?,
            "train.adam_eps" => t.adam_eps = parse(v)?,
            "train.lr_schedule" => {
                t.cosine = match v {
                    "constant" => false,
                    "cosine" => true,
                    _ => return Err(format!("unknown schedule {v:?}; expected constant or cosine")),
                }
            }
            "train.lr_final_fraction" => t.lr_final_fraction = parse(v)?,
            "train.tau" => t.tau = parse(v)?,
            "train.patience" => t.patience = parse(v)?,
            "train.max_phase1_epochs" => t.max_phase1_epochs = parse_auto(v)?,
            "train.conditioning" => {
                t.conditioning = match v {
                    "features" => Conditioning::Features,
                    "literal_onehot" => Conditioning::LiteralOneHot,
                    _ => return Err(format!("unknown conditioning {v:?}; expected features or literal_onehot")),
                }
            }
            "train.non_saturating" => t.non_saturating = parse_bool(v)?,
            "train.restore_best" => t.restore_best = parse_bool(v)?,
            "train.gradient_form" => {
                t.gradient_form = match v {
                    "dissimilarity" => GradientForm::Dissimilarity,
                    "literal" => GradientForm::Literal,
                    _ => return Err(format!("unknown form {v:?}; expected dissimilarity or literal")),
                }
            }
            "train.ssim_levels" => t.ssim_levels = parse(v)?,
            "train.generator" => {
                t.generator = match v {
                    "reduced" => GeneratorKind::Reduced,
                    "table1" => GeneratorKind::Table1,
                    _ => return Err(format!("unknown generator {v:?}; expected reduced or table1")),
                }
            }
            "train.depth" => t.depth = parse(v)?,
            "train.base_channels" => t.base_channels = parse(v)?,
            "train.disc_base" => t.disc_base = parse(v)?,
            "train.n_segments" => t.n_segments = parse_auto(v)?,
            "train.n_freq" => t.n_freq = parse_auto(v)?,
            "train.compactness" => t.compactness = parse(v)?,
            "train.slic_iters" => t.slic_iters = parse(v)?,
            "train.mask_channel" => t.mask_channel = parse_bool(v)?,
            "train.augment_dihedral" => t.augment_dihedral = parse_bool(v)?,
            "train.augment_draws" => t.augment_draws = parse(v)?,
            "train.augment_copies" => t.augment_copies = parse(v)?,
            "eval.thresholds" => self.eval.thresholds = parse_list(v)?,
            "eval.histogram_bins" => self.eval.histogram_bins = parse(v)?,
            "eval.masks" => self.eval.masks = parse_masks(v)?,
            "eval.zero_shot" => self.eval.zero_shot = parse_bool(v)?,
            _ => {
                let (section, field) = key.split_once('.').unwrap_or(("", key));
                let weights = match section {
                    "phase1" => &mut t.phase1,
                    "phase2" => &mut t.phase2,
                    _ => return Err("unknown key".into()),
                };
                *loss_field(weights, field).ok_or("unknown key")? = parse(v)?;
            }
        }
        Ok(())
    }

    /// Every key with its resolved value, in canonical order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let s = &self.scene;
        let t = &self.train;
        let e = &self.estimator;
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        put("run.seed", self.seed.to_string());
        put("run.out", self.out.display().to_string());
        put("run.jobs", self.jobs.to_string());
        put("scene.height", s.height.to_string());
        put("scene.width", s.width.to_string());
        put("scene.n_tx", s.n_tx.to_string());
        put("scene.alpha_min", s.alpha_range.0.to_string());
        put("scene.alpha_max", s.alpha_range.1.to_string());
        put("scene.theta_min", s.theta_range.0.to_string());
        put("scene.theta_max", s.theta_range.1.to_string());
        put("scene.wall_loss_db", s.wall_loss_db.to_string());
        put("scene.noise_sigma_db", s.noise_sigma_db.to_string());
        put("scene.n_buildings", s.n_buildings.to_string());
        put("scene.building_min", s.building_size_range.0.to_string());
        put("scene.building_max", s.building_size_range.1.to_string());
        put("scene.dmin", s.dmin.to_string());
        put("scene.dmax", s.dmax.to_string());
        put("dataset.n_regions", self.dataset.n_regions.to_string());
        put("dataset.split_ratios", triple(self.dataset.split_ratios));
        put("dataset.split_counts", self.dataset.split_counts.map_or_else(|| "auto".into(), triple));
        put("sampling.setup", self.sampling.name().to_string());
        match self.sampling {
            SamplingSetup::Uniform { ratio } => put("sampling.ratio", ratio.to_string()),
            SamplingSetup::Unbalanced { lo, hi } => {
                put("sampling.lo", lo.to_string());
                put("sampling.hi", hi.to_string());
            }
            SamplingSetup::Split { ratio_a, ratio_b } => {
                put("sampling.ratio_a", ratio_a.to_string());
                put("sampling.ratio_b", ratio_b.to_string());
            }
        }
        put("estimator.kind", e.kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join(","));
        put("estimator.idw_power", e.idw_power.to_string());
        put("estimator.rbf_kernel", kernel_name(e.rbf_kernel).to_string());
        put("estimator.rbf_eps", auto(e.rbf_eps));
        put("estimator.rbf_ridge", e.rbf_ridge.to_string());
        put("estimator.kriging_lag_bins", e.kriging_lag_bins.to_string());
        put("estimator.kriging_neighborhood", neighborhood_name(e.kriging_neighborhood));
        put("train.preset", t.preset.clone());
        put("train.epochs", t.epochs.to_string());
        put("train.batch_size", t.batch_size.to_string());
        put("train.lr", t.lr.to_string());
        put("train.beta1", t.beta1.to_string());
        put("train.beta2", t.beta2.to_string());
        put("train.adam_eps", t.adam_eps.to_string());
        put("train.lr_schedule", if t.cosine { "cosine" } else { "constant" }.to_string());
        put("train.lr_final_fraction", t.lr_final_fraction.to_string());
        put("train.tau", t.tau.to_string());
        put("train.patience", t.patience.to_string());
        put("train.max_phase1_epochs", auto(t.max_phase1_epochs));
        put(
            "train.conditioning",
            match t.conditioning {
                Conditioning::Features => "features",
                Conditioning::LiteralOneHot => "literal_onehot",
            }
            .to_string(),
        );
        put("train.non_saturating", t.non_saturating.to_string());
        put("train.restore_best", t.restore_best.to_string());
        put(
            "train.gradient_form",
            match t.gradient_form {
                GradientForm::Dissimilarity => "dissimilarity",
                GradientForm::Literal => "literal",
            }
            .to_string(),
        );
        put("train.ssim_levels", t.ssim_levels.to_string());
        put(
            "train.generator",
            match t.generator {
                GeneratorKind::Reduced => "reduced",
                GeneratorKind::Table1 => "table1",
            }
            .to_string(),
        );
        put("train.depth", t.depth.to_string());
        put("train.base_channels", t.base_channels.to_string());
        put("train.disc_base", t.disc_base.to_string());
        put("train.n_segments", auto(t.n_segments));
        put("train.n_freq", auto(t.n_freq));
        put("train.compactness", t.compactness.to_string());
        put("train.slic_iters", t.slic_iters.to_string());
        put("train.mask_channel", t.mask_channel.to_string());
        put("train.augment_dihedral", t.augment_dihedral.to_string());
        put("train.augment_draws", t.augment_draws.to_string());
        put("train.augment_copies", t.augment_copies.to_string());
        for (section, w) in [("phase1", t.phase1), ("phase2", t.phase2)] {
            let mut w = w;
            for k in LOSS_KEYS {
                let v = *loss_field(&mut w, k).expect("known loss key");
                put(&format!("{section}.{k}"), v.to_string());
            }
        }
        put("eval.thresholds", list(&self.eval.thresholds));
        put("eval.histogram_bins", self.eval.histogram_bins.to_string());
        put("eval.masks", render_masks(&self.eval.masks));
        put("eval.zero_shot", self.eval.zero_shot.to_string());
        out
    }

    /// The resolved configuration in config-file syntax.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(&k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}
