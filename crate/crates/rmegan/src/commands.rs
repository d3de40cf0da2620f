//! The pipeline stages behind the command-line subcommands.
//!
//! Output layout under the run directory:
//!
//! ```text
//! dataset/                 grids, manifest.csv, meta.csv, split.csv
//! samples/region_<i>.csv   observations
//! train/                   checkpoint.rmeg, history.csv
//! estimates/<estimator>/   region_<i>.rmg for every test region
//! eval/                    <estimator>.csv, <estimator>_histogram.csv, summary.txt
//! ```
//!
//! Each stage directory also holds a `run.meta` with the resolved
//! configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use rmegan_core::eval::{evaluate, zero_shot_eval, EvalReport};
use rmegan_core::grid::{Grid, RegionFeatures};
use rmegan_core::interp::{default_shape_eps, idw_interpolate, kriging_interpolate_with, rbf_interpolate, KrigingConfig};
use rmegan_core::mbi::{fit_ldpl, mbi_estimate};
use rmegan_core::nn::{prepare_region, train_with, PreparedRegion, Trainer, TrainingPool};
use rmegan_core::sampling::SamplingSetup;
use rmegan_core::scene::{generate_region, Dataset, Split};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::{EstimatorKind, ExperimentConfig};
use crate::dataset::{attach_samples, load_dataset, save_dataset, save_samples};
use crate::error::{write_file, Error, Result};
use crate::formats::{read_grid, write_grid, write_params_csv, GridFormat};

pub const RUN_META: &str = "run.meta";
pub const CHECKPOINT: &str = "checkpoint.rmeg";
pub const HISTORY: &str = "history.csv";

/// Stage directories under a run directory.
#[derive(Debug, Clone)]
pub struct RunDirs {
    pub root: PathBuf,
}

impl RunDirs {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn samples(&self) -> PathBuf {
        self.root.join("samples")
    }

    pub fn train(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.train().join(CHECKPOINT)
    }

    pub fn estimates(&self) -> PathBuf {
        self.root.join("estimates")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
}

pub fn estimate_path(dir: &Path, kind: EstimatorKind, idx: usize) -> PathBuf {
    dir.join(kind.name()).join(format!("region_{idx}.rmg"))
}

/// Writes the resolved configuration, tool version and command into `dir`.
pub fn write_run_meta(dir: &Path, cfg: &ExperimentConfig, command: &str) -> Result<()> {
    let text = format!(
        "# rmegan {}\n# command: {command}\n# results do not depend on run.jobs\n{}",
        env!("CARGO_PKG_VERSION"),
        cfg.render()
    );
    write_file(&dir.join(RUN_META), text.as_bytes())
}

fn pool(cfg: &ExperimentConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| rmegan_core::Error::Parameter(format!("cannot start {} worker threads: {e}", cfg.jobs)).into())
}

/// Maps `f` over `items` on `cfg.jobs` threads, keeping input order.
fn par_map<T: Sync, U: Send>(
    cfg: &ExperimentConfig,
    items: &[T],
    f: impl Fn(&T) -> Result<U> + Sync + Send,
) -> Result<Vec<U>> {
    if cfg.jobs == 1 {
        return items.iter().map(f).collect();
    }
    pool(cfg)?.install(|| items.par_iter().map(f).collect())
}

pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    let scene = cfg.scene_config();
    scene.validate()?;
    let n = cfg.dataset.n_regions;
    let idx: Vec<usize> = (0..n).collect();
    let regions = par_map(cfg, &idx, |&i| Ok(generate_region(&scene, cfg.seed, i)?))?;
    let split = match cfg.dataset.split_counts {
        Some(c) => Split::with_counts(n, c, cfg.seed)?,
        None => Split::with_ratios(n, cfg.dataset.split_ratios, cfg.seed),
    };
    let ds = Dataset { regions, split, dmin: scene.dmin, dmax: scene.dmax, seed: cfg.seed };
    save_dataset(out, &ds)?;
    write_run_meta(out, cfg, "gen")?;
    log::info!("wrote {n} regions to {}", out.display());
    Ok(ds)
}

pub fn cmd_sample(cfg: &ExperimentConfig, dataset: &Path, out: &Path) -> Result<()> {
    let ds = load_dataset(dataset)?;
    let indexed: Vec<(usize, &RegionFeatures)> = ds.regions.iter().enumerate().collect();
    let samples = par_map(cfg, &indexed, |&(i, r)| Ok(cfg.sampling.sample_region(r, cfg.seed, i)?.samples))?;
    save_samples(out, &samples)?;
    write_run_meta(out, cfg, "sample")?;
    log::info!("wrote observations for {} regions to {}", samples.len(), out.display());
    Ok(())
}

fn observed_dataset(dataset: &Path, samples: &Path) -> Result<Dataset> {
    let mut ds = load_dataset(dataset)?;
    attach_samples(samples, &mut ds)?;
    Ok(ds)
}

fn prepare(cfg: &ExperimentConfig, ds: &Dataset, idx: &[usize]) -> Result<Vec<PreparedRegion>> {
    let prep = cfg.train_config().prep;
    par_map(cfg, idx, |&i| Ok(prepare_region(&ds.regions[i], i, &prep)?))
}

pub fn cmd_train(cfg: &ExperimentConfig, dataset: &Path, samples: &Path, out: &Path) -> Result<Trainer> {
    let ds = observed_dataset(dataset, samples)?;
    if ds.split.train.is_empty() || ds.split.validation.is_empty() {
        return Err(rmegan_core::Error::InvalidInput("training needs at least one train and one validation region".into()).into());
    }
    let tc = cfg.train_config();
    let train: Vec<(usize, &RegionFeatures)> = ds.split.train.iter().map(|&i| (i, &ds.regions[i])).collect();
    let pool = if tc.augment.is_identity() {
        TrainingPool::fixed(prepare(cfg, &ds, &ds.split.train)?)
    } else {
        TrainingPool::build(&train, &cfg.sampling, cfg.seed, &tc.augment, &tc.prep)?
    };
    let val = prepare(cfg, &ds, &ds.split.validation)?;
    let (h, w) = ds.regions[0].dims();
    let mut trainer = Trainer::new(tc, h, w)?;
    let (ckpt, text) = (out.join(CHECKPOINT), result_config(cfg));
    let mut write_error = None;
    let trained = train_with(&mut trainer, &pool, &val, |t, _| {
        save_checkpoint(&ckpt, &Checkpoint::from_trainer(t, h, w, &text)).map_err(|e| {
            let msg = e.to_string();
            write_error = Some(e);
            rmegan_core::Error::InvalidInput(msg)
        })
    });
    if let Some(e) = write_error {
        return Err(e);
    }
    trained?;
    write_file(&out.join(HISTORY), history_csv(&trainer).as_bytes())?;
    write_run_meta(out, cfg, "train")?;
    Ok(trainer)
}

/// The rendered configuration without the keys that cannot change results.
pub fn result_config(cfg: &ExperimentConfig) -> String {
    cfg.render()
        .lines()
        .filter(|l| !l.starts_with("run.out ") && !l.starts_with("run.jobs "))
        .map(|l| format!("{l}\n"))
        .collect()
}

pub fn history_csv(trainer: &Trainer) -> String {
    let mut out = String::from("epoch,phase,d_loss,g_loss,val_nmse\n");
    for r in &trainer.history {
        writeln!(out, "{},{},{},{},{}", r.epoch, r.phase.number(), r.d_loss, r.g_loss, r.val_nmse).expect("writing to a String");
    }
    out
}

/// Restores the trained model saved by [`cmd_train`].
pub fn load_trainer(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Trainer> {
    if !checkpoint.exists() {
        return Err(Error::MissingInput {
            path: checkpoint.to_path_buf(),
            hint: "the rme_gan estimator needs a trained checkpoint; run `rmegan train` first".into(),
        });
    }
    load_checkpoint(checkpoint)?.into_trainer(cfg.train_config(), checkpoint)
}

/// One estimator as a function of an observed region.
pub fn estimator<'a>(
    cfg: &'a ExperimentConfig,
    kind: EstimatorKind,
    trainer: Option<&'a Trainer>,
) -> Result<Box<dyn Fn(&RegionFeatures) -> rmegan_core::Result<Grid> + Sync + 'a>> {
    let e = &cfg.estimator;
    Ok(match kind {
        EstimatorKind::Mbi => Box::new(|r: &RegionFeatures| {
            let (h, w) = r.dims();
            mbi_estimate(&r.samples, &r.transmitters, h, w)
        }),
        EstimatorKind::Idw => Box::new(move |r: &RegionFeatures| idw_interpolate(&r.samples, e.idw_power, r.dims())),
        EstimatorKind::Rbf => Box::new(move |r: &RegionFeatures| {
            let eps = e.rbf_eps.unwrap_or_else(|| default_shape_eps(&r.samples));
            rbf_interpolate(&r.samples, e.rbf_kernel, eps, e.rbf_ridge, r.dims())
        }),
        EstimatorKind::Kriging => Box::new(move |r: &RegionFeatures| {
            let kc = KrigingConfig { n_lag_bins: e.kriging_lag_bins, neighborhood: e.kriging_neighborhood };
            kriging_interpolate_with(&r.samples, kc, r.dims())
        }),
        EstimatorKind::RmeGan => {
            let t = trainer.ok_or_else(|| rmegan_core::Error::InvalidInput("rme_gan needs a trained model".into()))?;
            Box::new(move |r: &RegionFeatures| t.estimate(r))
        }
    })
}

fn needs_model(cfg: &ExperimentConfig) -> bool {
    cfg.estimator.kinds.contains(&EstimatorKind::RmeGan)
}

pub fn cmd_estimate(cfg: &ExperimentConfig, dataset: &Path, samples: &Path, checkpoint: &Path, out: &Path) -> Result<()> {
    let ds = observed_dataset(dataset, samples)?;
    let trainer = if needs_model(cfg) { Some(load_trainer(cfg, checkpoint)?) } else { None };
    for &kind in &cfg.estimator.kinds {
        let f = estimator(cfg, kind, trainer.as_ref())?;
        let grids = par_map(cfg, &ds.split.test, |&i| {
            f(&ds.regions[i]).map_err(|e| Error::from(e).with_context(kind, i))
        })?;
        for (&i, g) in ds.split.test.iter().zip(&grids) {
            write_grid(&estimate_path(out, kind, i), g, GridFormat::Rmg)?;
            if kind == EstimatorKind::Mbi {
                let fit = fit_ldpl(&ds.regions[i].samples, &ds.regions[i].transmitters)?;
                write_params_csv(&out.join("mbi").join(format!("region_{i}_params.csv")), &fit.params)?;
            }
        }
        log::info!("{}: estimated {} test regions", kind.name(), grids.len());
    }
    write_run_meta(out, cfg, "estimate")
}

impl Error {
    fn with_context(self, kind: EstimatorKind, idx: usize) -> Error {
        match self {
            Error::Core(e) => {
                log::error!("{} failed on region {idx}: {e}", kind.name());
                Error::Core(e)
            }
            other => other,
        }
    }
}

fn histogram_csv(report: &EvalReport) -> String {
    let n = report.histogram.len();
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (b, c) in report.histogram.iter().enumerate() {
        writeln!(out, "{},{},{c}", b as f64 / n as f64, (b + 1) as f64 / n as f64).expect("writing to a String");
    }
    out
}

/// Scores the stored estimates of every configured estimator on the test
/// split.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    estimates: &Path,
    dataset: &Path,
    samples: &Path,
    checkpoint: &Path,
    out: &Path,
) -> Result<Vec<EvalReport>> {
    let ds = observed_dataset(dataset, samples)?;
    let (h, w) = ds.regions[0].dims();
    let ec = cfg.eval.eval_config(h, w)?;
    let test: Vec<(usize, &RegionFeatures)> = ds.split.test.iter().map(|&i| (i, &ds.regions[i])).collect();
    let mut reports = Vec::new();
    let mut summary = String::new();
    for &kind in &cfg.estimator.kinds {
        let files: Vec<PathBuf> = ds.split.test.iter().map(|&i| estimate_path(estimates, kind, i)).collect();
        if let Some(missing) = files.iter().find(|p| !p.exists()) {
            return Err(Error::MissingInput { path: missing.clone(), hint: "run `rmegan estimate` first".into() });
        }
        let grids = files.iter().map(|p| read_grid(p, GridFormat::Rmg)).collect::<Result<Vec<_>>>()?;
        // `evaluate` visits the regions in the order given, once each.
        let mut next = grids.into_iter();
        let report = evaluate(kind.name(), test.iter().copied(), &ec, |_| {
            next.next().ok_or_else(|| rmegan_core::Error::InvalidInput("estimate count mismatch".into()))
        })?;
        write_file(&out.join(format!("{}.csv", kind.name())), report.to_csv().as_bytes())?;
        write_file(&out.join(format!("{}_histogram.csv", kind.name())), histogram_csv(&report).as_bytes())?;
        summary.push_str(&report.summary());
        reports.push(report);
    }
    if cfg.eval.zero_shot {
        let trainer = if needs_model(cfg) { Some(load_trainer(cfg, checkpoint)?) } else { None };
        let setups = [SamplingSetup::SETUP1, SamplingSetup::SETUP2, SamplingSetup::SETUP3];
        for &kind in &cfg.estimator.kinds {
            let f = estimator(cfg, kind, trainer.as_ref())?;
            let z = zero_shot_eval(kind.name(), &test, &setups, &ec, cfg.seed, |r| f(r))?;
            write_file(&out.join(format!("zero_shot_{}.csv", kind.name())), z.to_csv().as_bytes())?;
        }
    }
    write_file(&out.join("summary.txt"), summary.as_bytes())?;
    write_run_meta(out, cfg, "eval")?;
    Ok(reports)
}

/// Runs every stage into `cfg.out`; training only when `rme_gan` is among
/// the estimators.
pub fn cmd_pipeline(cfg: &ExperimentConfig) -> Result<Vec<EvalReport>> {
    let dirs = RunDirs::new(&cfg.out);
    cmd_gen(cfg, &dirs.dataset())?;
    cmd_sample(cfg, &dirs.dataset(), &dirs.samples())?;
    if needs_model(cfg) {
        cmd_train(cfg, &dirs.dataset(), &dirs.samples(), &dirs.train())?;
    }
    cmd_estimate(cfg, &dirs.dataset(), &dirs.samples(), &dirs.checkpoint(), &dirs.estimates())?;
    let reports = cmd_eval(cfg, &dirs.estimates(), &dirs.dataset(), &dirs.samples(), &dirs.checkpoint(), &dirs.eval())?;
    write_run_meta(&dirs.root, cfg, "pipeline")?;
    Ok(reports)
}
