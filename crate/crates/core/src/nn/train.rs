use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::eval::nmse;
use crate::grid::{encode_input, encode_input_with_mask, EncodedInput, Grid, RegionFeatures, SparseSamples};
use crate::losses::{
    combine_loss, l_geo, l_gradient, l_hpf_selected, l_mse, l_ssim, l_tv, phase_step, GradientForm, LossComponents,
    LossTerm, LossWeights, Phase, PhaseConfig, PhaseState, SsimConfig,
};
use crate::mbi::mbi_estimate;
use crate::rng::{child_seed, rng, stream_seed};
use crate::sampling::{geometric_downsample, high_freq_select, superpixels, FreqSelection};

use super::augment::{AugmentConfig, TrainingPool};
use super::discriminator::{Discriminator, DiscriminatorConfig};
use super::generator::{Generator, GeneratorCache, GeneratorConfig};
use super::param::{Adam, AdamConfig, ParamSet};
use super::tensor::{sigmoid, softplus, Tensor4};

/// What the discriminator sees next to the map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Conditioning {
    /// Urban map and transmitter plane.
    #[default]
    Features,
    /// Constant real/fake one-hot planes.
    LiteralOneHot,
}

/// Per-region auxiliary targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrepConfig {
    /// Superpixel count; `None` means `H W / 64`.
    pub n_segments: Option<usize>,
    /// Selected frequency count; `None` means `H W / 16`.
    pub n_freq: Option<usize>,
    pub compactness: f64,
    pub slic_iters: usize,
    /// Add a fourth generator input plane marking observed cells.
    pub mask_channel: bool,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self { n_segments: None, n_freq: None, compactness: 0.1, slic_iters: 10, mask_channel: false }
    }
}

/// A region with everything the trainer needs precomputed.
#[derive(Debug, Clone)]
pub struct PreparedRegion {
    pub index: usize,
    pub input: EncodedInput,
    pub target: Grid,
    /// Pathloss-model template.
    pub template: Grid,
    pub samples_down: SparseSamples,
    pub freq: FreqSelection,
    /// Urban map and transmitter plane, stacked.
    pub features: Vec<f64>,
}

pub fn prepare_region(region: &RegionFeatures, index: usize, cfg: &PrepConfig) -> Result<PreparedRegion> {
    let target = region
        .ground_truth
        .clone()
        .ok_or_else(|| Error::InvalidInput(format!("region {index} has no ground truth")))?;
    if region.samples.is_empty() {
        return Err(Error::InvalidInput(format!("region {index} has no observations")));
    }
    let (h, w) = region.dims();
    let template = match mbi_estimate(&region.samples, &region.transmitters, h, w) {
        Ok(t) => t,
        Err(e) => {
            log::warn!("region {index}: pathloss template unavailable ({e}); using the observation mean");
            let x = region.samples.psd();
            Grid::filled(h, w, x.iter().sum::<f64>() / x.len() as f64)
        }
    };
    let n_s = cfg.n_segments.unwrap_or((h * w / 64).max(1));
    let labels = superpixels(&template, n_s, cfg.compactness, cfg.slic_iters)?;
    let samples_down = geometric_downsample(&region.samples, &labels)?;
    let freq = high_freq_select(&target, cfg.n_freq.unwrap_or((h * w / 16).max(1)))?;
    let input = encode(region, cfg)?;
    let mut features = input.channel(EncodedInput::URBAN).to_vec();
    features.extend_from_slice(input.channel(EncodedInput::TRANSMITTERS));
    Ok(PreparedRegion { index, input, target, template, samples_down, freq, features })
}

fn encode(region: &RegionFeatures, cfg: &PrepConfig) -> Result<EncodedInput> {
    if cfg.mask_channel {
        encode_input_with_mask(region)
    } else {
        encode_input(region)
    }
}

/// Stacks encoded regions into a generator input batch.
pub fn input_tensor(inputs: &[&EncodedInput]) -> Result<Tensor4> {
    let first = inputs.first().ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
    let (c, h, w) = (first.channels(), first.height(), first.width());
    let mut data = Vec::with_capacity(inputs.len() * c * h * w);
    for e in inputs {
        if (e.height(), e.width()) != (h, w) {
            return Err(Error::dims((h, w), (e.height(), e.width())));
        }
        if e.channels() != c {
            return Err(Error::InvalidInput(format!("mixed input channel counts {c} and {}", e.channels())));
        }
        data.extend_from_slice(e.data());
    }
    Tensor4::from_vec(inputs.len(), c, h, w, data)
}

/// Learning-rate schedule over the epoch budget.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from the base rate down to `final_fraction` of it.
    Cosine { final_fraction: f64 },
}

impl LrSchedule {
    pub fn factor(&self, epoch: usize, epochs: usize) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine { final_fraction } => {
                let t = if epochs > 1 { epoch as f64 / (epochs - 1) as f64 } else { 0.0 };
                final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * t.min(1.0)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub phase1: LossWeights,
    pub phase2: LossWeights,
    pub tau: f64,
    pub patience: usize,
    /// `None` means half of `epochs`.
    pub max_phase1_epochs: Option<usize>,
    pub conditioning: Conditioning,
    /// Use `-log D(G)` for the generator instead of `log(1 - D(G))`.
    pub non_saturating: bool,
    pub gradient_form: GradientForm,
    pub ssim: SsimConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub prep: PrepConfig,
    pub augment: AugmentConfig,
    /// After the last epoch, put back the generator weights with the lowest
    /// validation NMSE.
    pub restore_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 4,
            adam: AdamConfig::default(),
            lr_schedule: LrSchedule::Constant,
            seed: 0,
            phase1: LossWeights::phase1_default(),
            phase2: LossWeights::phase2_default(),
            tau: 0.01,
            patience: 5,
            max_phase1_epochs: None,
            conditioning: Conditioning::Features,
            non_saturating: false,
            gradient_form: GradientForm::Dissimilarity,
            ssim: SsimConfig::default(),
            generator: GeneratorConfig::reduced(3, 16),
            discriminator: DiscriminatorConfig::default(),
            prep: PrepConfig::default(),
            augment: AugmentConfig::default(),
            restore_best: true,
        }
    }
}

impl TrainConfig {
    /// Preset for small grids with few training regions: a narrow generator,
    /// single-item batches, augmentation, and a strong sample-consistency
    /// term in phase two.
    pub fn toy(seed: u64) -> Self {
        let mut c = Self {
            batch_size: 1,
            seed,
            generator: GeneratorConfig::reduced(3, 8),
            augment: AugmentConfig { dihedral: true, draws: 8, copies: 4 },
            ..Self::default()
        };
        c.adam.lr = 1e-3;
        c.lr_schedule = LrSchedule::Cosine { final_fraction: 0.05 };
        c.phase1.adversarial = 0.01;
        c.phase1.gradient = 0.0;
        c.phase2.adversarial = 0.01;
        c.phase2.mse = 10.0;
        c.phase2.geo = 3.0;
        c
    }

    pub fn phase_config(&self) -> PhaseConfig {
        let mut p = PhaseConfig::for_budget(self.epochs);
        p.tau = self.tau;
        p.patience = self.patience;
        if let Some(m) = self.max_phase1_epochs {
            p.max_phase1_epochs = m;
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Parameter("epochs and batch_size must be positive".into()));
        }
        self.phase1.validate()?;
        self.phase2.validate()?;
        self.augment.validate()?;
        let channels = if self.prep.mask_channel { 4 } else { 3 };
        if self.generator.input_channels != channels {
            return Err(Error::Parameter(format!(
                "generator takes {} input planes but the encoding produces {channels}",
                self.generator.input_channels
            )));
        }
        if let LrSchedule::Cosine { final_fraction } = self.lr_schedule {
            if !(0.0..=1.0).contains(&final_fraction) {
                return Err(Error::Parameter(format!("cosine final fraction {final_fraction} outside [0, 1]")));
            }
        }
        self.phase_config().validate()
    }

    fn weights(&self, phase: Phase) -> &LossWeights {
        match phase {
            Phase::One => &self.phase1,
            Phase::Two => &self.phase2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 0-based epoch index.
    pub epoch: usize,
    /// Phase used while training this epoch.
    pub phase: Phase,
    pub d_loss: f64,
    pub g_loss: f64,
    /// Validation NMSE after the epoch.
    pub val_nmse: f64,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub g_opt: Adam,
    pub d_opt: Adam,
    pub phase: PhaseState,
    pub history: Vec<EpochRecord>,
    /// Generator weights of the best validation epoch so far.
    pub best: Option<BestGenerator>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestGenerator {
    pub epoch: usize,
    pub val_nmse: f64,
    pub params: ParamSet,
}

fn non_finite(epoch: usize, step: usize, what: &str) -> Error {
    Error::NonFinite { epoch, step, what: what.into() }
}

fn all_finite(grads: &[Vec<f64>]) -> bool {
    grads.iter().all(|g| g.iter().all(|v| v.is_finite()))
}

impl Trainer {
    pub fn new(config: TrainConfig, height: usize, width: usize) -> Result<Self> {
        config.validate()?;
        if config.phase2.ssim > 0.0 && height.min(width) < config.ssim.min_size() {
            return Err(Error::Parameter(format!(
                "{height}x{width} maps are too small for {} MS-SSIM levels",
                config.ssim.levels
            )));
        }
        let generator = Generator::new(config.generator.clone(), height, width, stream_seed(config.seed, "generator"))?;
        let discriminator = Discriminator::new(config.discriminator.clone(), stream_seed(config.seed, "discriminator"))?;
        let g_opt = Adam::new(config.adam, &generator.params);
        let d_opt = Adam::new(config.adam, &discriminator.params);
        let phase = PhaseState::new(config.phase_config())?;
        Ok(Self { config, generator, discriminator, g_opt, d_opt, phase, history: Vec::new(), best: None })
    }

    pub fn phase2_onset(&self) -> Option<usize> {
        self.phase.onset
    }

    fn condition(&self, batch: &[&PreparedRegion], real: bool) -> Result<Tensor4> {
        let t = &batch[0].target;
        let (h, w) = t.dims();
        let mut data = Vec::with_capacity(batch.len() * 2 * h * w);
        for r in batch {
            match self.config.conditioning {
                Conditioning::Features => data.extend_from_slice(&r.features),
                Conditioning::LiteralOneHot => {
                    let (a, b) = if real { (1.0, 0.0) } else { (0.0, 1.0) };
                    data.extend(core::iter::repeat_n(a, h * w));
                    data.extend(core::iter::repeat_n(b, h * w));
                }
            }
        }
        Tensor4::from_vec(batch.len(), 2, h, w, data)
    }

    /// One discriminator update on real maps against `fake`. Returns `L_D`
    /// before the update.
    pub fn train_step_d(&mut self, batch: &[&PreparedRegion], fake: &Tensor4) -> Result<f64> {
        let n = batch.len();
        let targets: Vec<&Grid> = batch.iter().map(|r| &r.target).collect();
        let real = Tensor4::from_grids(&targets)?;
        let maps = super::tensor::concat_batch(&real, fake)?;
        let cond = super::tensor::concat_batch(&self.condition(batch, true)?, &self.condition(batch, false)?)?;
        let cache = self.discriminator.forward(&maps, &cond)?;
        let z = &cache.logits;
        let mut loss = 0.0;
        let mut g = vec![0.0; 2 * n];
        for i in 0..n {
            loss += softplus(-z[i]) + softplus(z[n + i]);
            g[i] = (sigmoid(z[i]) - 1.0) / n as f64;
            g[n + i] = sigmoid(z[n + i]) / n as f64;
        }
        let (grads, _) = self.discriminator.backward(&cache, &g);
        let loss = loss / n as f64;
        if !loss.is_finite() || !all_finite(&grads) {
            return Err(non_finite(self.phase.epoch, 0, "discriminator loss or gradient"));
        }
        self.d_opt.apply(&mut self.discriminator.params, &grads);
        Ok(loss)
    }

    /// Per-item generator losses and their gradients with respect to the
    /// generator output, without updating anything.
    pub fn generator_objective(
        &self,
        batch: &[&PreparedRegion],
        output: &Tensor4,
        phase: Phase,
    ) -> Result<(f64, Tensor4)> {
        let n = batch.len();
        let weights = *self.config.weights(phase);
        let (h, w) = (output.h, output.w);
        let adversarial = if weights.adversarial > 0.0 {
            let cond = self.condition(batch, false)?;
            let cache = self.discriminator.forward(output, &cond)?;
            let mut values = Vec::with_capacity(n);
            let mut g = Vec::with_capacity(n);
            for &z in &cache.logits {
                if self.config.non_saturating {
                    values.push(softplus(-z));
                    g.push(sigmoid(z) - 1.0);
                } else {
                    values.push(-softplus(z));
                    g.push(-sigmoid(z));
                }
            }
            let (_, g_map) = self.discriminator.backward(&cache, &g);
            Some((values, g_map))
        } else {
            None
        };
        let mut total = 0.0;
        let mut grad = Tensor4::zeros(n, 1, h, w);
        for (i, r) in batch.iter().enumerate() {
            let est = output.channel_grid(i, 0);
            let on = |x: f64| x > 0.0;
            let mut c = LossComponents::default();
            if let Some((v, g)) = &adversarial {
                c.adversarial = Some(LossTerm { value: v[i], grad: g.channel_grid(i, 0) });
            }
            if on(weights.mse) {
                c.mse = Some(l_mse(&est, &r.target)?);
            }
            if on(weights.tv) {
                c.tv = Some(l_tv(&est));
            }
            match phase {
                Phase::One => {
                    if on(weights.gradient) {
                        c.gradient = Some(l_gradient(&est, &r.template, self.config.gradient_form)?);
                    }
                }
                Phase::Two => {
                    if on(weights.ssim) {
                        c.ssim = Some(l_ssim(&est, &r.target, &self.config.ssim)?);
                    }
                    if on(weights.geo) {
                        c.geo = Some(l_geo(&est, &r.samples_down)?);
                    }
                    if on(weights.hpf) {
                        c.hpf = Some(l_hpf_selected(&est, &r.freq)?);
                    }
                }
            }
            let term = combine_loss(phase, &weights, &c, (h, w))?;
            total += term.value;
            grad.item_mut(i)
                .iter_mut()
                .zip(term.grad.values())
                .for_each(|(a, b)| *a = b / n as f64);
        }
        Ok((total / n as f64, grad))
    }

    /// One generator update from a cached forward pass. Returns `L_G'`
    /// before the update.
    pub fn train_step_g(&mut self, batch: &[&PreparedRegion], cache: &GeneratorCache, phase: Phase) -> Result<f64> {
        let (loss, g_out) = self.generator_objective(batch, cache.output(), phase)?;
        let (grads, _) = self.generator.backward(cache, &g_out);
        if !loss.is_finite() || !all_finite(&grads) {
            return Err(non_finite(self.phase.epoch, 0, "generator loss or gradient"));
        }
        self.g_opt.apply(&mut self.generator.params, &grads);
        Ok(loss)
    }

    pub fn predict_batch(&self, batch: &[&PreparedRegion]) -> Result<Tensor4> {
        let inputs: Vec<&EncodedInput> = batch.iter().map(|r| &r.input).collect();
        self.generator.predict(&input_tensor(&inputs)?)
    }

    /// Estimate for an arbitrary observed region.
    pub fn estimate(&self, region: &RegionFeatures) -> Result<Grid> {
        let enc = encode(region, &self.config.prep)?;
        Ok(self.generator.predict(&input_tensor(&[&enc])?)?.channel_grid(0, 0))
    }

    /// Mean NMSE of the current generator over `regions`.
    pub fn mean_nmse(&self, regions: &[PreparedRegion]) -> Result<f64> {
        if regions.is_empty() {
            return Err(Error::InvalidInput("no regions to validate on".into()));
        }
        let mut sum = 0.0;
        for chunk in regions.chunks(self.config.batch_size.max(1)) {
            let refs: Vec<&PreparedRegion> = chunk.iter().collect();
            let out = self.predict_batch(&refs)?;
            for (i, r) in chunk.iter().enumerate() {
                sum += nmse(&r.target, &out.channel_grid(i, 0))?;
            }
        }
        Ok(sum / regions.len() as f64)
    }

    /// Trains one epoch, validates and advances the phase controller.
    pub fn run_epoch(&mut self, train: &[PreparedRegion], val: &[PreparedRegion]) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::InvalidInput("no training regions".into()));
        }
        let epoch = self.history.len();
        let phase = self.phase.phase;
        let lr = self.config.adam.lr * self.config.lr_schedule.factor(epoch, self.config.epochs);
        self.g_opt.config.lr = lr;
        self.d_opt.config.lr = lr;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng(child_seed(stream_seed(self.config.seed, "shuffle"), epoch as u64)));
        let (mut d_sum, mut g_sum, mut steps) = (0.0, 0.0, 0usize);
        for (step, idx) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&PreparedRegion> = idx.iter().map(|&i| &train[i]).collect();
            let inputs: Vec<&EncodedInput> = batch.iter().map(|r| &r.input).collect();
            let cache = self.generator.forward(&input_tensor(&inputs)?)?;
            if !cache.output().is_finite() {
                return Err(non_finite(epoch, step, "generator output"));
            }
            let d = self.train_step_d(&batch, cache.output()).map_err(|e| restep(e, epoch, step))?;
            let g = self.train_step_g(&batch, &cache, phase).map_err(|e| restep(e, epoch, step))?;
            d_sum += d;
            g_sum += g;
            steps += 1;
        }
        let val_nmse = self.mean_nmse(val)?;
        if !val_nmse.is_finite() {
            return Err(non_finite(epoch, steps, "validation NMSE"));
        }
        self.phase = phase_step(self.phase.clone(), val_nmse);
        let rec = EpochRecord {
            epoch,
            phase,
            d_loss: d_sum / steps as f64,
            g_loss: g_sum / steps as f64,
            val_nmse,
        };
        self.history.push(rec);
        if self.config.restore_best {
            if self.best.as_ref().is_none_or(|b| val_nmse < b.val_nmse) {
                self.best = Some(BestGenerator { epoch, val_nmse, params: self.generator.params.clone() });
            }
            if self.history.len() == self.config.epochs {
                let best = self.best.as_ref().expect("set above");
                log::info!("restoring generator weights of epoch {} (val NMSE {:.5})", best.epoch, best.val_nmse);
                self.generator.params = best.params.clone();
            }
        }
        Ok(rec)
    }
}

impl Trainer {
    /// Runs one epoch over `augment.copies` random variants of every pool
    /// region.
    pub fn run_epoch_pool(&mut self, pool: &TrainingPool, val: &[PreparedRegion]) -> Result<EpochRecord> {
        let epoch = self.history.len();
        let train = pool.draw(self.config.augment.copies, self.config.seed, epoch);
        self.run_epoch(&train, val)
    }
}

fn restep(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFinite { what, .. } => Error::NonFinite { epoch, step, what },
        other => other,
    }
}

/// Runs the remaining epochs of `trainer`, calling `on_epoch` after each.
pub fn train_with(
    trainer: &mut Trainer,
    pool: &TrainingPool,
    val: &[PreparedRegion],
    mut on_epoch: impl FnMut(&Trainer, &EpochRecord) -> Result<()>,
) -> Result<()> {
    while trainer.history.len() < trainer.config.epochs {
        let rec = trainer.run_epoch_pool(pool, val)?;
        log::info!(
            "epoch {} phase {} L_D {:.5} L_G' {:.5} val NMSE {:.5}",
            rec.epoch,
            rec.phase.number(),
            rec.d_loss,
            rec.g_loss,
            rec.val_nmse
        );
        on_epoch(trainer, &rec)?;
    }
    Ok(())
}

/// Builds a trainer for the pool's grid size and trains it for the
/// configured number of epochs.
pub fn train_pool(pool: &TrainingPool, val: &[PreparedRegion], config: TrainConfig) -> Result<Trainer> {
    if pool.is_empty() {
        return Err(Error::InvalidInput("no training regions".into()));
    }
    let (h, w) = pool.variants(0)[0].target.dims();
    let mut trainer = Trainer::new(config, h, w)?;
    train_with(&mut trainer, pool, val, |_, _| Ok(()))?;
    Ok(trainer)
}

/// [`train_pool`] without augmentation.
pub fn train(train: &[PreparedRegion], val: &[PreparedRegion], config: TrainConfig) -> Result<Trainer> {
    train_pool(&TrainingPool::fixed(train.to_vec()), val, config)
}
