//! The adversarial training loop: per-scan minibatches, one discriminator
//! and one generator Adam step per iteration, optional style mixing and
//! largeEBS selection, per-epoch checkpoints and FID, plus model selection
//! and the significance test used to compare methods.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lunggan_tensor::{Adam, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::checkpoint::save_checkpoint;
use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::evaluation::sources::{GeneratorSource, ScanSource};
use crate::evaluation::{compute_fid, ConvStackExtractor, InputRank};
use crate::generators::ADAIN_SITES;
use crate::generators::{Family, Generator, GeneratorConfig, LatentMix};
use crate::losses::{self, LossKind, ScoreBatch};
use crate::minibatch_tools::{largeebs_select, sample_latents, LargeEbsConfig};
use crate::nn::{apply_updates, Mode, Pass};
use crate::patch_pipeline::{epoch_plan, CtVolume, PatchSampler, MINIBATCHES_PER_SCAN};

/// Loss traces keep one sample per this many iterations.
pub const TRACE_INTERVAL: usize = 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidEvalConfig {
    /// Real and fake samples per evaluation; 0 disables per-epoch FID.
    pub samples: usize,
    /// `random-conv:<seed>` or a weight file for a 2D extractor.
    pub extractor: String,
}

impl Default for FidEvalConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            extractor: "random-conv:0".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub loss: LossKind,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patches_per_scan: usize,
    /// Per-sample probability of mixing two styles (style-based family).
    pub style_mixing_probability: f64,
    pub large_ebs: Option<LargeEbsConfig>,
    pub fid: FidEvalConfig,
    pub seed: u64,
}

impl TrainConfig {
    /// The published settings for `family`, with or without MDmin and
    /// largeEBS.
    pub fn new(family: Family, use_mdmin: bool, use_large_ebs: bool, seed: u64) -> Self {
        let batch_size = 48;
        Self {
            generator: GeneratorConfig::new(family, 1.0, seed),
            discriminator: DiscriminatorConfig {
                use_mdmin,
                width_multiplier: 1.0,
                seed: seed.wrapping_add(1),
            },
            loss: LossKind::Relativistic,
            learning_rate: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            epochs: 20,
            batch_size,
            patches_per_scan: batch_size * MINIBATCHES_PER_SCAN,
            style_mixing_probability: 0.9,
            large_ebs: use_large_ebs.then(|| LargeEbsConfig::for_batch(batch_size)),
            fid: FidEvalConfig::default(),
            seed,
        }
    }

    /// Shrinks both networks and the batch (keeping the per-scan invariant
    /// and the largeEBS ratios).
    pub fn scaled(mut self, width_multiplier: f64, batch_size: usize) -> Self {
        self.generator.width_multiplier = width_multiplier;
        self.discriminator.width_multiplier = width_multiplier;
        self.batch_size = batch_size;
        self.patches_per_scan = batch_size * MINIBATCHES_PER_SCAN;
        if let Some(l) = &mut self.large_ebs {
            let warmup = l.warmup_epochs;
            *l = LargeEbsConfig::for_batch(batch_size);
            l.warmup_epochs = warmup;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be positive, got {v}")))
            }
        };
        positive("training.learning_rate", self.learning_rate)?;
        for (key, b) in [("training.adam_beta1", self.adam_beta1), ("training.adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(key, format!("must lie in [0, 1), got {b}")));
            }
        }
        if self.epochs == 0 {
            return Err(Error::config("training.epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("training.batch_size", "must be at least 1"));
        }
        if self.discriminator.use_mdmin && self.batch_size < 2 {
            return Err(Error::config("training.batch_size", "MDmin needs batches of at least 2"));
        }
        if self.batch_size * MINIBATCHES_PER_SCAN != self.patches_per_scan {
            return Err(Error::config(
                "training.patches_per_scan",
                format!(
                    "must equal batch_size × {MINIBATCHES_PER_SCAN} = {}, got {}",
                    self.batch_size * MINIBATCHES_PER_SCAN,
                    self.patches_per_scan
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.style_mixing_probability) {
            return Err(Error::config(
                "training.style_mixing_probability",
                format!("must lie in [0, 1], got {}", self.style_mixing_probability),
            ));
        }
        if let Some(l) = &self.large_ebs {
            l.validate()?;
            if l.keep != self.batch_size {
                return Err(Error::config(
                    "largeebs.keep",
                    format!("must equal the batch size {}, got {}", self.batch_size, l.keep),
                ));
            }
        }
        if self.fid.samples == 1 {
            return Err(Error::config("fid.samples", "need at least 2 samples (or 0 to disable)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSample {
    pub iteration: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub fid: Option<f64>,
    pub d_loss: f64,
    pub g_loss: f64,
    pub checkpoint: Option<PathBuf>,
    pub seconds: f64,
}

/// Everything a finished run produced.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub seed: u64,
    pub iterations: usize,
    pub epochs: Vec<EpochRecord>,
    pub loss_trace: Vec<LossSample>,
    /// Selection passes per iteration (0 before warmup ends, 2 after).
    pub selections: Vec<u8>,
    pub wall_seconds: f64,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl TrainedRun {
    pub fn fid_series(&self) -> RunFids {
        RunFids {
            label: format!("seed-{}", self.seed),
            fids: self.epochs.iter().map(|e| e.fid).collect(),
            checkpoints: self.epochs.iter().map(|e| e.checkpoint.clone()).collect(),
        }
    }
}

/// Per-epoch FIDs of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunFids {
    pub label: String,
    pub fids: Vec<Option<f64>>,
    pub checkpoints: Vec<Option<PathBuf>>,
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    gen: Generator,
    disc: Discriminator,
    g_opt: Adam,
    d_opt: Adam,
    rng: ChaCha8Rng,
}

struct StepOutcome {
    d_loss: f64,
    g_loss: f64,
    selections: u8,
}

fn snapshot(iteration: usize, scores: &ScoreBatch, d_norm: f64, g_norm: f64) -> Error {
    Error::Diverged(format!(
        "non-finite loss at iteration {iteration}: real scores {:?}, fake scores {:?}, \
         last D grad norm {d_norm:.4e}, last G grad norm {g_norm:.4e}",
        scores.real, scores.fake
    ))
}

fn grad_norm(grads: &[Option<Tensor>]) -> f64 {
    grads
        .iter()
        .flatten()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

fn scores_of(v: Var<'_>) -> Vec<f64> {
    v.value().data().to_vec()
}

impl Trainer<'_> {
    /// Latents for one fake minibatch, through a selection pass when
    /// largeEBS is active.
    fn fake_latents(&mut self, selecting: bool) -> Result<Tensor> {
        match (&self.config.large_ebs, selecting) {
            (Some(cfg), true) => Ok(largeebs_select(&self.gen, &self.disc, cfg, &mut self.rng)?.latents),
            _ => Ok(sample_latents(self.config.batch_size, &mut self.rng)),
        }
    }

    fn step(&mut self, iteration: usize, real_d: Tensor, real_g: Tensor, selecting: bool) -> Result<StepOutcome> {
        let b = self.config.batch_size;
        let mut selections = 0;

        // Discriminator update against a generator without gradients.
        let z = self.fake_latents(selecting)?;
        selections += u8::from(selecting);
        let (d_eval, d_grads, g_updates, d_updates, scores) = {
            let tape = Tape::new();
            let gp = Pass::new(&tape, self.gen.store(), false, Mode::Train);
            let fake = self.gen.forward(&gp, tape.constant(z), None);
            let fake = tape.constant((*fake.value()).clone());
            let dp = Pass::new(&tape, self.disc.store(), true, Mode::Train);
            let real_out = self.disc.forward(&dp, tape.constant(real_d))?;
            let fake_out = self.disc.forward(&dp, fake)?;
            let scores = ScoreBatch::new(scores_of(real_out), scores_of(fake_out));
            let eval = match losses::evaluate(self.config.loss, &scores) {
                Ok(e) if e.d_loss.is_finite() => e,
                _ => return Err(snapshot(iteration, &scores, f64::NAN, f64::NAN)),
            };
            let mut grads = tape.backward(&[
                (real_out, Tensor::new(&[b], eval.d_grad.real.clone())),
                (fake_out, Tensor::new(&[b], eval.d_grad.fake.clone())),
            ]);
            let d_grads = dp.bound().grads(&mut grads);
            (eval, d_grads, gp.into_updates(), dp.into_updates(), scores)
        };
        let d_norm = grad_norm(&d_grads);
        if !d_norm.is_finite() {
            return Err(snapshot(iteration, &scores, d_norm, f64::NAN));
        }
        self.d_opt.step(self.disc.store_mut(), &d_grads);
        apply_updates(self.disc.store_mut(), d_updates);
        apply_updates(self.gen.store_mut(), g_updates);

        // Generator update on a fresh fake batch and a fresh real batch.
        let z = self.fake_latents(selecting)?;
        selections += u8::from(selecting);
        let mixing = self.gen.family() == Family::Stylegan3d && self.config.style_mixing_probability > 0.0;
        let (second, depths) = if mixing {
            let second = sample_latents(b, &mut self.rng);
            let depths: Vec<usize> = (0..b)
                .map(|_| {
                    if self.rng.random::<f64>() < self.config.style_mixing_probability {
                        self.rng.random_range(1..ADAIN_SITES)
                    } else {
                        ADAIN_SITES
                    }
                })
                .collect();
            (Some(second), depths)
        } else {
            (None, Vec::new())
        };
        let (g_eval, g_grads, g_updates, scores) = {
            let tape = Tape::new();
            let gp = Pass::new(&tape, self.gen.store(), true, Mode::Train);
            let mix = second.map(|s| LatentMix {
                second: tape.constant(s),
                depths: &depths,
            });
            let fake = self.gen.forward(&gp, tape.constant(z), mix);
            let dp = Pass::new(&tape, self.disc.store(), false, Mode::Frozen);
            let real_scores = self.disc.discriminate(&real_g)?;
            let fake_out = self.disc.forward(&dp, fake)?;
            let scores = ScoreBatch::new(real_scores, scores_of(fake_out));
            let eval = match losses::evaluate(self.config.loss, &scores) {
                Ok(e) if e.g_loss.is_finite() => e,
                _ => return Err(snapshot(iteration, &scores, d_norm, f64::NAN)),
            };
            let mut grads = tape.backward(&[(fake_out, Tensor::new(&[b], eval.g_grad.fake.clone()))]);
            let g_grads = gp.bound().grads(&mut grads);
            (eval, g_grads, gp.into_updates(), scores)
        };
        let g_norm = grad_norm(&g_grads);
        if !g_norm.is_finite() {
            return Err(snapshot(iteration, &scores, d_norm, g_norm));
        }
        self.g_opt.step(self.gen.store_mut(), &g_grads);
        apply_updates(self.gen.store_mut(), g_updates);

        Ok(StepOutcome {
            d_loss: d_eval.d_loss,
            g_loss: g_eval.g_loss,
            selections,
        })
    }
}

/// FID of `gen` against real patches from `dataset`.
pub fn evaluate_fid(gen: &Generator, dataset: &[CtVolume], fid: &FidEvalConfig, seed: u64) -> Result<f64> {
    let extractor = ConvStackExtractor::resolve(&fid.extractor, InputRank::Slice2d)?;
    let mut real = ScanSource::new(dataset, ChaCha8Rng::seed_from_u64(seed))?;
    let mut fake = GeneratorSource::new(gen, ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    Ok(compute_fid(&mut real, &mut fake, &extractor, fid.samples)?.value)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Runs the full schedule. With `run_dir`, writes the config snapshot,
/// seed file, per-epoch checkpoints and `metrics.csv` there. `on_epoch`
/// sees each epoch record as it completes.
pub fn train(
    config: &TrainConfig,
    dataset: &[CtVolume],
    run_dir: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainedRun> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Argument("training needs at least one scan".into()));
    }
    if let Some(dir) = run_dir {
        fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(config).map_err(|e| Error::format("config", e.to_string()))?;
        write_file(&dir.join("config.json"), &json)?;
        write_file(&dir.join("seed.txt"), &format!("{}\n", config.seed))?;
    }
    let started = Instant::now();
    let samplers = dataset.iter().map(PatchSampler::new).collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = dataset.iter().map(|v| v.scan_id.clone()).collect();
    let mut t = Trainer {
        config,
        gen: Generator::new(config.generator.clone())?,
        disc: Discriminator::new(config.discriminator.clone())?,
        g_opt: Adam::new(config.learning_rate, config.adam_beta1, config.adam_beta2),
        d_opt: Adam::new(config.learning_rate, config.adam_beta1, config.adam_beta2),
        rng: ChaCha8Rng::seed_from_u64(config.seed),
    };
    let b = config.batch_size;
    let mut iteration = 0;
    let mut epochs = Vec::new();
    let mut loss_trace = Vec::new();
    let mut selections = Vec::new();
    let mut metrics = String::from("epoch,fid,d_loss,g_loss\n");

    for epoch in 0..config.epochs {
        let epoch_start = Instant::now();
        let selecting = config.large_ebs.as_ref().is_some_and(|l| epoch >= l.warmup_epochs);
        let plan = epoch_plan(&ids, MINIBATCHES_PER_SCAN, &mut t.rng);
        let (mut d_sum, mut g_sum) = (0.0, 0.0);
        let mut pool: Option<Tensor> = None;
        for (scan, minibatch) in &plan {
            let s = ids.iter().position(|i| i == scan).expect("plan lists known scans");
            if *minibatch == 0 {
                pool = Some(samplers[s].sample(config.patches_per_scan, &mut t.rng)?.patches);
            }
            let idx: Vec<usize> = (minibatch * b..(minibatch + 1) * b).collect();
            let real_d = pool.as_ref().expect("pool filled at scan start").select(&idx);
            let real_g = samplers[s].sample(b, &mut t.rng)?.patches;
            let out = t.step(iteration, real_d, real_g, selecting)?;
            d_sum += out.d_loss;
            g_sum += out.g_loss;
            selections.push(out.selections);
            if iteration % TRACE_INTERVAL == 0 {
                loss_trace.push(LossSample {
                    iteration,
                    d_loss: out.d_loss,
                    g_loss: out.g_loss,
                });
            }
            iteration += 1;
        }
        let checkpoint = match run_dir {
            Some(dir) => {
                let p = dir.join("checkpoints").join(format!("epoch_{:03}.ckpt", epoch + 1));
                save_checkpoint(&p, &t.gen, Some(&t.disc), Some(epoch + 1))?;
                Some(p)
            }
            None => None,
        };
        let fid = if config.fid.samples > 0 {
            Some(evaluate_fid(&t.gen, dataset, &config.fid, config.seed.wrapping_add(epoch as u64))?)
        } else {
            None
        };
        let n = plan.len().max(1) as f64;
        let record = EpochRecord {
            epoch: epoch + 1,
            fid,
            d_loss: d_sum / n,
            g_loss: g_sum / n,
            checkpoint,
            seconds: epoch_start.elapsed().as_secs_f64(),
        };
        metrics.push_str(&format!(
            "{},{},{},{}\n",
            record.epoch,
            record.fid.map(|f| f.to_string()).unwrap_or_default(),
            record.d_loss,
            record.g_loss
        ));
        if let Some(dir) = run_dir {
            write_file(&dir.join("metrics.csv"), &metrics)?;
        }
        on_epoch(&record);
        epochs.push(record);
    }
    Ok(TrainedRun {
        seed: config.seed,
        iterations: iteration,
        epochs,
        loss_trace,
        selections,
        wall_seconds: started.elapsed().as_secs_f64(),
        generator: t.gen,
        discriminator: t.disc,
    })
}

/// Reads the FID column of a run directory's `metrics.csv`.
pub fn read_run_fids(run_dir: &Path) -> Result<RunFids> {
    let path = run_dir.join("metrics.csv");
    let mut r = csv::Reader::from_path(&path).map_err(|e| Error::format("metrics csv", format!("{}: {e}", path.display())))?;
    let mut fids = Vec::new();
    let mut checkpoints = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::format("metrics csv", e.to_string()))?;
        let epoch: usize = rec
            .get(0)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format("metrics csv", format!("bad epoch in {rec:?}")))?;
        let fid = match rec.get(1).map(str::trim) {
            None | Some("") => None,
            Some(v) => Some(v.parse().map_err(|_| Error::format("metrics csv", format!("bad fid {v:?}")))?),
        };
        fids.push(fid);
        let ckpt = run_dir.join("checkpoints").join(format!("epoch_{epoch:03}.ckpt"));
        checkpoints.push(ckpt.exists().then_some(ckpt));
    }
    Ok(RunFids {
        label: run_dir.display().to_string(),
        fids,
        checkpoints,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestModel {
    pub run: usize,
    /// 1-based.
    pub epoch: usize,
    pub fid: f64,
    pub checkpoint: Option<PathBuf>,
    /// Minimum FID of each run, in run order.
    pub per_run_minima: Vec<f64>,
}

/// Global FID argmin over (run, epoch); ties go to the earliest run, then
/// the earliest epoch.
pub fn select_best_model(runs: &[RunFids]) -> Result<BestModel> {
    if runs.is_empty() {
        return Err(Error::Argument("no runs to select from".into()));
    }
    let mut best: Option<(usize, usize, f64)> = None;
    let mut minima = Vec::with_capacity(runs.len());
    for (r, run) in runs.iter().enumerate() {
        let mut run_min: Option<(usize, f64)> = None;
        for (e, f) in run.fids.iter().enumerate() {
            if let Some(f) = *f {
                if run_min.is_none_or(|(_, m)| f < m) {
                    run_min = Some((e, f));
                }
            }
        }
        let (e, m) = run_min.ok_or_else(|| Error::Argument(format!("run {} has no FID entries", run.label)))?;
        minima.push(m);
        if best.is_none_or(|(_, _, b)| m < b) {
            best = Some((r, e, m));
        }
    }
    let (run, e, fid) = best.expect("at least one run");
    Ok(BestModel {
        run,
        epoch: e + 1,
        fid,
        checkpoint: runs[run].checkpoints.get(e).cloned().flatten(),
        per_run_minima: minima,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Welch's unequal-variance t-test with Welch–Satterthwaite degrees of
/// freedom. Two zero-variance samples give p = 1 when their means agree
/// and p = 0 otherwise.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Argument(format!(
            "Welch test needs at least two values per sample (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite value in Welch test input".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let df = (a.len() + b.len() - 2) as f64;
        return Ok(if ma == mb {
            WelchResult { t: 0.0, df, p: 1.0 }
        } else {
            WelchResult {
                t: (ma - mb).signum() * f64::INFINITY,
                df,
                p: 0.0,
            }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numerical(format!("t distribution: {e}")))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(WelchResult { t, df, p })
}
