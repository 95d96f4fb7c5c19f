use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use crate::baselines::{grappa_calibrate, grappa_reconstruct, raki_reconstruct, raki_train, RakiConfig};
use crate::error::{Error, Result};
use crate::eval::{format_db, write_pgm16, write_timing, ReconReport, SampleScore, Timing};
use crate::expressivity::{System, SystemInput};
use crate::geometry::{
    build_frame_net, frame_report, region_census, FrameNetConfig, FramePooling, FrameReport, PatternSource, Probes,
    RegionCensus, PR_TOLERANCE,
};
use crate::mri::{apply_forward, bootstrap_masks, generate_dataset, to_image, Domain, Sample, SamplingMask};
use crate::net::{build_unet, channels_to_complex, complex_to_channels, load_checkpoint, save_checkpoint, Network, RunOptions};
use crate::tensor::{Features, Seed};
use crate::trainer::{eval_branch_seed, prepare, reconstruct, score, train, EpochMetrics, TrainConfig};

/// Train, validation and test splits drawn from consecutive sample indices.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn make_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let dc = cfg.data_config();
    let d = &cfg.data;
    Ok(Splits {
        train: generate_dataset(&dc, 0, d.n_train)?,
        val: generate_dataset(&dc, d.n_train, d.n_val)?,
        test: generate_dataset(&dc, d.n_train + d.n_val, d.n_test)?,
    })
}

/// Residual U-Net wrapped in the scheme of `method`.
pub fn build_system(cfg: &ExperimentConfig, method: Method) -> Result<System> {
    let n = &cfg.network;
    let spec = build_unet(n.stages, n.base_channels, cfg.data.n_coils, cfg.unet_options())?;
    System::new(Network::new(spec)?, cfg.scheme_config(method)?)
}

#[derive(Serialize, Deserialize)]
struct TrainedManifest {
    config: TrainConfig,
    steps: usize,
    diverged: bool,
    final_loss: Option<f64>,
}

/// Checkpoint of the base network plus head parameters, and `training.json`
/// with the training configuration.
pub fn save_trained(dir: &Path, system: &System, params: &[f64], config: &TrainConfig, log: Option<(&[EpochMetrics], usize, bool)>) -> Result<()> {
    let extra = match system.head_len() {
        0 => Vec::new(),
        n => vec![("head".to_string(), n)],
    };
    save_checkpoint(dir, &system.net.spec, params, &extra)?;
    let (steps, diverged, final_loss) = match log {
        Some((log, steps, diverged)) => (steps, diverged, log.last().map(|m| m.train_loss)),
        None => (0, false, None),
    };
    let manifest = TrainedManifest {
        config: config.clone(),
        steps,
        diverged,
        final_loss,
    };
    std::fs::write(dir.join("training.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_trained(dir: &Path) -> Result<(System, Vec<f64>, TrainConfig)> {
    let (spec, values, _) = load_checkpoint(dir)?;
    let manifest: TrainedManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("training.json"))?)?;
    let system = System::new(Network::new(spec)?, manifest.config.scheme)?;
    crate::error::ensure!(
        values.len() == system.n_params(),
        Format,
        "checkpoint holds {} values, the {} system needs {}",
        values.len(),
        manifest.config.scheme.name(),
        system.n_params()
    );
    Ok((system, values, manifest.config))
}

/// Scores of a trained system on `samples`, with bootstrap masks from the
/// evaluation seed. Returns the per-sample scores and SSoS images.
pub fn score_system(
    system: &System,
    params: &[f64],
    config: &TrainConfig,
    samples: &[Sample],
) -> Result<(Vec<SampleScore>, Vec<crate::eval::Image>)> {
    let mut scores = Vec::with_capacity(samples.len());
    let mut images = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let prep = prepare(s, config.domain, config.scheme.kind, config.normalize, eval_branch_seed(config.seed, i))?;
        let (psnr_db, ssim, img) = score(&reconstruct(system, params, &prep, config.domain)?, s)?;
        scores.push(SampleScore {
            sample_id: s.meta.index,
            psnr_db,
            ssim,
        });
        images.push(img);
    }
    Ok((scores, images))
}

/// GRAPPA calibrated on each sample's own ACS block.
pub fn run_grappa(samples: &[Sample], kernel: [usize; 2], ridge: f64) -> Result<(Vec<SampleScore>, Vec<crate::eval::Image>)> {
    score_kspace(samples, |s| {
        let y = s.undersampled()?;
        let k = grappa_calibrate(&y, &s.mask, kernel, ridge)?;
        grappa_reconstruct(&y, &s.mask, &k)
    })
}

/// RAKI trained per sample on its ACS block; sample `i` uses `seed.child(i)`.
pub fn run_raki(samples: &[Sample], epochs: usize, lr: f64, seed: Seed) -> Result<(Vec<SampleScore>, Vec<crate::eval::Image>)> {
    score_kspace(samples, |s| {
        let y = s.undersampled()?;
        let rc = RakiConfig {
            epochs,
            lr,
            seed: seed.child(s.meta.index as u64),
            ..RakiConfig::default()
        };
        let model = raki_train(&y, &s.mask, &rc)?;
        raki_reconstruct(&model, &y, &s.mask)
    })
}

fn score_kspace(
    samples: &[Sample],
    mut recon: impl FnMut(&Sample) -> Result<crate::tensor::ComplexTensor>,
) -> Result<(Vec<SampleScore>, Vec<crate::eval::Image>)> {
    let mut scores = Vec::new();
    let mut images = Vec::new();
    for s in samples {
        let (psnr_db, ssim, img) = score(&to_image(&recon(s)?)?, s)?;
        scores.push(SampleScore {
            sample_id: s.meta.index,
            psnr_db,
            ssim,
        });
        images.push(img);
    }
    Ok((scores, images))
}

/// Fingerprints of a trained system where bootstrap branch inputs are formed
/// by re-masking the probe in k-space.
pub struct MaskedPatterns<'a> {
    pub system: &'a System,
    pub params: &'a [f64],
    pub extents: [usize; 2],
    pub domain: Domain,
    pub masks: Vec<SamplingMask>,
}

impl MaskedPatterns<'_> {
    fn input(&self, z: &Features) -> Result<SystemInput> {
        let branches = if self.masks.is_empty() {
            Vec::new()
        } else {
            let zc = channels_to_complex(z)?;
            let k = match self.domain {
                Domain::Image => crate::mri::to_kspace(&zc)?,
                Domain::Kspace => zc,
            };
            self.masks
                .iter()
                .map(|m| complex_to_channels(&self.domain.from_kspace(&apply_forward(&k, m)?)?))
                .collect::<Result<_>>()?
        };
        Ok(SystemInput { z: z.clone(), branches })
    }

    fn bits(&self, z: &Features) -> Result<Vec<bool>> {
        Ok(self.system.forward(self.params, &self.input(z)?, RunOptions::default())?.pattern())
    }
}

impl PatternSource for MaskedPatterns<'_> {
    fn input_shape(&self) -> [usize; 3] {
        [self.system.channels(), self.extents[0], self.extents[1]]
    }

    fn n_neurons(&self) -> Result<usize> {
        let [c, h, w] = self.input_shape();
        Ok(self.bits(&Features::zeros(c, h, w))?.len())
    }

    fn fingerprint(&self, z: &Features) -> Result<Vec<u64>> {
        let bits = self.bits(z)?;
        let mut words = vec![0u64; bits.len().div_ceil(64)];
        for (i, &b) in bits.iter().enumerate() {
            if b {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        Ok(words)
    }
}

#[derive(Serialize)]
pub struct GeometrySummary {
    pub census: RegionCensus,
    pub within_bound: bool,
}

/// Region census on a plane through the network input of `sample`, spanned
/// by two random unit directions drawn from `seed`, with half-width equal to
/// half the input norm.
pub fn census_through_sample(
    system: &System,
    params: &[f64],
    config: &TrainConfig,
    sample: &Sample,
    seed: Seed,
    resolution: usize,
) -> Result<RegionCensus> {
    let prep = prepare(sample, config.domain, config.scheme.kind, config.normalize, eval_branch_seed(config.seed, 0))?;
    let masks = match config.scheme.kind {
        crate::expressivity::SchemeKind::Bootstrap { n, keep_ratio } => {
            bootstrap_masks(&sample.mask, n, keep_ratio, eval_branch_seed(config.seed, 0))?
        }
        _ => Vec::new(),
    };
    let source = MaskedPatterns {
        system,
        params,
        extents: sample.extents(),
        domain: config.domain,
        masks,
    };
    let z = &prep.input.z.data;
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let mut rng = seed.rng();
    let mut direction = || {
        let d: Vec<f64> = (0..z.len()).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        d.into_iter().map(|v| v / n).collect::<Vec<f64>>()
    };
    let (u, v) = (direction(), direction());
    let probes = Probes::Grid {
        origin: z.clone(),
        u,
        v,
        extent: 0.5 * norm,
        resolution,
    };
    region_census(&source, &probes)
}

/// Frame residuals of a linear frame network with the configured depth on a
/// two-channel input.
pub fn config_frame_report(cfg: &ExperimentConfig) -> Result<FrameReport> {
    let fc = FrameNetConfig {
        levels: cfg.network.stages.min(2),
        q_in: 2,
        kernel: [3, 3],
        redundancy: 1,
        alpha: 0.8,
        skip: true,
        pooling: FramePooling::Haar { factor: [2, 2] },
    };
    let frame = build_frame_net(&fc, cfg.data.size, cfg.master_seed().derive("frames"))?;
    frame_report(&frame.net, &frame.params, cfg.data.size, PR_TOLERANCE)
}

/// Outcome of one method/domain run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRow {
    pub method: String,
    pub domain: String,
    /// `ok` or the error message.
    pub status: String,
    pub n_params: usize,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
}

impl RunRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentSummary {
    pub config_hash: String,
    pub rows: Vec<RunRow>,
}

impl ExperimentSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,domain,status,n_params,mean_psnr_db,mean_ssim\n");
        for r in &self.rows {
            let status = r.status.replace([',', '\n'], ";");
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.method,
                r.domain,
                status,
                r.n_params,
                format_db(r.mean_psnr_db),
                r.mean_ssim
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| method | domain | params | PSNR (dB) | SSIM |\n|---|---|---:|---:|---:|\n");
        for r in &self.rows {
            if r.ok() {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {:.2} | {:.4} |",
                    r.method, r.domain, r.n_params, r.mean_psnr_db, r.mean_ssim
                );
            } else {
                let _ = writeln!(out, "| {} | {} | {} | failed | failed |", r.method, r.domain, r.n_params);
            }
        }
        out
    }

    pub fn row(&self, method: Method, domain: &str) -> Option<&RunRow> {
        self.rows.iter().find(|r| r.method == method.name() && r.domain == domain)
    }
}

fn domain_label(d: Domain) -> &'static str {
    match d {
        Domain::Image => "image",
        Domain::Kspace => "kspace",
    }
}

fn dump_images(dir: &Path, scores: &[SampleScore], images: &[crate::eval::Image]) -> Result<()> {
    let dir = dir.join("images");
    std::fs::create_dir_all(&dir)?;
    for (s, img) in scores.iter().zip(images) {
        write_pgm16(&dir.join(format!("sample_{:04}.pgm", s.sample_id)), img)?;
    }
    Ok(())
}

struct MethodResult {
    report: ReconReport,
    n_params: usize,
}

fn run_one(cfg: &ExperimentConfig, hash: &str, method: Method, domain: Domain, splits: &Splits, dir: &Path) -> Result<MethodResult> {
    std::fs::create_dir_all(dir)?;
    let label = if method.is_learned() { domain_label(domain) } else { "kspace" };
    let (scores, images, n_params) = match method {
        Method::Grappa => {
            let e = &cfg.evaluation;
            let (s, i) = run_grappa(&splits.test, e.grappa_kernel, e.ridge)?;
            (s, i, 0)
        }
        Method::Raki => {
            let e = &cfg.evaluation;
            let (s, i) = run_raki(&splits.test, e.raki_epochs, e.raki_lr, cfg.master_seed().derive("raki"))?;
            (s, i, 0)
        }
        _ => {
            let system = build_system(cfg, method)?;
            let tc = cfg.train_config(domain, method)?;
            let outcome = train(&tc, &system, &splits.train, &splits.val)?;
            save_trained(
                &dir.join("checkpoint"),
                &system,
                &outcome.params,
                &tc,
                Some((&outcome.log, outcome.steps, outcome.diverged)),
            )?;
            std::fs::write(dir.join("metrics.csv"), outcome.to_csv())?;
            let (s, i) = score_system(&system, &outcome.params, &tc, &splits.test)?;
            if cfg.evaluation.geometry {
                let census = census_through_sample(
                    &system,
                    &outcome.params,
                    &tc,
                    &splits.test[0],
                    cfg.master_seed().derive("census"),
                    cfg.evaluation.census_resolution,
                )?;
                let g = GeometrySummary {
                    within_bound: census.within_bound(),
                    census,
                };
                std::fs::write(dir.join("geometry.json"), serde_json::to_string_pretty(&g)?)?;
            }
            (s, i, system.n_params())
        }
    };
    if cfg.evaluation.dump_images {
        dump_images(dir, &scores, &images)?;
    }
    let report = ReconReport::new(method.name(), label, hash, scores);
    report.write(dir)?;
    Ok(MethodResult { report, n_params })
}

/// Runs every configured method and domain into `out`. A failing run is
/// recorded in the summary and the remaining runs continue.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let hash = cfg.hash();
    std::fs::write(out.join("config.ini"), cfg.to_ini())?;
    std::fs::write(out.join("config.sha256"), format!("{hash}\n"))?;
    let needs_data = !cfg.experiment.methods.is_empty();
    let splits = if needs_data {
        Some(make_splits(cfg)?)
    } else {
        None
    };
    if cfg.evaluation.geometry {
        let report = config_frame_report(cfg)?;
        std::fs::write(out.join("frames.json"), serde_json::to_string_pretty(&report)?)?;
    }
    let mut runs: Vec<(Method, Domain)> = Vec::new();
    for &m in &cfg.experiment.methods {
        if m.is_learned() {
            runs.extend(cfg.experiment.domains.iter().map(|&d| (m, d)));
        } else {
            runs.push((m, Domain::Kspace));
        }
    }
    runs.dedup();
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    for (method, domain) in runs {
        let label = if method.is_learned() { domain_label(domain) } else { "kspace" };
        let dir = run_dir(out, method, label);
        let start = Instant::now();
        let result = run_one(cfg, &hash, method, domain, splits.as_ref().expect("methods need data"), &dir);
        let seconds = start.elapsed().as_secs_f64();
        let row = match result {
            Ok(r) => RunRow {
                method: method.name().into(),
                domain: label.into(),
                status: "ok".into(),
                n_params: r.n_params,
                mean_psnr_db: r.report.mean_psnr_db,
                mean_ssim: r.report.mean_ssim,
            },
            Err(e) => RunRow {
                method: method.name().into(),
                domain: label.into(),
                status: e.to_string(),
                n_params: 0,
                mean_psnr_db: f64::NAN,
                mean_ssim: f64::NAN,
            },
        };
        timing.push(Timing {
            method: format!("{}/{}", row.method, row.domain),
            seconds,
            per_sample_seconds: seconds / cfg.data.n_test.max(1) as f64,
        });
        rows.push(row);
    }
    let summary = ExperimentSummary { config_hash: hash, rows };
    std::fs::write(out.join("summary.csv"), summary.to_csv())?;
    std::fs::write(out.join("summary.md"), summary.to_markdown())?;
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    write_timing(out, &timing)?;
    Ok(summary)
}

pub fn run_dir(out: &Path, method: Method, domain: &str) -> PathBuf {
    out.join(format!("{}-{}", method.name(), domain))
}

/// One experiment per value of `key`, each in `out/<key>=<value>`, plus a
/// combined `sweep.csv`.
pub fn run_sweep(cfg: &ExperimentConfig, key: &str, values: &[String], out: &Path) -> Result<Vec<(String, ExperimentSummary)>> {
    if values.is_empty() {
        return Err(Error::Config(format!("sweep over `{key}` has no values")));
    }
    let configs = values
        .iter()
        .map(|v| cfg.with_override(key, v).map(|c| (v.clone(), c)))
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out)?;
    let mut csv = format!("{key},method,domain,status,mean_psnr_db,mean_ssim\n");
    let mut all = Vec::new();
    for (value, c) in configs {
        let name: String = format!("{key}={value}")
            .chars()
            .map(|ch| if ch.is_ascii_alphanumeric() || "=._-".contains(ch) { ch } else { '_' })
            .collect();
        let summary = run_experiment(&c, &out.join(name))?;
        for r in &summary.rows {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                value.replace(',', " "),
                r.method,
                r.domain,
                if r.ok() { "ok" } else { "failed" },
                format_db(r.mean_psnr_db),
                r.mean_ssim
            );
        }
        all.push((value, summary));
    }
    std::fs::write(out.join("sweep.csv"), csv)?;
    Ok(all)
}
