use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use framelet::eval::{write_pgm16, write_timing, ReconReport, SampleScore, Timing};
use framelet::experiment::{
    census_through_sample, load_trained, run_experiment, run_grappa, run_raki, run_sweep, save_trained, score_system,
    selftest, ExperimentConfig, Method,
};
use framelet::geometry::{frame_report, hyperplane_report, DEFAULT_DENSE_CAP, PR_TOLERANCE};
use framelet::mri::{generate_dataset, load_dataset, load_sample, save_dataset, DataConfig, Domain, Sample};
use framelet::tensor::Seed;
use framelet::trainer::{prepare, train, eval_branch_seed};
use framelet::Error;

#[derive(Parser)]
#[command(name = "framelet", version, about = "Encoder-decoder geometry and aggregation schemes for accelerated MRI")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-coil dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, num_args = 2, default_values_t = [32, 32])]
        size: Vec<usize>,
        #[arg(long, default_value_t = 4)]
        coils: usize,
        #[arg(long, num_args = 2, default_values_t = [4, 1])]
        accel: Vec<usize>,
        #[arg(long, num_args = 2, default_values_t = [8, 32])]
        acs: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Index of the first sample.
        #[arg(long, default_value_t = 0)]
        first: usize,
        #[arg(long, default_value_t = 6)]
        ellipses: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Use exactly linear k-space with this many components.
        #[arg(long)]
        linear: Option<usize>,
    },
    /// Train one learned method on a dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "bootstrap")]
        method: String,
        #[arg(long, value_enum, default_value_t = DomainArg::Image)]
        domain: DomainArg,
        /// Validation dataset; defaults to the last `n_val` samples of `--data`.
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Score a trained checkpoint on a dataset.
    Eval {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dump_images: bool,
    },
    /// Frame, region and hyperplane reports of a trained network at one input.
    Geometry {
        #[arg(long)]
        net: PathBuf,
        /// A `sample_*` directory.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportKind::All)]
        report: ReportKind,
        #[arg(long, default_value = "geometry")]
        out: PathBuf,
        #[arg(long, default_value_t = 24)]
        resolution: usize,
        /// ReLU layer for the hyperplane table; defaults to the first one.
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// GRAPPA on every sample of a dataset.
    Grappa {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, num_args = 2, default_values_t = framelet::baselines::DEFAULT_KERNEL)]
        kernel: Vec<usize>,
        #[arg(long, default_value_t = framelet::baselines::DEFAULT_RIDGE)]
        ridge: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// RAKI on every sample of a dataset.
    Raki {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        #[arg(long, default_value_t = 3e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every configured method and write reports and a summary table.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `section.key=value` overrides applied before the run.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// `key=v1,v2,...`: one experiment per value.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Fast invariant checks.
    Selftest {
        /// Break FFT scaling in the Parseval check (negative control).
        #[arg(long, hide = true)]
        corrupt_fft: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    Image,
    Kspace,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Image => Domain::Image,
            DomainArg::Kspace => Domain::Kspace,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ReportKind {
    All,
    Frames,
    Census,
    Hyperplane,
}

/// Raised when a command ran but a checked property did not hold.
#[derive(Debug)]
struct InvariantFailure(String);

impl std::fmt::Display for InvariantFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InvariantFailure {}

fn pair(v: &[usize]) -> [usize; 2] {
    [v[0], v[1]]
}

fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(path).with_context(|| format!("config {}", path.display()))?;
    Ok(cfg.with_env_seed()?)
}

fn write_report(out: &Path, report: &ReconReport, seconds: f64) -> anyhow::Result<()> {
    report.write(out)?;
    write_timing(
        out,
        &[Timing {
            method: report.method.clone(),
            seconds,
            per_sample_seconds: seconds / report.samples.len().max(1) as f64,
        }],
    )?;
    println!(
        "{}: {} samples, mean PSNR {:.2} dB, mean SSIM {:.4}",
        report.method,
        report.samples.len(),
        report.mean_psnr_db,
        report.mean_ssim
    );
    Ok(())
}

fn gen_data(cmd: &Command) -> anyhow::Result<()> {
    let Command::GenData { out, n, size, coils, accel, acs, seed, first, ellipses, noise, linear } = cmd else {
        unreachable!()
    };
    let cfg = DataConfig {
        size: pair(size),
        n_coils: *coils,
        accel: pair(accel),
        acs: pair(acs),
        n_ellipses: *ellipses,
        noise_std: *noise,
        linear_components: *linear,
        seed: Seed(*seed),
    };
    let samples = generate_dataset(&cfg, *first, *n)?;
    save_dataset(out, &cfg, &samples)?;
    println!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}

fn train_cmd(config: &Path, data: &Path, out: &Path, method: &str, domain: Domain, val: Option<&Path>) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let method: Method = method.parse()?;
    if !method.is_learned() {
        return Err(Error::Config(format!("{} is not trained by this command", method.name())).into());
    }
    let mut samples = load_dataset(data)?;
    let val_set = match val {
        Some(v) => load_dataset(v)?,
        None => {
            let n_val = cfg.data.n_val.min(samples.len().saturating_sub(1));
            samples.split_off(samples.len() - n_val)
        }
    };
    let system = framelet::experiment::build_system(&cfg, method)?;
    let tc = cfg.train_config(domain, method)?;
    let start = Instant::now();
    let outcome = train(&tc, &system, &samples, &val_set)?;
    save_trained(out, &system, &outcome.params, &tc, Some((&outcome.log, outcome.steps, outcome.diverged)))?;
    std::fs::write(out.join("metrics.csv"), outcome.to_csv())?;
    std::fs::write(out.join("config.ini"), cfg.to_ini())?;
    println!(
        "{} steps in {:.1} s{}; checkpoint in {}",
        outcome.steps,
        start.elapsed().as_secs_f64(),
        if outcome.diverged { " (diverged, kept last finite parameters)" } else { "" },
        out.display()
    );
    Ok(())
}

fn eval_cmd(net: &Path, data: &Path, out: &Path, dump: bool) -> anyhow::Result<()> {
    let (system, params, tc) = load_trained(net)?;
    let samples = load_dataset(data)?;
    let start = Instant::now();
    let (scores, images) = score_system(&system, &params, &tc, &samples)?;
    let seconds = start.elapsed().as_secs_f64();
    let domain = match tc.domain {
        Domain::Image => "image",
        Domain::Kspace => "kspace",
    };
    let report = ReconReport::new(tc.scheme.name(), domain, "", scores);
    if dump {
        dump_images(out, &report.samples, &images)?;
    }
    write_report(out, &report, seconds)
}

fn dump_images(out: &Path, scores: &[SampleScore], images: &[framelet::eval::Image]) -> anyhow::Result<()> {
    let dir = out.join("images");
    std::fs::create_dir_all(&dir)?;
    for (s, img) in scores.iter().zip(images) {
        write_pgm16(&dir.join(format!("sample_{:04}.pgm", s.sample_id)), img)?;
    }
    Ok(())
}

fn baseline_cmd(name: &str, data: &Path, out: &Path, run: impl FnOnce(&[Sample]) -> framelet::Result<(Vec<SampleScore>, Vec<framelet::eval::Image>)>) -> anyhow::Result<()> {
    let samples = load_dataset(data)?;
    let start = Instant::now();
    let (scores, _) = run(&samples)?;
    write_report(out, &ReconReport::new(name, "kspace", "", scores), start.elapsed().as_secs_f64())
}

#[allow(clippy::too_many_arguments)]
fn geometry_cmd(
    net: &Path,
    input: &Path,
    report: ReportKind,
    out: &Path,
    resolution: usize,
    layer: Option<usize>,
    seed: u64,
) -> anyhow::Result<()> {
    let (system, params, tc) = load_trained(net)?;
    let sample = load_sample(input)?;
    let extents = sample.extents();
    let base = &params[..system.base_len()];
    std::fs::create_dir_all(out)?;
    let mut failures = Vec::new();
    let want = |k: ReportKind| report == ReportKind::All || report == k;
    if want(ReportKind::Frames) {
        let r = frame_report(&system.net, base, extents, PR_TOLERANCE)?;
        std::fs::write(out.join("frames.json"), serde_json::to_string_pretty(&r)?)?;
        println!("frames: {} levels, perfect reconstruction {}", r.levels.len(), if r.pass { "holds" } else { "does not hold" });
    }
    if want(ReportKind::Census) {
        let c = census_through_sample(&system, &params, &tc, &sample, Seed(seed), resolution)?;
        std::fs::write(out.join("census.json"), serde_json::to_string_pretty(&c)?)?;
        println!("census: {} regions from {} probes, {} neurons", c.count, c.n_probes, c.n_neurons);
        if !c.within_bound() {
            failures.push("region count exceeds its bound".to_string());
        }
    }
    if want(ReportKind::Hyperplane) {
        let relus = system.net.spec.relu_layers();
        let layer = match layer.or_else(|| relus.first().copied()) {
            Some(l) => l,
            None => bail!("network has no ReLU layer"),
        };
        let prep = prepare(&sample, tc.domain, tc.scheme.kind, tc.normalize, eval_branch_seed(tc.seed, 0))?;
        match hyperplane_report(&system.net, base, &prep.input.z, layer, DEFAULT_DENSE_CAP) {
            Ok(h) => {
                std::fs::write(out.join("hyperplane.csv"), h.to_csv())?;
                println!("hyperplane: {} neurons at layer {layer}", h.rows.len());
            }
            Err(Error::CapExceeded { rows, cap }) if report == ReportKind::All => {
                eprintln!("hyperplane: skipped, layer needs {rows} dense rows (cap {cap})");
            }
            Err(e) => return Err(e.into()),
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(InvariantFailure(failures.join("; ")).into())
    }
}

fn experiment_cmd(config: &Path, out: &Path, overrides: &[String], sweep: Option<&str>) -> anyhow::Result<()> {
    let mut cfg = load_config(config)?;
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Error::Config(format!("override `{o}` needs KEY=VALUE")))?;
        cfg = cfg.with_override(k, v)?;
    }
    match sweep {
        Some(s) => {
            let (key, values) = s.split_once('=').ok_or_else(|| Error::Config(format!("sweep `{s}` needs KEY=V1,V2,...")))?;
            let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
            for (value, summary) in run_sweep(&cfg, key, &values, out)? {
                println!("{key} = {value}\n{}", summary.to_markdown());
            }
        }
        None => {
            let summary = run_experiment(&cfg, out)?;
            print!("{}", summary.to_markdown());
            for r in summary.rows.iter().filter(|r| !r.ok()) {
                eprintln!("{} ({}) failed: {}", r.method, r.domain, r.status);
            }
        }
    }
    Ok(())
}

fn selftest_cmd(corrupt: bool) -> anyhow::Result<()> {
    let start = Instant::now();
    let rows = selftest(corrupt);
    for r in &rows {
        println!("{r}");
    }
    println!("{:.1} s", start.elapsed().as_secs_f64());
    let failed = rows.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(InvariantFailure(format!("{failed} of {} checks failed", rows.len())).into());
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        c @ Command::GenData { .. } => gen_data(c),
        Command::Train { config, data, out, method, domain, val } => {
            train_cmd(config, data, out, method, (*domain).into(), val.as_deref())
        }
        Command::Eval { net, data, out, dump_images } => eval_cmd(net, data, out, *dump_images),
        Command::Geometry { net, input, report, out, resolution, layer, seed } => {
            geometry_cmd(net, input, *report, out, *resolution, *layer, *seed)
        }
        Command::Grappa { data, kernel, ridge, out } => {
            baseline_cmd("grappa", data, out, |s| run_grappa(s, pair(kernel), *ridge))
        }
        Command::Raki { data, epochs, lr, seed, out } => {
            baseline_cmd("raki", data, out, |s| run_raki(s, *epochs, *lr, Seed(*seed)))
        }
        Command::Experiment { config, out, overrides, sweep } => experiment_cmd(config, out, overrides, sweep.as_deref()),
        Command::Selftest { corrupt_fft } => selftest_cmd(*corrupt_fft),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<InvariantFailure>().is_some() {
            return 1;
        }
        if let Some(Error::Config(_)) = cause.downcast_ref::<Error>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
