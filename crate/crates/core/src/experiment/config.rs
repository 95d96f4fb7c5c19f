use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ini::Ini;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::expressivity::{AttentionKind, GapMode, SchemeConfig, SchemeKind};
use crate::mri::{DataConfig, Domain};
use crate::net::UnetOptions;
use crate::tensor::Seed;
use crate::trainer::{Loss, TrainConfig};

/// Environment variable that replaces `[experiment] seed`.
pub const SEED_ENV: &str = "FRAMELET_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Grappa,
    Raki,
    BaselineUnet,
    Bootstrap,
    Residual,
    Iterative,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Grappa,
        Method::Raki,
        Method::BaselineUnet,
        Method::Bootstrap,
        Method::Residual,
        Method::Iterative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Grappa => "grappa",
            Method::Raki => "raki",
            Method::BaselineUnet => "baseline-unet",
            Method::Bootstrap => "bootstrap",
            Method::Residual => "residual",
            Method::Iterative => "iterative",
        }
    }

    /// GRAPPA and RAKI work on k-space directly and ignore `domains`.
    pub fn is_learned(self) -> bool {
        !matches!(self, Method::Grappa | Method::Raki)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Method::BaselineUnet),
            _ => Method::ALL
                .into_iter()
                .find(|m| m.name() == s)
                .ok_or_else(|| Error::Config(format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSection {
    pub size: [usize; 2],
    pub n_coils: usize,
    pub accel: [usize; 2],
    pub acs: [usize; 2],
    pub n_ellipses: usize,
    pub noise_std: f64,
    pub linear_components: Option<usize>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSection {
    pub stages: usize,
    pub base_channels: usize,
    pub convs_per_stage: usize,
    pub affine_bn: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeSection {
    pub bootstrap_n: usize,
    pub keep_ratio: f64,
    pub iterative_n: usize,
    /// `None` picks the per-scheme default head.
    pub attention: Option<AttentionKind>,
    pub pooling: GapMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSection {
    pub lr0: f64,
    pub period: usize,
    pub floor: f64,
    pub epochs: usize,
    pub max_steps: Option<usize>,
    pub loss: Loss,
    pub normalize: bool,
    pub zero_output_init: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationSection {
    pub grappa_kernel: [usize; 2],
    pub ridge: f64,
    pub raki_epochs: usize,
    pub raki_lr: f64,
    pub dump_images: bool,
    pub geometry: bool,
    pub census_resolution: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSection {
    pub methods: Vec<Method>,
    pub domains: Vec<Domain>,
    pub seed: u64,
}

/// Everything one run needs. Text form: INI sections `[data]`, `[network]`,
/// `[scheme]`, `[training]`, `[evaluation]`, `[experiment]` with `key = value`
/// lines; lists are comma or space separated. Missing keys take defaults,
/// unknown sections or keys are errors.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub network: NetworkSection,
    pub scheme: SchemeSection,
    pub training: TrainingSection,
    pub evaluation: EvaluationSection,
    pub experiment: ExperimentSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSection {
                size: [32, 32],
                n_coils: 4,
                accel: [4, 1],
                acs: [6, 32],
                n_ellipses: 6,
                noise_std: 0.0,
                linear_components: None,
                n_train: 16,
                n_val: 2,
                n_test: 8,
            },
            network: NetworkSection {
                stages: 2,
                base_channels: 8,
                convs_per_stage: 2,
                affine_bn: false,
            },
            scheme: SchemeSection {
                bootstrap_n: 4,
                keep_ratio: 0.92,
                iterative_n: 3,
                attention: None,
                pooling: GapMode::Magnitude,
            },
            training: TrainingSection {
                lr0: 1e-3,
                period: 50,
                floor: 1e-4,
                epochs: 200,
                max_steps: Some(2000),
                loss: Loss::SquaredL2,
                normalize: true,
                zero_output_init: true,
            },
            evaluation: EvaluationSection {
                grappa_kernel: crate::baselines::DEFAULT_KERNEL,
                ridge: crate::baselines::DEFAULT_RIDGE,
                raki_epochs: 500,
                raki_lr: 3e-3,
                dump_images: false,
                geometry: false,
                census_resolution: 24,
            },
            experiment: ExperimentSection {
                methods: vec![Method::Grappa, Method::BaselineUnet, Method::Bootstrap, Method::Residual, Method::Iterative],
                domains: vec![Domain::Image],
                seed: 0,
            },
        }
    }
}

fn cfg_err(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key} = `{value}`: {what}"))
}

fn items(v: &str) -> Vec<&str> {
    v.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect()
}

fn scalar<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| cfg_err(key, v, "cannot parse value"))
}

fn pair(key: &str, v: &str) -> Result<[usize; 2]> {
    let parts = items(v);
    match parts.as_slice() {
        [a, b] => Ok([scalar(key, a)?, scalar(key, b)?]),
        _ => Err(cfg_err(key, v, "expected two integers")),
    }
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(cfg_err(key, v, "expected true or false")),
    }
}

fn optional<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    match v.trim() {
        "" | "none" => Ok(None),
        s => scalar(key, s).map(Some),
    }
}

fn domain_name(d: Domain) -> &'static str {
    match d {
        Domain::Image => "image",
        Domain::Kspace => "kspace",
    }
}

fn parse_domain(key: &str, v: &str) -> Result<Domain> {
    match v {
        "image" => Ok(Domain::Image),
        "kspace" => Ok(Domain::Kspace),
        _ => Err(cfg_err(key, v, "expected image or kspace")),
    }
}

fn attention_name(a: Option<AttentionKind>) -> &'static str {
    match a {
        None => "default",
        Some(AttentionKind::Mlp) => "mlp",
        Some(AttentionKind::Conv1x1) => "conv1x1",
        Some(AttentionKind::Uniform) => "uniform",
    }
}

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or("none".into(), T::to_string)
}

impl ExperimentConfig {
    /// Canonical `(section, key) → value` table covering every field.
    pub fn entries(&self) -> Vec<(&'static str, &'static str, String)> {
        let (d, n, s, t, e, x) = (&self.data, &self.network, &self.scheme, &self.training, &self.evaluation, &self.experiment);
        let p = |a: [usize; 2]| format!("{} {}", a[0], a[1]);
        vec![
            ("data", "size", p(d.size)),
            ("data", "n_coils", d.n_coils.to_string()),
            ("data", "accel", p(d.accel)),
            ("data", "acs", p(d.acs)),
            ("data", "n_ellipses", d.n_ellipses.to_string()),
            ("data", "noise_std", d.noise_std.to_string()),
            ("data", "linear_components", opt_str(&d.linear_components)),
            ("data", "n_train", d.n_train.to_string()),
            ("data", "n_val", d.n_val.to_string()),
            ("data", "n_test", d.n_test.to_string()),
            ("network", "stages", n.stages.to_string()),
            ("network", "base_channels", n.base_channels.to_string()),
            ("network", "convs_per_stage", n.convs_per_stage.to_string()),
            ("network", "affine_bn", n.affine_bn.to_string()),
            ("scheme", "bootstrap_n", s.bootstrap_n.to_string()),
            ("scheme", "keep_ratio", s.keep_ratio.to_string()),
            ("scheme", "iterative_n", s.iterative_n.to_string()),
            ("scheme", "attention", attention_name(s.attention).into()),
            ("scheme", "pooling", match s.pooling {
                GapMode::Magnitude => "magnitude".into(),
                GapMode::Channels => "channels".into(),
            }),
            ("training", "lr0", t.lr0.to_string()),
            ("training", "period", t.period.to_string()),
            ("training", "floor", t.floor.to_string()),
            ("training", "epochs", t.epochs.to_string()),
            ("training", "max_steps", opt_str(&t.max_steps)),
            ("training", "loss", match t.loss {
                Loss::L2 => "l2".into(),
                Loss::SquaredL2 => "squared-l2".into(),
            }),
            ("training", "normalize", t.normalize.to_string()),
            ("training", "zero_output_init", t.zero_output_init.to_string()),
            ("evaluation", "grappa_kernel", p(e.grappa_kernel)),
            ("evaluation", "ridge", e.ridge.to_string()),
            ("evaluation", "raki_epochs", e.raki_epochs.to_string()),
            ("evaluation", "raki_lr", e.raki_lr.to_string()),
            ("evaluation", "dump_images", e.dump_images.to_string()),
            ("evaluation", "geometry", e.geometry.to_string()),
            ("evaluation", "census_resolution", e.census_resolution.to_string()),
            ("experiment", "methods", x.methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(", ")),
            ("experiment", "domains", x.domains.iter().map(|&d| domain_name(d)).collect::<Vec<_>>().join(", ")),
            ("experiment", "seed", x.seed.to_string()),
        ]
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        let full = format!("{section}.{key}");
        let k = full.as_str();
        let v = v.trim();
        match (section, key) {
            ("data", "size") => self.data.size = pair(k, v)?,
            ("data", "n_coils") => self.data.n_coils = scalar(k, v)?,
            ("data", "accel") => self.data.accel = pair(k, v)?,
            ("data", "acs") => self.data.acs = pair(k, v)?,
            ("data", "n_ellipses") => self.data.n_ellipses = scalar(k, v)?,
            ("data", "noise_std") => self.data.noise_std = scalar(k, v)?,
            ("data", "linear_components") => self.data.linear_components = optional(k, v)?,
            ("data", "n_train") => self.data.n_train = scalar(k, v)?,
            ("data", "n_val") => self.data.n_val = scalar(k, v)?,
            ("data", "n_test") => self.data.n_test = scalar(k, v)?,
            ("network", "stages") => self.network.stages = scalar(k, v)?,
            ("network", "base_channels") => self.network.base_channels = scalar(k, v)?,
            ("network", "convs_per_stage") => self.network.convs_per_stage = scalar(k, v)?,
            ("network", "affine_bn") => self.network.affine_bn = flag(k, v)?,
            ("scheme", "bootstrap_n") => self.scheme.bootstrap_n = scalar(k, v)?,
            ("scheme", "keep_ratio") => self.scheme.keep_ratio = scalar(k, v)?,
            ("scheme", "iterative_n") => self.scheme.iterative_n = scalar(k, v)?,
            ("scheme", "attention") => {
                self.scheme.attention = match v {
                    "default" => None,
                    "mlp" => Some(AttentionKind::Mlp),
                    "conv1x1" => Some(AttentionKind::Conv1x1),
                    "uniform" => Some(AttentionKind::Uniform),
                    _ => return Err(cfg_err(k, v, "expected default, mlp, conv1x1 or uniform")),
                }
            }
            ("scheme", "pooling") => {
                self.scheme.pooling = match v {
                    "magnitude" => GapMode::Magnitude,
                    "channels" => GapMode::Channels,
                    _ => return Err(cfg_err(k, v, "expected magnitude or channels")),
                }
            }
            ("training", "lr0") => self.training.lr0 = scalar(k, v)?,
            ("training", "period") => self.training.period = scalar(k, v)?,
            ("training", "floor") => self.training.floor = scalar(k, v)?,
            ("training", "epochs") => self.training.epochs = scalar(k, v)?,
            ("training", "max_steps") => self.training.max_steps = optional(k, v)?,
            ("training", "loss") => self.training.loss = v.parse()?,
            ("training", "normalize") => self.training.normalize = flag(k, v)?,
            ("training", "zero_output_init") => self.training.zero_output_init = flag(k, v)?,
            ("evaluation", "grappa_kernel") => self.evaluation.grappa_kernel = pair(k, v)?,
            ("evaluation", "ridge") => self.evaluation.ridge = scalar(k, v)?,
            ("evaluation", "raki_epochs") => self.evaluation.raki_epochs = scalar(k, v)?,
            ("evaluation", "raki_lr") => self.evaluation.raki_lr = scalar(k, v)?,
            ("evaluation", "dump_images") => self.evaluation.dump_images = flag(k, v)?,
            ("evaluation", "geometry") => self.evaluation.geometry = flag(k, v)?,
            ("evaluation", "census_resolution") => self.evaluation.census_resolution = scalar(k, v)?,
            ("experiment", "methods") => {
                self.experiment.methods = items(v).into_iter().map(str::parse).collect::<Result<_>>()?
            }
            ("experiment", "domains") => {
                self.experiment.domains = items(v).into_iter().map(|d| parse_domain(k, d)).collect::<Result<_>>()?
            }
            ("experiment", "seed") => self.experiment.seed = scalar(k, v)?,
            _ => return Err(Error::Config(format!("unknown key `{full}`"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(format!("malformed config: {e}")))?;
        let mut cfg = Self::default();
        for (section, props) in ini.iter() {
            let section = match section {
                Some(s) => s,
                None if props.is_empty() => continue,
                None => return Err(Error::Config("keys before the first [section]".into())),
            };
            let mut seen = std::collections::BTreeSet::new();
            for (key, value) in props.iter() {
                if !seen.insert(key) {
                    return Err(Error::Config(format!("duplicate key `{section}.{key}`")));
                }
                cfg.set(section, key, value)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Replaces the seed with `FRAMELET_SEED` when that variable is set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.experiment.seed = v.trim().parse().map_err(|_| cfg_err(SEED_ENV, &v, "expected an unsigned integer"))?;
        }
        Ok(self)
    }

    /// Sets `section.key` (or the alias `n_branches`) from text.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let key = if key == "n_branches" { "scheme.bootstrap_n" } else { key };
        let (section, name) = key
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override `{key}` must be section.key")))?;
        let mut cfg = self.clone();
        cfg.set(section, name, value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        crate::error::ensure!(d.n_coils >= 1, Config, "data.n_coils must be at least 1");
        crate::error::ensure!(d.n_train >= 1, Config, "data.n_train must be at least 1");
        crate::error::ensure!(d.n_test >= 1, Config, "data.n_test must be at least 1");
        crate::error::ensure!(self.evaluation.census_resolution >= 1, Config, "census_resolution must be positive");
        self.data_config().mask().map_err(|e| Error::Config(format!("data: {e}")))?;
        self.train_config(Domain::Image, Method::BaselineUnet)?.validate()?;
        for m in [Method::Bootstrap, Method::Residual, Method::Iterative] {
            self.scheme_config(m)?.validate()?;
        }
        Ok(())
    }

    /// INI text listing every key; parsing it gives back this config.
    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (s, k, v) in self.entries() {
            if s != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{s}]");
                section = s;
            }
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 of the sorted `section.key=value` lines.
    pub fn hash(&self) -> String {
        let lines: BTreeMap<String, String> = self.entries().into_iter().map(|(s, k, v)| (format!("{s}.{k}"), v)).collect();
        let mut h = Sha256::new();
        for (k, v) in lines {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn master_seed(&self) -> Seed {
        Seed(self.experiment.seed)
    }

    pub fn data_config(&self) -> DataConfig {
        let d = &self.data;
        DataConfig {
            size: d.size,
            n_coils: d.n_coils,
            accel: d.accel,
            acs: d.acs,
            n_ellipses: d.n_ellipses,
            noise_std: d.noise_std,
            linear_components: d.linear_components,
            seed: self.master_seed().derive("data"),
        }
    }

    pub fn unet_options(&self) -> UnetOptions {
        UnetOptions {
            convs_per_stage: self.network.convs_per_stage,
            affine_bn: self.network.affine_bn,
        }
    }

    pub fn scheme_config(&self, method: Method) -> Result<SchemeConfig> {
        let s = &self.scheme;
        let kind = match method {
            Method::BaselineUnet => return Ok(SchemeConfig { pooling: s.pooling, ..SchemeConfig::baseline() }),
            Method::Bootstrap => SchemeKind::Bootstrap {
                n: s.bootstrap_n,
                keep_ratio: s.keep_ratio,
            },
            Method::Residual => SchemeKind::Residual,
            Method::Iterative => SchemeKind::Iterative { n: s.iterative_n },
            m => return Err(Error::Config(format!("{} is not a learned method", m.name()))),
        };
        let mut c = SchemeConfig::with_default_attention(kind);
        if let Some(a) = s.attention {
            if kind_accepts(kind, a) {
                c.attention = a;
            }
        }
        c.pooling = s.pooling;
        Ok(c)
    }

    pub fn train_config(&self, domain: Domain, method: Method) -> Result<TrainConfig> {
        let t = &self.training;
        Ok(TrainConfig {
            domain,
            scheme: self.scheme_config(method)?,
            lr0: t.lr0,
            period: t.period,
            floor: t.floor,
            epochs: t.epochs,
            max_steps: t.max_steps,
            seed: self.master_seed().derive("train"),
            loss: t.loss,
            normalize: t.normalize,
            zero_output_init: t.zero_output_init,
        })
    }
}

/// A configured head is applied only where it is defined; uniform averaging
/// exists for bootstrap alone.
fn kind_accepts(kind: SchemeKind, a: AttentionKind) -> bool {
    a != AttentionKind::Uniform || matches!(kind, SchemeKind::Bootstrap { .. })
}
