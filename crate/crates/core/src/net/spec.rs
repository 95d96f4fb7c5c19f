use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{ensure, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JoinMode {
    Add,
    Concat,
}

/// One node of a sequential layer graph. Skip connections are expressed with
/// matching `SkipEmit`/`SkipJoin` tags.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    /// Circular convolution (see [`crate::tensor::conv_forward`]).
    Conv { kernel: [usize; 2], out: usize, bias: bool },
    Relu,
    AvgPool { factor: [usize; 2] },
    /// Convolution at the coarse scale followed by zero-insertion upsampling.
    UnpoolDeconv {
        kernel: [usize; 2],
        out: usize,
        factor: [usize; 2],
        bias: bool,
    },
    SkipEmit { tag: String },
    SkipJoin { tag: String, mode: JoinMode },
    /// Per-channel `γ·x + β`.
    AffineBn,
    /// Per-channel normalization with statistics of the current input
    /// (batch size 1). Not piecewise linear; geometry operations refuse it.
    BatchNorm,
    /// Orthonormal Haar analysis over `factor` blocks, `C → f₁f₂·C` channels
    /// ordered band-major (low band first), scaled by `gain`.
    HaarPool { factor: [usize; 2], gain: f64 },
    /// Inverse (transpose) of [`LayerKind::HaarPool`] scaled by `gain`.
    HaarUnpool { factor: [usize; 2], gain: f64 },
}

impl LayerKind {
    pub fn conv(kernel: [usize; 2], out: usize) -> Self {
        LayerKind::Conv { kernel, out, bias: true }
    }

    pub fn conv1x1(out: usize) -> Self {
        LayerKind::Conv {
            kernel: [1, 1],
            out,
            bias: true,
        }
    }

    pub fn emit(tag: &str) -> Self {
        LayerKind::SkipEmit { tag: tag.into() }
    }

    pub fn join(tag: &str, mode: JoinMode) -> Self {
        LayerKind::SkipJoin { tag: tag.into(), mode }
    }

    pub fn is_relu(&self) -> bool {
        matches!(self, LayerKind::Relu)
    }
}

/// Ordered layer list plus the input channel count.
///
/// `code_at` splits the list into an encoder `layers[..code_at]` and a decoder
/// `layers[code_at..]`; geometry operations use it to define the code atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub layers: Vec<LayerKind>,
    pub code_at: usize,
}

/// Channel counts before and after one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelStep {
    pub input: usize,
    pub output: usize,
    /// Channel count of the skip signal consumed by a join.
    pub skip: usize,
}

fn pool_factor_ok(f: [usize; 2]) -> bool {
    f[0] >= 1 && f[1] >= 1
}

fn haar_factor_ok(f: [usize; 2]) -> bool {
    f.iter().all(|&v| v == 1 || v == 2) && f != [1, 1]
}

impl NetworkSpec {
    pub fn new(input_channels: usize, layers: Vec<LayerKind>, code_at: usize) -> Result<Self> {
        let spec = Self {
            input_channels,
            layers,
            code_at,
        };
        spec.channel_plan()?;
        Ok(spec)
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn relu_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.layers[i].is_relu()).collect()
    }

    pub fn has_relu(&self) -> bool {
        self.layers.iter().any(LayerKind::is_relu)
    }

    /// False when the graph contains input-statistics normalization.
    pub fn is_piecewise_linear(&self) -> bool {
        !self.layers.iter().any(|l| matches!(l, LayerKind::BatchNorm))
    }

    /// Channel bookkeeping for every layer; validates skip tags and channel
    /// compatibility of adds.
    pub fn channel_plan(&self) -> Result<Vec<ChannelStep>> {
        ensure!(self.input_channels > 0, Shape, "network needs input channels");
        ensure!(
            self.code_at <= self.layers.len(),
            Shape,
            "code split {} beyond {} layers",
            self.code_at,
            self.layers.len()
        );
        let mut emitted: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        let mut joined: BTreeMap<&str, usize> = BTreeMap::new();
        let mut c = self.input_channels;
        let mut plan = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = c;
            let mut skip = 0;
            c = match layer {
                LayerKind::Conv { kernel, out, .. } | LayerKind::UnpoolDeconv { kernel, out, .. } => {
                    ensure!(kernel[0] >= 1 && kernel[1] >= 1 && *out >= 1, Shape, "layer {i}: empty convolution");
                    if let LayerKind::UnpoolDeconv { factor, .. } = layer {
                        ensure!(pool_factor_ok(*factor), Shape, "layer {i}: bad unpool factor");
                    }
                    *out
                }
                LayerKind::Relu | LayerKind::AffineBn | LayerKind::BatchNorm => c,
                LayerKind::AvgPool { factor } => {
                    ensure!(pool_factor_ok(*factor), Shape, "layer {i}: bad pool factor");
                    c
                }
                LayerKind::SkipEmit { tag } => {
                    ensure!(
                        emitted.insert(tag, (i, c)).is_none(),
                        Shape,
                        "skip tag `{tag}` emitted twice"
                    );
                    c
                }
                LayerKind::SkipJoin { tag, mode } => {
                    let &(_, sc) = emitted
                        .get(tag.as_str())
                        .ok_or_else(|| Error::Shape(format!("layer {i}: skip tag `{tag}` joined before emit")))?;
                    ensure!(joined.insert(tag, i).is_none(), Shape, "skip tag `{tag}` joined twice");
                    skip = sc;
                    match mode {
                        JoinMode::Add => {
                            ensure!(sc == c, Shape, "layer {i}: add-join of {c} and {sc} channels");
                            c
                        }
                        JoinMode::Concat => c + sc,
                    }
                }
                LayerKind::HaarPool { factor, gain } => {
                    ensure!(haar_factor_ok(*factor) && gain.is_finite(), Shape, "layer {i}: bad Haar pool");
                    c * factor[0] * factor[1]
                }
                LayerKind::HaarUnpool { factor, gain } => {
                    ensure!(haar_factor_ok(*factor) && gain.is_finite(), Shape, "layer {i}: bad Haar unpool");
                    let bands = factor[0] * factor[1];
                    ensure!(c % bands == 0, Shape, "layer {i}: {c} channels not divisible into {bands} bands");
                    c / bands
                }
            };
            plan.push(ChannelStep { input, output: c, skip });
        }
        for tag in emitted.keys() {
            ensure!(joined.contains_key(tag), Shape, "skip tag `{tag}` emitted but never joined");
        }
        Ok(plan)
    }

    pub fn output_channels(&self) -> Result<usize> {
        Ok(self
            .channel_plan()?
            .last()
            .map_or(self.input_channels, |s| s.output))
    }

    /// Output shape `[channels, height, width]` of every layer for an input of
    /// the given spatial extents.
    pub fn shapes(&self, extents: [usize; 2]) -> Result<Vec<[usize; 3]>> {
        let plan = self.channel_plan()?;
        let [mut h, mut w] = extents;
        ensure!(h >= 1 && w >= 1, Shape, "empty input extents");
        let mut emitted: BTreeMap<&str, [usize; 2]> = BTreeMap::new();
        let mut out = Vec::with_capacity(plan.len());
        for (i, (layer, step)) in self.layers.iter().zip(&plan).enumerate() {
            match layer {
                LayerKind::Conv { kernel, .. } => {
                    ensure!(
                        kernel[0] <= h && kernel[1] <= w,
                        Shape,
                        "layer {i}: kernel {kernel:?} exceeds {h}x{w}"
                    );
                }
                LayerKind::UnpoolDeconv { kernel, factor, .. } => {
                    ensure!(
                        kernel[0] <= h && kernel[1] <= w,
                        Shape,
                        "layer {i}: kernel {kernel:?} exceeds {h}x{w}"
                    );
                    h *= factor[0];
                    w *= factor[1];
                }
                LayerKind::AvgPool { factor } | LayerKind::HaarPool { factor, .. } => {
                    ensure!(
                        h % factor[0] == 0 && w % factor[1] == 0,
                        Shape,
                        "layer {i}: {h}x{w} not divisible by {factor:?}"
                    );
                    h /= factor[0];
                    w /= factor[1];
                }
                LayerKind::HaarUnpool { factor, .. } => {
                    h *= factor[0];
                    w *= factor[1];
                }
                LayerKind::SkipEmit { tag } => {
                    emitted.insert(tag, [h, w]);
                }
                LayerKind::SkipJoin { tag, .. } => {
                    let e = emitted[tag.as_str()];
                    ensure!(e == [h, w], Shape, "layer {i}: skip `{tag}` is {e:?}, main path {h}x{w}");
                }
                _ => {}
            }
            out.push([step.output, h, w]);
        }
        Ok(out)
    }

    pub fn output_shape(&self, extents: [usize; 2]) -> Result<[usize; 3]> {
        let shapes = self.shapes(extents)?;
        Ok(shapes
            .last()
            .copied()
            .unwrap_or([self.input_channels, extents[0], extents[1]]))
    }

    /// Shape fed to layer `l` (the network input for `l = 0`).
    pub fn input_shape_of(&self, l: usize, extents: [usize; 2]) -> Result<[usize; 3]> {
        if l == 0 {
            return Ok([self.input_channels, extents[0], extents[1]]);
        }
        Ok(self.shapes(extents)?[l - 1])
    }
}

fn fmt_pair(p: [usize; 2]) -> String {
    format!("{}x{}", p[0], p[1])
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nb = |bias: &bool| if *bias { "" } else { " nobias" };
        match self {
            LayerKind::Conv { kernel: [1, 1], out, bias } => write!(f, "conv1x1 out={out}{}", nb(bias)),
            LayerKind::Conv { kernel, out, bias } => write!(f, "conv {} out={out}{}", fmt_pair(*kernel), nb(bias)),
            LayerKind::Relu => write!(f, "relu"),
            LayerKind::AvgPool { factor } => write!(f, "avg_pool {}", fmt_pair(*factor)),
            LayerKind::UnpoolDeconv {
                kernel,
                out,
                factor,
                bias,
            } => write!(
                f,
                "unpool_deconv {} out={out} up={}{}",
                fmt_pair(*kernel),
                fmt_pair(*factor),
                nb(bias)
            ),
            LayerKind::SkipEmit { tag } => write!(f, "skip_emit {tag}"),
            LayerKind::SkipJoin { tag, mode } => write!(
                f,
                "skip_join {tag} {}",
                match mode {
                    JoinMode::Add => "add",
                    JoinMode::Concat => "concat",
                }
            ),
            LayerKind::AffineBn => write!(f, "affine_bn"),
            LayerKind::BatchNorm => write!(f, "batch_norm"),
            LayerKind::HaarPool { factor, gain } => write!(f, "haar_pool {} gain={gain:?}", fmt_pair(*factor)),
            LayerKind::HaarUnpool { factor, gain } => write!(f, "haar_unpool {} gain={gain:?}", fmt_pair(*factor)),
        }
    }
}

fn parse_pair(s: &str) -> Result<[usize; 2]> {
    let (a, b) = s
        .split_once('x')
        .ok_or_else(|| Error::Format(format!("expected AxB, got `{s}`")))?;
    let p = |v: &str| v.parse::<usize>().map_err(|_| Error::Format(format!("bad extent `{v}`")));
    Ok([p(a)?, p(b)?])
}

fn keyed<'a>(tokens: &[&'a str], key: &str) -> Option<&'a str> {
    tokens.iter().find_map(|t| t.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

fn parse_usize_key(tokens: &[&str], key: &str) -> Result<usize> {
    keyed(tokens, key)
        .ok_or_else(|| Error::Format(format!("missing `{key}=`")))?
        .parse()
        .map_err(|_| Error::Format(format!("bad `{key}`")))
}

fn parse_gain(tokens: &[&str]) -> Result<f64> {
    keyed(tokens, "gain")
        .map_or(Ok(1.0), |g| g.parse().map_err(|_| Error::Format(format!("bad gain `{g}`"))))
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let bias = !tokens.contains(&"nobias");
        let arg = |i: usize| {
            tokens
                .get(i)
                .copied()
                .ok_or_else(|| Error::Format(format!("`{line}`: missing argument")))
        };
        Ok(match *tokens.first().unwrap_or(&"") {
            "conv" => LayerKind::Conv {
                kernel: parse_pair(arg(1)?)?,
                out: parse_usize_key(&tokens, "out")?,
                bias,
            },
            "conv1x1" => LayerKind::Conv {
                kernel: [1, 1],
                out: parse_usize_key(&tokens, "out")?,
                bias,
            },
            "relu" => LayerKind::Relu,
            "avg_pool" => LayerKind::AvgPool {
                factor: parse_pair(arg(1)?)?,
            },
            "unpool_deconv" => LayerKind::UnpoolDeconv {
                kernel: parse_pair(arg(1)?)?,
                out: parse_usize_key(&tokens, "out")?,
                factor: parse_pair(keyed(&tokens, "up").unwrap_or("2x2"))?,
                bias,
            },
            "skip_emit" => LayerKind::SkipEmit { tag: arg(1)?.into() },
            "skip_join" => LayerKind::SkipJoin {
                tag: arg(1)?.into(),
                mode: match arg(2)? {
                    "add" => JoinMode::Add,
                    "concat" => JoinMode::Concat,
                    m => return Err(Error::Format(format!("unknown join mode `{m}`"))),
                },
            },
            "affine_bn" => LayerKind::AffineBn,
            "batch_norm" => LayerKind::BatchNorm,
            "haar_pool" => LayerKind::HaarPool {
                factor: parse_pair(arg(1)?)?,
                gain: parse_gain(&tokens)?,
            },
            "haar_unpool" => LayerKind::HaarUnpool {
                factor: parse_pair(arg(1)?)?,
                gain: parse_gain(&tokens)?,
            },
            other => return Err(Error::Format(format!("unknown layer `{other}`"))),
        })
    }
}

const SPEC_HEADER: &str = "framelet-net v1";

/// Plain-text form:
///
/// ```text
/// framelet-net v1
/// input_channels 8
/// code_at 4
/// conv 3x3 out=8
/// relu
/// ...
/// ```
///
/// Blank lines and `#` comments are ignored.
impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{SPEC_HEADER}")?;
        writeln!(f, "input_channels {}", self.input_channels)?;
        writeln!(f, "code_at {}", self.code_at)?;
        for l in &self.layers {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}

impl FromStr for NetworkSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        ensure!(lines.next() == Some(SPEC_HEADER), Format, "missing `{SPEC_HEADER}` header");
        let mut header = |key: &str| -> Result<usize> {
            let line = lines.next().unwrap_or("");
            line.strip_prefix(key)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("expected `{key} N`, got `{line}`")))
        };
        let input_channels = header("input_channels")?;
        let code_at = header("code_at")?;
        let layers = lines.map(str::parse).collect::<Result<Vec<_>>>()?;
        NetworkSpec::new(input_channels, layers, code_at)
    }
}

/// Options for [`build_unet`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnetOptions {
    pub convs_per_stage: usize,
    pub affine_bn: bool,
}

impl Default for UnetOptions {
    fn default() -> Self {
        Self {
            convs_per_stage: 3,
            affine_bn: false,
        }
    }
}

/// U-Net with `stages` poolings: encoder stages of `convs_per_stage`
/// `conv3x3 → [affine_bn] → relu` blocks at `base·2^s` channels, 2×2 average
/// pooling, a bottleneck, and decoder stages starting with
/// `unpool_deconv → [affine_bn] → relu` and a concat skip join, ending in a
/// 1×1 convolution back to `2·n_coils` channels.
pub fn build_unet(stages: usize, base_channels: usize, n_coils: usize, opts: UnetOptions) -> Result<NetworkSpec> {
    ensure!(stages >= 1, InvalidArgument, "U-Net needs at least one stage");
    ensure!(base_channels >= 1 && n_coils >= 1, InvalidArgument, "empty U-Net");
    ensure!(opts.convs_per_stage >= 1, InvalidArgument, "stages need at least one convolution");
    let io = 2 * n_coils;
    let mut layers = Vec::new();
    let block = |layers: &mut Vec<LayerKind>, out: usize| {
        layers.push(LayerKind::conv([3, 3], out));
        if opts.affine_bn {
            layers.push(LayerKind::AffineBn);
        }
        layers.push(LayerKind::Relu);
    };
    for s in 0..stages {
        for _ in 0..opts.convs_per_stage {
            block(&mut layers, base_channels << s);
        }
        layers.push(LayerKind::emit(&format!("s{s}")));
        layers.push(LayerKind::AvgPool { factor: [2, 2] });
    }
    for _ in 0..opts.convs_per_stage {
        block(&mut layers, base_channels << stages);
    }
    let code_at = layers.len();
    for s in (0..stages).rev() {
        let c = base_channels << s;
        layers.push(LayerKind::UnpoolDeconv {
            kernel: [3, 3],
            out: c,
            factor: [2, 2],
            bias: true,
        });
        if opts.affine_bn {
            layers.push(LayerKind::AffineBn);
        }
        layers.push(LayerKind::Relu);
        layers.push(LayerKind::join(&format!("s{s}"), JoinMode::Concat));
        for _ in 0..opts.convs_per_stage.saturating_sub(1).max(1) {
            block(&mut layers, c);
        }
    }
    layers.push(LayerKind::conv1x1(io));
    NetworkSpec::new(io, layers, code_at)
}

/// Checks that `extents` are divisible by `2^stages`.
pub fn check_unet_extents(stages: usize, extents: [usize; 2]) -> Result<()> {
    let f = 1usize << stages;
    ensure!(
        extents[0] % f == 0 && extents[1] % f == 0,
        InvalidArgument,
        "extents {extents:?} not divisible by 2^{stages}"
    );
    Ok(())
}
