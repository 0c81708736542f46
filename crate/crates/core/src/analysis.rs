//! Analytic parameter, MAC and activation-memory counts.
//!
//! One multiply-accumulate counts as one FLOP. Every line of a
//! [`FlopsReport`] belongs to exactly one [`Bucket`].

use std::fmt::{self, Write as _};

use crate::error::Result;
use crate::model::config::ModelConfig;
use crate::model::forward::model_forward;
use crate::model::params::{param_spec, Weights};
use crate::selective_scan::{scan_2d_macs, Scan2dOptions, DISCRETIZE_MACS_PER_STATE, SCAN_MACS_PER_STATE};
use crate::tensor::autodiff::LAYERNORM_MACS_PER_ELEMENT;
use crate::tensor::macs::{Bucket, MacCounts, MacProbe};
use crate::tensor::NdArray;

/// Bytes per activation element in the memory estimate (single precision).
pub const ACTIVATION_BYTES: u64 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamRow {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamTable {
    pub rows: Vec<ParamRow>,
    pub total: usize,
}

impl fmt::Display for ParamTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
        writeln!(f, "{:<width$}  {:<16}  {:>12}", "name", "shape", "params")?;
        for r in &self.rows {
            writeln!(f, "{:<width$}  {:<16}  {:>12}", r.name, format!("{:?}", r.shape), r.count)?;
        }
        write!(f, "{:<width$}  {:<16}  {:>12}", "total", "", self.total)
    }
}

pub fn count_params(config: &ModelConfig) -> ParamTable {
    let rows: Vec<ParamRow> = param_spec(config)
        .into_iter()
        .map(|(name, shape)| ParamRow {
            count: shape.iter().product(),
            name,
            shape,
        })
        .collect();
    let total = rows.iter().map(|r| r.count).sum();
    ParamTable { rows, total }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopLine {
    pub name: String,
    pub bucket: Bucket,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopsReport {
    pub model: String,
    pub height: usize,
    pub width: usize,
    pub lines: Vec<FlopLine>,
    /// Largest single-op activation footprint in bytes.
    pub peak_bytes: u64,
}

impl FlopsReport {
    fn new(model: &str, height: usize, width: usize) -> Self {
        Self {
            model: model.to_string(),
            height,
            width,
            lines: Vec::new(),
            peak_bytes: 0,
        }
    }

    fn push(&mut self, name: impl Into<String>, bucket: Bucket, macs: u64) {
        self.lines.push(FlopLine {
            name: name.into(),
            bucket,
            macs,
        });
    }

    fn live(&mut self, elements: u64) {
        self.peak_bytes = self.peak_bytes.max(elements * ACTIVATION_BYTES);
    }

    pub fn bucket(&self, bucket: Bucket) -> u64 {
        self.lines.iter().filter(|l| l.bucket == bucket).map(|l| l.macs).sum()
    }

    pub fn token_mixing(&self) -> u64 {
        self.bucket(Bucket::TokenMixing)
    }

    pub fn channel_mixing(&self) -> u64 {
        self.bucket(Bucket::ChannelMixing)
    }

    pub fn other(&self) -> u64 {
        self.bucket(Bucket::Other)
    }

    pub fn total(&self) -> u64 {
        self.lines.iter().map(|l| l.macs).sum()
    }

    pub fn counts(&self) -> MacCounts {
        let mut c = MacCounts::default();
        for l in &self.lines {
            c.by_bucket[l.bucket.index()] += l.macs;
        }
        c
    }

    pub const CSV_HEADER: &'static str = "model,resolution,token_mixing,channel_mixing,other,total,peak_bytes";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{}x{},{},{},{},{},{}",
            self.model,
            self.height,
            self.width,
            self.token_mixing(),
            self.channel_mixing(),
            self.other(),
            self.total(),
            self.peak_bytes
        )
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} @ {}x{}", self.model, self.height, self.width);
        for l in &self.lines {
            let _ = writeln!(s, "  {:<28} {:<15} {:>18}", l.name, l.bucket.label(), l.macs);
        }
        for b in Bucket::ALL {
            let _ = writeln!(s, "{:<15} {:>12.4} G", b.label(), giga(self.bucket(b)));
        }
        let _ = writeln!(s, "{:<15} {:>12.4} G", "total", giga(self.total()));
        let _ = write!(s, "{:<15} {:>12} B", "peak_bytes", self.peak_bytes);
        s
    }
}

pub fn giga(macs: u64) -> f64 {
    macs as f64 / 1e9
}

/// Line-by-line MAC count of one forward pass at `height × width` pixels.
///
/// Mirrors the operations recorded by the tape: token mixing is the 2D scan,
/// channel mixing is `in_proj` and `out_proj`, everything else is "other".
pub fn count_flops(config: &ModelConfig, height: usize, width: usize) -> Result<FlopsReport> {
    config.validate()?;
    let (gh, gw) = config.token_grid(height, width)?;
    let n = (gh * gw) as u64;
    let (d, di, m, r) = (
        config.d_model as u64,
        config.d_inner() as u64,
        config.state_size as u64,
        config.dt_rank as u64,
    );
    let (p, k, classes) = (config.patch as u64, config.conv_k as u64, config.num_classes as u64);
    let g = config.train_grid() as u64;
    let options = Scan2dOptions {
        average_paths: config.average_paths,
    };
    let ln = LAYERNORM_MACS_PER_ELEMENT;
    let mut rep = FlopsReport::new("PlainMamba", height, width);
    let other = Bucket::Other;

    rep.push("patch_embed", other, n * 3 * p * p * d + n * d);
    rep.live(2 * n * 3 * p * p);
    if (gh, gw) != (config.train_grid(), config.train_grid()) {
        rep.push("pos_embed.resample", other, n * g * g * d);
    }
    rep.push("pos_embed.add", other, n * d);

    let (scan_token, scan_other) = scan_2d_macs(n as usize, di as usize, m as usize, options);
    for _ in 0..config.depth {
        rep.push("block.A", other, 2 * di * m);
        rep.push("block.norm", other, ln * n * d);
        rep.push("block.in_proj", Bucket::ChannelMixing, n * d * 2 * di);
        rep.push("block.conv", other, n * di * k * k + n * di);
        rep.push("block.silu", other, 2 * n * di);
        rep.push("block.x_proj", other, n * di * (r + 2 * m));
        rep.push("block.dt_proj", other, n * r * di + 2 * n * di);
        rep.push("block.scan", Bucket::TokenMixing, scan_token);
        rep.push("block.scan.discretize", other, scan_other);
        rep.push("block.gate", other, n * di);
        rep.push("block.out_proj", Bucket::ChannelMixing, n * di * d);
        rep.push("block.residual", other, n * d);
    }
    rep.live(n * (3 * di + 2 * m));
    rep.live(n * (d + 2 * di));

    rep.push("norm", other, ln * n * d);
    rep.push("pool", other, n * d);
    rep.push("head", other, d * classes + classes);
    merge_lines(&mut rep);
    Ok(rep)
}

/// Sums repeated per-block lines into one line each, preserving order.
fn merge_lines(rep: &mut FlopsReport) {
    let mut merged: Vec<FlopLine> = Vec::new();
    for l in rep.lines.drain(..) {
        match merged.iter_mut().find(|m| m.name == l.name) {
            Some(m) => m.macs += l.macs,
            None => merged.push(l),
        }
    }
    rep.lines = merged;
}

/// Closed-form total of [`count_flops`], written without buckets or lines.
pub fn recount_total(config: &ModelConfig, height: usize, width: usize) -> Result<u64> {
    let (gh, gw) = config.token_grid(height, width)?;
    let n = (gh * gw) as u64;
    let (d, di, m, r) = (
        config.d_model as u64,
        config.d_inner() as u64,
        config.state_size as u64,
        config.dt_rank as u64,
    );
    let (p, k, c) = (config.patch as u64, config.conv_k as u64, config.num_classes as u64);
    let g = config.train_grid() as u64;
    let resample = if gh == gw && gh as u64 == g { 0 } else { g * g * d };
    let avg = u64::from(config.average_paths);
    let per_token_block = d * (4 + 1)
        + di * (3 * d + k * k + 2 * r + 2 * m + 6 + avg)
        + 4 * di * m * (SCAN_MACS_PER_STATE + DISCRETIZE_MACS_PER_STATE)
        + 4 * di
        + 3 * di;
    let per_block = n * per_token_block + 2 * di * m;
    let stem = n * (3 * p * p * d + 2 * d + resample);
    let tail = n * d * 5 + d * c + c;
    Ok(stem + config.depth as u64 * per_block + tail)
}

/// MAC counts observed while running the forward pass on a constant image.
pub fn instrumented_flops(config: &ModelConfig, weights: &Weights, height: usize, width: usize) -> Result<MacCounts> {
    let image = NdArray::full(&[height, width, 3], 0.5);
    let probe = MacProbe::start();
    model_forward(&image, weights, config)?;
    Ok(probe.finish())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBaselineConfig {
    pub depth: usize,
    pub d_model: usize,
    pub mlp_ratio: usize,
    pub patch: usize,
    pub heads: usize,
    pub num_classes: usize,
}

impl AttentionBaselineConfig {
    /// ViT/DeiT layout widened to 224 channels.
    pub fn deit_c224() -> Self {
        Self {
            depth: 12,
            d_model: 224,
            mlp_ratio: 4,
            patch: 16,
            heads: 4,
            num_classes: 1000,
        }
    }
}

/// Dense-product MAC count of a plain attention encoder (no class token).
///
/// Token mixing is the whole attention sublayer: QKV projection, scores,
/// attention-weighted values and output projection. Channel mixing is the
/// MLP. Element-wise work (softmax, norms, activations) is not counted.
pub fn count_flops_attention(cfg: &AttentionBaselineConfig, height: usize, width: usize) -> Result<FlopsReport> {
    let p = cfg.patch;
    if p == 0 || height == 0 || width == 0 || height % p != 0 || width % p != 0 {
        return Err(crate::error::Error::Config(format!(
            "input {height}x{width} must be a non-zero multiple of the patch size {p}"
        )));
    }
    let n = ((height / p) * (width / p)) as u64;
    let (d, depth, pp) = (cfg.d_model as u64, cfg.depth as u64, p as u64);
    let hidden = cfg.mlp_ratio as u64 * d;
    let mut rep = FlopsReport::new("DeiT-C224", height, width);
    rep.push("patch_embed", Bucket::Other, n * 3 * pp * pp * d);
    rep.push("attention.qkv", Bucket::TokenMixing, depth * 3 * n * d * d);
    rep.push("attention.scores", Bucket::TokenMixing, depth * n * n * d);
    rep.push("attention.values", Bucket::TokenMixing, depth * n * n * d);
    rep.push("attention.proj", Bucket::TokenMixing, depth * n * d * d);
    rep.push("mlp", Bucket::ChannelMixing, depth * 2 * n * d * hidden);
    rep.push("head", Bucket::Other, d * cfg.num_classes as u64);
    rep.live(2 * n * 3 * pp * pp);
    rep.live(2 * cfg.heads as u64 * n * n);
    rep.live(n * (d + hidden));
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CurveModel {
    PlainMamba(String, ModelConfig),
    Attention(String, AttentionBaselineConfig),
}

impl CurveModel {
    pub fn report(&self, resolution: usize) -> Result<FlopsReport> {
        let (name, mut rep) = match self {
            CurveModel::PlainMamba(name, c) => (name, count_flops(c, resolution, resolution)?),
            CurveModel::Attention(name, c) => (name, count_flops_attention(c, resolution, resolution)?),
        };
        rep.model = name.clone();
        Ok(rep)
    }
}

/// One report per `(model, square resolution)` pair, models outermost.
pub fn scaling_curve(models: &[CurveModel], resolutions: &[usize]) -> Result<Vec<FlopsReport>> {
    models
        .iter()
        .flat_map(|m| resolutions.iter().map(move |&r| m.report(r)))
        .collect()
}

pub fn curve_csv(rows: &[FlopsReport]) -> String {
    let mut s = String::from(FlopsReport::CSV_HEADER);
    for r in rows {
        s.push('\n');
        s.push_str(&r.csv_row());
    }
    s.push('\n');
    s
}
