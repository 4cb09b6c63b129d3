//! Chain-structured macro search spaces.
//!
//! A space is an ordered list of searchable layers grouped into stages. Each
//! layer picks one operation from its stage's candidate list: either an
//! identity mapping or a MobileNetV2-style inverted residual block
//! (`MB{e}_K{k}[_SE]`). Architectures are vectors of per-layer op indices.
//!
//! Cost model: within a stage, the k-th non-identity block runs with the
//! geometry of the stage's k-th layer (the first one carries the stage's
//! stride and channel change). Identity placement therefore never changes
//! cost, and two architectures with the same non-identity sequence in every
//! stage are the same network. [`SearchSpace::canonicalize`] picks the
//! representative with identities sunk to the end of each stage.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default cap for [`SearchSpace::enumerate`].
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

const ARCH_DIGITS: &[u8; 36] = b"0123456789abcdefghijklmnopqrstuvwxyz";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Identity,
    MbBlock { expansion: u32, kernel: u32, se: bool },
}

/// One candidate operation of a layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OperationSpec {
    pub id: u8,
    pub kind: OpKind,
}

impl OperationSpec {
    pub fn is_identity(&self) -> bool {
        self.kind == OpKind::Identity
    }

    /// Parses `ID`, `MB3_K5` or `MB6_K7_SE`.
    pub fn parse(id: u8, name: &str) -> Result<Self> {
        let bad = || Error::InvalidSpace(format!("unknown operation name {name:?}"));
        if name == "ID" {
            return Ok(OperationSpec {
                id,
                kind: OpKind::Identity,
            });
        }
        let rest = name.strip_prefix("MB").ok_or_else(bad)?;
        let mut parts = rest.split('_');
        let expansion: u32 = parts.next().and_then(|e| e.parse().ok()).ok_or_else(bad)?;
        let kernel: u32 = parts
            .next()
            .and_then(|k| k.strip_prefix('K'))
            .and_then(|k| k.parse().ok())
            .ok_or_else(bad)?;
        let se = match parts.next() {
            None => false,
            Some("SE") => true,
            Some(_) => return Err(bad()),
        };
        if parts.next().is_some() || expansion == 0 || kernel == 0 || kernel % 2 == 0 {
            return Err(bad());
        }
        Ok(OperationSpec {
            id,
            kind: OpKind::MbBlock {
                expansion,
                kernel,
                se,
            },
        })
    }
}

impl fmt::Display for OperationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            OpKind::Identity => f.write_str("ID"),
            OpKind::MbBlock {
                expansion,
                kernel,
                se,
            } => {
                write!(f, "MB{expansion}_K{kernel}")?;
                if se {
                    f.write_str("_SE")?;
                }
                Ok(())
            }
        }
    }
}

/// A searchable layer with its nominal geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub ops: Vec<OperationSpec>,
    pub in_channels: u32,
    pub out_channels: u32,
    pub stride: u32,
    /// Side length of the input feature map.
    pub spatial_in: u32,
}

impl LayerSpec {
    pub fn spatial_out(&self) -> u32 {
        self.spatial_in.div_ceil(self.stride)
    }

    pub fn identity_index(&self) -> Option<u8> {
        self.ops.iter().find(|op| op.is_identity()).map(|op| op.id)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cost {
    pub flops: u64,
    pub params: u64,
}

impl std::ops::Add for Cost {
    type Output = Cost;
    fn add(self, rhs: Cost) -> Cost {
        Cost {
            flops: self.flops + rhs.flops,
            params: self.params + rhs.params,
        }
    }
}

/// How an identity choice is treated on a layer that downsamples or changes width.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StridedIdentity {
    /// Reject the space.
    #[default]
    Forbid,
    /// Accept it: the stage transition becomes a parameter-free resample
    /// (strided subsampling plus zero channel padding) when the whole stage
    /// is identity, and otherwise the first non-identity block takes over
    /// the stride.
    Skip,
}

/// One stage of a [`SpaceConfig`]: `layers` copies of a choice layer sharing
/// an operation list; only the first one strides or changes width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub layers: usize,
    pub out_channels: u32,
    pub stride: u32,
    pub ops: Vec<String>,
}

/// Declarative description of a search space, loadable from TOML or JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceConfig {
    pub name: String,
    /// Side length of the feature map entering the first searched stage.
    pub resolution: u32,
    /// Channels entering the first searched stage.
    pub in_channels: u32,
    #[serde(default)]
    pub strided_identity: StridedIdentity,
    /// Cost of the non-searched stem and head.
    #[serde(default)]
    pub fixed_cost: Cost,
    pub stages: Vec<StageConfig>,
}

impl SpaceConfig {
    /// Built-in presets: `bench-macro` and `mobilenet-21`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "bench-macro" => Ok(bench_macro_config()),
            "mobilenet-21" => Ok(mobilenet21_config()),
            other => Err(Error::Config(format!(
                "unknown space preset {other:?} (expected bench-macro or mobilenet-21)"
            ))),
        }
    }

    /// Loads a config from a `.json` or `.toml` file.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|ext| ext == "json") {
            Ok(serde_json::from_str(&text)?)
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }
    }

    pub fn build(&self) -> Result<SearchSpace> {
        build_space(self)
    }
}

/// Accepts a preset name or a path to a space config file.
pub fn resolve_space(spec: &str) -> Result<SearchSpace> {
    match SpaceConfig::preset(spec) {
        Ok(cfg) => cfg.build(),
        Err(_) if std::path::Path::new(spec).exists() => {
            SpaceConfig::load(std::path::Path::new(spec))?.build()
        }
        Err(e) => Err(e),
    }
}

/// A validated, immutable search space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchSpace {
    name: String,
    config: SpaceConfig,
    layers: Vec<LayerSpec>,
    stages: Vec<Range<usize>>,
    fixed_cost: Cost,
    /// Cost of each op at each layer's nominal geometry.
    block_costs: Vec<Vec<Cost>>,
    fingerprint: String,
}

/// Validates `config` and expands its stages into layers.
pub fn build_space(config: &SpaceConfig) -> Result<SearchSpace> {
    let invalid = |msg: String| Err(Error::InvalidSpace(msg));
    if config.stages.is_empty() {
        return invalid("no stages".into());
    }
    if config.resolution == 0 || config.in_channels == 0 {
        return invalid("resolution and in_channels must be positive".into());
    }

    let mut layers = Vec::new();
    let mut stages = Vec::new();
    let mut channels = config.in_channels;
    let mut spatial = config.resolution;
    for (s, stage) in config.stages.iter().enumerate() {
        if stage.layers == 0 {
            return invalid(format!("stage {s} has no layers"));
        }
        if stage.ops.is_empty() {
            return invalid(format!("stage {s} has an empty op list"));
        }
        if stage.ops.len() > ARCH_DIGITS.len() {
            return invalid(format!(
                "stage {s} has {} ops; at most {} are supported",
                stage.ops.len(),
                ARCH_DIGITS.len()
            ));
        }
        if stage.stride != 1 && stage.stride != 2 {
            return invalid(format!("stage {s} stride must be 1 or 2, got {}", stage.stride));
        }
        if stage.out_channels == 0 {
            return invalid(format!("stage {s} out_channels must be positive"));
        }
        let ops = stage
            .ops
            .iter()
            .enumerate()
            .map(|(i, name)| OperationSpec::parse(i as u8, name))
            .collect::<Result<Vec<_>>>()?;
        for (i, op) in ops.iter().enumerate() {
            if ops[..i].iter().any(|o| o.kind == op.kind) {
                return invalid(format!("stage {s} lists {op} twice"));
            }
        }
        let reshapes = stage.stride != 1 || stage.out_channels != channels;
        if reshapes
            && config.strided_identity == StridedIdentity::Forbid
            && ops.iter().any(OperationSpec::is_identity)
        {
            return invalid(format!(
                "stage {s} downsamples or changes width, so identity is not a legal choice \
                 (set strided_identity = \"skip\" to allow it)"
            ));
        }

        let start = layers.len();
        for i in 0..stage.layers {
            let (cin, stride) = if i == 0 {
                (channels, stage.stride)
            } else {
                (stage.out_channels, 1)
            };
            let layer = LayerSpec {
                ops: ops.clone(),
                in_channels: cin,
                out_channels: stage.out_channels,
                stride,
                spatial_in: spatial,
            };
            spatial = layer.spatial_out();
            layers.push(layer);
        }
        channels = stage.out_channels;
        stages.push(start..layers.len());
    }

    let block_costs = layers
        .iter()
        .map(|layer| layer.ops.iter().map(|op| block_cost(op, layer)).collect())
        .collect();
    let fingerprint = fingerprint_of(config)?;
    Ok(SearchSpace {
        name: config.name.clone(),
        config: config.clone(),
        layers,
        stages,
        fixed_cost: config.fixed_cost,
        block_costs,
        fingerprint,
    })
}

fn fingerprint_of(config: &SpaceConfig) -> Result<String> {
    // The name is cosmetic and does not enter the fingerprint.
    #[derive(Serialize)]
    struct View<'a> {
        resolution: u32,
        in_channels: u32,
        strided_identity: StridedIdentity,
        fixed_cost: Cost,
        stages: &'a [StageConfig],
    }
    let bytes = serde_json::to_vec(&View {
        resolution: config.resolution,
        in_channels: config.in_channels,
        strided_identity: config.strided_identity,
        fixed_cost: config.fixed_cost,
        stages: &config.stages,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Multiply-accumulate count and weight count of one block at a layer's geometry.
///
/// Inverted residual: 1x1 expand (skipped when e = 1) at the input resolution,
/// kxk depthwise at the output resolution, optional squeeze-excite with two
/// FC layers over `hidden / 4` squeezed channels, then 1x1 project.
pub fn block_cost(op: &OperationSpec, layer: &LayerSpec) -> Cost {
    let OpKind::MbBlock {
        expansion,
        kernel,
        se,
    } = op.kind
    else {
        return Cost::default();
    };
    let cin = layer.in_channels as u64;
    let cout = layer.out_channels as u64;
    let hidden = expansion as u64 * cin;
    let hw_in = (layer.spatial_in as u64).pow(2);
    let hw_out = (layer.spatial_out() as u64).pow(2);
    let k2 = (kernel as u64).pow(2);

    let mut cost = Cost::default();
    if expansion != 1 {
        cost.flops += hw_in * cin * hidden;
        cost.params += cin * hidden;
    }
    cost.flops += hw_out * hidden * k2;
    cost.params += hidden * k2;
    if se {
        let squeezed = (hidden / 4).max(1);
        cost.flops += 2 * hidden * squeezed;
        cost.params += 2 * hidden * squeezed;
    }
    cost.flops += hw_out * hidden * cout;
    cost.params += hidden * cout;
    cost
}

/// Dense kxk convolution cost (stem/head layers).
pub fn conv_cost(cin: u64, cout: u64, kernel: u64, spatial_out: u64) -> Cost {
    let params = cin * cout * kernel * kernel;
    Cost {
        flops: spatial_out * spatial_out * params,
        params,
    }
}

/// Fully connected layer cost.
pub fn fc_cost(cin: u64, cout: u64) -> Cost {
    Cost {
        flops: cin * cout,
        params: cin * cout,
    }
}

impl SearchSpace {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn config(&self) -> &SpaceConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Number of candidate ops at `layer`.
    pub fn arity(&self, layer: usize) -> usize {
        self.layers[layer].ops.len()
    }

    pub fn stages(&self) -> &[Range<usize>] {
        &self.stages
    }

    pub fn fixed_cost(&self) -> Cost {
        self.fixed_cost
    }

    /// Hex SHA-256 over the cost-relevant structure of the space.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Product of the per-layer op counts, saturating at `u128::MAX`.
    pub fn size(&self) -> u128 {
        self.layers
            .iter()
            .try_fold(1u128, |acc, l| acc.checked_mul(l.ops.len() as u128))
            .unwrap_or(u128::MAX)
    }

    pub fn check(&self, arch: &Architecture) -> Result<()> {
        if arch.len() != self.layers.len() {
            return Err(Error::InvalidArchitecture(format!(
                "{arch} has {} layers, space has {}",
                arch.len(),
                self.layers.len()
            )));
        }
        for (l, (&c, layer)) in arch.choices().iter().zip(&self.layers).enumerate() {
            if c as usize >= layer.ops.len() {
                return Err(Error::InvalidArchitecture(format!(
                    "{arch}: choice {c} at layer {l} out of range (layer has {} ops)",
                    layer.ops.len()
                )));
            }
        }
        Ok(())
    }

    /// Builds a checked architecture.
    pub fn arch(&self, choices: Vec<u8>) -> Result<Architecture> {
        let arch = Architecture::new(choices);
        self.check(&arch)?;
        Ok(arch)
    }

    pub fn parse_arch(&self, s: &str) -> Result<Architecture> {
        let arch: Architecture = s.parse()?;
        self.check(&arch)?;
        Ok(arch)
    }

    fn is_identity(&self, layer: usize, choice: u8) -> bool {
        self.layers[layer].ops[choice as usize].is_identity()
    }

    /// FLOPs and parameters of `arch`, including the fixed stem/head cost.
    ///
    /// Panics if `arch` is not valid in this space.
    pub fn cost(&self, arch: &Architecture) -> Cost {
        let choices = arch.choices();
        assert_eq!(choices.len(), self.layers.len(), "architecture length mismatch");
        let mut total = self.fixed_cost;
        for stage in &self.stages {
            let mut slot = stage.start;
            for l in stage.clone() {
                let c = choices[l];
                if !self.is_identity(l, c) {
                    total = total + self.block_costs[slot][c as usize];
                    slot += 1;
                }
            }
        }
        total
    }

    /// Multiply-accumulate count (1 MAC = 1 FLOP).
    pub fn flops(&self, arch: &Architecture) -> u64 {
        self.cost(arch).flops
    }

    /// Weight count; batch-norm and bias terms are not counted.
    pub fn params(&self, arch: &Architecture) -> u64 {
        self.cost(arch).params
    }

    /// Moves identity choices behind the non-identity ones within each stage,
    /// keeping the order of the non-identity ops.
    pub fn canonicalize(&self, arch: &Architecture) -> Architecture {
        let choices = arch.choices();
        let mut out = Vec::with_capacity(choices.len());
        for stage in &self.stages {
            let start = out.len();
            out.extend(
                stage
                    .clone()
                    .map(|l| choices[l])
                    .filter(|&c| !self.is_identity(stage.start, c)),
            );
            if let Some(id) = self.layers[stage.start].identity_index() {
                out.resize(start + stage.len(), id);
            }
        }
        Architecture::new(out)
    }

    pub fn is_canonical(&self, arch: &Architecture) -> bool {
        self.canonicalize(arch) == *arch
    }

    /// Every architecture in lexicographic order. Fails when the space is
    /// larger than `cap`.
    pub fn enumerate_capped(&self, cap: u128) -> Result<ArchIter<'_>> {
        let size = self.size();
        if size > cap {
            return Err(Error::SpaceTooLarge { size, cap });
        }
        Ok(ArchIter {
            space: self,
            next: Some(vec![0; self.layers.len()]),
        })
    }

    /// [`Self::enumerate_capped`] with [`DEFAULT_ENUMERATION_CAP`].
    pub fn enumerate(&self) -> Result<ArchIter<'_>> {
        self.enumerate_capped(DEFAULT_ENUMERATION_CAP)
    }

    /// Draws each layer's op independently and uniformly.
    pub fn random_arch<R: Rng + ?Sized>(&self, rng: &mut R) -> Architecture {
        Architecture::new(
            self.layers
                .iter()
                .map(|l| rng.random_range(0..l.ops.len()) as u8)
                .collect(),
        )
    }

    /// Keeps `prefix` and draws the remaining layers uniformly.
    pub fn random_completion<R: Rng + ?Sized>(&self, prefix: &[u8], rng: &mut R) -> Architecture {
        let mut choices = prefix.to_vec();
        choices.extend(
            self.layers[prefix.len()..]
                .iter()
                .map(|l| rng.random_range(0..l.ops.len()) as u8),
        );
        Architecture::new(choices)
    }

    /// Human-readable op names, e.g. `MB3_K3 ID MB6_K5`.
    pub fn describe(&self, arch: &Architecture) -> String {
        arch.choices()
            .iter()
            .zip(&self.layers)
            .map(|(&c, l)| l.ops[c as usize].to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Lexicographic odometer over a space.
pub struct ArchIter<'a> {
    space: &'a SearchSpace,
    next: Option<Vec<u8>>,
}

impl Iterator for ArchIter<'_> {
    type Item = Architecture;

    fn next(&mut self) -> Option<Architecture> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        for l in (0..succ.len()).rev() {
            succ[l] += 1;
            if (succ[l] as usize) < self.space.arity(l) {
                self.next = Some(succ);
                break;
            }
            succ[l] = 0;
        }
        Some(Architecture::new(current))
    }
}

/// Per-layer op indices. Ordering is lexicographic, which coincides with the
/// ordering of arch-strings.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Architecture(Vec<u8>);

impl Architecture {
    pub fn new(choices: Vec<u8>) -> Self {
        Architecture(choices)
    }

    pub fn choices(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Arch-string: one base-36 digit per layer, layer 1 first.
impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &c in &self.0 {
            fmt::Write::write_char(f, ARCH_DIGITS[c as usize] as char)?;
        }
        Ok(())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|ch| {
                ch.to_digit(36)
                    .filter(|_| !ch.is_ascii_uppercase())
                    .map(|d| d as u8)
                    .ok_or_else(|| Error::InvalidArchitecture(format!("bad arch-string {s:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Architecture)
    }
}

impl Serialize for Architecture {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Architecture {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn stage(layers: usize, out_channels: u32, stride: u32, ops: &[&str]) -> StageConfig {
    StageConfig {
        layers,
        out_channels,
        stride,
        ops: ops.iter().map(|s| s.to_string()).collect(),
    }
}

/// CIFAR-10 macro space: 8 choice layers over {ID, MB3_K3, MB6_K5}.
fn bench_macro_config() -> SpaceConfig {
    let ops = ["ID", "MB3_K3", "MB6_K5"];
    // 3x3 stem 3->32 at 32x32, 1x1 head 256->1280 at 4x4, FC 1280->10.
    let fixed = conv_cost(3, 32, 3, 32) + conv_cost(256, 1280, 1, 4) + fc_cost(1280, 10);
    SpaceConfig {
        name: "bench-macro".into(),
        resolution: 32,
        in_channels: 32,
        strided_identity: StridedIdentity::Skip,
        fixed_cost: fixed,
        stages: vec![
            stage(2, 64, 2, &ops),
            stage(3, 128, 2, &ops),
            stage(3, 256, 2, &ops),
        ],
    }
}

/// ImageNet MobileNetV2-like space: 21 choice layers over 13 candidates.
fn mobilenet21_config() -> SpaceConfig {
    let ops = [
        "ID", "MB3_K3", "MB3_K5", "MB3_K7", "MB6_K3", "MB6_K5", "MB6_K7", "MB3_K3_SE",
        "MB3_K5_SE", "MB3_K7_SE", "MB6_K3_SE", "MB6_K5_SE", "MB6_K7_SE",
    ];
    // 3x3 stem 3->32 stride 2 (224 -> 112), fixed MB1_K3 32->16 at 112,
    // 1x1 head 320->1280 at 7x7, FC 1280->1000.
    let mb1 = LayerSpec {
        ops: vec![],
        in_channels: 32,
        out_channels: 16,
        stride: 1,
        spatial_in: 112,
    };
    let mb1_cost = block_cost(
        &OperationSpec {
            id: 0,
            kind: OpKind::MbBlock {
                expansion: 1,
                kernel: 3,
                se: false,
            },
        },
        &mb1,
    );
    let fixed = conv_cost(3, 32, 3, 112) + mb1_cost + conv_cost(320, 1280, 1, 7) + fc_cost(1280, 1000);
    SpaceConfig {
        name: "mobilenet-21".into(),
        resolution: 112,
        in_channels: 16,
        strided_identity: StridedIdentity::Skip,
        fixed_cost: fixed,
        stages: vec![
            stage(4, 32, 2, &ops),
            stage(4, 40, 2, &ops),
            stage(4, 80, 2, &ops),
            stage(4, 96, 1, &ops),
            stage(4, 192, 2, &ops),
            stage(1, 320, 1, &ops),
        ],
    }
}
