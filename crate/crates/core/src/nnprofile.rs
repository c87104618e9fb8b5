//! Layer-wise workload tables for partitioned feature extractors.
//!
//! FLOPs count two operations per multiply-accumulate. Batch-norm, activation,
//! residual-add and pooling layers are charged one operation per output element.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("input must be at least 32 pixels and divisible by 32, got {h}x{w}")]
    Dimension { h: usize, w: usize },
    #[error("invalid layer '{name}': {reason}")]
    InvalidLayer { name: String, reason: String },
    #[error("invalid partition candidates: {0}")]
    InvalidCandidates(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerProfile {
    pub name: String,
    pub flops: u64,
    pub out_elements: u64,
    pub bytes_per_element: u8,
}

impl LayerProfile {
    pub fn new(
        name: impl Into<String>,
        flops: u64,
        out_elements: u64,
        bytes_per_element: u8,
    ) -> Result<Self, ProfileError> {
        let name = name.into();
        if name.is_empty() || name.contains([',', '\n', '\r']) {
            return Err(ProfileError::InvalidLayer {
                name,
                reason: "name must be non-empty and free of commas and newlines".into(),
            });
        }
        if out_elements == 0 {
            return Err(ProfileError::InvalidLayer {
                name,
                reason: "out_elements must be > 0".into(),
            });
        }
        if !matches!(bytes_per_element, 1 | 2 | 4) {
            return Err(ProfileError::InvalidLayer {
                name,
                reason: format!("bytes_per_element must be 1, 2 or 4, got {bytes_per_element}"),
            });
        }
        Ok(Self {
            name,
            flops,
            out_elements,
            bytes_per_element,
        })
    }

    pub fn out_bytes(&self) -> u64 {
        self.out_elements * u64::from(self.bytes_per_element)
    }
}

/// A cut after one of the profile's partition candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PartitionPoint(pub usize);

impl PartitionPoint {
    pub fn candidate_index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelProfile {
    layers: Vec<LayerProfile>,
    candidates: Vec<usize>,
    input_bytes: Option<u64>,
    prefix_flops: Vec<u64>,
}

impl ModelProfile {
    pub fn new(
        layers: Vec<LayerProfile>,
        candidates: Vec<usize>,
        input_bytes: Option<u64>,
    ) -> Result<Self, ProfileError> {
        if candidates.is_empty() {
            return Err(ProfileError::InvalidCandidates(
                "at least one candidate is required".into(),
            ));
        }
        if candidates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ProfileError::InvalidCandidates(
                "candidate indices must be strictly increasing".into(),
            ));
        }
        if let Some(&last) = candidates.last() {
            if last >= layers.len() {
                return Err(ProfileError::InvalidCandidates(format!(
                    "candidate {last} is out of range for {} layers",
                    layers.len()
                )));
            }
        }
        let mut prefix_flops = Vec::with_capacity(layers.len());
        let mut acc = 0u64;
        for l in &layers {
            acc = acc.checked_add(l.flops).ok_or_else(|| ProfileError::InvalidLayer {
                name: l.name.clone(),
                reason: "cumulative FLOPs overflow".into(),
            })?;
            prefix_flops.push(acc);
        }
        Ok(Self {
            layers,
            candidates,
            input_bytes,
            prefix_flops,
        })
    }

    pub fn layers(&self) -> &[LayerProfile] {
        &self.layers
    }

    /// Layer indices of the partition candidates, in order.
    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    pub fn input_bytes(&self) -> Option<u64> {
        self.input_bytes
    }

    pub fn cut(&self, candidate_index: usize) -> Option<PartitionPoint> {
        (candidate_index < self.candidates.len()).then_some(PartitionPoint(candidate_index))
    }

    pub fn cuts(&self) -> impl Iterator<Item = PartitionPoint> + '_ {
        (0..self.candidates.len()).map(PartitionPoint)
    }

    /// Index of the last device-side layer for `cut`. Panics if `cut` does not
    /// belong to this profile.
    pub fn layer_at(&self, cut: PartitionPoint) -> usize {
        self.candidates[cut.0]
    }

    pub fn cut_name(&self, cut: PartitionPoint) -> &str {
        &self.layers[self.layer_at(cut)].name
    }

    pub fn total_flops(&self) -> u64 {
        self.prefix_flops.last().copied().unwrap_or(0)
    }

    /// FLOPs executed on the device: layers `0..=layer_at(cut)`.
    pub fn device_flops(&self, cut: PartitionPoint) -> u64 {
        self.prefix_flops[self.layer_at(cut)]
    }

    /// FLOPs left for the server after `cut`.
    pub fn server_flops(&self, cut: PartitionPoint) -> u64 {
        self.total_flops() - self.device_flops(cut)
    }

    /// Size of the feature tensor transmitted at `cut`.
    pub fn intermediate_bytes(&self, cut: PartitionPoint) -> u64 {
        self.layers[self.layer_at(cut)].out_bytes()
    }

    /// Writes the profile as `name,flops,out_elements,bytes_per_element,is_candidate`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(self.to_csv().as_bytes())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(PROFILE_HEADER);
        s.push('\n');
        for (i, l) in self.layers.iter().enumerate() {
            let cand = self.candidates.binary_search(&i).is_ok();
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                l.name, l.flops, l.out_elements, l.bytes_per_element, cand
            );
        }
        s
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, ProfileError> {
        let mut lines = input.lines().enumerate();
        match lines.next() {
            Some((_, Ok(h))) if h.trim_end() == PROFILE_HEADER => {}
            Some((_, Ok(h))) => {
                return Err(ProfileError::Parse {
                    line: 1,
                    reason: format!("expected header '{PROFILE_HEADER}', found '{h}'"),
                })
            }
            Some((_, Err(e))) => return Err(e.into()),
            None => {
                return Err(ProfileError::Parse {
                    line: 1,
                    reason: "empty profile file".into(),
                })
            }
        }
        let mut layers = Vec::new();
        let mut candidates = Vec::new();
        for (i, line) in lines {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(ProfileError::Parse {
                    line: lineno,
                    reason: format!("expected 5 fields, found {}", fields.len()),
                });
            }
            let parse_err = |what: &str, v: &str| ProfileError::Parse {
                line: lineno,
                reason: format!("invalid {what} '{v}'"),
            };
            let flops: u64 = fields[1].parse().map_err(|_| parse_err("flops", fields[1]))?;
            let out: u64 = fields[2]
                .parse()
                .map_err(|_| parse_err("out_elements", fields[2]))?;
            let bpe: u8 = fields[3]
                .parse()
                .map_err(|_| parse_err("bytes_per_element", fields[3]))?;
            let cand = match fields[4] {
                "true" | "1" => true,
                "false" | "0" => false,
                v => return Err(parse_err("is_candidate", v)),
            };
            let layer =
                LayerProfile::new(fields[0], flops, out, bpe).map_err(|e| ProfileError::Parse {
                    line: lineno,
                    reason: e.to_string(),
                })?;
            if cand {
                candidates.push(layers.len());
            }
            layers.push(layer);
        }
        Self::new(layers, candidates, None)
    }
}

pub const PROFILE_HEADER: &str = "name,flops,out_elements,bytes_per_element,is_candidate";

/// Options for the built-in ResNet-50 + USAM backbone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResNetOptions {
    pub input_h: usize,
    pub input_w: usize,
    /// USAM cost as a fraction of the preceding stage's FLOPs.
    pub usam_flops_fraction: f64,
    pub bytes_per_element: u8,
}

impl Default for ResNetOptions {
    fn default() -> Self {
        Self {
            input_h: 224,
            input_w: 224,
            usam_flops_fraction: 0.01,
            bytes_per_element: 4,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Shape {
    c: u64,
    h: u64,
    w: u64,
}

impl Shape {
    fn elements(self) -> u64 {
        self.c * self.h * self.w
    }
}

fn conv_out(size: u64, kernel: u64, stride: u64, pad: u64) -> u64 {
    (size + 2 * pad - kernel) / stride + 1
}

/// FLOPs and output shape of a bias-free convolution.
fn conv(input: Shape, out_c: u64, kernel: u64, stride: u64, pad: u64) -> (u64, Shape) {
    let out = Shape {
        c: out_c,
        h: conv_out(input.h, kernel, stride, pad),
        w: conv_out(input.w, kernel, stride, pad),
    };
    let macs = out.elements() * input.c * kernel * kernel;
    (2 * macs, out)
}

/// One bottleneck block (stride on the 3x3 convolution) with an optional
/// projection shortcut.
fn bottleneck(input: Shape, mid: u64, stride: u64, project: bool) -> (u64, Shape) {
    let mut flops = 0;
    let (f, s1) = conv(input, mid, 1, 1, 0);
    flops += f + 2 * s1.elements();
    let (f, s2) = conv(s1, mid, 3, stride, 1);
    flops += f + 2 * s2.elements();
    let (f, s3) = conv(s2, mid * 4, 1, 1, 0);
    flops += f + s3.elements();
    if project {
        let (f, sp) = conv(input, mid * 4, 1, stride, 0);
        flops += f + sp.elements();
    }
    // residual add + relu
    flops += 2 * s3.elements();
    (flops, s3)
}

/// ResNet-50 backbone (stem and stages 1-4) with shape-preserving USAM blocks
/// after the stem activation and after stage 1.
///
/// Candidates, in order: stem convolution, first USAM, end of stage 2, end of
/// stage 3, end of stage 4.
pub fn build_resnet50_usam_profile(opts: &ResNetOptions) -> Result<ModelProfile, ProfileError> {
    let (h, w) = (opts.input_h, opts.input_w);
    if h < 32 || w < 32 || h % 32 != 0 || w % 32 != 0 {
        return Err(ProfileError::Dimension { h, w });
    }
    if !(opts.usam_flops_fraction.is_finite() && opts.usam_flops_fraction >= 0.0) {
        return Err(ProfileError::InvalidLayer {
            name: "usam".into(),
            reason: format!(
                "usam_flops_fraction must be >= 0, got {}",
                opts.usam_flops_fraction
            ),
        });
    }
    let bpe = opts.bytes_per_element;
    let usam_flops = |stage_flops: u64| (stage_flops as f64 * opts.usam_flops_fraction).round() as u64;

    let mut layers = Vec::new();
    let mut candidates = Vec::new();
    let push = |layers: &mut Vec<LayerProfile>, name: String, flops: u64, shape: Shape| {
        layers.push(LayerProfile::new(name, flops, shape.elements(), bpe)?);
        Ok::<usize, ProfileError>(layers.len() - 1)
    };

    let input = Shape {
        c: 3,
        h: h as u64,
        w: w as u64,
    };
    let (conv_flops, s) = conv(input, 64, 7, 2, 3);
    candidates.push(push(&mut layers, "stem.conv".into(), conv_flops, s)?);
    push(&mut layers, "stem.bn".into(), s.elements(), s)?;
    push(&mut layers, "stem.relu".into(), s.elements(), s)?;
    let stem_flops = conv_flops + 2 * s.elements();
    candidates.push(push(&mut layers, "usam1".into(), usam_flops(stem_flops), s)?);

    let mut s = Shape {
        c: s.c,
        h: conv_out(s.h, 3, 2, 1),
        w: conv_out(s.w, 3, 2, 1),
    };
    push(&mut layers, "stem.maxpool".into(), s.elements(), s)?;

    const STAGES: [(u64, usize, u64); 4] = [(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)];
    for (stage_no, &(mid, blocks, stride)) in STAGES.iter().enumerate() {
        let stage_no = stage_no + 1;
        let mut stage_flops = 0;
        let mut last = 0;
        for b in 0..blocks {
            let (f, out) = if b == 0 {
                bottleneck(s, mid, stride, true)
            } else {
                bottleneck(s, mid, 1, false)
            };
            stage_flops += f;
            s = out;
            last = push(&mut layers, format!("stage{stage_no}.block{b}"), f, s)?;
        }
        match stage_no {
            1 => {
                push(&mut layers, "usam2".into(), usam_flops(stage_flops), s)?;
            }
            2..=4 => candidates.push(last),
            _ => unreachable!(),
        }
    }

    ModelProfile::new(layers, candidates, Some(3 * (h * w) as u64))
}
