//! Dense feed-forward networks.
//!
//! Parameters live in one flat `Vec<f64>`; layer `l` occupies a contiguous
//! block holding its `fan_out × fan_in` row-major weight matrix followed by its
//! `fan_out` biases. Optimizers work on the flat store directly.

mod batch;
mod forward;
mod graft;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use batch::{BatchEvaluator, PointLoss};
pub use forward::{forward, forward_generic, forward_jets_values};
pub use graft::{graft_smart_weights, GraftPlan};

use crate::{Error, Result};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }
}

/// Layer widths of a dense network.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub n_inputs: usize,
    pub hidden_widths: Vec<usize>,
    pub n_outputs: usize,
    pub activation: Activation,
}

/// Shape of one weight matrix plus bias vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
}

impl LayerShape {
    pub fn n_weights(&self) -> usize {
        self.fan_in * self.fan_out
    }

    pub fn n_params(&self) -> usize {
        self.n_weights() + self.fan_out
    }
}

impl Architecture {
    pub fn new(n_inputs: usize, hidden_widths: Vec<usize>, n_outputs: usize) -> Result<Self> {
        let arch = Architecture {
            n_inputs,
            hidden_widths,
            n_outputs,
            activation: Activation::Tanh,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// `depth` hidden layers of `width` neurons.
    pub fn uniform(n_inputs: usize, depth: usize, width: usize, n_outputs: usize) -> Result<Self> {
        Self::new(n_inputs, vec![width; depth], n_outputs)
    }

    /// Inputs (x, y); outputs (u, v, p, σxx, σxy, σyy); 8 × 40 tanh.
    pub fn cylinder() -> Self {
        Self::uniform(2, 8, 40, 6).expect("valid preset")
    }

    /// Inputs (x, t); output u; 4 × 40 tanh.
    pub fn burgers() -> Self {
        Self::uniform(2, 4, 40, 1).expect("valid preset")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_inputs == 0 || self.n_outputs == 0 {
            return Err(Error::InvalidArchitecture(
                "input and output counts must be at least 1".into(),
            ));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArchitecture(
                "hidden widths must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.hidden_widths.len() + 1
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut widths = Vec::with_capacity(self.hidden_widths.len() + 2);
        widths.push(self.n_inputs);
        widths.extend_from_slice(&self.hidden_widths);
        widths.push(self.n_outputs);
        widths
            .windows(2)
            .map(|w| LayerShape {
                fan_in: w[0],
                fan_out: w[1],
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layer_shapes().iter().map(LayerShape::n_params).sum()
    }

    /// Compact description, e.g. `2-40x8-6-tanh`.
    pub fn describe(&self) -> String {
        let hidden = if self.hidden_widths.iter().all(|&w| w == self.hidden_widths[0])
            && !self.hidden_widths.is_empty()
        {
            format!("{}x{}", self.hidden_widths[0], self.hidden_widths.len())
        } else {
            self.hidden_widths
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "{}-{}-{}-{}",
            self.n_inputs,
            hidden,
            self.n_outputs,
            self.activation.name()
        )
    }

    /// Inverse of [`describe`](Self::describe).
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad architecture description `{s}`"));
        let parts: Vec<&str> = s.split('-').collect();
        let [inputs, hidden, outputs, act] = parts[..] else {
            return Err(bad());
        };
        if act != Activation::Tanh.name() {
            return Err(bad());
        }
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad());
        let widths = match hidden.split_once('x') {
            Some((w, d)) => vec![num(w)?; num(d)?],
            None => hidden.split(',').map(num).collect::<Result<_>>()?,
        };
        Architecture::new(num(inputs)?, widths, num(outputs)?)
    }
}

/// Where a layer's values came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Xavier,
    ReducedVariance,
    Smart,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Xavier => "xavier",
            Provenance::ReducedVariance => "reduced_variance",
            Provenance::Smart => "smart",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "xavier" => Some(Provenance::Xavier),
            "reduced_variance" => Some(Provenance::ReducedVariance),
            "smart" => Some(Provenance::Smart),
            _ => None,
        }
    }
}

/// Flat weight and bias store with one provenance tag per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    shapes: Vec<LayerShape>,
    values: Vec<f64>,
    provenance: Vec<Provenance>,
}

impl Parameters {
    /// All-zero parameters for `arch`.
    pub fn zeros(arch: &Architecture, tag: Provenance) -> Self {
        let shapes = arch.layer_shapes();
        let n = shapes.iter().map(LayerShape::n_params).sum();
        Parameters {
            provenance: vec![tag; shapes.len()],
            shapes,
            values: vec![0.0; n],
        }
    }

    pub fn from_parts(
        arch: &Architecture,
        values: Vec<f64>,
        provenance: Vec<Provenance>,
    ) -> Result<Self> {
        let shapes = arch.layer_shapes();
        let n: usize = shapes.iter().map(LayerShape::n_params).sum();
        if values.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: values.len(),
            });
        }
        if provenance.len() != shapes.len() {
            return Err(Error::DimensionMismatch {
                expected: shapes.len(),
                actual: provenance.len(),
            });
        }
        Ok(Parameters {
            shapes,
            values,
            provenance,
        })
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn n_layers(&self) -> usize {
        self.shapes.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Replace the flat values, keeping shapes and tags.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Parameters {
            shapes: self.shapes.clone(),
            values,
            provenance: self.provenance.clone(),
        }
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn set_provenance(&mut self, layer: usize, tag: Provenance) {
        self.provenance[layer] = tag;
    }

    pub fn tag_all(&mut self, tag: Provenance) {
        self.provenance.iter_mut().for_each(|t| *t = tag);
    }

    /// Offset of layer `l` in the flat store.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.shapes[..l].iter().map(LayerShape::n_params).sum()
    }

    /// Range of layer `l` (weights then biases) in the flat store.
    pub fn layer_range(&self, l: usize) -> std::ops::Range<usize> {
        let start = self.layer_offset(l);
        start..start + self.shapes[l].n_params()
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        let start = self.layer_offset(l);
        &self.values[start..start + self.shapes[l].n_weights()]
    }

    pub fn biases(&self, l: usize) -> &[f64] {
        let r = self.layer_range(l);
        &self.values[r.start + self.shapes[l].n_weights()..r.end]
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.values[self.layer_range(l)]
    }

    /// Error unless the parameter shapes match `arch`.
    pub fn check(&self, arch: &Architecture) -> Result<()> {
        if self.shapes != arch.layer_shapes() {
            return Err(Error::ArchitectureMismatch {
                expected: arch.describe(),
                found: self.describe_shapes(),
            });
        }
        Ok(())
    }

    fn describe_shapes(&self) -> String {
        let mut s = self.shapes.first().map_or(0, |l| l.fan_in).to_string();
        for l in &self.shapes {
            s.push('-');
            s.push_str(&l.fan_out.to_string());
        }
        s
    }
}

fn layer_rng(seed: u64, layer: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(layer as u64);
    rng
}

/// Xavier-normal initialization: weights `N(0, 2/(fan_in+fan_out))`, zero biases.
///
/// Each layer draws from its own stream of the seeded generator, so layer `l`
/// of two architectures with equal shape at `l` receives identical weights.
pub fn init_xavier(arch: &Architecture, seed: u64) -> Parameters {
    let mut params = Parameters::zeros(arch, Provenance::Xavier);
    for (l, shape) in arch.layer_shapes().iter().enumerate() {
        let offset = params.layer_offset(l);
        let std = (2.0 / (shape.fan_in + shape.fan_out) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut rng = layer_rng(seed, l);
        for w in &mut params.values[offset..offset + shape.n_weights()] {
            *w = normal.sample(&mut rng);
        }
    }
    params
}

/// Xavier initialization with every weight divided by `factor`.
pub fn init_reduced_variance(arch: &Architecture, seed: u64, factor: f64) -> Result<Parameters> {
    if !(factor >= 1.0) || !factor.is_finite() {
        return Err(Error::InvalidFactor(factor));
    }
    let mut params = init_xavier(arch, seed);
    if factor == 1.0 {
        return Ok(params);
    }
    for l in 0..params.n_layers() {
        let r = params.layer_range(l);
        for v in &mut params.values[r] {
            *v /= factor;
        }
    }
    params.tag_all(Provenance::ReducedVariance);
    Ok(params)
}
