//! Synthetic loss functions with analytically exact gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, OracleError, Result};
use crate::math::{dot, RealVec, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Quadratic,
    #[serde(alias = "softplus-classifier", alias = "softplus_classifier")]
    Softplus,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "quadratic" => Ok(Self::Quadratic),
            "softplus" | "softplus-classifier" | "softplus_classifier" => Ok(Self::Softplus),
            other => Err(Error::config(format!("unknown model kind '{other}'"))),
        }
    }
}

fn default_scale() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

/// Recipe for a reproducible synthetic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticModelSpec {
    pub kind: ModelKind,
    pub dim: usize,
    pub seed: u64,
    /// Overall weight scale.
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Quadratic: draw a positive semi-definite curvature matrix.
    #[serde(default = "default_true")]
    pub convex: bool,
    /// Softplus: number of output classes.
    #[serde(default)]
    pub classes: Option<usize>,
    /// Softplus: hidden width.
    #[serde(default)]
    pub hidden: Option<usize>,
    /// Softplus: first-layer weights are constant on runs of this length
    /// (before the rough component is mixed in).
    #[serde(default)]
    pub smooth_block: Option<usize>,
    /// Softplus: fraction of first-layer weight energy that is i.i.d. noise.
    #[serde(default)]
    pub roughness: Option<f64>,
}

impl SyntheticModelSpec {
    pub fn new(kind: ModelKind, dim: usize, seed: u64) -> Self {
        Self {
            kind,
            dim,
            seed,
            scale: 1.0,
            convex: true,
            classes: None,
            hidden: None,
            smooth_block: None,
            roughness: None,
        }
    }

    pub const DEFAULT_CLASSES: usize = 10;
    pub const DEFAULT_HIDDEN: usize = 32;

    /// Fills every optional field with the value `build` would use.
    pub fn resolved(&self) -> Self {
        let mut s = self.clone();
        if s.kind == ModelKind::Softplus {
            s.classes.get_or_insert(Self::DEFAULT_CLASSES);
            s.hidden.get_or_insert(Self::DEFAULT_HIDDEN);
            s.smooth_block.get_or_insert(1);
            s.roughness.get_or_insert(1.0);
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::config(format!("model dim must be >= 2, got {}", self.dim)));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::config("model scale must be positive"));
        }
        let s = self.resolved();
        if s.kind == ModelKind::Softplus {
            if s.classes.unwrap() < 2 {
                return Err(Error::config("softplus classifier needs >= 2 classes"));
            }
            if s.hidden.unwrap() == 0 {
                return Err(Error::config("softplus hidden width must be positive"));
            }
            let k = s.smooth_block.unwrap();
            if k == 0 || !self.dim.is_multiple_of(k) {
                return Err(Error::config("smooth_block must divide dim"));
            }
            if !(0.0..=1.0).contains(&s.roughness.unwrap()) {
                return Err(Error::config("roughness must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<SyntheticModel> {
        self.validate()?;
        let s = self.resolved();
        let d = s.dim;
        let mut rng = RngStream::new(s.seed, 0x5EED);
        let model = match s.kind {
            ModelKind::Linear => {
                let g: Vec<f64> = (0..d).map(|_| s.scale * rng.standard_normal()).collect();
                SyntheticModel::linear(RealVec::from_raw(g))
            }
            ModelKind::Quadratic => {
                let mut m = vec![0.0; d * d];
                rng.fill_normal(&mut m);
                let mut a = vec![0.0; d * d];
                if s.convex {
                    // M^T M / D
                    for i in 0..d {
                        for j in 0..d {
                            let mut acc = 0.0;
                            for k in 0..d {
                                acc += m[k * d + i] * m[k * d + j];
                            }
                            a[i * d + j] = s.scale * acc / d as f64;
                        }
                    }
                } else {
                    for i in 0..d {
                        for j in 0..d {
                            a[i * d + j] = s.scale * 0.5 * (m[i * d + j] + m[j * d + i]) / (d as f64).sqrt();
                        }
                    }
                }
                let b: Vec<f64> = (0..d).map(|_| s.scale * rng.standard_normal()).collect();
                SyntheticModel::quadratic(a, RealVec::from_raw(b))?
            }
            ModelKind::Softplus => SyntheticModel::Softplus(SoftplusClassifier::random(&s, &mut rng)),
        };
        Ok(model)
    }
}

/// Two-layer network `z = W2 softplus(W1 x + b1) + b2` with the smooth margin
/// loss `f(x, y) = logsumexp_{j != y} z_j - z_y`. The loss is positive once
/// the other classes jointly outweigh the true one.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftplusClassifier {
    dim: usize,
    hidden: usize,
    classes: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl SoftplusClassifier {
    fn random(spec: &SyntheticModelSpec, rng: &mut RngStream) -> Self {
        let dim = spec.dim;
        let hidden = spec.hidden.unwrap();
        let classes = spec.classes.unwrap();
        let block = spec.smooth_block.unwrap();
        let rough = spec.roughness.unwrap();
        let row_scale = spec.scale / (dim as f64).sqrt();
        let mut w1 = Vec::with_capacity(hidden * dim);
        for _ in 0..hidden {
            let coarse: Vec<f64> = (0..dim / block).map(|_| rng.standard_normal()).collect();
            for i in 0..dim {
                let smooth = coarse[i / block];
                let noise = rng.standard_normal();
                w1.push(row_scale * ((1.0 - rough).sqrt() * smooth + rough.sqrt() * noise));
            }
        }
        let b1 = (0..hidden).map(|_| 0.5 * rng.standard_normal()).collect();
        let out_scale = 4.0 / (hidden as f64).sqrt();
        let w2 = (0..classes * hidden)
            .map(|_| out_scale * rng.standard_normal())
            .collect();
        let b2 = vec![0.0; classes];
        Self {
            dim,
            hidden,
            classes,
            w1,
            b1,
            w2,
            b2,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn pre_activations(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|h| dot(&self.w1[h * self.dim..(h + 1) * self.dim], x) + self.b1[h])
            .collect()
    }

    fn logits_from(&self, pre: &[f64]) -> Vec<f64> {
        let act: Vec<f64> = pre.iter().map(|&a| softplus(a)).collect();
        (0..self.classes)
            .map(|c| dot(&self.w2[c * self.hidden..(c + 1) * self.hidden], &act) + self.b2[c])
            .collect()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.logits_from(&self.pre_activations(x))
    }

    fn margin(&self, z: &[f64], y: usize) -> f64 {
        let m = z
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != y)
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = z
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != y)
            .map(|(_, v)| (v - m).exp())
            .sum();
        m + s.ln() - z[y]
    }

    fn loss(&self, x: &[f64], y: usize) -> f64 {
        self.margin(&self.logits(x), y)
    }

    fn gradient(&self, x: &[f64], y: usize) -> RealVec {
        let pre = self.pre_activations(x);
        let z = self.logits_from(&pre);
        // d loss / d z: softmax over the other classes, -1 on the true class.
        let m = z
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != y)
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut dz: Vec<f64> = z
            .iter()
            .enumerate()
            .map(|(j, v)| if j == y { 0.0 } else { (v - m).exp() })
            .collect();
        let total: f64 = dz.iter().sum();
        for v in &mut dz {
            *v /= total;
        }
        dz[y] = -1.0;
        let mut da = vec![0.0; self.hidden];
        for (c, g) in dz.iter().enumerate() {
            let row = &self.w2[c * self.hidden..(c + 1) * self.hidden];
            for (d, w) in da.iter_mut().zip(row) {
                *d += g * w;
            }
        }
        for (d, a) in da.iter_mut().zip(&pre) {
            *d *= sigmoid(*a);
        }
        let mut dx = vec![0.0; self.dim];
        for (h, g) in da.iter().enumerate() {
            let row = &self.w1[h * self.dim..(h + 1) * self.dim];
            for (o, w) in dx.iter_mut().zip(row) {
                *o += g * w;
            }
        }
        RealVec::from_raw(dx)
    }

    fn predict(&self, x: &[f64]) -> usize {
        let z = self.logits(x);
        let mut best = 0;
        for (j, v) in z.iter().enumerate() {
            if *v > z[best] {
                best = j;
            }
        }
        best
    }
}

fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// A synthetic loss `f(x, y)` with exact gradient.
#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticModel {
    /// `f(x) = g^T x`
    Linear {
        g: RealVec,
    },
    /// `f(x) = 1/2 x^T A x + b^T x`, `A` symmetric, row-major.
    Quadratic {
        a: Vec<f64>,
        b: RealVec,
    },
    Softplus(SoftplusClassifier),
}

impl SyntheticModel {
    pub fn linear(g: RealVec) -> Self {
        Self::Linear { g }
    }

    pub fn quadratic(a: Vec<f64>, b: RealVec) -> Result<Self> {
        let d = b.dim();
        if a.len() != d * d {
            return Err(Error::DimMismatch {
                expected: d * d,
                got: a.len(),
            });
        }
        Ok(Self::Quadratic { a, b })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Linear { g } => g.dim(),
            Self::Quadratic { b, .. } => b.dim(),
            Self::Softplus(net) => net.dim,
        }
    }

    pub fn is_classifier(&self) -> bool {
        matches!(self, Self::Softplus(_))
    }

    pub(crate) fn check_input(&self, x: &[f64], label: i64) -> Result<(), OracleError> {
        if x.len() != self.dim() {
            return Err(OracleError::DimMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if let Self::Softplus(net) = self {
            if label < 0 || label as usize >= net.classes {
                return Err(OracleError::Malformed(format!(
                    "label {label} outside 0..{}",
                    net.classes
                )));
            }
        }
        Ok(())
    }

    /// Unmetered loss. Labels are ignored by single-output models.
    pub fn loss(&self, x: &[f64], label: i64) -> f64 {
        match self {
            Self::Linear { g } => g.dot(x),
            Self::Quadratic { a, b } => {
                let d = b.dim();
                let mut quad = 0.0;
                for i in 0..d {
                    quad += x[i] * dot(&a[i * d..(i + 1) * d], x);
                }
                0.5 * quad + b.dot(x)
            }
            Self::Softplus(net) => net.loss(x, label as usize),
        }
    }

    /// Unmetered exact gradient.
    pub fn gradient(&self, x: &[f64], label: i64) -> RealVec {
        match self {
            Self::Linear { g } => g.clone(),
            Self::Quadratic { a, b } => {
                let d = b.dim();
                RealVec::from_raw((0..d).map(|i| dot(&a[i * d..(i + 1) * d], x) + b[i]).collect())
            }
            Self::Softplus(net) => net.gradient(x, label as usize),
        }
    }

    /// Predicted class; single-output models always predict 0.
    pub fn predict(&self, x: &[f64]) -> i64 {
        match self {
            Self::Softplus(net) => net.predict(x) as i64,
            _ => 0,
        }
    }
}
