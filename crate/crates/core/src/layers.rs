//! Parameter access, initialization specs and the small blocks shared by
//! the encoder, associator and decoder.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robomask_tensor::{attention, linear, Bound, ParamStore, Tensor, Var};

use crate::error::Result;

/// Anything that can hand out named parameters as graph variables.
pub trait ParamSource {
    fn param(&self, name: &str) -> Result<Var>;
}

impl ParamSource for Bound<'_> {
    fn param(&self, name: &str) -> Result<Var> {
        Ok(self.get(name)?)
    }
}

/// Replaces selected parameters of a base source, e.g. to differentiate
/// with respect to one of them in a gradient check.
pub struct Overlay<'a> {
    base: &'a dyn ParamSource,
    vars: BTreeMap<String, Var>,
}

impl<'a> Overlay<'a> {
    pub fn new(base: &'a dyn ParamSource) -> Self {
        Self {
            base,
            vars: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, var: Var) -> Self {
        self.vars.insert(name.to_string(), var);
        self
    }
}

impl ParamSource for Overlay<'_> {
    fn param(&self, name: &str) -> Result<Var> {
        match self.vars.get(name) {
            Some(v) => Ok(v.clone()),
            None => self.base.param(name),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±1/√fan_in`.
    Uniform {
        fan_in: usize,
    },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn uniform(name: impl Into<String>, shape: &[usize], fan_in: usize) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::Uniform { fan_in },
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::Zeros,
        }
    }

    pub fn ones(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init: Init::Ones,
        }
    }
}

/// Materializes specs in order from one seeded stream.
pub fn init_params(specs: &[ParamSpec], seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for s in specs {
        match s.init {
            Init::Uniform { fan_in } => store.init_uniform(&s.name, &s.shape, fan_in, &mut rng),
            Init::Zeros => store.insert(s.name.clone(), Tensor::zeros(s.shape.clone())),
            Init::Ones => store.insert(s.name.clone(), Tensor::ones(s.shape.clone())),
        }
    }
    store
}

pub fn attn_specs(prefix: &str, c: usize) -> Vec<ParamSpec> {
    ["wq", "wk", "wv", "wo"]
        .iter()
        .map(|w| ParamSpec::uniform(format!("{prefix}.{w}"), &[c, c], c))
        .collect()
}

pub fn mlp_specs(prefix: &str, input: usize, hidden: usize, output: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::uniform(format!("{prefix}.w1"), &[input, hidden], input),
        ParamSpec::zeros(format!("{prefix}.b1"), &[hidden]),
        ParamSpec::uniform(format!("{prefix}.w2"), &[hidden, output], hidden),
        ParamSpec::zeros(format!("{prefix}.b2"), &[output]),
    ]
}

/// Projected single-head attention: `Attn(q·Wq, k·Wk, v·Wv)·Wo`.
pub fn attend(p: &dyn ParamSource, prefix: &str, q: &Var, k: &Var, v: &Var) -> Result<Var> {
    let q = q.matmul(&p.param(&format!("{prefix}.wq"))?)?;
    let k = k.matmul(&p.param(&format!("{prefix}.wk"))?)?;
    let v = v.matmul(&p.param(&format!("{prefix}.wv"))?)?;
    Ok(attention(&q, &k, &v)?.matmul(&p.param(&format!("{prefix}.wo"))?)?)
}

/// Two-layer perceptron with a ReLU in between.
pub fn mlp(p: &dyn ParamSource, prefix: &str, x: &Var) -> Result<Var> {
    let h = linear(
        x,
        &p.param(&format!("{prefix}.w1"))?,
        &p.param(&format!("{prefix}.b1"))?,
    )?
    .relu();
    Ok(linear(
        &h,
        &p.param(&format!("{prefix}.w2"))?,
        &p.param(&format!("{prefix}.b2"))?,
    )?)
}

pub const LN_EPS: f64 = 1e-5;

/// `[C, h, w]` grid to `[h·w, C]` tokens.
pub fn grid_to_tokens(grid: &Var) -> Result<Var> {
    let s = grid.shape();
    let (c, n) = (s[0], s[1] * s[2]);
    Ok(grid.reshape([c, n])?.t()?)
}

/// `[h·w, C]` tokens back to a `[C, h, w]` grid.
pub fn tokens_to_grid(tokens: &Var, h: usize, w: usize) -> Result<Var> {
    let c = tokens.shape()[1];
    Ok(tokens.t()?.reshape([c, h, w])?)
}

/// Fixed 2-D sinusoidal encoding of normalized coordinates in `[0, 1]`.
///
/// Channels cycle through `sin x, cos x, sin y, cos y` at geometrically
/// spaced frequencies; `c` must be a multiple of 4.
pub fn position_code(x: f64, y: f64, c: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(c);
    for i in 0..c / 4 {
        let omega = PI * 2f64.powf(i as f64 * 0.5);
        out.extend([
            (omega * x).sin(),
            (omega * x).cos(),
            (omega * y).sin(),
            (omega * y).cos(),
        ]);
    }
    out
}

/// Encoding of every cell center of an `h×w` grid as `[h·w, c]`.
pub fn grid_position_codes(h: usize, w: usize, c: usize) -> Tensor {
    let mut data = Vec::with_capacity(h * w * c);
    for r in 0..h {
        for col in 0..w {
            data.extend(position_code(
                (col as f64 + 0.5) / w as f64,
                (r as f64 + 0.5) / h as f64,
                c,
            ));
        }
    }
    Tensor::new([h * w, c], data).expect("position code shape")
}
