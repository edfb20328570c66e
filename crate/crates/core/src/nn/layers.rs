use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::backend::Backend;
use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Normal { std: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

pub(crate) const LEAKY_SLOPE: f64 = 0.01;

#[derive(Default)]
pub(crate) struct Registry {
    pub params: Vec<ParamSpec>,
}

impl Registry {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> ParamId {
        self.params.push(ParamSpec { name, shape, init });
        ParamId(self.params.len() - 1)
    }

    /// Cubic convolution with He-normal weights.
    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, bias: bool) -> Conv {
        let fan_in = (cin * k * k * k) as f64;
        let w = self.add(
            alloc::format!("{name}.weight"),
            vec![cout, cin, k, k, k],
            Init::Normal {
                std: num_traits::Float::sqrt(2.0 / fan_in),
            },
        );
        let b = bias.then(|| self.add(alloc::format!("{name}.bias"), vec![cout], Init::Zeros));
        Conv {
            w,
            b,
            stride,
            pad: k / 2,
        }
    }

    pub fn norm(&mut self, name: &str, c: usize) -> Norm {
        Norm {
            gamma: self.add(alloc::format!("{name}.gamma"), vec![c], Init::Ones),
            beta: self.add(alloc::format!("{name}.beta"), vec![c], Init::Zeros),
        }
    }

    pub fn dense(&mut self, name: &str, inputs: usize, outputs: usize) -> Dense {
        Dense {
            w: self.add(
                alloc::format!("{name}.weight"),
                vec![outputs, inputs],
                Init::Normal {
                    std: num_traits::Float::sqrt(1.0 / inputs as f64),
                },
            ),
            b: self.add(alloc::format!("{name}.bias"), vec![outputs], Init::Zeros),
        }
    }
}

pub(crate) struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn run<B: Backend>(&self, be: &mut B, x: B::V) -> Result<B::V, NnError> {
        let w = be.param(self.w);
        let b = self.b.map(|b| be.param(b));
        be.conv3d(x, w, b, self.stride, self.pad)
    }
}

pub(crate) struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn run<B: Backend>(&self, be: &mut B, x: B::V) -> Result<B::V, NnError> {
        let g = be.param(self.gamma);
        let b = be.param(self.beta);
        be.instance_norm(x, g, b)
    }
}

pub(crate) struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn run<B: Backend>(&self, be: &mut B, x: B::V) -> Result<B::V, NnError> {
        let w = be.param(self.w);
        let b = be.param(self.b);
        be.dense(x, w, b)
    }
}
