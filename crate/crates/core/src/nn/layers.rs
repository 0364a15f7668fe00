use rand::Rng;

use super::{hash_flags, he_uniform, Layer, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pass-through layer, mostly useful as an explicit tap point.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Layer for Identity {
    fn kind(&self) -> &'static str {
        "identity"
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }

    fn forward(&mut self, x: &Tensor, _: &Tensor) -> Result<Tensor> {
        Ok(x.clone())
    }

    fn backward(&mut self, grad_out: &Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        Ok(need_input_grad.then(|| grad_out.clone()))
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(*self)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Layer for Relu {
    fn kind(&self) -> &'static str {
        "relu"
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }

    fn forward(&mut self, x: &Tensor, _: &Tensor) -> Result<Tensor> {
        let y = x.map(|v| v.max(0.0));
        self.mask = Some(y.data().iter().map(|&v| v > 0.0).collect());
        Ok(y)
    }

    fn kink_state(&self) -> u64 {
        self.mask.as_ref().map_or(0, |m| hash_flags(m.iter().copied()))
    }

    fn backward(&mut self, grad_out: &Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        let mask = self
            .mask
            .as_ref()
            .ok_or_else(|| Error::BackwardBeforeForward("relu".into()))?;
        if !need_input_grad {
            return Ok(None);
        }
        let mut g = grad_out.clone();
        for (v, &m) in g.data_mut().iter_mut().zip(mask) {
            if !m {
                *v = 0.0;
            }
        }
        Ok(Some(g))
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// Fully connected layer. Inputs of any shape are flattened.
#[derive(Debug, Clone)]
pub struct Dense {
    params: [Param; 2],
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let w = he_uniform(&[out_features, in_features], in_features, rng);
        Dense {
            params: [
                Param::new("weight", w),
                Param::new("bias", Tensor::zeros(&[out_features])),
            ],
            input: None,
        }
    }

    pub fn from_params(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.ndim() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::shape("dense bias", &[weight.shape()[0]], bias.shape()));
        }
        Ok(Dense {
            params: [Param::new("weight", weight), Param::new("bias", bias)],
            input: None,
        })
    }

    fn dims(&self) -> (usize, usize) {
        let s = self.params[0].value.shape();
        (s[0], s[1])
    }
}

impl Layer for Dense {
    fn kind(&self) -> &'static str {
        "dense"
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (out, inp) = self.dims();
        let n: usize = input.iter().product();
        if n != inp {
            return Err(Error::shape("dense input features", &[inp], &[n]));
        }
        Ok(vec![out])
    }

    fn forward(&mut self, x: &Tensor, _: &Tensor) -> Result<Tensor> {
        let (out, inp) = self.dims();
        if x.len() != inp {
            return Err(Error::shape("dense input", &[inp], x.shape()));
        }
        let w = self.params[0].value.data();
        let b = self.params[1].value.data();
        let xs = x.data();
        let y: Vec<f64> = (0..out)
            .map(|o| {
                let row = &w[o * inp..(o + 1) * inp];
                b[o] + row.iter().zip(xs).map(|(a, c)| a * c).sum::<f64>()
            })
            .collect();
        self.input = Some(x.clone());
        Ok(Tensor::vector(y))
    }

    fn backward(&mut self, grad_out: &Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::BackwardBeforeForward("dense".into()))?;
        let (out, inp) = self.dims();
        let g = grad_out.data();
        let xs = x.data();
        let [wp, bp] = &mut self.params;
        {
            let dw = wp.grad.data_mut();
            for o in 0..out {
                let go = g[o];
                if go != 0.0 {
                    for (d, &xi) in dw[o * inp..(o + 1) * inp].iter_mut().zip(xs) {
                        *d += go * xi;
                    }
                }
            }
            for (d, &go) in bp.grad.data_mut().iter_mut().zip(g) {
                *d += go;
            }
        }
        if !need_input_grad {
            return Ok(None);
        }
        let w = wp.value.data();
        let mut dx = vec![0.0; inp];
        for o in 0..out {
            let go = g[o];
            if go != 0.0 {
                for (d, &wi) in dx.iter_mut().zip(&w[o * inp..(o + 1) * inp]) {
                    *d += go * wi;
                }
            }
        }
        Ok(Some(Tensor::new(x.shape(), dx)?))
    }

    fn params(&self) -> &[Param] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}
