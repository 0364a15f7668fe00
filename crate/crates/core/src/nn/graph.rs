//! Edge-based graph layers operating on `[C, N, N]` edge feature maps.

use rand::Rng;

use super::{hash_flags, he_uniform, sigmoid, Layer, Param};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Graph path convolution.
///
/// `Y_o = ReLU( Σ_i θ[o,i] · (X_i·A + A·X_i)/2 + b_o )` where `A` is the
/// model's input adjacency and `·` is the matrix product over nodes. The
/// symmetrised product keeps maps symmetric when `X_i` and `A` are, and each
/// stacked layer extends the path order by one.
#[derive(Debug, Clone)]
pub struct Gpc {
    params: [Param; 2],
    n: usize,
    cache: Option<GpcCache>,
}

#[derive(Debug, Clone)]
struct GpcCache {
    adjacency: Vec<f64>,
    /// `(X_i·A + A·X_i)/2` per input channel.
    paths: Vec<f64>,
    output: Tensor,
}

impl Gpc {
    /// He-uniform magnitudes over the path fan-in `c_in · n`, all taken
    /// non-negative. Connectivity inputs and post-ReLU features are
    /// non-negative, so a channel whose weights are all negative would be
    /// zero on every sample and never receive a gradient.
    pub fn new(c_in: usize, c_out: usize, n: usize, rng: &mut impl Rng) -> Self {
        let theta = he_uniform(&[c_out, c_in], c_in * n, rng).map(f64::abs);
        Gpc {
            params: [
                Param::new("theta", theta),
                Param::new("bias", Tensor::zeros(&[c_out])),
            ],
            n,
            cache: None,
        }
    }

    pub fn from_params(theta: Tensor, bias: Tensor, n: usize) -> Result<Self> {
        if theta.ndim() != 2 || bias.shape() != [theta.shape()[0]] {
            return Err(Error::shape("gpc bias", &[theta.shape()[0]], bias.shape()));
        }
        Ok(Gpc {
            params: [Param::new("theta", theta), Param::new("bias", bias)],
            n,
            cache: None,
        })
    }

    fn channels(&self) -> (usize, usize) {
        let s = self.params[0].value.shape();
        (s[0], s[1])
    }
}

/// `out = (x·a + a·x)/2` for `n × n` row-major matrices.
fn sym_product(n: usize, x: &[f64], a: &[f64], trans: bool, out: &mut [f64]) {
    gemm(n, n, n, x, false, a, trans, out, false);
    gemm(n, n, n, a, trans, x, false, out, true);
    out.iter_mut().for_each(|v| *v *= 0.5);
}

fn is_symmetric(n: usize, m: &[f64]) -> bool {
    (0..n).all(|i| (i + 1..n).all(|j| m[i * n + j] == m[j * n + i]))
}

/// [`sym_product`] for symmetric `x` and `a`, where `a·x = (x·a)ᵀ` and one
/// product suffices.
fn sym_product_symmetric(n: usize, x: &[f64], a: &[f64], out: &mut [f64]) {
    gemm(n, n, n, x, false, a, false, out, false);
    for i in 0..n {
        for j in i..n {
            let v = 0.5 * (out[i * n + j] + out[j * n + i]);
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
}

impl Layer for Gpc {
    fn kind(&self) -> &'static str {
        "gpc"
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (co, ci) = self.channels();
        if input != [ci, self.n, self.n] {
            return Err(Error::shape("gpc input", &[ci, self.n, self.n], input));
        }
        Ok(vec![co, self.n, self.n])
    }

    fn forward(&mut self, x: &Tensor, graph_input: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(x.shape())?;
        let n = self.n;
        graph_input.ensure_shape(&[1, n, n], "gpc adjacency")?;
        let (co, ci) = self.channels();
        let nn = n * n;
        let a = graph_input.data();
        let mut paths = vec![0.0; ci * nn];
        let a_sym = is_symmetric(n, a);
        for i in 0..ci {
            let xi = x.channel(i);
            let dst = &mut paths[i * nn..(i + 1) * nn];
            if a_sym && is_symmetric(n, xi) {
                sym_product_symmetric(n, xi, a, dst);
            } else {
                sym_product(n, xi, a, false, dst);
            }
        }
        let theta = self.params[0].value.data();
        let bias = self.params[1].value.data();
        let mut y = Tensor::zeros(&out_shape);
        for o in 0..co {
            let dst = y.channel_mut(o);
            dst.fill(bias[o]);
            for i in 0..ci {
                let t = theta[o * ci + i];
                for (v, &p) in dst.iter_mut().zip(&paths[i * nn..(i + 1) * nn]) {
                    *v += t * p;
                }
            }
            dst.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        self.cache = Some(GpcCache {
            adjacency: a.to_vec(),
            paths,
            output: y.clone(),
        });
        Ok(y)
    }

    fn kink_state(&self) -> u64 {
        self.cache
            .as_ref()
            .map_or(0, |c| hash_flags(c.output.data().iter().map(|&v| v > 0.0)))
    }

    fn backward(&mut self, grad_out: &Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::BackwardBeforeForward("gpc".into()))?;
        let (co, ci) = self.channels();
        let n = self.n;
        let nn = n * n;
        let mut gz = grad_out.clone();
        for (g, &y) in gz.data_mut().iter_mut().zip(cache.output.data()) {
            if y <= 0.0 {
                *g = 0.0;
            }
        }
        let [tp, bp] = &mut self.params;
        for o in 0..co {
            let go = gz.channel(o);
            bp.grad.data_mut()[o] += go.iter().sum::<f64>();
            for i in 0..ci {
                let p = &cache.paths[i * nn..(i + 1) * nn];
                tp.grad.data_mut()[o * ci + i] += go.iter().zip(p).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        if !need_input_grad {
            return Ok(None);
        }
        let theta = tp.value.data();
        let mut dx = Tensor::zeros(&[ci, n, n]);
        let mut mixed = vec![0.0; nn];
        for i in 0..ci {
            mixed.fill(0.0);
            for o in 0..co {
                let t = theta[o * ci + i];
                for (m, &g) in mixed.iter_mut().zip(gz.channel(o)) {
                    *m += t * g;
                }
            }
            sym_product(n, &mixed, &cache.adjacency, true, dx.channel_mut(i));
        }
        Ok(Some(dx))
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

/// Squeeze-and-excitation over any channel-first map.
///
/// `z_c = mean(x_c)`, `s = σ(W2·ReLU(W1·z))`, `y_c = s_c · x_c`.
#[derive(Debug, Clone)]
pub struct ChannelSe {
    params: [Param; 2],
    cache: Option<SeCache>,
}

#[derive(Debug, Clone)]
struct SeCache {
    x: Tensor,
    z: Vec<f64>,
    hidden_pre: Vec<f64>,
    scale: Vec<f64>,
}

impl ChannelSe {
    /// Hidden width is `ceil(channels / reduction)`.
    pub fn new(channels: usize, reduction: usize, rng: &mut impl Rng) -> Self {
        let hidden = channels.div_ceil(reduction.max(1));
        ChannelSe {
            params: [
                Param::new("w1", he_uniform(&[hidden, channels], channels, rng)),
                Param::new("w2", he_uniform(&[channels, hidden], hidden, rng)),
            ],
            cache: None,
        }
    }

    pub fn from_params(w1: Tensor, w2: Tensor) -> Result<Self> {
        let (h, c) = (w1.shape()[0], w1.shape()[1]);
        w2.ensure_shape(&[c, h], "se w2")?;
        Ok(ChannelSe {
            params: [Param::new("w1", w1), Param::new("w2", w2)],
            cache: None,
        })
    }

    fn dims(&self) -> (usize, usize) {
        let s = self.params[0].value.shape();
        (s[1], s[0])
    }

    /// Excitation weights from the last forward pass.
    pub fn last_scale(&self) -> Option<&[f64]> {
        self.cache.as_ref().map(|c| c.scale.as_slice())
    }
}

impl Layer for ChannelSe {
    fn kind(&self) -> &'static str {
        "se"
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (c, _) = self.dims();
        if input.len() < 2 || input[0] != c {
            return Err(Error::shape("se input channels", &[c], &input[..1.min(input.len())]));
        }
        Ok(input.to_vec())
    }

    fn forward(&mut self, x: &Tensor, _: &Tensor) -> Result<Tensor> {
        self.output_shape(x.shape())?;
        let (c, h) = self.dims();
        let w1 = self.params[0].value.data();
        let w2 = self.params[1].value.data();
        let z: Vec<f64> = (0..c)
            .map(|k| {
                let ch = x.channel(k);
                ch.iter().sum::<f64>() / ch.len() as f64
            })
            .collect();
        let hidden_pre: Vec<f64> = (0..h)
            .map(|j| (0..c).map(|k| w1[j * c + k] * z[k]).sum())
            .collect();
        let scale: Vec<f64> = (0..c)
            .map(|k| sigmoid((0..h).map(|j| w2[k * h + j] * hidden_pre[j].max(0.0)).sum()))
            .collect();
        let mut y = x.clone();
        for (k, &s) in scale.iter().enumerate() {
            y.channel_mut(k).iter_mut().for_each(|v| *v *= s);
        }
        self.cache = Some(SeCache {
            x: x.clone(),
            z,
            hidden_pre,
            scale,
        });
        Ok(y)
    }

    fn kink_state(&self) -> u64 {
        self.cache
            .as_ref()
            .map_or(0, |c| hash_flags(c.hidden_pre.iter().map(|&v| v > 0.0)))
    }

    fn backward(&mut self, grad_out: &Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::BackwardBeforeForward("se".into()))?;
        let (c, h) = self.dims();
        let x = &cache.x;
        let dv: Vec<f64> = (0..c)
            .map(|k| {
                let ds: f64 = grad_out.channel(k).iter().zip(x.channel(k)).map(|(g, v)| g * v).sum();
                let s = cache.scale[k];
                ds * s * (1.0 - s)
            })
            .collect();
        let [p1, p2] = &mut self.params;
        let w1 = p1.value.data();
        let w2 = p2.value.data();
        let mut du = vec![0.0; h];
        for j in 0..h {
            let r = cache.hidden_pre[j].max(0.0);
            for k in 0..c {
                p2.grad.data_mut()[k * h + j] += dv[k] * r;
            }
            if cache.hidden_pre[j] > 0.0 {
                du[j] = (0..c).map(|k| w2[k * h + j] * dv[k]).sum();
            }
        }
        for j in 0..h {
            for k in 0..c {
                p1.grad.data_mut()[j * c + k] += du[j] * cache.z[k];
            }
        }
        if !need_input_grad {
            return Ok(None);
        }
        let per = x.len() / c;
        let mut dx = grad_out.clone();
        for k in 0..c {
            let dz: f64 = (0..h).map(|j| w1[j * c + k] * du[j]).sum::<f64>() / per as f64;
            let s = cache.scale[k];
            dx.channel_mut(k).iter_mut().for_each(|g| *g = *g * s + dz);
        }
        Ok(Some(dx))
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

/// Edge pooling: `[C, N, N] -> [C, N]`, each node the mean of its row.
#[derive(Debug, Clone, Default)]
pub struct EdgePool {
    in_shape: Option<Vec<usize>>,
}

impl Layer for EdgePool {
    fn kind(&self) -> &'static str {
        "edge_pool"
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 3 || input[1] != input[2] {
            return Err(Error::shape("edge pool input", &[0, 0, 0], input));
        }
        Ok(vec![input[0], input[1]])
    }

    fn forward(&mut self, x: &Tensor, _: &Tensor) -> Result<Tensor> {
        let shape = self.output_shape(x.shape())?;
        let n = shape[1];
        let data = x
            .data()
            .chunks_exact(n)
            .map(|row| row.iter().sum::<f64>() / n as f64)
            .collect();
        self.in_shape = Some(x.shape().to_vec());
        Tensor::new(&shape, data)
    }

    fn backward(&mut self, grad_out: &Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        let shape = self
            .in_shape
            .as_ref()
            .ok_or_else(|| Error::BackwardBeforeForward("edge_pool".into()))?;
        if !need_input_grad {
            return Ok(None);
        }
        let n = shape[1];
        let mut dx = Tensor::zeros(shape);
        for (row, &g) in dx.data_mut().chunks_exact_mut(n).zip(grad_out.data()) {
            row.fill(g / n as f64);
        }
        Ok(Some(dx))
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// Node pooling: `[C, N] -> [C]`, per-channel mean over nodes.
#[derive(Debug, Clone, Default)]
pub struct NodePool {
    in_shape: Option<Vec<usize>>,
}

impl Layer for NodePool {
    fn kind(&self) -> &'static str {
        "node_pool"
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 2 {
            return Err(Error::shape("node pool input", &[0, 0], input));
        }
        Ok(vec![input[0]])
    }

    fn forward(&mut self, x: &Tensor, _: &Tensor) -> Result<Tensor> {
        self.output_shape(x.shape())?;
        let n = x.shape()[1];
        let data = x.data().chunks_exact(n).map(|r| r.iter().sum::<f64>() / n as f64).collect();
        self.in_shape = Some(x.shape().to_vec());
        Ok(Tensor::vector(data))
    }

    fn backward(&mut self, grad_out: &Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        let shape = self
            .in_shape
            .as_ref()
            .ok_or_else(|| Error::BackwardBeforeForward("node_pool".into()))?;
        if !need_input_grad {
            return Ok(None);
        }
        let n = shape[1];
        let mut dx = Tensor::zeros(shape);
        for (row, &g) in dx.data_mut().chunks_exact_mut(n).zip(grad_out.data()) {
            row.fill(g / n as f64);
        }
        Ok(Some(dx))
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn eye(n: usize) -> Tensor {
        Tensor::from_fn(&[1, n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    fn unit_gpc(n: usize, bias: f64) -> Gpc {
        Gpc::from_params(Tensor::new(&[1, 1], vec![1.0]).unwrap(), Tensor::vector(vec![bias]), n).unwrap()
    }

    #[test]
    fn symmetric_shortcut_matches_general_product() {
        use rand::Rng;
        let n = 9;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sym = |rng: &mut ChaCha8Rng| {
            let mut m = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let v = rng.random::<f64>();
                    m[i * n + j] = v;
                    m[j * n + i] = v;
                }
            }
            m
        };
        let (x, a) = (sym(&mut rng), sym(&mut rng));
        let (mut fast, mut slow) = (vec![0.0; n * n], vec![0.0; n * n]);
        sym_product_symmetric(n, &x, &a, &mut fast);
        sym_product(n, &x, &a, false, &mut slow);
        assert!(is_symmetric(n, &fast));
        for (f, s) in fast.iter().zip(&slow) {
            assert!((f - s).abs() < 1e-13);
        }
        let mut broken = x.clone();
        broken[1] += 1.0;
        assert!(!is_symmetric(n, &broken));
    }

    #[test]
    fn identity_graph_is_fixed_point() {
        let mut g = unit_gpc(132, 0.0);
        let a = eye(132);
        assert_eq!(g.forward(&a, &a).unwrap(), a);
    }

    #[test]
    fn single_edge_squares_into_two_paths() {
        // 3 nodes, one undirected edge between nodes 1 and 2 (0-based 0, 1).
        let mut a = Tensor::zeros(&[1, 3, 3]);
        a.set(&[0, 0, 1], 1.0);
        a.set(&[0, 1, 0], 1.0);
        let y = unit_gpc(3, 0.0).forward(&a, &a).unwrap();
        assert_eq!(y.get(&[0, 0, 0]), 1.0);
        assert_eq!(y.get(&[0, 1, 1]), 1.0);
        assert_eq!(y.get(&[0, 0, 1]), 0.0);
        assert_eq!(y.get(&[0, 2, 2]), 0.0);
    }

    #[test]
    fn bias_only_is_constant() {
        let mut g = Gpc::from_params(Tensor::zeros(&[2, 1]), Tensor::vector(vec![0.3, 1.5]), 4).unwrap();
        let a = Tensor::from_fn(&[1, 4, 4], |i| i as f64);
        let y = g.forward(&a, &a).unwrap();
        assert!(y.channel(0).iter().all(|&v| v == 0.3));
        assert!(y.channel(1).iter().all(|&v| v == 1.5));
    }

    #[test]
    fn se_with_zero_weights_halves() {
        let mut se = ChannelSe::from_params(Tensor::zeros(&[1, 2]), Tensor::zeros(&[2, 1])).unwrap();
        let x = Tensor::from_fn(&[2, 3, 3], |i| i as f64);
        assert_eq!(se.forward(&x, &x).unwrap(), x.scale(0.5));
    }

    #[test]
    fn se_single_channel_closed_form() {
        // z = mean = 2, hidden = relu(0.5 * 2) = 1, s = σ(3 * 1).
        let mut se = ChannelSe::from_params(
            Tensor::new(&[1, 1], vec![0.5]).unwrap(),
            Tensor::new(&[1, 1], vec![3.0]).unwrap(),
        )
        .unwrap();
        let x = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 2.0, 3.0]).unwrap();
        let y = se.forward(&x, &x).unwrap();
        let s = 1.0 / (1.0 + (-3.0f64).exp());
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - s * b).abs() < 1e-15);
        }
    }

    #[test]
    fn squeeze_is_linear_in_channel_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut se = ChannelSe::new(3, 2, &mut rng);
        let x = Tensor::from_fn(&[3, 4, 4], |_| rng.random_range(0.0..1.0));
        se.forward(&x, &x).unwrap();
        let z = se.cache.as_ref().unwrap().z.clone();
        let mut x2 = x.clone();
        x2.channel_mut(1).iter_mut().for_each(|v| *v *= 2.5);
        se.forward(&x2, &x2).unwrap();
        let z2 = &se.cache.as_ref().unwrap().z;
        assert!((z2[1] - 2.5 * z[1]).abs() < 1e-14);
        assert_eq!(z2[0], z[0]);
    }

    #[test]
    fn edge_and_node_pool_means() {
        let mut ep = EdgePool::default();
        let c = Tensor::full(&[2, 4, 4], 0.7);
        assert!(ep.forward(&c, &c).unwrap().data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        let mut x = Tensor::full(&[1, 3, 3], 1.0);
        x.data_mut()[3..6].fill(0.0);
        assert_eq!(ep.forward(&x, &x).unwrap().data(), &[1.0, 0.0, 1.0]);

        let mut np = NodePool::default();
        let mut hot = Tensor::zeros(&[2, 132]);
        hot.set(&[1, 17], 1.0);
        assert_eq!(np.forward(&hot, &hot).unwrap().data(), &[0.0, 1.0 / 132.0]);
    }

    #[test]
    fn pools_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::from_fn(&[3, 7, 7], |_| rng.random_range(-1.0..1.0));
        let nodes = EdgePool::default().forward(&x, &x).unwrap();
        for c in 0..3 {
            for i in 0..7 {
                let want: f64 = (0..7).map(|j| x.get(&[c, i, j])).sum::<f64>() / 7.0;
                assert!((nodes.get(&[c, i]) - want).abs() < 1e-14);
            }
        }
        let pooled = NodePool::default().forward(&nodes, &nodes).unwrap();
        for c in 0..3 {
            let want: f64 = (0..7).map(|i| nodes.get(&[c, i])).sum::<f64>() / 7.0;
            assert!((pooled.data()[c] - want).abs() < 1e-14);
        }
    }
}
