//! Encoder, SC-GRU, angular attention and decoder, built on the tape.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::ConvSpec;
use super::tape::{Grads, Tape, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Axial extent of the merged kernel used when split convolution is ablated.
pub const FULL_AXIAL_KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvKind {
    #[default]
    Split,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Candidate activation of the recurrent unit.
    pub activation: Activation,
    pub attention: bool,
    pub convolution: ConvKind,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            activation: Activation::Relu,
            attention: true,
            convolution: ConvKind::Split,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSpec {
    /// Output channels of each encoder stage; every stage halves x and y.
    pub channels: Vec<usize>,
    pub res_blocks: usize,
    pub lateral_kernel: usize,
    pub axial_kernel: usize,
    pub attention_width: usize,
    pub ablation: Ablation,
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec {
            channels: vec![4, 8, 16, 32],
            res_blocks: 1,
            lateral_kernel: 3,
            axial_kernel: 4,
            attention_width: 64,
            ablation: Ablation::default(),
        }
    }
}

impl NetSpec {
    pub fn stages(&self) -> usize {
        self.channels.len()
    }

    pub fn lateral_factor(&self) -> usize {
        1 << self.stages()
    }

    pub fn hidden_channels(&self) -> usize {
        *self.channels.last().unwrap_or(&1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::InvalidParameter("channel plan must be non-empty and positive".into()));
        }
        if self.lateral_kernel % 2 == 0 || self.axial_kernel == 0 || self.attention_width == 0 {
            return Err(Error::InvalidParameter(format!(
                "lateral kernel {} must be odd, axial kernel {} and attention width {} positive",
                self.lateral_kernel, self.axial_kernel, self.attention_width
            )));
        }
        Ok(())
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Missing(format!("parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Missing(format!("parameter {name}")))
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Params {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Inner product over all parameters, in key order.
    pub fn dot(&self, other: &Self) -> T {
        self.tensors
            .iter()
            .map(|(k, v)| other.tensors.get(k).map_or(T::zero(), |o| v.dot(o)))
            .fold(T::zero(), |a, b| a + b)
    }
}

/// Gradients of one backward pass. Parameters the loss never reached get a
/// zero gradient and are listed in `disconnected`.
#[derive(Debug, Clone)]
pub struct GradReport<T> {
    pub grads: Params<T>,
    pub disconnected: Vec<String>,
}

/// Fixed network geometry: spec plus the volume size `(J, nx, ny)` it maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetSpec,
    pub dims: (usize, usize, usize),
}

/// Shapes and fans for Glorot initialisation.
struct ParamShape {
    shape: Vec<usize>,
    fans: Option<(usize, usize)>,
}

impl Network {
    pub fn new(spec: NetSpec, dims: (usize, usize, usize)) -> Result<Self> {
        spec.validate()?;
        let f = spec.lateral_factor();
        let (j, nx, ny) = dims;
        if j == 0 || nx == 0 || ny == 0 || nx % f != 0 || ny % f != 0 {
            return Err(Error::InvalidParameter(format!(
                "volume {j}x{nx}x{ny}: lateral dimensions must be positive multiples of {f}"
            )));
        }
        Ok(Network { spec, dims })
    }

    /// `(C, J, x, y)` of the latent tensor seen by the recurrent unit.
    pub fn latent_shape(&self) -> [usize; 4] {
        let f = self.spec.lateral_factor();
        [self.spec.hidden_channels(), self.dims.0, self.dims.1 / f, self.dims.2 / f]
    }

    fn sconv_shapes(&self, out: &mut IndexMap<String, ParamShape>, name: &str, cin: usize, cout: usize, bias: bool) {
        let k = self.spec.lateral_kernel;
        let conv = |kz: usize, kx: usize| ParamShape {
            shape: vec![cout, cin, kz, kx, kx],
            fans: Some((cin * kz * kx * kx, cout * kz * kx * kx)),
        };
        match self.spec.ablation.convolution {
            ConvKind::Split => {
                out.insert(format!("{name}.lat"), conv(1, k));
                out.insert(format!("{name}.ax"), conv(self.spec.axial_kernel, 1));
            }
            ConvKind::Full => {
                out.insert(format!("{name}.full"), conv(FULL_AXIAL_KERNEL, k));
            }
        }
        if bias {
            out.insert(format!("{name}.b"), ParamShape { shape: vec![cout], fans: None });
        }
    }

    fn block_shapes(&self, out: &mut IndexMap<String, ParamShape>, name: &str, cin: usize, cout: usize, skip: bool) {
        self.sconv_shapes(out, &format!("{name}.a"), cin, cout, true);
        self.sconv_shapes(out, &format!("{name}.b"), cout, cout, true);
        if skip {
            out.insert(
                format!("{name}.skip"),
                ParamShape {
                    shape: vec![cout, cin, 1, 1, 1],
                    fans: Some((cin, cout)),
                },
            );
        }
    }

    fn decoder_channels(&self) -> Vec<(usize, usize)> {
        let c = &self.spec.channels;
        let s = c.len();
        (0..s)
            .map(|i| (c[s - 1 - i], c[s.saturating_sub(2 + i)]))
            .collect()
    }

    fn shapes(&self) -> IndexMap<String, ParamShape> {
        let mut out = IndexMap::new();
        let mut cin = 1;
        for (s, &c) in self.spec.channels.iter().enumerate() {
            self.block_shapes(&mut out, &format!("enc.{s}.down"), cin, c, true);
            for r in 0..self.spec.res_blocks {
                self.block_shapes(&mut out, &format!("enc.{s}.res{r}"), c, c, false);
            }
            cin = c;
        }
        let h = self.spec.hidden_channels();
        for g in ["wr", "ur", "wz", "uz", "w", "u"] {
            self.sconv_shapes(&mut out, &format!("gru.{g}"), h, h, false);
        }
        for b in ["br", "bz", "bh"] {
            out.insert(format!("gru.{b}"), ParamShape { shape: vec![h], fans: None });
        }
        if self.spec.ablation.attention {
            let flat: usize = self.latent_shape().iter().product();
            let w = self.spec.attention_width;
            out.insert("att.we".into(), ParamShape { shape: vec![w, flat], fans: Some((flat, w)) });
            out.insert("att.ve".into(), ParamShape { shape: vec![1, w], fans: Some((w, 1)) });
        }
        for (s, (ci, co)) in self.decoder_channels().into_iter().enumerate() {
            self.block_shapes(&mut out, &format!("dec.{s}.up"), ci, co, true);
            for r in 0..self.spec.res_blocks {
                self.block_shapes(&mut out, &format!("dec.{s}.res{r}"), co, co, false);
            }
        }
        self.sconv_shapes(&mut out, "dec.out", self.spec.channels[0], 1, true);
        out
    }

    pub fn param_count(&self) -> usize {
        self.shapes().values().map(|p| p.shape.iter().product::<usize>()).sum()
    }

    /// Glorot-uniform kernels and zero biases from a seeded stream.
    pub fn init<T: Scalar>(&self, seed: u64) -> Params<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = self
            .shapes()
            .into_iter()
            .map(|(name, p)| {
                let n = p.shape.iter().product();
                let data = match p.fans {
                    Some((fi, fo)) => {
                        let limit = (6.0 / (fi + fo) as f64).sqrt();
                        (0..n).map(|_| T::lit(rng.random_range(-limit..limit))).collect()
                    }
                    None => vec![T::zero(); n],
                };
                (name, Tensor::from_vec(&p.shape, data).expect("shape product"))
            })
            .collect();
        Params { tensors }
    }

    /// Checks that `params` has exactly the names and shapes of this network.
    pub fn check_params<T: Scalar>(&self, params: &Params<T>) -> Result<()> {
        let shapes = self.shapes();
        if shapes.len() != params.tensors.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} parameter tensors, found {}",
                shapes.len(),
                params.tensors.len()
            )));
        }
        for (name, p) in &shapes {
            params.get(name)?.check_shape(&p.shape)?;
        }
        Ok(())
    }

    fn input_tensor<T: Scalar>(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        let (j, nx, ny) = self.dims;
        if v.len() != j * nx * ny {
            return Err(Error::shape(&[j, nx, ny], v.shape()));
        }
        v.clone().reshape(&[1, j, nx, ny])
    }

    /// Final reconstruction `(J, nx, ny)` from M approximant volumes.
    pub fn reconstruct<T: Scalar>(&self, params: &Params<T>, seq: &[Tensor<T>]) -> Result<Tensor<T>> {
        let mut g = Graph::new(self, params)?;
        let out = g.forward(seq, false)?;
        g.output(*out.outputs.last().expect("M >= 1"))
    }

    /// Reconstructions `f̂^{(m)}` for every prefix `m = 1..=M`.
    pub fn reconstruct_prefixes<T: Scalar>(
        &self,
        params: &Params<T>,
        seq: &[Tensor<T>],
    ) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::new(self, params)?;
        let out = g.forward(seq, true)?;
        out.outputs.iter().map(|&v| g.output(v)).collect()
    }

    /// Attention weights over the full sequence; `None` when ablated.
    pub fn attention_weights<T: Scalar>(&self, params: &Params<T>, seq: &[Tensor<T>]) -> Result<Option<Vec<T>>> {
        let mut g = Graph::new(self, params)?;
        let out = g.forward(seq, false)?;
        Ok(out.alpha.map(|a| g.tape.value(a).data().to_vec()))
    }

    /// NPCC loss against `target` and its gradient for every parameter.
    pub fn loss_and_grad<T: Scalar>(
        &self,
        params: &Params<T>,
        seq: &[Tensor<T>],
        target: &Tensor<T>,
    ) -> Result<(T, GradReport<T>)> {
        let mut g = Graph::new(self, params)?;
        let out = g.forward(seq, false)?;
        let recon = *out.outputs.last().expect("M >= 1");
        let loss = g.tape.npcc(recon, target)?;
        let value = g.tape.value(loss).item();
        let report = g.gradients(loss)?;
        Ok((value, report))
    }

    pub fn loss<T: Scalar>(&self, params: &Params<T>, seq: &[Tensor<T>], target: &Tensor<T>) -> Result<T> {
        let recon = self.reconstruct(params, seq)?;
        super::tape::npcc_slices(target.data(), recon.data())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub r: Var,
    pub z: Var,
    pub candidate: Var,
    pub h: Var,
}

pub struct ForwardOutput {
    pub hidden: Vec<Var>,
    /// Decoded volumes: one per prefix, or only the final one.
    pub outputs: Vec<Var>,
    pub alpha: Option<Var>,
}

/// A tape with every parameter registered as a leaf.
pub struct Graph<'n, T: Scalar> {
    pub tape: Tape<T>,
    net: &'n Network,
    vars: IndexMap<String, Var>,
}

impl<'n, T: Scalar> Graph<'n, T> {
    pub fn new(net: &'n Network, params: &Params<T>) -> Result<Self> {
        net.check_params(params)?;
        let mut tape = Tape::new();
        let vars = params
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
            .collect();
        Ok(Graph { tape, net, vars })
    }

    pub fn param(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Missing(format!("parameter {name}")))
    }

    pub fn input(&mut self, v: &Tensor<T>) -> Result<Var> {
        let t = self.net.input_tensor(v)?;
        Ok(self.tape.leaf(t))
    }

    fn output(&self, v: Var) -> Result<Tensor<T>> {
        let (j, nx, ny) = self.net.dims;
        self.tape.value(v).clone().reshape(&[j, nx, ny])
    }

    /// Lateral `1×kx×ky` plus axial `kz×1×1` convolution, summed, plus an
    /// optional per-channel bias. Under the convolution ablation a single
    /// merged kernel is used instead.
    pub fn split_conv(&mut self, x: Var, name: &str, stride: usize, bias: bool) -> Result<Var> {
        let spec = &self.net.spec;
        let k = spec.lateral_kernel;
        let y = match spec.ablation.convolution {
            ConvKind::Split => {
                let lat = self.param(&format!("{name}.lat"))?;
                let ax = self.param(&format!("{name}.ax"))?;
                let a = self.tape.conv(x, lat, ConvSpec::same(1, k, k, stride))?;
                let b = self.tape.conv(x, ax, ConvSpec::same(spec.axial_kernel, 1, 1, stride))?;
                self.tape.add(a, b)?
            }
            ConvKind::Full => {
                let w = self.param(&format!("{name}.full"))?;
                self.tape.conv(x, w, ConvSpec::same(FULL_AXIAL_KERNEL, k, k, stride))?
            }
        };
        if bias {
            let b = self.param(&format!("{name}.b"))?;
            self.tape.channel_bias(y, b)
        } else {
            Ok(y)
        }
    }

    /// `relu(sconv_b(relu(sconv_a(x))) + skip(x))`, with the first conv and
    /// the 1×1 skip strided by `stride`.
    fn resample_block(&mut self, x: Var, name: &str, stride: usize) -> Result<Var> {
        let a = self.split_conv(x, &format!("{name}.a"), stride, true)?;
        let a = self.tape.relu(a);
        let b = self.split_conv(a, &format!("{name}.b"), 1, true)?;
        let w = self.param(&format!("{name}.skip"))?;
        let s = self.tape.conv(x, w, ConvSpec::same(1, 1, 1, stride))?;
        let y = self.tape.add(b, s)?;
        Ok(self.tape.relu(y))
    }

    /// `x + sconv_b(relu(sconv_a(x)))`.
    pub fn residual_block(&mut self, x: Var, name: &str) -> Result<Var> {
        let a = self.split_conv(x, &format!("{name}.a"), 1, true)?;
        let a = self.tape.relu(a);
        let b = self.split_conv(a, &format!("{name}.b"), 1, true)?;
        self.tape.add(x, b)
    }

    pub fn encode(&mut self, x: Var) -> Result<Var> {
        let mut h = x;
        for s in 0..self.net.spec.stages() {
            h = self.resample_block(h, &format!("enc.{s}.down"), 2)?;
            for r in 0..self.net.spec.res_blocks {
                h = self.residual_block(h, &format!("enc.{s}.res{r}"))?;
            }
        }
        Ok(h)
    }

    pub fn decode(&mut self, a: Var) -> Result<Var> {
        let mut h = a;
        for s in 0..self.net.spec.stages() {
            let up = self.tape.upsample2(h)?;
            h = self.resample_block(up, &format!("dec.{s}.up"), 1)?;
            for r in 0..self.net.spec.res_blocks {
                h = self.residual_block(h, &format!("dec.{s}.res{r}"))?;
            }
        }
        self.split_conv(h, "dec.out", 1, true)
    }

    /// One SC-GRU update; `h_prev = None` is the zero initial state.
    pub fn gru_step(&mut self, xi: Var, h_prev: Option<Var>) -> Result<Var> {
        Ok(self.gru_cell(xi, h_prev)?.h)
    }

    /// [`Graph::gru_step`] with the gates and candidate exposed.
    pub fn gru_cell(&mut self, xi: Var, h_prev: Option<Var>) -> Result<GruVars> {
        let gate = |g: &mut Self, w: &str, u: &str, b: &str, h: Option<Var>| -> Result<Var> {
            let mut s = g.split_conv(xi, w, 1, false)?;
            if let Some(h) = h {
                let uh = g.split_conv(h, u, 1, false)?;
                s = g.tape.add(s, uh)?;
            }
            let b = g.param(b)?;
            g.tape.channel_bias(s, b)
        };
        let r = gate(self, "gru.wr", "gru.ur", "gru.br", h_prev)?;
        let r = self.tape.sigmoid(r);
        let z = gate(self, "gru.wz", "gru.uz", "gru.bz", h_prev)?;
        let z = self.tape.sigmoid(z);
        let rh = match h_prev {
            Some(h) => Some(self.tape.mul(r, h)?),
            None => None,
        };
        let cand = gate(self, "gru.w", "gru.u", "gru.bh", rh)?;
        let cand = match self.net.spec.ablation.activation {
            Activation::Relu => self.tape.relu(cand),
            Activation::Tanh => self.tape.tanh(cand),
        };
        let keep = self.tape.one_minus(z);
        let fresh = self.tape.mul(keep, cand)?;
        let h = match h_prev {
            Some(h) => {
                let carried = self.tape.mul(z, h)?;
                self.tape.add(fresh, carried)?
            }
            None => fresh,
        };
        Ok(GruVars { r, z, candidate: cand, h })
    }

    /// `e_m = V_e tanh(W_e vec(h_m))`.
    pub fn score(&mut self, h: Var) -> Result<Var> {
        let we = self.param("att.we")?;
        let ve = self.param("att.ve")?;
        let u = self.tape.matvec(we, h)?;
        let u = self.tape.tanh(u);
        self.tape.matvec(ve, u)
    }

    /// Softmax-weighted sum of hidden states given their scores.
    pub fn attend_scores(&mut self, hidden: &[Var], scores: &[Var]) -> Result<(Var, Var)> {
        let e = self.tape.concat(scores);
        let alpha = self.tape.softmax(e);
        let a = self.tape.weighted_sum(alpha, hidden)?;
        Ok((a, alpha))
    }

    /// Attention output and weights; with attention ablated, `h_M` and `None`.
    pub fn attend(&mut self, hidden: &[Var]) -> Result<(Var, Option<Var>)> {
        let last = *hidden
            .last()
            .ok_or_else(|| Error::InvalidParameter("attention needs at least one hidden state".into()))?;
        if !self.net.spec.ablation.attention {
            return Ok((last, None));
        }
        let scores = hidden.iter().map(|&h| self.score(h)).collect::<Result<Vec<_>>>()?;
        let (a, alpha) = self.attend_scores(hidden, &scores)?;
        Ok((a, Some(alpha)))
    }

    pub fn forward(&mut self, seq: &[Tensor<T>], prefixes: bool) -> Result<ForwardOutput> {
        if seq.is_empty() {
            return Err(Error::InvalidParameter("empty approximant sequence".into()));
        }
        let mut hidden = Vec::with_capacity(seq.len());
        let mut h = None;
        for f in seq {
            let x = self.input(f)?;
            let xi = self.encode(x)?;
            let next = self.gru_step(xi, h)?;
            hidden.push(next);
            h = Some(next);
        }
        if !prefixes {
            let (a, alpha) = self.attend(&hidden)?;
            let out = self.decode(a)?;
            return Ok(ForwardOutput {
                hidden,
                outputs: vec![out],
                alpha,
            });
        }
        let mut outputs = Vec::with_capacity(hidden.len());
        let mut alpha = None;
        if self.net.spec.ablation.attention {
            let scores = hidden.iter().map(|&h| self.score(h)).collect::<Result<Vec<_>>>()?;
            for m in 1..=hidden.len() {
                let (a, al) = self.attend_scores(&hidden[..m], &scores[..m])?;
                outputs.push(self.decode(a)?);
                alpha = Some(al);
            }
        } else {
            for &h in &hidden {
                outputs.push(self.decode(h)?);
            }
        }
        Ok(ForwardOutput { hidden, outputs, alpha })
    }

    pub fn gradients(&self, loss: Var) -> Result<GradReport<T>> {
        let mut grads: Grads<T> = self.tape.backward(loss)?;
        let mut disconnected = Vec::new();
        let mut tensors = IndexMap::with_capacity(self.vars.len());
        for (name, &v) in &self.vars {
            let g = match grads.take(v) {
                Some(g) => g,
                None => {
                    disconnected.push(name.clone());
                    Tensor::zeros(self.tape.value(v).shape())
                }
            };
            tensors.insert(name.clone(), g);
        }
        Ok(GradReport {
            grads: Params { tensors },
            disconnected,
        })
    }
}
