use dyntomo::net::{Network, Params, Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct BlockCheck {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl BlockCheck {
    /// Relative disagreement; `floor` bounds the denominator from below so a
    /// block whose true derivative is zero is compared against FD noise.
    pub fn rel_err(&self, floor: f64) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(floor);
        (self.analytic - self.numeric).abs() / scale
    }
}

pub fn random_tensor<T: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::lit(rng.random_range(-1.0..1.0))).collect()).unwrap()
}

pub fn random_seq<T: Scalar>(net: &Network, m: usize, rng: &mut ChaCha8Rng) -> Vec<Tensor<T>> {
    let (j, nx, ny) = net.dims;
    (0..m).map(|_| random_tensor(&[j, nx, ny], rng)).collect()
}

/// Central-difference directional derivative of the loss along a random
/// unit direction restricted to each parameter tensor in turn.
pub fn directional_checks<T: Scalar>(
    net: &Network,
    params: &Params<T>,
    seq: &[Tensor<T>],
    target: &Tensor<T>,
    eps: f64,
    seed: u64,
) -> Vec<BlockCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, report) = net.loss_and_grad(params, seq, target).unwrap();
    params
        .tensors
        .iter()
        .map(|(name, p)| {
            let mut dir: Tensor<T> = random_tensor(p.shape(), &mut rng);
            let norm = dir.dot(&dir).sqrt();
            dir.scale(T::one() / norm);
            let analytic = report.grads.get(name).unwrap().dot(&dir).as_f64();
            let shifted = |sign: f64| {
                let mut q = params.clone();
                q.get_mut(name).unwrap().scaled_add(T::lit(sign * eps), &dir);
                net.loss(&q, seq, target).unwrap().as_f64()
            };
            let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
            BlockCheck {
                name: name.clone(),
                analytic,
                numeric,
            }
        })
        .collect()
}

/// Zero biases put exact zeros in front of ReLUs wherever the input is dead,
/// i.e. on the kink. Random biases move the check point off every kink.
pub fn generic_point<T: Scalar>(params: &mut Params<T>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in params.tensors.values_mut() {
        if v.shape().len() == 1 {
            for x in v.data_mut() {
                *x = T::lit(rng.random_range(-0.1..0.1));
            }
        }
    }
}
