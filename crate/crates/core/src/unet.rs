//! Randomly initialized encoder-decoder network with skip connections.
//!
//! The network maps a two-channel (real/imaginary) image to a two-channel
//! image of the same size. Per resolution scale the encoder applies two
//! same-padded conv+activation blocks and downsamples with a stride-2
//! convolution; the decoder upsamples by nearest-neighbor x2 followed by a
//! convolution, concatenates the matching encoder scale, and applies two more
//! conv+activation blocks. A final linear 1x1 convolution produces the two
//! output channels.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Real;
use crate::tape::{NodeId, Tape};
use crate::tensor::{dot_fixed, Tensor};

#[derive(Debug, Clone)]
pub struct UNetConfig<T> {
    /// Number of resolution scales; `depth - 1` downsamplings.
    pub depth: usize,
    /// Channels of every convolution except the final 1x1.
    pub filters: usize,
    /// Kernel size of the same-padded convolutions (odd).
    pub kernel: usize,
    /// Leaky-ReLU negative slope.
    pub slope: T,
    /// Seed for the parameter initialization.
    pub seed: u64,
}

impl<T: Real> Default for UNetConfig<T> {
    fn default() -> Self {
        UNetConfig {
            depth: 4,
            filters: 128,
            kernel: 3,
            slope: T::cast(0.1),
            seed: 0,
        }
    }
}

impl<T: Real> UNetConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::Config(format!("depth must be >= 2, got {}", self.depth)));
        }
        if self.filters == 0 {
            return Err(Error::Config("filters must be >= 1".into()));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel must be odd, got {}", self.kernel)));
        }
        if self.slope < T::zero() || self.slope >= T::one() {
            return Err(Error::Config(format!("slope must be in [0, 1), got {}", self.slope)));
        }
        Ok(())
    }
}

/// The ordered set of optimization variables: named weight/bias tensors.
#[derive(Debug, Clone)]
pub struct NetworkParams<T> {
    tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Real> NetworkParams<T> {
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.tensors.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.tensors.iter_mut().map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count_scalars(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    /// Concatenate all parameters into one flat vector (declaration order).
    pub fn to_flat(&self) -> Vec<T> {
        let mut flat = Vec::with_capacity(self.count_scalars());
        for (_, t) in &self.tensors {
            flat.extend_from_slice(t.data());
        }
        flat
    }

    /// Overwrite all parameters from a flat vector (declaration order).
    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.count_scalars() {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.count_scalars()
            )));
        }
        let mut off = 0;
        for (_, t) in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

/// Sum of squares over every parameter entry.
pub fn param_l2<T: Real>(params: &NetworkParams<T>) -> T {
    let mut acc = T::zero();
    for (_, t) in &params.tensors {
        acc += dot_fixed(t.data(), t.data());
    }
    acc
}

struct ConvSpec {
    name: String,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    activated: bool,
}

impl ConvSpec {
    fn pad(&self) -> usize {
        (self.k - 1) / 2
    }
}

fn conv_specs<T: Real>(cfg: &UNetConfig<T>) -> Vec<ConvSpec> {
    let f = cfg.filters;
    let k = cfg.kernel;
    let conv = |name: String, c_in, c_out, k, stride, activated| ConvSpec {
        name,
        c_in,
        c_out,
        k,
        stride,
        activated,
    };
    let mut specs = Vec::new();
    for s in 0..cfg.depth - 1 {
        let c_in = if s == 0 { 2 } else { f };
        specs.push(conv(format!("enc{s}.conv1"), c_in, f, k, 1, true));
        specs.push(conv(format!("enc{s}.conv2"), f, f, k, 1, true));
        specs.push(conv(format!("enc{s}.down"), f, f, k, 2, true));
    }
    specs.push(conv("bottom.conv1".into(), f, f, k, 1, true));
    specs.push(conv("bottom.conv2".into(), f, f, k, 1, true));
    for s in (0..cfg.depth - 1).rev() {
        specs.push(conv(format!("dec{s}.up"), f, f, k, 1, true));
        specs.push(conv(format!("dec{s}.conv1"), 2 * f, f, k, 1, true));
        specs.push(conv(format!("dec{s}.conv2"), f, f, k, 1, true));
    }
    specs.push(conv("final".into(), f, 2, 1, 1, false));
    specs
}

/// Build the parameter set for `cfg`: weights uniform in
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero, fully determined by the
/// seed.
pub fn build_unet<T: Real>(cfg: &UNetConfig<T>) -> Result<NetworkParams<T>> {
    cfg.validate()?;
    let mut rng = SeededRng::new(cfg.seed);
    let mut tensors = Vec::new();
    for spec in conv_specs(cfg) {
        let fan_in = spec.c_in * spec.k * spec.k;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let wlen = spec.c_out * fan_in;
        let wdata = (0..wlen)
            .map(|_| T::cast(rng.uniform_in(-bound, bound)))
            .collect();
        let w = Tensor::from_vec(&[spec.c_out, spec.c_in, spec.k, spec.k], wdata)?;
        tensors.push((format!("{}.w", spec.name), w));
        tensors.push((format!("{}.b", spec.name), Tensor::zeros(&[spec.c_out])));
    }
    Ok(NetworkParams { tensors })
}

/// One recorded forward pass: the output node plus the parameter leaves in
/// declaration order, for extracting gradients after backward.
pub struct ForwardPass {
    pub output: NodeId,
    pub param_nodes: Vec<NodeId>,
}

/// Record the network forward pass for input `x0` (`[2, H, W]`) on `tape`.
///
/// H and W must be divisible by `2^(depth-1)`; there is no implicit padding.
pub fn unet_forward<T: Real>(
    cfg: &UNetConfig<T>,
    params: &NetworkParams<T>,
    x0: &Tensor<T>,
    tape: &mut Tape<T>,
) -> Result<ForwardPass> {
    cfg.validate()?;
    let (c, h, w) = x0.dims3()?;
    if c != 2 {
        return Err(Error::Shape(format!("network input must have 2 channels, got {c}")));
    }
    let div = 1usize << (cfg.depth - 1);
    if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
        return Err(Error::Shape(format!(
            "input {h}x{w} is not divisible by 2^(depth-1) = {div}"
        )));
    }
    let specs = conv_specs(cfg);
    if params.len() != 2 * specs.len() {
        return Err(Error::Shape(format!(
            "parameter set has {} tensors, architecture expects {}",
            params.len(),
            2 * specs.len()
        )));
    }

    let mut param_nodes = Vec::with_capacity(params.len());
    for (_, t) in &params.tensors {
        param_nodes.push(tape.leaf(t.clone()));
    }

    let mut cursor = 0usize;
    let mut apply = |tape: &mut Tape<T>, input: NodeId| -> Result<NodeId> {
        let spec = &specs[cursor];
        let w = param_nodes[2 * cursor];
        let b = param_nodes[2 * cursor + 1];
        cursor += 1;
        let y = tape.conv2d(input, w, b, spec.stride, spec.pad())?;
        if spec.activated {
            tape.leaky_relu(y, cfg.slope)
        } else {
            Ok(y)
        }
    };

    let mut h_node = tape.constant(x0.clone());
    let mut skips = Vec::with_capacity(cfg.depth - 1);
    for _ in 0..cfg.depth - 1 {
        h_node = apply(tape, h_node)?; // conv1
        h_node = apply(tape, h_node)?; // conv2
        skips.push(h_node);
        h_node = apply(tape, h_node)?; // down
    }
    h_node = apply(tape, h_node)?;
    h_node = apply(tape, h_node)?;
    for _ in (0..cfg.depth - 1).rev() {
        let up = tape.upsample_nearest(h_node, 2)?;
        h_node = apply(tape, up)?; // up conv
        let skip = skips.pop().expect("one skip per decoder scale");
        h_node = tape.concat_channels(h_node, skip)?;
        h_node = apply(tape, h_node)?; // conv1 (2F -> F)
        h_node = apply(tape, h_node)?; // conv2
    }
    let output = apply(tape, h_node)?; // final 1x1, linear

    tape.value(output).check_finite("network output")?;
    debug_assert_eq!(tape.value(output).shape(), &[2, h, w]);
    Ok(ForwardPass {
        output,
        param_nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> UNetConfig<f64> {
        UNetConfig {
            depth: 2,
            filters: 4,
            kernel: 3,
            slope: 0.1,
            seed: 42,
        }
    }

    #[test]
    fn same_seed_gives_identical_params() {
        let cfg = tiny_cfg();
        let a = build_unet(&cfg).unwrap();
        let b = build_unet(&cfg).unwrap();
        for ((_, ta), (_, tb)) in a.tensors.iter().zip(&b.tensors) {
            assert_eq!(ta.data(), tb.data());
        }
    }

    #[test]
    fn parameter_count_matches_layer_arithmetic() {
        // depth 2, filters 4, kernel 3, two input channels:
        //   enc0.conv1 4*2*9+4, enc0.conv2 4*4*9+4, enc0.down 4*4*9+4,
        //   bottom.conv1/conv2 2*(4*4*9+4), dec0.up 4*4*9+4,
        //   dec0.conv1 4*8*9+4, dec0.conv2 4*4*9+4, final 2*4*1+2
        let expected = (4 * 2 * 9 + 4)
            + 6 * (4 * 4 * 9 + 4)
            + (4 * 8 * 9 + 4)
            + (2 * 4 + 2);
        let params = build_unet(&tiny_cfg()).unwrap();
        assert_eq!(params.count_scalars(), expected);
    }

    #[test]
    fn biases_start_at_zero() {
        let params = build_unet(&tiny_cfg()).unwrap();
        for (name, t) in params.iter() {
            if name.ends_with(".b") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn weight_init_respects_fan_in_bound() {
        let params = build_unet(&tiny_cfg()).unwrap();
        for (name, t) in params.iter() {
            if name.ends_with(".w") {
                let fan_in: usize = t.shape()[1..].iter().product();
                let bound = 1.0 / (fan_in as f64).sqrt();
                assert!(t.data().iter().all(|&v| v.abs() <= bound), "{name}");
            }
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut cfg = tiny_cfg();
        cfg.depth = 1;
        assert!(build_unet(&cfg).is_err());
        let mut cfg = tiny_cfg();
        cfg.kernel = 4;
        assert!(build_unet(&cfg).is_err());
        let mut cfg = tiny_cfg();
        cfg.filters = 0;
        assert!(build_unet(&cfg).is_err());
    }

    #[test]
    fn forward_preserves_shape_and_is_pure() {
        let cfg = UNetConfig {
            depth: 3,
            filters: 6,
            kernel: 3,
            slope: 0.1,
            seed: 7,
        };
        let params = build_unet(&cfg).unwrap();
        let x0 = {
            let mut rng = crate::rng::SeededRng::new(1);
            let data = (0..2 * 16 * 12).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            Tensor::from_vec(&[2, 16, 12], data).unwrap()
        };
        let mut tape = Tape::new();
        let pass = unet_forward(&cfg, &params, &x0, &mut tape).unwrap();
        assert_eq!(tape.value(pass.output).shape(), &[2, 16, 12]);

        let mut tape2 = Tape::new();
        let pass2 = unet_forward(&cfg, &params, &x0, &mut tape2).unwrap();
        let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(tape.value(pass.output)), bits(tape2.value(pass2.output)));
    }

    #[test]
    fn forward_rejects_indivisible_input() {
        let cfg = UNetConfig {
            depth: 3,
            filters: 4,
            kernel: 3,
            slope: 0.1,
            seed: 0,
        };
        let params = build_unet(&cfg).unwrap();
        let x0 = Tensor::<f64>::zeros(&[2, 10, 16]); // 10 % 4 != 0
        let mut tape = Tape::new();
        assert!(unet_forward(&cfg, &params, &x0, &mut tape).is_err());
    }

    #[test]
    fn layer_shape_audit() {
        // every conv except the final one has cfg.filters output channels;
        // first decoder conv of each scale sees 2*filters inputs
        let cfg = UNetConfig {
            depth: 3,
            filters: 5,
            kernel: 3,
            slope: 0.1,
            seed: 0,
        };
        let params = build_unet(&cfg).unwrap();
        for (name, t) in params.iter() {
            if !name.ends_with(".w") {
                continue;
            }
            let shape = t.shape();
            if name == "final.w" {
                assert_eq!(shape, &[2, 5, 1, 1]);
            } else if name.contains(".conv1") && name.starts_with("dec") {
                assert_eq!(shape, &[5, 10, 3, 3], "{name}");
            } else if name == "enc0.conv1.w" {
                assert_eq!(shape, &[5, 2, 3, 3]);
            } else {
                assert_eq!(shape, &[5, 5, 3, 3], "{name}");
            }
        }
    }

    /// Full tiny-network gradient against central finite differences,
    /// with a sum-of-squares loss on the output.
    #[test]
    fn tiny_net_gradient_matches_finite_differences() {
        let cfg = UNetConfig {
            depth: 2,
            filters: 2,
            kernel: 3,
            slope: 0.1,
            seed: 3,
        };
        let mut params = build_unet(&cfg).unwrap();
        let x0 = {
            let mut rng = crate::rng::SeededRng::new(4);
            let data = (0..2 * 8 * 8).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            Tensor::from_vec(&[2, 8, 8], data).unwrap()
        };
        let loss_of = |params: &NetworkParams<f64>| -> f64 {
            let mut tape = Tape::new();
            let pass = unet_forward(&cfg, params, &x0, &mut tape).unwrap();
            let loss = tape.sum_squares(pass.output).unwrap();
            tape.value(loss).scalar_value().unwrap()
        };
        let analytic = {
            let mut tape = Tape::new();
            let pass = unet_forward(&cfg, &params, &x0, &mut tape).unwrap();
            let loss = tape.sum_squares(pass.output).unwrap();
            let grads = tape.backward(loss).unwrap();
            let mut flat = Vec::new();
            for &node in &pass.param_nodes {
                flat.extend_from_slice(grads.wrt(node).unwrap().data());
            }
            flat
        };
        let h = 1e-5;
        let base = params.to_flat();
        let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            params.set_flat(&plus).unwrap();
            let lp = loss_of(&params);
            let mut minus = base.clone();
            minus[i] -= h;
            params.set_flat(&minus).unwrap();
            let lm = loss_of(&params);
            let fd = (lp - lm) / (2.0 * h);
            let rel = (analytic[i] - fd).abs() / fd.abs().max(1e-6 * scale);
            assert!(rel <= 1e-4, "param {i}: ad {} fd {fd}", analytic[i]);
        }
    }

    #[test]
    fn param_l2_examples() {
        let params = NetworkParams::<f64> {
            tensors: vec![("t".into(), Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap())],
        };
        assert_eq!(param_l2(&params), 25.0);
        let zeros = NetworkParams::<f64> {
            tensors: vec![("z".into(), Tensor::zeros(&[5]))],
        };
        assert_eq!(param_l2(&zeros), 0.0);
    }

    #[test]
    fn param_l2_matches_flat_dot_oracle() {
        let params = build_unet(&tiny_cfg()).unwrap();
        let flat = params.to_flat();
        let oracle: f64 = flat.iter().map(|v| v * v).sum();
        let got = param_l2(&params);
        assert!(((got - oracle) / oracle).abs() < 1e-12);
    }
}
