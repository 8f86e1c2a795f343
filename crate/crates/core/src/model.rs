//! The three networks: shared feature extractor, label classifier and domain
//! discriminator, each a stack of dense layers.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{affine_backward, affine_forward, softmax_rows, Activation, Matrix};
use crate::scalar::Scalar;

/// Layer layout of the three networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSpec {
    pub input_dim: usize,
    /// Hidden widths of the extractor, before the final feature layer.
    pub extractor_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub discriminator_hidden: Vec<usize>,
    /// Applied after every extractor layer, the feature layer included.
    pub extractor_activation: Activation,
    /// Applied after every hidden discriminator layer; the output is sigmoid.
    pub discriminator_activation: Activation,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            input_dim: 6,
            extractor_hidden: vec![64],
            feature_dim: 32,
            num_classes: 4,
            discriminator_hidden: vec![16],
            extractor_activation: Activation::Relu,
            discriminator_activation: Activation::Relu,
        }
    }
}

impl ArchSpec {
    /// Default layout for the given input width and class count.
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            num_classes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = std::iter::once(self.input_dim)
            .chain(self.extractor_hidden.iter().copied())
            .chain(std::iter::once(self.feature_dim))
            .chain(self.discriminator_hidden.iter().copied());
        for w in widths {
            if w == 0 {
                return Err(Error::InvalidArgument(format!(
                    "architecture widths must be >= 1: {self:?}"
                )));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> Dense<T> {
    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }
}

/// Gradient (or velocity) block matching one [`Dense`] layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LayerGrad<T> {
    pub fn zeros_like(layer: &Dense<T>) -> Self {
        Self {
            weight: Matrix::zeros(layer.fan_in(), layer.fan_out()),
            bias: vec![T::zero(); layer.fan_out()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

/// Intermediate values kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace<T> {
    inputs: Vec<Matrix<T>>,
    pre: Vec<Matrix<T>>,
    outputs: Vec<Matrix<T>>,
}

impl<T: Scalar> MlpTrace<T> {
    pub fn output(&self) -> &Matrix<T> {
        self.outputs.last().expect("trace of a nonempty network")
    }
}

impl<T: Scalar> Mlp<T> {
    fn glorot(widths: &[usize], activations: &[Activation], rng: &mut ChaCha8Rng) -> Self {
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(pair, &activation)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
                let data = (0..fan_in * fan_out)
                    .map(|_| T::lit(dist.sample(rng)))
                    .collect();
                Dense {
                    weight: Matrix::from_vec(fan_in, fan_out, data).expect("sized"),
                    bias: vec![T::zero(); fan_out],
                    activation,
                }
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Dense::fan_in)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::fan_out)
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let mut h = x.clone();
        for layer in &self.layers {
            let z = affine_forward(&h, &layer.weight, &layer.bias)?;
            h = layer.activation.forward(&z);
        }
        Ok(h)
    }

    pub fn forward_trace(&self, x: &Matrix<T>) -> Result<MlpTrace<T>> {
        let n = self.layers.len();
        let mut trace = MlpTrace {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
        };
        let mut h = x.clone();
        for layer in &self.layers {
            let z = affine_forward(&h, &layer.weight, &layer.bias)?;
            let a = layer.activation.forward(&z);
            trace.inputs.push(h);
            trace.pre.push(z);
            trace.outputs.push(a.clone());
            h = a;
        }
        Ok(trace)
    }

    /// Backpropagates `upstream` (gradient w.r.t. the network output).
    /// Returns per-layer gradients and the gradient w.r.t. the input.
    pub fn backward(
        &self,
        trace: &MlpTrace<T>,
        upstream: &Matrix<T>,
    ) -> Result<(Vec<LayerGrad<T>>, Matrix<T>)> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = upstream.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let gz = layer
                .activation
                .backward(&trace.pre[i], &trace.outputs[i], &g)?;
            let ag = affine_backward(&trace.inputs[i], &layer.weight, &gz)?;
            grads.push(LayerGrad {
                weight: ag.grad_w,
                bias: ag.grad_b,
            });
            g = ag.grad_x;
        }
        grads.reverse();
        Ok((grads, g))
    }

    pub fn zero_grads(&self) -> Vec<LayerGrad<T>> {
        self.layers.iter().map(LayerGrad::zeros_like).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }
}

/// Parameters of all three networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub extractor: Mlp<T>,
    pub classifier: Mlp<T>,
    pub discriminator: Mlp<T>,
}

/// Gradients for every parameter group; same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<T> {
    pub extractor: Vec<LayerGrad<T>>,
    pub classifier: Vec<LayerGrad<T>>,
    pub discriminator: Vec<LayerGrad<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zero_grads(&self) -> ModelGrads<T> {
        ModelGrads {
            extractor: self.extractor.zero_grads(),
            classifier: self.classifier.zero_grads(),
            discriminator: self.discriminator.zero_grads(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.extractor.is_finite() && self.classifier.is_finite() && self.discriminator.is_finite()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.extractor.input_dim()
    }

    /// Checks that the layer shapes chain and match `arch`.
    pub fn check_against(&self, arch: &ArchSpec) -> Result<()> {
        let expect = |mlp: &Mlp<T>, widths: Vec<usize>, name: &str| -> Result<()> {
            let got: Vec<usize> = std::iter::once(mlp.input_dim())
                .chain(mlp.layers.iter().map(Dense::fan_out))
                .collect();
            let chained = mlp
                .layers
                .windows(2)
                .all(|p| p[0].fan_out() == p[1].fan_in())
                && mlp.layers.iter().all(|l| l.bias.len() == l.fan_out());
            if got != widths || !chained {
                return Err(Error::InvalidArgument(format!(
                    "{name} layer widths {got:?} do not match architecture {widths:?}"
                )));
            }
            Ok(())
        };
        expect(&self.extractor, extractor_widths(arch), "extractor")?;
        expect(&self.classifier, vec![arch.feature_dim, arch.num_classes], "classifier")?;
        expect(&self.discriminator, discriminator_widths(arch), "discriminator")
    }
}

impl<T: Scalar> ModelGrads<T> {
    /// Visits every (parameter, gradient) slice pair in a fixed order.
    pub fn zip_params_mut(
        &self,
        params: &mut ModelParams<T>,
        mut f: impl FnMut(&mut [T], &[T]),
    ) -> Result<()> {
        let groups = [
            (&mut params.extractor, &self.extractor),
            (&mut params.classifier, &self.classifier),
            (&mut params.discriminator, &self.discriminator),
        ];
        for (mlp, grads) in groups {
            if mlp.layers.len() != grads.len() {
                return Err(Error::InvalidArgument(
                    "gradient layer count does not match parameters".into(),
                ));
            }
            for (layer, g) in mlp.layers.iter_mut().zip(grads) {
                if layer.weight.shape() != g.weight.shape() || layer.bias.len() != g.bias.len() {
                    return Err(Error::Shape {
                        op: "parameter update",
                        left: layer.weight.shape(),
                        right: g.weight.shape(),
                    });
                }
                f(layer.weight.as_mut_slice(), g.weight.as_slice());
                f(&mut layer.bias, &g.bias);
            }
        }
        Ok(())
    }

    /// Mutable visit of every gradient slice, for scaling or accumulation.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut [T])) {
        for group in [&mut self.extractor, &mut self.classifier, &mut self.discriminator] {
            for g in group.iter_mut() {
                f(g.weight.as_mut_slice());
                f(&mut g.bias);
            }
        }
    }
}

fn extractor_widths(arch: &ArchSpec) -> Vec<usize> {
    std::iter::once(arch.input_dim)
        .chain(arch.extractor_hidden.iter().copied())
        .chain(std::iter::once(arch.feature_dim))
        .collect()
}

fn discriminator_widths(arch: &ArchSpec) -> Vec<usize> {
    std::iter::once(arch.feature_dim)
        .chain(arch.discriminator_hidden.iter().copied())
        .chain(std::iter::once(1))
        .collect()
}

/// Glorot-uniform weights and zero biases, fully determined by `seed`.
pub fn init_params<T: Scalar>(arch: &ArchSpec, seed: u64) -> Result<ModelParams<T>> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let ew = extractor_widths(arch);
    let extractor = Mlp::glorot(&ew, &vec![arch.extractor_activation; ew.len() - 1], &mut rng);

    let classifier = Mlp::glorot(
        &[arch.feature_dim, arch.num_classes],
        &[Activation::Linear],
        &mut rng,
    );

    let dw = discriminator_widths(arch);
    let mut acts = vec![arch.discriminator_activation; dw.len() - 2];
    acts.push(Activation::Sigmoid);
    let discriminator = Mlp::glorot(&dw, &acts, &mut rng);

    Ok(ModelParams {
        extractor,
        classifier,
        discriminator,
    })
}

fn check_input<T: Scalar>(x: &Matrix<T>, mlp: &Mlp<T>, op: &'static str) -> Result<()> {
    if x.cols() != mlp.input_dim() {
        return Err(Error::Shape {
            op,
            left: x.shape(),
            right: (mlp.input_dim(), mlp.output_dim()),
        });
    }
    Ok(())
}

/// `F(x)`: maps raw features to the shared representation.
pub fn extract_features<T: Scalar>(x: &Matrix<T>, params: &ModelParams<T>) -> Result<Matrix<T>> {
    check_input(x, &params.extractor, "extract_features")?;
    params.extractor.forward(x)
}

/// `C(f)`: class probabilities, one softmax row per sample.
pub fn classify<T: Scalar>(features: &Matrix<T>, params: &ModelParams<T>) -> Result<Matrix<T>> {
    check_input(features, &params.classifier, "classify")?;
    softmax_rows(&params.classifier.forward(features)?)
}

/// `D(f)`: probability that each sample comes from the source domain.
pub fn discriminate<T: Scalar>(features: &Matrix<T>, params: &ModelParams<T>) -> Result<Vec<T>> {
    check_input(features, &params.discriminator, "discriminate")?;
    Ok(params.discriminator.forward(features)?.into_vec())
}

/// Class probabilities for raw inputs, `C(F(x))`.
pub fn predict_proba<T: Scalar>(x: &Matrix<T>, params: &ModelParams<T>) -> Result<Matrix<T>> {
    classify(&extract_features(x, params)?, params)
}

/// Index of the largest entry; exact ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise argmax of a probability matrix.
pub fn predict_classes<T: Scalar>(probs: &Matrix<T>) -> Vec<usize> {
    (0..probs.rows()).map(|r| argmax(probs.row(r))).collect()
}
