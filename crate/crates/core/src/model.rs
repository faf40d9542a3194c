//! Layer-stack classifiers, the two built-in architectures, and the
//! [`Classifier`] interface the attacks are written against.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::layers::{ComputationRecord, Layer, LayerKind, Padding};
use crate::loss::softmax_cross_entropy;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("unknown architecture `{0}` (expected mlp-small or cnn-2conv)")]
    UnknownArch(String),
    #[error("layer {layer} ({kind}): expected shape {expected:?}, found {found:?}")]
    Shape {
        layer: usize,
        kind: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("model output must be a vector of at least two class logits, got shape {0:?}")]
    Output(Vec<usize>),
    #[error("input shape {found:?} does not match model input {expected:?}")]
    Input {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
}

/// A network that attacks can query: logits, and input gradients pulled
/// back from a logit gradient through a recorded forward pass.
pub trait Classifier<T: Scalar>: Sync {
    type Record;

    fn input_shape(&self) -> &[usize];
    fn num_classes(&self) -> usize;
    /// Logits plus whatever the backward pass needs. `x` has `input_shape`.
    fn forward_recorded(&self, x: &Tensor<T>) -> (Tensor<T>, Self::Record);
    /// Gradient with respect to the input of `<grad_logits, logits(x)>`.
    fn input_gradient(&self, record: Self::Record, grad_logits: &Tensor<T>) -> Tensor<T>;

    fn logits(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward_recorded(x).0
    }
}

impl<T: Scalar, C: Classifier<T>> Classifier<T> for &C {
    type Record = C::Record;

    fn input_shape(&self) -> &[usize] {
        (**self).input_shape()
    }
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn forward_recorded(&self, x: &Tensor<T>) -> (Tensor<T>, Self::Record) {
        (**self).forward_recorded(x)
    }
    fn input_gradient(&self, record: Self::Record, grad_logits: &Tensor<T>) -> Tensor<T> {
        (**self).input_gradient(record, grad_logits)
    }
    fn logits(&self, x: &Tensor<T>) -> Tensor<T> {
        (**self).logits(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    MlpSmall,
    Cnn2Conv,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::MlpSmall => "mlp-small",
            Arch::Cnn2Conv => "cnn-2conv",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mlp-small" => Ok(Arch::MlpSmall),
            "cnn-2conv" => Ok(Arch::Cnn2Conv),
            other => Err(ModelError::UnknownArch(other.to_string())),
        }
    }
}

/// Concrete architecture: family, input signature, class count and widths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub arch: Arch,
    pub input_shape: Vec<usize>,
    pub classes: usize,
    /// Hidden width (mlp-small) or the two conv channel counts (cnn-2conv).
    pub widths: Vec<usize>,
    /// Square kernel size of both convolutions.
    pub kernel: usize,
}

impl ArchSpec {
    /// flatten -> dense(32) -> relu -> dense(classes)
    pub fn mlp_small(input_shape: &[usize], classes: usize) -> Self {
        Self {
            arch: Arch::MlpSmall,
            input_shape: input_shape.to_vec(),
            classes,
            widths: vec![32],
            kernel: 0,
        }
    }

    /// conv 16@5x5 -> relu -> pool -> conv 32@5x5 -> relu -> pool -> dense,
    /// both convolutions unpadded.
    pub fn cnn_2conv(input_shape: &[usize], classes: usize) -> Self {
        Self {
            arch: Arch::Cnn2Conv,
            input_shape: input_shape.to_vec(),
            classes,
            widths: vec![16, 32],
            kernel: 5,
        }
    }

    pub fn new(arch: Arch, input_shape: &[usize], classes: usize) -> Self {
        match arch {
            Arch::MlpSmall => Self::mlp_small(input_shape, classes),
            Arch::Cnn2Conv => Self::cnn_2conv(input_shape, classes),
        }
    }

    pub fn with_widths(mut self, widths: &[usize]) -> Self {
        self.widths = widths.to_vec();
        self
    }

    pub fn with_kernel(mut self, kernel: usize) -> Self {
        self.kernel = kernel;
        self
    }
}

/// Builds a freshly initialized model. Weights are uniform on
/// `[-sqrt(6 / fan_in), sqrt(6 / fan_in)]`, biases zero, drawn from a
/// ChaCha stream keyed by `seed`.
pub fn build_model<T: Scalar>(spec: &ArchSpec, seed: u64) -> Result<Model<T>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = |shape: &[usize], fan_in: usize| {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect();
        Tensor::from_parts(shape.to_vec(), data)
    };
    let width = |i: usize| -> Result<usize, ModelError> {
        spec.widths
            .get(i)
            .copied()
            .filter(|&w| w > 0)
            .ok_or_else(|| ModelError::UnknownArch(format!("{} without width #{i}", spec.arch)))
    };

    let mut layers = Vec::new();
    match spec.arch {
        Arch::MlpSmall => {
            let n_in: usize = spec.input_shape.iter().product();
            let hidden = width(0)?;
            layers.push(Layer::Flatten);
            layers.push(Layer::Dense {
                weight: init(&[n_in, hidden], n_in),
                bias: Tensor::zeros(&[hidden]),
            });
            layers.push(Layer::Relu);
            layers.push(Layer::Dense {
                weight: init(&[hidden, spec.classes], hidden),
                bias: Tensor::zeros(&[spec.classes]),
            });
        }
        Arch::Cnn2Conv => {
            let k = spec.kernel;
            let cin = spec.input_shape.last().copied().unwrap_or(1);
            let (c1, c2) = (width(0)?, width(1)?);
            layers.push(Layer::Conv2d {
                weight: init(&[k, k, cin, c1], k * k * cin),
                bias: Tensor::zeros(&[c1]),
                padding: Padding::Valid,
            });
            layers.push(Layer::Relu);
            layers.push(Layer::MaxPool2);
            layers.push(Layer::Conv2d {
                weight: init(&[k, k, c1, c2], k * k * c1),
                bias: Tensor::zeros(&[c2]),
                padding: Padding::Valid,
            });
            layers.push(Layer::Relu);
            layers.push(Layer::MaxPool2);
            layers.push(Layer::Flatten);
            // The flattened width depends on the input size; probe it.
            let flat = Model::probe_shape(&spec.input_shape, &layers)?;
            let n_in: usize = flat.iter().product();
            layers.push(Layer::Dense {
                weight: init(&[n_in, spec.classes], n_in),
                bias: Tensor::zeros(&[spec.classes]),
            });
        }
    }
    Model::from_layers(spec.arch.name(), &spec.input_shape, layers)
}

/// Per-layer parameter gradients, laid out like [`Layer::params`].
pub type ParamGrads<T> = Vec<Vec<Tensor<T>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    classes: usize,
}

impl<T: Scalar> Model<T> {
    /// Assembles a model, checking the shape chain end to end.
    pub fn from_layers(
        name: &str,
        input_shape: &[usize],
        layers: Vec<Layer<T>>,
    ) -> Result<Self, ModelError> {
        let out = Self::probe_shape(input_shape, &layers)?;
        if out.len() != 1 || out[0] < 2 {
            return Err(ModelError::Output(out));
        }
        Ok(Self {
            name: name.to_string(),
            input_shape: input_shape.to_vec(),
            layers,
            classes: out[0],
        })
    }

    fn probe_shape(input_shape: &[usize], layers: &[Layer<T>]) -> Result<Vec<usize>, ModelError> {
        let mut shape = input_shape.to_vec();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer.output_shape(&shape).map_err(|p| ModelError::Shape {
                layer: i,
                kind: layer.kind().name(),
                expected: p.expected,
                found: p.found,
            })?;
        }
        Ok(shape)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn layer_kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(Layer::kind).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(Tensor::len)
            .sum()
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .all(Tensor::is_finite)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            name: self.name.clone(),
            input_shape: self.input_shape.clone(),
            layers: self.layers.iter().map(Layer::cast).collect(),
            classes: self.classes,
        }
    }

    pub fn check_input(&self, x: &Tensor<T>) -> Result<(), ModelError> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(ModelError::Input {
                expected: self.input_shape.clone(),
                found: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn check_label(&self, label: usize) -> Result<(), ModelError> {
        if label >= self.classes {
            return Err(ModelError::Label {
                label,
                classes: self.classes,
            });
        }
        Ok(())
    }

    /// Logits for `x` together with the record needed to differentiate them.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ComputationRecord<T>), ModelError> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    fn forward_unchecked(&self, x: &Tensor<T>) -> (Tensor<T>, ComputationRecord<T>) {
        let mut record = ComputationRecord::default();
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (next, saved) = layer.forward(&h);
            record.push(i, saved);
            h = next;
        }
        (h, record)
    }

    /// Replays `record` backwards from `grad_logits`. Parameter gradients
    /// are accumulated into `param_grads` when given; the input gradient is
    /// returned when `want_input` is set.
    pub fn backward(
        &self,
        mut record: ComputationRecord<T>,
        grad_logits: &Tensor<T>,
        mut param_grads: Option<&mut ParamGrads<T>>,
        want_input: bool,
    ) -> Option<Tensor<T>> {
        let mut g = grad_logits.clone();
        while let Some((i, saved)) = record.pop() {
            let grads = param_grads.as_deref_mut().map(|pg| pg[i].as_mut_slice());
            let need = want_input || i > 0;
            match self.layers[i].backward(saved, &g, grads, need) {
                Some(next) => g = next,
                None => return None,
            }
        }
        Some(g)
    }

    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        Ok(self.forward(x)?.0)
    }

    /// Class with the largest logit, lowest index on ties.
    pub fn predict(&self, x: &Tensor<T>) -> Result<usize, ModelError> {
        Ok(self.logits(x)?.argmax())
    }

    /// Gradient of the softmax cross-entropy loss at `(x, label)` with
    /// respect to `x`.
    pub fn grad_input(&self, x: &Tensor<T>, label: usize) -> Result<Tensor<T>, ModelError> {
        self.check_label(label)?;
        let (logits, record) = self.forward(x)?;
        let (_, dz) = softmax_cross_entropy(&logits, label);
        Ok(self
            .backward(record, &dz, None, true)
            .expect("input gradient requested"))
    }

    pub fn zero_grads(&self) -> ParamGrads<T> {
        self.layers
            .iter()
            .map(|l| l.params().iter().map(|p| Tensor::zeros(p.shape())).collect())
            .collect()
    }

    /// Adds the parameter gradient of the loss at `(x, label)` into `grads`
    /// and returns the loss.
    pub fn accumulate_param_grads(
        &self,
        x: &Tensor<T>,
        label: usize,
        grads: &mut ParamGrads<T>,
    ) -> Result<T, ModelError> {
        self.check_label(label)?;
        let (logits, record) = self.forward(x)?;
        let (loss, dz) = softmax_cross_entropy(&logits, label);
        self.backward(record, &dz, Some(grads), false);
        Ok(loss)
    }
}

impl<T: Scalar> Classifier<T> for Model<T> {
    type Record = ComputationRecord<T>;

    fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn forward_recorded(&self, x: &Tensor<T>) -> (Tensor<T>, Self::Record) {
        self.forward(x).expect("attack input matches model input")
    }

    fn input_gradient(&self, record: Self::Record, grad_logits: &Tensor<T>) -> Tensor<T> {
        self.backward(record, grad_logits, None, true)
            .expect("input gradient requested")
    }
}
