//! Two small softmax classifiers over dense features: a linear map and a
//! one-hidden-layer tanh network. Parameters live in a single flat vector so
//! optimizers can treat a model as a point in R^n; gradients come back in the
//! same layout.
//!
//! Layout: layers in order, each layer's weights row-major by output unit
//! (weight of input i into output o at `o * inputs + i`) followed by its
//! biases. tanh keeps the network twice differentiable, which the smoothness
//! diagnostics in the trainer rely on.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelFamily {
    #[serde(rename = "linear-softmax")]
    LinearSoftmax,
    #[serde(rename = "mlp-1-hidden")]
    MlpOneHidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(&'static str),
    #[error("parameter vector does not match the model layout")]
    ParamLayout,
    #[error("parameter vector has {got} values, layout needs {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("input has {got} features, model expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("input feature {index} is not finite")]
    NonFiniteInput { index: usize },
    #[error("logit adjoint has {got} entries, model outputs {expected}")]
    AdjointDim { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub input_dim: usize,
    pub output_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_dim: Option<usize>,
}

impl ModelSpec {
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Self {
            family: ModelFamily::LinearSoftmax,
            input_dim,
            output_dim,
            hidden_dim: None,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            family: ModelFamily::MlpOneHidden,
            input_dim,
            output_dim,
            hidden_dim: Some(hidden_dim),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.output_dim == 0 {
            return Err(ModelError::InvalidSpec("output_dim must be positive"));
        }
        match (self.family, self.hidden_dim) {
            (ModelFamily::LinearSoftmax, None) => Ok(()),
            (ModelFamily::LinearSoftmax, Some(_)) => {
                Err(ModelError::InvalidSpec("linear-softmax takes no hidden_dim"))
            }
            (ModelFamily::MlpOneHidden, Some(h)) if h > 0 => Ok(()),
            (ModelFamily::MlpOneHidden, _) => {
                Err(ModelError::InvalidSpec("mlp-1-hidden needs hidden_dim >= 1"))
            }
        }
    }

    /// Layer shapes in forward order.
    pub fn layers(&self) -> Vec<LayerShape> {
        match self.family {
            ModelFamily::LinearSoftmax => vec![LayerShape {
                inputs: self.input_dim,
                outputs: self.output_dim,
            }],
            ModelFamily::MlpOneHidden => {
                let hidden = self.hidden_dim.unwrap_or(0);
                vec![
                    LayerShape {
                        inputs: self.input_dim,
                        outputs: hidden,
                    },
                    LayerShape {
                        inputs: hidden,
                        outputs: self.output_dim,
                    },
                ]
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(LayerShape::param_count).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
}

impl LayerShape {
    pub fn param_count(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }
}

/// Model parameters as one flat vector plus the layer layout that interprets
/// it. All vector-space operations require identical layouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParamVector")]
pub struct ParamVector {
    layout: Vec<LayerShape>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawParamVector {
    layout: Vec<LayerShape>,
    values: Vec<f64>,
}

impl TryFrom<RawParamVector> for ParamVector {
    type Error = String;

    fn try_from(raw: RawParamVector) -> Result<Self, String> {
        let expected: usize = raw.layout.iter().map(LayerShape::param_count).sum();
        if raw.values.len() != expected {
            return Err(alloc::format!(
                "parameter vector has {} values, layout needs {expected}",
                raw.values.len()
            ));
        }
        Ok(Self {
            layout: raw.layout,
            values: raw.values,
        })
    }
}

impl ParamVector {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let layout = spec.layers();
        let count = layout.iter().map(LayerShape::param_count).sum();
        Self {
            layout,
            values: vec![0.0; count],
        }
    }

    pub fn from_values(spec: &ModelSpec, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != spec.param_count() {
            return Err(ModelError::ParamCount {
                expected: spec.param_count(),
                got: values.len(),
            });
        }
        Ok(Self {
            layout: spec.layers(),
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[LayerShape] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn matches_spec(&self, spec: &ModelSpec) -> bool {
        self.layout == spec.layers()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// self += scale * other. Layouts must match.
    pub fn add_scaled(&mut self, scale: f64, other: &ParamVector) {
        assert_eq!(self.layout, other.layout, "parameter layout mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    /// self + scale * other, leaving self untouched.
    pub fn plus_scaled(&self, scale: f64, other: &ParamVector) -> ParamVector {
        let mut out = self.clone();
        out.add_scaled(scale, other);
        out
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        assert_eq!(self.layout, other.layout, "parameter layout mismatch");
        math::dot(&self.values, &other.values)
    }

    pub fn sq_norm(&self) -> f64 {
        math::sq_norm(&self.values)
    }

    pub fn norm(&self) -> f64 {
        math::l2_norm(&self.values)
    }

    fn layer_start(&self, layer: usize) -> usize {
        self.layout[..layer].iter().map(LayerShape::param_count).sum()
    }

    /// (weights, biases) slices of one layer.
    fn layer_slices(&self, layer: usize) -> (&[f64], &[f64]) {
        let shape = self.layout[layer];
        let start = self.layer_start(layer);
        let split = start + shape.inputs * shape.outputs;
        (
            &self.values[start..split],
            &self.values[split..split + shape.outputs],
        )
    }

    fn layer_slices_mut(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        let shape = self.layout[layer];
        let start = self.layer_start(layer);
        let split = start + shape.inputs * shape.outputs;
        let end = split + shape.outputs;
        let (_, rest) = self.values.split_at_mut(start);
        let (wb, _) = rest.split_at_mut(end - start);
        wb.split_at_mut(split - start)
    }
}

/// Model output on one input: raw logits and their softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl Prediction {
    /// Predicted class; the lowest index wins ties.
    pub fn class(&self) -> usize {
        math::argmax(&self.logits)
    }
}

/// Glorot-uniform weights (bound sqrt(6 / (fan_in + fan_out))), zero biases.
/// Deterministic in the seed.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamVector, ModelError> {
    spec.validate()?;
    let mut params = ParamVector::zeros(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in 0..params.layout.len() {
        let shape = params.layout[layer];
        let bound = libm::sqrt(6.0 / (shape.inputs + shape.outputs) as f64);
        let (weights, _) = params.layer_slices_mut(layer);
        for w in weights {
            *w = bound * (2.0 * rng.random::<f64>() - 1.0);
        }
    }
    Ok(params)
}

struct Activations {
    hidden: Option<Vec<f64>>,
    logits: Vec<f64>,
}

fn affine(weights: &[f64], biases: &[f64], x: &[f64]) -> Vec<f64> {
    let inputs = x.len();
    biases
        .iter()
        .enumerate()
        .map(|(o, &b)| b + math::dot(&weights[o * inputs..(o + 1) * inputs], x))
        .collect()
}

fn check_input(spec: &ModelSpec, params: &ParamVector, x: &[f64]) -> Result<(), ModelError> {
    if !params.matches_spec(spec) {
        return Err(ModelError::ParamLayout);
    }
    if x.len() != spec.input_dim {
        return Err(ModelError::InputDim {
            expected: spec.input_dim,
            got: x.len(),
        });
    }
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput { index });
    }
    Ok(())
}

fn activations(spec: &ModelSpec, params: &ParamVector, x: &[f64]) -> Result<Activations, ModelError> {
    check_input(spec, params, x)?;
    match spec.family {
        ModelFamily::LinearSoftmax => {
            let (w, b) = params.layer_slices(0);
            Ok(Activations {
                hidden: None,
                logits: affine(w, b, x),
            })
        }
        ModelFamily::MlpOneHidden => {
            let (w1, b1) = params.layer_slices(0);
            let mut hidden = affine(w1, b1, x);
            for h in &mut hidden {
                *h = libm::tanh(*h);
            }
            let (w2, b2) = params.layer_slices(1);
            let logits = affine(w2, b2, &hidden);
            Ok(Activations {
                hidden: Some(hidden),
                logits,
            })
        }
    }
}

/// Logits and softmax probabilities at one input.
pub fn forward(spec: &ModelSpec, params: &ParamVector, x: &[f64]) -> Result<Prediction, ModelError> {
    let acts = activations(spec, params, x)?;
    let probabilities = math::softmax(&acts.logits);
    Ok(Prediction {
        logits: acts.logits,
        probabilities,
    })
}

fn grad_from_activations(
    spec: &ModelSpec,
    params: &ParamVector,
    x: &[f64],
    acts: &Activations,
    dlogits: &[f64],
) -> ParamVector {
    let mut grad = ParamVector::zeros(spec);
    match spec.family {
        ModelFamily::LinearSoftmax => {
            let inputs = x.len();
            let (gw, gb) = grad.layer_slices_mut(0);
            for (o, &d) in dlogits.iter().enumerate() {
                for (i, &xi) in x.iter().enumerate() {
                    gw[o * inputs + i] = d * xi;
                }
                gb[o] = d;
            }
        }
        ModelFamily::MlpOneHidden => {
            let hidden = acts.hidden.as_ref().expect("mlp activations carry hidden");
            let hdim = hidden.len();
            let (w2, _) = params.layer_slices(1);
            // Output layer.
            {
                let (gw2, gb2) = grad.layer_slices_mut(1);
                for (o, &d) in dlogits.iter().enumerate() {
                    for (j, &hj) in hidden.iter().enumerate() {
                        gw2[o * hdim + j] = d * hj;
                    }
                    gb2[o] = d;
                }
            }
            // Backprop through tanh into the first layer.
            let mut dpre = vec![0.0; hdim];
            for (j, dp) in dpre.iter_mut().enumerate() {
                let mut dh = 0.0;
                for (o, &d) in dlogits.iter().enumerate() {
                    dh += d * w2[o * hdim + j];
                }
                *dp = dh * (1.0 - hidden[j] * hidden[j]);
            }
            let inputs = x.len();
            let (gw1, gb1) = grad.layer_slices_mut(0);
            for (j, &dp) in dpre.iter().enumerate() {
                for (i, &xi) in x.iter().enumerate() {
                    gw1[j * inputs + i] = dp * xi;
                }
                gb1[j] = dp;
            }
        }
    }
    grad
}

/// Parameter gradient of `<logits(theta; x), dlogits>`, i.e. the adjoint
/// `dlogits` pulled back through the network.
pub fn grad_params(
    spec: &ModelSpec,
    params: &ParamVector,
    x: &[f64],
    dlogits: &[f64],
) -> Result<ParamVector, ModelError> {
    if dlogits.len() != spec.output_dim {
        return Err(ModelError::AdjointDim {
            expected: spec.output_dim,
            got: dlogits.len(),
        });
    }
    let acts = activations(spec, params, x)?;
    Ok(grad_from_activations(spec, params, x, &acts, dlogits))
}

/// For each class c, the parameter gradient of -log softmax(logits)_c at x.
/// One forward pass is shared across classes.
pub fn per_class_param_grads(
    spec: &ModelSpec,
    params: &ParamVector,
    x: &[f64],
) -> Result<Vec<ParamVector>, ModelError> {
    let acts = activations(spec, params, x)?;
    let probs = math::softmax(&acts.logits);
    let mut grads = Vec::with_capacity(spec.output_dim);
    for c in 0..spec.output_dim {
        let mut dlogits = probs.clone();
        dlogits[c] -= 1.0;
        grads.push(grad_from_activations(spec, params, x, &acts, &dlogits));
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn param_counts_follow_layer_shapes() {
        assert_eq!(ModelSpec::linear(3, 2).param_count(), 8);
        assert_eq!(ModelSpec::mlp(3, 4, 2).param_count(), 26);
        assert_eq!(ModelSpec::linear(0, 2).param_count(), 2);
    }

    #[test]
    fn spec_validation_requires_matching_hidden_dim() {
        assert!(ModelSpec::linear(2, 2).validate().is_ok());
        assert!(ModelSpec::mlp(2, 4, 2).validate().is_ok());
        let mut bad = ModelSpec::linear(2, 2);
        bad.hidden_dim = Some(3);
        assert!(bad.validate().is_err());
        let mut bad = ModelSpec::mlp(2, 1, 2);
        bad.hidden_dim = None;
        assert!(bad.validate().is_err());
        assert!(ModelSpec::mlp(2, 0, 2).validate().is_err());
        assert!(ModelSpec::linear(2, 0).validate().is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded_with_zero_biases() {
        let spec = ModelSpec::mlp(5, 7, 3);
        let a = init_params(&spec, 42).unwrap();
        let b = init_params(&spec, 42).unwrap();
        assert_eq!(a, b);
        let c = init_params(&spec, 43).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.len(), spec.param_count());

        let bound1 = libm::sqrt(6.0 / (5.0 + 7.0));
        let (w1, b1) = a.layer_slices(0);
        assert!(w1.iter().all(|v| v.abs() <= bound1));
        assert!(w1.iter().any(|v| *v != 0.0));
        assert!(b1.iter().all(|v| *v == 0.0));
        let bound2 = libm::sqrt(6.0 / (7.0 + 3.0));
        let (w2, b2) = a.layer_slices(1);
        assert!(w2.iter().all(|v| v.abs() <= bound2));
        assert!(b2.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_at_zero_params_is_uniform() {
        for spec in [ModelSpec::linear(4, 3), ModelSpec::mlp(4, 5, 3)] {
            let p = ParamVector::zeros(&spec);
            let pred = forward(&spec, &p, &[0.3, -1.0, 0.0, 2.0]).unwrap();
            for prob in pred.probabilities {
                assert!(close(prob, 1.0 / 3.0, 1e-15));
            }
        }
    }

    #[test]
    fn forward_matches_logistic_hand_value() {
        // One input, two classes, weights [1, 0], zero biases, x = 1:
        // logits (1, 0), prob of class 0 = 1/(1 + e^-1).
        let spec = ModelSpec::linear(1, 2);
        let params = ParamVector::from_values(&spec, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let pred = forward(&spec, &params, &[1.0]).unwrap();
        assert_eq!(pred.logits, vec![1.0, 0.0]);
        assert!(close(pred.probabilities[0], 0.7310585786300049, 1e-15));
        assert!(close(pred.probabilities[1], 0.2689414213699951, 1e-15));
        assert_eq!(pred.class(), 0);
    }

    #[test]
    fn probabilities_are_invariant_to_bias_shifts() {
        let spec = ModelSpec::linear(2, 3);
        let params = init_params(&spec, 9).unwrap();
        let x = [0.4, -0.7];
        let base = forward(&spec, &params, &x).unwrap();
        let mut shifted = params.clone();
        {
            let (_, biases) = shifted.layer_slices_mut(0);
            for b in biases {
                *b += 5.0;
            }
        }
        let moved = forward(&spec, &shifted, &x).unwrap();
        for (p, q) in base.probabilities.iter().zip(&moved.probabilities) {
            assert!(close(*p, *q, 1e-12));
        }
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let spec = ModelSpec::linear(2, 2);
        let params = ParamVector::zeros(&spec);
        assert!(matches!(
            forward(&spec, &params, &[1.0]),
            Err(ModelError::InputDim { expected: 2, got: 1 })
        ));
        assert!(matches!(
            forward(&spec, &params, &[1.0, f64::INFINITY]),
            Err(ModelError::NonFiniteInput { index: 1 })
        ));
        let other = ParamVector::zeros(&ModelSpec::linear(3, 2));
        assert!(matches!(
            forward(&spec, &other, &[1.0, 2.0]),
            Err(ModelError::ParamLayout)
        ));
    }

    #[test]
    fn zero_adjoint_gives_zero_gradient() {
        let spec = ModelSpec::mlp(3, 4, 2);
        let params = init_params(&spec, 5).unwrap();
        let g = grad_params(&spec, &params, &[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(g.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_is_linear_in_the_adjoint() {
        let spec = ModelSpec::mlp(2, 3, 2);
        let params = init_params(&spec, 11).unwrap();
        let x = [0.5, -0.25];
        let g1 = grad_params(&spec, &params, &x, &[1.0, 0.0]).unwrap();
        let g2 = grad_params(&spec, &params, &x, &[0.0, 1.0]).unwrap();
        let combined = grad_params(&spec, &params, &x, &[2.0, -3.0]).unwrap();
        let expected = g1.plus_scaled(-3.0 / 2.0, &g2); // (2*g1 - 3*g2)/2
        for (c, e) in combined.values().iter().zip(expected.values()) {
            assert!(close(*c, 2.0 * e, 1e-12));
        }
    }

    /// Central finite differences of <logits, fixed adjoint> as the oracle
    /// for the analytic pullback, both families.
    #[test]
    fn gradient_matches_finite_differences() {
        let step = 1e-5;
        for (spec, seed) in [
            (ModelSpec::linear(3, 3), 21u64),
            (ModelSpec::mlp(3, 4, 3), 22u64),
        ] {
            let params = init_params(&spec, seed).unwrap();
            let mut rng = rng::stream(seed, 99, 0);
            let x: Vec<f64> = (0..spec.input_dim)
                .map(|_| rng::standard_normal(&mut rng))
                .collect();
            let dlogits: Vec<f64> = (0..spec.output_dim)
                .map(|_| rng::standard_normal(&mut rng))
                .collect();
            let analytic = grad_params(&spec, &params, &x, &dlogits).unwrap();
            for k in 0..params.len() {
                let mut plus = params.clone();
                plus.values_mut()[k] += step;
                let mut minus = params.clone();
                minus.values_mut()[k] -= step;
                let fp = math::dot(&forward(&spec, &plus, &x).unwrap().logits, &dlogits);
                let fm = math::dot(&forward(&spec, &minus, &x).unwrap().logits, &dlogits);
                let fd = (fp - fm) / (2.0 * step);
                let a = analytic.values()[k];
                assert!(
                    (a - fd).abs() <= 1e-9 + 1e-6 * fd.abs().max(a.abs()),
                    "family {:?} param {k}: analytic {a} vs fd {fd}",
                    spec.family
                );
            }
        }
    }

    /// d(-log f_c)/dtheta oracle via finite differences, per class.
    #[test]
    fn per_class_grads_match_finite_differences() {
        let step = 1e-5;
        for (spec, seed) in [
            (ModelSpec::linear(2, 3), 31u64),
            (ModelSpec::mlp(2, 3, 3), 32u64),
        ] {
            let params = init_params(&spec, seed).unwrap();
            let x = [0.8, -0.5];
            let grads = per_class_param_grads(&spec, &params, &x).unwrap();
            assert_eq!(grads.len(), 3);
            for (c, grad) in grads.iter().enumerate() {
                for k in 0..params.len() {
                    let mut plus = params.clone();
                    plus.values_mut()[k] += step;
                    let mut minus = params.clone();
                    minus.values_mut()[k] -= step;
                    let fp = -libm::log(forward(&spec, &plus, &x).unwrap().probabilities[c]);
                    let fm = -libm::log(forward(&spec, &minus, &x).unwrap().probabilities[c]);
                    let fd = (fp - fm) / (2.0 * step);
                    let a = grad.values()[k];
                    assert!(
                        (a - fd).abs() <= 1e-9 + 1e-6 * fd.abs().max(a.abs()),
                        "family {:?} class {c} param {k}: analytic {a} vs fd {fd}",
                        spec.family
                    );
                }
            }
        }
    }

    /// sum_c f_c * grad(-log f_c) telescopes to zero.
    #[test]
    fn per_class_grads_mix_to_zero_under_the_model_distribution() {
        let spec = ModelSpec::mlp(2, 4, 3);
        let params = init_params(&spec, 7).unwrap();
        let x = [1.2, 0.3];
        let probs = forward(&spec, &params, &x).unwrap().probabilities;
        let grads = per_class_param_grads(&spec, &params, &x).unwrap();
        let mut mix = ParamVector::zeros(&spec);
        for (c, g) in grads.iter().enumerate() {
            mix.add_scaled(probs[c], g);
        }
        assert!(mix.norm() < 1e-12, "norm {}", mix.norm());
    }

    /// With two classes and zero parameters the two per-class gradients are
    /// exact negations of each other.
    #[test]
    fn per_class_grads_are_antisymmetric_for_balanced_binary() {
        let spec = ModelSpec::linear(2, 2);
        let params = ParamVector::zeros(&spec);
        let grads = per_class_param_grads(&spec, &params, &[0.6, -1.1]).unwrap();
        for (a, b) in grads[0].values().iter().zip(grads[1].values()) {
            assert!(close(*a, -*b, 1e-15));
        }
    }

    #[test]
    fn param_vector_ops_and_serde_round_trip() {
        let spec = ModelSpec::linear(1, 2);
        let a = ParamVector::from_values(&spec, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = ParamVector::from_values(&spec, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let c = a.plus_scaled(2.0, &b);
        assert_eq!(c.values(), &[2.0, 3.0, 4.0, 5.0]);
        assert!(close(a.dot(&b), 5.0, 1e-15));
        assert!(close(b.sq_norm(), 1.0, 1e-15));
        assert!(ParamVector::from_values(&spec, vec![1.0]).is_err());
    }

    #[test]
    fn bias_only_models_are_supported() {
        let spec = ModelSpec::linear(0, 3);
        let params = ParamVector::from_values(&spec, vec![0.1, 0.9, -0.2]).unwrap();
        let pred = forward(&spec, &params, &[]).unwrap();
        assert_eq!(pred.logits, vec![0.1, 0.9, -0.2]);
        assert_eq!(pred.class(), 1);
    }
}
