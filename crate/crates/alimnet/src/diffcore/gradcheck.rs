//! Central-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    Activation, ActivationKind, BatchNorm, Conv2d, Ctx, Dense, Dropout, Gru, Layer, MaxPool2d,
    Tensor, UpsampleNearest,
};
use crate::{Error, Result};

/// Compare an analytic gradient against central differences of a scalar
/// function. Returns the max over coordinates of
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
pub fn gradient_check(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    analytic: &[f64],
    eps: f64,
) -> Result<f64> {
    if analytic.len() != x.len() {
        return Err(Error::shape("gradient_check", &[x.len()], &[analytic.len()]));
    }
    let mut probe = x.to_vec();
    let mut max_err = 0.0f64;
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let f_plus = f(&probe)?;
        probe[i] = orig - eps;
        let f_minus = f(&probe)?;
        probe[i] = orig;
        let numeric = (f_plus - f_minus) / (2.0 * eps);
        let a = analytic[i];
        if !numeric.is_finite() || !a.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value at coordinate {i}: analytic {a}, numeric {numeric}"
            )));
        }
        let err = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
        max_err = max_err.max(err);
    }
    Ok(max_err)
}

/// Worst error found when checking one layer: gradient with respect to the
/// input and with respect to every trainable parameter.
#[derive(Debug, Clone, Copy)]
pub struct LayerGradErrors {
    pub input: f64,
    pub params: f64,
}

fn weighted_sum(y: &Tensor, weights: &[f64]) -> f64 {
    y.data().iter().zip(weights).map(|(a, b)| a * b).sum()
}

/// Verify a layer's backward pass against central differences. The scalar
/// objective is a fixed random weighting of the outputs so that direction
/// information is not lost (a plain sum is blind to softmax, whose outputs
/// sum to a constant). Dropout runs deterministically; batchnorm runs on
/// batch statistics without touching its moving estimates.
pub fn check_layer_gradients(
    layer: &mut dyn Layer,
    input: &Tensor,
    eps: f64,
    seed: u64,
) -> Result<LayerGradErrors> {
    let mut wrng = ChaCha8Rng::seed_from_u64(seed);
    let out_shape = layer.out_shape(input.shape())?;
    let out_numel: usize = out_shape.iter().product();
    let weights: Vec<f64> = (0..out_numel).map(|_| wrng.gen_range(-1.0..1.0)).collect();

    // analytic pass
    layer.params_mut().zero_grads();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let mut ctx = Ctx::train_frozen(&mut rng);
    ctx.deterministic = true;
    let y = layer.forward(input, &mut ctx)?;
    let grad_in = layer.backward(&Tensor::new(out_shape.clone(), weights.clone())?)?;

    // numeric: input coordinates
    let mut probe = input.clone();
    let eval = |layer: &mut dyn Layer, x: &Tensor| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
        let mut ctx = Ctx::train_frozen(&mut rng);
        ctx.deterministic = true;
        let y = layer.forward(x, &mut ctx)?;
        Ok(weighted_sum(&y, &weights))
    };
    let mut input_err = 0.0f64;
    for i in 0..input.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let f_plus = eval(layer, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let f_minus = eval(layer, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (f_plus - f_minus) / (2.0 * eps);
        let a = grad_in.data()[i];
        let err = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
        input_err = input_err.max(err);
    }
    drop(y);

    // numeric: every trainable parameter coordinate
    let mut param_err = 0.0f64;
    let n_entries = layer.params().iter().count();
    for entry_idx in 0..n_entries {
        let (numel, analytic) = {
            let entry = layer.params().iter().nth(entry_idx).unwrap();
            if !entry.tensor.requires_grad() {
                continue;
            }
            (entry.tensor.numel(), entry.tensor.grad().unwrap().to_vec())
        };
        for i in 0..numel {
            let orig = {
                let entry = layer.params_mut().iter_mut().nth(entry_idx).unwrap();
                let v = entry.tensor.data()[i];
                entry.tensor.data_mut()[i] = v + eps;
                v
            };
            let f_plus = eval(layer, input)?;
            {
                let entry = layer.params_mut().iter_mut().nth(entry_idx).unwrap();
                entry.tensor.data_mut()[i] = orig - eps;
            }
            let f_minus = eval(layer, input)?;
            {
                let entry = layer.params_mut().iter_mut().nth(entry_idx).unwrap();
                entry.tensor.data_mut()[i] = orig;
            }
            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[i];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in {}",
                    layer.name()
                )));
            }
            let err = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            param_err = param_err.max(err);
        }
    }

    Ok(LayerGradErrors {
        input: input_err,
        params: param_err,
    })
}

/// One row of the layer-catalog verification suite.
#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub input_error: f64,
    pub param_error: f64,
}

/// Run the central-difference suite over every layer kind at small sizes.
/// These are the shapes used by the verification subcommand and the test
/// suite; each instance is seeded and tie-free.
pub fn layer_catalog_report(eps: f64) -> Result<Vec<CatalogEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let mut report = Vec::new();
    let push = |name: &'static str,
                    layer: &mut dyn Layer,
                    input: Tensor,
                    report: &mut Vec<CatalogEntry>|
     -> Result<()> {
        let errs = check_layer_gradients(layer, &input, eps, 99)?;
        report.push(CatalogEntry {
            name,
            input_error: errs.input,
            param_error: errs.params,
        });
        Ok(())
    };

    let rand_input = |shape: &[usize], rng: &mut ChaCha8Rng| {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    };

    {
        let mut layer = Dense::new("dense", 6, 4, &mut rng);
        let x = rand_input(&[4, 6], &mut rng);
        push("dense", &mut layer, x, &mut report)?;
    }
    {
        let mut layer = Conv2d::new("conv2d", 2, 3, &mut rng);
        let x = rand_input(&[2, 6, 5, 2], &mut rng);
        push("conv2d", &mut layer, x, &mut report)?;
    }
    {
        let mut layer = MaxPool2d::new("maxpool2d");
        let x = rand_input(&[2, 4, 4, 2], &mut rng);
        push("maxpool2d", &mut layer, x, &mut report)?;
    }
    {
        let mut layer = UpsampleNearest::new("upsample");
        let x = rand_input(&[2, 3, 3, 2], &mut rng);
        push("upsample", &mut layer, x, &mut report)?;
    }
    {
        let mut layer = BatchNorm::new("batchnorm", 3, 0.8);
        let x = rand_input(&[6, 4, 4, 3], &mut rng);
        push("batchnorm", &mut layer, x, &mut report)?;
    }
    {
        let mut layer = Gru::new("gru", 4, 5, false, &mut rng);
        let x = rand_input(&[3, 3, 4], &mut rng);
        push("gru", &mut layer, x, &mut report)?;
    }
    {
        let mut layer = Gru::new("gru_sequence", 4, 5, true, &mut rng);
        let x = rand_input(&[2, 3, 4], &mut rng);
        push("gru_sequence", &mut layer, x, &mut report)?;
    }
    for (name, kind) in [
        ("sigmoid", ActivationKind::Sigmoid),
        ("tanh", ActivationKind::Tanh),
        ("relu", ActivationKind::Relu),
        ("leaky_relu", ActivationKind::LeakyRelu(0.2)),
        ("softmax", ActivationKind::Softmax),
    ] {
        let mut layer = Activation::new(name, kind);
        // keep magnitudes away from the relu kink at zero
        let x = Tensor::from_fn(&[3, 7], |_| {
            let v: f64 = rng.gen_range(-1.0..1.0);
            v + 0.05 * v.signum()
        });
        push(name, &mut layer, x, &mut report)?;
    }
    {
        let mut layer = Dropout::new("dropout", 0.3)?;
        let x = rand_input(&[4, 5], &mut rng);
        // deterministic mode: identity function, exact gradient
        push("dropout", &mut layer, x, &mut report)?;
    }

    Ok(report)
}
