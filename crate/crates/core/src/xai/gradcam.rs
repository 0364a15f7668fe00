use crate::data::Class;
use crate::error::{Error, Result};
use crate::nn::ModelGraph;
use crate::tensor::Tensor;

/// Class score sign: the model's logit favours AD, so `s_HC = -s_AD`.
pub fn class_sign(class: Class) -> f64 {
    match class {
        Class::Ad => 1.0,
        Class::Hc => -1.0,
    }
}

/// Per-channel weights: spatial mean of `d s_c / d a^k` for `[C, ...]` gradients.
pub fn channel_weights(grad: &Tensor) -> Vec<f64> {
    let c = grad.shape()[0];
    (0..c)
        .map(|k| {
            let g = grad.channel(k);
            g.iter().sum::<f64>() / g.len() as f64
        })
        .collect()
}

/// `ReLU(Σ_k w_k a^k)` at the activation's spatial resolution.
pub fn gradcam_from(activation: &Tensor, grad: &Tensor) -> Result<Tensor> {
    if activation.shape() != grad.shape() || activation.ndim() < 2 {
        return Err(Error::shape("grad-cam tap", activation.shape(), grad.shape()));
    }
    let weights = channel_weights(grad);
    let spatial = &activation.shape()[1..];
    let mut out = vec![0.0; spatial.iter().product()];
    for (k, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, &a) in out.iter_mut().zip(activation.channel(k)) {
            *o += w * a;
        }
    }
    for o in &mut out {
        *o = o.max(0.0);
    }
    Tensor::new(spatial, out)
}

/// Raw Grad-CAM maps of every tap for `class`, plus the logit.
pub fn gradcam_layers(model: &mut ModelGraph, input: &Tensor, class: Class) -> Result<(f64, Vec<Tensor>)> {
    if model.n_taps() == 0 {
        return Err(Error::Config("model has no tapped layers".into()));
    }
    let fwd = model.forward(input)?;
    let back = model.backward(class_sign(class));
    model.zero_grad();
    let back = back?;
    let maps = fwd
        .taps
        .iter()
        .zip(&back.tap_grads)
        .map(|(a, g)| gradcam_from(a, g))
        .collect::<Result<_>>()?;
    Ok((fwd.logit, maps))
}

/// Grad-CAM map of tap `tap` (0-based, graph order).
pub fn gradcam_layer(model: &mut ModelGraph, input: &Tensor, class: Class, tap: usize) -> Result<Tensor> {
    let n = model.n_taps();
    if tap >= n {
        return Err(Error::Config(format!("tap {tap} requested but model has {n}")));
    }
    let (_, mut maps) = gradcam_layers(model, input, class)?;
    Ok(maps.swap_remove(tap))
}
