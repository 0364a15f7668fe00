/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Weighted binary cross-entropy on a logit.
///
/// Returns `(loss, d loss / d logit)` with
/// `loss = -w·[y·ln σ(z) + (1-y)·ln(1-σ(z))] = w·(softplus(z) - y·z)`.
pub fn bce_loss(logit: f64, label: f64, weight: f64) -> (f64, f64) {
    debug_assert!(weight > 0.0);
    let loss = weight * (softplus(logit) - label * logit);
    let grad = weight * (sigmoid(logit) - label);
    (loss, grad)
}
