use super::ModelGraph;
use crate::tensor::Tensor;

/// Outcome of a central-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|a - n| / max(|a|, |n|, 1e-8)` over checked coordinates.
    pub max_rel_error: f64,
    /// Coordinate that produced the worst error.
    pub worst: String,
    pub checked: usize,
    /// Coordinates whose ±h stencil crossed a ReLU or pooling switch point,
    /// where the function is not differentiable and the difference quotient
    /// says nothing about the analytic gradient.
    pub skipped: usize,
}

impl GradCheckReport {
    fn failed(reason: String) -> Self {
        GradCheckReport {
            max_rel_error: f64::INFINITY,
            worst: reason,
            checked: 0,
            skipped: 0,
        }
    }
}

/// Checks d(logit)/d(params) against central differences with step `h`.
/// Never fails: problems are reported as an infinite error.
pub fn grad_check(model: &mut ModelGraph, input: &Tensor, h: f64) -> f64 {
    grad_check_with(model, input, h, |z| (z, 1.0)).max_rel_error
}

/// Like [`grad_check`] for a scalar objective of the logit, given as
/// `z -> (value, d value / dz)`. Input gradients are also checked when the
/// model tracks them.
pub fn grad_check_with(
    model: &mut ModelGraph,
    input: &Tensor,
    h: f64,
    objective: impl Fn(f64) -> (f64, f64),
) -> GradCheckReport {
    let base = match model.forward(input) {
        Ok(out) => out.logit,
        Err(e) => return GradCheckReport::failed(e.to_string()),
    };
    let (_, upstream) = objective(base);
    let base_kinks = model.kink_state();
    model.zero_grad();
    let back = match model.backward(upstream) {
        Ok(b) => b,
        Err(e) => return GradCheckReport::failed(e.to_string()),
    };
    let analytic: Vec<Tensor> = model.params().map(|(_, p)| p.grad.clone()).collect();
    let names: Vec<String> = model.params().map(|(n, _)| n).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
        skipped: 0,
    };
    let record = |report: &mut GradCheckReport, label: String, a: f64, n: f64| {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        report.checked += 1;
        if err > report.max_rel_error || !err.is_finite() {
            report.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
            report.worst = label;
        }
    };

    let eval = |model: &mut ModelGraph, x: &Tensor| -> Option<(f64, u64)> {
        let out = model.forward(x).ok()?;
        Some((objective(out.logit).0, model.kink_state()))
    };

    for (pi, name) in names.iter().enumerate() {
        let len = analytic[pi].len();
        for j in 0..len {
            let original = nth_param(model, pi).data()[j];
            nth_param(model, pi).data_mut()[j] = original + h;
            let plus = eval(model, input);
            nth_param(model, pi).data_mut()[j] = original - h;
            let minus = eval(model, input);
            nth_param(model, pi).data_mut()[j] = original;
            match (plus, minus) {
                (Some((fp, kp)), Some((fm, km))) => {
                    if kp != base_kinks || km != base_kinks {
                        report.skipped += 1;
                        continue;
                    }
                    let numeric = (fp - fm) / (2.0 * h);
                    record(&mut report, format!("{name}[{j}]"), analytic[pi].data()[j], numeric);
                }
                _ => return GradCheckReport::failed(format!("forward failed while perturbing {name}[{j}]")),
            }
        }
    }

    if let Some(input_grad) = back.input_grad {
        let mut x = input.clone();
        for j in 0..x.len() {
            let original = x.data()[j];
            x.data_mut()[j] = original + h;
            let plus = eval(model, &x);
            x.data_mut()[j] = original - h;
            let minus = eval(model, &x);
            x.data_mut()[j] = original;
            match (plus, minus) {
                (Some((fp, kp)), Some((fm, km))) => {
                    if kp != base_kinks || km != base_kinks {
                        report.skipped += 1;
                        continue;
                    }
                    let numeric = (fp - fm) / (2.0 * h);
                    record(&mut report, format!("input[{j}]"), input_grad.data()[j], numeric);
                }
                _ => return GradCheckReport::failed(format!("forward failed while perturbing input[{j}]")),
            }
        }
    }
    // Leave caches consistent with the unperturbed point.
    let _ = model.forward(input);
    report
}

fn nth_param(model: &mut ModelGraph, index: usize) -> &mut Tensor {
    let (_, _, p) = model.params_mut().nth(index).expect("parameter index");
    &mut p.value
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::{bce_loss, Dense};

    #[test]
    fn linear_model_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = ModelGraph::new(&[4]);
        m.push("fc", Dense::new(4, 1, &mut rng)).unwrap();
        m.set_track_input_grad(true);
        let x = Tensor::vector(vec![0.5, -1.0, 2.0, 0.25]);
        assert!(grad_check(&mut m, &x, 1e-3) < 1e-10);
    }

    #[test]
    fn bce_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut m = ModelGraph::new(&[3]);
        m.push("fc", Dense::new(3, 1, &mut rng)).unwrap();
        let x = Tensor::vector(vec![1.0, 2.0, -0.5]);
        let r = grad_check_with(&mut m, &x, 1e-3, |z| bce_loss(z, 1.0, 2.5));
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn broken_input_reports_instead_of_failing() {
        let mut m = ModelGraph::new(&[3]);
        let r = grad_check_with(&mut m, &Tensor::zeros(&[2]), 1e-3, |z| (z, 1.0));
        assert!(r.max_rel_error.is_infinite());
    }
}
