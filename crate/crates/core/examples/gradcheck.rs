//! Finite-difference check of the hand-written backward passes.

use adxai::models::{build_bcgcnse, build_resnet3d, BcGcnSeConfig, Cnn3dConfig};
use adxai::nn::{bce_loss, grad_check_with};
use adxai::Tensor;

fn main() -> adxai::Result<()> {
    // BCE against label 1, differentiated through the logit.
    let bce = |z: f64| bce_loss(z, 1.0, 1.0);

    let mut graph = build_bcgcnse(
        &BcGcnSeConfig {
            n_nodes: 8,
            widths: [2, 3, 4],
            se_reduction: 2,
            fc: [4, 3],
        },
        5,
    )?;
    let a = Tensor::from_fn(&[1, 8, 8], |i| {
        let (r, c) = (i / 8, i % 8);
        0.2 + ((r * c + r + c) % 5) as f64 * 0.15
    });
    let r = grad_check_with(&mut graph, &a, 1e-5, bce);
    println!("graph: max rel error {:.2e} over {} coordinates ({} skipped at kinks)", r.max_rel_error, r.checked, r.skipped);

    let mut cnn = build_resnet3d(
        &Cnn3dConfig {
            input_shape: [12, 12, 12],
            stem_channels: 2,
            stage_widths: [2, 2, 3, 3],
            blocks_per_stage: 1,
        },
        5,
    )?;
    cnn.set_track_input_grad(true);
    let v = Tensor::from_fn(&[1, 12, 12, 12], |i| ((i * 7919) % 101) as f64 / 50.0 - 1.0);
    let r = grad_check_with(&mut cnn, &v, 1e-5, bce);
    println!("cnn:   max rel error {:.2e} over {} coordinates ({} skipped at kinks)", r.max_rel_error, r.checked, r.skipped);
    Ok(())
}
