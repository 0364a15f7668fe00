//! Build both classifiers and print their layer stacks.

use adxai::models::{build_bcgcnse, build_resnet3d, BcGcnSeConfig, Cnn3dConfig};
use adxai::nn::ModelGraph;
use adxai::Tensor;

fn summary(name: &str, m: &ModelGraph) {
    println!("{name}: input {:?}, {} parameters, {} taps", m.input_shape(), m.num_params(), m.n_taps());
    for n in m.nodes() {
        println!("  {:<14} {:?}{}", n.name, n.output_shape(), if n.tap { "  (tap)" } else { "" });
    }
}

fn main() -> adxai::Result<()> {
    let gcfg = BcGcnSeConfig::default();
    let mut graph = build_bcgcnse(&gcfg, 1)?;
    assert_eq!(graph.num_params(), gcfg.param_count());
    summary("BC-GCN-SE", &graph);

    let ccfg = Cnn3dConfig {
        input_shape: [32, 32, 32],
        stem_channels: 4,
        stage_widths: [4, 8, 8, 16],
        blocks_per_stage: 1,
    };
    let mut cnn = build_resnet3d(&ccfg, 1)?;
    summary("3D ResNet", &cnn);

    // Connection strength decaying with index distance, zero diagonal.
    let a = Tensor::from_fn(&[1, 132, 132], |i| {
        let d = (i / 132).abs_diff(i % 132);
        if d == 0 { 0.0 } else { (-(d as f64) / 4.0).exp() }
    });
    let v = Tensor::from_fn(&[1, 32, 32, 32], |i| ((i % 17) as f64 - 8.0) / 8.0);
    println!("logits: graph {:.4}, cnn {:.4}", graph.forward(&a)?.logit, cnn.forward(&v)?.logit);
    Ok(())
}
