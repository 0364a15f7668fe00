use crate::error::{Error, Result};
use crate::preprocess::resize_volume;
use crate::tensor::Tensor;

/// Catmull-Rom cubic convolution kernel (a = -0.5).
fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Source indices and weights of the four taps for output index `i`.
fn cubic_taps(i: usize, n_in: usize, n_out: usize) -> [(usize, f64); 4] {
    let src = (i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5;
    let i0 = src.floor();
    let t = src - i0;
    let clamp = |k: f64| k.clamp(0.0, (n_in - 1) as f64) as usize;
    [
        (clamp(i0 - 1.0), cubic(t + 1.0)),
        (clamp(i0), cubic(t)),
        (clamp(i0 + 1.0), cubic(t - 1.0)),
        (clamp(i0 + 2.0), cubic(t - 2.0)),
    ]
}

/// Separable bicubic resampling with half-pixel centres and edge replication.
pub fn bicubic(g: &Tensor, out: [usize; 2]) -> Result<Tensor> {
    let &[h, w] = g.shape() else {
        return Err(Error::shape("bicubic input", &[0, 0], g.shape()));
    };
    if h == 0 || w == 0 || out[0] == 0 || out[1] == 0 {
        return Err(Error::Config(format!("cannot resize [{h}, {w}] to {out:?}")));
    }
    let tx: Vec<_> = (0..out[1]).map(|j| cubic_taps(j, w, out[1])).collect();
    let mut rows = vec![0.0; h * out[1]];
    for r in 0..h {
        let src = &g.data()[r * w..(r + 1) * w];
        for (j, taps) in tx.iter().enumerate() {
            rows[r * out[1] + j] = taps.iter().map(|&(k, wt)| src[k] * wt).sum();
        }
    }
    let ty: Vec<_> = (0..out[0]).map(|i| cubic_taps(i, h, out[0])).collect();
    let mut data = vec![0.0; out[0] * out[1]];
    for (i, taps) in ty.iter().enumerate() {
        for j in 0..out[1] {
            data[i * out[1] + j] = taps.iter().map(|&(k, wt)| rows[k * out[1] + j] * wt).sum();
        }
    }
    Tensor::new(&out, data)
}

/// Brings a layer map to the input resolution: bicubic for 2-D maps,
/// trilinear for 3-D ones, then clamps negative overshoot to zero.
pub fn upsample_heatmap(g: &Tensor, target: &[usize]) -> Result<Tensor> {
    if g.shape() == target {
        return Ok(g.map(|v| v.max(0.0)));
    }
    let up = match (g.ndim(), target) {
        (2, &[h, w]) => bicubic(g, [h, w])?,
        (3, &[x, y, z]) => resize_volume(g, [x, y, z])?,
        _ => return Err(Error::shape("heatmap upsampling target", g.shape(), target)),
    };
    Ok(up.map(|v| v.max(0.0)))
}

/// Element-wise mean of equally shaped maps.
pub fn mean_heatmap(maps: &[Tensor]) -> Result<Tensor> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Config("mean of zero heatmaps".into()))?;
    let mut acc = Tensor::zeros(first.shape());
    for m in maps {
        acc.axpy(1.0, m)?;
    }
    Ok(acc.scale(1.0 / maps.len() as f64))
}
