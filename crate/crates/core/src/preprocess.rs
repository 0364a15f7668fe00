//! Volume cropping, resampling and intensity normalisation, connectivity
//! scaling, and SMOTE oversampling.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Centred crop size applied to registered volumes.
pub const CROP_SHAPE: [usize; 3] = [148, 180, 144];
/// Network input size after resampling.
pub const FINAL_SHAPE: [usize; 3] = [115, 144, 118];

fn dims3(v: &Tensor, context: &str) -> Result<[usize; 3]> {
    match v.shape() {
        &[x, y, z] => Ok([x, y, z]),
        s => Err(Error::shape(context, &[0, 0, 0], s)),
    }
}

/// Per-axis offsets `floor((in - out) / 2)` of a centred crop.
pub fn crop_offsets(input: [usize; 3], out: [usize; 3]) -> Result<[usize; 3]> {
    let mut off = [0; 3];
    for a in 0..3 {
        if input[a] < out[a] {
            return Err(Error::Data(format!("volume {input:?} is smaller than crop {out:?}")));
        }
        off[a] = (input[a] - out[a]) / 2;
    }
    Ok(off)
}

pub fn crop_volume(v: &Tensor, out: [usize; 3]) -> Result<Tensor> {
    let d = dims3(v, "crop input")?;
    let off = crop_offsets(d, out)?;
    Ok(Tensor::from_fn(&out, |i| {
        let (x, y, z) = (i / (out[1] * out[2]), (i / out[2]) % out[1], i % out[2]);
        v.data()[((x + off[0]) * d[1] + y + off[1]) * d[2] + z + off[2]]
    }))
}

/// Source position and blend weight for output index `i` along one axis
/// (half-pixel centres, clamped to the edge).
fn linear_taps(i: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let scale = n_in as f64 / n_out as f64;
    let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(n_in - 1);
    (i0, i1, src - i0 as f64)
}

/// Trilinear resampling with half-pixel (align-corners-false) sample centres.
pub fn resize_volume(v: &Tensor, out: [usize; 3]) -> Result<Tensor> {
    let d = dims3(v, "resize input")?;
    if out.iter().chain(d.iter()).any(|&n| n == 0) {
        return Err(Error::Config(format!("cannot resize {d:?} to {out:?}")));
    }
    let tx: Vec<_> = (0..out[0]).map(|i| linear_taps(i, d[0], out[0])).collect();
    let ty: Vec<_> = (0..out[1]).map(|i| linear_taps(i, d[1], out[1])).collect();
    let tz: Vec<_> = (0..out[2]).map(|i| linear_taps(i, d[2], out[2])).collect();
    let at = |x: usize, y: usize, z: usize| v.data()[(x * d[1] + y) * d[2] + z];
    let mut data = Vec::with_capacity(out.iter().product());
    for &(x0, x1, fx) in &tx {
        for &(y0, y1, fy) in &ty {
            for &(z0, z1, fz) in &tz {
                let c00 = at(x0, y0, z0) * (1.0 - fz) + at(x0, y0, z1) * fz;
                let c01 = at(x0, y1, z0) * (1.0 - fz) + at(x0, y1, z1) * fz;
                let c10 = at(x1, y0, z0) * (1.0 - fz) + at(x1, y0, z1) * fz;
                let c11 = at(x1, y1, z0) * (1.0 - fz) + at(x1, y1, z1) * fz;
                let c0 = c00 * (1.0 - fy) + c01 * fy;
                let c1 = c10 * (1.0 - fy) + c11 * fy;
                data.push(c0 * (1.0 - fx) + c1 * fx);
            }
        }
    }
    Tensor::new(&out, data)
}

/// Nearest-neighbour resampling for label volumes (same sample centres as
/// [`resize_volume`]).
pub fn resize_labels(v: &Tensor, out: [usize; 3]) -> Result<Tensor> {
    let d = dims3(v, "label volume")?;
    let nearest = |i: usize, n_in: usize, n_out: usize| {
        let src = (i as f64 + 0.5) * n_in as f64 / n_out as f64;
        (src.floor() as usize).min(n_in - 1)
    };
    Ok(Tensor::from_fn(&out, |i| {
        let (x, y, z) = (i / (out[1] * out[2]), (i / out[2]) % out[1], i % out[2]);
        let (sx, sy, sz) = (nearest(x, d[0], out[0]), nearest(y, d[1], out[1]), nearest(z, d[2], out[2]));
        v.data()[(sx * d[1] + sy) * d[2] + sz]
    }))
}

/// Z-scores the nonzero (brain) voxels and leaves background at 0. With
/// `center = false` the voxels are only divided by their standard deviation.
pub fn normalize_volume(v: &Tensor, center: bool) -> Result<Tensor> {
    let brain: Vec<f64> = v.data().iter().copied().filter(|&x| x != 0.0).collect();
    if brain.is_empty() {
        return Err(Error::Data("volume has no nonzero voxels".into()));
    }
    let n = brain.len() as f64;
    let mean = brain.iter().sum::<f64>() / n;
    let var = brain.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 || !var.is_finite() {
        return Err(Error::Data("brain voxels have zero variance".into()));
    }
    let sd = var.sqrt();
    let shift = if center { mean } else { 0.0 };
    Ok(v.map(|x| if x != 0.0 { (x - shift) / sd } else { 0.0 }))
}

/// Divides by the largest entry so values fall in `[0, 1]`.
pub fn scale_matrix(m: &Tensor) -> Tensor {
    let max = m.max();
    if max > 0.0 {
        m.scale(1.0 / max)
    } else {
        m.clone()
    }
}

/// Strict upper triangle of an `[N, N]` matrix, row by row.
pub fn upper_triangle(m: &Tensor) -> Vec<f64> {
    let n = m.shape()[0];
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(m.get(&[i, j]));
        }
    }
    out
}

/// Symmetric zero-diagonal matrix from a strict upper triangle.
pub fn from_upper_triangle(v: &[f64], n: usize) -> Result<Tensor> {
    if v.len() != n * (n.saturating_sub(1)) / 2 {
        return Err(Error::Data(format!("{} values do not fill the triangle of a {n}x{n} matrix", v.len())));
    }
    let mut m = Tensor::zeros(&[n, n]);
    let mut it = v.iter();
    for i in 0..n {
        for j in i + 1..n {
            let x = *it.next().expect("length checked");
            m.set(&[i, j], x);
            m.set(&[j, i], x);
        }
    }
    Ok(m)
}

/// One interpolated sample `base + lambda·(neighbor - base)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoteSample {
    pub base: usize,
    pub neighbor: usize,
    pub lambda: f64,
    pub values: Vec<f64>,
}

/// Indices of the `k` nearest neighbours of every sample (Euclidean; ties by index).
pub fn nearest_neighbors(samples: &[Vec<f64>], k: usize) -> Vec<Vec<usize>> {
    let n = samples.len();
    let mut d2 = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = samples[i].iter().zip(&samples[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d2[i * n + j] = d;
            d2[j * n + i] = d;
        }
    }
    (0..n)
        .map(|i| {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| d2[i * n + a].total_cmp(&d2[i * n + b]).then(a.cmp(&b)));
            order.truncate(k);
            order
        })
        .collect()
}

/// Generates `target_count - minority.len()` synthetic samples. Real samples
/// are left untouched.
pub fn smote(minority: &[Vec<f64>], k: usize, target_count: usize, rng: &mut impl Rng) -> Result<Vec<SmoteSample>> {
    if k == 0 || minority.len() < k + 1 {
        return Err(Error::Data(format!(
            "SMOTE needs at least k+1 = {} minority samples, got {}",
            k + 1,
            minority.len()
        )));
    }
    let dim = minority[0].len();
    if minority.iter().any(|s| s.len() != dim) {
        return Err(Error::Data("SMOTE samples differ in length".into()));
    }
    let neighbors = nearest_neighbors(minority, k);
    let count = target_count.saturating_sub(minority.len());
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let base = rng.random_range(0..minority.len());
        let neighbor = neighbors[base][rng.random_range(0..k)];
        let lambda: f64 = rng.random();
        let values = minority[base]
            .iter()
            .zip(&minority[neighbor])
            .map(|(x, n)| x + lambda * (n - x))
            .collect();
        out.push(SmoteSample {
            base,
            neighbor,
            lambda,
            values,
        });
    }
    Ok(out)
}

/// SMOTE on connectivity matrices through their upper triangles; outputs are
/// symmetric with zero diagonal.
pub fn smote_matrices(minority: &[&Tensor], k: usize, target_count: usize, rng: &mut impl Rng) -> Result<Vec<Tensor>> {
    let Some(first) = minority.first() else {
        return Err(Error::Data("SMOTE needs minority samples".into()));
    };
    let n = first.shape()[first.ndim() - 1];
    let flat: Vec<Vec<f64>> = minority
        .iter()
        .map(|m| {
            let m2 = (*m).clone().reshape(&[n, n])?;
            Ok(upper_triangle(&m2))
        })
        .collect::<Result<_>>()?;
    smote(&flat, k, target_count, rng)?
        .into_iter()
        .map(|s| from_upper_triangle(&s.values, n)?.reshape(first.shape()))
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn crop_offsets_on_standard_grid() {
        assert_eq!(crop_offsets([182, 218, 182], CROP_SHAPE).unwrap(), [17, 19, 19]);
        assert!(crop_offsets([100, 218, 182], CROP_SHAPE).is_err());
    }

    #[test]
    fn crop_keeps_centre_marker() {
        let mut v = Tensor::zeros(&[10, 12, 8]);
        v.set(&[5, 6, 4], 1.0);
        let c = crop_volume(&v, [8, 10, 6]).unwrap();
        assert_eq!(c.get(&[4, 5, 3]), 1.0);
        assert_eq!(c.sum(), 1.0);
        assert_eq!(crop_volume(&c, [8, 10, 6]).unwrap(), c);
    }

    #[test]
    fn resize_linear_ramp() {
        let v = Tensor::from_fn(&[2, 2, 2], |i| {
            let (x, y, z) = (i / 4, (i / 2) % 2, i % 2);
            x as f64 + 2.0 * y as f64 + 4.0 * z as f64
        });
        let r = resize_volume(&v, [4, 4, 4]).unwrap();
        let pos = [0.0, 0.25, 0.75, 1.0];
        for x in 0..4 {
            for y in 0..4 {
                for z in 0..4 {
                    let want = pos[x] + 2.0 * pos[y] + 4.0 * pos[z];
                    assert!((r.get(&[x, y, z]) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn resize_keeps_constants_and_identity() {
        let c = Tensor::full(&[5, 3, 4], 2.5);
        let r = resize_volume(&c, [7, 2, 9]).unwrap();
        assert!(r.data().iter().all(|&x| (x - 2.5).abs() < 1e-12));
        let v = Tensor::from_fn(&[3, 4, 5], |i| i as f64);
        assert_eq!(resize_volume(&v, [3, 4, 5]).unwrap(), v);
    }

    #[test]
    fn normalize_brain_voxels() {
        let v = Tensor::vector(vec![0.0, 1.0, 3.0, 0.0]).reshape(&[1, 2, 2]).unwrap();
        let n = normalize_volume(&v, true).unwrap();
        assert_eq!(n.data(), &[0.0, -1.0, 1.0, 0.0]);
        let again = normalize_volume(&n, true).unwrap();
        assert!(again.max_abs_diff(&n) < 1e-12);
        let flat = Tensor::full(&[2, 2, 2], 4.0);
        assert!(normalize_volume(&flat, true).is_err());
        let scaled = normalize_volume(&v, false).unwrap();
        assert_eq!(scaled.data(), &[0.0, 1.0, 3.0, 0.0]);
    }

    #[test]
    fn matrix_scaling() {
        let m = Tensor::new(&[2, 2], vec![0.0, 50.0, 50.0, 0.0]).unwrap();
        assert_eq!(scale_matrix(&m).data(), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(scale_matrix(&Tensor::zeros(&[2, 2])), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn triangle_round_trip() {
        let m = Tensor::new(&[3, 3], vec![0.0, 1.0, 2.0, 1.0, 0.0, 3.0, 2.0, 3.0, 0.0]).unwrap();
        let v = upper_triangle(&m);
        assert_eq!(v, vec![1.0, 2.0, 3.0]);
        assert_eq!(from_upper_triangle(&v, 3).unwrap(), m);
    }

    #[test]
    fn smote_midpoint() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = smote(&pts, 1, 3, &mut rng).unwrap();
        assert_eq!(s.len(), 1);
        let s = &s[0];
        let expect: Vec<f64> = pts[s.base].iter().zip(&pts[s.neighbor]).map(|(x, n)| x + s.lambda * (n - x)).collect();
        assert_eq!(s.values, expect);
        // lambda = 0.5 on this pair is the midpoint.
        let mid: Vec<f64> = pts[0].iter().zip(&pts[1]).map(|(x, n)| x + 0.5 * (n - x)).collect();
        assert_eq!(mid, vec![0.5, 0.5]);
    }

    #[test]
    fn smote_needs_enough_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(smote(&[vec![0.0], vec![1.0]], 2, 5, &mut rng).is_err());
    }

    #[test]
    fn smote_is_seeded() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let a = smote(&pts, 2, 10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = smote(&pts, 2, 10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
