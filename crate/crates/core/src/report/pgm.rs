use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PGM_MAX: u8 = 255;

/// Binary 8-bit PGM (`P5`). Values are scaled so the largest maps to 255;
/// negatives and an all-zero image map to 0.
pub fn encode_pgm(values: &[f64], width: usize, height: usize) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(Error::shape("pgm image", &[height, width], &[values.len()]));
    }
    let max = values.iter().copied().fold(0.0f64, f64::max);
    let mut out = format!("P5 {width} {height} {PGM_MAX}\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if max > 0.0 && v > 0.0 {
            (v / max * PGM_MAX as f64).round().min(PGM_MAX as f64) as u8
        } else {
            0
        }
    }));
    Ok(out)
}

/// A square heatmap, row `i` of the matrix on image row `i`.
pub fn matrix_pgm(heatmap: &Tensor) -> Result<Vec<u8>> {
    let s = heatmap.shape();
    if s.len() != 2 {
        return Err(Error::shape("matrix heatmap", &[0, 0], s));
    }
    encode_pgm(heatmap.data(), s[1], s[0])
}

/// The three central orthogonal slices of an `[X, Y, Z]` volume, named by
/// the fixed axis. In each slice the lower remaining axis runs down the rows.
pub fn volume_mid_slices(volume: &Tensor) -> Result<Vec<(&'static str, Vec<u8>)>> {
    let s = volume.shape();
    if s.len() != 3 {
        return Err(Error::shape("volume heatmap", &[0, 0, 0], s));
    }
    let (nx, ny, nz) = (s[0], s[1], s[2]);
    let d = volume.data();
    let at = |x: usize, y: usize, z: usize| d[(x * ny + y) * nz + z];
    let (cx, cy, cz) = (nx / 2, ny / 2, nz / 2);
    let sag: Vec<f64> = (0..ny).flat_map(|y| (0..nz).map(move |z| (y, z))).map(|(y, z)| at(cx, y, z)).collect();
    let cor: Vec<f64> = (0..nx).flat_map(|x| (0..nz).map(move |z| (x, z))).map(|(x, z)| at(x, cy, z)).collect();
    let axi: Vec<f64> = (0..nx).flat_map(|x| (0..ny).map(move |y| (x, y))).map(|(x, y)| at(x, y, cz)).collect();
    Ok(vec![
        ("x", encode_pgm(&sag, nz, ny)?),
        ("y", encode_pgm(&cor, nz, nx)?),
        ("z", encode_pgm(&axi, ny, nx)?),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_scaling() {
        let img = encode_pgm(&[0.0, 1.0, 2.0, -1.0], 2, 2).unwrap();
        assert_eq!(&img[..14], b"P5 2 2 255\n\x00\x80\xff");
        assert_eq!(img[14], 0);
        assert_eq!(img.len(), 15);
    }

    #[test]
    fn matrix_header() {
        let img = matrix_pgm(&Tensor::from_fn(&[132, 132], |i| i as f64)).unwrap();
        assert!(img.starts_with(b"P5 132 132 255\n"));
        assert_eq!(img.len(), "P5 132 132 255\n".len() + 132 * 132);
    }

    #[test]
    fn zero_image_is_black() {
        let img = encode_pgm(&[0.0; 6], 3, 2).unwrap();
        assert!(img[img.len() - 6..].iter().all(|&b| b == 0));
    }

    #[test]
    fn mid_slices_pick_centre() {
        let mut v = Tensor::zeros(&[4, 6, 8]);
        v.data_mut()[(2 * 6 + 3) * 8 + 4] = 1.0;
        let slices = volume_mid_slices(&v).unwrap();
        assert_eq!(slices.len(), 3);
        for (axis, img) in &slices {
            assert_eq!(img.iter().filter(|&&b| b == 255).count(), 1, "{axis}");
        }
        assert!(slices[0].1.starts_with(b"P5 8 6 255\n"));
    }
}
