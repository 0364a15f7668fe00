//! Volume conditioning, matrix scaling and SMOTE oversampling.

use adxai::preprocess::{crop_volume, normalize_volume, resize_volume, scale_matrix, smote, upper_triangle};
use adxai::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> adxai::Result<()> {
    let scan = Tensor::from_fn(&[20, 24, 20], |i| ((i * 31) % 97) as f64);
    let cropped = crop_volume(&scan, [16, 20, 16])?;
    let small = resize_volume(&cropped, [8, 10, 8])?;
    let norm = normalize_volume(&small, true)?;
    println!(
        "volume {:?} -> crop {:?} -> resize {:?}; normalised mean {:.3}, range [{:.3}, {:.3}]",
        scan.shape(),
        cropped.shape(),
        small.shape(),
        norm.mean(),
        norm.min(),
        norm.max()
    );

    let m = Tensor::from_fn(&[4, 4], |i| if i % 5 == 0 { 0.0 } else { ((i / 4 + i % 4) % 3 + 1) as f64 });
    let scaled = scale_matrix(&m);
    println!("matrix max {} -> {}; upper triangle {:?}", m.max(), scaled.max(), upper_triangle(&scaled));

    // Oversample a 5-point minority class up to 9 samples.
    let minority: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for s in smote(&minority, 3, 9, &mut rng)? {
        println!(
            "  new sample between {} and {} at lambda {:.3}: {:?}",
            s.base, s.neighbor, s.lambda, s.values
        );
    }
    Ok(())
}
