//! Write a volume as NIfTI-1 in a few encodings and read it back.

use adxai::data::{encode_nifti, parse_nifti, NiftiDtype, NiftiWriteOptions};
use adxai::Tensor;

fn main() -> adxai::Result<()> {
    let v = Tensor::from_fn(&[4, 5, 6], |i| (i as f64 * 0.37).sin() * 100.0);
    let encodings = [
        ("f64 little-endian", NiftiWriteOptions::default()),
        (
            "f64 big-endian",
            NiftiWriteOptions {
                big_endian: true,
                ..Default::default()
            },
        ),
        (
            "f32",
            NiftiWriteOptions {
                dtype: NiftiDtype::F32,
                ..Default::default()
            },
        ),
    ];
    for (name, opts) in encodings {
        let bytes = encode_nifti(&v, [1.0, 1.2, 1.5], opts)?;
        let back = parse_nifti(&bytes, "memory.nii".as_ref())?;
        println!(
            "{name:18} {} bytes, shape {:?}, voxel {:?}, max error {:.2e}",
            bytes.len(),
            back.data.shape(),
            back.voxel_size,
            back.data.max_abs_diff(&v)
        );
    }

    // Integer storage with slope/intercept: values come back scaled.
    let labels = Tensor::from_fn(&[4, 5, 6], |i| (i % 7) as f64);
    let opts = NiftiWriteOptions {
        dtype: NiftiDtype::I16,
        scl_slope: 2.0,
        scl_inter: 1.0,
        ..Default::default()
    };
    let back = parse_nifti(&encode_nifti(&labels, [1.0; 3], opts)?, "labels.nii".as_ref())?;
    println!("i16 stored 0..6 read as {:?}", &back.data.data()[..7]);
    Ok(())
}
