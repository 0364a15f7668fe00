//! File-format readers against fixtures written by an independent NIfTI
//! implementation, plus manifest and atlas parsing through the filesystem.

use std::fs;
use std::path::Path;

use adxai::data::{read_atlas, read_manifest, read_nifti, write_nifti, AtlasNames, Class, Lobe};
use adxai::Tensor;

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn little_endian_int16_with_scaling() {
    let v = read_nifti(&fixture("le_int16_scaled.nii")).unwrap();
    assert_eq!(v.data.shape(), &[2, 3, 4]);
    // Stored value i*12 + j*4 + k, loaded as 2*stored + 1.
    assert_eq!(v.data.get(&[1, 2, 3]), 47.0);
    assert_eq!(v.data.get(&[0, 0, 1]), 3.0);
    for i in 0..2 {
        for j in 0..3 {
            for k in 0..4 {
                assert_eq!(v.data.get(&[i, j, k]), 2.0 * (i * 12 + j * 4 + k) as f64 + 1.0);
            }
        }
    }
    assert_eq!(v.voxel_size, [1.5, 2.0, 2.5]);
}

#[test]
fn big_endian_float32_with_unset_slope() {
    let v = read_nifti(&fixture("be_float32.nii")).unwrap();
    assert_eq!(v.data.shape(), &[2, 2, 2]);
    for i in 0..8 {
        assert_eq!(v.data.data()[i], i as f64 * 0.25 - 1.0);
    }
}

#[test]
fn uint8_with_trailing_singleton_axis() {
    let v = read_nifti(&fixture("le_uint8_4d.nii")).unwrap();
    assert_eq!(v.data.shape(), &[3, 2, 2]);
    assert_eq!(v.data.data()[5], 100.0);
    assert_eq!(v.data.data()[11], 220.0);
}

#[test]
fn float64_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("v.nii");
    let t = Tensor::from_fn(&[2, 2, 2], |i| i as f64);
    write_nifti(&p, &t, [1.0, 1.0, 1.0]).unwrap();
    assert_eq!(read_nifti(&p).unwrap().data, t);
}

#[test]
fn manifest_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("manifest.csv");
    fs::write(
        &p,
        "subject_id,session_id,cdr,volume_path,matrix_path\n\
         OAS1,OAS1_d0,0,vol/a.nii,\n\
         OAS1,OAS1_d400,1,,conn/b.csv\n\
         OAS2,OAS2_d0,0.5,,\n",
    )
    .unwrap();
    let c = read_manifest(&p).unwrap();
    assert_eq!(c.len(), 3);
    assert_eq!(c.session("OAS1_d0").unwrap().class, Class::Hc);
    assert_eq!(c.session("OAS2_d0").unwrap().class, Class::Ad);
    assert_eq!(c.session("OAS1_d0").unwrap().volume_path.as_deref(), Some(dir.path().join("vol/a.nii").as_path()));
    assert!(c.session("OAS1_d0").unwrap().matrix_path.is_none());
    assert!(c.mixed_subjects().contains("OAS1"));

    fs::write(&p, "subject_id,session_id,cdr,volume_path,matrix_path\nA,a,3,,\n").unwrap();
    assert!(read_manifest(&p).unwrap_err().to_string().contains("CDR"));
    fs::write(&p, "subject_id,session_id,cdr,volume_path,matrix_path\nA,a,0,,\nB,a,0,,\n").unwrap();
    assert!(read_manifest(&p).unwrap_err().to_string().contains("duplicate"));
    fs::write(&p, "subject_id,session_id,cdr,volume_path,matrix_path\nA,a\n").unwrap();
    assert!(read_manifest(&p).is_err());
}

#[test]
fn atlas_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let names = dir.path().join("names.tsv");
    fs::write(&names, AtlasNames::shipped_tsv()).unwrap();
    let labels = dir.path().join("labels.nii");
    let vol = Tensor::from_fn(&[4, 6, 6], |i| ((i % 133) as f64).min(132.0));
    write_nifti(&labels, &vol, [1.0; 3]).unwrap();
    let atlas = read_atlas(&labels, &names).unwrap();
    assert_eq!(atlas.n_present(), 132);
    assert_eq!(atlas.names().get(100).lobe, Lobe::Limbic);

    let mut bad = vol.clone();
    bad.data_mut()[0] = 133.0;
    write_nifti(&labels, &bad, [1.0; 3]).unwrap();
    assert!(read_atlas(&labels, &names).is_err());
}
