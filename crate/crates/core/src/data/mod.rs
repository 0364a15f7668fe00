//! Readers and writers for manifests, connectivity matrices, NIfTI-1 volumes
//! and the parcel atlas.

mod atlas;
mod conn;
mod manifest;
mod nifti;

pub use atlas::{parse_name_row, read_atlas, strip_side, AtlasNames, AtlasParcellation, Lobe, Parcel, N_PARCELS};
pub use conn::{parse_conn_csv, read_conn_csv, write_conn_csv, ConnectivityMatrix};
pub use manifest::{read_manifest, write_manifest, Class, Cohort, SessionRecord};
pub use nifti::{encode_nifti, parse_nifti, read_nifti, write_nifti, write_nifti_with, NiftiDtype, NiftiVolume, NiftiWriteOptions};
