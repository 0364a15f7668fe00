//! Grad-CAM heatmaps from tapped layers and their reduction to parcel
//! relevance values.

mod gradcam;
mod relevance;
mod upsample;

pub use gradcam::{channel_weights, class_sign, gradcam_from, gradcam_layer, gradcam_layers};
pub use relevance::{
    decode_heatmap, encode_heatmap, explain_samples, explain_session, read_heatmap, read_rv_csv, rv_matrix, rv_matrix_all, rv_rows,
    rv_volume, rv_volumes, write_heatmap, write_rv_csv, Explanation, RvRow,
};
pub use upsample::{bicubic, mean_heatmap, upsample_heatmap};
