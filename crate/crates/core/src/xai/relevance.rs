use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gradcam::gradcam_layers;
use super::upsample::{mean_heatmap, upsample_heatmap};
use crate::data::{AtlasNames, AtlasParcellation, Class};
use crate::error::{Error, Result};
use crate::nn::ModelGraph;
use crate::train::Sample;
use crate::tensor::Tensor;

/// Masked mean of `g` over the nonzero voxels of `mask`.
pub fn rv_volume(g: &Tensor, mask: &Tensor) -> Result<f64> {
    g.ensure_shape(mask.shape(), "parcel mask")?;
    let (mut sum, mut n) = (0.0, 0.0);
    for (&v, &m) in g.data().iter().zip(mask.data()) {
        if m != 0.0 {
            sum += v;
            n += 1.0;
        }
    }
    if n == 0.0 {
        return Err(Error::Data("empty parcel mask".into()));
    }
    Ok(sum / n)
}

/// Relevance of every atlas parcel, in atlas order.
pub fn rv_volumes(g: &Tensor, atlas: &AtlasParcellation) -> Result<Vec<f64>> {
    g.ensure_shape(atlas.labels().shape(), "heatmap vs atlas")?;
    let data = g.data();
    (0..atlas.names().len())
        .map(|p| {
            let vox = atlas.voxels(p);
            if vox.is_empty() {
                return Err(Error::Data(format!("parcel {} has no voxels", p + 1)));
            }
            Ok(vox.iter().map(|&i| data[i]).sum::<f64>() / vox.len() as f64)
        })
        .collect()
}

/// Mean of row `p` of a square map, skipping the diagonal.
pub fn rv_matrix(g: &Tensor, p: usize) -> Result<f64> {
    let &[n, m] = g.shape() else {
        return Err(Error::shape("graph heatmap", &[0, 0], g.shape()));
    };
    if n != m || n < 2 || p >= n {
        return Err(Error::shape("graph heatmap", &[n, n], g.shape()));
    }
    let row = &g.data()[p * n..(p + 1) * n];
    let off: f64 = row.iter().enumerate().filter(|&(q, _)| q != p).map(|(_, v)| v).sum();
    Ok(off / (n - 1) as f64)
}

pub fn rv_matrix_all(g: &Tensor) -> Result<Vec<f64>> {
    let n = g.shape().first().copied().unwrap_or(0);
    (0..n).map(|p| rv_matrix(g, p)).collect()
}

#[derive(Debug, Clone)]
pub struct Explanation {
    pub logit: f64,
    /// Mean of the upsampled tap maps at input resolution.
    pub heatmap: Tensor,
    /// One relevance value per parcel.
    pub rvs: Vec<f64>,
}

/// Grad-CAM over every tap for `class`, averaged at input resolution and
/// reduced to parcels: row means for square graph maps, masked means over
/// `atlas` for volumes.
pub fn explain_session(
    model: &mut ModelGraph,
    input: &Tensor,
    class: Class,
    atlas: Option<&AtlasParcellation>,
) -> Result<Explanation> {
    let target = model.input_shape()[1..].to_vec();
    let (logit, maps) = gradcam_layers(model, input, class)?;
    let up = maps
        .iter()
        .map(|m| upsample_heatmap(m, &target))
        .collect::<Result<Vec<_>>>()?;
    let heatmap = mean_heatmap(&up)?;
    let rvs = match atlas {
        Some(a) => rv_volumes(&heatmap, a)?,
        None if heatmap.ndim() == 2 => rv_matrix_all(&heatmap)?,
        None => return Err(Error::Config("volumetric heatmaps need an atlas".into())),
    };
    Ok(Explanation { logit, heatmap, rvs })
}

/// RV rows of every sample, each explained for its true class.
pub fn explain_samples(
    model: &ModelGraph,
    samples: &[Sample],
    atlas: Option<&AtlasParcellation>,
    names: &AtlasNames,
) -> Result<Vec<RvRow>> {
    let per_sample: Vec<Vec<RvRow>> = samples
        .par_iter()
        .map_init(
            || model.clone(),
            |m, s| {
                let class = if s.is_ad() { Class::Ad } else { Class::Hc };
                let e = explain_session(m, &s.input, class, atlas)?;
                Ok(rv_rows(&s.id, class, &e.rvs, names))
            },
        )
        .collect::<Result<_>>()?;
    Ok(per_sample.into_iter().flatten().collect())
}

/// One line of `rv.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvRow {
    pub session_id: String,
    pub class: Class,
    /// 1-based atlas position.
    pub parcel: usize,
    pub acronym: String,
    pub rv: f64,
}

pub fn rv_rows(session_id: &str, class: Class, rvs: &[f64], names: &AtlasNames) -> Vec<RvRow> {
    rvs.iter()
        .enumerate()
        .map(|(p, &rv)| RvRow {
            session_id: session_id.to_string(),
            class,
            parcel: p + 1,
            acronym: names.get(p).acronym.clone(),
            rv,
        })
        .collect()
}

pub fn write_rv_csv(path: &Path, rows: &[RvRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        context: path.display().to_string(),
        source: e,
    })?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Csv {
            context: path.display().to_string(),
            source: e,
        })?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_rv_csv(path: &Path) -> Result<Vec<RvRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Csv {
        context: path.display().to_string(),
        source: e,
    })?;
    let rows: Vec<RvRow> = r
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format(path, e.to_string()))?;
    if let Some(bad) = rows.iter().find(|r| !r.rv.is_finite() || r.rv < 0.0) {
        return Err(Error::format(
            path,
            format!("invalid RV {} for {} parcel {}", bad.rv, bad.session_id, bad.parcel),
        ));
    }
    Ok(rows)
}

/// `u32` rank, `u64` dims, then little-endian `f64` values.
pub fn encode_heatmap(t: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(4 + 8 * t.ndim() + 8 * t.len());
    buf.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_heatmap(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |m: &str| Error::format(path, m.to_string());
    let ndim = u32::from_le_bytes(bytes.get(..4).ok_or_else(|| bad("truncated"))?.try_into().unwrap()) as usize;
    if ndim > 8 {
        return Err(bad("implausible rank"));
    }
    let dims_end = 4 + 8 * ndim;
    let dims: Vec<usize> = bytes
        .get(4..dims_end)
        .ok_or_else(|| bad("truncated shape"))?
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let n: usize = dims.iter().product();
    let body = &bytes[dims_end..];
    if body.len() != 8 * n {
        return Err(bad(&format!("expected {} data bytes, found {}", 8 * n, body.len())));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(&dims, data)
}

pub fn write_heatmap(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode_heatmap(t)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_heatmap(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_heatmap(&bytes, path)
}
