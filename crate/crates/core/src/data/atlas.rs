use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::nifti::read_nifti;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of parcels in the combined cortical, subcortical and cerebellar atlas.
pub const N_PARCELS: usize = 132;

const SHIPPED_NAMES: &str = include_str!("../../assets/atlas_names.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Lobe {
    Frontal,
    Temporal,
    Parietal,
    Occipital,
    Limbic,
    Insular,
    Subcortical,
    Cerebellar,
}

impl Lobe {
    pub fn tag(self) -> &'static str {
        match self {
            Lobe::Frontal => "Front",
            Lobe::Temporal => "Temp",
            Lobe::Parietal => "Par",
            Lobe::Occipital => "Occ",
            Lobe::Limbic => "Lim",
            Lobe::Insular => "Ins",
            Lobe::Subcortical => "Sub",
            Lobe::Cerebellar => "Cer",
        }
    }
}

impl FromStr for Lobe {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "Front" => Lobe::Frontal,
            "Temp" => Lobe::Temporal,
            "Par" => Lobe::Parietal,
            "Occ" => Lobe::Occipital,
            "Lim" => Lobe::Limbic,
            "Ins" => Lobe::Insular,
            "Sub" => Lobe::Subcortical,
            "Cer" => Lobe::Cerebellar,
            _ => return Err(Error::Data(format!("unknown lobe tag `{s}`"))),
        })
    }
}

impl fmt::Display for Lobe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Parcel {
    /// 1-based label value.
    pub index: usize,
    pub acronym: String,
    pub lobe: Lobe,
}

impl Parcel {
    /// Acronym without the `_r`/`_l` hemisphere suffix.
    pub fn region(&self) -> &str {
        strip_side(&self.acronym)
    }
}

pub fn strip_side(acronym: &str) -> &str {
    acronym
        .strip_suffix("_r")
        .or_else(|| acronym.strip_suffix("_l"))
        .unwrap_or(acronym)
}

/// Parses one `index<TAB>acronym<TAB>lobe` row.
pub fn parse_name_row(line: &str) -> Result<Parcel> {
    let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
    if fields.len() != 3 {
        return Err(Error::Data(format!("atlas row `{line}` needs 3 tab-separated fields")));
    }
    let index = fields[0]
        .parse::<usize>()
        .map_err(|_| Error::Data(format!("bad parcel index `{}`", fields[0])))?;
    if index == 0 || fields[1].is_empty() {
        return Err(Error::Data(format!("bad atlas row `{line}`")));
    }
    Ok(Parcel {
        index,
        acronym: fields[1].to_string(),
        lobe: fields[2].parse()?,
    })
}

/// Ordered parcel table; position `i` holds label `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtlasNames {
    parcels: Vec<Parcel>,
}

impl AtlasNames {
    /// Parses a names table and requires exactly `expected` rows numbered 1..=expected.
    pub fn parse(text: &str, expected: usize) -> Result<Self> {
        let mut parcels = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')) {
            parcels.push(parse_name_row(line)?);
        }
        if parcels.len() != expected {
            return Err(Error::Data(format!(
                "atlas names table has {} rows, expected {expected}",
                parcels.len()
            )));
        }
        parcels.sort_by_key(|p| p.index);
        let mut seen = BTreeSet::new();
        for (i, p) in parcels.iter().enumerate() {
            if p.index != i + 1 {
                return Err(Error::Data(format!("atlas indices must run 1..={expected}, found {}", p.index)));
            }
            if !seen.insert(p.acronym.clone()) {
                return Err(Error::Data(format!("duplicate acronym `{}`", p.acronym)));
            }
        }
        Ok(AtlasNames { parcels })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text, N_PARCELS).map_err(|e| Error::format(path, e.to_string()))
    }

    /// The packaged 132-parcel table.
    pub fn shipped() -> Self {
        Self::parse(SHIPPED_NAMES, N_PARCELS).expect("shipped atlas table is valid")
    }

    pub fn shipped_tsv() -> &'static str {
        SHIPPED_NAMES
    }

    /// A generic `P1..Pn` table for small test graphs.
    pub fn numbered(n: usize) -> Self {
        AtlasNames {
            parcels: (1..=n)
                .map(|index| Parcel {
                    index,
                    acronym: format!("P{index}"),
                    lobe: Lobe::Frontal,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.parcels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parcels.is_empty()
    }

    pub fn parcels(&self) -> &[Parcel] {
        &self.parcels
    }

    /// Parcel by 0-based position.
    pub fn get(&self, pos: usize) -> &Parcel {
        &self.parcels[pos]
    }

    /// 0-based position of an acronym.
    pub fn position(&self, acronym: &str) -> Option<usize> {
        self.parcels.iter().position(|p| p.acronym == acronym)
    }

    pub fn to_tsv(&self) -> String {
        self.parcels
            .iter()
            .map(|p| format!("{}\t{}\t{}\n", p.index, p.acronym, p.lobe.tag()))
            .collect()
    }
}

/// Integer label volume plus its parcel table.
#[derive(Debug, Clone)]
pub struct AtlasParcellation {
    labels: Tensor,
    names: AtlasNames,
    voxels: Vec<Vec<usize>>,
}

impl AtlasParcellation {
    /// Requires integral labels in `0..=names.len()` with every parcel present.
    pub fn new(labels: Tensor, names: AtlasNames) -> Result<Self> {
        let n = names.len();
        let mut voxels = vec![Vec::new(); n];
        for (i, &v) in labels.data().iter().enumerate() {
            if v.fract() != 0.0 || v < 0.0 || v > n as f64 {
                return Err(Error::Data(format!("label {v} outside 0..={n}")));
            }
            if v > 0.0 {
                voxels[v as usize - 1].push(i);
            }
        }
        if let Some(p) = voxels.iter().position(Vec::is_empty) {
            return Err(Error::Data(format!(
                "parcel {} ({}) has no voxels",
                p + 1,
                names.get(p).acronym
            )));
        }
        Ok(AtlasParcellation { labels, names, voxels })
    }

    pub fn labels(&self) -> &Tensor {
        &self.labels
    }

    pub fn names(&self) -> &AtlasNames {
        &self.names
    }

    /// Flat voxel indices of the parcel at 0-based position `p`.
    pub fn voxels(&self, p: usize) -> &[usize] {
        &self.voxels[p]
    }

    pub fn n_present(&self) -> usize {
        self.voxels.iter().filter(|v| !v.is_empty()).count()
    }
}

pub fn read_atlas(label_path: &Path, names_path: &Path) -> Result<AtlasParcellation> {
    let names = AtlasNames::read(names_path)?;
    let labels = read_nifti(label_path)?.data;
    AtlasParcellation::new(labels, names).map_err(|e| Error::format(label_path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_parse() {
        let p = parse_name_row("91\tHip_l\tLim").unwrap();
        assert_eq!((p.index, p.acronym.as_str(), p.lobe), (91, "Hip_l", Lobe::Limbic));
        assert_eq!(p.lobe.to_string(), "Limbic");
        assert_eq!(p.region(), "Hip");
        assert!(parse_name_row("1\tFP_r").is_err());
        assert!(parse_name_row("x\tFP_r\tFront").is_err());
        assert!(parse_name_row("1\tFP_r\tNope").is_err());
    }

    #[test]
    fn shipped_table_shape() {
        let names = AtlasNames::shipped();
        assert_eq!(names.len(), 132);
        let count = |lobe: Lobe| names.parcels().iter().filter(|p| p.lobe == lobe).count();
        assert_eq!(count(Lobe::Cerebellar), 26);
        assert_eq!(names.get(0).acronym, "FP_r");
        assert_eq!(names.position("Hip_l"), Some(100));
        assert_eq!(names.position("Ver10"), Some(131));
        assert_eq!(AtlasNames::parse(&names.to_tsv(), 132).unwrap(), names);
    }

    #[test]
    fn wrong_row_count_is_rejected() {
        let text: String = AtlasNames::shipped().to_tsv().lines().take(131).map(|l| format!("{l}\n")).collect();
        assert!(AtlasNames::parse(&text, 132).is_err());
    }

    #[test]
    fn label_validation() {
        let names = AtlasNames::numbered(2);
        let ok = Tensor::new(&[2, 2, 1], vec![0.0, 1.0, 2.0, 2.0]).unwrap();
        let atlas = AtlasParcellation::new(ok, names.clone()).unwrap();
        assert_eq!(atlas.voxels(1), &[2, 3]);
        let out_of_range = Tensor::new(&[2, 2, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(AtlasParcellation::new(out_of_range, names.clone()).is_err());
        let missing = Tensor::new(&[2, 2, 1], vec![0.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(AtlasParcellation::new(missing, names).is_err());
    }
}
