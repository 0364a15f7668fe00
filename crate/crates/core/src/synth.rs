//! Synthetic cohorts with a class difference planted in chosen parcels.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{write_conn_csv, write_manifest, write_nifti, AtlasNames, AtlasParcellation, Class, Cohort, SessionRecord};
use crate::error::{Error, Result};
use crate::preprocess::resize_volume;
use crate::tensor::Tensor;
use crate::models::ModelConfig;
use crate::train::{condition_matrix, condition_volume, conform_labels, derive_seed, PipelineConfig, Sample};

/// Session counts and subject structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub hc_sessions: usize,
    pub ad_sessions: usize,
    /// Average sessions per subject (at least 1).
    pub mean_sessions: f64,
    pub max_sessions: usize,
    /// Share of subjects that have sessions in both classes.
    pub mixed_fraction: f64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            hc_sessions: 120,
            ad_sessions: 100,
            mean_sessions: 1.5,
            max_sessions: 3,
            mixed_fraction: 0.0276,
        }
    }
}

impl CohortSpec {
    /// 557 HC and 135 AD sessions from about 543 subjects.
    pub fn oasis_shaped() -> Self {
        CohortSpec {
            hc_sessions: 557,
            ad_sessions: 135,
            mean_sessions: 692.0 / 543.0,
            max_sessions: 5,
            ..Default::default()
        }
    }
}

/// Where and how strongly the classes differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalSpec {
    /// 1-based parcel indices carrying the AD effect.
    pub planted: Vec<usize>,
    pub delta: f64,
    pub sigma: f64,
    /// +1 strengthens AD edges to the planted parcels, -1 weakens them.
    pub sign: f64,
    pub n_parcels: usize,
}

impl Default for SignalSpec {
    fn default() -> Self {
        SignalSpec {
            // Hip_r, Hip_l, Amg_r, Amg_l.
            planted: vec![100, 101, 102, 103],
            delta: 0.5,
            sigma: 0.1,
            sign: 1.0,
            n_parcels: 132,
        }
    }
}

impl SignalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.planted.is_empty() || self.planted.iter().any(|&p| p == 0 || p > self.n_parcels) {
            return Err(Error::Config(format!(
                "planted parcels must be a non-empty subset of 1..={}",
                self.n_parcels
            )));
        }
        if !(self.delta >= 0.0) || !(self.sigma > 0.0) || (self.sign != 1.0 && self.sign != -1.0) {
            return Err(Error::Config("need delta >= 0, sigma > 0 and sign = ±1".into()));
        }
        if self.n_parcels < self.planted.len() + 2 {
            return Err(Error::Config("too few parcels for the planted set".into()));
        }
        Ok(())
    }

    fn is_planted(&self, p: usize) -> bool {
        self.planted.contains(&(p + 1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Connectivity,
    Volume,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub cohort: CohortSpec,
    pub signal: SignalSpec,
    pub modality: Modality,
    pub volume_shape: [usize; 3],
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            cohort: CohortSpec::default(),
            signal: SignalSpec::default(),
            modality: Modality::Connectivity,
            volume_shape: [32, 32, 32],
            seed: 0,
        }
    }
}

fn session_counts(total: usize, spec: &CohortSpec, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let extra = spec.mean_sessions - 1.0;
    let poisson = if extra > 0.0 {
        Some(Poisson::new(extra).map_err(|e| Error::Config(format!("mean_sessions: {e}")))?)
    } else {
        None
    };
    let mut counts = Vec::new();
    let mut left = total;
    while left > 0 {
        let draw = poisson.as_ref().map_or(0, |p| p.sample(rng) as usize);
        let c = (1 + draw).min(spec.max_sessions.max(1)).min(left);
        counts.push(c);
        left -= c;
    }
    Ok(counts)
}

/// Subjects and sessions without data paths, sorted by session id.
pub fn synth_layout(spec: &CohortSpec, seed: u64) -> Result<Cohort> {
    if !(0.0..=1.0).contains(&spec.mixed_fraction) {
        return Err(Error::Config("mixed_fraction must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hc = session_counts(spec.hc_sessions, spec, &mut rng)?;
    let ad = session_counts(spec.ad_sessions, spec, &mut rng)?;
    // Each subject is a list of session classes in visit order.
    let mut subjects: Vec<Vec<Class>> = hc
        .iter()
        .map(|&c| vec![Class::Hc; c])
        .chain(ad.iter().map(|&c| vec![Class::Ad; c]))
        .collect();
    let n_subjects = subjects.len();
    let n_mixed = (spec.mixed_fraction * n_subjects as f64).round() as usize;
    let n_mixed = n_mixed.min(hc.len()).min(ad.len());
    // Converters: an HC subject absorbs an AD subject's later visits.
    let mut ad_pool: Vec<usize> = (hc.len()..n_subjects).collect();
    let mut hc_pool: Vec<usize> = (0..hc.len()).collect();
    ad_pool.shuffle(&mut rng);
    hc_pool.shuffle(&mut rng);
    let mut absorbed = vec![false; n_subjects];
    for k in 0..n_mixed {
        let (h, a) = (hc_pool[k], ad_pool[k]);
        let visits = std::mem::take(&mut subjects[a]);
        subjects[h].extend(visits);
        absorbed[a] = true;
    }
    let mut kept: Vec<Vec<Class>> = subjects
        .into_iter()
        .zip(absorbed)
        .filter(|(_, gone)| !gone)
        .map(|(s, _)| s)
        .collect();
    kept.shuffle(&mut rng);
    let cdrs = [0.5, 0.5, 0.5, 1.0, 1.0, 2.0];
    let mut sessions = Vec::new();
    for (i, visits) in kept.iter().enumerate() {
        let subject_id = format!("sub-{:04}", i + 1);
        for (v, &class) in visits.iter().enumerate() {
            let cdr = match class {
                Class::Hc => 0.0,
                Class::Ad => cdrs[rng.random_range(0..cdrs.len())],
            };
            sessions.push(SessionRecord {
                session_id: format!("{subject_id}_ses-{}", v + 1),
                subject_id: subject_id.clone(),
                cdr,
                class,
                volume_path: None,
                matrix_path: None,
            });
        }
    }
    Cohort::new(sessions)
}

/// Structural-connectivity generator. Every session shares a smooth base
/// graph; sessions add symmetric half-normal noise and AD sessions shift the
/// edges of the planted parcels. One fixed edge between unplanted parcels is
/// kept above every other weight so that scaling by the maximum is the same
/// for every session.
#[derive(Debug, Clone)]
pub struct ConnectivityGenerator {
    signal: SignalSpec,
    base: Tensor,
    anchor: (usize, usize, f64),
}

impl ConnectivityGenerator {
    pub fn new(signal: &SignalSpec, seed: u64) -> Result<Self> {
        signal.validate()?;
        let n = signal.n_parcels;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xC0));
        let mut base = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in i + 1..n {
                let d = (j - i) as f64;
                let v = 0.3 + 0.4 * (-d / 8.0).exp() + 0.2 * rng.random::<f64>();
                base.set(&[i, j], v);
                base.set(&[j, i], v);
            }
        }
        let free: Vec<usize> = (0..n).filter(|&p| !signal.is_planted(p)).take(2).collect();
        let anchor = (free[0], free[1], 2.0 + signal.delta + 12.0 * signal.sigma);
        Ok(ConnectivityGenerator {
            signal: signal.clone(),
            base,
            anchor,
        })
    }

    pub fn session(&self, class: Class, seed: u64) -> Tensor {
        let n = self.signal.n_parcels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.signal.sigma).expect("sigma validated");
        let shift = match class {
            Class::Ad => self.signal.sign * self.signal.delta,
            Class::Hc => 0.0,
        };
        let mut m = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in i + 1..n {
                let mut v = self.base.get(&[i, j]) + noise.sample(&mut rng).abs();
                if self.signal.is_planted(i) || self.signal.is_planted(j) {
                    v = (v + shift).max(0.0);
                }
                m.set(&[i, j], v);
                m.set(&[j, i], v);
            }
        }
        let (a, b, w) = self.anchor;
        m.set(&[a, b], w);
        m.set(&[b, a], w);
        m
    }
}

/// Labels 1..=n on a grid of near-equal blocks, in x-major block order;
/// blocks beyond `n` stay background.
pub fn block_atlas(shape: [usize; 3], n: usize) -> Result<Tensor> {
    let mut grid = [1usize; 3];
    // Grow the block grid until it has room for n labels.
    let mut axis = 0;
    while grid.iter().product::<usize>() < n {
        grid[axis] += 1;
        axis = (axis + 1) % 3;
    }
    if (0..3).any(|a| grid[a] > shape[a]) {
        return Err(Error::Config(format!("volume {shape:?} too small for {n} blocks")));
    }
    let block = |i: usize, a: usize| i * grid[a] / shape[a];
    Ok(Tensor::from_fn(&shape, |idx| {
        let (x, y, z) = (idx / (shape[1] * shape[2]), (idx / shape[2]) % shape[1], idx % shape[2]);
        let b = (block(x, 0) * grid[1] + block(y, 1)) * grid[2] + block(z, 2);
        if b < n {
            (b + 1) as f64
        } else {
            0.0
        }
    }))
}

/// Volumetric generator: a block atlas whose parcels have fixed base
/// intensities, smooth per-session noise, and AD attenuation of `delta`
/// inside the planted parcels.
#[derive(Debug, Clone)]
pub struct VolumeGenerator {
    signal: SignalSpec,
    atlas: AtlasParcellation,
    base: Vec<f64>,
}

impl VolumeGenerator {
    pub fn new(signal: &SignalSpec, shape: [usize; 3], seed: u64) -> Result<Self> {
        signal.validate()?;
        let labels = block_atlas(shape, signal.n_parcels)?;
        let names = if signal.n_parcels == crate::data::N_PARCELS {
            AtlasNames::shipped()
        } else {
            AtlasNames::numbered(signal.n_parcels)
        };
        let atlas = AtlasParcellation::new(labels, names)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xB0));
        let base = (0..signal.n_parcels).map(|_| 1.0 + 0.5 * rng.random::<f64>()).collect();
        Ok(VolumeGenerator {
            signal: signal.clone(),
            atlas,
            base,
        })
    }

    pub fn atlas(&self) -> &AtlasParcellation {
        &self.atlas
    }

    pub fn session(&self, class: Class, seed: u64) -> Result<Tensor> {
        let labels = self.atlas.labels();
        let shape = [labels.shape()[0], labels.shape()[1], labels.shape()[2]];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.signal.sigma).expect("sigma validated");
        let coarse = Tensor::from_fn(&[4, 4, 4], |_| noise.sample(&mut rng));
        let smooth = resize_volume(&coarse, shape)?;
        let fine = Normal::new(0.0, self.signal.sigma / 2.0).expect("sigma validated");
        let mut v = Tensor::zeros(&shape);
        for (i, (&l, out)) in labels.data().iter().zip(v.data_mut()).enumerate() {
            if l == 0.0 {
                continue;
            }
            let p = l as usize - 1;
            let mut x = self.base[p] + smooth.data()[i] + fine.sample(&mut rng);
            if class == Class::Ad && self.signal.is_planted(p) {
                x -= self.signal.delta;
            }
            *out = x;
        }
        Ok(v)
    }
}

/// Seed for the data of the session at cohort position `index`.
pub fn session_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, 0x1_0000 + index as u64)
}

/// Paths written by [`write_synth`].
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub cohort: Cohort,
    pub manifest: PathBuf,
    pub atlas_names: PathBuf,
    pub atlas_labels: Option<PathBuf>,
}

/// Generates a cohort and writes `manifest.csv`, `matrices/*.csv`,
/// `volumes/*.nii`, `atlas/` and `synth.json` under `dir`.
pub fn write_synth(dir: &Path, spec: &SynthSpec) -> Result<SynthOutput> {
    let layout = synth_layout(&spec.cohort, derive_seed(spec.seed, 1))?;
    let mkdir = |d: &Path| fs::create_dir_all(d).map_err(|e| Error::io(format!("creating {}", d.display()), e));
    mkdir(dir)?;
    mkdir(&dir.join("atlas"))?;
    let want_conn = spec.modality != Modality::Volume;
    let want_vol = spec.modality != Modality::Connectivity;
    let conn = want_conn
        .then(|| ConnectivityGenerator::new(&spec.signal, spec.seed))
        .transpose()?;
    let vol = want_vol
        .then(|| VolumeGenerator::new(&spec.signal, spec.volume_shape, spec.seed))
        .transpose()?;
    if want_conn {
        mkdir(&dir.join("matrices"))?;
    }
    if want_vol {
        mkdir(&dir.join("volumes"))?;
    }
    let sessions: Vec<SessionRecord> = layout
        .sessions()
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut s = s.clone();
            let seed = session_seed(spec.seed, i);
            if let Some(g) = &conn {
                let path = dir.join("matrices").join(format!("{}.csv", s.session_id));
                write_conn_csv(&path, &g.session(s.class, seed))?;
                s.matrix_path = Some(path);
            }
            if let Some(g) = &vol {
                let path = dir.join("volumes").join(format!("{}.nii", s.session_id));
                write_nifti(&path, &g.session(s.class, derive_seed(seed, 1))?, [1.0; 3])?;
                s.volume_path = Some(path);
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let cohort = Cohort::new(sessions)?;
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &cohort)?;
    let names = match &vol {
        Some(g) => g.atlas().names().clone(),
        None if spec.signal.n_parcels == crate::data::N_PARCELS => AtlasNames::shipped(),
        None => AtlasNames::numbered(spec.signal.n_parcels),
    };
    let atlas_names = dir.join("atlas").join("names.tsv");
    fs::write(&atlas_names, names.to_tsv()).map_err(|e| Error::io(format!("writing {}", atlas_names.display()), e))?;
    let atlas_labels = match &vol {
        Some(g) => {
            let p = dir.join("atlas").join("labels.nii");
            write_nifti(&p, g.atlas().labels(), [1.0; 3])?;
            Some(p)
        }
        None => None,
    };
    let json = serde_json::to_string_pretty(spec).expect("spec serializes");
    fs::write(dir.join("synth.json"), json + "\n").map_err(|e| Error::io("writing synth.json", e))?;
    Ok(SynthOutput {
        cohort,
        manifest,
        atlas_names,
        atlas_labels,
    })
}

/// A synthetic cohort held in memory.
#[derive(Debug, Clone)]
pub struct SynthSamples {
    pub cohort: Cohort,
    /// Model inputs in cohort order, conditioned as [`load_input`] would
    /// condition the files [`write_synth`] writes.
    pub samples: Vec<Sample>,
    pub names: AtlasNames,
    /// Labels on the model grid, for the volumetric model.
    pub atlas: Option<AtlasParcellation>,
}

/// The cohort [`write_synth`] would write for `spec`, generated straight
/// into model inputs for `cfg`'s model.
pub fn synth_samples(spec: &SynthSpec, cfg: &PipelineConfig) -> Result<SynthSamples> {
    let cohort = synth_layout(&spec.cohort, derive_seed(spec.seed, 1))?;
    let sessions = cohort.sessions();
    let label = |i: usize| sessions[i].class.label();
    let (samples, names, atlas) = match &cfg.model {
        ModelConfig::Bcgcnse(_) => {
            let g = ConnectivityGenerator::new(&spec.signal, spec.seed)?;
            let samples = sessions
                .par_iter()
                .enumerate()
                .map(|(i, s)| {
                    let m = g.session(s.class, session_seed(spec.seed, i));
                    Ok(Sample {
                        id: s.session_id.clone(),
                        input: condition_matrix(&m, cfg)?,
                        label: label(i),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let names = if spec.signal.n_parcels == crate::data::N_PARCELS {
                AtlasNames::shipped()
            } else {
                AtlasNames::numbered(spec.signal.n_parcels)
            };
            (samples, names, None)
        }
        ModelConfig::Cnn3d(_) => {
            let g = VolumeGenerator::new(&spec.signal, spec.volume_shape, spec.seed)?;
            let samples = sessions
                .par_iter()
                .enumerate()
                .map(|(i, s)| {
                    let v = g.session(s.class, derive_seed(session_seed(spec.seed, i), 1))?;
                    Ok(Sample {
                        id: s.session_id.clone(),
                        input: condition_volume(v, cfg)?,
                        label: label(i),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let names = g.atlas().names().clone();
            let labels = conform_labels(g.atlas().labels(), cfg)?;
            let atlas = AtlasParcellation::new(labels, names.clone())?;
            (samples, names, Some(atlas))
        }
    };
    Ok(SynthSamples {
        cohort,
        samples,
        names,
        atlas,
    })
}
