use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{apply_forward, make_coil_maps, make_mask, make_phantom, read_mask_file, to_image, to_kspace, write_mask_file, SamplingMask};
use crate::error::{ensure, Error, Result};
use crate::tensor::{read_ctns_file, write_ctns_file, ComplexTensor, Seed, C64};

/// Parameters of a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub size: [usize; 2],
    pub n_coils: usize,
    pub accel: [usize; 2],
    pub acs: [usize; 2],
    pub n_ellipses: usize,
    /// Standard deviation of additive complex Gaussian k-space noise.
    pub noise_std: f64,
    /// When set, samples come from [`exact_linear_kspace`] with this many components.
    pub linear_components: Option<usize>,
    pub seed: Seed,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            size: [32, 32],
            n_coils: 4,
            accel: [2, 2],
            acs: [6, 6],
            n_ellipses: 6,
            noise_std: 0.0,
            linear_components: None,
            seed: Seed(0),
        }
    }
}

impl DataConfig {
    pub fn mask(&self) -> Result<SamplingMask> {
        make_mask(&self.size, &self.accel, &self.acs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub index: usize,
    pub seed: Seed,
    pub acceleration: f64,
    pub n_coils: usize,
    pub size: [usize; 2],
}

/// One fully sampled multi-coil acquisition and its sampling mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Centered k-space, `[N_c, H, W]`.
    pub full_kspace: ComplexTensor,
    pub mask: SamplingMask,
    pub meta: SampleMeta,
}

impl Sample {
    /// Fully sampled coil images (the training label).
    pub fn label_image(&self) -> Result<ComplexTensor> {
        to_image(&self.full_kspace)
    }

    pub fn undersampled(&self) -> Result<ComplexTensor> {
        apply_forward(&self.full_kspace, &self.mask)
    }

    pub fn zero_filled_image(&self) -> Result<ComplexTensor> {
        to_image(&self.undersampled()?)
    }

    pub fn extents(&self) -> [usize; 2] {
        self.meta.size
    }
}

fn complex_normal<R: Rng>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Sample `index` of the dataset described by `config`.
pub fn generate_sample(config: &DataConfig, index: usize) -> Result<Sample> {
    let seed = config.seed.child(index as u64);
    let mask = config.mask()?;
    let mut kspace = match config.linear_components {
        Some(p) => exact_linear_kspace(config.size, config.n_coils, p, seed.derive("linear"))?.kspace,
        None => {
            let phantom = make_phantom(config.size, config.n_ellipses, seed.derive("phantom"))?;
            let coils = make_coil_maps(config.size, config.n_coils, seed.derive("coils"))?;
            to_kspace(&coils.weight(&phantom)?)?
        }
    };
    if config.noise_std > 0.0 {
        let mut rng = seed.derive("noise").rng();
        for v in kspace.data_mut() {
            *v += complex_normal(&mut rng) * config.noise_std;
        }
    }
    Ok(Sample {
        full_kspace: kspace,
        meta: SampleMeta {
            index,
            seed,
            acceleration: mask.acceleration(),
            n_coils: config.n_coils,
            size: config.size,
        },
        mask,
    })
}

/// Samples `first..first + n` of the dataset.
pub fn generate_dataset(config: &DataConfig, first: usize, n: usize) -> Result<Vec<Sample>> {
    (first..first + n).map(|i| generate_sample(config, i)).collect()
}

fn sample_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("sample_{index:05}"))
}

/// Writes `sample_%05d/{full.ctns, mask.bin, meta.json}` under `dir`.
pub fn save_sample(dir: &Path, sample: &Sample) -> Result<()> {
    let d = sample_dir(dir, sample.meta.index);
    std::fs::create_dir_all(&d)?;
    write_ctns_file(d.join("full.ctns"), &sample.full_kspace)?;
    write_mask_file(d.join("mask.bin"), &sample.mask)?;
    std::fs::write(d.join("meta.json"), serde_json::to_string_pretty(&sample.meta)?)?;
    Ok(())
}

pub fn load_sample(sample_dir: &Path) -> Result<Sample> {
    let full_kspace = read_ctns_file(sample_dir.join("full.ctns"))?;
    ensure!(full_kspace.is_finite(), NonFinite, "k-space in {}", sample_dir.display());
    let mask = read_mask_file(sample_dir.join("mask.bin"))?;
    let meta: SampleMeta = serde_json::from_str(&std::fs::read_to_string(sample_dir.join("meta.json"))?)?;
    ensure!(
        full_kspace.rank() == 3 && full_kspace.shape()[1..] == meta.size,
        Format,
        "k-space shape {:?} disagrees with metadata",
        full_kspace.shape()
    );
    mask.check_extents(meta.size)?;
    Ok(Sample {
        full_kspace,
        mask,
        meta,
    })
}

pub fn save_dataset(dir: &Path, config: &DataConfig, samples: &[Sample]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(config)?)?;
    for s in samples {
        save_sample(dir, s)?;
    }
    Ok(())
}

/// Loads every `sample_*` directory in index order.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("sample_")))
        .collect();
    dirs.sort();
    ensure!(!dirs.is_empty(), InvalidArgument, "no samples in {}", dir.display());
    dirs.iter().map(|d| load_sample(d)).collect()
}

/// k-space that is an exact sum of complex exponentials, shared by all coils
/// with coil-specific amplitudes:
///
/// `k_c(y, x) = Σ_p A[c][p] · exp(2πi (f_p·y/H + g_p·x/W))`
///
/// Integer frequencies make the model exactly periodic on the grid, so any
/// shifted sample is a linear combination of `P` shifted neighbors whenever the
/// neighbor constellation spans the `P`-dimensional signal space.
#[derive(Clone, Debug)]
pub struct LinearModel {
    pub kspace: ComplexTensor,
    pub freqs: Vec<(i64, i64)>,
    /// `[coil][component]`
    pub amplitudes: Vec<Vec<C64>>,
}

pub fn exact_linear_kspace(extents: [usize; 2], n_coils: usize, n_components: usize, seed: Seed) -> Result<LinearModel> {
    let [h, w] = extents;
    ensure!(n_coils >= 1 && n_components >= 1, InvalidArgument, "need coils and components");
    ensure!(
        n_components <= h * w,
        InvalidArgument,
        "{n_components} components do not fit a {h}x{w} grid"
    );
    let mut rng = seed.rng();
    let mut freqs = Vec::with_capacity(n_components);
    while freqs.len() < n_components {
        let f = (
            rng.random_range(-(h as i64) / 2..(h as i64 + 1) / 2),
            rng.random_range(-(w as i64) / 2..(w as i64 + 1) / 2),
        );
        if !freqs.contains(&f) {
            freqs.push(f);
        }
    }
    let amplitudes: Vec<Vec<C64>> = (0..n_coils)
        .map(|_| (0..n_components).map(|_| complex_normal(&mut rng)).collect())
        .collect();
    let mut data = vec![C64::new(0.0, 0.0); n_coils * h * w];
    for (p, &(fy, fx)) in freqs.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let phase = 2.0 * PI * ((fy * y as i64) as f64 / h as f64 + (fx * x as i64) as f64 / w as f64);
                let e = C64::from_polar(1.0, phase);
                for c in 0..n_coils {
                    data[(c * h + y) * w + x] += amplitudes[c][p] * e;
                }
            }
        }
    }
    Ok(LinearModel {
        kspace: ComplexTensor::new(vec![n_coils, h, w], data).map_err(|e| Error::Infeasible(e.to_string()))?,
        freqs,
        amplitudes,
    })
}
