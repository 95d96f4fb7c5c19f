use std::collections::BTreeSet;

use rand::Rng;
use serde::Serialize;

use crate::error::{ensure, Result};
use crate::net::{Network, RunOptions};
use crate::tensor::{Features, Seed};

/// Anything that maps an input to a ReLU activation fingerprint.
pub trait PatternSource {
    fn input_shape(&self) -> [usize; 3];
    /// Number of ReLU units contributing to a fingerprint at this input size.
    fn n_neurons(&self) -> Result<usize>;
    fn fingerprint(&self, z: &Features) -> Result<Vec<u64>>;
}

/// A network with fixed parameters at a fixed input size.
#[derive(Clone, Copy, Debug)]
pub struct NetworkPatterns<'a> {
    pub net: &'a Network,
    pub params: &'a [f64],
    pub extents: [usize; 2],
}

impl PatternSource for NetworkPatterns<'_> {
    fn input_shape(&self) -> [usize; 3] {
        [self.net.spec.input_channels, self.extents[0], self.extents[1]]
    }

    fn n_neurons(&self) -> Result<usize> {
        let shapes = self.net.spec.shapes(self.extents)?;
        Ok(self
            .net
            .spec
            .relu_layers()
            .into_iter()
            .map(|l| shapes[l].iter().product::<usize>())
            .sum())
    }

    fn fingerprint(&self, z: &Features) -> Result<Vec<u64>> {
        let mut skips = Default::default();
        let pass = self
            .net
            .run(self.params, 0..self.net.spec.len(), z, &mut skips, RunOptions::default())?;
        Ok(pass.trace.fingerprint())
    }
}

/// Where census probes are placed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Probes {
    /// `resolution × resolution` cell centres of the square
    /// `origin + s·u + t·v`, `s, t ∈ [−extent, extent]`.
    Grid {
        origin: Vec<f64>,
        u: Vec<f64>,
        v: Vec<f64>,
        extent: f64,
        resolution: usize,
    },
    /// Standard Gaussian inputs.
    Random { count: usize, seed: u64 },
}

impl Probes {
    /// Axis-aligned grid over `[−extent, extent]²` for two-dimensional inputs.
    pub fn plane(extent: f64, resolution: usize) -> Self {
        Probes::Grid {
            origin: vec![0.0, 0.0],
            u: vec![1.0, 0.0],
            v: vec![0.0, 1.0],
            extent,
            resolution,
        }
    }

    pub fn count(&self) -> usize {
        match self {
            Probes::Grid { resolution, .. } => resolution * resolution,
            Probes::Random { count, .. } => *count,
        }
    }

    /// Grid coordinate of cell `i` along one axis.
    pub fn grid_coordinate(extent: f64, resolution: usize, i: usize) -> f64 {
        -extent + (2 * i + 1) as f64 * extent / resolution as f64
    }

    /// All probe points, in a fixed order.
    pub fn points(&self, shape: [usize; 3]) -> Result<Vec<Features>> {
        let n: usize = shape.iter().product();
        match self {
            Probes::Grid {
                origin,
                u,
                v,
                extent,
                resolution,
            } => {
                ensure!(
                    origin.len() == n && u.len() == n && v.len() == n,
                    Shape,
                    "grid vectors must have {n} entries"
                );
                ensure!(*resolution >= 1, InvalidArgument, "probe count must be at least 1");
                let mut out = Vec::with_capacity(resolution * resolution);
                for a in 0..*resolution {
                    let s = Self::grid_coordinate(*extent, *resolution, a);
                    for b in 0..*resolution {
                        let t = Self::grid_coordinate(*extent, *resolution, b);
                        let data = (0..n).map(|k| origin[k] + s * u[k] + t * v[k]).collect();
                        out.push(Features::new(shape[0], shape[1], shape[2], data)?);
                    }
                }
                Ok(out)
            }
            Probes::Random { count, seed } => {
                ensure!(*count >= 1, InvalidArgument, "probe count must be at least 1");
                let mut rng = Seed(*seed).rng();
                (0..*count)
                    .map(|_| {
                        let data = (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
                        Features::new(shape[0], shape[1], shape[2], data)
                    })
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RegionCensus {
    pub probes: Probes,
    pub n_probes: usize,
    pub count: usize,
    pub n_neurons: usize,
    /// `log₂` of the `2^#neurons` pattern bound.
    pub log2_bound: usize,
    #[serde(skip)]
    pub fingerprints: BTreeSet<Vec<u64>>,
}

impl RegionCensus {
    /// `count ≤ min(#probes, 2^#neurons)`.
    pub fn within_bound(&self) -> bool {
        let pattern_bound_ok = self.n_neurons >= usize::BITS as usize - 1 || self.count <= 1usize << self.n_neurons;
        self.count <= self.n_probes && pattern_bound_ok
    }
}

pub fn region_census(system: &dyn PatternSource, probes: &Probes) -> Result<RegionCensus> {
    let points = probes.points(system.input_shape())?;
    let mut fingerprints = BTreeSet::new();
    for z in &points {
        fingerprints.insert(system.fingerprint(z)?);
    }
    let n_neurons = system.n_neurons()?;
    Ok(RegionCensus {
        probes: probes.clone(),
        n_probes: points.len(),
        count: fingerprints.len(),
        n_neurons,
        log2_bound: n_neurons,
        fingerprints,
    })
}
