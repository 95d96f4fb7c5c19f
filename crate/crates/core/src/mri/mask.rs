use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index::sample;

use crate::error::{ensure, Error, Result};
use crate::tensor::{ComplexTensor, Seed, C64};

/// Cartesian sampling set Λ on a 1-D (phase-encode lines) or 2-D k-space grid,
/// together with its rectangular ACS block.
///
/// A 1-D mask applied to `[.., H, W]` data selects whole rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplingMask {
    grid: Vec<usize>,
    selected: Vec<bool>,
    acs_start: Vec<usize>,
    acs_extent: Vec<usize>,
    accel: Vec<usize>,
}

impl SamplingMask {
    /// Validates `acs ⊆ selected`, nonemptiness and extents.
    pub fn new(
        grid: Vec<usize>,
        selected: Vec<bool>,
        acs_start: Vec<usize>,
        acs_extent: Vec<usize>,
        accel: Vec<usize>,
    ) -> Result<Self> {
        let rank = grid.len();
        ensure!(rank == 1 || rank == 2, Shape, "mask grids are 1-D or 2-D, got rank {rank}");
        ensure!(
            acs_start.len() == rank && acs_extent.len() == rank && accel.len() == rank,
            Shape,
            "mask metadata rank mismatch"
        );
        ensure!(grid.iter().all(|&g| g > 0), Shape, "zero grid extent");
        ensure!(selected.len() == grid.iter().product::<usize>(), Shape, "selection length");
        for d in 0..rank {
            ensure!(acs_extent[d] >= 1, InvalidArgument, "empty ACS block");
            ensure!(acs_start[d] + acs_extent[d] <= grid[d], InvalidArgument, "ACS outside grid");
            ensure!(accel[d] >= 1, InvalidArgument, "acceleration must be >= 1");
        }
        let mask = Self {
            grid,
            selected,
            acs_start,
            acs_extent,
            accel,
        };
        ensure!(
            mask.acs_indices().into_iter().all(|i| mask.selected[i]),
            InvalidArgument,
            "ACS block not contained in the selection"
        );
        Ok(mask)
    }

    pub fn grid(&self) -> &[usize] {
        &self.grid
    }

    pub fn rank(&self) -> usize {
        self.grid.len()
    }

    pub fn selected(&self) -> &[bool] {
        &self.selected
    }

    pub fn acs_start(&self) -> &[usize] {
        &self.acs_start
    }

    pub fn acs_extent(&self) -> &[usize] {
        &self.acs_extent
    }

    /// Nominal lattice factors the mask was built from.
    pub fn accel(&self) -> &[usize] {
        &self.accel
    }

    pub fn n_selected(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    pub fn grid_len(&self) -> usize {
        self.selected.len()
    }

    /// Net acceleration `|grid| / |Λ|`.
    pub fn acceleration(&self) -> f64 {
        self.grid_len() as f64 / self.n_selected() as f64
    }

    /// Flat indices of the ACS block, row-major.
    pub fn acs_indices(&self) -> Vec<usize> {
        if self.rank() == 1 {
            (self.acs_start[0]..self.acs_start[0] + self.acs_extent[0]).collect()
        } else {
            let w = self.grid[1];
            let mut out = Vec::with_capacity(self.acs_extent[0] * self.acs_extent[1]);
            for y in self.acs_start[0]..self.acs_start[0] + self.acs_extent[0] {
                for x in self.acs_start[1]..self.acs_start[1] + self.acs_extent[1] {
                    out.push(y * w + x);
                }
            }
            out
        }
    }

    pub fn in_acs(&self, index: usize) -> bool {
        let coords: Vec<usize> = if self.rank() == 1 {
            vec![index]
        } else {
            vec![index / self.grid[1], index % self.grid[1]]
        };
        coords
            .iter()
            .enumerate()
            .all(|(d, &c)| c >= self.acs_start[d] && c < self.acs_start[d] + self.acs_extent[d])
    }

    /// Whether the 2-D sampling pattern at `(y, x)` on a `[H, W]` data grid is kept.
    pub fn keeps(&self, y: usize, x: usize) -> bool {
        if self.rank() == 1 {
            self.selected[y]
        } else {
            self.selected[y * self.grid[1] + x]
        }
    }

    /// Expands the mask to a `[H, W]` boolean plane.
    pub fn plane(&self, extents: [usize; 2]) -> Result<Vec<bool>> {
        self.check_extents(extents)?;
        let [h, w] = extents;
        Ok((0..h * w).map(|i| self.keeps(i / w, i % w)).collect())
    }

    /// Per-row selection when the mask only depends on the row index.
    pub fn line_pattern(&self) -> Option<Vec<bool>> {
        if self.rank() == 1 {
            return Some(self.selected.clone());
        }
        let (h, w) = (self.grid[0], self.grid[1]);
        let rows: Vec<bool> = (0..h).map(|y| self.selected[y * w]).collect();
        (0..h * w)
            .all(|i| self.selected[i] == rows[i / w])
            .then_some(rows)
    }

    pub fn check_extents(&self, extents: [usize; 2]) -> Result<()> {
        let ok = if self.rank() == 1 {
            self.grid[0] == extents[0]
        } else {
            self.grid == extents
        };
        ensure!(ok, Shape, "mask grid {:?} does not fit data {:?}", self.grid, extents);
        Ok(())
    }

    fn with_selection(&self, selected: Vec<bool>) -> Self {
        Self {
            selected,
            ..self.clone()
        }
    }
}

/// Uniform lattice (`index ≡ 0 mod accel` per axis) united with a centered ACS block.
pub fn make_mask(grid: &[usize], accel: &[usize], acs_extents: &[usize]) -> Result<SamplingMask> {
    let rank = grid.len();
    ensure!(rank == 1 || rank == 2, Shape, "mask grids are 1-D or 2-D");
    ensure!(accel.len() == rank && acs_extents.len() == rank, Shape, "accel/acs rank mismatch");
    for d in 0..rank {
        ensure!(accel[d] >= 1, InvalidArgument, "acceleration must be >= 1 on axis {d}");
        ensure!(
            acs_extents[d] >= 1 && acs_extents[d] <= grid[d],
            InvalidArgument,
            "ACS extent {} does not fit grid extent {} on axis {d}",
            acs_extents[d],
            grid[d]
        );
    }
    let acs_start: Vec<usize> = (0..rank).map(|d| (grid[d] - acs_extents[d]) / 2).collect();
    let n: usize = grid.iter().product();
    let w = if rank == 2 { grid[1] } else { 1 };
    let selected = (0..n)
        .map(|i| {
            let coords = if rank == 1 { vec![i] } else { vec![i / w, i % w] };
            let lattice = coords.iter().zip(accel).all(|(&c, &a)| c % a == 0);
            let acs = coords
                .iter()
                .enumerate()
                .all(|(d, &c)| c >= acs_start[d] && c < acs_start[d] + acs_extents[d]);
            lattice || acs
        })
        .collect();
    SamplingMask::new(grid.to_vec(), selected, acs_start, acs_extents.to_vec(), accel.to_vec())
}

/// `P_Λ`: keeps sampled entries and zeroes the rest of a `[.., H, W]` tensor.
pub fn apply_forward(kspace: &ComplexTensor, mask: &SamplingMask) -> Result<ComplexTensor> {
    let r = kspace.rank();
    ensure!(r >= 2, Shape, "k-space needs two trailing grid axes");
    let extents = [kspace.shape()[r - 2], kspace.shape()[r - 1]];
    let plane = mask.plane(extents)?;
    let mut out = kspace.clone();
    let n = plane.len();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if !plane[i % n] {
            *v = C64::new(0.0, 0.0);
        }
    }
    Ok(out)
}

/// Random sub-masks keeping the ACS and `round(ρ·|Λ∖ACS|)` other samples each.
///
/// Masks are pairwise distinct whenever `ρ < 1` and `|Λ∖ACS| ≥ n`.
pub fn bootstrap_masks(base: &SamplingMask, n: usize, keep_ratio: f64, seed: Seed) -> Result<Vec<SamplingMask>> {
    ensure!(n >= 1, InvalidArgument, "need at least one bootstrap mask");
    ensure!(
        keep_ratio > 0.0 && keep_ratio <= 1.0,
        InvalidArgument,
        "keep ratio must lie in (0, 1], got {keep_ratio}"
    );
    let pool: Vec<usize> = (0..base.grid_len())
        .filter(|&i| base.selected[i] && !base.in_acs(i))
        .collect();
    let keep = (keep_ratio * pool.len() as f64).round() as usize;
    if keep == pool.len() {
        return Ok(vec![base.clone(); n]);
    }
    let need_distinct = pool.len() >= n;
    let mut rng = seed.rng();
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    let max_attempts = 100 * n + 100;
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Infeasible(format!(
                "could not draw {n} distinct sub-masks keeping {keep} of {} samples",
                pool.len()
            )));
        }
        let mut chosen: Vec<usize> = sample(&mut rng, pool.len(), keep).into_iter().map(|j| pool[j]).collect();
        chosen.sort_unstable();
        if need_distinct && !seen.insert(chosen.clone()) {
            continue;
        }
        let mut selected = vec![false; base.grid_len()];
        for i in base.acs_indices() {
            selected[i] = true;
        }
        for i in chosen {
            selected[i] = true;
        }
        out.push(base.with_selection(selected));
    }
    Ok(out)
}

const MASK_MAGIC: &[u8; 4] = b"MASK";
const MASK_VERSION: u32 = 1;

/// `MASK` v1: magic, u32 version, u32 rank, u64 extents, u64 ACS start,
/// u64 ACS extent, u32 accel per axis, then the selection as an LSB-first
/// bitset in row-major order.
pub fn write_mask<W: Write>(mut w: W, mask: &SamplingMask) -> Result<()> {
    w.write_all(MASK_MAGIC)?;
    w.write_all(&MASK_VERSION.to_le_bytes())?;
    w.write_all(&(mask.rank() as u32).to_le_bytes())?;
    for list in [&mask.grid, &mask.acs_start, &mask.acs_extent] {
        for &v in list.iter() {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
    }
    for &a in &mask.accel {
        w.write_all(&(a as u32).to_le_bytes())?;
    }
    let mut bytes = vec![0u8; mask.selected.len().div_ceil(8)];
    for (i, &s) in mask.selected.iter().enumerate() {
        if s {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_mask<R: Read>(mut r: R) -> Result<SamplingMask> {
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    ensure!(&b4 == MASK_MAGIC, Format, "bad mask magic");
    r.read_exact(&mut b4)?;
    ensure!(u32::from_le_bytes(b4) == MASK_VERSION, Format, "unsupported mask version");
    r.read_exact(&mut b4)?;
    let rank = u32::from_le_bytes(b4) as usize;
    ensure!(rank == 1 || rank == 2, Format, "mask rank {rank}");
    let read_u64s = |r: &mut R| -> Result<Vec<usize>> {
        (0..rank)
            .map(|_| {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                Ok(u64::from_le_bytes(b) as usize)
            })
            .collect()
    };
    let grid = read_u64s(&mut r)?;
    let acs_start = read_u64s(&mut r)?;
    let acs_extent = read_u64s(&mut r)?;
    let mut accel = Vec::with_capacity(rank);
    for _ in 0..rank {
        r.read_exact(&mut b4)?;
        accel.push(u32::from_le_bytes(b4) as usize);
    }
    let n = grid
        .iter()
        .try_fold(1usize, |a, &g| a.checked_mul(g))
        .filter(|&n| n <= 1 << 28)
        .ok_or_else(|| Error::Format("mask grid too large".into()))?;
    let mut bytes = vec![0u8; n.div_ceil(8)];
    r.read_exact(&mut bytes)?;
    let selected = (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
    SamplingMask::new(grid, selected, acs_start, acs_extent, accel).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_mask_file(path: impl AsRef<Path>, mask: &SamplingMask) -> Result<()> {
    let mut buf = Vec::new();
    write_mask(&mut buf, mask)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_mask_file(path: impl AsRef<Path>) -> Result<SamplingMask> {
    read_mask(&std::fs::read(path)?[..])
}
