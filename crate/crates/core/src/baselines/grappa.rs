use nalgebra::DMatrix;

use crate::error::{ensure, Error, Result};
use crate::mri::SamplingMask;
use crate::tensor::{lstsq_multi, ComplexTensor, C64};

pub const DEFAULT_RIDGE: f64 = 1e-9;
pub const DEFAULT_KERNEL: [usize; 2] = [2, 3];

/// Weights of one missing-offset class, `(N_c·k_y·k_x) × N_c`, rows ordered
/// `(coil, i, j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetClass {
    pub offset: [usize; 2],
    pub weights: DMatrix<C64>,
}

/// Calibrated interpolation kernel.
///
/// Extents count *acquired* lattice neighbors. For a target at `(y, x)` with
/// offset `(d_y, d_x) = (y mod R_y, x mod R_x)` the base point is
/// `b = (y − d_y, x − d_x)` and the sources sit at
/// `b + (R_y·(i − a_y), R_x·(j − a_x))` with `a = ⌊(k − 1)/2⌋`.
/// Extents `2×3`, `R = (2, 1)`, target `T` at offset `(1, 0)`:
///
/// ```text
///   x-1  x  x+1
///    S   S   S    row b        (i = 0)
///    .   T   .    row b + 1
///    S   S   S    row b + 2    (i = 1)
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GrappaKernel {
    pub extents: [usize; 2],
    pub accel: [usize; 2],
    pub n_coils: usize,
    pub classes: Vec<OffsetClass>,
}

impl GrappaKernel {
    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn n_sources(&self) -> usize {
        self.n_coils * self.extents[0] * self.extents[1]
    }

    fn class(&self, offset: [usize; 2]) -> Option<&OffsetClass> {
        self.classes.iter().find(|c| c.offset == offset)
    }
}

/// `[R_y, R_x]` of a mask; 1-D masks leave the readout axis fully sampled.
pub fn lattice_factors(mask: &SamplingMask) -> [usize; 2] {
    match *mask.accel() {
        [r] => [r, 1],
        [ry, rx] => [ry, rx],
        _ => [1, 1],
    }
}

/// Source displacements from the base point, in row-major `(i, j)` order.
pub fn source_offsets(extents: [usize; 2], accel: [usize; 2]) -> Vec<[isize; 2]> {
    let a = [(extents[0] as isize - 1) / 2, (extents[1] as isize - 1) / 2];
    let mut out = Vec::with_capacity(extents[0] * extents[1]);
    for i in 0..extents[0] as isize {
        for j in 0..extents[1] as isize {
            out.push([accel[0] as isize * (i - a[0]), accel[1] as isize * (j - a[1])]);
        }
    }
    out
}

fn dims(x: &ComplexTensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Shape(format!("expected [N_c, H, W] k-space, got {:?}", x.shape()))),
    }
}

/// ACS block `[row0, col0, rows, cols]` on an `[H, W]` grid.
pub fn acs_rect(mask: &SamplingMask, extents: [usize; 2]) -> Result<[usize; 4]> {
    mask.check_extents(extents)?;
    Ok(match mask.rank() {
        1 => [mask.acs_start()[0], 0, mask.acs_extent()[0], extents[1]],
        _ => [mask.acs_start()[0], mask.acs_start()[1], mask.acs_extent()[0], mask.acs_extent()[1]],
    })
}

/// Fits every missing-offset class by ridge least squares over all stencil
/// positions that fit inside the ACS block.
pub fn grappa_calibrate(kspace: &ComplexTensor, mask: &SamplingMask, extents: [usize; 2], ridge: f64) -> Result<GrappaKernel> {
    let (nc, h, w) = dims(kspace)?;
    ensure!(extents[0] >= 1 && extents[1] >= 1, InvalidArgument, "empty kernel extents");
    let accel = lattice_factors(mask);
    let [r0, c0, rh, rw] = acs_rect(mask, [h, w])?;
    let offsets = source_offsets(extents, accel);
    let n_src = nc * offsets.len();
    let mut classes = Vec::new();
    let min = [offsets.iter().map(|o| o[0]).min().unwrap(), offsets.iter().map(|o| o[1]).min().unwrap()];
    let max = [offsets.iter().map(|o| o[0]).max().unwrap(), offsets.iter().map(|o| o[1]).max().unwrap()];
    let at = |c: usize, y: usize, x: usize| kspace.data()[(c * h + y) * w + x];
    for dy in 0..accel[0] {
        for dx in 0..accel[1] {
            if dy == 0 && dx == 0 {
                continue;
            }
            let lo = [(-min[0]).max(0), (-min[1]).max(0)];
            let hi = [
                rh as isize - max[0].max(dy as isize) - 1,
                rw as isize - max[1].max(dx as isize) - 1,
            ];
            let bases: Vec<[usize; 2]> = (lo[0]..=hi[0])
                .flat_map(|by| (lo[1]..=hi[1]).map(move |bx| [by as usize, bx as usize]))
                .collect();
            ensure!(
                bases.len() >= n_src,
                Infeasible,
                "underdetermined calibration for offset ({dy}, {dx}): {} equations for {n_src} unknowns",
                bases.len()
            );
            let mut a = DMatrix::<C64>::zeros(bases.len(), n_src);
            let mut b = DMatrix::<C64>::zeros(bases.len(), nc);
            for (row, base) in bases.iter().enumerate() {
                let (by, bx) = (r0 + base[0], c0 + base[1]);
                for c in 0..nc {
                    for (s, o) in offsets.iter().enumerate() {
                        a[(row, c * offsets.len() + s)] = at(c, (by as isize + o[0]) as usize, (bx as isize + o[1]) as usize);
                    }
                    b[(row, c)] = at(c, by + dy, bx + dx);
                }
            }
            let weights = lstsq_multi(&a, &b, ridge).map_err(|e| match e {
                Error::Singular(m) => Error::Singular(format!("degenerate constellation for offset ({dy}, {dx}): {m}")),
                other => other,
            })?;
            ensure!(weights.iter().all(|v| v.re.is_finite() && v.im.is_finite()), NonFinite, "GRAPPA weights");
            classes.push(OffsetClass { offset: [dy, dx], weights });
        }
    }
    Ok(GrappaKernel {
        extents,
        accel,
        n_coils: nc,
        classes,
    })
}

/// Fills every unsampled entry from its lattice neighbors (circular indexing,
/// which stays on the lattice when the grid is a multiple of `R`); sampled
/// entries pass through unchanged.
pub fn grappa_reconstruct(kspace: &ComplexTensor, mask: &SamplingMask, kernel: &GrappaKernel) -> Result<ComplexTensor> {
    let (nc, h, w) = dims(kspace)?;
    mask.check_extents([h, w])?;
    ensure!(nc == kernel.n_coils, Shape, "kernel has {} coils, data {nc}", kernel.n_coils);
    ensure!(
        lattice_factors(mask) == kernel.accel,
        Shape,
        "kernel lattice {:?} differs from mask lattice {:?}",
        kernel.accel,
        lattice_factors(mask)
    );
    let offsets = source_offsets(kernel.extents, kernel.accel);
    let plane = mask.plane([h, w])?;
    let mut out = kspace.clone();
    let src = kspace.data();
    let dst = out.data_mut();
    let mut sources = vec![C64::new(0.0, 0.0); kernel.n_sources()];
    for y in 0..h {
        for x in 0..w {
            if plane[y * w + x] {
                continue;
            }
            let offset = [y % kernel.accel[0], x % kernel.accel[1]];
            let class = kernel
                .class(offset)
                .ok_or_else(|| Error::Shape(format!("no kernel for offset {offset:?}")))?;
            let (by, bx) = ((y - offset[0]) as isize, (x - offset[1]) as isize);
            for c in 0..nc {
                for (s, o) in offsets.iter().enumerate() {
                    let yy = (by + o[0]).rem_euclid(h as isize) as usize;
                    let xx = (bx + o[1]).rem_euclid(w as isize) as usize;
                    sources[c * offsets.len() + s] = src[(c * h + yy) * w + xx];
                }
            }
            for c in 0..nc {
                let mut v = C64::new(0.0, 0.0);
                for (s, &sv) in sources.iter().enumerate() {
                    v += sv * class.weights[(s, c)];
                }
                dst[(c * h + y) * w + x] = v;
            }
        }
    }
    Ok(out)
}
