//! Spatial data model shared by every stage of the pipeline.
//!
//! Axis order is always `(z, y, x)` with `x` varying fastest in memory, which
//! is also the NIfTI on-disk order. Spacing is stated in the same order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// b-values closer than this (s/mm²) are treated as the same weighting.
pub const BVALUE_TOLERANCE: f64 = 1e-9;

/// Relative tolerance when deciding whether two spacings describe one grid.
/// Spacings round-trip through `f32` in NIfTI headers.
const SPACING_RTOL: f64 = 1e-6;

/// Millimetres per voxel along `(z, y, x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelSpacing {
    pub dz: f64,
    pub dy: f64,
    pub dx: f64,
}

impl VoxelSpacing {
    pub fn new(dz: f64, dy: f64, dx: f64) -> Result<Self> {
        for (name, v) in [("dz", dz), ("dy", dy), ("dx", dx)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Argument(format!(
                    "voxel spacing {name} must be a positive finite number, got {v}"
                )));
            }
        }
        Ok(VoxelSpacing { dz, dy, dx })
    }

    pub fn unit() -> Self {
        VoxelSpacing {
            dz: 1.0,
            dy: 1.0,
            dx: 1.0,
        }
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.dz * self.dy * self.dx
    }

    fn approx_eq(&self, other: &VoxelSpacing) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= SPACING_RTOL * a.abs().max(b.abs());
        close(self.dz, other.dz) && close(self.dy, other.dy) && close(self.dx, other.dx)
    }
}

impl Default for VoxelSpacing {
    fn default() -> Self {
        VoxelSpacing::unit()
    }
}

/// Lattice extent `(nz, ny, nx)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nz: usize,
    pub ny: usize,
    pub nx: usize,
}

impl Dims {
    pub fn new(nz: usize, ny: usize, nx: usize) -> Result<Self> {
        if nz == 0 || ny == 0 || nx == 0 {
            return Err(Error::Argument(format!(
                "dims must be positive, got ({nz}, {ny}, {nx})"
            )));
        }
        Ok(Dims { nz, ny, nx })
    }

    pub fn len(&self) -> usize {
        self.nz * self.ny * self.nx
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> Option<usize> {
        (z < self.nz && y < self.ny && x < self.nx).then(|| (z * self.ny + y) * self.nx + x)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let x = index % self.nx;
        let y = (index / self.nx) % self.ny;
        let z = index / (self.nx * self.ny);
        (z, y, x)
    }

    /// Linear indices of the 6-connected neighbours of `index` that lie inside the lattice.
    pub fn face_neighbors(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        let (z, y, x) = self.coords(index);
        const OFFSETS: [(isize, isize, isize); 6] = [
            (-1, 0, 0),
            (1, 0, 0),
            (0, -1, 0),
            (0, 1, 0),
            (0, 0, -1),
            (0, 0, 1),
        ];
        OFFSETS.iter().filter_map(move |&(oz, oy, ox)| {
            let nz = z.checked_add_signed(oz)?;
            let ny = y.checked_add_signed(oy)?;
            let nx = x.checked_add_signed(ox)?;
            self.index(nz, ny, nx)
        })
    }

    /// Number of in-lattice 6-neighbours; fewer than six means the voxel touches the edge.
    pub(crate) fn neighbor_count(&self, index: usize) -> usize {
        self.face_neighbors(index).count()
    }
}

/// Dims plus spacing: everything two images must share to be combined voxel-wise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: Dims,
    pub spacing: VoxelSpacing,
}

impl Grid {
    pub fn new(dims: Dims, spacing: VoxelSpacing) -> Self {
        Grid { dims, spacing }
    }

    pub fn matches(&self, other: &Grid) -> bool {
        self.dims == other.dims && self.spacing.approx_eq(&other.spacing)
    }

    pub fn ensure_matches(&self, other: &Grid, what: &str) -> Result<()> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{what}: grid {:?} @ {:?} does not match {:?} @ {:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )))
        }
    }
}

/// Scalar volume on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    grid: Grid,
    data: Vec<f64>,
}

impl Volume3D {
    pub fn new(dims: Dims, spacing: VoxelSpacing, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "volume data has {} values but dims {:?} need {}",
                data.len(),
                dims,
                dims.len()
            )));
        }
        Ok(Volume3D {
            grid: Grid::new(dims, spacing),
            data,
        })
    }

    pub fn filled(dims: Dims, spacing: VoxelSpacing, value: f64) -> Self {
        Volume3D {
            grid: Grid::new(dims, spacing),
            data: vec![value; dims.len()],
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn dims(&self) -> Dims {
        self.grid.dims
    }

    pub fn spacing(&self) -> VoxelSpacing {
        self.grid.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> Result<f64> {
        let dims = self.dims();
        dims.index(z, y, x)
            .map(|i| self.data[i])
            .ok_or(Error::OutOfBounds {
                index: (z, y, x),
                dims: (dims.nz, dims.ny, dims.nx),
            })
    }
}

/// Boolean lattice, typically a lung segmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    grid: Grid,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: Dims, spacing: VoxelSpacing, data: Vec<bool>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "mask data has {} values but dims {:?} need {}",
                data.len(),
                dims,
                dims.len()
            )));
        }
        Ok(BinaryMask {
            grid: Grid::new(dims, spacing),
            data,
        })
    }

    pub fn empty(dims: Dims, spacing: VoxelSpacing) -> Self {
        BinaryMask {
            grid: Grid::new(dims, spacing),
            data: vec![false; dims.len()],
        }
    }

    pub fn from_fn(
        dims: Dims,
        spacing: VoxelSpacing,
        mut f: impl FnMut(usize, usize, usize) -> bool,
    ) -> Self {
        let data = (0..dims.len())
            .map(|i| {
                let (z, y, x) = dims.coords(i);
                f(z, y, x)
            })
            .collect();
        BinaryMask {
            grid: Grid::new(dims, spacing),
            data,
        }
    }

    /// Voxels of `volume` that are non-zero (NaN counts as background).
    pub fn from_volume(volume: &Volume3D) -> Self {
        BinaryMask {
            grid: volume.grid(),
            data: volume.data().iter().map(|&v| v != 0.0 && !v.is_nan()).collect(),
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn dims(&self) -> Dims {
        self.grid.dims
    }

    pub fn spacing(&self) -> VoxelSpacing {
        self.grid.spacing
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> Result<bool> {
        let dims = self.dims();
        dims.index(z, y, x)
            .map(|i| self.data[i])
            .ok_or(Error::OutOfBounds {
                index: (z, y, x),
                dims: (dims.nz, dims.ny, dims.nx),
            })
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// Linear indices of foreground voxels in ascending order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| v.then_some(i))
    }

    pub fn volume_ml(&self) -> f64 {
        mask_volume_ml(self)
    }

    /// Foreground voxels with at least one 6-connected background neighbour.
    /// Voxels on the lattice edge count, since the outside is background.
    pub fn boundary_indices(&self) -> Vec<usize> {
        let dims = self.dims();
        self.indices()
            .filter(|&i| {
                dims.neighbor_count(i) < 6 || dims.face_neighbors(i).any(|n| !self.data[n])
            })
            .collect()
    }

    pub fn to_volume(&self) -> Volume3D {
        Volume3D {
            grid: self.grid,
            data: self.data.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub(crate) fn with_data(&self, data: Vec<bool>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        BinaryMask {
            grid: self.grid,
            data,
        }
    }
}

/// Total volume of the foreground in millilitres.
pub fn mask_volume_ml(mask: &BinaryMask) -> f64 {
    mask.count() as f64 * mask.spacing().voxel_volume_mm3() / 1000.0
}

/// 4D diffusion-weighted acquisition: one 3D frame per b-value entry.
#[derive(Clone, Debug, PartialEq)]
pub struct DwiSeries {
    frames: Vec<Volume3D>,
    bvalues: Vec<f64>,
}

impl DwiSeries {
    pub fn new(frames: Vec<Volume3D>, bvalues: Vec<f64>) -> Result<Self> {
        if frames.len() != bvalues.len() {
            return Err(Error::Dimension(format!(
                "{} frames but {} b-values",
                frames.len(),
                bvalues.len()
            )));
        }
        let first = frames
            .first()
            .ok_or_else(|| Error::Argument("series needs at least one frame".into()))?
            .grid();
        for (k, frame) in frames.iter().enumerate().skip(1) {
            first.ensure_matches(&frame.grid(), &format!("frame {k}"))?;
        }
        if let Some(b) = bvalues.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
            return Err(Error::Argument(format!(
                "b-values must be non-negative, got {b}"
            )));
        }
        if !bvalues.iter().any(|&b| b.abs() < BVALUE_TOLERANCE) {
            return Err(Error::Argument(
                "series needs at least one b = 0 frame".into(),
            ));
        }
        Ok(DwiSeries { frames, bvalues })
    }

    pub fn frames(&self) -> &[Volume3D] {
        &self.frames
    }

    pub fn bvalues(&self) -> &[f64] {
        &self.bvalues
    }

    pub fn grid(&self) -> Grid {
        self.frames[0].grid()
    }

    pub fn dims(&self) -> Dims {
        self.grid().dims
    }

    pub fn spacing(&self) -> VoxelSpacing {
        self.grid().spacing
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Intensities of one voxel across frames, in frame order.
    pub fn signal_at(&self, index: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f.data[index]).collect()
    }
}

/// Collapse frames that share a b-value (diffusion directions) into their
/// voxel-wise arithmetic mean. Output frames are sorted by ascending b.
pub fn average_by_bvalue(series: &DwiSeries) -> DwiSeries {
    let mut order: Vec<usize> = (0..series.len()).collect();
    order.sort_by(|&a, &b| series.bvalues[a].total_cmp(&series.bvalues[b]));

    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    for k in order {
        let b = series.bvalues[k];
        match groups.last_mut() {
            Some((b0, members)) if (b - *b0).abs() < BVALUE_TOLERANCE => members.push(k),
            _ => groups.push((b, vec![k])),
        }
    }

    let grid = series.grid();
    let mut frames = Vec::with_capacity(groups.len());
    let mut bvalues = Vec::with_capacity(groups.len());
    for (b, members) in groups {
        let data = if members.len() == 1 {
            series.frames[members[0]].data.clone()
        } else {
            let n = members.len() as f64;
            (0..grid.dims.len())
                .map(|i| members.iter().map(|&k| series.frames[k].data[i]).sum::<f64>() / n)
                .collect()
        };
        frames.push(Volume3D { grid, data });
        bvalues.push(b);
    }
    DwiSeries { frames, bvalues }
}

/// Fitted parameter maps. Voxels outside the mask, and masked voxels whose
/// fit failed, hold [`SENTINEL`].
#[derive(Clone, Debug, PartialEq)]
pub struct IvimMaps {
    pub s0: Volume3D,
    pub f: Volume3D,
    pub d_star: Volume3D,
    pub adc: Volume3D,
    pub residual: Volume3D,
    pub mask: BinaryMask,
}

/// Value stored for voxels without a fit.
pub const SENTINEL: f64 = f64::NAN;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    S0,
    F,
    DStar,
    Adc,
    Residual,
}

impl Parameter {
    pub const ALL: [Parameter; 5] = [
        Parameter::S0,
        Parameter::F,
        Parameter::DStar,
        Parameter::Adc,
        Parameter::Residual,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Parameter::S0 => "s0",
            Parameter::F => "f",
            Parameter::DStar => "d_star",
            Parameter::Adc => "adc",
            Parameter::Residual => "residual",
        }
    }
}

impl IvimMaps {
    /// All-sentinel maps on `mask`'s grid.
    pub fn empty(mask: &BinaryMask) -> Self {
        let blank = Volume3D::filled(mask.dims(), mask.spacing(), SENTINEL);
        IvimMaps {
            s0: blank.clone(),
            f: blank.clone(),
            d_star: blank.clone(),
            adc: blank.clone(),
            residual: blank,
            mask: mask.clone(),
        }
    }

    pub fn map(&self, parameter: Parameter) -> &Volume3D {
        match parameter {
            Parameter::S0 => &self.s0,
            Parameter::F => &self.f,
            Parameter::DStar => &self.d_star,
            Parameter::Adc => &self.adc,
            Parameter::Residual => &self.residual,
        }
    }

    pub(crate) fn map_mut(&mut self, parameter: Parameter) -> &mut [f64] {
        match parameter {
            Parameter::S0 => &mut self.s0.data,
            Parameter::F => &mut self.f.data,
            Parameter::DStar => &mut self.d_star.data,
            Parameter::Adc => &mut self.adc.data,
            Parameter::Residual => &mut self.residual.data,
        }
    }

    /// Masked, non-sentinel values of one parameter in voxel order.
    pub fn fitted_values(&self, parameter: Parameter) -> Vec<f64> {
        let data = self.map(parameter).data();
        self.mask
            .indices()
            .map(|i| data[i])
            .filter(|v| !v.is_nan())
            .collect()
    }
}
