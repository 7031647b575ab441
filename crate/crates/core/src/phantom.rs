//! Synthetic DWI phantoms with known IVIM ground truth, plus the mask
//! perturbations used to imitate automatic segmentations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Dims, DwiSeries, IvimMaps, Volume3D, VoxelSpacing, SENTINEL};
use crate::ivim::ivim_signal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Z,
    Y,
    X,
}

/// Spatial layout of one truth parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Constant { value: f64 },
    /// Linear ramp from `from` at the first slice along `axis` to `to` at the last.
    LinearGradient { from: f64, to: f64, axis: Axis },
    /// `first` on the lower half of `axis`, `second` on the upper half.
    TwoRegion { first: f64, second: f64, axis: Axis },
}

impl FieldSpec {
    pub fn value_at(&self, dims: Dims, z: usize, y: usize, x: usize) -> f64 {
        let along = |axis: Axis| match axis {
            Axis::Z => (z, dims.nz),
            Axis::Y => (y, dims.ny),
            Axis::X => (x, dims.nx),
        };
        match *self {
            FieldSpec::Constant { value } => value,
            FieldSpec::LinearGradient { from, to, axis } => {
                let (c, n) = along(axis);
                if n < 2 {
                    from
                } else {
                    from + (to - from) * c as f64 / (n - 1) as f64
                }
            }
            FieldSpec::TwoRegion { first, second, axis } => {
                let (c, n) = along(axis);
                if 2 * c < n {
                    first
                } else {
                    second
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    #[default]
    None,
    /// Additive zero-mean Gaussian noise.
    Gaussian { snr: f64 },
    /// Magnitude of complex Gaussian noise.
    Rician { snr: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    /// `[nz, ny, nx]`
    pub dims: [usize; 3],
    /// `[dz, dy, dx]` in mm
    pub spacing: [f64; 3],
    pub bvalues: Vec<f64>,
    pub s0: FieldSpec,
    pub f: FieldSpec,
    pub d_star: FieldSpec,
    pub d: FieldSpec,
    pub noise: NoiseModel,
    pub seed: u64,
    /// Ellipsoid semi-axes as a fraction of the half-extent of each axis.
    pub ellipsoid_fraction: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            dims: [8, 32, 32],
            spacing: [7.2, 2.07, 2.07],
            bvalues: vec![0.0, 10.0, 20.0, 50.0, 100.0, 200.0, 400.0, 600.0],
            s0: FieldSpec::Constant { value: 100.0 },
            f: FieldSpec::Constant { value: 0.3 },
            d_star: FieldSpec::Constant { value: 0.05 },
            d: FieldSpec::Constant { value: 0.002 },
            noise: NoiseModel::None,
            seed: 0,
            ellipsoid_fraction: 0.8,
        }
    }
}

impl PhantomConfig {
    fn grid(&self) -> Result<(Dims, VoxelSpacing)> {
        let [nz, ny, nx] = self.dims;
        let [dz, dy, dx] = self.spacing;
        let dims = Dims::new(nz, ny, nx).map_err(|e| Error::Config(e.to_string()))?;
        let spacing = VoxelSpacing::new(dz, dy, dx).map_err(|e| Error::Config(e.to_string()))?;
        Ok((dims, spacing))
    }
}

/// A synthetic acquisition together with the truth it was generated from.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomBundle {
    pub series: DwiSeries,
    pub mask: BinaryMask,
    /// Truth maps inside the mask (`adc` holds D, `residual` is 0).
    pub truth: IvimMaps,
}

/// Axis-aligned ellipsoid centred in the lattice.
pub fn ellipsoid_mask(dims: Dims, spacing: VoxelSpacing, fraction: f64) -> BinaryMask {
    let centre = |n: usize| (n as f64 - 1.0) / 2.0;
    let semi = |n: usize| fraction * n as f64 / 2.0;
    let (cz, cy, cx) = (centre(dims.nz), centre(dims.ny), centre(dims.nx));
    let (rz, ry, rx) = (semi(dims.nz), semi(dims.ny), semi(dims.nx));
    BinaryMask::from_fn(dims, spacing, |z, y, x| {
        let q = ((z as f64 - cz) / rz).powi(2)
            + ((y as f64 - cy) / ry).powi(2)
            + ((x as f64 - cx) / rx).powi(2);
        q <= 1.0
    })
}

pub fn make_phantom(cfg: &PhantomConfig) -> Result<PhantomBundle> {
    let (dims, spacing) = cfg.grid()?;
    if !(cfg.ellipsoid_fraction > 0.0 && cfg.ellipsoid_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "ellipsoid_fraction must be in (0, 1], got {}",
            cfg.ellipsoid_fraction
        )));
    }
    if cfg.bvalues.is_empty() {
        return Err(Error::Config("phantom needs at least one b-value".into()));
    }
    let mask = ellipsoid_mask(dims, spacing, cfg.ellipsoid_fraction);

    let n = dims.len();
    let mut truth = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        let (z, y, x) = dims.coords(i);
        let s0 = cfg.s0.value_at(dims, z, y, x);
        let f = cfg.f.value_at(dims, z, y, x);
        let ds = cfg.d_star.value_at(dims, z, y, x);
        let d = cfg.d.value_at(dims, z, y, x);
        if mask.data()[i] {
            let valid = s0.is_finite()
                && s0 > 0.0
                && (0.0..=1.0).contains(&f)
                && d.is_finite()
                && d > 0.0
                && ds.is_finite()
                && ds >= d;
            if !valid {
                return Err(Error::Config(format!(
                    "truth at voxel ({z}, {y}, {x}) violates S0 > 0, 0 <= f <= 1, D > 0, D* >= D: \
                     S0={s0}, f={f}, D*={ds}, D={d}"
                )));
            }
        }
        truth[0][i] = s0;
        truth[1][i] = f;
        truth[2][i] = ds;
        truth[3][i] = d;
    }

    let frames = cfg
        .bvalues
        .iter()
        .map(|&b| {
            let data = (0..n)
                .map(|i| ivim_signal(b, truth[0][i], truth[1][i], truth[2][i], truth[3][i]))
                .collect();
            Volume3D::new(dims, spacing, data)
        })
        .collect::<Result<Vec<_>>>()?;
    let series = DwiSeries::new(frames, cfg.bvalues.clone()).map_err(|e| Error::Config(e.to_string()))?;
    let series = add_noise(&series, &mask, cfg.noise, cfg.seed)?;

    let masked = |values: &[f64]| -> Result<Volume3D> {
        let data = values
            .iter()
            .zip(mask.data())
            .map(|(&v, &m)| if m { v } else { SENTINEL })
            .collect();
        Volume3D::new(dims, spacing, data)
    };
    let zeros = vec![0.0; n];
    let truth = IvimMaps {
        s0: masked(&truth[0])?,
        f: masked(&truth[1])?,
        d_star: masked(&truth[2])?,
        adc: masked(&truth[3])?,
        residual: masked(&zeros)?,
        mask: mask.clone(),
    };
    Ok(PhantomBundle {
        series,
        mask,
        truth,
    })
}

/// Adds noise whose standard deviation is the mean masked b=0 intensity
/// divided by the SNR. Deterministic for a given seed.
pub fn add_noise(
    series: &DwiSeries,
    mask: &BinaryMask,
    model: NoiseModel,
    seed: u64,
) -> Result<DwiSeries> {
    let (snr, rician) = match model {
        NoiseModel::None => return Ok(series.clone()),
        NoiseModel::Gaussian { snr } => (snr, false),
        NoiseModel::Rician { snr } => (snr, true),
    };
    if !(snr > 0.0) {
        return Err(Error::Argument(format!("SNR must be positive, got {snr}")));
    }
    series.grid().ensure_matches(&mask.grid(), "noise mask")?;
    if mask.is_empty() {
        return Err(Error::Argument("noise level needs a non-empty mask".into()));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (frame, &b) in series.frames().iter().zip(series.bvalues()) {
        if b == 0.0 {
            for i in mask.indices() {
                sum += frame.data()[i];
                count += 1;
            }
        }
    }
    let sd = sum / count as f64 / snr;
    if !(sd.is_finite() && sd >= 0.0) {
        return Err(Error::Argument(format!("noise level {sd} is not usable")));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = series
        .frames()
        .iter()
        .map(|frame| {
            let data = frame
                .data()
                .iter()
                .map(|&s| {
                    let n1 = sd * normal.sample(&mut rng);
                    if rician {
                        let n2 = sd * normal.sample(&mut rng);
                        ((s + n1).powi(2) + n2 * n2).sqrt()
                    } else {
                        s + n1
                    }
                })
                .collect();
            Volume3D::new(frame.dims(), frame.spacing(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    DwiSeries::new(frames, series.bvalues().to_vec())
}

/// Mask edits that imitate disagreement between two segmentations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Perturbation {
    Dilate { radius: usize },
    Erode { radius: usize },
    BoundaryFlip { p: f64, seed: u64 },
}

pub fn perturb_mask(mask: &BinaryMask, op: Perturbation) -> Result<BinaryMask> {
    match op {
        Perturbation::Dilate { radius } | Perturbation::Erode { radius } if radius == 0 => {
            Err(Error::Argument("structuring radius must be at least 1".into()))
        }
        Perturbation::Dilate { radius } => Ok(dilate(mask, radius)),
        Perturbation::Erode { radius } => Ok(erode(mask, radius)),
        Perturbation::BoundaryFlip { p, seed } => boundary_flip(mask, p, seed),
    }
}

/// `radius` rounds of 6-connected dilation.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let dims = mask.dims();
    let mut current = mask.clone();
    for _ in 0..radius {
        let src = current.data();
        let data = (0..dims.len())
            .map(|i| src[i] || dims.face_neighbors(i).any(|n| src[n]))
            .collect();
        current = current.with_data(data);
    }
    current
}

/// `radius` rounds of 6-connected erosion; the lattice exterior is background.
pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let dims = mask.dims();
    let mut current = mask.clone();
    for _ in 0..radius {
        let src = current.data();
        let data = (0..dims.len())
            .map(|i| src[i] && dims.neighbor_count(i) == 6 && dims.face_neighbors(i).all(|n| src[n]))
            .collect();
        current = current.with_data(data);
    }
    current
}

/// Toggles each boundary voxel independently with probability `p`.
///
/// Both sides of the boundary are candidates: foreground voxels with a
/// background neighbour (removal) and background voxels with a foreground
/// neighbour (addition), so the expected volume change is roughly balanced.
pub fn boundary_flip(mask: &BinaryMask, p: f64, seed: u64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Argument(format!("flip probability must be in [0, 1], got {p}")));
    }
    let dims = mask.dims();
    let src = mask.data();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = src.to_vec();
    for i in 0..dims.len() {
        let candidate = if src[i] {
            dims.neighbor_count(i) < 6 || dims.face_neighbors(i).any(|n| !src[n])
        } else {
            dims.face_neighbors(i).any(|n| src[n])
        };
        if candidate && rng.random::<f64>() < p {
            data[i] = !src[i];
        }
    }
    Ok(mask.with_data(data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Parameter;

    fn small() -> PhantomConfig {
        PhantomConfig {
            dims: [4, 12, 12],
            ..PhantomConfig::default()
        }
    }

    #[test]
    fn default_phantom_has_about_two_thousand_voxels() {
        let b = make_phantom(&PhantomConfig::default()).unwrap();
        let n = b.mask.count();
        assert!((1500..=2500).contains(&n), "{n}");
    }

    #[test]
    fn noiseless_b0_equals_s0() {
        let b = make_phantom(&small()).unwrap();
        let b0 = &b.series.frames()[0];
        assert!(b.mask.indices().all(|i| b0.data()[i] == 100.0));
    }

    #[test]
    fn noiseless_b600_matches_model() {
        let b = make_phantom(&small()).unwrap();
        let last = b.series.frames().last().unwrap();
        let expected = 100.0 * (0.3 * (-30.0f64).exp() + 0.7 * (-1.2f64).exp());
        assert!((expected - 21.08).abs() < 5e-3);
        for i in b.mask.indices() {
            assert!((last.data()[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn truth_is_sentinel_outside_mask() {
        let b = make_phantom(&small()).unwrap();
        for p in Parameter::ALL {
            let m = b.truth.map(p).data();
            for (i, &inside) in b.mask.data().iter().enumerate() {
                assert_eq!(inside, !m[i].is_nan());
            }
        }
        assert_eq!(b.truth.fitted_values(Parameter::Adc)[0], 0.002);
    }

    #[test]
    fn invalid_truth_is_a_config_error() {
        let cfg = PhantomConfig {
            d_star: FieldSpec::Constant { value: 0.001 },
            ..small()
        };
        assert!(matches!(make_phantom(&cfg), Err(Error::Config(_))));
        let cfg = PhantomConfig {
            f: FieldSpec::LinearGradient { from: 0.5, to: 1.5, axis: Axis::X },
            ..small()
        };
        assert!(matches!(make_phantom(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn fields_vary_as_described() {
        let dims = Dims::new(1, 1, 5).unwrap();
        let g = FieldSpec::LinearGradient { from: 0.0, to: 1.0, axis: Axis::X };
        assert_eq!(g.value_at(dims, 0, 0, 4), 1.0);
        assert_eq!(g.value_at(dims, 0, 0, 2), 0.5);
        let t = FieldSpec::TwoRegion { first: 1.0, second: 2.0, axis: Axis::X };
        let v: Vec<f64> = (0..5).map(|x| t.value_at(dims, 0, 0, x)).collect();
        assert_eq!(v, [1.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn same_seed_same_bundle() {
        let cfg = PhantomConfig {
            noise: NoiseModel::Rician { snr: 20.0 },
            seed: 9,
            ..small()
        };
        let (a, b) = (make_phantom(&cfg).unwrap(), make_phantom(&cfg).unwrap());
        assert_eq!((&a.series, &a.mask), (&b.series, &b.mask));
        let other = PhantomConfig { seed: 10, ..cfg.clone() };
        assert_ne!(make_phantom(&cfg).unwrap().series, make_phantom(&other).unwrap().series);
    }

    #[test]
    fn infinite_snr_is_identity() {
        let b = make_phantom(&small()).unwrap();
        for model in [
            NoiseModel::Gaussian { snr: f64::INFINITY },
            NoiseModel::Rician { snr: f64::INFINITY },
        ] {
            assert_eq!(add_noise(&b.series, &b.mask, model, 3).unwrap(), b.series);
        }
        assert!(add_noise(&b.series, &b.mask, NoiseModel::Gaussian { snr: 0.0 }, 3).is_err());
    }

    fn constant_b0(dims: Dims, value: f64) -> (DwiSeries, BinaryMask) {
        let sp = VoxelSpacing::unit();
        let frame = Volume3D::filled(dims, sp, value);
        let series = DwiSeries::new(vec![frame], vec![0.0]).unwrap();
        (series, BinaryMask::from_fn(dims, sp, |_, _, _| true))
    }

    #[test]
    fn gaussian_noise_has_requested_sd() {
        let (series, mask) = constant_b0(Dims::new(1, 100, 100).unwrap(), 100.0);
        let noisy = add_noise(&series, &mask, NoiseModel::Gaussian { snr: 50.0 }, 1).unwrap();
        let v = noisy.frames()[0].data();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        assert!((sd - 2.0).abs() < 0.2, "{sd}");
    }

    #[test]
    fn rician_noise_on_zero_signal_is_rayleigh() {
        // the noise level comes from the b=0 frame, the zero frame gets pure Rayleigh noise
        let dims = Dims::new(1, 100, 100).unwrap();
        let sp = VoxelSpacing::unit();
        let frames = vec![Volume3D::filled(dims, sp, 100.0), Volume3D::filled(dims, sp, 0.0)];
        let series = DwiSeries::new(frames, vec![0.0, 1000.0]).unwrap();
        let mask = BinaryMask::from_fn(dims, sp, |_, _, _| true);
        let noisy = add_noise(&series, &mask, NoiseModel::Rician { snr: 20.0 }, 4).unwrap();
        let v = noisy.frames()[1].data();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let expected = 5.0 * (std::f64::consts::PI / 2.0).sqrt();
        assert!((m - expected).abs() / expected < 0.02, "{m} vs {expected}");
    }

    #[test]
    fn single_voxel_dilates_to_seven() {
        let dims = Dims::new(3, 3, 3).unwrap();
        let m = BinaryMask::from_fn(dims, VoxelSpacing::unit(), |z, y, x| (z, y, x) == (1, 1, 1));
        assert_eq!(dilate(&m, 1).count(), 7);
        assert_eq!(erode(&dilate(&m, 1), 1), m);
    }

    #[test]
    fn closing_keeps_the_ellipsoid() {
        let dims = Dims::new(12, 20, 20).unwrap();
        let m = ellipsoid_mask(dims, VoxelSpacing::unit(), 0.7);
        let closed = erode(&dilate(&m, 1), 1);
        assert!(m.indices().all(|i| closed.data()[i]));
    }

    #[test]
    fn erosion_can_empty_a_mask() {
        let dims = Dims::new(3, 3, 3).unwrap();
        let m = BinaryMask::from_fn(dims, VoxelSpacing::unit(), |z, y, x| (z, y, x) == (1, 1, 1));
        assert!(erode(&m, 1).is_empty());
        assert!(perturb_mask(&m, Perturbation::Erode { radius: 0 }).is_err());
    }

    #[test]
    fn flip_probability_extremes() {
        let dims = Dims::new(6, 10, 10).unwrap();
        let m = ellipsoid_mask(dims, VoxelSpacing::unit(), 0.6);
        assert_eq!(boundary_flip(&m, 0.0, 1).unwrap(), m);
        let all = boundary_flip(&m, 1.0, 1).unwrap();
        let inner = m.boundary_indices();
        assert!(inner.iter().all(|&i| !all.data()[i]));
        assert!(dilate(&m, 1).indices().filter(|&i| !m.data()[i]).all(|i| all.data()[i]));
        assert!(boundary_flip(&m, 1.5, 1).is_err());
    }
}
