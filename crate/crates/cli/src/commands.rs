use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ivimlab::fgr::{self, Classifier, Group, SubjectRecord};
use ivimlab::grid::{average_by_bvalue, BinaryMask, IvimMaps, Parameter, Volume3D, SENTINEL};
use ivimlab::ivim::{fit_volume, IvimFitConfig};
use ivimlab::mask_ops::{self, FusionStrategy};
use ivimlab::nifti::{self, Datatype};
use ivimlab::phantom::{make_phantom, NoiseModel, PhantomConfig};
use ivimlab::report::{cohort_report, MaskSource, SummaryRow};
use ivimlab::stats::DEFAULT_ENTROPY_BINS;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::*;
use crate::failure::{input_error, Classify, CliResult};

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).input_with(|| path.display().to_string())?;
    serde_json::from_str(&text).input_with(|| format!("{}: invalid configuration", path.display()))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).internal()
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).internal()?;
    bytes.push(b'\n');
    nifti::write_atomic(path, &bytes).internal()
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).internal()?;
    }
    w.into_inner().internal()
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).input_with(|| path.display().to_string())?;
    reader
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .input_with(|| path.display().to_string())
}

pub fn phantom(args: &PhantomArgs) -> CliResult<()> {
    let mut cfg: PhantomConfig = read_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(d) = &args.dims {
        cfg.dims = [d[0], d[1], d[2]];
    }
    let (configured, configured_snr) = match cfg.noise {
        NoiseModel::None => (NoiseKind::None, None),
        NoiseModel::Gaussian { snr } => (NoiseKind::Gaussian, Some(snr)),
        NoiseModel::Rician { snr } => (NoiseKind::Rician, Some(snr)),
    };
    let snr = args.snr.or(configured_snr);
    let kind = match (args.noise, configured) {
        (Some(kind), _) => kind,
        // --snr alone switches on the default noise model
        (None, NoiseKind::None) if args.snr.is_some() => NoiseKind::Gaussian,
        (None, kind) => kind,
    };
    let need_snr = || snr.ok_or_else(|| input_error(format!("--noise {kind:?} needs --snr")));
    cfg.noise = match kind {
        NoiseKind::None => NoiseModel::None,
        NoiseKind::Gaussian => NoiseModel::Gaussian { snr: need_snr()? },
        NoiseKind::Rician => NoiseModel::Rician { snr: need_snr()? },
    };
    let bundle = make_phantom(&cfg).input()?;

    ensure_dir(&args.out)?;
    let out = |name: &str| args.out.join(name);
    nifti::write_series_as(&bundle.series, out("series.nii"), Datatype::F64).internal()?;
    nifti::write_mask(&bundle.mask, out("mask.nii")).internal()?;
    for p in [Parameter::S0, Parameter::F, Parameter::DStar, Parameter::Adc] {
        let path = out(&format!("truth_{}.nii", p.name()));
        nifti::write_volume_as(bundle.truth.map(p), path, Datatype::F64).internal()?;
    }
    write_json(
        &out("manifest.json"),
        &json!({
            "config": cfg,
            "masked_voxels": bundle.mask.count(),
            "mask_volume_ml": bundle.mask.volume_ml(),
            "files": {
                "series": "series.nii",
                "bval": "series.bval",
                "mask": "mask.nii",
                "truth": ["truth_s0.nii", "truth_f.nii", "truth_d_star.nii", "truth_adc.nii"],
            },
        }),
    )
}

#[derive(Serialize)]
struct FitLogReport<'a> {
    voxels_fitted: usize,
    voxels_failed: usize,
    boundary_hits: usize,
    wall_time_s: f64,
    series: &'a Path,
    bval: &'a Path,
    mask: &'a Path,
    config: &'a IvimFitConfig,
}

pub fn fit(args: &FitArgs) -> CliResult<()> {
    let mut cfg: IvimFitConfig = read_config(args.config.as_deref())?;
    if let Some(t) = args.b_threshold {
        cfg.b_threshold = t;
    }
    cfg.validate().input()?;
    let bval = args
        .bval
        .clone()
        .unwrap_or_else(|| nifti::bval_path_for(&args.series));
    let series = nifti::read_series(&args.series, &bval).input()?;
    let mask = nifti::read_mask(&args.mask).input()?;
    let series = average_by_bvalue(&series);

    let start = Instant::now();
    let (maps, log) = fit_volume(&series, &mask, &cfg).input()?;
    let wall_time_s = start.elapsed().as_secs_f64();

    ensure_dir(&args.out)?;
    for p in Parameter::ALL {
        let path = args.out.join(format!("{}.nii", p.name()));
        nifti::write_volume(maps.map(p), path).internal()?;
    }
    write_json(
        &args.out.join("fit_log.json"),
        &FitLogReport {
            voxels_fitted: log.voxels_fitted,
            voxels_failed: log.voxels_failed,
            boundary_hits: log.boundary_hits,
            wall_time_s,
            series: &args.series,
            bval: &bval,
            mask: &args.mask,
            config: &cfg,
        },
    )
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FuseConfig {
    strategy: Option<FusionStrategy>,
}

pub fn fuse(args: &FuseArgs) -> CliResult<()> {
    let mut cfg: FuseConfig = read_config(args.config.as_deref())?;
    if let Some(s) = &args.strategy {
        cfg.strategy = Some(s.parse().input()?);
    }
    let strategy = cfg
        .strategy
        .ok_or_else(|| input_error("no fusion strategy: pass --strategy or set it in --config"))?;
    let masks = args
        .masks
        .iter()
        .map(nifti::read_mask)
        .collect::<Result<Vec<_>, _>>()
        .input()?;
    let fused = mask_ops::fuse(&masks, strategy).input()?;
    nifti::write_mask(&fused, &args.out).internal()?;
    println!(
        "{}",
        json!({
            "strategy": strategy,
            "inputs": args.masks,
            "output": args.out,
            "voxels": fused.count(),
        })
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsRow {
    pub dice: f64,
    pub hd_mm: f64,
    pub vol_a_ml: f64,
    pub vol_b_ml: f64,
}

pub fn metrics(args: &MetricsArgs) -> CliResult<()> {
    let a = nifti::read_mask(&args.a).input()?;
    let b = nifti::read_mask(&args.b).input()?;
    let row = MetricsRow {
        dice: mask_ops::dice(&a, &b).input()?,
        hd_mm: mask_ops::hausdorff(&a, &b).input()?,
        vol_a_ml: a.volume_ml(),
        vol_b_ml: b.volume_ml(),
    };
    let bytes = csv_bytes(&[row])?;
    match &args.out {
        Some(path) => nifti::write_atomic(path, &bytes).internal(),
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SummarizeConfig {
    bins: usize,
}

impl Default for SummarizeConfig {
    fn default() -> Self {
        SummarizeConfig {
            bins: DEFAULT_ENTROPY_BINS,
        }
    }
}

fn read_map(dir: &Path, p: Parameter, mask: &BinaryMask, required: bool) -> CliResult<Volume3D> {
    let path = dir.join(format!("{}.nii", p.name()));
    if !required && !path.exists() {
        return Ok(Volume3D::filled(mask.dims(), mask.spacing(), SENTINEL));
    }
    let v = nifti::read_volume(&path).input()?;
    mask.grid()
        .ensure_matches(&v.grid(), &path.display().to_string())
        .input()?;
    Ok(v)
}

pub fn summarize(args: &SummarizeArgs) -> CliResult<()> {
    let mut cfg: SummarizeConfig = read_config(args.config.as_deref())?;
    if let Some(b) = args.bins {
        cfg.bins = b;
    }
    if cfg.bins == 0 {
        return Err(input_error("entropy needs at least one bin"));
    }
    let group: Group = args.group.parse().input()?;
    let source: MaskSource = args.source.parse().input()?;
    let strategy: FusionStrategy = args.strategy.parse().input()?;
    let mask = nifti::read_mask(&args.mask).input()?;
    let maps = IvimMaps {
        s0: read_map(&args.maps, Parameter::S0, &mask, false)?,
        f: read_map(&args.maps, Parameter::F, &mask, true)?,
        d_star: read_map(&args.maps, Parameter::DStar, &mask, true)?,
        adc: read_map(&args.maps, Parameter::Adc, &mask, true)?,
        residual: read_map(&args.maps, Parameter::Residual, &mask, false)?,
        mask,
    };
    let row = SummaryRow::from_maps(&args.subject, group, source, strategy, &maps, cfg.bins).input()?;
    let mut rows: Vec<SummaryRow> = if args.out.exists() {
        read_csv(&args.out)?
    } else {
        Vec::new()
    };
    rows.push(row);
    nifti::write_atomic(&args.out, &csv_bytes(&rows)?).internal()
}

pub fn report(args: &ReportArgs) -> CliResult<()> {
    let rows: Vec<SummaryRow> = read_csv(&args.summaries)?;
    let r = cohort_report(&rows).input_with(|| args.summaries.display().to_string())?;
    ensure_dir(&args.out)?;
    nifti::write_atomic(&args.out.join("tests.csv"), &csv_bytes(&r.tests)?).internal()?;
    nifti::write_atomic(&args.out.join("cvs.csv"), &csv_bytes(&r.cvs)?).internal()?;
    nifti::write_atomic(&args.out.join("agreement.csv"), &csv_bytes(&r.agreement)?).internal()?;
    write_json(
        &args.out.join("report.json"),
        &json!({
            "config": {
                "summaries": args.summaries,
                "entropy_bins_note": "entropies are taken from the summary rows as given",
                "paired_test": "two-sided paired t-test, manual vs automatic, paired by subject",
                "group_test": "two-sided Mann-Whitney U, FGR vs Control; exact for n1 + n2 <= 12",
                "inter_subject_cv": "sample standard deviation over subject means / mean",
            },
            "rows": rows.len(),
            "files": ["tests.csv", "cvs.csv", "agreement.csv"],
        }),
    )
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ClassifyConfig {
    train: Option<PathBuf>,
    test: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct SubjectCsv {
    id: String,
    ga: String,
    group: String,
    tlv_ml: f64,
}

fn read_subjects(path: &Path) -> CliResult<Vec<SubjectRecord>> {
    let raw: Vec<SubjectCsv> = read_csv(path)?;
    raw.into_iter()
        .map(|r| {
            let ga = fgr::parse_ga(&r.ga)?;
            let group: Group = r.group.parse()?;
            SubjectRecord::new(r.id, ga, group, r.tlv_ml)
        })
        .collect::<Result<Vec<_>, _>>()
        .input_with(|| path.display().to_string())
}

#[derive(Serialize)]
struct Prediction {
    id: String,
    ga_weeks: f64,
    oe_tlv: f64,
    z_score: f64,
    predicted: Group,
    actual: Group,
}

pub fn classify(args: &ClassifyArgs) -> CliResult<()> {
    let mut cfg: ClassifyConfig = read_config(args.config.as_deref())?;
    if args.train.is_some() {
        cfg.train = args.train.clone();
    }
    if args.test.is_some() {
        cfg.test = args.test.clone();
    }
    let train_path = cfg
        .train
        .clone()
        .ok_or_else(|| input_error("no training set: pass --train or set it in --config"))?;
    let test_path = cfg
        .test
        .clone()
        .ok_or_else(|| input_error("no test set: pass --test or set it in --config"))?;
    let train = read_subjects(&train_path)?;
    let test = read_subjects(&test_path)?;
    let model = Classifier::train(&train).input_with(|| train_path.display().to_string())?;

    let predictions = test
        .iter()
        .map(|s| {
            let oe = s.oe_tlv()?;
            let z = model.reference.apply(oe);
            Ok(Prediction {
                id: s.id.clone(),
                ga_weeks: s.ga_weeks,
                oe_tlv: oe,
                z_score: z,
                predicted: fgr::classify(z, model.roc.youden_threshold, model.roc.polarity),
                actual: s.group,
            })
        })
        .collect::<Result<Vec<_>, ivimlab::Error>>()
        .input_with(|| test_path.display().to_string())?;
    let predicted: Vec<Group> = predictions.iter().map(|p| p.predicted).collect();
    let actual: Vec<Group> = predictions.iter().map(|p| p.actual).collect();
    let confusion = fgr::confusion(&predicted, &actual).input()?;

    let polarity_note = match model.roc.polarity {
        fgr::Polarity::Higher => "FGR is called when the Z-score is above the threshold",
        fgr::Polarity::Lower => {
            "FGR is called when the Z-score is below the threshold (smaller lungs than controls)"
        }
    };
    let report = json!({
        "config": cfg,
        "n_train": train.len(),
        "n_test": test.len(),
        "control_mean": model.reference.mean,
        "control_sd": model.reference.sd,
        "auc": model.roc.auc,
        "youden_threshold": model.roc.youden_threshold,
        "youden_j": model.roc.youden_j,
        "polarity": model.roc.polarity,
        "polarity_note": polarity_note,
        "confusion_matrix": {
            "tp": confusion.tp,
            "fp": confusion.fp,
            "tn": confusion.tn,
            "fn": confusion.fn_,
        },
        "accuracy": confusion.accuracy,
        "predictions": predictions,
        "roc": model.roc.points,
    });
    match &args.out {
        Some(path) => write_json(path, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report).internal()?);
            Ok(())
        }
    }
}
