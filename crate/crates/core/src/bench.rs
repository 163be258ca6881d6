//! Dataset harness: configure once, then respond, threshold and score every
//! image of a dataset, reporting per-image and mean metrics with timing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::configure::{configure_from_bar, default_bar_width};
use crate::error::{Error, Result};
use crate::evaluate::{
    best_from_sweep, best_threshold_per_image, select_dataset_threshold, threshold,
    threshold_sweep, ConfusionCounts, MetricSet, CSV_HEADER, GRID_LEN,
};
use crate::imgio::{
    invert, load_image_with, load_mask, save_image, save_mask, BinaryMask, ChannelPolicy,
};
use crate::model::{CosfireModel, FilterParams};
use crate::respond::{normalize_response, rotation_tolerant_response, ResponseMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdMode {
    #[default]
    PerImage,
    PerDataset,
}

impl FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-image" => Ok(ThresholdMode::PerImage),
            "per-dataset" => Ok(ThresholdMode::PerDataset),
            _ => Err(Error::Parameter(format!("unknown threshold mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub image: PathBuf,
    pub gt: PathBuf,
    pub mask: Option<PathBuf>,
}

impl DatasetEntry {
    /// Label used in reports: the image path as written in the dataset file.
    pub fn label(&self) -> String {
        self.image.display().to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub name: String,
    pub entries: Vec<DatasetEntry>,
    pub params: FilterParams,
    pub threshold_mode: ThresholdMode,
    pub invert_input: bool,
    pub channel: ChannelPolicy,
    /// Width of the training bar; defaults to twice the DoG sigma.
    pub bar_width: Option<f64>,
    /// Relative entry paths are resolved against this directory.
    pub base_dir: PathBuf,
    /// When set, normalized responses and segmentations are written here.
    pub output_dir: Option<PathBuf>,
}

impl DatasetSpec {
    pub fn new(name: impl Into<String>, entries: Vec<DatasetEntry>, params: FilterParams) -> Self {
        Self {
            name: name.into(),
            entries,
            params,
            threshold_mode: ThresholdMode::PerImage,
            invert_input: false,
            channel: ChannelPolicy::default(),
            bar_width: None,
            base_dir: PathBuf::from("."),
            output_dir: None,
        }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "1" | "on" => Some(true),
        "false" | "no" | "0" | "off" => Some(false),
        _ => None,
    }
}

/// Parses a dataset file: `@name`, `@invert`, `@mode` header lines, `#`
/// comments, and one `<image> <gt> [mask]` entry per line.
pub fn parse_dataset(text: &str, params: FilterParams, base_dir: &Path) -> Result<DatasetSpec> {
    let mut spec = DatasetSpec::new("dataset", Vec::new(), params);
    spec.base_dir = base_dir.to_path_buf();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let fail = |msg: String| Error::Format(format!("dataset line {}: {msg}", i + 1));
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('@') {
            let (key, value) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
            let value = value.trim();
            match key {
                "name" => spec.name = value.to_string(),
                "invert" => {
                    spec.invert_input = parse_bool(value)
                        .ok_or_else(|| fail(format!("invalid @invert value '{value}'")))?
                }
                "mode" => {
                    spec.threshold_mode = value.parse().map_err(|e: Error| fail(e.to_string()))?
                }
                _ => return Err(fail(format!("unknown header '@{key}'"))),
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [img, gt] => spec.entries.push(DatasetEntry {
                image: img.into(),
                gt: gt.into(),
                mask: None,
            }),
            [img, gt, mask] => spec.entries.push(DatasetEntry {
                image: img.into(),
                gt: gt.into(),
                mask: Some(mask.into()),
            }),
            _ => {
                return Err(fail(format!(
                    "expected '<image> <gt> [mask]', got {} fields",
                    fields.len()
                )))
            }
        }
    }
    if spec.entries.is_empty() {
        return Err(Error::Format("dataset has no entries".into()));
    }
    Ok(spec)
}

pub fn load_dataset(path: impl AsRef<Path>, params: FilterParams) -> Result<DatasetSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    parse_dataset(&text, params, &base)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub image: String,
    pub threshold: f64,
    pub metrics: MetricSet,
    /// Wall-clock seconds of the response stage.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub name: String,
    pub rows: Vec<ImageResult>,
    pub mean: MetricSet,
    pub mean_threshold: f64,
    /// `(image, error message)` for entries that could not be processed.
    pub failures: Vec<(String, String)>,
}

impl BenchReport {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn total_seconds(&self) -> f64 {
        self.rows.iter().map(|r| r.seconds).sum()
    }

    /// Metrics CSV, one row per image plus a `mean` row. The trailing
    /// `seconds` column is included only when `timing` is set.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut s = String::from(CSV_HEADER);
        if timing {
            s.push_str(",seconds");
        }
        s.push('\n');
        let mut push = |label: &str, t: f64, m: &MetricSet, secs: f64| {
            s.push_str(&crate::evaluate::csv_row(label, t, m));
            if timing {
                let _ = write!(s, ",{secs:.3}");
            }
            s.push('\n');
        };
        for r in &self.rows {
            push(&r.image, r.threshold, &r.metrics, r.seconds);
        }
        push(
            "mean",
            self.mean_threshold,
            &self.mean,
            self.total_seconds(),
        );
        s
    }
}

struct Processed {
    label: String,
    sweep: [ConfusionCounts; GRID_LEN],
    seconds: f64,
}

fn process_entry(
    spec: &DatasetSpec,
    model: &CosfireModel,
    entry: &DatasetEntry,
) -> Result<Processed> {
    let mut img = load_image_with(spec.resolve(&entry.image), spec.channel)?;
    if spec.invert_input {
        img = invert(&img);
    }
    let gt = load_mask(spec.resolve(&entry.gt))?;
    let mask: Option<BinaryMask> = entry
        .mask
        .as_ref()
        .map(|m| load_mask(spec.resolve(m)))
        .transpose()?;

    let start = Instant::now();
    let resp = rotation_tolerant_response(&img, model, spec.params.n_rot)?;
    let seconds = start.elapsed().as_secs_f64();

    let resp = normalize_response(&resp);
    let sweep = threshold_sweep(&resp, &gt, mask.as_ref())?;
    if let Some(dir) = &spec.output_dir {
        write_outputs(dir, entry, &resp, &gt, mask.as_ref())?;
    }
    Ok(Processed {
        label: entry.label(),
        sweep,
        seconds,
    })
}

fn write_outputs(
    dir: &Path,
    entry: &DatasetEntry,
    resp: &ResponseMap,
    gt: &BinaryMask,
    mask: Option<&BinaryMask>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = entry
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    save_image(&resp.image, dir.join(format!("{stem}_response.pgm")))?;
    let (t, _) = best_threshold_per_image(resp, gt, mask)?;
    save_mask(
        &threshold(resp, t)?,
        dir.join(format!("{stem}_segmented.pgm")),
    )
}

/// Runs the whole protocol on `spec` using up to `workers` threads.
pub fn run_benchmark(spec: &DatasetSpec, workers: usize) -> Result<BenchReport> {
    if spec.entries.is_empty() {
        return Err(Error::Parameter("dataset has no entries".into()));
    }
    spec.params.validate()?;
    let bar_width = spec
        .bar_width
        .unwrap_or_else(|| default_bar_width(spec.params.sigma));
    let model = configure_from_bar(&spec.params, bar_width)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Bench(format!("thread pool: {e}")))?;
    let results: Vec<Result<Processed>> = pool.install(|| {
        spec.entries
            .par_iter()
            .map(|entry| process_entry(spec, &model, entry))
            .collect()
    });

    let mut done = Vec::new();
    let mut failures = Vec::new();
    for (entry, res) in spec.entries.iter().zip(results) {
        match res {
            Ok(p) => done.push(p),
            Err(e) => failures.push((entry.label(), e.to_string())),
        }
    }
    if done.is_empty() {
        return Err(Error::Bench(format!(
            "all {} entries failed",
            failures.len()
        )));
    }

    let rows: Vec<ImageResult> = match spec.threshold_mode {
        ThresholdMode::PerImage => done
            .iter()
            .map(|p| {
                let (t, m) = best_from_sweep(&p.sweep)?;
                Ok(ImageResult {
                    image: p.label.clone(),
                    threshold: t,
                    metrics: m,
                    seconds: p.seconds,
                })
            })
            .collect::<Result<_>>()?,
        ThresholdMode::PerDataset => {
            let sweeps: Vec<_> = done.iter().map(|p| p.sweep).collect();
            let sel = select_dataset_threshold(&sweeps)?;
            done.iter()
                .zip(sel.per_image)
                .map(|(p, m)| ImageResult {
                    image: p.label.clone(),
                    threshold: sel.threshold,
                    metrics: m,
                    seconds: p.seconds,
                })
                .collect()
        }
    };
    let metrics_only: Vec<MetricSet> = rows.iter().map(|r| r.metrics).collect();
    let mean_threshold = rows.iter().map(|r| r.threshold).sum::<f64>() / rows.len() as f64;
    Ok(BenchReport {
        name: spec.name.clone(),
        mean: MetricSet::mean(&metrics_only),
        mean_threshold,
        rows,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_headers_and_entries() {
        let text = "# IOSTAR subset\n@name iostar\n@invert true\n@mode per-dataset\n\
                    a.png a_gt.png a_mask.png\nb.png b_gt.png\n";
        let spec = parse_dataset(text, FilterParams::iostar(), Path::new("/data")).unwrap();
        assert_eq!(spec.name, "iostar");
        assert!(spec.invert_input);
        assert_eq!(spec.threshold_mode, ThresholdMode::PerDataset);
        assert_eq!(spec.entries.len(), 2);
        assert_eq!(spec.entries[0].mask, Some(PathBuf::from("a_mask.png")));
        assert_eq!(spec.entries[1].mask, None);
        assert_eq!(
            spec.resolve(&spec.entries[1].gt),
            PathBuf::from("/data/b_gt.png")
        );
    }

    #[test]
    fn parse_errors() {
        let p = FilterParams::leaf();
        assert!(parse_dataset("@mode sometimes\na b\n", p.clone(), Path::new(".")).is_err());
        assert!(parse_dataset("@color red\na b\n", p.clone(), Path::new(".")).is_err());
        assert!(parse_dataset("a b c d\n", p.clone(), Path::new(".")).is_err());
        assert!(parse_dataset("@name empty\n", p.clone(), Path::new(".")).is_err());
        assert!(parse_dataset("@invert maybe\na b\n", p, Path::new(".")).is_err());
    }

    #[test]
    fn all_missing_files_is_an_error() {
        let entries = vec![DatasetEntry {
            image: "nope.pgm".into(),
            gt: "nope_gt.pgm".into(),
            mask: None,
        }];
        let spec = DatasetSpec::new("missing", entries, FilterParams::tiles());
        assert!(matches!(run_benchmark(&spec, 1), Err(Error::Bench(_))));
    }
}
