//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::bench::{load_dataset, run_benchmark, ThresholdMode};
use crate::configure::{
    configure_filter, configure_from_bar, default_bar_width, make_prototype_bar,
};
use crate::error::{Error, Result};
use crate::evaluate::{
    best_threshold_per_image, confusion, csv_row, metrics, select_dataset_threshold, threshold,
    threshold_sweep, MetricSet, CSV_HEADER,
};
use crate::imgio::{
    invert, load_image, load_image_with, load_mask, save_image, save_mask, ChannelPolicy,
};
use crate::model::{load_model, parse_radii, save_model, FilterParams};
use crate::respond::{normalize_response, rotation_tolerant_response, ResponseMap};

#[derive(Debug, Parser)]
#[command(
    name = "bcosfire",
    version,
    about = "Trainable B-COSFIRE line delineation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ParamArgs {
    /// Named parameter row: leaf, tiles, river, road, iostar
    #[arg(long)]
    preset: Option<String>,
    /// DoG outer standard deviation (pixels)
    #[arg(long)]
    sigma: Option<f64>,
    /// Circle radii as start:step:end (inclusive) or a comma list
    #[arg(long)]
    radii: Option<String>,
    #[arg(long)]
    sigma0: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// center-on (bright lines) or center-off (dark lines)
    #[arg(long)]
    polarity: Option<String>,
    /// Width of the training bar; defaults to 2 * sigma
    #[arg(long)]
    bar_width: Option<f64>,
}

impl ParamArgs {
    fn resolve(&self, n_rot: usize) -> Result<FilterParams> {
        let base = match &self.preset {
            Some(name) => Some(
                FilterParams::preset(name)
                    .ok_or_else(|| Error::Parameter(format!("unknown preset '{name}'")))?,
            ),
            None => None,
        };
        let missing =
            |flag: &str| Error::Parameter(format!("--{flag} is required without --preset"));
        let sigma = self
            .sigma
            .or(base.as_ref().map(|b| b.sigma))
            .ok_or_else(|| missing("sigma"))?;
        let radii = match &self.radii {
            Some(s) => parse_radii(s)?,
            None => base
                .as_ref()
                .map(|b| b.radii.clone())
                .ok_or_else(|| missing("radii"))?,
        };
        let sigma0 = self
            .sigma0
            .or(base.as_ref().map(|b| b.sigma0))
            .ok_or_else(|| missing("sigma0"))?;
        let alpha = self
            .alpha
            .or(base.as_ref().map(|b| b.alpha))
            .ok_or_else(|| missing("alpha"))?;
        let mut params = FilterParams::new(sigma, radii, sigma0, alpha);
        params.n_rot = n_rot;
        if let Some(p) = &self.polarity {
            params.polarity = p.parse()?;
        }
        params.validate()?;
        Ok(params)
    }

    fn bar_width(&self, params: &FilterParams) -> f64 {
        self.bar_width
            .unwrap_or_else(|| default_bar_width(params.sigma))
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic bar prototype image
    MakeBar {
        #[arg(long, default_value_t = 5.0)]
        width: f64,
        /// Bar direction in radians (pi/2 is vertical)
        #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2)]
        orientation: f64,
        #[arg(long, default_value_t = 101)]
        size: usize,
        /// Dark bar on a bright background
        #[arg(long)]
        dark: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Configure a filter from a bar prototype and write the model file
    Configure {
        #[command(flatten)]
        params: ParamArgs,
        /// Use this prototype image instead of a synthetic vertical bar
        #[arg(long)]
        prototype: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Compute the normalized rotation-tolerant response of an image
    Respond {
        #[arg(short, long)]
        model: PathBuf,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(long, default_value_t = 12)]
        nrot: usize,
        /// Invert the input (for dark lines with a center-on model)
        #[arg(long)]
        invert: bool,
        /// Channel used for colour input: green, red, blue, luma
        #[arg(long, default_value = "green")]
        channel: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Threshold a response image into a binary segmentation
    Segment {
        #[arg(short, long)]
        response: PathBuf,
        #[arg(long)]
        threshold: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Score responses against ground truth; prints CSV on stdout
    Evaluate {
        #[arg(short, long, required = true)]
        response: Vec<PathBuf>,
        #[arg(short, long, required = true)]
        gt: Vec<PathBuf>,
        /// Field-of-view masks, one per response when given
        #[arg(short = 'k', long)]
        mask: Vec<PathBuf>,
        #[arg(long, default_value = "per-image")]
        mode: String,
        /// Fixed threshold instead of MCC selection
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Run configure, respond, segment and evaluate over a dataset file
    Bench {
        /// Dataset file: `@name`, `@invert`, `@mode` headers and `<image> <gt> [mask]` lines
        dataset: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value_t = 12)]
        nrot: usize,
        /// Overrides the dataset's @mode
        #[arg(long)]
        mode: Option<String>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value = "green")]
        channel: String,
        /// Directory for response and segmentation images
        #[arg(long)]
        save_dir: Option<PathBuf>,
        /// CSV destination; stdout when absent
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn write_out(path: &PathBuf, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_response(path: &PathBuf) -> Result<ResponseMap> {
    Ok(ResponseMap {
        image: load_image(path)?,
        n_rot: 0,
        model_descr: String::new(),
    })
}

fn execute(cmd: Command, stdout: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::MakeBar {
            width,
            orientation,
            size,
            dark,
            output,
        } => {
            let bar = make_prototype_bar(width, orientation, size)?;
            save_image(&if dark { invert(&bar) } else { bar }, output)
        }
        Command::Configure {
            params,
            prototype,
            output,
        } => {
            let fp = params.resolve(12)?;
            let model = match prototype {
                Some(path) => configure_filter(&load_image(&path)?, &fp)?
                    .with_descr(format!("prototype {}", path.display())),
                None => configure_from_bar(&fp, params.bar_width(&fp))?,
            };
            save_model(&model, output)
        }
        Command::Respond {
            model,
            input,
            nrot,
            invert: inv,
            channel,
            output,
        } => {
            let model = load_model(model)?;
            let mut img = load_image_with(&input, channel.parse::<ChannelPolicy>()?)?;
            if inv {
                img = invert(&img);
            }
            let resp = normalize_response(&rotation_tolerant_response(&img, &model, nrot)?);
            save_image(&resp.image, output)
        }
        Command::Segment {
            response,
            threshold: t,
            output,
        } => {
            let resp = load_response(&response)?;
            save_mask(&threshold(&resp, t)?, output)
        }
        Command::Evaluate {
            response,
            gt,
            mask,
            mode,
            threshold: fixed,
        } => {
            if response.len() != gt.len() {
                return Err(Error::Parameter("need one --gt per --response".into()));
            }
            if !mask.is_empty() && mask.len() != response.len() {
                return Err(Error::Parameter("need one --mask per --response".into()));
            }
            let mode: ThresholdMode = mode.parse()?;
            let resps = response
                .iter()
                .map(load_response)
                .collect::<Result<Vec<_>>>()?;
            let gts = gt.iter().map(load_mask).collect::<Result<Vec<_>>>()?;
            let masks = mask.iter().map(load_mask).collect::<Result<Vec<_>>>()?;
            let mask_of = |i: usize| masks.get(i);

            let mut rows: Vec<(String, f64, MetricSet)> = Vec::new();
            match (fixed, mode) {
                (Some(t), _) => {
                    for (i, r) in resps.iter().enumerate() {
                        let c = confusion(&threshold(r, t)?, &gts[i], mask_of(i))?;
                        rows.push((response[i].display().to_string(), t, metrics(&c)?));
                    }
                }
                (None, ThresholdMode::PerImage) => {
                    for (i, r) in resps.iter().enumerate() {
                        let (t, m) = best_threshold_per_image(r, &gts[i], mask_of(i))?;
                        rows.push((response[i].display().to_string(), t, m));
                    }
                }
                (None, ThresholdMode::PerDataset) => {
                    let sweeps = resps
                        .iter()
                        .enumerate()
                        .map(|(i, r)| threshold_sweep(r, &gts[i], mask_of(i)))
                        .collect::<Result<Vec<_>>>()?;
                    let sel = select_dataset_threshold(&sweeps)?;
                    for (i, m) in sel.per_image.into_iter().enumerate() {
                        rows.push((response[i].display().to_string(), sel.threshold, m));
                    }
                }
            }
            let mut text = format!("{CSV_HEADER}\n");
            for (name, t, m) in &rows {
                text.push_str(&csv_row(name, *t, m));
                text.push('\n');
            }
            if rows.len() > 1 {
                let ms: Vec<MetricSet> = rows.iter().map(|r| r.2).collect();
                let mean_t = rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64;
                text.push_str(&csv_row("mean", mean_t, &MetricSet::mean(&ms)));
                text.push('\n');
            }
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))
        }
        Command::Bench {
            dataset,
            params,
            nrot,
            mode,
            workers,
            channel,
            save_dir,
            output,
        } => {
            let fp = params.resolve(nrot)?;
            let mut spec = load_dataset(&dataset, fp)?;
            if let Some(m) = mode {
                spec.threshold_mode = m.parse()?;
            }
            spec.channel = channel.parse()?;
            spec.bar_width = params.bar_width;
            spec.output_dir = save_dir;
            let report = run_benchmark(&spec, workers)?;
            for (image, msg) in &report.failures {
                eprintln!("warning: {image}: {msg}");
            }
            if !report.is_complete() {
                eprintln!(
                    "warning: report incomplete, {} of {} entries failed",
                    report.failures.len(),
                    spec.entries.len()
                );
            }
            let csv = report.to_csv(true);
            match output {
                Some(path) => write_out(&path, &csv),
                None => stdout
                    .write_all(csv.as_bytes())
                    .map_err(|e| Error::io("<stdout>", e)),
            }
        }
    }
}

/// Runs the CLI with the given arguments (including the program name),
/// writing command output to `stdout`. Returns the process exit code.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("bcosfire: {e}");
            1
        }
    }
}

pub fn cli_main() -> i32 {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    run_with(std::env::args_os(), &mut lock)
}
