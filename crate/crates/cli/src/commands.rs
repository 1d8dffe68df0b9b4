use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use calibkit::data::{
    generate_synthetic, load_dataset, load_predictions, save_dataset, save_predictions, Dataset, PredictionKind,
    SyntheticSpec,
};
use calibkit::metatrain::{write_log_csv, Checkpoint, MetaTrainConfig, Mode, Trainer};
use calibkit::metrics::{bin_sweep, reliability, AceSpec, BinningScheme, PredictionSet, SweepRow};
use calibkit::posthoc::{fit_temperature, TemperatureFit};
use calibkit::report::{calibration_report, CalibrationReport, PercentTable, ReportOptions};
use calibkit::smoothcal::KernelSpec;
use calibkit::{Error, Result, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::args::{Cli, Command, Format, MetricArgs, SynthArgs, TrainArgs};
use crate::render;

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Metrics { input, metric } => {
            let opts = report_options(metric)?;
            let preds = load_predictions(input)?;
            let report = calibration_report(&preds, &opts)?;
            emit(cli, &render::report(&report, cli.format.unwrap_or(Format::Json))?)
        }
        Command::SweepBins { input, ms } => {
            if ms.is_empty() || ms.contains(&0) {
                return Err(Error::Config("bin counts must be a nonempty list of positive integers".into()));
            }
            let preds = load_predictions(input)?;
            let rows = bin_sweep(&preds, ms)?;
            emit(cli, &render::sweep(&rows, cli.format.unwrap_or(Format::Csv))?)
        }
        Command::Reliability { input, bins, scheme } => {
            let scheme = BinningScheme::new((*scheme).into(), *bins)?;
            let preds = load_predictions(input)?;
            emit(cli, &render::reliability(&reliability(&preds, scheme), cli.format.unwrap_or(Format::Csv))?)
        }
        Command::TempScale {
            input,
            fit_fraction,
            metric,
        } => temp_scale(cli, input, *fit_fraction, metric),
        Command::Train(args) => train(cli, args),
        Command::Synth { spec } => synth(cli, spec),
    }
}

/// Writes the primary output to `--output` or stdout.
fn emit(cli: &Cli, text: &str) -> Result<()> {
    match &cli.output {
        Some(path) => fs::write(path, text).map_err(|e| io_err(path, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| io_err(Path::new("<stdout>"), e))
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn report_options(m: &MetricArgs) -> Result<ReportOptions> {
    if !(0.0..=1.0).contains(&m.ace_threshold) {
        return Err(Error::Config(format!("ACE threshold must lie in [0, 1], got {}", m.ace_threshold)));
    }
    Ok(ReportOptions {
        scheme: BinningScheme::new(m.scheme.into(), m.bins)?,
        ace: AceSpec {
            ranges: m.ace_ranges.unwrap_or(m.bins),
            threshold: m.ace_threshold,
        },
        kernel: KernelSpec::gaussian(m.bandwidth)?,
        kde_grid: m.kde_grid,
        ..ReportOptions::default()
    })
}

#[derive(Serialize)]
struct TempScaleOutput {
    temperature: f64,
    fit: TemperatureFit,
    fit_rows: usize,
    eval_rows: usize,
    before: CalibrationReport,
    after: CalibrationReport,
}

fn temp_scale(cli: &Cli, input: &Path, fraction: f64, metric: &MetricArgs) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fit fraction must lie in (0, 1], got {fraction}")));
    }
    let opts = report_options(metric)?;
    let preds = load_predictions(input)?;
    let logits = preds.logits().ok_or_else(|| {
        Error::Input(format!(
            "{}: temperature scaling needs logits (header l0,...,l{{K-1}},label); this file holds probabilities",
            input.display()
        ))
    })?;
    let n = preds.n();
    let (fit_idx, eval_idx): (Vec<usize>, Vec<usize>) = if fraction == 1.0 {
        ((0..n).collect(), (0..n).collect())
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cli.seed));
        let cut = ((fraction * n as f64).round() as usize).clamp(1, n);
        if cut == n {
            return Err(Error::Config(format!("fit fraction {fraction} leaves no rows to report on")));
        }
        let (a, b) = order.split_at(cut);
        (a.to_vec(), b.to_vec())
    };
    let subset = |idx: &[usize]| -> (Tensor, Vec<usize>) {
        (logits.select_rows(idx), idx.iter().map(|&i| preds.labels()[i]).collect())
    };
    let (fit_logits, fit_labels) = subset(&fit_idx);
    let fit = fit_temperature(&fit_logits, &fit_labels)?;
    let (eval_logits, eval_labels) = subset(&eval_idx);
    let t = fit.temperature;
    let before = calibration_report(&PredictionSet::from_logits(eval_logits.clone(), eval_labels.clone())?, &opts)?;
    let after = calibration_report(&PredictionSet::from_logits(eval_logits.map(|v| v / t), eval_labels)?, &opts)?;
    let out = TempScaleOutput {
        temperature: t,
        fit,
        fit_rows: fit_idx.len(),
        eval_rows: eval_idx.len(),
        before,
        after,
    };
    let text = match cli.format.unwrap_or(Format::Json) {
        Format::Json => render::json(&out)?,
        Format::Table => format!(
            "temperature {t:.4}\n\nbefore\n{}\n\nafter\n{}\n",
            PercentTable(&out.before),
            PercentTable(&out.after)
        ),
        Format::Csv => format!(
            "stage,temperature,{}\nbefore,1,{}\nafter,{t},{}\n",
            render::REPORT_HEADER,
            render::report_csv_row(&out.before),
            render::report_csv_row(&out.after)
        ),
    };
    emit(cli, &text)
}

fn synth_data(spec: &SynthArgs, seed: u64) -> Result<(SyntheticSpec, calibkit::data::Synthetic)> {
    let spec = spec.spec(seed);
    let data = generate_synthetic(&spec)?;
    Ok((spec, data))
}

#[derive(Serialize)]
struct SynthStamp {
    spec: SyntheticSpec,
    class_counts: Vec<usize>,
    flipped: usize,
}

/// `<output>.spec.json` next to the data file.
fn stamp_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".spec.json");
    PathBuf::from(name)
}

fn synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let output = cli
        .output
        .as_ref()
        .ok_or_else(|| Error::Config("synth writes files; pass --output <path>".into()))?;
    let (spec, synthetic) = synth_data(args, cli.seed)?;
    let data = &synthetic.data;
    let mut class_counts = vec![0; data.classes];
    for &y in &data.labels {
        class_counts[y] += 1;
    }
    let flipped = data.labels.iter().zip(&synthetic.clean_labels).filter(|(a, b)| a != b).count();
    save_dataset(output, data)?;
    let stamp = stamp_path(output);
    let text = render::json(&SynthStamp {
        spec,
        class_counts,
        flipped,
    })?;
    fs::write(&stamp, text).map_err(|e| io_err(&stamp, e))?;
    log::info!("wrote {} rows to {} and {}", data.len(), output.display(), stamp.display());
    Ok(())
}

fn train_config(cli: &Cli, args: &TrainArgs) -> Result<MetaTrainConfig> {
    let mut c: MetaTrainConfig = match &args.config {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
            serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => MetaTrainConfig::default(),
    };
    c.seed = cli.seed;
    if let Some(m) = args.mode {
        c.mode = Mode::from(m);
    }
    macro_rules! set {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field.clone() {
                c.$field = v;
            })*
        };
    }
    set!(epochs, batch_size, meta_batch_size, lr, meta_lr, focal_gamma, bandwidth, hidden);
    c.validate()?;
    Ok(c)
}

fn train_data(cli: &Cli, args: &TrainArgs) -> Result<Dataset> {
    match &args.data {
        Some(path) => load_dataset(path, None),
        None => Ok(synth_data(&args.synth, cli.seed)?.1.data),
    }
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    mode: Mode,
    seed: u64,
    epochs: usize,
    best_epoch: Option<usize>,
    report: &'a CalibrationReport,
    sweep: &'a [SweepRow],
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let data = train_data(cli, args)?;
    let mut trainer = match &args.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.config.seed != cli.seed {
                return Err(Error::Config(format!(
                    "checkpoint was trained with --seed {}, got {}",
                    ckpt.config.seed, cli.seed
                )));
            }
            Trainer::resume(ckpt, &data)?
        }
        None => Trainer::new(train_config(cli, args)?, &data)?,
    };
    let write_log = |trainer: &Trainer| -> Result<()> {
        match &args.log {
            Some(path) => {
                let mut buf = Vec::new();
                write_log_csv(&mut buf, &trainer.checkpoint().log).map_err(|e| io_err(path, e))?;
                fs::write(path, buf).map_err(|e| io_err(path, e))
            }
            None => Ok(()),
        }
    };

    while !trainer.is_done() {
        if args.stop_after.is_some_and(|s| trainer.checkpoint().epoch >= s) {
            write_log(&trainer)?;
            log::info!("stopped after epoch {}", trainer.checkpoint().epoch);
            return Ok(());
        }
        if let Err(e) = trainer.run_epoch() {
            let last = trainer.checkpoint().log.last().map_or(0, |r| r.epoch);
            log::error!("training failed; last finite epoch {last}");
            write_log(&trainer)?;
            return Err(e);
        }
        if let Some(path) = &args.checkpoint {
            trainer.checkpoint().save(path)?;
        }
    }
    write_log(&trainer)?;

    let config = trainer.config().clone();
    let opts = ReportOptions::with_bins(BinningScheme::equal_width(config.eval_bins)?);
    let outcome = trainer.finish(&opts)?;
    if let Some(path) = &args.predictions {
        save_predictions(path, &outcome.test_predictions, PredictionKind::Logits)?;
    }
    let out = TrainOutput {
        mode: config.mode,
        seed: config.seed,
        epochs: config.epochs,
        best_epoch: outcome.checkpoint.best.as_ref().map(|b| b.epoch),
        report: &outcome.log.report,
        sweep: &outcome.evaluation.sweep,
    };
    let text = match cli.format.unwrap_or(Format::Json) {
        Format::Json => render::json(&out)?,
        Format::Table => format!("{}\n", PercentTable(out.report)),
        Format::Csv => render::report(out.report, Format::Csv)?,
    };
    emit(cli, &text)
}
