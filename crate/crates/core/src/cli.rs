//! Command-line front end. Every subcommand writes a `manifest.json` next to
//! its outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use crate::bench;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::eval::{confusion_metrics, time_run, ConfusionMatrix, Timing};
use crate::explain::{band_r2, cda, encode_all};
use crate::manifest::RunManifest;
use crate::model::io::{save, ModelFile};
use crate::model::{
    build, cross_validate, evaluate, prepare, train, Ffcdnn, ModelKind, Network, PreparedSample, StressClass,
};
use crate::s2::{parse_rsr, parse_spectra, simulate_records, write_series};
use crate::synth::{generate, read_dataset, write_dataset, SynthSample};

pub const SEED_ENV: &str = "FFCDNN_SEED";

#[derive(Debug, Parser)]
#[command(name = "ffcdnn", version, about = "Crop-stress classification with Fourier convolution capsule networks")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Key = value config file layered over the defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Print the resolved config and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate hyperspectra into Sentinel-2 bands B2..B8.
    SimulateBands {
        /// Spectra CSV: wavelength_nm, reflectance, optional row, col, date.
        #[arg(long)]
        spectra: PathBuf,
        /// Relative spectral response CSV: band, wavelength_nm, response.
        #[arg(long)]
        rsr: PathBuf,
        /// Output CSV; the manifest goes into its directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic labeled dataset.
    Gen {
        /// Output directory for patches.csv, labels.csv and config.txt.
        #[arg(long)]
        out: PathBuf,
        /// Sample count; defaults to the config's n_samples.
        #[arg(long)]
        n: Option<usize>,
        /// Also generate this many held-out samples; splits output into train/ and test/.
        #[arg(long)]
        holdout: Option<usize>,
    },
    /// Train one or more networks.
    Train {
        /// Dataset directory written by `gen`.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for models, histories and timings.
        #[arg(long)]
        out: PathBuf,
        /// Stratified k-fold cross validation instead of a single fit.
        #[arg(long)]
        cv: Option<usize>,
        /// Ablation variants to train, comma separated: base, ffc, full.
        #[arg(long, value_delimiter = ',')]
        ablation: Vec<ModelKind>,
        /// Also train a comparison network.
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
        /// Dataset scored after every epoch.
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Score a model on a dataset, or a confusion matrix directly.
    Eval {
        /// Model file written by `train`.
        #[arg(long, required_unless_present = "from_matrix", requires = "data")]
        model: Option<PathBuf>,
        /// Dataset directory to score.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Count matrix CSV, rows predicted and columns actual.
        #[arg(long, conflicts_with = "model")]
        from_matrix: Option<PathBuf>,
        /// Output directory for the report.
        #[arg(long)]
        out: PathBuf,
    },
    /// Discriminant projection and band R² of a trained model.
    Explain {
        /// Model file written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Labeled dataset directory with severities.
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Direct versus FFT circular convolution timings.
    Bench {
        /// Signal lengths to time.
        #[arg(long, value_delimiter = ',', default_value = "16,32,64,128,256,512,1024,2048,4096")]
        sizes: Vec<usize>,
        /// Timed repetitions per size; the median is reported.
        #[arg(long, default_value_t = 7)]
        reps: usize,
        /// Output directory for bench.csv and bench.json.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Cnn,
}

/// Resolves defaults, config file, `--set` pairs and the seed variable, in
/// that order of increasing precedence.
pub fn resolve_config(global: &GlobalArgs) -> Result<Config> {
    let mut c = match &global.config {
        Some(p) => Config::load(require(p)?)?,
        None => Config::default(),
    };
    for kv in &global.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        c.set(k.trim(), v.trim())?;
    }
    if let Ok(s) = std::env::var(SEED_ENV) {
        c.seed = s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("{SEED_ENV}='{s}' is not an unsigned integer")))?;
    }
    c.validate()?;
    Ok(c)
}

pub fn run(cli: Cli) -> Result<()> {
    let config = resolve_config(&cli.global)?;
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be positive".into()));
        }
        // Fails only when a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    if cli.global.print_config {
        print!("{}", config.to_text());
        return Ok(());
    }
    let args: Vec<String> = std::env::args().skip(1).collect();
    match cli.command {
        None => Err(Error::InvalidArgument("no subcommand given; see --help".into())),
        Some(Command::SimulateBands { spectra, rsr, out }) => simulate_bands(&config, args, &spectra, &rsr, &out),
        Some(Command::Gen { out, n, holdout }) => gen(&config, args, &out, n.unwrap_or(config.n_samples), holdout),
        Some(Command::Train {
            data,
            out,
            cv,
            ablation,
            baseline,
            val,
        }) => {
            let mut kinds = ablation;
            if baseline == Some(Baseline::Cnn) {
                kinds.push(ModelKind::Cnn);
            }
            if kinds.is_empty() {
                kinds.push(ModelKind::Full);
            }
            kinds.dedup();
            cmd_train(&config, args, &data, &out, &kinds, cv, val.as_deref())
        }
        Some(Command::Eval {
            model,
            data,
            from_matrix,
            out,
        }) => match (from_matrix, model, data) {
            (Some(m), _, _) => eval_matrix(&config, args, &m, &out),
            (None, Some(model), Some(data)) => eval_model(args, &model, &data, &out),
            _ => Err(Error::InvalidArgument("eval needs --from-matrix, or --model with --data".into())),
        },
        Some(Command::Explain { model, data, out }) => explain(args, &model, &data, &out),
        Some(Command::Bench { sizes, reps, out }) => cmd_bench(&config, args, &sizes, reps, &out),
    }
}

fn class_names() -> Vec<&'static str> {
    StressClass::ALL.iter().map(|c| c.name()).collect()
}

fn require(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::InvalidArgument(format!("{}: no such file or directory", path.display())))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_output(manifest: &mut RunManifest, path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    manifest.output(path)
}

fn write_json_output<T: Serialize>(manifest: &mut RunManifest, path: &Path, value: &T) -> Result<()> {
    write_json(path, value)?;
    manifest.output(path)
}

fn simulate_bands(config: &Config, args: Vec<String>, spectra: &Path, rsr: &Path, out: &Path) -> Result<()> {
    let mut m = RunManifest::start("simulate-bands", args, config);
    let s = parse_spectra(fs::File::open(require(spectra)?)?)?;
    let r = parse_rsr(fs::File::open(require(rsr)?)?)?;
    m.input(spectra)?;
    m.input(rsr)?;
    let records = simulate_records(&s, &r)?;
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    write_series(fs::File::create(out)?, &records)?;
    m.output(out)?;
    info!("{} records written to {}", records.len(), out.display());
    m.finish(dir)
}

fn gen(config: &Config, args: Vec<String>, out: &Path, n: usize, holdout: Option<usize>) -> Result<()> {
    let mut m = RunManifest::start("gen", args, config);
    let total = n + holdout.unwrap_or(0);
    let samples = generate(config, total)?;
    let parts: Vec<(PathBuf, &[SynthSample])> = match holdout {
        Some(_) => vec![(out.join("train"), &samples[..n]), (out.join("test"), &samples[n..])],
        None => vec![(out.to_path_buf(), &samples[..])],
    };
    for (dir, part) in parts {
        write_dataset(&dir, part)?;
        m.output(&dir.join("patches.csv"))?;
        m.output(&dir.join("labels.csv"))?;
        info!("{} samples written to {}", part.len(), dir.display());
    }
    write_output(&mut m, &out.join("config.txt"), &config.to_text())?;
    m.finish(out)
}

fn load_data(config: &Config, dir: &Path, manifest: &mut RunManifest) -> Result<(Vec<SynthSample>, Vec<PreparedSample>)> {
    require(&dir.join("labels.csv"))?;
    require(&dir.join("patches.csv"))?;
    let samples = read_dataset(dir, config.k, config.k1)?;
    if samples.is_empty() {
        return Err(Error::InsufficientData(format!("{} holds no samples", dir.display())));
    }
    manifest.input(&dir.join("patches.csv"))?;
    manifest.input(&dir.join("labels.csv"))?;
    let prepared = prepare(samples.iter().map(|s| (s.patch.clone(), s.label.index())).collect())?;
    Ok((samples, prepared))
}

fn cmd_train(
    config: &Config,
    args: Vec<String>,
    data: &Path,
    out: &Path,
    kinds: &[ModelKind],
    cv: Option<usize>,
    val: Option<&Path>,
) -> Result<()> {
    let mut m = RunManifest::start("train", args, config);
    fs::create_dir_all(out)?;
    let (_, train_set) = load_data(config, data, &mut m)?;
    let val_set = match val {
        Some(v) => Some(load_data(config, v, &mut m)?.1),
        None => None,
    };
    let mut timings: Vec<Timing> = Vec::new();
    for &kind in kinds {
        let name = kind.name();
        if let Some(folds) = cv {
            info!("{folds}-fold cross validation of {name}");
            let (report, t) = time_run(&format!("cv_{name}"), || cross_validate(kind, config, &train_set, folds));
            let report = report?;
            info!("{name}: mean validation OA {:.2}%", 100.0 * report.mean_val_oa);
            write_json_output(&mut m, &out.join(format!("cv_{name}.json")), &report)?;
            write_output(&mut m, &out.join(format!("cv_{name}_matrix.csv")), &report.pooled.to_csv(&class_names()))?;
            timings.push(t);
        } else {
            info!("training {name} on {} samples", train_set.len());
            let mut net = build(kind, config)?;
            let (history, t) = time_run(name, || train(net.as_mut(), &train_set, val_set.as_deref(), config));
            let history = history?;
            if let Some(oa) = history.train_oa.last() {
                info!("{name}: final training OA {:.2}%", 100.0 * oa);
            }
            let model_path = out.join(format!("model_{name}.bin"));
            save(net.as_ref(), config, &model_path)?;
            m.output(&model_path)?;
            write_json_output(&mut m, &out.join(format!("history_{name}.json")), &history)?;
            timings.push(t);
        }
    }
    if let Some(full) = timings.iter().find(|t| t.task.ends_with("full")).cloned() {
        timings = timings.into_iter().map(|t| t.relative_to(&full)).collect();
    }
    let timing_path = out.join("timing.json");
    write_json(&timing_path, &timings)?;
    m.volatile(&timing_path);
    m.finish(out)
}

#[derive(Serialize)]
struct EvalReport<'a> {
    classes: Vec<&'static str>,
    matrix: &'a ConfusionMatrix,
    metrics: crate::eval::MetricReport,
}

fn write_report(m: &mut RunManifest, out: &Path, matrix: &ConfusionMatrix) -> Result<()> {
    let metrics = confusion_metrics(matrix)?;
    let names = class_names();
    write_output(m, &out.join("report.txt"), &metrics.table(matrix, &names))?;
    write_output(m, &out.join("matrix.csv"), &matrix.to_csv(&names))?;
    write_json_output(
        m,
        &out.join("report.json"),
        &EvalReport {
            classes: names,
            matrix,
            metrics,
        },
    )
}

fn eval_matrix(config: &Config, args: Vec<String>, path: &Path, out: &Path) -> Result<()> {
    let mut m = RunManifest::start("eval", args, config);
    let matrix = ConfusionMatrix::load(require(path)?)?;
    m.input(path)?;
    fs::create_dir_all(out)?;
    write_report(&mut m, out, &matrix)?;
    m.finish(out)
}

fn load_model(path: &Path) -> Result<ModelFile> {
    ModelFile::from_bytes(&fs::read(require(path)?)?)
}

fn eval_model(args: Vec<String>, model: &Path, data: &Path, out: &Path) -> Result<()> {
    let file = load_model(model)?;
    let (net, config) = file.into_network()?;
    let mut m = RunManifest::start("eval", args, &config);
    m.input(model)?;
    let (_, samples) = load_data(&config, data, &mut m)?;
    let predictions = evaluate(net.as_ref(), &samples)?;
    let mut matrix = ConfusionMatrix::new(StressClass::ALL.len());
    let mut csv = String::from("sample_id,actual,predicted,score_healthy,score_yellow_rust,score_nitrogen_deficiency,margin,tie\n");
    for (i, (p, s)) in predictions.iter().zip(&samples).enumerate() {
        matrix.add(p.label.index(), s.label)?;
        let _ = writeln!(
            csv,
            "{i},{},{},{},{},{},{},{}",
            StressClass::ALL[s.label].name(),
            p.label.name(),
            p.lengths[0],
            p.lengths[1],
            p.lengths[2],
            p.margin,
            p.tie
        );
    }
    fs::create_dir_all(out)?;
    write_output(&mut m, &out.join("predictions.csv"), &csv)?;
    write_report(&mut m, out, &matrix)?;
    info!("{} samples scored", samples.len());
    m.finish(out)
}

#[derive(Serialize)]
struct R2Summary {
    class: StressClass,
    samples: usize,
    mean_in_band: f64,
    mean_out_of_band: f64,
    gap: f64,
}

fn explain(args: Vec<String>, model: &Path, data: &Path, out: &Path) -> Result<()> {
    let file = load_model(model)?;
    let kind = file.kind;
    let (params, state) = (file.params.clone(), file.state.clone());
    let (net, config) = file.into_network()?;
    let mut m = RunManifest::start("explain", args, &config);
    m.input(model)?;
    let (raw, samples) = load_data(&config, data, &mut m)?;
    fs::create_dir_all(out)?;

    let proj = cda(net.as_ref(), &samples)?;
    let mut csv = String::from("sample_id,label,cda1,cda2\n");
    for (i, (s, sc)) in samples.iter().zip(&proj.scores).enumerate() {
        let a = sc.first().copied().unwrap_or(0.0);
        let b = sc.get(1).copied().unwrap_or(0.0);
        let _ = writeln!(csv, "{i},{},{a},{b}", StressClass::ALL[s.label].name());
    }
    write_output(&mut m, &out.join("cda.csv"), &csv)?;
    let mut ratios = BTreeMap::new();
    ratios.insert("ratios", proj.ratios.clone());
    write_json_output(&mut m, &out.join("cda.json"), &ratios)?;

    if kind == ModelKind::Full {
        let mut full = Ffcdnn::new(&config)?;
        full.params_mut().copy_from_slice(&params);
        full.set_state(&state)?;
        let outputs = encode_all(&full, &samples)?;
        let labels: Vec<StressClass> = raw.iter().map(|s| s.label).collect();
        let severity: Vec<f64> = raw.iter().map(|s| s.severity).collect();
        let mut csv = String::from("class,component,branch,pixel,bin_lo,bin_hi,in_band,r2\n");
        let mut summary = Vec::new();
        for class in [StressClass::YellowRust, StressClass::NitrogenDeficiency] {
            let r = band_r2(&full, &outputs, &labels, &severity, class)?;
            for c in &r.components {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{}",
                    class.name(),
                    c.component,
                    c.branch,
                    c.pixel,
                    c.bins.0,
                    c.bins.1,
                    c.in_band,
                    c.r2
                );
            }
            info!("{class}: in-band R² {:.3}, out-of-band {:.3}", r.mean_in_band, r.mean_out_of_band);
            summary.push(R2Summary {
                class,
                samples: r.samples,
                mean_in_band: r.mean_in_band,
                mean_out_of_band: r.mean_out_of_band,
                gap: r.gap(),
            });
        }
        write_output(&mut m, &out.join("r2.csv"), &csv)?;
        write_json_output(&mut m, &out.join("r2_summary.json"), &summary)?;
    } else {
        info!("{} model: band R² needs the full network, skipped", kind.name());
    }
    m.finish(out)
}

fn cmd_bench(config: &Config, args: Vec<String>, sizes: &[usize], reps: usize, out: &Path) -> Result<()> {
    let mut m = RunManifest::start("bench", args, config);
    let report = bench::run(sizes, reps, config.seed)?;
    fs::create_dir_all(out)?;
    let csv = out.join("bench.csv");
    let json = out.join("bench.json");
    fs::write(&csv, report.to_csv())?;
    write_json(&json, &report)?;
    m.volatile(&csv);
    m.volatile(&json);
    match report.crossover {
        Some(n) => info!("FFT route wins from N = {n}"),
        None => info!("no crossover within the measured sizes"),
    }
    print!("{}", report.to_csv());
    m.finish(out)
}
