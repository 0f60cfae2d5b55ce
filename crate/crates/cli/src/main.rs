use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use affectflow::affect::{detect, DetectConfig};
use affectflow::epoch::ScoredCohorts;
use affectflow::ingest::{parse_files, write_jsonl, Corpus, Gender};
use affectflow::nullmodel::NullOptions;
use affectflow::pipeline::{
    change_stage, durations, epoch_stage, fit_stage, gmm_stage, load_bundle, load_scored, null_stage, peaks_stage,
    rdd_entry, read_json, run_pipeline, write_json, ChangeFile, ChangeSettings, NullFile, NullSettings,
    PeaksFile, RddFile, RunConfig, SeriesFile, Stage,
};
use affectflow::report::{emit_table, Table};
use affectflow::sentiment::{load_lexicon, Lexicon};
use affectflow::synthgen::{generate_cohort, EpisodeSpec};
use affectflow::{Polarity, SCHEMA_VERSION};

#[derive(Parser)]
#[command(name = "affectflow", version, about = "Emotion dynamics around \"I feel ...\" statements")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse JSON Lines message files into a corpus artifact.
    Ingest {
        /// File path or glob pattern; may be repeated.
        #[arg(long, required = true)]
        input: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the parse report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Find affect labels and build the filtered cohorts.
    Detect {
        #[arg(long)]
        corpus: PathBuf,
        /// Pattern and filter configuration (TOML); bundled defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score every message of the cohorts.
    Score {
        /// Cohorts written by `detect`.
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        lexicon: LexiconArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Align scores on t0 and aggregate them into windows.
    Epoch {
        /// Scored cohorts written by `score`.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        window: i64,
        #[arg(long, default_value_t = 10)]
        smooth: usize,
        /// Restrict every cohort to one gender.
        #[arg(long, value_enum)]
        gender: Option<GenderArg>,
        /// Also emit female and male series next to the pooled ones.
        #[arg(long)]
        by_gender: bool,
        /// Keep per-window score arrays (needed by `null` for bootstraps).
        #[arg(long)]
        keep_values: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the stratified null and bootstrap bands.
    Null {
        /// Scored cohorts, or unscored cohorts together with a lexicon.
        #[arg(long)]
        cohorts: PathBuf,
        #[arg(long)]
        series: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        replicates: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Window size of the bootstrap bands.
        #[arg(long, default_value_t = 10)]
        ci_window: i64,
        /// Leave the analysis window out of the null pool.
        #[arg(long)]
        exclude_analysis_window: bool,
        #[command(flatten)]
        lexicon: LexiconArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Change-point detection with all three methods.
    DetectChange {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        null: PathBuf,
        #[arg(long = "H", default_value_t = affectflow::changepoint::DEFAULT_H)]
        h: f64,
        #[arg(long, default_value_t = affectflow::changepoint::DEFAULT_LAMBDA_MINUTES)]
        lambda: i64,
        #[arg(long, default_value_t = 3)]
        baseline_hours: i64,
        /// Run CUSUM on raw window means instead of the smoothed series.
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        out: PathBuf,
        /// Also write the duration summary.
        #[arg(long)]
        durations: Option<PathBuf>,
    },
    /// Fit the candidate curve families over the CUSUM span.
    Fit {
        #[arg(long)]
        series: PathBuf,
        /// Change-point results written by `detect-change`.
        #[arg(long)]
        spans: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-subject peak z-scores inside the CUSUM span.
    Peaks {
        #[arg(long)]
        cohorts: PathBuf,
        #[arg(long)]
        spans: PathBuf,
        #[arg(long, default_value_t = 1)]
        window: i64,
        #[command(flatten)]
        lexicon: LexiconArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gaussian mixtures over the peak values.
    Gmm {
        #[arg(long)]
        peaks: PathBuf,
        #[arg(long, default_value_t = 5)]
        kmax: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regression discontinuity on the male minus female series.
    Rdd {
        #[arg(long)]
        male: PathBuf,
        #[arg(long)]
        female: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus with a planted episode.
    Synth {
        /// Episode spec (TOML); the reference positive episode otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        subjects: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[command(flatten)]
        lexicon: LexiconArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of stages.
        #[arg(long, value_delimiter = ',')]
        stages: Vec<String>,
    },
    /// Print a result table as CSV.
    Table {
        /// Output directory of a run.
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, value_enum)]
        which: TableArg,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct LexiconArg {
    /// Lexicon file; the bundled lexicon otherwise.
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

impl LexiconArg {
    fn load(&self) -> affectflow::Result<Lexicon> {
        match &self.lexicon {
            Some(p) => load_lexicon(p),
            None => Ok(Lexicon::reference()),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GenderArg {
    Female,
    Male,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableArg {
    Fits,
    Durations,
    GenderSpans,
}

fn expand_inputs(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for p in patterns {
        let before = paths.len();
        for entry in glob::glob(p).with_context(|| format!("bad glob {p:?}"))? {
            paths.push(entry?);
        }
        if paths.len() == before {
            bail!("no files match {p:?}");
        }
    }
    paths.sort();
    paths.dedup();
    Ok(paths)
}

fn save<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(path, value)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { input, out, report } => {
            let paths = expand_inputs(&input)?;
            let (timelines, parse) = parse_files(&paths)?;
            eprintln!(
                "{} lines, {} valid, {} malformed, {} duplicates, {} subjects",
                parse.lines,
                parse.valid,
                parse.malformed,
                parse.duplicates,
                timelines.len()
            );
            save(&out, &Corpus::new(timelines))?;
            if let Some(r) = report {
                save(&r, &parse)?;
            }
        }
        Command::Detect { corpus, config, out, report } => {
            let corpus: Corpus = read_json(&corpus)?;
            let cfg = match config {
                Some(p) => DetectConfig::load(p)?,
                None => DetectConfig::default(),
            };
            let cohorts = detect(&corpus.timelines, &cfg);
            eprintln!(
                "{} positive and {} negative timelines",
                cohorts.report.positive_timelines, cohorts.report.negative_timelines
            );
            if let Some(r) = report {
                save(&r, &cohorts.report)?;
            }
            save(&out, &cohorts)?;
        }
        Command::Score { corpus, lexicon, out } => {
            let scored = load_scored(&corpus, || lexicon.load())?;
            save(&out, &scored)?;
        }
        Command::Epoch {
            input,
            window,
            smooth,
            gender,
            by_gender,
            keep_values,
            out,
        } => {
            let mut scored: ScoredCohorts = read_json(&input)?;
            if let Some(g) = gender {
                let g = match g {
                    GenderArg::Female => Gender::Female,
                    GenderArg::Male => Gender::Male,
                };
                scored = ScoredCohorts::new(scored.cohorts.iter().map(|c| c.restricted_to(g)).collect());
            }
            let mut series = epoch_stage(&scored, window, smooth, keep_values, by_gender)?;
            if let Some(g) = gender {
                let g = match g {
                    GenderArg::Female => Gender::Female,
                    GenderArg::Male => Gender::Male,
                };
                series.entries.iter_mut().for_each(|e| e.series.gender = Some(g));
            }
            save(&out, &series)?;
        }
        Command::Null {
            cohorts,
            series,
            replicates,
            seed,
            ci_window,
            exclude_analysis_window,
            lexicon,
            out,
        } => {
            let scored = load_scored(&cohorts, || lexicon.load())?;
            let series: SeriesFile = read_json(&series)?;
            let settings = NullSettings {
                replicates,
                seed,
                ci_window_minutes: ci_window,
                options: NullOptions { exclude_analysis_window },
            };
            save(&out, &null_stage(&scored, &series, &settings)?)?;
        }
        Command::DetectChange {
            series,
            null,
            h,
            lambda,
            baseline_hours,
            raw,
            out,
            durations: durations_out,
        } => {
            let series: SeriesFile = read_json(&series)?;
            let null: NullFile = read_json(&null)?;
            let settings = ChangeSettings {
                threshold: h,
                lambda_minutes: lambda,
                baseline_hours,
                raw,
            };
            let change = change_stage(&series, &null, &settings)?;
            for e in change.entries.iter().filter(|e| e.gender.is_none()) {
                match (e.durations.average_span, e.durations.average_duration) {
                    (Some((a, b)), Some(d)) => eprintln!("{}: average span [{a}, {b}], {d} minutes", e.polarity),
                    _ => eprintln!("{}: no significant change", e.polarity),
                }
            }
            if let Some(p) = durations_out {
                save(&p, &durations(&change))?;
            }
            save(&out, &change)?;
        }
        Command::Fit { series, spans, out } => {
            let series: SeriesFile = read_json(&series)?;
            let change: ChangeFile = read_json(&spans)?;
            let fits = fit_stage(&series, &change)?;
            for f in &fits.cohorts {
                if let Some(best) = f.ranked.first() {
                    eprintln!("{}: best model {} (sse {:.4e})", f.polarity, best.name(), best.sse());
                }
            }
            save(&out, &fits)?;
        }
        Command::Peaks {
            cohorts,
            spans,
            window,
            lexicon,
            out,
        } => {
            let scored = load_scored(&cohorts, || lexicon.load())?;
            let change: ChangeFile = read_json(&spans)?;
            save(&out, &peaks_stage(&scored, &change, window)?)?;
        }
        Command::Gmm { peaks, kmax, seed, out } => {
            let peaks: PeaksFile = read_json(&peaks)?;
            let gmm = gmm_stage(&peaks, kmax, seed)?;
            for c in &gmm.cohorts {
                eprintln!(
                    "{}: k = {} (aic {}, bic {}), {:.1}% contrary peaks",
                    c.polarity,
                    c.selection.k,
                    c.selection.k_aic,
                    c.selection.k_bic,
                    100.0 * c.contrary_fraction
                );
            }
            save(&out, &gmm)?;
        }
        Command::Rdd { male, female, out } => {
            let male: SeriesFile = read_json(&male)?;
            let female: SeriesFile = read_json(&female)?;
            let mut cohorts = Vec::new();
            let mut last_error = None;
            for p in [Polarity::Positive, Polarity::Negative] {
                let pick = |f: &SeriesFile| {
                    f.entries
                        .iter()
                        .find(|e| e.series.polarity == p && e.series.gender.is_some())
                        .or_else(|| f.entries.iter().find(|e| e.series.polarity == p))
                        .map(|e| e.series.clone())
                };
                if let (Some(m), Some(f)) = (pick(&male), pick(&female)) {
                    let entry = match rdd_entry(&m, &f) {
                        Ok(e) => e,
                        Err(e) => {
                            log::warn!("{p} cohort skipped: {e}");
                            last_error = Some(format!("{p} cohort: {e}"));
                            continue;
                        }
                    };
                    eprintln!(
                        "{p}: gap {:.4} (95% CI {:.4} to {:.4})",
                        entry.fit.gap.value, entry.fit.gap.ci.0, entry.fit.gap.ci.1
                    );
                    cohorts.push(entry);
                }
            }
            if cohorts.is_empty() {
                match last_error {
                    Some(e) => bail!(e),
                    None => bail!("no polarity present in both series files"),
                }
            }
            save(
                &out,
                &RddFile {
                    schema_version: SCHEMA_VERSION,
                    cohorts,
                    gender_spans: Vec::new(),
                },
            )?;
        }
        Command::Synth {
            spec,
            subjects,
            seed,
            lexicon,
            out,
        } => {
            let spec = match spec {
                Some(p) => EpisodeSpec::load(p)?,
                None => EpisodeSpec::reference_positive(),
            };
            let timelines = generate_cohort(&spec, subjects, seed, &lexicon.load()?)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            write_jsonl(BufWriter::new(file), timelines.iter().flat_map(|t| &t.messages))?;
            eprintln!("wrote {} subjects to {}", timelines.len(), out.display());
        }
        Command::Run { config, stages } => {
            let cfg = RunConfig::load(&config)?;
            let stages = stages.iter().map(|s| Stage::parse(s.trim())).collect::<affectflow::Result<Vec<_>>>()?;
            let (_, manifest) = run_pipeline(&cfg, &stages)?;
            for s in &manifest.stages {
                eprintln!("{:<8} {:?}", s.stage.name(), s.status);
            }
            if !manifest.complete {
                bail!("run incomplete");
            }
        }
        Command::Table { dir, which, out } => {
            let bundle = load_bundle(&dir)?;
            let table = match which {
                TableArg::Fits => Table::Fits,
                TableArg::Durations => Table::Durations,
                TableArg::GenderSpans => Table::GenderSpans,
            };
            let csv = emit_table(&bundle, table)?;
            match out {
                Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
                None => std::io::stdout().lock().write_all(csv.as_bytes())?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
