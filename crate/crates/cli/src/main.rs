//! `maskeval` command-line tool.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use maskeval_core::background::generate_survey;
use maskeval_core::config::Config;
use maskeval_core::harness::report::{self, read_replicates, rows_from_records, write_report, write_results};
use maskeval_core::harness::{build_report, learn, parse_methods, Experiment};
use maskeval_core::io::{read_models, read_survey, write_models, write_survey};
use maskeval_core::{Error, Result};

#[derive(Parser)]
#[command(name = "maskeval", version, about = "Masked vs unmasked gamma detector evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic background survey.
    GenSurvey {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn the background and CEW models from a survey.
    Learn {
        #[arg(long)]
        survey: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the Monte Carlo experiment and write result tables.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replicates per band.
        #[arg(long)]
        replicates: Option<usize>,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated subset of mBA,uBA,mWC,uWC.
        #[arg(long)]
        methods: Option<String>,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Also write H1 score maps of replicate 0 in each band to OUT/maps.
        #[arg(long)]
        export_maps: bool,
    },
    /// Recompute ROC, Pd and localization tables from replicates.csv.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.001)]
        fpr: f64,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSurvey { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let survey = generate_survey(&cfg.survey_config()?)?;
            write_survey(&out, &survey)?;
            eprintln!("wrote {} observations to {}", survey.len(), out.display());
        }
        Command::Learn { survey, out, config } => {
            let cfg = load_config(config.as_deref())?;
            let survey = read_survey(&survey)?;
            let models = learn(&survey, &cfg)?;
            write_models(&out, &models)?;
            eprintln!(
                "learned {} background locations from {} observations into {}",
                models.background.locations.len(),
                survey.len(),
                out.display()
            );
        }
        Command::Run {
            config,
            model,
            out,
            replicates,
            seed,
            methods,
            threads,
            export_maps,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(n) = replicates {
                cfg.replicates_per_band = n;
            }
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(list) = methods {
                cfg.methods = parse_methods(&list)?;
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            let models = read_models(&model)?;
            let started = Instant::now();
            let mut experiment = Experiment::new(&cfg, &models)?;
            if export_maps {
                // Maps are large; only the first replicate of each band keeps them.
                experiment.keep_maps = true;
                let dir = out.join("maps");
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for (b, &band) in cfg.bands.iter().enumerate() {
                    let rec = experiment.run_replicate(
                        maskeval_core::harness::replicate_seed(cfg.master_seed, b, 0),
                        band,
                    )?;
                    for (method, map) in &rec.maps {
                        map.write_csv(&dir.join(format!("map_{}-{}_{}.csv", band.0, band.1, method)))?;
                    }
                }
                experiment.keep_maps = false;
            }
            let records = experiment.run(cfg.threads)?;
            let rows = rows_from_records(&records);
            let report = build_report(&rows, cfg.fpr_target)?;
            write_results(&out, &rows, &report)?;
            eprintln!(
                "{} replicates in {:.1} s; results in {}",
                records.len(),
                started.elapsed().as_secs_f64(),
                out.display()
            );
            print!("{}", report.pd_table_text());
        }
        Command::Report { input, out, fpr } => {
            if !(fpr > 0.0 && fpr < 1.0) {
                return Err(Error::param("--fpr must lie in (0, 1)"));
            }
            let rows = read_replicates(&input.join(report::REPLICATES_CSV))?;
            let report = build_report(&rows, fpr)?;
            write_report(&out, &report)?;
            print!("{}", report.pd_table_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
