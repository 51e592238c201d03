//! Command-line front end. Exit codes: 0 success, 1 usage error, 2
//! validation, tolerance or runtime failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::adversarial::{checkpoint, history_csv, score_images, score_filter, train, HandmadeSource};
use crate::config::RunConfig;
use crate::dataset::{self, read_manifest, write_manifest, ManifestRecord, MANIFEST_NAME};
use crate::error::{Error, Result};
use crate::eval::{evaluate, preservation_sweep, Provenance, ReferenceDecoder, SweepStage};
use crate::gradcheck::run_gradcheck;
use crate::io;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

pub const THREADS_ENV: &str = "RENDERSYNTH_THREADS";
pub const CHECKPOINT_NAME: &str = "checkpoint.rsck";
pub const HISTORY_NAME: &str = "history.csv";

#[derive(Parser, Debug)]
#[command(name = "rendersynth", version, about = "Synthetic labeled tag images with learned augmentations")]
pub struct Cli {
    /// TOML run configuration; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render clean tags with random labels
    Render {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a labeled dataset for one variant
    Dataset {
        /// rendergan, hm_3d, hm_li, hm_bg or clean
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        resolution: Option<usize>,
        /// Trained generator, required by the learned variants
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also write PNG previews
        #[arg(long)]
        png: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference checks of every gradient
    Gradcheck {
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Negate the analytic gradient of one case (fault injection)
        #[arg(long)]
        sign_flip: Option<String>,
        /// Write the report here as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adversarial training against the handmade pipeline
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Small fast run
        #[arg(long)]
        smoke: bool,
        /// Continue from this checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train reference decoders and report their MHD on a test set
    Eval {
        /// Training dataset directory or manifest (repeatable)
        #[arg(long = "train", required = true)]
        train: Vec<PathBuf>,
        #[arg(long)]
        test: PathBuf,
        /// Write the report here as CSV
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Label-preservation sweep with the decode oracle
    Sweep {
        /// none, blur, lighting, background, detail, full or all
        #[arg(long, default_value = "all")]
        stage: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the report here as CSV
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Drop the samples the discriminator scores lowest
    Filter {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        quantile: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return EXIT_USAGE;
    }
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn execute(cli: Cli) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Render {
            n,
            seed,
            resolution,
            out,
        } => {
            let r = &mut cfg.render;
            r.n = n.unwrap_or(r.n);
            r.seed = seed.unwrap_or(r.seed);
            r.resolution = resolution.unwrap_or(r.resolution);
            let d = dataset::DatasetConfig {
                variant: Provenance::Clean,
                n: r.n,
                seed: r.seed,
                resolution: r.resolution,
                png: true,
                ..cfg.dataset
            };
            let samples = dataset::generate(&d, None)?;
            let manifest = dataset::write_samples(&out, &samples, d.variant, true)?;
            println!("wrote {} renders to {}", samples.len(), manifest.display());
            Ok(EXIT_OK)
        }
        Command::Dataset {
            variant,
            n,
            seed,
            resolution,
            checkpoint: ckpt,
            png,
            out,
        } => {
            let d = &mut cfg.dataset;
            if let Some(v) = variant {
                d.variant = v.parse()?;
            }
            d.n = n.unwrap_or(d.n);
            d.seed = seed.unwrap_or(d.seed);
            d.resolution = resolution.unwrap_or(d.resolution);
            d.png |= png;
            let generator = match (&ckpt, d.needs_generator()) {
                (Some(p), true) => Some(checkpoint::load(p)?.state.generator),
                (None, true) => {
                    return Err(Error::Config(format!(
                        "variant {} needs --checkpoint",
                        d.variant
                    )))
                }
                (_, false) => None,
            };
            let samples = dataset::generate(d, generator.as_ref())?;
            let manifest = dataset::write_samples(&out, &samples, d.variant, d.png)?;
            println!("wrote {} {} samples to {}", samples.len(), d.variant, manifest.display());
            Ok(EXIT_OK)
        }
        Command::Gradcheck {
            seeds,
            seed,
            sign_flip,
            out,
        } => {
            let g = &mut cfg.gradcheck;
            g.seeds = seeds.unwrap_or(g.seeds);
            g.seed = seed.unwrap_or(g.seed);
            if sign_flip.is_some() {
                g.sign_flip = sign_flip;
            }
            let report = run_gradcheck(g)?;
            print!("{}", report.to_text());
            if let Some(p) = out {
                let json = serde_json::to_string_pretty(&report).map_err(|e| Error::format(&p, e.to_string()))?;
                write_text(&p, &json)?;
            }
            Ok(if report.passed() { EXIT_OK } else { EXIT_FAILURE })
        }
        Command::Train {
            epochs,
            seed,
            smoke,
            resume,
            out,
        } => {
            let (mut tc, state) = match resume {
                Some(p) => {
                    let ck = checkpoint::load(&p)?;
                    (ck.config, Some(ck.state))
                }
                None => (cfg.train, None),
            };
            if smoke {
                tc.epochs = 2;
                tc.steps_per_epoch = 5;
                tc.batch_size = 8;
                tc.flip_samples = 8;
            }
            tc.epochs = epochs.unwrap_or(tc.epochs);
            if state.is_none() {
                tc.seed = seed.unwrap_or(tc.seed);
            } else if seed.is_some() {
                return Err(Error::Config("--seed cannot change a resumed run".into()));
            }
            create_dir(&out)?;
            let source = HandmadeSource::new(tc.resolution, &tc.stages);
            println!("{}", crate::adversarial::EpochRecord::CSV_HEADER);
            let state = train(&tc, &source, state, |r| println!("{}", r.csv_row()))?;
            checkpoint::save(&out.join(CHECKPOINT_NAME), &tc, &state)?;
            write_text(&out.join(HISTORY_NAME), &history_csv(&state.history))?;
            println!("step {} epoch {}; wrote {}", state.step, state.epoch, out.display());
            Ok(EXIT_OK)
        }
        Command::Eval { train, test, out } => {
            let test_set = dataset::load_dataset(&test)?;
            let mut text = String::from("train,provenance,samples,train_mhd,test_mhd\n");
            println!("{:<40} {:<10} {:>8} {:>10} {:>10}", "train", "provenance", "samples", "train MHD", "test MHD");
            for path in &train {
                let data = dataset::load_dataset(path)?;
                if data.resolution() != test_set.resolution() {
                    return Err(Error::dims(
                        (test_set.resolution(), test_set.resolution()),
                        (data.resolution(), data.resolution()),
                    ));
                }
                let dec = ReferenceDecoder::train(&data, cfg.eval.decoder.clone(), cfg.dataset.geometry.clone())?;
                let train_mhd = *dec.train_history.last().expect("history has the initial entry");
                let test_mhd = evaluate(&dec, &test_set)?;
                let name = path.display().to_string();
                println!(
                    "{name:<40} {:<10} {:>8} {train_mhd:>10.4} {test_mhd:>10.4}",
                    data.provenance.name(),
                    data.len()
                );
                let _ = writeln!(text, "{name},{},{},{train_mhd},{test_mhd}", data.provenance, data.len());
            }
            if let Some(p) = out {
                write_text(&p, &text)?;
            }
            Ok(EXIT_OK)
        }
        Command::Sweep { stage, n, seed, out } => {
            let stages: Vec<SweepStage> = if stage == "all" {
                SweepStage::ALL.to_vec()
            } else {
                vec![stage.parse()?]
            };
            let mut csv = String::new();
            for s in stages {
                let report = preservation_sweep(s, n, seed, &cfg.eval.sweep)?;
                print!("{}", report.to_text());
                let body = report.to_csv();
                if csv.is_empty() {
                    csv.push_str(&body);
                } else {
                    csv.extend(body.lines().skip(1).map(|l| format!("{l}\n")));
                }
            }
            if let Some(p) = out {
                write_text(&p, &csv)?;
            }
            Ok(EXIT_OK)
        }
        Command::Filter {
            dataset: data_dir,
            checkpoint: ckpt,
            quantile,
            out,
        } => {
            let q = quantile.unwrap_or(cfg.filter.quantile);
            let manifest = if data_dir.is_dir() { data_dir.join(MANIFEST_NAME) } else { data_dir.clone() };
            let root = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
            let records = read_manifest(&manifest)?;
            let d = checkpoint::load(&ckpt)?.state.discriminator;
            let images = records
                .iter()
                .map(|r| io::read_image(&root.join(&r.path)))
                .collect::<Result<Vec<_>>>()?;
            let scores = score_images(&d, &images)?;
            let (kept, dropped) = score_filter(&scores, q)?;
            create_dir(&out)?;
            let mut kept_records = Vec::with_capacity(kept.len());
            for &i in &kept {
                let r = &records[i];
                copy_into(&root, &out, &r.path)?;
                if let Some(png) = &r.png {
                    copy_into(&root, &out, png)?;
                }
                kept_records.push(r.clone());
            }
            write_manifest(&out.join(MANIFEST_NAME), &kept_records)?;
            let dropped_records: Vec<ManifestRecord> = dropped
                .iter()
                .map(|&i| ManifestRecord {
                    path: root.join(&records[i].path).display().to_string(),
                    png: records[i].png.as_ref().map(|p| root.join(p).display().to_string()),
                    ..records[i].clone()
                })
                .collect();
            write_manifest(&out.join("dropped.jsonl"), &dropped_records)?;
            let mut csv = String::from("index,path,score,kept\n");
            for (i, (r, s)) in records.iter().zip(&scores).enumerate() {
                let _ = writeln!(csv, "{i},{},{s},{}", r.path, kept.binary_search(&i).is_ok());
            }
            write_text(&out.join("scores.csv"), &csv)?;
            println!("kept {} of {}; dropped {}", kept.len(), records.len(), dropped.len());
            Ok(EXIT_OK)
        }
    }
}

fn copy_into(from: &Path, to: &Path, rel: &str) -> Result<()> {
    let src = from.join(rel);
    let dst = to.join(rel);
    if let Some(parent) = dst.parent() {
        create_dir(parent)?;
    }
    fs::copy(&src, &dst).map(|_| ()).map_err(|e| Error::io(&src, e))
}
