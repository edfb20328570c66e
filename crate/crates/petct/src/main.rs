use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use petct::cohort::read_json;
use petct::config::{FoldSelect, ModelName, PipelineConfig, Profile, TrainOverrides};
use petct::pipeline::{
    cmd_evaluate, cmd_infer, cmd_phantom, cmd_preprocess, cmd_render, cmd_shapes, cmd_train, format_shape_report,
    InferModels, PhantomArgs, PipelineError, TrainTask,
};
use petct_core::train::FoldSplit;

#[derive(Parser)]
#[command(name = "petct", version, about = "Whole-body PET-CT lesion segmentation pipeline")]
struct Cli {
    /// Worker threads for subject- and fold-level parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic FDG/PSMA cohort.
    Phantom {
        #[arg(long, allow_hyphen_values = true)]
        fdg: usize,
        #[arg(long, allow_hyphen_values = true)]
        psma: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Probability that a subject has lesions.
        #[arg(long, default_value_t = 1.0)]
        lesion_rate: f64,
        /// Grid size as x,y,z.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        dims: Option<Vec<usize>>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Body-crop and clip a raw cohort.
    Preprocess {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        threshold: Option<f32>,
        #[arg(long, allow_hyphen_values = true)]
        clip_lo: Option<f32>,
        #[arg(long, allow_hyphen_values = true)]
        clip_hi: Option<f32>,
    },
    /// Train segmenters and/or the tracer classifier with cross-validation.
    Train {
        #[arg(value_enum)]
        task: TrainTask,
        #[command(flatten)]
        common: CommonArgs,
        #[arg(short, long)]
        input: Option<PathBuf>,
        #[arg(long)]
        work_dir: Option<PathBuf>,
        #[arg(long, value_enum)]
        model: Option<ModelName>,
        #[arg(long, value_enum)]
        profile: Option<Profile>,
        #[arg(long)]
        seed: Option<u64>,
        /// Fold index or "all".
        #[arg(long)]
        fold: Option<FoldSelect>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Write wall_ms as 0 so logs are byte-reproducible.
        #[arg(long)]
        no_wall_time: bool,
        /// Print the stage table of the configured models and exit.
        #[arg(long)]
        shapes_only: bool,
        /// With --shapes-only, print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Predict lesion masks on the original grid.
    Infer {
        #[arg(long, required_unless_present = "classifier", conflicts_with = "classifier")]
        checkpoint: Option<PathBuf>,
        #[arg(long, requires_all = ["fdg_checkpoint", "psma_checkpoint"])]
        classifier: Option<PathBuf>,
        #[arg(long)]
        fdg_checkpoint: Option<PathBuf>,
        #[arg(long)]
        psma_checkpoint: Option<PathBuf>,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Only these subjects (repeatable).
        #[arg(long)]
        id: Vec<String>,
        /// Restrict to one fold of this fold assignment file.
        #[arg(long, requires = "fold")]
        folds: Option<PathBuf>,
        #[arg(long, requires = "folds")]
        fold: Option<usize>,
        #[arg(long)]
        overlap: Option<f64>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Dice per subject, summarized per fold.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        folds: Option<PathBuf>,
        #[arg(long, default_value = "model")]
        name: String,
        /// Directory for report.json and report.txt.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Axial overlay of a mask on one subject as PPM.
    Render {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(long)]
        id: String,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        slice: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Pipeline configuration JSON; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl CommonArgs {
    fn load(&self) -> Result<PipelineConfig, PipelineError> {
        match &self.config {
            None => Ok(PipelineConfig::default()),
            Some(p) => read_json(p).map_err(|e| PipelineError::Config(e.to_string())),
        }
    }
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string(v).expect("serializable"));
}

fn fold_ids(path: &Path, fold: usize) -> Result<Vec<String>, PipelineError> {
    let split: FoldSplit = read_json(path).map_err(|e| PipelineError::Config(e.to_string()))?;
    split
        .check_fold(fold)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    Ok(split.members(fold).into_iter().map(String::from).collect())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let jobs = cli.jobs;
    match cli.cmd {
        Cmd::Phantom {
            fdg,
            psma,
            seed,
            lesion_rate,
            dims,
            output,
        } => {
            let mut args = PhantomArgs::new(fdg, psma, seed);
            args.lesion_rate = lesion_rate;
            if let Some(d) = dims {
                args.dims = [d[0], d[1], d[2]];
            }
            let m = cmd_phantom(&output, &args, jobs)?;
            println!("wrote {} subjects to {}", m.subjects.len(), output.display());
        }
        Cmd::Preprocess {
            input,
            output,
            common,
            threshold,
            clip_lo,
            clip_hi,
        } => {
            let mut p = common.load()?.preprocess;
            p.threshold = threshold.unwrap_or(p.threshold);
            p.clip_lo = clip_lo.unwrap_or(p.clip_lo);
            p.clip_hi = clip_hi.unwrap_or(p.clip_hi);
            let m = cmd_preprocess(&input, &output, &p, jobs)?;
            println!("preprocessed {} subjects into {}", m.subjects.len(), output.display());
        }
        Cmd::Train {
            task,
            common,
            input,
            work_dir,
            model,
            profile,
            seed,
            fold,
            epochs,
            iters,
            lr,
            no_wall_time,
            shapes_only,
            json,
        } => {
            let mut cfg = common.load()?;
            cfg.input_dir = input.unwrap_or(cfg.input_dir);
            cfg.work_dir = work_dir.unwrap_or(cfg.work_dir);
            cfg.model = model.unwrap_or(cfg.model);
            cfg.profile = profile.unwrap_or(cfg.profile);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.fold = fold.unwrap_or(cfg.fold);
            cfg.log_wall_time &= !no_wall_time;
            let flags = TrainOverrides {
                epochs,
                iters_per_epoch: iters,
                lr,
                ..Default::default()
            };
            for (target, used) in [
                (&mut cfg.segmenter, task != TrainTask::Classify),
                (&mut cfg.classifier, task != TrainTask::Segment),
            ] {
                if used {
                    target.epochs = flags.epochs.or(target.epochs);
                    target.iters_per_epoch = flags.iters_per_epoch.or(target.iters_per_epoch);
                    target.lr = flags.lr.or(target.lr);
                }
            }
            if shapes_only {
                for (name, spec, report) in cmd_shapes(&cfg, task)? {
                    if json {
                        print_json(&report);
                    } else {
                        print!("{}", format_shape_report(&name, &spec, &report));
                    }
                }
                return Ok(());
            }
            for s in cmd_train(&cfg, task, jobs)? {
                print_json(&s);
            }
        }
        Cmd::Infer {
            checkpoint,
            classifier,
            fdg_checkpoint,
            psma_checkpoint,
            input,
            output,
            id,
            folds,
            fold,
            overlap,
            common,
        } => {
            let cfg = common.load()?;
            let models = match (checkpoint, classifier, fdg_checkpoint, psma_checkpoint) {
                (Some(c), None, _, _) => InferModels::Single(c),
                (None, Some(classifier), Some(fdg), Some(psma)) => InferModels::Routed { classifier, fdg, psma },
                _ => {
                    return Err(PipelineError::Config(
                        "give --checkpoint or all of --classifier, --fdg-checkpoint, --psma-checkpoint".into(),
                    ))
                }
            };
            let mut ids = id;
            if let (Some(f), Some(k)) = (folds, fold) {
                ids.extend(fold_ids(&f, k)?);
            }
            let ids = (!ids.is_empty()).then_some(ids);
            let recs = cmd_infer(
                &models,
                &input,
                &output,
                ids.as_deref(),
                &cfg.preprocess,
                overlap.unwrap_or(cfg.overlap),
                jobs,
            )?;
            for r in &recs {
                print_json(r);
            }
        }
        Cmd::Evaluate {
            pred,
            truth,
            folds,
            name,
            output,
        } => {
            let out = cmd_evaluate(&pred, &truth, folds.as_deref(), &name, output.as_deref())?;
            print!("{}", out.report.to_table());
        }
        Cmd::Render {
            input,
            id,
            mask,
            slice,
            output,
        } => {
            let img = cmd_render(&input, &id, mask.as_deref(), &output, slice)?;
            println!("wrote {}x{} image to {}", img.width, img.height, output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
