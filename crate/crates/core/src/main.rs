use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use drumdiff::denoiser::{checkpoint, FeatureSet, TrainHooks, TrainState};
use drumdiff::evalkit::{component_names, evaluate, Metric};
use drumdiff::events::{gm_pitch_table, midi, text, ComponentMap, NoteList, FRAME_RATE};
use drumdiff::fsutil::write_atomic;
use drumdiff::infer::{generate, inpaint, InferOptions, Transcription};
use drumdiff::loss::Objective;
use drumdiff::run::{self, plot, RunConfig};
use drumdiff::synth::{make_dataset, Dataset, Split};
use drumdiff::Error;

#[derive(Parser)]
#[command(name = "drumdiff", version, about = "Diffusion drum transcription on synthetic data")]
struct Cli {
    /// Run configuration (`key = value` with sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sampling steps.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["spec", "sem", "both"])]
    features: Option<String>,
    #[arg(long, global = true, value_parser = ["mse", "ph", "aph"])]
    loss: Option<String>,
    #[arg(long, global = true, default_value = "none", value_parser = ["none", "5", "3"])]
    remap: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build a synthetic corpus.
    Synth {
        #[arg(long)]
        clips: Option<usize>,
        /// Relative timbre perturbation per clip.
        #[arg(long)]
        jitter: Option<f64>,
    },
    /// Train a denoiser; writes checkpoint.bin, loss.csv and config.txt.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from `<out>/checkpoint.bin`.
        #[arg(long)]
        resume: bool,
        /// Checkpoint every N steps as well as at the end.
        #[arg(long, default_value_t = 0)]
        every: u64,
    },
    /// Transcribe corpus clips to MIDI, note text and SVG.
    Transcribe {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        data: PathBuf,
        /// One clip index; all clips of `--split` otherwise.
        #[arg(long)]
        clip: Option<usize>,
        /// train, valid, test or all.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Hide the features in `--mask START END` and transcribe the rest.
    Inpaint {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        clip: usize,
        #[arg(long, num_args = 2, value_names = ["START", "END"], required = true)]
        mask: Vec<f64>,
    },
    /// Sample a pattern with no audio.
    Generate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Score estimated note files against reference note files.
    Evaluate { reference: PathBuf, estimate: PathBuf },
    /// Onset F1 and wall-clock per sampling step count.
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,10,20")]
        steps_list: Vec<usize>,
    },
    /// Train and score every feature set and loss combination.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "spec,sem,both")]
        feature_sets: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "mse,ph,aph")]
        losses: Vec<String>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) | Error::Invalid(_) => 1,
                Error::NonFiniteLoss { .. } | Error::NonFiniteGrid { .. } | Error::Shape { .. } => 3,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Ok(n) = std::env::var("N2N_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: N2N_THREADS must be a positive integer, got `{n}`");
                return ExitCode::from(1);
            }
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Config file, then flag overrides.
fn run_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::toy(),
    };
    if let Some(f) = &cli.features {
        cfg.model.features = f.parse()?;
    }
    if let Some(l) = &cli.loss {
        cfg.train.objective = l.parse()?;
    }
    if let Some(s) = cli.steps {
        cfg.infer.steps = s;
        cfg.infer.fill_steps = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn remap_of(cli: &Cli) -> Result<Option<ComponentMap>> {
    Ok(ComponentMap::preset(&cli.remap)?)
}

fn infer_options(cli: &Cli, cfg: &RunConfig) -> InferOptions {
    InferOptions {
        seed: cli.seed.unwrap_or(cfg.infer.seed),
        ..cfg.infer
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn load_model(path: &Path) -> Result<TrainState> {
    checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

fn load_data(dir: &Path) -> Result<Dataset> {
    Dataset::load(dir).with_context(|| format!("loading corpus {}", dir.display()))
}

/// MIDI, note text and piano roll for one transcription.
fn emit(out: &Path, stem: &str, t: &Transcription, mask: Option<(f64, f64)>) -> Result<()> {
    let bytes = midi::export(&t.notes, &gm_pitch_table())?;
    write_atomic(&out.join(format!("{stem}.mid")), &bytes)?;
    write_text(&out.join(format!("{stem}.notes.txt")), &text::to_text(&t.notes))?;
    let duration = t.grid.n_frames() as f64 / FRAME_RATE;
    let svg = plot::piano_roll_svg(&t.notes, duration, &component_names(None), mask);
    write_text(&out.join(format!("{stem}.svg")), &svg)
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = run_config(&cli)?;
    let opts = infer_options(&cli, &cfg);
    match &cli.command {
        Command::Synth { clips, jitter } => {
            let mut data = cfg.data.clone();
            if let Some(n) = clips {
                data.n_clips = *n;
            }
            if let Some(j) = jitter {
                data.synth.timbre_jitter = *j;
            }
            if let Some(s) = cli.seed {
                data.seed = s;
            }
            let dir = cli.out.clone().unwrap_or(data.dir.clone());
            let t = Instant::now();
            let ds = make_dataset(data.n_clips, data.seed, &data.synth)?;
            ds.save(&dir)?;
            println!(
                "wrote {} clips to {} in {:.1}s (encoder checksum {:08x})",
                ds.clips.len(),
                dir.display(),
                t.elapsed().as_secs_f64(),
                ds.encoder_checksum
            );
        }
        Command::Train { data, epochs, resume, every } => {
            let mut cfg = cfg.clone();
            if let Some(d) = data {
                cfg.data.dir = d.clone();
            }
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            if let Some(s) = cli.seed {
                cfg.train.seed = s;
            }
            cfg.validate()?;
            let ds = run::load_or_make(&cfg.data)?;
            let clips = ds.split(Split::Train);
            let ckpt = cfg.out.join("checkpoint.bin");
            write_text(&cfg.out.join("config.txt"), &cfg.to_text())?;
            let log_path = cfg.out.join("loss.csv");
            let t = Instant::now();
            let mut report = |r: &drumdiff::denoiser::LossRecord| {
                if r.step.is_multiple_of(50) {
                    eprintln!("step {:>6}  alpha {:.3}  loss {:.5}  {:.0}s", r.step, r.alpha, r.loss, t.elapsed().as_secs_f64());
                }
            };
            let state = if *resume {
                let mut state = checkpoint::load_expecting(&ckpt, &cfg.model)?;
                let items: Vec<_> = clips.iter().map(|c| (&c.grid, &c.cond)).collect();
                let mut log = BufWriter::new(File::options().append(true).create(true).open(&log_path)?);
                drumdiff::denoiser::train(
                    &mut state,
                    &items,
                    TrainHooks {
                        checkpoint_path: Some(ckpt.clone()),
                        checkpoint_every: *every,
                        loss_log: Some(&mut log),
                        progress: Some(&mut report),
                        ..TrainHooks::default()
                    },
                )?;
                state
            } else {
                std::fs::create_dir_all(&cfg.out)?;
                let mut log = BufWriter::new(File::create(&log_path)?);
                run::train_new(
                    &cfg,
                    &clips,
                    TrainHooks {
                        checkpoint_path: Some(ckpt.clone()),
                        checkpoint_every: *every,
                        loss_log: Some(&mut log),
                        progress: Some(&mut report),
                        ..TrainHooks::default()
                    },
                )?
            };
            println!("trained {} steps in {:.1}s; checkpoint {}", state.step, t.elapsed().as_secs_f64(), ckpt.display());
        }
        Command::Transcribe { model, data, clip, split } => {
            let state = load_model(&model.checkpoint)?;
            let ds = load_data(data)?;
            let picked: Vec<_> = match clip {
                Some(i) => vec![ds.clips.get(*i).with_context(|| format!("no clip {i}"))?],
                None if split == "all" => ds.clips.iter().collect(),
                None => ds.split(split.parse::<Split>()?),
            };
            let conds: Vec<_> = picked.iter().map(|c| &c.cond).collect();
            let results = run::transcribe_all(&state.model, &conds, &opts)?;
            for (c, t) in picked.iter().zip(&results) {
                emit(&cfg.out, &format!("{:04}", c.index), t, None)?;
                println!("clip {:04}: {} notes, {} denoiser calls", c.index, t.notes.len(), t.calls);
            }
        }
        Command::Inpaint { model, data, clip, mask } => {
            let state = load_model(&model.checkpoint)?;
            let ds = load_data(data)?;
            let c = ds.clips.get(*clip).with_context(|| format!("no clip {clip}"))?;
            let (a, b) = (mask[0], mask[1]);
            let t = inpaint(&state.model, &c.cond, a, b, &opts)?;
            let stem = format!("{:04}.inpaint", c.index);
            emit(&cfg.out, &stem, &t, Some((a, b)))?;
            let kept = |n: &NoteList| n.window(0.0, a).len() + n.window(b, f64::INFINITY).len();
            println!(
                "clip {:04}: {} notes ({} outside the mask, {} inside), {} denoiser calls",
                c.index,
                t.notes.len(),
                kept(&t.notes),
                t.notes.window(a, b).len(),
                t.calls
            );
        }
        Command::Generate { model, frames } => {
            let state = load_model(&model.checkpoint)?;
            let n = frames.unwrap_or(state.model.config.n_frames);
            let t = generate(&state.model, n, &opts)?;
            emit(&cfg.out, &format!("generated.{}", opts.seed), &t, None)?;
            println!("generated {} notes, {} denoiser calls", t.notes.len(), t.calls);
        }
        Command::Evaluate { reference, estimate } => {
            let (ids, refs) = note_files(reference)?;
            let (est_ids, ests) = note_files(estimate)?;
            if ids != est_ids {
                return Err(Error::Data {
                    path: estimate.clone(),
                    reason: format!("{} reference clips but {} estimates with matching names", ids.len(), est_ids.len()),
                }
                .into());
            }
            let map = remap_of(&cli)?;
            let mut rep = evaluate(&refs, &ests, map.as_ref(), &cfg.eval)?;
            rep.clip_ids = ids;
            write_text(&cfg.out.join("scores_onset.csv"), &rep.csv(Metric::Onset))?;
            write_text(&cfg.out.join("scores_velocity.csv"), &rep.csv(Metric::Velocity))?;
            let summary = rep.summary();
            write_text(&cfg.out.join("summary.txt"), &summary)?;
            print!("{summary}");
        }
        Command::Sweep { model, data, steps_list } => {
            let state = load_model(&model.checkpoint)?;
            let ds = load_data(data)?;
            let rows = run::sweep(&state.model, &ds.split(Split::Test), steps_list, &opts, &cfg.eval)?;
            let csv = run::sweep_csv(&rows);
            write_text(&cfg.out.join("sweep.csv"), &csv)?;
            let steps: Vec<usize> = rows.iter().map(|r| r.steps).collect();
            let f1: Vec<f64> = rows.iter().map(|r| r.onset_f1).collect();
            let secs: Vec<f64> = rows.iter().map(|r| r.seconds).collect();
            write_text(&cfg.out.join("sweep.svg"), &plot::sweep_svg(&steps, &f1, &secs))?;
            print!("{csv}");
        }
        Command::Ablate { data, seeds, feature_sets, losses } => {
            let mut cfg = cfg.clone();
            if let Some(d) = data {
                cfg.data.dir = d.clone();
            }
            let ds = run::load_or_make(&cfg.data)?;
            let mut cells = Vec::new();
            for f in feature_sets {
                for l in losses {
                    cells.push((f.parse::<FeatureSet>()?, l.parse::<Objective>()?));
                }
            }
            if cells.is_empty() {
                bail!(Error::Config("empty ablation grid".into()));
            }
            write_text(&cfg.out.join("config.txt"), &cfg.to_text())?;
            let rows = run::ablate(&cfg, &ds.split(Split::Train), &ds.split(Split::Test), &cells, seeds, |r| {
                eprintln!(
                    "{:>4} {:>3} seed {}: onset F1 {:.4}, velocity F1 {:.4}",
                    r.features.name(),
                    r.objective.name(),
                    r.seed,
                    r.onset_f1,
                    r.velocity_f1
                )
            })?;
            let csv = run::ablation_csv(&rows);
            write_text(&cfg.out.join("ablation.csv"), &csv)?;
            print!("{csv}");
        }
    }
    Ok(())
}

/// `*.notes.txt` files under `dir` (searched one level into `clips/` too),
/// keyed by file name and sorted.
fn note_files(dir: &Path) -> Result<(Vec<String>, Vec<NoteList>)> {
    let mut found = Vec::new();
    for d in [dir.to_path_buf(), dir.join("clips")] {
        let Ok(entries) = std::fs::read_dir(&d) else { continue };
        for e in entries {
            let path = e?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("").to_string();
            if let Some(stem) = name.strip_suffix(".notes.txt") {
                found.push((stem.to_string(), path));
            }
        }
    }
    if found.is_empty() {
        return Err(Error::Data {
            path: dir.to_path_buf(),
            reason: "no *.notes.txt files".into(),
        }
        .into());
    }
    found.sort();
    let mut ids = Vec::new();
    let mut lists = Vec::new();
    for (id, path) in found {
        let body = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let notes = text::from_text(&body).map_err(|e| Error::Data {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        ids.push(id);
        lists.push(notes);
    }
    Ok((ids, lists))
}
