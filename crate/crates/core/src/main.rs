use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use promogen::config::TrainConfig;
use promogen::curriculum::schedule_table;
use promogen::filter::{count_valid, sample_anchors, FilterParams};
use promogen::motion::{
    read_anchors_json, read_pmg, read_trajectory_csv, read_world_joints_csv, write_pmg, MotionSequence,
};
use promogen::pipeline::{
    evaluate_checkpoint, generate_synthetic, load_checkpoint, sample_motion, save_checkpoint, train_with_progress,
    trajectory_svg,
};

#[derive(Parser)]
#[command(name = "promogen", version, about = "Trajectory and sparse-anchor guided motion generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration document; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<TrainConfig> {
        let cfg = match &self.config {
            Some(p) => TrainConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
            None => TrainConfig::default(),
        };
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as numbered .pmg files.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory of .pmg files; a synthetic dataset is generated when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Training log (per-epoch records and per-iteration losses) as JSON.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Sample one motion from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV with header `frame,x,y,z`.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// JSON `{"positions": [...], "poses": [[...], ...]}`.
        #[arg(long)]
        anchors: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also draw the generated pelvis path with anchor markers.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Evaluate a checkpoint over the anchor-density protocol.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of .pmg files; a synthetic held-out set is generated when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw anchor placements from the filtering sampler.
    FmSample {
        #[arg(long)]
        n: usize,
        #[arg(long = "f-n")]
        f_n: usize,
        #[arg(long = "f-s")]
        f_s: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the curriculum stage table and, optionally, the noise schedule.
    ScheduleDump {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        noise: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert world joint positions (CSV, one frame per row) to .pmg.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 22)]
        joints: usize,
        #[arg(long, default_value_t = 20)]
        fps: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_dataset(dir: &Path) -> Result<Vec<MotionSequence>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pmg"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .pmg files in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| read_pmg(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                other => other?,
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, out, count, frames } => {
            let mut cfg = common.load()?;
            if let Some(s) = common.seed {
                cfg.data.seed = s;
            }
            cfg.data.count = count.unwrap_or(cfg.data.count);
            cfg.data.frames = frames.unwrap_or(cfg.data.frames);
            let set = generate_synthetic(&cfg.data)?;
            fs::create_dir_all(&out)?;
            for (i, m) in set.iter().enumerate() {
                write_pmg(m, &out.join(format!("{i:05}.pmg")))?;
            }
            eprintln!("wrote {} sequences to {}", set.len(), out.display());
        }
        Command::Train { common, data, out, log } => {
            let mut cfg = common.load()?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let dataset = match &data {
                Some(dir) => read_dataset(dir)?,
                None => generate_synthetic(&cfg.data)?,
            };
            let outcome = train_with_progress(&dataset, &cfg, &mut |r| {
                let stage = r.stage.map_or("-".to_string(), |s| s.to_string());
                let k_min = r.k_min.map_or("-".to_string(), |k| k.to_string());
                eprintln!(
                    "epoch {:>4} stage {stage} k_min {k_min} f_n [{}, {}] loss {:.5}",
                    r.epoch, r.f_n_min, r.f_n_max, r.mean_loss
                );
            })?;
            save_checkpoint(&outcome.checkpoint, &out)?;
            if let Some(p) = log {
                fs::write(&p, serde_json::to_string_pretty(&outcome.log)?)?;
            }
            eprintln!("saved {}", out.display());
        }
        Command::Sample { checkpoint, trajectory, anchors, frames, steps, seed, out, svg } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let trajectory = trajectory.as_deref().map(read_trajectory_csv).transpose()?;
            let anchors = anchors.as_deref().map(read_anchors_json).transpose()?;
            let mut sampler = ckpt.config.diffusion.sampler();
            sampler.steps = steps.unwrap_or(sampler.steps);
            let motion = sample_motion(&ckpt, trajectory.as_ref(), anchors.as_ref(), frames, sampler, seed)?;
            write_pmg(&motion, &out)?;
            if let Some(p) = svg {
                let marks = anchors.as_ref().map(|a| a.positions().to_vec()).unwrap_or_default();
                let path = promogen::motion::extract_trajectory(&motion);
                fs::write(&p, trajectory_svg(&path, &marks))?;
            }
            eprintln!("wrote {} frames to {}", motion.frames(), out.display());
        }
        Command::Eval { common, checkpoint, data, out } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let protocol = match &common.config {
                Some(_) => common.load()?.eval,
                None => ckpt.config.eval.clone(),
            };
            let seed = common.seed.unwrap_or(ckpt.config.seed);
            let dataset = match &data {
                Some(dir) => read_dataset(dir)?,
                None => {
                    let mut spec = ckpt.config.data.clone();
                    spec.seed = spec.seed.wrapping_add(1);
                    spec.count = protocol.items.unwrap_or(64);
                    generate_synthetic(&spec)?
                }
            };
            let report = evaluate_checkpoint(&ckpt, &dataset, &protocol, seed)?;
            emit(&serde_json::to_string_pretty(&report)?, out.as_deref())?;
        }
        Command::FmSample { n, f_n, f_s, count, seed, out } => {
            let params = FilterParams::new(n, f_n, f_s)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let draws = (0..count).map(|_| sample_anchors(&params, &mut rng)).collect::<promogen::Result<Vec<_>>>()?;
            let doc = json!({ "n": n, "f_n": f_n, "f_s": f_s, "count_valid": count_valid(&params).to_string(), "draws": draws });
            emit(&serde_json::to_string_pretty(&doc)?, out.as_deref())?;
        }
        Command::ScheduleDump { common, noise, out } => {
            let cfg = common.load()?;
            let mut doc = json!({ "curriculum": schedule_table(&cfg.curriculum)? });
            if noise {
                let s = cfg.diffusion.schedule()?;
                let rows: Vec<_> = (0..=s.steps())
                    .map(|t| json!({ "t": t, "alpha_bar": s.alpha_bar(t), "log_snr": if t == 0 { None } else { Some(s.log_snr(t)) } }))
                    .collect();
                doc["noise"] = json!(rows);
            }
            emit(&serde_json::to_string_pretty(&doc)?, out.as_deref())?;
        }
        Command::Convert { input, joints, fps, out } => {
            let world = read_world_joints_csv(&input, joints)?;
            let motion = MotionSequence::from_world_joints(&world, fps)?;
            write_pmg(&motion, &out)?;
            eprintln!("wrote {} frames to {}", motion.frames(), out.display());
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
