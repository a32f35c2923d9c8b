use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use super::{triage_apply, ImageCounts, PipelineConfig, RunLedger, StageLock, StageRecord, TriageVerdict};
use crate::diffusion::{sample_range, train_from_manifest, train_val_split, CheckpointRecord, SampleOptions};
use crate::error::{Error, Result};
use crate::imaging::{make_phantom_set, preprocess, save_png, DatasetManifest, ManifestEntry};
use crate::jsonl;
use crate::memaudit::{build_review_bundle, top_k_pairs, BundleRecord, INDEX_FILE};
use crate::metrics::{embed_set, every_nth, fid_curve, write_fid_curve, Embedder};
use crate::neural::checkpoint;
use crate::study::{StudyFiles, StudyService, StudySetup};
use crate::turing::{analyze_study, build_quartets, load_quartets, save_quartets, ResponseRecord};

pub const LEDGER_FILE: &str = "run_ledger.jsonl";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CURSOR_FILE: &str = "sample_cursor.json";
pub const QUARTETS_PUBLIC: &str = "quartets.jsonl";
pub const QUARTETS_KEY: &str = "quartets_key.jsonl";

/// Images drawn between wall-clock budget checks.
const SAMPLE_BATCH: usize = 32;

#[derive(Debug, Parser)]
#[command(name = "synthrad", version, about = "Synthetic radiograph pipeline", arg_required_else_help = true)]
pub struct Cli {
    /// Flat key=value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Config override, e.g. --set diffusion.lr=1e-3 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render procedural phantoms plus a manifest.
    PhantomGen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Resample, un-invert and orient every usable image of a manifest.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the seeded train/validation manifests next to the input manifest.
    Split {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train the denoiser, writing checkpoints to the checkpoint directory.
    Train {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Draw images from one checkpoint; resumable under a wall-clock budget.
    Sample(SampleArgs),
    /// FID of sampled images against a real manifest at every n-th checkpoint.
    FidCurve {
        #[arg(long)]
        real: PathBuf,
        #[arg(long, default_value_t = 1)]
        every: u32,
        #[arg(long, default_value_t = 500)]
        n_synth: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write embedding features of a manifest's usable images as CSV.
    Embed {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nearest real/synthetic pairs and a review bundle.
    Audit {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        synth: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build blinded quartets from one real and three synthetic manifests.
    Quartets {
        #[arg(long)]
        real: PathBuf,
        /// Exactly three synthetic manifests, one per checkpoint group.
        #[arg(long, num_args = 3, required = true)]
        synth: Vec<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the study HTTP API.
    Serve(ServeArgs),
    /// Analyze a complete response log.
    Analyze {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        quartets: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply manual accept/reject verdicts to a manifest.
    TriageApply {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        verdicts: PathBuf,
        /// Defaults to rewriting the input manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Checkpoint index from the training log.
    #[arg(long)]
    pub checkpoint: u32,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Stop cleanly after this many seconds; rerun to resume.
    #[arg(long)]
    pub budget_secs: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub quartets: PathBuf,
    #[arg(long)]
    pub key: PathBuf,
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long, num_args = 3, required = true)]
    pub synth: Vec<PathBuf>,
    /// Memorization review bundle directory, enabling triage sessions.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Directory for the response, session and verdict logs.
    #[arg(long)]
    pub study_dir: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: std::net::SocketAddr,
}

/// Parses `argv` (program name first) and runs one subcommand.
/// Returns 0 on success, 1 on runtime failure, 2 on usage errors.
pub fn cli_dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match run(&cfg, cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let overrides = cli
        .overrides
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::invalid(format!("--set expects key=value, got {s}")))
        })
        .collect::<Result<Vec<_>>>()?;
    PipelineConfig::load(cli.config.as_deref(), &overrides)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Runs `body` under the working-directory lock and appends a ledger record.
fn stage(
    cfg: &PipelineConfig,
    name: &str,
    seed: u64,
    inputs: &[&Path],
    outputs: &[&Path],
    body: impl FnOnce() -> Result<Option<ImageCounts>>,
) -> Result<()> {
    let _lock = StageLock::acquire(&cfg.output_dir, name)?;
    let started = now();
    let inputs_digest = super::digest_paths(inputs)?;
    let counts = body()?;
    let record = StageRecord {
        stage: name.to_string(),
        inputs_digest,
        outputs_digest: super::digest_paths(outputs)?,
        seed,
        started,
        finished: now(),
        counts,
    };
    RunLedger::new(cfg.output_dir.join(LEDGER_FILE)).append(&record)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(&tmp, text + "\n").map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn parent(path: &Path) -> &Path {
    path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

fn run(cfg: &PipelineConfig, command: Command) -> Result<()> {
    match command {
        Command::PhantomGen { n, size, seed, out } => {
            let seed = seed.unwrap_or(cfg.seed);
            let out = out.unwrap_or_else(|| cfg.data_dir.join("phantoms"));
            stage(cfg, "phantom-gen", seed, &[], &[&out], || {
                let images = make_phantom_set(n, size, seed)?;
                let manifest = write_images(&images, &out, seed)?;
                println!("wrote {} phantoms to {}", images.len(), out.display());
                Ok(Some(ImageCounts::of(&manifest)))
            })
        }
        Command::Preprocess { manifest, out } => {
            let out = out.unwrap_or_else(|| cfg.data_dir.join("processed"));
            stage(cfg, "preprocess", cfg.seed, &[parent(&manifest)], &[&out], || {
                let input = DatasetManifest::load(&manifest)?;
                let size = cfg.image_size;
                let images = input
                    .usable()
                    .map(|e| preprocess(&input.load_image(e)?, size))
                    .collect::<Result<Vec<_>>>()?;
                let flagged = images.iter().filter(|i| i.meta.needs_triage).count();
                let result = write_images(&images, &out, input.seed)?;
                println!(
                    "preprocessed {} images to {size}x{size} in {} ({flagged} need orientation review)",
                    images.len(),
                    out.display()
                );
                Ok(Some(ImageCounts::of(&result)))
            })
        }
        Command::Split { manifest } => {
            let dir = parent(&manifest).to_path_buf();
            let (train_path, val_path) = (dir.join("train_manifest.jsonl"), dir.join("val_manifest.jsonl"));
            let seed = cfg.train.seed;
            stage(cfg, "split", seed, &[&manifest], &[&train_path, &val_path], || {
                let m = DatasetManifest::load(&manifest)?;
                let usable: Vec<ManifestEntry> = m.usable().cloned().collect();
                let (train, val) = train_val_split(&usable, cfg.train.val_fraction, seed)?;
                jsonl::write(&train_path, &train)?;
                jsonl::write(&val_path, &val)?;
                println!("split {} images: {} train, {} validation", usable.len(), train.len(), val.len());
                Ok(None)
            })
        }
        Command::Train { manifest } => {
            let ckpt_dir = cfg.checkpoint_dir.clone();
            stage(cfg, "train", cfg.train.seed, &[parent(&manifest)], &[&ckpt_dir], || {
                let m = DatasetManifest::load(&manifest)?;
                let log = ckpt_dir.join("checkpoints.jsonl");
                if log.exists() {
                    return Err(Error::Conflict(format!(
                        "{} already holds a training log; use a fresh checkpoint directory",
                        ckpt_dir.display()
                    )));
                }
                let run = train_from_manifest(&m, &cfg.train, cfg.model_arch(), &cfg.schedule()?, &ckpt_dir)?;
                for r in &run.checkpoints {
                    println!(
                        "checkpoint {} step {} train_loss {:.5} val_loss {}",
                        r.checkpoint_index,
                        r.step,
                        r.train_loss,
                        r.val_loss.map_or("-".into(), |v| format!("{v:.5}"))
                    );
                }
                Ok(None)
            })
        }
        Command::Sample(args) => run_sample(cfg, args),
        Command::FidCurve { real, every, n_synth, out } => {
            let out = out.unwrap_or_else(|| cfg.output_dir.join("fid_curve.csv"));
            let log = cfg.checkpoint_dir.join("checkpoints.jsonl");
            stage(cfg, "fid-curve", cfg.seed, &[parent(&real), &log], &[&out], || {
                let records: Vec<CheckpointRecord> = jsonl::read(&log)?;
                let chosen = every_nth(&records, every);
                if chosen.is_empty() {
                    return Err(Error::invalid(format!("no checkpoint index is a multiple of {every}")));
                }
                let real_images = DatasetManifest::load(&real)?.load_usable_images()?;
                let embedder = Embedder::with_dim(cfg.embedder_seed, cfg.embedder_dim)?;
                let points = fid_curve(&chosen, &real_images, n_synth, &embedder, &cfg.schedule()?, cfg.seed)?;
                write_fid_curve(&out, &points)?;
                for p in &points {
                    println!("checkpoint {} step {} fid {:.4}", p.checkpoint_index, p.step, p.fid);
                }
                Ok(None)
            })
        }
        Command::Embed { manifest, out } => {
            stage(cfg, "embed", cfg.embedder_seed, &[parent(&manifest)], &[&out], || {
                let images = DatasetManifest::load(&manifest)?.load_usable_images()?;
                let features = embed_set(&images, &Embedder::with_dim(cfg.embedder_seed, cfg.embedder_dim)?)?;
                features.save(&out)?;
                println!("embedded {} images ({} dims) to {}", features.len(), features.dim(), out.display());
                Ok(None)
            })
        }
        Command::Audit { real, synth, k, out } => {
            let out = out.unwrap_or_else(|| cfg.output_dir.join("audit"));
            stage(cfg, "audit", cfg.embedder_seed, &[parent(&real), parent(&synth)], &[&out], || {
                let real_m = DatasetManifest::load(&real)?;
                let synth_m = DatasetManifest::load(&synth)?;
                let embedder = Embedder::with_dim(cfg.embedder_seed, cfg.embedder_dim)?;
                let rf = embed_set(&real_m.load_usable_images()?, &embedder)?;
                let sf = embed_set(&synth_m.load_usable_images()?, &embedder)?;
                let pairs = top_k_pairs(&rf, &sf, k)?;
                let records = build_review_bundle(&pairs, &real_m, &synth_m, &out)?;
                for r in &records {
                    println!("#{:<3} {:.6} {} {}", r.rank, r.cosine, r.real_id, r.synth_id);
                }
                Ok(None)
            })
        }
        Command::Quartets { real, synth, n, out } => {
            let out = out.unwrap_or_else(|| cfg.output_dir.join("study"));
            let (public, key) = (out.join(QUARTETS_PUBLIC), out.join(QUARTETS_KEY));
            let mut inputs: Vec<&Path> = vec![&real];
            inputs.extend(synth.iter().map(PathBuf::as_path));
            stage(cfg, "quartets", cfg.seed, &inputs, &[&public, &key], || {
                let ids = |p: &Path| -> Result<Vec<String>> {
                    Ok(DatasetManifest::load(p)?.usable().map(|e| e.source_id.clone()).collect())
                };
                let (a, b, c) = (ids(&synth[0])?, ids(&synth[1])?, ids(&synth[2])?);
                let quartets = build_quartets(&ids(&real)?, [&a, &b, &c], n.unwrap_or(cfg.n_quartets), cfg.seed)?;
                std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
                save_quartets(&quartets, &public, &key)?;
                println!("wrote {} quartets to {}", quartets.len(), public.display());
                Ok(None)
            })
        }
        Command::Serve(args) => run_serve(cfg, args),
        Command::Analyze { responses, quartets, key, out } => {
            let out = out.unwrap_or_else(|| cfg.output_dir.join("analysis"));
            let (report_path, csv_path) = (out.join("report.json"), out.join("ratings.csv"));
            stage(cfg, "analyze", cfg.seed, &[&responses, &quartets, &key], &[&report_path, &csv_path], || {
                let qs = load_quartets(&quartets, &key)?;
                let rs: Vec<ResponseRecord> = jsonl::read(&responses)?;
                let report = analyze_study(&rs, &qs)?;
                write_json(&report_path, &report)?;
                std::fs::write(&csv_path, report.ratings_csv()).map_err(|e| Error::io(&csv_path, e))?;
                println!("{}", serde_json::to_string_pretty(&report)?);
                Ok(None)
            })
        }
        Command::TriageApply { manifest, verdicts, out } => {
            let out = out.unwrap_or_else(|| manifest.clone());
            stage(cfg, "triage-apply", cfg.seed, &[&manifest, &verdicts], &[&out], || {
                let m = DatasetManifest::load(&manifest)?;
                let v: Vec<TriageVerdict> = jsonl::read(&verdicts)?;
                let updated = triage_apply(&m, &v)?;
                if parent(&out) != parent(&manifest) {
                    return Err(Error::invalid("--out must sit next to the input manifest so image paths resolve"));
                }
                updated.save(&out)?;
                let counts = ImageCounts::of(&updated);
                println!(
                    "generated {} accepted {} rejected {} (unreviewed {})",
                    counts.generated, counts.accepted, counts.rejected, counts.unreviewed
                );
                Ok(Some(counts))
            })
        }
    }
}

/// Saves each image as `<source_id>.png` in `dir` and writes the manifest.
fn write_images(images: &[crate::imaging::GrayImage], dir: &Path, seed: u64) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(images.len());
    for img in images {
        let name = format!("{}.png", img.meta.source_id);
        save_png(img, dir.join(&name))?;
        entries.push(ManifestEntry::from_image(img, name, seed));
    }
    let manifest = DatasetManifest::new(entries, seed, dir)?;
    manifest.save(dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Progress of an interruptible sampling job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCursor {
    pub checkpoint_path: PathBuf,
    pub checkpoint_index: u32,
    pub seed: u64,
    pub count: usize,
    pub next_index: usize,
}

fn run_sample(cfg: &PipelineConfig, args: SampleArgs) -> Result<()> {
    let seed = args.seed.unwrap_or(cfg.seed);
    let out = args
        .out
        .unwrap_or_else(|| cfg.output_dir.join(format!("samples/c{:04}", args.checkpoint)));
    let log = cfg.checkpoint_dir.join("checkpoints.jsonl");
    let record = jsonl::read::<CheckpointRecord>(&log)?
        .into_iter()
        .find(|r| r.checkpoint_index == args.checkpoint)
        .ok_or_else(|| Error::NotFound(format!("checkpoint {} in {}", args.checkpoint, log.display())))?;
    let budget = args.budget_secs.map(Duration::from_secs);
    let ckpt_path = record.path.clone();
    stage(cfg, "sample", seed, &[&ckpt_path], &[&out], || {
        let cursor_path = out.join(CURSOR_FILE);
        let manifest_path = out.join(MANIFEST_FILE);
        let fresh = SampleCursor {
            checkpoint_path: ckpt_path.clone(),
            checkpoint_index: args.checkpoint,
            seed,
            count: args.count,
            next_index: 0,
        };
        let mut cursor = if cursor_path.exists() {
            let text = std::fs::read_to_string(&cursor_path).map_err(|e| Error::io(&cursor_path, e))?;
            let c: SampleCursor = serde_json::from_str(&text)?;
            if (SampleCursor { next_index: 0, ..c.clone() }) != fresh {
                return Err(Error::Conflict(format!(
                    "{} belongs to a different sampling job",
                    cursor_path.display()
                )));
            }
            c
        } else {
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            if manifest_path.exists() {
                std::fs::remove_file(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
            }
            write_json(&cursor_path, &fresh)?;
            fresh
        };
        let (model, _) = checkpoint::load(&ckpt_path)?;
        let (w, h) = (cfg.image_size, cfg.image_size);
        let opts = SampleOptions {
            checkpoint: Some(args.checkpoint),
            ..SampleOptions::new(w, h, seed)
        };
        let sched = cfg.schedule()?;
        let start = Instant::now();
        while cursor.next_index < cursor.count {
            if budget.is_some_and(|b| start.elapsed() >= b) {
                println!(
                    "budget reached at {}/{}; rerun the same command to resume",
                    cursor.next_index, cursor.count
                );
                return Ok(None);
            }
            let end = (cursor.next_index + SAMPLE_BATCH).min(cursor.count);
            for img in sample_range(&model, &sched, &opts, cursor.next_index..end)? {
                let name = format!("{}.png", img.meta.source_id);
                save_png(&img, out.join(&name))?;
                jsonl::append(&manifest_path, &ManifestEntry::from_image(&img, name, seed))?;
            }
            cursor.next_index = end;
            write_json(&cursor_path, &cursor)?;
        }
        let manifest = DatasetManifest::load(&manifest_path)?;
        println!("sampled {} images into {}", manifest.entries.len(), out.display());
        Ok(Some(ImageCounts::of(&manifest)))
    })
}

fn run_serve(cfg: &PipelineConfig, args: ServeArgs) -> Result<()> {
    let quartets = load_quartets(&args.quartets, &args.key)?;
    let mut image_paths = HashMap::new();
    for path in std::iter::once(&args.real).chain(&args.synth) {
        let m = DatasetManifest::load(path)?;
        for e in m.usable() {
            image_paths.insert(e.source_id.clone(), m.resolve(e));
        }
    }
    let review = match &args.bundle {
        Some(dir) => Some((dir.clone(), jsonl::read::<BundleRecord>(dir.join(INDEX_FILE))?)),
        None => None,
    };
    let study_dir = args.study_dir.unwrap_or_else(|| cfg.output_dir.join("study"));
    let service = StudyService::open(
        StudySetup {
            seed: cfg.seed,
            quartets,
            image_paths,
            review,
        },
        StudyFiles::in_dir(&study_dir),
    )?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("tokio runtime", e))?;
    println!("serving study on http://{}", args.addr);
    runtime.block_on(crate::study::serve(service, args.addr))
}
