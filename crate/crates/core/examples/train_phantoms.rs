//! Trains the denoiser on procedural phantoms and prints the checkpoint log.
//!
//! cargo run --release --example train_phantoms -- [steps] [out_dir]

use synthrad::diffusion::{linear_schedule, train_val_split, TrainConfig};
use synthrad::imaging::{make_phantom_set, ManifestEntry};
use synthrad::neural::Arch;

fn main() -> synthrad::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);
    let out = args.next().unwrap_or_else(|| "target/example-train".into());

    let images = make_phantom_set(200, 16, 0)?;
    let entries: Vec<ManifestEntry> = images
        .iter()
        .map(|i| ManifestEntry::from_image(i, format!("{}.png", i.meta.source_id), 0))
        .collect();
    let (train_e, val_e) = train_val_split(&entries, 0.15, 0)?;
    let pick = |es: &[ManifestEntry]| {
        es.iter()
            .map(|e| images.iter().find(|i| i.meta.source_id == e.source_id).unwrap().clone())
            .collect::<Vec<_>>()
    };
    let config = TrainConfig {
        max_steps: steps,
        checkpoint_interval: (steps / 5).max(1),
        lr: 1e-3,
        ..TrainConfig::desk()
    };
    let sched = linear_schedule(200, 1e-4, 0.02)?;
    let start = std::time::Instant::now();
    let run = synthrad::diffusion::train(&pick(&train_e), &pick(&val_e), &config, Arch::default(), &sched, out.as_ref())?;
    for r in &run.checkpoints {
        println!(
            "checkpoint {:>3}  step {:>6}  train {:.4}  val {}",
            r.checkpoint_index,
            r.step,
            r.train_loss,
            r.val_loss.map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
    println!("{} steps in {:.1}s", steps, start.elapsed().as_secs_f64());
    Ok(())
}
