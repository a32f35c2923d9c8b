//! FID of sampled images against the training phantoms at each checkpoint of
//! a short run.
//!
//! cargo run --release --example fid_curve -- [steps] [n_synth]

use synthrad::diffusion::{linear_schedule, train, TrainConfig};
use synthrad::imaging::make_phantom_set;
use synthrad::metrics::{fid_curve, fid_curve_csv, Embedder};
use synthrad::neural::Arch;

fn main() -> synthrad::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(1000);
    let n_synth: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);

    let images = make_phantom_set(400, 16, 3)?;
    let sched = linear_schedule(100, 1e-4, 0.04)?;
    let config = TrainConfig {
        max_steps: steps,
        checkpoint_interval: (steps / 4).max(1),
        lr: 1e-3,
        val_fraction: 0.0,
        ..TrainConfig::desk()
    };
    let dir = std::env::temp_dir().join("synthrad-example-fid");
    let _ = std::fs::remove_dir_all(&dir);
    let run = train(&images, &[], &config, Arch::default(), &sched, &dir)?;
    let points = fid_curve(&run.checkpoints, &images, n_synth, &Embedder::new(0), &sched, 9)?;
    print!("{}", fid_curve_csv(&points));
    Ok(())
}
