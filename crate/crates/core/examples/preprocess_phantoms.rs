//! Renders phantoms, corrupts a few (negative polarity, mirrored, odd size),
//! and runs them through preprocessing. Inverted images declare their
//! polarity; the last one carries no flag, so the heuristic decides, and
//! misreads the bright-centred phantom as a negative. That is why an explicit
//! flag always takes precedence.
//!
//! cargo run --release --example preprocess_phantoms -- [out_dir]

use synthrad::imaging::{invert, make_phantom_set, mirror, preprocess, resample, save_png};

fn main() -> synthrad::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/example-preprocess".into());
    std::fs::create_dir_all(&out).map_err(|e| synthrad::Error::Io { path: out.clone().into(), source: e })?;

    let phantoms = make_phantom_set(8, 32, 4)?;
    let last = phantoms.len() - 1;
    for (i, clean) in phantoms.iter().enumerate() {
        // Every third image arrives inverted, every other one mirrored.
        let mut raw = clean.clone();
        if i % 3 == 0 {
            raw = invert(&raw);
            raw.meta.inverted_flag = Some(true);
        }
        if i == last {
            raw.meta.inverted_flag = None;
        }
        if i % 2 == 1 {
            // Mirroring also flips the recorded facing to Right.
            raw = mirror(&raw);
        }

        let final_img = preprocess(&raw, 16)?;
        let restored = resample(clean, 16, 16)?;
        println!(
            "{}  flag={:<11} facing={:<5?}  inverted={:<5}  mean {:>6.1} -> {:>6.1}  matches clean: {}",
            clean.meta.source_id,
            format!("{:?}", raw.meta.inverted_flag),
            raw.meta.facing,
            final_img.meta.inverted_flag == Some(true),
            raw.mean(),
            final_img.mean(),
            final_img.pixels() == restored.pixels()
        );
        save_png(&final_img, format!("{out}/{}.png", clean.meta.source_id))?;
    }
    println!("wrote 16x16 images to {out}");
    Ok(())
}
