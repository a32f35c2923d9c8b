//! Plants copies of two training images among synthetic look-alikes and shows
//! that the audit ranks them first, then writes the review bundle.
//!
//! cargo run --release --example memorization_audit -- [out_dir]

use synthrad::imaging::{make_phantom_set, save_png, DatasetManifest, GrayImage, ManifestEntry, Origin};
use synthrad::memaudit::{build_review_bundle, top_k_pairs};
use synthrad::metrics::{embed_set, Embedder};

fn manifest(images: &[GrayImage], dir: &str) -> synthrad::Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| synthrad::Error::Io { path: dir.into(), source: e })?;
    let entries = images
        .iter()
        .map(|img| {
            let name = format!("{}.png", img.meta.source_id);
            save_png(img, format!("{dir}/{name}"))?;
            Ok(ManifestEntry::from_image(img, name, 0))
        })
        .collect::<synthrad::Result<Vec<_>>>()?;
    DatasetManifest::new(entries, 0, dir)
}

fn main() -> synthrad::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/example-audit".into());
    let real = make_phantom_set(60, 16, 10)?;
    let mut synth = make_phantom_set(60, 16, 11)?;
    for img in &mut synth {
        img.meta.origin = Origin::Synthetic;
        img.meta.source_id = img.meta.source_id.replace("phantom", "synth");
    }
    for (s, r) in [(5, 17), (40, 3)] {
        let id = synth[s].meta.source_id.clone();
        synth[s] = real[r].clone();
        synth[s].meta.source_id = id;
        println!("planted copy of {} as {}", real[r].meta.source_id, synth[s].meta.source_id);
    }

    let embedder = Embedder::new(0);
    let pairs = top_k_pairs(&embed_set(&real, &embedder)?, &embed_set(&synth, &embedder)?, 5)?;
    for p in &pairs {
        println!("#{}  {:.6}  {} ~ {}", p.rank, p.cosine, p.real_id, p.synth_id);
    }
    let real_m = manifest(&real, &format!("{out}/real"))?;
    let synth_m = manifest(&synth, &format!("{out}/synth"))?;
    let records = build_review_bundle(&pairs, &real_m, &synth_m, format!("{out}/bundle").as_ref())?;
    println!("{} side-by-side composites in {out}/bundle", records.len());
    Ok(())
}
