//! Serves a small blinded study over HTTP on phantom images.
//!
//! cargo run --release --example study_server -- [addr]
//!
//! Then, for example:
//!   curl -s -XPOST localhost:8080/api/sessions -H 'content-type: application/json' -d '{"rater_id":"r1"}'
//!   curl -s localhost:8080/api/session/<session_id>/next
//!   curl -s -o img.png localhost:8080/api/image/<token>
//!   curl -s -XPOST localhost:8080/api/session/<session_id>/response -H 'content-type: application/json' \
//!        -d '{"quartet_id":"q000","chosen_slot":2,"ratings":[3,2,4,1]}'

use std::collections::HashMap;

use synthrad::imaging::{make_phantom_set, save_png};
use synthrad::study::{serve, StudyFiles, StudyService, StudySetup};
use synthrad::turing::build_quartets;

#[tokio::main]
async fn main() -> synthrad::Result<()> {
    let addr = std::env::args().nth(1).unwrap_or_else(|| "127.0.0.1:8080".into());
    let dir = std::path::PathBuf::from("target/example-study");
    std::fs::create_dir_all(&dir).map_err(|e| synthrad::Error::Io { path: dir.clone(), source: e })?;

    let mut pools: Vec<Vec<String>> = Vec::new();
    let mut image_paths = HashMap::new();
    for (g, prefix) in ["real", "a", "b", "c"].iter().enumerate() {
        let mut ids = Vec::new();
        for mut img in make_phantom_set(10, 16, g as u64)? {
            img.meta.source_id = format!("{prefix}-{}", img.meta.source_id);
            let path = dir.join(format!("{}.png", img.meta.source_id));
            save_png(&img, &path)?;
            image_paths.insert(img.meta.source_id.clone(), path);
            ids.push(img.meta.source_id);
        }
        pools.push(ids);
    }
    let quartets = build_quartets(&pools[0], [&pools[1], &pools[2], &pools[3]], 5, 1)?;
    let service = StudyService::open(
        StudySetup {
            seed: 1,
            quartets,
            image_paths,
            review: None,
        },
        StudyFiles::in_dir(&dir.join("logs")),
    )?;
    let addr = addr.parse().map_err(|e| synthrad::Error::InvalidArgument(format!("address {addr}: {e}")))?;
    println!("study API on http://{addr}/api (logs in {})", dir.join("logs").display());
    serve(service, addr).await
}
