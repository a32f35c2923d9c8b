//! Builds blinded quartets, simulates raters who spot the real image a bit
//! more often than chance, and prints the study report.
//!
//! cargo run --release --example turing_study -- [raters] [p_correct]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synthrad::turing::{analyze_study, build_quartets, Group, ResponseRecord};

fn main() -> synthrad::Result<()> {
    let mut args = std::env::args().skip(1);
    let raters: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);
    let p_correct: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.29);

    let pool = |p: &str| (0..80).map(|i| format!("{p}-{i:03}")).collect::<Vec<_>>();
    let (real, a, b, c) = (pool("real"), pool("ckpt34"), pool("ckpt56"), pool("ckpt72"));
    let quartets = build_quartets(&real, [&a, &b, &c], 50, 2024)?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut responses = Vec::new();
    for r in 0..raters {
        for q in &quartets {
            let chosen_slot = if rng.random_bool(p_correct) {
                q.hidden_truth
            } else {
                // One of the three synthetic slots.
                let wrong: Vec<u8> = (1..=4).filter(|&s| s != q.hidden_truth).collect();
                wrong[rng.random_range(0..3)]
            };
            let ratings = q.group_of_slot.map(|g| {
                let bump = if g == Group::Real { 0.15 } else { 0.0 };
                (2.6 + bump + rng.random_range(-1.0f64..1.6)).round().clamp(1.0, 4.0) as u8
            });
            responses.push(ResponseRecord {
                rater_id: format!("rater-{r}"),
                quartet_id: q.quartet_id.clone(),
                chosen_slot,
                ratings,
                timestamp: String::new(),
            });
        }
    }
    let report = analyze_study(&responses, &quartets)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    print!("{}", report.ratings_csv());
    Ok(())
}
