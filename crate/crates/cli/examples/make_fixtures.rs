//! Writes the synthetic 11-feature benchmark to a directory:
//! `cargo run -p suffx-cli --example make_fixtures -- data/adult_like`.

use std::fs;
use std::path::PathBuf;

use suffx_core::synth::adult_like_suite;

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/adult_like".into()));
    let instances: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(50);
    let suite = adult_like_suite(2024, instances);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("circuit.json"), suite.circuit.to_json())?;
    fs::write(dir.join("ensemble.json"), suite.ensemble.to_json())?;
    let names = [
        "age_over_40", "married", "college", "white_collar", "self_employed", "male",
        "us_born", "over_40h", "capital_gain", "capital_loss", "white",
    ];
    let mut csv = names.join(",");
    csv.push_str(",label\n");
    for x in &suite.instances {
        let row: Vec<&str> = x.iter().map(|&b| if b { "1" } else { "0" }).collect();
        csv.push_str(&row.join(","));
        csv.push_str(if suite.ensemble.classify_full(x) { ",1\n" } else { ",0\n" });
    }
    fs::write(dir.join("instances.csv"), csv)?;
    Ok(())
}
