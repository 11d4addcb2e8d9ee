//! Regenerate the shipped synthetic fixture.
//!
//! cargo run -p exoforecast --example gen_fixture -- crates/core/tests/fixtures/synthetic

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use exoforecast::synthetic::{write_raw_fixture, RawFixtureSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixture".into()));
    std::fs::create_dir_all(&dir)?;
    let spec = RawFixtureSpec::default();
    let minute = BufWriter::new(File::create(dir.join("minute.csv"))?);
    let epi = BufWriter::new(File::create(dir.join("epi.csv"))?);
    write_raw_fixture(&spec, minute, epi)?;
    println!("wrote {} days from {} into {}", spec.days, spec.start, dir.display());
    Ok(())
}
