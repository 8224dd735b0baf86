//! Regenerates the bundled toy data set.
//!
//! ```text
//! cargo run -p relemb --example make_toy -- data/toy
//! ```

use std::path::PathBuf;

use relemb::synthetic::{ToyData, TOY_SEED};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data/toy"));
    let toy = ToyData::generate(TOY_SEED)?;
    for name in toy.write(&dir)? {
        println!("{}", dir.join(name).display());
    }
    Ok(())
}
