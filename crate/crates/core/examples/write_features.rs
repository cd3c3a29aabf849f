//! Writes seeded random feature matrices in the binary container format so
//! `usg demo` has something to read.
//!
//! ```text
//! cargo run --example write_features -- <dir> [rows] [cols] [seed]
//! ```
//!
//! Produces `text.usgf`, `image.usgf`, `video0.usgf`, `video1.usgf` and
//! `point3d.usgf`.

use std::path::PathBuf;

use usg::model::io::save_matrix;
use usg::tensor::RngSeed;

fn main() {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "features".into()));
    let rows: usize = args.next().map_or(16, |s| s.parse().expect("rows"));
    let cols: usize = args.next().map_or(256, |s| s.parse().expect("cols"));
    let seed = RngSeed(args.next().map_or(0, |s| s.parse().expect("seed")));

    std::fs::create_dir_all(&dir).expect("create output directory");
    for name in ["text", "image", "video0", "video1", "point3d"] {
        let path = dir.join(format!("{name}.usgf"));
        save_matrix(&path, &seed.uniform_matrix(name, rows, cols, 1)).expect("write features");
        println!("{}", path.display());
    }
}
