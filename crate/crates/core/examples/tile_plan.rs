//! Print tile plans for a few latent sizes.
//!
//! ```text
//! cargo run --example tile_plan
//! ```

use tiled_sr::tiling::{axis_origins, plan_tiles};

fn main() {
    // 256x256 input at x4 through an 8x codec gives a 128x128 latent
    let plan = plan_tiles(128, 128, 64, 64, 32).expect("valid plan");
    print!("{plan}");
    println!();

    // non-divisible: the last window is clamped to the border
    println!("origins for 100 cells, window 64, stride 32: {:?}", axis_origins(100, 64, 32));
    let plan = plan_tiles(100, 64, 64, 64, 32).expect("valid plan");
    print!("{plan}");
    let coverage = plan.coverage_counts();
    println!(
        "coverage per cell: min {} max {}",
        coverage.iter().min().unwrap(),
        coverage.iter().max().unwrap()
    );
}
