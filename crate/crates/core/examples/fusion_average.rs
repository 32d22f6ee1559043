//! Average two overlapping windows back into a parent latent.

use tiled_sr::fusion::FusionAccumulator;
use tiled_sr::tiling::plan_tiles;
use tiled_sr::LatentGrid;

fn main() {
    let plan = plan_tiles(6, 1, 4, 1, 2).unwrap();
    let mut acc = FusionAccumulator::new(6, 1, 1);
    for (w, value) in plan.windows.iter().zip([1.0, 3.0]) {
        acc.deposit(w, &LatentGrid::filled(4, 1, 1, value).unwrap()).unwrap();
    }
    println!("weights: {:?}", acc.weights());
    let fused = acc.finalize().unwrap();
    println!("fused:   {:?}", fused.data());
}
