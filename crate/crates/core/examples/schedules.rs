//! Noise schedules and the seeded noise generator.

use tiled_sr::backends::{make_schedule, ScheduleKind};
use tiled_sr::noise::seeded_noise;

fn main() {
    for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
        let s = make_schedule(50, kind).unwrap();
        let picks: Vec<String> = [0, 1, 10, 25, 40, 50].iter().map(|&t| format!("t={t}: {:.5}", s.alpha_bar(t))).collect();
        println!("{kind:?} alpha_bar  {}", picks.join("  "));
    }
    let z = seeded_noise(64, 64, 4, 0);
    let n = z.data().len() as f64;
    let mean = z.data().iter().sum::<f64>() / n;
    let var = z.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    println!("seed 0 noise: mean {mean:+.4}, variance {var:.4}, first {:?}", &z.data()[..3]);
}
