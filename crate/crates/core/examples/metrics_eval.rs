//! PSNR and SSIM, including the Y-channel and border-shave options.

use tiled_sr::metrics::{evaluate, psnr, EvalOptions};
use tiled_sr::ImageGrid;

fn main() {
    let a = ImageGrid::filled(64, 64, 3, 0.25).unwrap();
    let b = ImageGrid::filled(64, 64, 3, 0.25 + 16.0 / 255.0).unwrap();
    println!("uniform offset of 16/255: PSNR {:.4} dB", psnr(&a, &b, 1.0).unwrap());

    let hr = ImageGrid::from_fn(96, 96, 3, |x, y, c| ((x * 3 + y * 5 + c) % 32) as f64 / 31.0).unwrap();
    let sr = ImageGrid::from_fn(96, 96, 3, |x, y, c| hr.get(x, y, c) * 0.95 + 0.02).unwrap();
    for opts in [
        EvalOptions::default(),
        EvalOptions {
            y_channel: true,
            shave_border: 4,
        },
    ] {
        let m = evaluate(&sr, &hr, opts).unwrap();
        println!("{opts:?}: PSNR {:.3} dB, SSIM {:.4}", m.psnr, m.ssim);
    }
    println!("identical: {:?}", evaluate(&hr, &hr, EvalOptions::default()).unwrap());
}
