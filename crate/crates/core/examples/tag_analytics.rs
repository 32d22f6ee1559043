//! Global vs local unique tag counts over a small synthetic corpus, as CSV.

use tiled_sr::conditioning::analytics::{analyze_image, write_tag_csv};
use tiled_sr::conditioning::MockTagger;
use tiled_sr::tensor::CodecSpec;
use tiled_sr::ImageGrid;

fn main() {
    let tagger = MockTagger::default();
    let rows: Vec<_> = (0..6)
        .map(|i| {
            let split = 256 + 64 * i;
            let img = ImageGrid::from_fn(768, 768, 3, |x, y, c| match (x < split, y < 384) {
                (true, true) => [0.9, 0.3, 0.2][c],
                (false, true) => 0.5 + 0.4 * ((x as f64) / (3.0 + i as f64)).sin(),
                (true, false) => (((x / 8 + y / 8) % 2) as f64) * [0.2, 0.9, 0.3][c],
                (false, false) => [0.1, 0.1, 0.6][c] * (y as f64 / 768.0),
            })
            .unwrap();
            analyze_image(&tagger, &format!("img{i}"), &img, 64, 32, CodecSpec::default()).unwrap()
        })
        .collect();
    write_tag_csv(&rows, std::io::stdout()).unwrap();
}
