//! Space-to-depth codec: an image and its latent are the same numbers in a
//! different layout.

use tiled_sr::tensor::{decode, encode, CodecSpec};
use tiled_sr::ImageGrid;

fn main() {
    let codec = CodecSpec::default();
    let img = ImageGrid::from_fn(64, 48, 3, |x, y, c| ((x + 2 * y + 7 * c) % 17) as f64 / 16.0).unwrap();
    let latent = encode(&img, codec).unwrap();
    println!("image {}x{}x{} -> latent {:?}", img.width(), img.height(), img.channels(), latent.dims());
    let back = decode(&latent, codec).unwrap();
    println!("decode(encode(x)) == x: {}", back == img);
}
