//! Drive the pipeline through the wire protocol against an in-process echo
//! server, the same way a real model server would be attached.

use std::sync::Arc;
use std::time::Duration;

use tiled_sr::backends::{BridgeClient, ExternalDenoiser};
use tiled_sr::conditioning::MockTagger;
use tiled_sr::pipeline::{run, PipelineConfig};
use tiled_sr::protocol::{EchoServer, Handshake};
use tiled_sr::tensor::CodecSpec;
use tiled_sr::ImageGrid;

fn main() {
    let codec = CodecSpec::new(4).unwrap();
    let handshake = Handshake {
        window_w: 16,
        window_h: 16,
        channels: 48,
    };
    let server = EchoServer::spawn("127.0.0.1:0", handshake).unwrap();
    println!("echo server on {}", server.addr);

    let client = BridgeClient::connect_tcp(&server.addr.to_string(), 4, Some(Duration::from_secs(30))).unwrap();
    println!("handshake {:?} over {} connections", client.handshake(), client.connections());
    let backend = ExternalDenoiser::new(Arc::new(client));

    let lr = ImageGrid::from_fn(32, 32, 3, |x, y, c| ((x + y + c) % 9) as f64 / 8.0).unwrap();
    let config = PipelineConfig {
        window: 16,
        stride: 8,
        steps: 5,
        workers: 4,
        ..Default::default()
    };
    let out = run(&lr, &config, &backend, &MockTagger::default(), codec, None).unwrap();
    println!(
        "{} windows x {} steps round-tripped, output {}x{}",
        out.report.plan.len(),
        out.report.steps.len(),
        out.image.width(),
        out.image.height()
    );
}
