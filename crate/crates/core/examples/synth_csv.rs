//! Writes a CSV with the Edge-IIoT column layout: `synth_csv <path> [rows per class] [seed]`.

use threathunt_core::synthetic::{write_edge_iiot_csv, SyntheticSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let path = args.get(1).expect("usage: synth_csv <path> [rows per class] [seed]");
    let rows = args.get(2).map_or(200, |s| s.parse().expect("rows"));
    let seed = args.get(3).map_or(1, |s| s.parse().expect("seed"));
    write_edge_iiot_csv(path.as_ref(), &SyntheticSpec::uniform(rows, seed)).expect("write csv");
}
