//! Generator for CSV files with the Edge-IIoT column layout.
//!
//! Used by tests, benches and the CLI smoke runs when the real dataset is not
//! at hand. Every class gets its own mean vector for the numeric columns and
//! its own preferred levels for the categorical ones, so the classes are
//! learnable but overlap.

use std::path::Path;

use crate::data::EDGE_IIOT_CLASSES;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Column names of the published Edge-IIoT ML CSV, in file order.
pub const EDGE_IIOT_COLUMNS: [&str; 63] = [
    "frame.time",
    "ip.src_host",
    "ip.dst_host",
    "arp.dst.proto_ipv4",
    "arp.opcode",
    "arp.hw.size",
    "arp.src.proto_ipv4",
    "icmp.checksum",
    "icmp.seq_le",
    "icmp.transmit_timestamp",
    "icmp.unused",
    "http.file_data",
    "http.content_length",
    "http.request.uri.query",
    "http.request.method",
    "http.referer",
    "http.request.full_uri",
    "http.request.version",
    "http.response",
    "http.tls_port",
    "tcp.ack",
    "tcp.ack_raw",
    "tcp.checksum",
    "tcp.connection.fin",
    "tcp.connection.rst",
    "tcp.connection.syn",
    "tcp.connection.synack",
    "tcp.dstport",
    "tcp.flags",
    "tcp.flags.ack",
    "tcp.len",
    "tcp.options",
    "tcp.payload",
    "tcp.seq",
    "tcp.srcport",
    "udp.port",
    "udp.stream",
    "udp.time_delta",
    "dns.qry.name",
    "dns.qry.name.len",
    "dns.qry.qu",
    "dns.qry.type",
    "dns.retransmission",
    "dns.retransmit_request",
    "dns.retransmit_request_in",
    "mqtt.conack.flags",
    "mqtt.conflag.cleansess",
    "mqtt.conflags",
    "mqtt.hdrflags",
    "mqtt.len",
    "mqtt.msg_decoded_as",
    "mqtt.msg",
    "mqtt.msgtype",
    "mqtt.proto_len",
    "mqtt.protoname",
    "mqtt.topic",
    "mqtt.topic_len",
    "mqtt.ver",
    "mbtcp.len",
    "mbtcp.trans_id",
    "mbtcp.unit_id",
    "Attack_label",
    "Attack_type",
];

/// Levels per categorical column; one-hot widths add up to 56.
const CATEGORICAL_LEVELS: [(&str, usize); 7] = [
    ("http.request.method", 8),
    ("http.referer", 4),
    ("http.request.version", 12),
    ("dns.qry.name.len", 10),
    ("mqtt.conack.flags", 6),
    ("mqtt.protoname", 3),
    ("mqtt.topic", 13),
];

/// Free-text columns that the shipped feature recipe drops.
const TEXT_COLUMNS: [&str; 15] = [
    "frame.time",
    "ip.src_host",
    "ip.dst_host",
    "arp.src.proto_ipv4",
    "arp.dst.proto_ipv4",
    "http.file_data",
    "http.request.full_uri",
    "icmp.transmit_timestamp",
    "http.request.uri.query",
    "tcp.options",
    "tcp.payload",
    "tcp.srcport",
    "tcp.dstport",
    "udp.port",
    "mqtt.msg",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Rows per class, in label-table order.
    pub rows_per_class: Vec<usize>,
    /// Spread of the class means relative to the unit within-class noise.
    pub separation: f64,
    /// Probability that a numeric cell is left empty.
    pub missing_rate: f64,
    /// Probability that a row is immediately repeated verbatim.
    pub duplicate_rate: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn uniform(rows: usize, seed: u64) -> Self {
        Self {
            rows_per_class: vec![rows; EDGE_IIOT_CLASSES.len()],
            separation: 1.5,
            missing_rate: 0.0,
            duplicate_rate: 0.0,
            seed,
        }
    }
}

enum Kind {
    Text,
    Categorical(usize),
    Numeric(usize),
    Flag,
    Label,
}

fn column_kinds() -> Vec<Kind> {
    let mut numeric = 0;
    EDGE_IIOT_COLUMNS
        .iter()
        .map(|&name| {
            if TEXT_COLUMNS.contains(&name) {
                Kind::Text
            } else if let Some(&(_, n)) = CATEGORICAL_LEVELS.iter().find(|(c, _)| *c == name) {
                Kind::Categorical(n)
            } else if name == "Attack_label" {
                Kind::Flag
            } else if name == "Attack_type" {
                Kind::Label
            } else {
                numeric += 1;
                Kind::Numeric(numeric - 1)
            }
        })
        .collect()
}

/// Number of numeric columns the generator fills.
pub const NUMERIC_COLUMNS: usize = 39;

/// Writes a shuffled CSV with a header row.
pub fn write_edge_iiot_csv(path: &Path, spec: &SyntheticSpec) -> Result<()> {
    let classes = EDGE_IIOT_CLASSES;
    if spec.rows_per_class.len() != classes.len() {
        return Err(Error::Config(format!(
            "expected {} per-class row counts, got {}",
            classes.len(),
            spec.rows_per_class.len()
        )));
    }
    let mut rng = SeededRng::new(spec.seed);
    let kinds = column_kinds();
    let means: Vec<Vec<f64>> = (0..classes.len())
        .map(|_| (0..NUMERIC_COLUMNS).map(|_| rng.normal() * spec.separation).collect())
        .collect();
    let favourites: Vec<Vec<usize>> = (0..classes.len())
        .map(|_| CATEGORICAL_LEVELS.iter().map(|&(_, n)| rng.index(n)).collect())
        .collect();

    let mut order: Vec<usize> = spec
        .rows_per_class
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    rng.shuffle(&mut order);

    let mut rows: Vec<Vec<String>> = Vec::with_capacity(order.len());
    for (i, &class) in order.iter().enumerate() {
        let mut cat = 0;
        let row: Vec<String> = kinds
            .iter()
            .map(|k| match *k {
                Kind::Text => format!("t{}-{}", rng.index(1000), i),
                Kind::Categorical(n) => {
                    let fav = favourites[class][cat];
                    cat += 1;
                    let level = if rng.uniform() < 0.7 { fav } else { rng.index(n) };
                    format!("L{level}")
                }
                Kind::Numeric(j) => {
                    if rng.uniform() < spec.missing_rate {
                        String::new()
                    } else {
                        let v = means[class][j] + rng.normal();
                        format!("{:.4}", v)
                    }
                }
                Kind::Flag => u8::from(class != 0).to_string(),
                Kind::Label => classes[class].to_string(),
            })
            .collect();
        let dup = rng.uniform() < spec.duplicate_rate;
        if dup {
            rows.push(row.clone());
        }
        rows.push(row);
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        row: 0,
        msg: e.to_string(),
    };
    w.write_record(EDGE_IIOT_COLUMNS).map_err(csv_err)?;
    for r in &rows {
        w.write_record(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    crate::io::write_atomic(path, &bytes)
}
