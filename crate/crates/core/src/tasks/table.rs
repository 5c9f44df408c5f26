//! Codec comparison table: one row per (input, codec).

use std::io::{self, Write};
use std::time::Instant;

use super::codec::{lossless_encode, Codec, CodecRegistry};

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub input: String,
    pub codec: String,
    pub outcome: Result<RowMeasurement, String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowMeasurement {
    pub original_size: u64,
    pub compressed_size: u64,
    pub cr: f64,
    pub encode_s: f64,
    pub decode_s: f64,
}

/// Runs every requested codec over every input. Rows are input-major;
/// within an input, registered codecs come in id order followed by any
/// unknown names (as error rows) in request order.
pub fn compression_table(
    inputs: &[(String, Vec<u8>)],
    codecs: &[String],
    registry: &CodecRegistry,
) -> Vec<TableRow> {
    let mut known: Vec<&dyn Codec> = Vec::new();
    let mut unknown: Vec<&str> = Vec::new();
    for name in codecs {
        match registry.by_name(name) {
            Some(c) if !known.iter().any(|k| k.id() == c.id()) => known.push(c),
            Some(_) => {}
            None => unknown.push(name),
        }
    }
    known.sort_by_key(|c| c.id());

    let mut rows = Vec::new();
    for (name, data) in inputs {
        for codec in &known {
            rows.push(TableRow {
                input: name.clone(),
                codec: codec.name().to_string(),
                outcome: measure(*codec, data),
            });
        }
        for u in &unknown {
            rows.push(TableRow {
                input: name.clone(),
                codec: u.to_string(),
                outcome: Err(format!("unknown codec {u:?}")),
            });
        }
    }
    rows
}

fn measure(codec: &dyn Codec, data: &[u8]) -> Result<RowMeasurement, String> {
    let t0 = Instant::now();
    let (coded, report) = lossless_encode(codec, data);
    let encode_s = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let decoded = codec.decode(&coded).map_err(|e| e.to_string())?;
    let decode_s = t1.elapsed().as_secs_f64();
    if decoded != data {
        return Err("round trip mismatch".into());
    }
    Ok(RowMeasurement {
        original_size: report.original_size,
        compressed_size: report.compressed_size,
        cr: report.cr,
        encode_s,
        decode_s,
    })
}

pub const TABLE_HEADER: &str = "name,codec,original_size,compressed_size,cr,encode_s,decode_s,error";

pub fn write_table_csv<W: Write>(rows: &[TableRow], out: &mut W) -> io::Result<()> {
    writeln!(out, "{TABLE_HEADER}")?;
    for r in rows {
        match &r.outcome {
            Ok(m) => writeln!(
                out,
                "{},{},{},{},{},{},{},",
                r.input, r.codec, m.original_size, m.compressed_size, m.cr, m.encode_s, m.decode_s
            )?,
            Err(e) => writeln!(out, "{},{},,,ERROR,,,{}", r.input, r.codec, e.replace(',', ";"))?,
        }
    }
    Ok(())
}
