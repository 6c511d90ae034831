//! Reader and checker for golden-vector files (`layer | hex | expected`).

use super::{parse_hex, Codec, ErrorKind, Layer};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldenVector {
    pub line: usize,
    pub layer: Layer,
    pub bytes: Vec<u8>,
    pub expected: String,
}

pub fn parse_layer(name: &str) -> Option<Layer> {
    match name.trim().to_ascii_lowercase().as_str() {
        "sensor" => Some(Layer::Sensor),
        "network" => Some(Layer::Network),
        "application" | "app" => Some(Layer::Application),
        _ => None,
    }
}

pub fn parse_golden(text: &str) -> Result<Vec<GoldenVector>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.splitn(3, '|').map(str::trim).collect();
        let [layer, hex, expected] = parts[..] else {
            return Err(format!("line {}: expected `layer | hex | expected`", i + 1));
        };
        let layer = parse_layer(layer).ok_or_else(|| format!("line {}: unknown layer {layer:?}", i + 1))?;
        let bytes = parse_hex(hex).ok_or_else(|| format!("line {}: bad hex", i + 1))?;
        out.push(GoldenVector { line: i + 1, layer, bytes, expected: expected.to_string() });
    }
    Ok(out)
}

/// Decodes the vector and compares with the expectation. Accepted frames must
/// also re-encode to the same bytes.
pub fn check_vector(v: &GoldenVector) -> Result<(), String> {
    let codec = Codec::for_layer(v.layer);
    match codec.decode(&v.bytes) {
        Ok(frame) => {
            let shown = frame.to_string();
            if shown != v.expected {
                return Err(format!("line {}: decoded {shown:?}, expected {:?}", v.line, v.expected));
            }
            let again = codec.encode(&frame).map_err(|e| format!("line {}: re-encode failed: {e}", v.line))?;
            if again != v.bytes {
                return Err(format!("line {}: re-encoded bytes differ", v.line));
            }
            Ok(())
        }
        Err(e) if ErrorKind::ALL.iter().any(|k| k.name() == v.expected) && e.kind().name() == v.expected => Ok(()),
        Err(e) => Err(format!("line {}: {e}, expected {:?}", v.line, v.expected)),
    }
}
