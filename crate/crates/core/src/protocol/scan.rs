//! Extraction of frames from a byte stream that may split or concatenate them.

use super::{codes, Codec, DecodeError, Frame};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScanOutput {
    pub frames: Vec<Frame>,
    pub errors: Vec<DecodeError>,
    /// Trailing bytes of a frame that has not fully arrived yet.
    pub residual: Vec<u8>,
}

/// Scans `buffer` with the default codec. See [`FrameScanner`] for the rules.
pub fn frame_stream_scan(buffer: &[u8]) -> ScanOutput {
    scan_with(&Codec::default(), buffer, false).0
}

/// Scans `buffer`; `skipping` says the previous chunk ended inside garbage,
/// which is then not reported again. Returns whether this chunk does too.
fn scan_with(codec: &Codec, buffer: &[u8], mut skipping: bool) -> (ScanOutput, bool) {
    let mut out = ScanOutput::default();
    let max_len = codec.valid_lengths().max().unwrap_or(0);
    let mut pos = 0;
    while pos < buffer.len() {
        if buffer[pos] != codes::HEADER {
            if !skipping {
                out.errors.push(DecodeError::BadHeader { found: buffer[pos] });
            }
            pos = buffer[pos..].iter().position(|&b| b == codes::HEADER).map_or(buffer.len(), |i| pos + i);
            skipping = pos == buffer.len();
            continue;
        }
        skipping = false;
        let Some(&declared) = buffer.get(pos + 1) else {
            break;
        };
        let declared = usize::from(declared);
        if declared > max_len || !codec.valid_lengths().any(|l| l == declared) {
            out.errors.push(DecodeError::BadLength { declared, actual: buffer.len() - pos });
            pos += 1;
            continue;
        }
        if buffer.len() - pos < declared {
            break;
        }
        match codec.decode(&buffer[pos..pos + declared]) {
            Ok(frame) => {
                out.frames.push(frame);
                pos += declared;
            }
            Err(err) => {
                out.errors.push(err);
                pos += 1;
            }
        }
    }
    out.residual = buffer[pos..].to_vec();
    (out, skipping)
}

/// Incremental scanner for a long-lived stream.
///
/// Frames are located by scanning for the `0xA5` header and trusting the
/// length byte only when it names a known layout. Garbage before a header is
/// reported once as `BadHeader`; a candidate that fails to decode is reported
/// and the scan resumes one byte later. Errors are returned, never raised.
#[derive(Debug, Clone, Default)]
pub struct FrameScanner {
    codec: Codec,
    pending: Vec<u8>,
    skipping: bool,
}

impl FrameScanner {
    pub fn new(codec: Codec) -> Self {
        Self { codec, pending: Vec::new(), skipping: false }
    }

    /// Appends `bytes` and returns every complete frame and error found so far.
    /// The returned `residual` mirrors what is kept for the next call.
    pub fn push(&mut self, bytes: &[u8]) -> ScanOutput {
        self.pending.extend_from_slice(bytes);
        let (out, skipping) = scan_with(&self.codec, &self.pending, self.skipping);
        self.skipping = skipping;
        self.pending.clone_from(&out.residual);
        out
    }

    pub fn pending(&self) -> &[u8] {
        &self.pending
    }

    pub fn clear(&mut self) {
        self.pending.clear();
        self.skipping = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actuator::Actuator;
    use crate::protocol::{encode_frame, ErrorKind, SensorInstruction};

    fn led(gear: u8) -> Vec<u8> {
        encode_frame(&Frame::SensorInstruction(SensorInstruction::set(0x07, Actuator::Led, gear))).unwrap()
    }

    #[test]
    fn two_concatenated_frames() {
        let mut buf = led(1);
        buf.extend(led(2));
        let out = frame_stream_scan(&buf);
        assert_eq!(out.frames.len(), 2);
        assert!(out.errors.is_empty());
        assert!(out.residual.is_empty());
    }

    #[test]
    fn partial_trailing_frame_is_residual() {
        let mut buf = led(1);
        buf.extend(&led(2)[..3]);
        let out = frame_stream_scan(&buf);
        assert_eq!(out.frames.len(), 1);
        assert!(out.errors.is_empty());
        assert_eq!(out.residual, vec![0xA5, 0x06, 0x07]);
    }

    #[test]
    fn leading_garbage_resyncs() {
        let mut buf = vec![0xFF, 0xFF];
        buf.extend(led(1));
        let out = frame_stream_scan(&buf);
        assert_eq!(out.frames.len(), 1);
        assert_eq!(out.errors, vec![DecodeError::BadHeader { found: 0xFF }]);
        assert!(out.residual.is_empty());
    }

    #[test]
    fn bogus_length_is_rejected_without_waiting() {
        let mut buf = vec![0xA5, 0xC8];
        buf.extend(led(3));
        let out = frame_stream_scan(&buf);
        assert_eq!(out.frames.len(), 1);
        assert_eq!(out.errors[0].kind(), ErrorKind::BadLength);
    }

    #[test]
    fn corrupted_frame_then_valid_frame() {
        let mut bad = led(1);
        bad[5] = 0x00;
        bad.extend(led(2));
        let out = frame_stream_scan(&bad);
        assert_eq!(out.frames.len(), 1);
        assert_eq!(out.errors[0].kind(), ErrorKind::BadEnd);
        assert!(out.residual.is_empty());
    }

    #[test]
    fn scanner_carries_residual_between_pushes() {
        let bytes = led(2);
        let mut scanner = FrameScanner::default();
        assert!(scanner.push(&bytes[..4]).frames.is_empty());
        assert_eq!(scanner.pending().len(), 4);
        let out = scanner.push(&bytes[4..]);
        assert_eq!(out.frames.len(), 1);
        assert!(scanner.pending().is_empty());
    }
}
