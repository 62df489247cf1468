//! Randomized trace files and the corruption classes of the container.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seft::traceio::{read_trace, TraceError, TraceFile, TraceRecord, MAGIC};

pub fn random_file(seed: u64, with_matrices: bool) -> TraceFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (v, d, m) = (
        rng.random_range(2..9),
        rng.random_range(1..6),
        rng.random_range(1..5),
    );
    let n = rng.random_range(0..6);
    // arbitrary bit patterns, NaN payloads included
    let mut floats =
        |k: usize| -> Vec<f32> { (0..k).map(|_| f32::from_bits(rng.random())).collect() };
    let input = with_matrices.then(|| floats(v * d));
    let output = with_matrices.then(|| floats(v * d));
    let records = (0..n)
        .map(|_| TraceRecord {
            medium_token: 0,
            label: 0,
            latents: floats((m + 1) * d),
        })
        .collect::<Vec<_>>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let records = records
        .into_iter()
        .map(|r| TraceRecord {
            medium_token: rng.random_range(0..v as u32),
            label: rng.random_range(0..v as u32),
            ..r
        })
        .collect();
    TraceFile::new("random", m, d, v, input, output, records).unwrap()
}

pub fn header_span(bytes: &[u8]) -> std::ops::Range<usize> {
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    16..16 + len
}

pub fn with_header(bytes: &[u8], edit: impl Fn(&mut serde_json::Value)) -> Vec<u8> {
    let span = header_span(bytes);
    let mut header: serde_json::Value = serde_json::from_slice(&bytes[span.clone()]).unwrap();
    edit(&mut header);
    let text = serde_json::to_vec(&header).unwrap();
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&bytes[span.end..]);
    out
}

/// Damages an encoding of `file` in every way the reader distinguishes and
/// checks each yields its own error.
pub fn assert_corruption_classes(file: &TraceFile) {
    let bytes = file.encode().unwrap();

    let mut bad = bytes.clone();
    bad[3] ^= 0xff;
    assert!(matches!(TraceFile::decode(&bad), Err(TraceError::BadMagic)));

    let v2 = with_header(&bytes, |h| h["version"] = 2.into());
    assert!(matches!(
        TraceFile::decode(&v2),
        Err(TraceError::UnsupportedVersion(2))
    ));

    let mut garbled = bytes.clone();
    garbled[16] = b'[';
    assert!(matches!(
        TraceFile::decode(&garbled),
        Err(TraceError::MalformedHeader(_))
    ));
    let missing = with_header(&bytes, |h| {
        h.as_object_mut().unwrap().remove("dim");
    });
    assert!(matches!(
        TraceFile::decode(&missing),
        Err(TraceError::MalformedHeader(_))
    ));

    assert!(matches!(
        TraceFile::decode(&bytes[..12]),
        Err(TraceError::Truncated {
            section: "header length",
            ..
        })
    ));
    assert!(matches!(
        TraceFile::decode(&bytes[..header_span(&bytes).end - 1]),
        Err(TraceError::Truncated {
            section: "header",
            ..
        })
    ));
    if file.input_matrix.is_some() {
        assert!(matches!(
            TraceFile::decode(&bytes[..header_span(&bytes).end + 2]),
            Err(TraceError::Truncated {
                section: "input matrix",
                ..
            })
        ));
    }

    // cut inside the last record
    let n = file.records.len();
    if n > 0 {
        match TraceFile::decode(&bytes[..bytes.len() - 1]) {
            Err(TraceError::Truncated {
                section: "record",
                record: Some(i),
            }) => assert_eq!(i, n - 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    let more = with_header(&bytes, |h| h["records"] = (n + 1).into());
    match TraceFile::decode(&more) {
        Err(TraceError::Truncated {
            section: "record",
            record: Some(i),
        }) => assert_eq!(i, n),
        other => panic!("unexpected {other:?}"),
    }

    let mut trailing = bytes.clone();
    trailing.extend_from_slice(&[0, 0, 0]);
    assert!(matches!(
        TraceFile::decode(&trailing),
        Err(TraceError::TrailingBytes(3))
    ));

    // a smaller vocabulary shortens the matrices, so the leftover bytes
    // either misalign the records or trail them
    if file.input_matrix.is_some() {
        let shrunk_vocab = with_header(&bytes, |h| h["vocab"] = 1.into());
        assert!(matches!(
            TraceFile::decode(&shrunk_vocab),
            Err(TraceError::TrailingBytes(_) | TraceError::ShapeMismatch(_))
        ));
    }

    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        read_trace(dir.path().join("absent")),
        Err(TraceError::Io(_))
    ));
}
