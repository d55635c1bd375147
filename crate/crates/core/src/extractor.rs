//! Schema-driven extraction of file and event metadata from binary event
//! files, and synthesis of event-subset files.
//!
//! Nothing here knows about a particular format: every layout decision comes
//! from an [`MddSchema`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::digest::Sha256Digest;
use crate::mdd::{MddSchema, ScalarType};

/// Value of a meta-marked field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AttrValue {
    #[serde(rename = "u")]
    Unsigned(u64),
    #[serde(rename = "i")]
    Signed(i64),
    #[serde(rename = "f")]
    Float(f64),
}

impl AttrValue {
    /// The value as used by predicates.
    pub fn as_f64(&self) -> f64 {
        match *self {
            AttrValue::Unsigned(v) => v as f64,
            AttrValue::Signed(v) => v as f64,
            AttrValue::Float(v) => v,
        }
    }

    /// Bit-level equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &AttrValue) -> bool {
        match (self, other) {
            (AttrValue::Float(a), AttrValue::Float(b)) => a.to_bits() == b.to_bits(),
            _ => self == other,
        }
    }
}

pub type Attrs = BTreeMap<String, AttrValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileMetadata {
    pub source_id: u16,
    pub path: String,
    pub size: u64,
    pub sha256: Sha256Digest,
    pub format_name: String,
    pub event_count: u64,
    pub time_min_ns: Option<u64>,
    pub time_max_ns: Option<u64>,
    pub header_attrs: Attrs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMetadata {
    pub file_sha256: Sha256Digest,
    pub event_index: u64,
    pub timestamp_ns: u64,
    pub attrs: Attrs,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExtractError {
    #[error("field {field:?} at offset {offset} does not hold the expected bytes")]
    BadMagic { field: String, offset: u64 },
    #[error("file is {actual} bytes, layout requires {expected}")]
    Truncated { expected: u64, actual: u64 },
    #[error("file is {actual} bytes, layout ends at {expected}")]
    TrailingBytes { expected: u64, actual: u64 },
    #[error("field {field:?} holds a non-finite float (event {index:?})")]
    NonFiniteFloat { field: String, index: Option<u64> },
    #[error("event index {0} is out of range")]
    IndexOutOfRange(u64),
    #[error("event indices must be strictly increasing")]
    UnsortedIndices,
}

/// Byte offset of event record `index`.
pub fn event_offset(schema: &MddSchema, index: u64) -> u64 {
    (schema.header_size() as u64).saturating_add(index.saturating_mul(schema.record_size() as u64))
}

fn read_le<const N: usize>(bytes: &[u8], at: usize) -> [u8; N] {
    let mut out = [0u8; N];
    out.copy_from_slice(&bytes[at..at + N]);
    out
}

/// Decodes a numeric field. `bytes` must be at least `at + ty.width()` long.
fn decode(ty: ScalarType, bytes: &[u8], at: usize) -> Option<AttrValue> {
    Some(match ty {
        ScalarType::U8 => AttrValue::Unsigned(bytes[at] as u64),
        ScalarType::U16 => AttrValue::Unsigned(u16::from_le_bytes(read_le(bytes, at)) as u64),
        ScalarType::U32 => AttrValue::Unsigned(u32::from_le_bytes(read_le(bytes, at)) as u64),
        ScalarType::U64 => AttrValue::Unsigned(u64::from_le_bytes(read_le(bytes, at))),
        ScalarType::I8 => AttrValue::Signed(bytes[at] as i8 as i64),
        ScalarType::I16 => AttrValue::Signed(i16::from_le_bytes(read_le(bytes, at)) as i64),
        ScalarType::I32 => AttrValue::Signed(i32::from_le_bytes(read_le(bytes, at)) as i64),
        ScalarType::I64 => AttrValue::Signed(i64::from_le_bytes(read_le(bytes, at))),
        ScalarType::F32 => AttrValue::Float(f32::from_le_bytes(read_le(bytes, at)) as f64),
        ScalarType::F64 => AttrValue::Float(f64::from_le_bytes(read_le(bytes, at))),
        ScalarType::Bytes(_) => return None,
    })
}

fn decode_meta(
    ty: ScalarType,
    name: &str,
    bytes: &[u8],
    at: usize,
    index: Option<u64>,
) -> Result<AttrValue, ExtractError> {
    let value = decode(ty, bytes, at).expect("meta fields are numeric");
    if let AttrValue::Float(f) = value
        && !f.is_finite()
    {
        return Err(ExtractError::NonFiniteFloat {
            field: name.to_string(),
            index,
        });
    }
    Ok(value)
}

/// Checks header expectations and total length; returns the event count.
fn validate_layout(bytes: &[u8], schema: &MddSchema) -> Result<u64, ExtractError> {
    let actual = bytes.len() as u64;
    let header_size = schema.header_size();
    if bytes.len() < header_size {
        return Err(ExtractError::Truncated {
            expected: header_size as u64,
            actual,
        });
    }
    for (field, offset) in schema.header_layout() {
        if let Some(expect) = &field.expect
            && &bytes[offset..offset + expect.len()] != expect.as_slice()
        {
            return Err(ExtractError::BadMagic {
                field: field.name.clone(),
                offset: offset as u64,
            });
        }
    }
    let (count_field, count_offset) = schema.repeat_field();
    let count = match decode(count_field.ty, bytes, count_offset) {
        Some(AttrValue::Unsigned(n)) => n,
        _ => unreachable!("repeat field is unsigned"),
    };
    let expected = (schema.record_size() as u64)
        .checked_mul(count)
        .and_then(|payload| payload.checked_add(header_size as u64));
    match expected {
        Some(expected) if actual == expected => Ok(count),
        Some(expected) if actual > expected => {
            Err(ExtractError::TrailingBytes { expected, actual })
        }
        Some(expected) => Err(ExtractError::Truncated { expected, actual }),
        None => Err(ExtractError::Truncated {
            expected: u64::MAX,
            actual,
        }),
    }
}

/// Decodes the meta-marked fields of the record starting at `start`.
fn decode_event(
    bytes: &[u8],
    schema: &MddSchema,
    start: usize,
    index: u64,
) -> Result<(u64, Attrs), ExtractError> {
    let mut attrs = Attrs::new();
    let mut timestamp = 0;
    for (field, offset) in schema.event_layout() {
        if !field.is_meta {
            continue;
        }
        let value = decode_meta(field.ty, &field.name, bytes, start + offset, Some(index))?;
        if field.is_timestamp_key
            && let AttrValue::Unsigned(ts) = value
        {
            timestamp = ts;
        }
        attrs.insert(field.name.clone(), value);
    }
    Ok((timestamp, attrs))
}

/// Validates `bytes` against `schema` and pulls out its metadata.
///
/// The whole file is checked: header expectations, exact length, and
/// finiteness of every meta-marked float.
pub fn extract(
    bytes: &[u8],
    schema: &MddSchema,
    source_id: u16,
    path: &str,
) -> Result<(FileMetadata, Vec<EventMetadata>), ExtractError> {
    let count = validate_layout(bytes, schema)?;

    let mut header_attrs = Attrs::new();
    for (field, offset) in schema.header_layout() {
        if field.is_meta {
            header_attrs.insert(
                field.name.clone(),
                decode_meta(field.ty, &field.name, bytes, offset, None)?,
            );
        }
    }

    let sha256 = Sha256Digest::of(bytes);
    // length was validated, so `count` records are present
    let mut events = Vec::with_capacity(count as usize);
    let record_size = schema.record_size();
    for index in 0..count {
        let start = schema.header_size() + index as usize * record_size;
        let (timestamp_ns, attrs) = decode_event(bytes, schema, start, index)?;
        events.push(EventMetadata {
            file_sha256: sha256,
            event_index: index,
            timestamp_ns,
            attrs,
        });
    }

    let file = FileMetadata {
        source_id,
        path: path.to_string(),
        size: bytes.len() as u64,
        sha256,
        format_name: schema.format_name().to_string(),
        event_count: count,
        time_min_ns: events.iter().map(|e| e.timestamp_ns).min(),
        time_max_ns: events.iter().map(|e| e.timestamp_ns).max(),
        header_attrs,
    };
    Ok((file, events))
}

/// Builds a file holding only the events at `indices`.
///
/// The header is copied verbatim except for the event count; records are
/// copied byte for byte in input order.
pub fn synthesize_subset(
    bytes: &[u8],
    schema: &MddSchema,
    indices: &[u64],
) -> Result<Vec<u8>, ExtractError> {
    let count = validate_layout(bytes, schema)?;
    if indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ExtractError::UnsortedIndices);
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= count) {
        return Err(ExtractError::IndexOutOfRange(bad));
    }

    let header_size = schema.header_size();
    let record_size = schema.record_size();
    let mut out = Vec::with_capacity(header_size + indices.len() * record_size);
    out.extend_from_slice(&bytes[..header_size]);

    let (count_field, count_offset) = schema.repeat_field();
    let n = indices.len() as u64;
    let width = count_field.ty.width();
    out[count_offset..count_offset + width].copy_from_slice(&n.to_le_bytes()[..width]);

    for &i in indices {
        let start = header_size + i as usize * record_size;
        out.extend_from_slice(&bytes[start..start + record_size]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdd::{DAT1_MDD, DST1_MDD, parse_mdd};

    fn dat1() -> MddSchema {
        parse_mdd(DAT1_MDD).unwrap()
    }

    /// Writes a DAT1 file byte by byte from the layout table.
    fn dat1_file(events: &[(u64, f64)]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"DAT1");
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&7u16.to_le_bytes());
        b.extend_from_slice(&42u32.to_le_bytes());
        b.extend_from_slice(&(events.len() as u32).to_le_bytes());
        b.extend_from_slice(&[0u8; 16]);
        for (i, &(ts, energy)) in events.iter().enumerate() {
            b.extend_from_slice(&ts.to_le_bytes());
            b.extend_from_slice(&energy.to_le_bytes());
            b.extend_from_slice(&(10.0f32 + i as f32).to_le_bytes());
            b.extend_from_slice(&90.0f32.to_le_bytes());
            b.extend_from_slice(&(100u32 + i as u32).to_le_bytes());
            b.push(3);
            b.extend_from_slice(&[0u8; 11]);
        }
        b
    }

    fn three_events() -> Vec<u8> {
        dat1_file(&[(100, 1.0), (200, 2.0), (300, 3.0)])
    }

    #[test]
    fn zero_event_file() {
        let bytes = dat1_file(&[]);
        assert_eq!(bytes.len(), 32);
        let (file, events) = extract(&bytes, &dat1(), 1, "run.dat").unwrap();
        assert_eq!(file.event_count, 0);
        assert_eq!(file.time_min_ns, None);
        assert_eq!(file.time_max_ns, None);
        assert!(events.is_empty());
    }

    #[test]
    fn three_event_file_field_by_field() {
        let bytes = three_events();
        let (file, events) = extract(&bytes, &dat1(), 5, "a/run.dat").unwrap();
        assert_eq!(file.source_id, 5);
        assert_eq!(file.path, "a/run.dat");
        assert_eq!(file.size, 32 + 3 * 40);
        assert_eq!(file.sha256, Sha256Digest::of(&bytes));
        assert_eq!(file.format_name, "dat1");
        assert_eq!(file.event_count, 3);
        assert_eq!((file.time_min_ns, file.time_max_ns), (Some(100), Some(300)));
        assert_eq!(file.header_attrs["source_id"], AttrValue::Unsigned(7));
        assert_eq!(file.header_attrs["run_id"], AttrValue::Unsigned(42));
        assert_eq!(file.header_attrs.len(), 2);

        for (i, e) in events.iter().enumerate() {
            assert_eq!(e.event_index, i as u64);
            assert_eq!(e.timestamp_ns, 100 * (i as u64 + 1));
            assert_eq!(e.attrs["timestamp_ns"], AttrValue::Unsigned(e.timestamp_ns));
            assert_eq!(e.attrs["energy_tev"], AttrValue::Float(i as f64 + 1.0));
            assert_eq!(e.attrs["zenith_deg"], AttrValue::Float(10.0 + i as f64));
            assert_eq!(e.attrs["n_hits"], AttrValue::Unsigned(100 + i as u64));
            assert_eq!(e.attrs["quality"], AttrValue::Unsigned(3));
            assert!(!e.attrs.contains_key("azimuth_deg"));
            assert_eq!(e.attrs.len(), 5);
        }
    }

    #[test]
    fn bad_magic() {
        let mut bytes = three_events();
        bytes[..4].copy_from_slice(b"XXXX");
        assert_eq!(
            extract(&bytes, &dat1(), 0, "x"),
            Err(ExtractError::BadMagic {
                field: "magic".into(),
                offset: 0
            })
        );
    }

    #[test]
    fn truncated_and_trailing() {
        let mut bytes = dat1_file(&[(1, 1.0), (2, 2.0)]);
        bytes.truncate(32 + 40);
        assert_eq!(
            extract(&bytes, &dat1(), 0, "x"),
            Err(ExtractError::Truncated {
                expected: 112,
                actual: 72
            })
        );
        assert!(matches!(
            extract(&bytes[..10], &dat1(), 0, "x"),
            Err(ExtractError::Truncated { expected: 32, .. })
        ));
        let mut long = three_events();
        long.push(0);
        assert!(matches!(
            extract(&long, &dat1(), 0, "x"),
            Err(ExtractError::TrailingBytes { .. })
        ));
    }

    #[test]
    fn non_finite_meta_float() {
        let bytes = dat1_file(&[(1, 1.0), (2, f64::NAN)]);
        assert_eq!(
            extract(&bytes, &dat1(), 0, "x"),
            Err(ExtractError::NonFiniteFloat {
                field: "energy_tev".into(),
                index: Some(1)
            })
        );
    }

    #[test]
    fn non_finite_unmarked_float_is_ignored() {
        let mut bytes = three_events();
        // azimuth_deg of event 0 sits after timestamp, energy and zenith
        bytes[32 + 20..32 + 24].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(extract(&bytes, &dat1(), 0, "x").is_ok());
    }

    #[test]
    fn huge_declared_count_is_truncated_not_a_panic() {
        let dst1 = parse_mdd(DST1_MDD).unwrap();
        let mut bytes = vec![0u8; 32];
        bytes[..4].copy_from_slice(b"DST1");
        bytes[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            extract(&bytes, &dst1, 0, "x"),
            Err(ExtractError::Truncated { .. })
        ));
    }

    #[test]
    fn offsets() {
        let dst1 = parse_mdd(DST1_MDD).unwrap();
        assert_eq!(event_offset(&dat1(), 0), 32);
        assert_eq!(event_offset(&dat1(), 2), 112);
        assert_eq!(event_offset(&dst1, 1), 80);
    }

    #[test]
    fn subset_selection() {
        let bytes = three_events();
        let schema = dat1();

        let empty = synthesize_subset(&bytes, &schema, &[]).unwrap();
        assert_eq!(empty.len(), 32);
        let (file, events) = extract(&empty, &schema, 0, "x").unwrap();
        assert_eq!(file.event_count, 0);
        assert!(events.is_empty());

        let sub = synthesize_subset(&bytes, &schema, &[0, 2]).unwrap();
        let (file, events) = extract(&sub, &schema, 0, "x").unwrap();
        assert_eq!(file.event_count, 2);
        assert_eq!(file.header_attrs["run_id"], AttrValue::Unsigned(42));
        let ts: Vec<u64> = events.iter().map(|e| e.timestamp_ns).collect();
        assert_eq!(ts, [100, 300]);
        assert_eq!(events[1].event_index, 1);
        assert_eq!(events[1].attrs["n_hits"], AttrValue::Unsigned(102));

        assert_eq!(
            synthesize_subset(&bytes, &schema, &[3]),
            Err(ExtractError::IndexOutOfRange(3))
        );
        assert_eq!(
            synthesize_subset(&bytes, &schema, &[1, 1]),
            Err(ExtractError::UnsortedIndices)
        );
        assert_eq!(
            synthesize_subset(&bytes, &schema, &[2, 0]),
            Err(ExtractError::UnsortedIndices)
        );
    }

    #[test]
    fn full_subset_is_identity() {
        let bytes = three_events();
        assert_eq!(
            synthesize_subset(&bytes, &dat1(), &[0, 1, 2]).unwrap(),
            bytes
        );
    }

    #[test]
    fn attr_value_json_encoding() {
        assert_eq!(
            serde_json::to_string(&AttrValue::Unsigned(3)).unwrap(),
            r#"{"u":3}"#
        );
        assert_eq!(
            serde_json::to_string(&AttrValue::Signed(-3)).unwrap(),
            r#"{"i":-3}"#
        );
        assert_eq!(
            serde_json::to_string(&AttrValue::Float(1.5)).unwrap(),
            r#"{"f":1.5}"#
        );
        let v: AttrValue = serde_json::from_str(r#"{"f":0.1}"#).unwrap();
        assert!(v.bit_eq(&AttrValue::Float(0.1)));
    }
}
