//! Metadata description files.
//!
//! An MDD declares the byte layout of a binary event file: a fixed header
//! followed by `header.<count>` fixed-size event records. Fields carrying the
//! `meta` mark are pulled into the catalogue by the extractor; exactly one
//! event field is the `key=timestamp` clock.
//!
//! ```text
//! format dat1
//! endian little
//! header:
//!   magic: bytes[4] expect "DAT1"
//!   event_count: u32
//! events repeat header.event_count:
//!   timestamp_ns: u64 meta key=timestamp
//! ```
//!
//! Field lines are indented by exactly two spaces; `#` starts a comment.

use std::collections::HashSet;
use std::fmt;
use std::fmt::Write as _;

/// Reference schema for raw event files.
pub const DAT1_MDD: &str = include_str!("../schemas/dat1.mdd");
/// Reference schema for processed event files.
pub const DST1_MDD: &str = include_str!("../schemas/dst1.mdd");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MddError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("events repeat header.{0}, but the header has no such field")]
    UnknownRepeatRef(String),
    #[error("duplicate field name {0:?}")]
    DuplicateFieldName(String),
    #[error("no event field is marked key=timestamp")]
    MissingTimestampKey,
    #[error("more than one event field is marked key=timestamp")]
    MultipleTimestampKeys,
    #[error("field {field:?}: expect value has {actual} bytes, field is {expected} bytes wide")]
    InvalidExpectWidth {
        field: String,
        expected: usize,
        actual: usize,
    },
    #[error("unsupported endianness {0:?}")]
    UnsupportedEndianness(String),
}

fn syntax(line: usize, reason: impl Into<String>) -> MddError {
    MddError::Syntax {
        line,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScalarType {
    U8,
    U16,
    U32,
    U64,
    I8,
    I16,
    I32,
    I64,
    F32,
    F64,
    Bytes(usize),
}

impl ScalarType {
    pub fn width(self) -> usize {
        match self {
            ScalarType::U8 | ScalarType::I8 => 1,
            ScalarType::U16 | ScalarType::I16 => 2,
            ScalarType::U32 | ScalarType::I32 | ScalarType::F32 => 4,
            ScalarType::U64 | ScalarType::I64 | ScalarType::F64 => 8,
            ScalarType::Bytes(n) => n,
        }
    }

    pub fn is_numeric(self) -> bool {
        !matches!(self, ScalarType::Bytes(_))
    }

    fn parse(token: &str) -> Option<Self> {
        Some(match token {
            "u8" => ScalarType::U8,
            "u16" => ScalarType::U16,
            "u32" => ScalarType::U32,
            "u64" => ScalarType::U64,
            "i8" => ScalarType::I8,
            "i16" => ScalarType::I16,
            "i32" => ScalarType::I32,
            "i64" => ScalarType::I64,
            "f32" => ScalarType::F32,
            "f64" => ScalarType::F64,
            _ => {
                let n = token.strip_prefix("bytes[")?.strip_suffix(']')?;
                if n.is_empty() || !n.bytes().all(|b| b.is_ascii_digit()) {
                    return None;
                }
                match n.parse::<usize>() {
                    Ok(n) if n > 0 => ScalarType::Bytes(n),
                    _ => return None,
                }
            }
        })
    }
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarType::U8 => f.write_str("u8"),
            ScalarType::U16 => f.write_str("u16"),
            ScalarType::U32 => f.write_str("u32"),
            ScalarType::U64 => f.write_str("u64"),
            ScalarType::I8 => f.write_str("i8"),
            ScalarType::I16 => f.write_str("i16"),
            ScalarType::I32 => f.write_str("i32"),
            ScalarType::I64 => f.write_str("i64"),
            ScalarType::F32 => f.write_str("f32"),
            ScalarType::F64 => f.write_str("f64"),
            ScalarType::Bytes(n) => write!(f, "bytes[{n}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: String,
    pub ty: ScalarType,
    pub is_meta: bool,
    /// Raw bytes the field must hold, from an ASCII literal.
    pub expect: Option<Vec<u8>>,
    pub is_timestamp_key: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endianness {
    Little,
}

/// A validated MDD. Only constructible through [`parse_mdd`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MddSchema {
    format_name: String,
    endianness: Endianness,
    header_fields: Vec<FieldSpec>,
    event_fields: Vec<FieldSpec>,
    repeat_ref: String,
    header_offsets: Vec<usize>,
    event_offsets: Vec<usize>,
    header_size: usize,
    record_size: usize,
    repeat_index: usize,
    timestamp_index: usize,
}

impl MddSchema {
    pub fn format_name(&self) -> &str {
        &self.format_name
    }

    pub fn endianness(&self) -> Endianness {
        self.endianness
    }

    pub fn header_fields(&self) -> &[FieldSpec] {
        &self.header_fields
    }

    pub fn event_fields(&self) -> &[FieldSpec] {
        &self.event_fields
    }

    pub fn repeat_ref(&self) -> &str {
        &self.repeat_ref
    }

    /// Sum of header field widths.
    pub fn header_size(&self) -> usize {
        self.header_size
    }

    /// Sum of event field widths.
    pub fn record_size(&self) -> usize {
        self.record_size
    }

    /// Header fields paired with their byte offsets from the start of the file.
    pub fn header_layout(&self) -> impl Iterator<Item = (&FieldSpec, usize)> {
        self.header_fields
            .iter()
            .zip(self.header_offsets.iter().copied())
    }

    /// Event fields paired with their byte offsets from the start of a record.
    pub fn event_layout(&self) -> impl Iterator<Item = (&FieldSpec, usize)> {
        self.event_fields
            .iter()
            .zip(self.event_offsets.iter().copied())
    }

    /// The header field holding the event count, with its offset.
    pub fn repeat_field(&self) -> (&FieldSpec, usize) {
        (
            &self.header_fields[self.repeat_index],
            self.header_offsets[self.repeat_index],
        )
    }

    /// The event field marked `key=timestamp`, with its offset in the record.
    pub fn timestamp_field(&self) -> (&FieldSpec, usize) {
        (
            &self.event_fields[self.timestamp_index],
            self.event_offsets[self.timestamp_index],
        )
    }

    pub fn meta_field_count(&self) -> usize {
        self.header_fields
            .iter()
            .chain(&self.event_fields)
            .filter(|f| f.is_meta)
            .count()
    }

    /// Canonical MDD text; parsing it yields an identical schema.
    pub fn to_mdd_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "format {}", self.format_name);
        out.push_str("endian little\n");
        out.push_str("header:\n");
        for f in &self.header_fields {
            let _ = write!(out, "  {}: {}", f.name, f.ty);
            if let Some(expect) = &f.expect {
                // expect literals are printable ASCII by construction
                let _ = write!(out, " expect \"{}\"", String::from_utf8_lossy(expect));
            }
            if f.is_meta {
                out.push_str(" meta");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "events repeat header.{}:", self.repeat_ref);
        for f in &self.event_fields {
            let _ = write!(out, "  {}: {}", f.name, f.ty);
            if f.is_meta {
                out.push_str(" meta");
            }
            if f.is_timestamp_key {
                out.push_str(" key=timestamp");
            }
            out.push('\n');
        }
        out
    }
}

/// Size of the fixed header of files described by `schema`.
pub fn header_size(schema: &MddSchema) -> usize {
    schema.header_size()
}

/// Size of one event record of files described by `schema`.
pub fn record_size(schema: &MddSchema) -> usize {
    schema.record_size()
}

pub fn is_identifier(s: &str) -> bool {
    let mut bytes = s.bytes();
    match bytes.next() {
        Some(b) if b.is_ascii_lowercase() || b == b'_' => {}
        _ => return false,
    }
    bytes.all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// Removes a trailing `#` comment, ignoring `#` inside a quoted literal.
fn strip_comment(line: &str) -> &str {
    let mut in_quotes = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return &line[..i],
            _ => {}
        }
    }
    line
}

#[derive(PartialEq)]
enum Section {
    Format,
    Endian,
    HeaderStart,
    Header,
    Events,
}

/// Parses and validates MDD text.
pub fn parse_mdd(text: &str) -> Result<MddSchema, MddError> {
    let mut section = Section::Format;
    let mut format_name = String::new();
    let mut header_fields = Vec::new();
    let mut event_fields = Vec::new();
    let mut repeat_ref = String::new();
    let mut repeat_line = 0;
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = strip_comment(raw).trim_end();
        if line.trim_start().is_empty() {
            continue;
        }
        last_line = lineno;
        if let Some(body) = line.strip_prefix("  ") {
            if body.starts_with(char::is_whitespace) {
                return Err(syntax(
                    lineno,
                    "field lines are indented exactly two spaces",
                ));
            }
            match section {
                Section::Header => header_fields.push(parse_field(lineno, body, true)?),
                Section::Events => event_fields.push(parse_field(lineno, body, false)?),
                _ => {
                    return Err(syntax(
                        lineno,
                        "field line outside a header or events section",
                    ));
                }
            }
            continue;
        }
        if line.starts_with(char::is_whitespace) {
            return Err(syntax(
                lineno,
                "field lines are indented exactly two spaces",
            ));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match section {
            Section::Format => match tokens.as_slice() {
                ["format", name] if is_identifier(name) => {
                    format_name = name.to_string();
                    section = Section::Endian;
                }
                ["format", name] => {
                    return Err(syntax(lineno, format!("invalid format name {name:?}")));
                }
                _ => return Err(syntax(lineno, "expected `format <ident>`")),
            },
            Section::Endian => match tokens.as_slice() {
                ["endian", "little"] => section = Section::HeaderStart,
                ["endian", other] => {
                    return Err(MddError::UnsupportedEndianness(other.to_string()));
                }
                _ => return Err(syntax(lineno, "expected `endian little`")),
            },
            Section::HeaderStart => {
                if tokens.as_slice() != ["header:"] {
                    return Err(syntax(lineno, "expected `header:`"));
                }
                section = Section::Header;
            }
            Section::Header => {
                let target = match tokens.as_slice() {
                    ["events", "repeat", target] => target
                        .strip_suffix(':')
                        .and_then(|t| t.strip_prefix("header.")),
                    _ => None,
                };
                match target {
                    Some(name) if is_identifier(name) => {
                        repeat_ref = name.to_string();
                        repeat_line = lineno;
                        section = Section::Events;
                    }
                    _ => return Err(syntax(lineno, "expected `events repeat header.<name>:`")),
                }
            }
            Section::Events => {
                return Err(syntax(lineno, "unexpected line after the events section"));
            }
        }
    }

    if section != Section::Events {
        let what = match section {
            Section::Format => "missing `format` line",
            Section::Endian => "missing `endian` line",
            Section::HeaderStart => "missing `header:` section",
            _ => "missing `events repeat` section",
        };
        return Err(syntax(last_line + 1, what));
    }
    if header_fields.is_empty() {
        return Err(syntax(repeat_line, "header declares no fields"));
    }
    if event_fields.is_empty() {
        return Err(syntax(last_line + 1, "events section declares no fields"));
    }

    for fields in [&header_fields, &event_fields] {
        let mut seen = HashSet::new();
        for f in fields {
            if !seen.insert(f.name.as_str()) {
                return Err(MddError::DuplicateFieldName(f.name.clone()));
            }
        }
    }

    let repeat_index = header_fields
        .iter()
        .position(|f| f.name == repeat_ref)
        .ok_or_else(|| MddError::UnknownRepeatRef(repeat_ref.clone()))?;
    if !matches!(
        header_fields[repeat_index].ty,
        ScalarType::U16 | ScalarType::U32 | ScalarType::U64
    ) {
        return Err(syntax(
            repeat_line,
            format!("repeat field {repeat_ref:?} must be u16, u32 or u64"),
        ));
    }

    let mut keys = event_fields
        .iter()
        .enumerate()
        .filter(|(_, f)| f.is_timestamp_key);
    let timestamp_index = match (keys.next(), keys.next()) {
        (None, _) => return Err(MddError::MissingTimestampKey),
        (Some(_), Some(_)) => return Err(MddError::MultipleTimestampKeys),
        (Some((i, _)), None) => i,
    };

    let offsets = |fields: &[FieldSpec]| -> (Vec<usize>, usize) {
        let mut at = 0;
        let offs = fields
            .iter()
            .map(|f| {
                let o = at;
                at += f.ty.width();
                o
            })
            .collect();
        (offs, at)
    };
    let (header_offsets, header_size) = offsets(&header_fields);
    let (event_offsets, record_size) = offsets(&event_fields);

    Ok(MddSchema {
        format_name,
        endianness: Endianness::Little,
        header_fields,
        event_fields,
        repeat_ref,
        header_offsets,
        event_offsets,
        header_size,
        record_size,
        repeat_index,
        timestamp_index,
    })
}

fn parse_field(lineno: usize, body: &str, in_header: bool) -> Result<FieldSpec, MddError> {
    let (name, rest) = body
        .split_once(':')
        .ok_or_else(|| syntax(lineno, "expected `<name>: <type>`"))?;
    if !is_identifier(name) {
        return Err(syntax(lineno, format!("invalid field name {name:?}")));
    }
    let rest = rest.trim_start();
    let (ty_token, mut rest) = rest.split_at(rest.find(char::is_whitespace).unwrap_or(rest.len()));
    let ty = ScalarType::parse(ty_token)
        .ok_or_else(|| syntax(lineno, format!("unknown type {ty_token:?}")))?;

    let mut field = FieldSpec {
        name: name.to_string(),
        ty,
        is_meta: false,
        expect: None,
        is_timestamp_key: false,
    };
    loop {
        rest = rest.trim_start();
        if rest.is_empty() {
            break;
        }
        if let Some(after) = rest.strip_prefix("expect") {
            if !in_header {
                return Err(syntax(lineno, "`expect` is only allowed on header fields"));
            }
            if field.expect.is_some() {
                return Err(syntax(lineno, "duplicate `expect`"));
            }
            let after = after.trim_start();
            let literal = after
                .strip_prefix('"')
                .and_then(|s| s.split_once('"'))
                .ok_or_else(|| syntax(lineno, "`expect` needs a quoted ASCII literal"))?;
            if !literal.0.bytes().all(|b| (0x20..0x7f).contains(&b)) {
                return Err(syntax(lineno, "`expect` literal must be printable ASCII"));
            }
            if !literal.1.is_empty() && !literal.1.starts_with(char::is_whitespace) {
                return Err(syntax(lineno, "unexpected text after `expect` literal"));
            }
            field.expect = Some(literal.0.as_bytes().to_vec());
            rest = literal.1;
            continue;
        }
        let (token, tail) = rest.split_at(rest.find(char::is_whitespace).unwrap_or(rest.len()));
        match token {
            "meta" if !field.is_meta => field.is_meta = true,
            "key=timestamp" if !in_header && !field.is_timestamp_key => {
                field.is_timestamp_key = true
            }
            "meta" | "key=timestamp" if token_seen(&field, token) => {
                return Err(syntax(lineno, format!("duplicate `{token}`")));
            }
            "key=timestamp" => {
                return Err(syntax(
                    lineno,
                    "`key=timestamp` is only allowed on event fields",
                ));
            }
            other => return Err(syntax(lineno, format!("unexpected token {other:?}"))),
        }
        rest = tail;
    }

    if let Some(expect) = &field.expect
        && expect.len() != ty.width()
    {
        return Err(MddError::InvalidExpectWidth {
            field: field.name,
            expected: ty.width(),
            actual: expect.len(),
        });
    }
    if field.is_meta && !ty.is_numeric() {
        return Err(syntax(lineno, "`meta` requires a numeric type"));
    }
    if field.is_timestamp_key && (ty != ScalarType::U64 || !field.is_meta) {
        return Err(syntax(
            lineno,
            "`key=timestamp` requires a `u64 meta` field",
        ));
    }
    Ok(field)
}

fn token_seen(field: &FieldSpec, token: &str) -> bool {
    match token {
        "meta" => field.is_meta,
        _ => field.is_timestamp_key,
    }
}
