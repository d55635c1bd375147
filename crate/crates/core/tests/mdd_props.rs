use appds::mdd::{DAT1_MDD, DST1_MDD, MddError, ScalarType, parse_mdd};
use proptest::prelude::*;

const NUMERIC: [&str; 10] = [
    "u8", "u16", "u32", "u64", "i8", "i16", "i32", "i64", "f32", "f64",
];

#[derive(Debug, Clone)]
enum FieldKind {
    Numeric(usize, bool),
    Bytes(usize, Option<String>),
}

fn field_kind() -> impl Strategy<Value = FieldKind> {
    prop_oneof![
        (0..NUMERIC.len(), any::<bool>()).prop_map(|(t, m)| FieldKind::Numeric(t, m)),
        (1usize..24, any::<bool>()).prop_flat_map(|(n, with_expect)| {
            let literal = if with_expect {
                // printable ASCII minus the quote character
                proptest::collection::vec(prop_oneof![0x20u8..0x22, 0x23u8..0x7f], n)
                    .prop_map(|b| Some(String::from_utf8(b).unwrap()))
                    .boxed()
            } else {
                Just(None).boxed()
            };
            literal.prop_map(move |l| FieldKind::Bytes(n, l))
        }),
    ]
}

fn render(kind: &FieldKind, name: &str) -> String {
    match kind {
        FieldKind::Numeric(t, meta) => {
            format!(
                "  {name}: {}{}",
                NUMERIC[*t],
                if *meta { " meta" } else { "" }
            )
        }
        FieldKind::Bytes(n, Some(l)) => format!("  {name}: bytes[{n}] expect \"{l}\""),
        FieldKind::Bytes(n, None) => format!("  {name}: bytes[{n}]"),
    }
}

/// Random well-formed MDD text: header fields, one count field, event
/// fields with one timestamp key.
fn mdd_text() -> impl Strategy<Value = String> {
    (
        proptest::collection::vec(field_kind(), 0..6),
        0usize..3,
        any::<prop::sample::Index>(),
        proptest::collection::vec(field_kind(), 0..6),
        any::<prop::sample::Index>(),
    )
        .prop_map(|(header, count_ty, count_at, events, ts_at)| {
            let mut h: Vec<String> = header
                .iter()
                .enumerate()
                .map(|(i, k)| render(k, &format!("h{i}")))
                .collect();
            let count_line = format!("  count: {} meta", ["u16", "u32", "u64"][count_ty]);
            h.insert(count_at.index(h.len() + 1), count_line);
            let mut e: Vec<String> = events
                .iter()
                .map(|k| match k {
                    // expect is header-only
                    FieldKind::Bytes(n, _) => FieldKind::Bytes(*n, None),
                    other => other.clone(),
                })
                .enumerate()
                .map(|(i, k)| render(&k, &format!("e{i}")))
                .collect();
            e.insert(
                ts_at.index(e.len() + 1),
                "  ts: u64 meta key=timestamp".to_string(),
            );
            format!(
                "format gen\nendian little\nheader:\n{}\nevents repeat header.count:\n{}\n",
                h.join("\n"),
                e.join("\n")
            )
        })
}

proptest! {
    #[test]
    fn generated_schemas_round_trip(text in mdd_text()) {
        let schema = parse_mdd(&text).unwrap();
        let canonical = schema.to_mdd_text();
        let reparsed = parse_mdd(&canonical).unwrap();
        prop_assert_eq!(&reparsed, &schema);
        prop_assert_eq!(reparsed.to_mdd_text(), canonical);

        let widths: usize = schema.header_fields().iter().map(|f| f.ty.width()).sum();
        prop_assert_eq!(schema.header_size(), widths);
        let widths: usize = schema.event_fields().iter().map(|f| f.ty.width()).sum();
        prop_assert_eq!(schema.record_size(), widths);
        prop_assert_eq!(schema.timestamp_field().0.name.as_str(), "ts");
    }

    #[test]
    fn expect_width_must_match(n in 1usize..16, len in 0usize..20) {
        prop_assume!(n != len);
        let literal = "x".repeat(len);
        let text = format!(
            "format t\nendian little\nheader:\n  magic: bytes[{n}] expect \"{literal}\"\n  n: u32\nevents repeat header.n:\n  ts: u64 meta key=timestamp\n"
        );
        prop_assert_eq!(
            parse_mdd(&text),
            Err(MddError::InvalidExpectWidth { field: "magic".into(), expected: n, actual: len })
        );
    }

    #[test]
    fn parser_is_total(text in "[a-z0-9:_\\[\\]\" .=#\n]{0,200}") {
        let _ = parse_mdd(&text);
    }
}

#[test]
fn reference_layouts_have_fixed_sizes() {
    let dat1 = parse_mdd(DAT1_MDD).unwrap();
    let dst1 = parse_mdd(DST1_MDD).unwrap();
    assert_eq!((dat1.header_size(), dat1.record_size()), (32, 40));
    assert_eq!((dst1.header_size(), dst1.record_size()), (32, 48));
    assert_eq!(dat1.header_fields()[0].ty, ScalarType::Bytes(4));
}
