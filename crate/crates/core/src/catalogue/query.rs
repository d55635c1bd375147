use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::extractor::{AttrValue, Attrs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    File,
    Event,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredicateOp {
    Eq,
    Lt,
    Le,
    Gt,
    Ge,
    Between,
}

/// A numeric condition on one attribute. Values compare as `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub attr: String,
    pub op: PredicateOp,
    pub lo: f64,
    #[serde(default)]
    pub hi: Option<f64>,
}

impl Predicate {
    pub fn new(attr: impl Into<String>, op: PredicateOp, value: f64) -> Self {
        Self {
            attr: attr.into(),
            op,
            lo: value,
            hi: None,
        }
    }

    pub fn between(attr: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            attr: attr.into(),
            op: PredicateOp::Between,
            lo,
            hi: Some(hi),
        }
    }

    pub fn test(&self, v: f64) -> bool {
        match self.op {
            PredicateOp::Eq => v == self.lo,
            PredicateOp::Lt => v < self.lo,
            PredicateOp::Le => v <= self.lo,
            PredicateOp::Gt => v > self.lo,
            PredicateOp::Ge => v >= self.lo,
            PredicateOp::Between => self.lo <= v && v <= self.hi.unwrap_or(f64::NAN),
        }
    }

    /// True when some value in `[min, max]` satisfies the predicate.
    pub fn feasible_within(&self, min: f64, max: f64) -> bool {
        match self.op {
            PredicateOp::Eq => min <= self.lo && self.lo <= max,
            PredicateOp::Lt => min < self.lo,
            PredicateOp::Le => min <= self.lo,
            PredicateOp::Gt => max > self.lo,
            PredicateOp::Ge => max >= self.lo,
            PredicateOp::Between => max >= self.lo && min <= self.hi.unwrap_or(f64::NAN),
        }
    }

    /// An attribute the row lacks never matches.
    pub fn matches(&self, attrs: &Attrs) -> bool {
        attrs
            .get(&self.attr)
            .is_some_and(|v: &AttrValue| self.test(v.as_f64()))
    }
}

/// Closed interval of nanosecond timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub from_ns: u64,
    pub to_ns: u64,
}

impl TimeRange {
    pub fn contains(&self, ts: u64) -> bool {
        self.from_ns <= ts && ts <= self.to_ns
    }

    pub fn overlaps(&self, lo: u64, hi: u64) -> bool {
        lo <= self.to_ns && hi >= self.from_ns
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub level: Level,
    #[serde(default)]
    pub time_range: Option<TimeRange>,
    #[serde(default)]
    pub predicates: Vec<Predicate>,
    #[serde(default)]
    pub sources: Option<BTreeSet<u16>>,
    #[serde(default)]
    pub limit: Option<u64>,
}

impl Query {
    pub fn match_all(level: Level) -> Self {
        Self {
            level,
            time_range: None,
            predicates: Vec::new(),
            sources: None,
            limit: None,
        }
    }

    pub fn with_time_range(mut self, from_ns: u64, to_ns: u64) -> Self {
        self.time_range = Some(TimeRange { from_ns, to_ns });
        self
    }

    pub fn with_predicate(mut self, p: Predicate) -> Self {
        self.predicates.push(p);
        self
    }

    pub fn with_sources(mut self, sources: impl IntoIterator<Item = u16>) -> Self {
        self.sources = Some(sources.into_iter().collect());
        self
    }

    pub fn with_limit(mut self, limit: u64) -> Self {
        self.limit = Some(limit);
        self
    }

    /// Checks the query's own consistency; returns a reason on failure.
    pub fn validate(&self) -> Result<(), String> {
        if let Some(r) = self.time_range
            && r.from_ns > r.to_ns
        {
            return Err(format!(
                "time_range from_ns {} is after to_ns {}",
                r.from_ns, r.to_ns
            ));
        }
        for p in &self.predicates {
            if !p.lo.is_finite() {
                return Err(format!("predicate on {:?}: lo is not finite", p.attr));
            }
            match (p.op, p.hi) {
                (PredicateOp::Between, None) => {
                    return Err(format!("predicate on {:?}: between needs hi", p.attr));
                }
                (PredicateOp::Between, Some(hi)) if !hi.is_finite() => {
                    return Err(format!("predicate on {:?}: hi is not finite", p.attr));
                }
                (PredicateOp::Between, Some(hi)) if p.lo > hi => {
                    return Err(format!(
                        "predicate on {:?}: between lo {} exceeds hi {}",
                        p.attr, p.lo, hi
                    ));
                }
                (PredicateOp::Between, Some(_)) => {}
                (_, Some(_)) => {
                    return Err(format!(
                        "predicate on {:?}: hi is only used by between",
                        p.attr
                    ));
                }
                (_, None) => {}
            }
        }
        Ok(())
    }

    pub fn source_allowed(&self, source_id: u16) -> bool {
        self.sources.as_ref().is_none_or(|s| s.contains(&source_id))
    }

    pub fn attrs_match(&self, attrs: &Attrs) -> bool {
        self.predicates.iter().all(|p| p.matches(attrs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predicate_ops() {
        let cases = [
            (PredicateOp::Eq, [false, true, false]),
            (PredicateOp::Lt, [true, false, false]),
            (PredicateOp::Le, [true, true, false]),
            (PredicateOp::Gt, [false, false, true]),
            (PredicateOp::Ge, [false, true, true]),
        ];
        for (op, expected) in cases {
            let p = Predicate::new("x", op, 2.0);
            let got = [1.0, 2.0, 3.0].map(|v| p.test(v));
            assert_eq!(got, expected, "{op:?}");
        }
        let b = Predicate::between("x", 1.5, 3.5);
        assert_eq!(
            [1.0, 1.5, 2.0, 3.5, 4.0].map(|v| b.test(v)),
            [false, true, true, true, false]
        );
    }

    #[test]
    fn feasibility_agrees_with_test_on_points() {
        let preds = [
            Predicate::new("x", PredicateOp::Eq, 2.0),
            Predicate::new("x", PredicateOp::Lt, 2.0),
            Predicate::new("x", PredicateOp::Le, 2.0),
            Predicate::new("x", PredicateOp::Gt, 2.0),
            Predicate::new("x", PredicateOp::Ge, 2.0),
            Predicate::between("x", 1.5, 2.5),
        ];
        for p in &preds {
            for v in [0.0, 1.5, 2.0, 2.5, 4.0] {
                assert_eq!(p.feasible_within(v, v), p.test(v), "{p:?} at {v}");
            }
        }
        assert!(!Predicate::new("x", PredicateOp::Ge, 5.0).feasible_within(1.0, 3.0));
    }

    #[test]
    fn validation() {
        assert!(Query::match_all(Level::Event).validate().is_ok());
        assert!(
            Query::match_all(Level::File)
                .with_time_range(10, 5)
                .validate()
                .is_err()
        );
        assert!(
            Query::match_all(Level::Event)
                .with_predicate(Predicate::between("e", 3.0, 1.0))
                .validate()
                .is_err()
        );
        let mut no_hi = Predicate::between("e", 1.0, 2.0);
        no_hi.hi = None;
        assert!(
            Query::match_all(Level::Event)
                .with_predicate(no_hi)
                .validate()
                .is_err()
        );
        let mut stray_hi = Predicate::new("e", PredicateOp::Lt, 1.0);
        stray_hi.hi = Some(2.0);
        assert!(
            Query::match_all(Level::Event)
                .with_predicate(stray_hi)
                .validate()
                .is_err()
        );
        assert!(
            Query::match_all(Level::Event)
                .with_predicate(Predicate::new("e", PredicateOp::Lt, f64::NAN))
                .validate()
                .is_err()
        );
    }

    #[test]
    fn json_shape() {
        let q: Query = serde_json::from_str(
            r#"{"level":"event","time_range":null,"predicates":[{"attr":"energy_tev","op":"between","lo":1.5,"hi":3.5}],"sources":[2,1],"limit":null}"#,
        )
        .unwrap();
        assert_eq!(q.level, Level::Event);
        assert_eq!(q.predicates[0], Predicate::between("energy_tev", 1.5, 3.5));
        assert_eq!(q.sources, Some(BTreeSet::from([1, 2])));
        let minimal: Query = serde_json::from_str(r#"{"level":"file"}"#).unwrap();
        assert_eq!(minimal, Query::match_all(Level::File));
    }
}
