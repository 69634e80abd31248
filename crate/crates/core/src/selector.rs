//! Rule-based recommendation of a model class from dataset meta-attributes.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meta::MetaAttributeReport;

pub const DEFAULT_RULES: &str = include_str!("../rules/default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    MarkovClass,
    RnnLstmClass,
    HmRnnClass,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::MarkovClass => "markov_class",
            Verdict::RnnLstmClass => "rnn_lstm_class",
            Verdict::HmRnnClass => "hm_rnn_class",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    PoisPerUser,
    MiBits,
    LddDepth,
    AvgTrajectoryLength,
    SpanMonths,
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Attribute::PoisPerUser => "pois_per_user",
            Attribute::MiBits => "mi_bits",
            Attribute::LddDepth => "ldd_depth",
            Attribute::AvgTrajectoryLength => "avg_trajectory_length",
            Attribute::SpanMonths => "span_months",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
}

impl Op {
    fn holds(self, x: f64, v: f64) -> bool {
        match self {
            Op::Lt => x < v,
            Op::Le => x <= v,
            Op::Gt => x > v,
            Op::Ge => x >= v,
            Op::Eq => x == v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub attribute: Attribute,
    pub op: Op,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionRule {
    pub id: String,
    pub verdict: Verdict,
    pub rationale: String,
    /// All must hold; empty means the rule always fires.
    #[serde(default)]
    pub conditions: Vec<Condition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSet {
    #[serde(rename = "rule")]
    pub rules: Vec<SelectionRule>,
}

impl RuleSet {
    pub fn parse(text: &str) -> Result<RuleSet> {
        let set: RuleSet =
            toml::from_str(text).map_err(|e| Error::Rules(format!("bad rule file: {e}")))?;
        set.check()?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<RuleSet> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn default_rules() -> RuleSet {
        Self::parse(DEFAULT_RULES).expect("built-in rules are valid")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("rule sets serialize")
    }

    /// A rule set is total when some rule has no conditions.
    fn check(&self) -> Result<()> {
        if !self.rules.iter().any(|r| r.conditions.is_empty()) {
            return Err(Error::Rules("rule set not total".into()));
        }
        for r in &self.rules {
            if r.conditions.iter().any(|c| !c.value.is_finite()) {
                return Err(Error::Rules(format!("rule {} has a non-finite threshold", r.id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attributes {
    pub pois_per_user: f64,
    pub mi_bits: f64,
    /// Distance at which `mi_bits` was measured.
    pub mi_distance: Option<usize>,
    /// 0 when no distance reaches the depth threshold.
    pub ldd_depth: f64,
    pub avg_trajectory_length: f64,
    pub span_months: f64,
}

impl Attributes {
    pub fn from_report(r: &MetaAttributeReport) -> Result<Attributes> {
        let mut missing = Vec::new();
        let finite = |x: f64, name: &'static str, missing: &mut Vec<&'static str>| {
            if !x.is_finite() {
                missing.push(name);
            }
            x
        };
        let pois_per_user = finite(r.pois_per_user, "pois_per_user", &mut missing);
        let avg_trajectory_length = finite(r.symbol_count.mean, "avg_trajectory_length", &mut missing);
        let span_months = finite(r.span_months, "span_months", &mut missing);
        let mi = r.mi_max_beyond_bigram;
        if mi.is_none() {
            missing.push("mi_bits");
        }
        if !missing.is_empty() {
            return Err(Error::Missing(format!(
                "report attributes: {}",
                missing.join(", ")
            )));
        }
        Ok(Attributes {
            pois_per_user,
            mi_bits: mi.map_or(0.0, |m| m.bits),
            mi_distance: mi.map(|m| m.d),
            ldd_depth: r.ldd_depth.unwrap_or(0) as f64,
            avg_trajectory_length,
            span_months,
        })
    }

    pub fn get(&self, a: Attribute) -> f64 {
        match a {
            Attribute::PoisPerUser => self.pois_per_user,
            Attribute::MiBits => self.mi_bits,
            Attribute::LddDepth => self.ldd_depth,
            Attribute::AvgTrajectoryLength => self.avg_trajectory_length,
            Attribute::SpanMonths => self.span_months,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionOutcome {
    pub condition: Condition,
    pub observed: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub rule: String,
    pub verdict: Verdict,
    pub conditions: Vec<ConditionOutcome>,
    pub matched: bool,
    /// The first matching rule.
    pub fired: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub verdict: Verdict,
    pub rule: String,
    pub rationale: String,
    pub attributes: Attributes,
    /// Every rule in declared order, whether or not it fired.
    pub trace: Vec<TraceEntry>,
}

impl Recommendation {
    pub fn render(&self) -> String {
        let mut s = format!("verdict: {} (rule {}: {})\n", self.verdict, self.rule, self.rationale);
        if let Some(d) = self.attributes.mi_distance {
            s.push_str(&format!("mi_bits = {} measured at d = {d}\n", self.attributes.mi_bits));
        }
        for t in &self.trace {
            let conds: Vec<String> = t
                .conditions
                .iter()
                .map(|c| {
                    format!(
                        "{} {} {} [{} -> {}]",
                        c.condition.attribute,
                        op_str(c.condition.op),
                        c.condition.value,
                        c.observed,
                        c.holds
                    )
                })
                .collect();
            s.push_str(&format!(
                "{} {:<8} {:<15} {}\n",
                if t.fired { "*" } else { " " },
                t.rule,
                t.verdict.to_string(),
                if conds.is_empty() { "(always)".to_string() } else { conds.join(" AND ") }
            ));
        }
        s
    }
}

fn op_str(op: Op) -> &'static str {
    match op {
        Op::Lt => "<",
        Op::Le => "<=",
        Op::Gt => ">",
        Op::Ge => ">=",
        Op::Eq => "==",
    }
}

/// First-match evaluation over the attributes.
pub fn recommend_attributes(attrs: &Attributes, rules: &RuleSet) -> Recommendation {
    let mut fired: Option<usize> = None;
    let trace: Vec<TraceEntry> = rules
        .rules
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let conditions: Vec<ConditionOutcome> = r
                .conditions
                .iter()
                .map(|c| {
                    let observed = attrs.get(c.attribute);
                    ConditionOutcome {
                        condition: *c,
                        observed,
                        holds: c.op.holds(observed, c.value),
                    }
                })
                .collect();
            let matched = conditions.iter().all(|c| c.holds);
            let first = matched && fired.is_none();
            if first {
                fired = Some(i);
            }
            TraceEntry {
                rule: r.id.clone(),
                verdict: r.verdict,
                conditions,
                matched,
                fired: first,
            }
        })
        .collect();
    let rule = &rules.rules[fired.expect("checked rule sets have a catch-all")];
    Recommendation {
        verdict: rule.verdict,
        rule: rule.id.clone(),
        rationale: rule.rationale.clone(),
        attributes: *attrs,
        trace,
    }
}

pub fn recommend(report: &MetaAttributeReport, rules: &RuleSet) -> Result<Recommendation> {
    Ok(recommend_attributes(&Attributes::from_report(report)?, rules))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn attrs(pois: f64, mi: f64, depth: f64, span: f64) -> Attributes {
        Attributes {
            pois_per_user: pois,
            mi_bits: mi,
            mi_distance: Some(2),
            ldd_depth: depth,
            avg_trajectory_length: 1000.0,
            span_months: span,
        }
    }

    #[test]
    fn threshold_examples() {
        let rules = RuleSet::default_rules();
        let r = recommend_attributes(&attrs(80.0, 1.5, 1.0, 12.0), &rules);
        assert_eq!((r.verdict, r.rule.as_str()), (Verdict::MarkovClass, "R1"));
        let r = recommend_attributes(&attrs(80.0, 2.5, 1.0, 12.0), &rules);
        assert_eq!((r.verdict, r.rule.as_str()), (Verdict::RnnLstmClass, "R2"));
        let r = recommend_attributes(&attrs(150.0, 1.0, 4.0, 30.0), &rules);
        assert_eq!((r.verdict, r.rule.as_str()), (Verdict::HmRnnClass, "R3"));
        assert_eq!(r.trace.len(), 4);
        assert_eq!(r.trace.iter().filter(|t| t.fired).count(), 1);
    }

    #[test]
    fn boundary_mi_two_fires_r2() {
        let r = recommend_attributes(&attrs(99.0, 2.0, 0.0, 1.0), &RuleSet::default_rules());
        assert_eq!(r.rule, "R2");
    }

    #[test]
    fn intermediate_regime_defaults() {
        let r = recommend_attributes(&attrs(150.0, 1.0, 2.0, 30.0), &RuleSet::default_rules());
        assert_eq!(r.rule, "default");
        assert_eq!(r.verdict, Verdict::RnnLstmClass);
    }

    #[test]
    fn missing_default_is_rejected() {
        let text = r#"
            [[rule]]
            id = "only"
            verdict = "markov_class"
            rationale = "x"
            conditions = [{ attribute = "mi_bits", op = "<", value = 2.0 }]
        "#;
        let e = RuleSet::parse(text).unwrap_err();
        assert_eq!(e.to_string(), "rule set not total");
    }

    #[test]
    fn attribute_display_matches_rule_file_names() {
        use Attribute::*;
        for a in [PoisPerUser, MiBits, LddDepth, AvgTrajectoryLength, SpanMonths] {
            assert_eq!(serde_json::to_value(a).unwrap(), a.to_string());
        }
    }

    #[test]
    fn default_rules_round_trip() {
        let rules = RuleSet::default_rules();
        let again = RuleSet::parse(&rules.to_toml()).unwrap();
        assert_eq!(again, rules);
        for pois in [10.0, 99.0, 100.0, 500.0] {
            for mi in [0.0, 1.99, 2.0, 3.0] {
                for depth in [0.0, 3.0, 4.0] {
                    let a = attrs(pois, mi, depth, 24.0);
                    assert_eq!(recommend_attributes(&a, &rules), recommend_attributes(&a, &again));
                }
            }
        }
    }

    #[test]
    fn reordering_changes_boundary_outcome() {
        let mut rules = RuleSet::default_rules();
        let a = attrs(99.0, 2.0, 0.0, 1.0);
        assert_eq!(recommend_attributes(&a, &rules).rule, "R2");
        // an inclusive copy of R1 placed first now takes the boundary point
        let mut r1 = rules.rules[0].clone();
        r1.id = "R1le".into();
        r1.conditions[1].op = Op::Le;
        rules.rules.insert(0, r1);
        let rec = recommend_attributes(&a, &rules);
        assert_eq!(rec.rule, "R1le");
        assert!(rec.trace[2].matched && !rec.trace[2].fired);
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = DEFAULT_RULES.replace("rationale = \"intermediate", "typo = 1\nrationale = \"intermediate");
        assert!(RuleSet::parse(&text).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn every_point_gets_a_verdict(
            pois in 0.0f64..1000.0,
            mi in 0.0f64..8.0,
            depth in 0u32..2000,
            len in 0.0f64..1e6,
            span in 0.0f64..120.0,
        ) {
            let a = Attributes {
                pois_per_user: pois,
                mi_bits: mi,
                mi_distance: None,
                ldd_depth: depth as f64,
                avg_trajectory_length: len,
                span_months: span,
            };
            let r = recommend_attributes(&a, &RuleSet::default_rules());
            prop_assert_eq!(r.trace.iter().filter(|t| t.fired).count(), 1);
            prop_assert_eq!(&r, &recommend_attributes(&a, &RuleSet::default_rules()));
        }
    }
}
