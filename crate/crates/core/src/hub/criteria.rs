//! Diagnostic criteria sentences turned into numeric intervals with a label,
//! e.g. "EF below 40% indicates considerably reduced function".

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::kb::embed::{dot, normalize};
use crate::kb::HashedBowEncoder;
use crate::quant::EfGrade;

/// Output key of the quantity a criterion constrains.
pub const EF_METRIC: &str = "ef_percent";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub value: f64,
    pub inclusive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub text: String,
    pub metric: Option<String>,
    pub lower: Option<Bound>,
    pub upper: Option<Bound>,
    pub label: String,
}

impl Criterion {
    pub fn is_numeric(&self) -> bool {
        self.metric.is_some() && (self.lower.is_some() || self.upper.is_some())
    }

    pub fn contains(&self, v: f64) -> bool {
        let lo = self.lower.map_or(true, |b| if b.inclusive { v >= b.value } else { v > b.value });
        let hi = self.upper.map_or(true, |b| if b.inclusive { v <= b.value } else { v < b.value });
        lo && hi
    }
}

const NUM: &str = r"(\d+(?:\.\d+)?)\s*%?";

struct Patterns {
    metric_ef: Regex,
    between: Regex,
    lower_incl: [Regex; 2],
    lower_excl: Regex,
    upper_incl: [Regex; 2],
    upper_excl: Regex,
    label: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| {
        let r = |s: &str| Regex::new(&s.replace("NUM", NUM)).expect("criteria regex");
        Patterns {
            metric_ef: r(r"(?i)\b(lvef|ef|ejection fraction)\b"),
            between: r(r"(?i)\bbetween\s+NUM\s+and\s+NUM"),
            lower_incl: [r(r"(?i)(?:\bat least|\bno less than|≥|>=)\s*NUM"), r(r"(?i)NUM\s*(?:or above|or higher|or more|or greater)")],
            lower_excl: r(r"(?i)(?:\babove|\bover|\bgreater than|\bmore than|\bexceeding|\bexceeds|>)\s*NUM"),
            upper_incl: [r(r"(?i)(?:\bat most|\bno more than|≤|<=)\s*NUM"), r(r"(?i)NUM\s*(?:or below|or less|or lower)")],
            upper_excl: r(r"(?i)(?:\bbelow|\bunder|\bless than|<)\s*NUM"),
            label: r(r"(?i)\b(?:indicates|indicating|suggests|is consistent with|corresponds to|means)\s+(?:an?\s+|the\s+)?([^.;]+)"),
        }
    })
}

fn num(caps: &regex::Captures<'_>, i: usize) -> f64 {
    caps[i].parse().expect("regex only captures decimals")
}

/// Parse one criteria sentence. Sentences without a label are skipped.
pub fn parse_criterion(text: &str) -> Option<Criterion> {
    let p = patterns();
    let label = p.label.captures(text)?[1].trim().to_lowercase();
    let metric = p.metric_ef.is_match(text).then(|| EF_METRIC.to_string());
    let mut lower = None;
    let mut upper = None;
    if let Some(c) = p.between.captures(text) {
        lower = Some(Bound { value: num(&c, 1), inclusive: true });
        upper = Some(Bound { value: num(&c, 2), inclusive: false });
    } else {
        for re in &p.lower_incl {
            if let Some(c) = re.captures(text) {
                lower = Some(Bound { value: num(&c, 1), inclusive: true });
            }
        }
        if lower.is_none() {
            lower = p.lower_excl.captures(text).map(|c| Bound { value: num(&c, 1), inclusive: false });
        }
        for re in &p.upper_incl {
            if let Some(c) = re.captures(text) {
                upper = Some(Bound { value: num(&c, 1), inclusive: true });
            }
        }
        if upper.is_none() {
            upper = p.upper_excl.captures(text).map(|c| Bound { value: num(&c, 1), inclusive: false });
        }
    }
    Some(Criterion { text: text.to_string(), metric, lower, upper, label })
}

pub fn parse_criteria<S: AsRef<str>>(items: &[S]) -> Vec<Criterion> {
    items.iter().filter_map(|s| parse_criterion(s.as_ref())).collect()
}

/// "MildlyReduced" → "mildly reduced".
pub fn split_camel(s: &str) -> String {
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if c.is_uppercase() && i > 0 {
            out.push(' ');
        }
        out.extend(c.to_lowercase());
    }
    out
}

fn bow(text: &str) -> Option<Vec<f64>> {
    normalize(&HashedBowEncoder::default().raw_counts(&split_camel(text)))
}

/// Index of the hypothesis whose words best match `label`; ties resolve to
/// the first hypothesis. `None` when nothing overlaps.
pub fn link_label(label: &str, hypotheses: &[String]) -> Option<usize> {
    let l = bow(label)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, h) in hypotheses.iter().enumerate() {
        let Some(hv) = bow(h) else { continue };
        let s = dot(&l, &hv);
        if s > 1e-12 && best.map_or(true, |(_, b)| s > b + 1e-12) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Hypothesis labels for a query: multiple-choice options when given,
/// the three EF grades when any criterion constrains EF, otherwise the
/// distinct criteria labels in order.
pub fn hypotheses_for(criteria: &[Criterion], options: Option<&[String]>) -> Vec<String> {
    if let Some(opts) = options {
        return opts.to_vec();
    }
    if criteria.iter().any(|c| c.metric.as_deref() == Some(EF_METRIC)) {
        return EfGrade::ALL.iter().map(|g| g.name().to_string()).collect();
    }
    let mut out: Vec<String> = Vec::new();
    for c in criteria {
        if !out.contains(&c.label) {
            out.push(c.label.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grades() -> Vec<String> {
        EfGrade::ALL.iter().map(|g| g.name().to_string()).collect()
    }

    #[test]
    fn parses_the_three_grade_sentences() {
        let n = parse_criterion("An EF of 50% or above indicates normal function.").unwrap();
        assert_eq!(n.lower, Some(Bound { value: 50.0, inclusive: true }));
        assert_eq!(n.upper, None);
        assert_eq!(n.label, "normal function");
        let m = parse_criterion("An EF of at least 40% and below 50% indicates mildly reduced function.").unwrap();
        assert!(m.contains(40.0) && m.contains(49.99) && !m.contains(50.0) && !m.contains(39.9));
        let c = parse_criterion("An EF below 40% indicates considerably reduced function.").unwrap();
        assert!(c.contains(33.5) && !c.contains(40.0));
        assert_eq!(c.metric.as_deref(), Some(EF_METRIC));
    }

    #[test]
    fn between_and_exclusive_forms() {
        let b = parse_criterion("LVEF between 40 and 50 indicates mild dysfunction").unwrap();
        assert!(b.contains(40.0) && !b.contains(50.0));
        let a = parse_criterion("EF above 70% suggests hyperdynamic function").unwrap();
        assert!(!a.contains(70.0) && a.contains(70.1));
        assert!(parse_criterion("EF below 40%.").is_none());
    }

    #[test]
    fn labels_link_to_grades() {
        let h = grades();
        assert_eq!(link_label("normal function", &h), Some(0));
        assert_eq!(link_label("mildly reduced function", &h), Some(1));
        assert_eq!(link_label("considerably reduced function", &h), Some(2));
        assert_eq!(link_label("pericardial effusion", &h), None);
    }

    #[test]
    fn hypothesis_sources() {
        let crit = parse_criteria(&["EF below 40% indicates considerably reduced function."]);
        assert_eq!(hypotheses_for(&crit, None), grades());
        let opts = vec!["yes".to_string(), "no".to_string()];
        assert_eq!(hypotheses_for(&crit, Some(&opts)), opts);
        let other = parse_criteria(&["A separation above 10 mm indicates a large effusion."]);
        assert_eq!(hypotheses_for(&other, None), ["large effusion"]);
    }
}
