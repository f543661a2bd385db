//! Dialectic guidance documents and their canonical text form.
//!
//! The wire format is four labelled lines in a fixed order:
//!
//! ```text
//! VERDICT: present
//! PROBABILITY: 0.60
//! FOR: <strongest reason the condition is present>
//! AGAINST: <strongest reason it is absent>
//! ```
//!
//! Keys are case-insensitive, surrounding whitespace and blank lines are
//! ignored. The probability is stored at a resolution of 0.01; finer inputs
//! are rounded to the nearest hundredth when parsed.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BinaryLabel, Probability};

/// Maximum length of each reason, in characters.
pub const MAX_REASON_CHARS: usize = 500;

/// Why a piece of text is not a valid guidance document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseFailure {
    #[error("a required field is missing")]
    MissingField,
    #[error("probability is not a decimal in [0, 1]")]
    BadProbability,
    #[error("verdict disagrees with the stated probability")]
    VerdictMismatch,
    #[error("text does not follow the four-line layout")]
    NonConformantLayout,
    #[error("a reason is empty")]
    EmptyReason,
    #[error("a reason exceeds {MAX_REASON_CHARS} characters")]
    OverlongReason,
    #[error("input contains non-text content")]
    NonTextContent,
}

/// Result of parsing one candidate text.
pub type ParseOutcome = Result<GuidanceDocument, ParseFailure>;

/// Structured guidance: a verdict, the verbalised probability of the
/// positive class, and the strongest reason for and against.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GuidanceDocument {
    verdict: BinaryLabel,
    hundredths: u8,
    reason_for: String,
    reason_against: String,
}

impl GuidanceDocument {
    /// Builds a document, rounding `probability` to the nearest hundredth
    /// and trimming both reasons.
    pub fn new(
        verdict: BinaryLabel,
        probability: f64,
        reason_for: &str,
        reason_against: &str,
    ) -> Result<Self, ParseFailure> {
        let hundredths = quantize(probability).ok_or(ParseFailure::BadProbability)?;
        let reason_for = check_reason(reason_for)?;
        let reason_against = check_reason(reason_against)?;
        if verdict.is_positive() != (hundredths >= 50) {
            return Err(ParseFailure::VerdictMismatch);
        }
        Ok(Self {
            verdict,
            hundredths,
            reason_for,
            reason_against,
        })
    }

    pub fn verdict(&self) -> BinaryLabel {
        self.verdict
    }

    /// The verbalised probability of the positive class.
    pub fn probability(&self) -> Probability {
        Probability::new(f64::from(self.hundredths) / 100.0).expect("hundredths in 0..=100")
    }

    pub fn reason_for(&self) -> &str {
        &self.reason_for
    }

    pub fn reason_against(&self) -> &str {
        &self.reason_against
    }
}

impl fmt::Display for GuidanceDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&emit_guidance(self))
    }
}

#[derive(Serialize, Deserialize)]
struct GuidanceWire {
    verdict: String,
    probability: f64,
    reason_for: String,
    reason_against: String,
}

impl Serialize for GuidanceDocument {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        GuidanceWire {
            verdict: verdict_word(self.verdict).to_owned(),
            probability: self.probability().value(),
            reason_for: self.reason_for.clone(),
            reason_against: self.reason_against.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GuidanceDocument {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = GuidanceWire::deserialize(deserializer)?;
        let verdict = parse_verdict(&wire.verdict)
            .ok_or_else(|| serde::de::Error::custom("verdict must be `present` or `absent`"))?;
        GuidanceDocument::new(verdict, wire.probability, &wire.reason_for, &wire.reason_against)
            .map_err(serde::de::Error::custom)
    }
}

fn quantize(probability: f64) -> Option<u8> {
    if !(0.0..=1.0).contains(&probability) {
        return None;
    }
    Some((probability * 100.0).round() as u8)
}

fn check_reason(raw: &str) -> Result<String, ParseFailure> {
    let text = raw.trim();
    if text.is_empty() {
        return Err(ParseFailure::EmptyReason);
    }
    if text.chars().any(|c| c.is_control() && c != '\t') {
        return Err(ParseFailure::NonTextContent);
    }
    if text.chars().count() > MAX_REASON_CHARS {
        return Err(ParseFailure::OverlongReason);
    }
    Ok(text.to_owned())
}

fn verdict_word(label: BinaryLabel) -> &'static str {
    if label.is_positive() {
        "present"
    } else {
        "absent"
    }
}

fn parse_verdict(word: &str) -> Option<BinaryLabel> {
    if word.eq_ignore_ascii_case("present") {
        Some(BinaryLabel::Positive)
    } else if word.eq_ignore_ascii_case("absent") {
        Some(BinaryLabel::Negative)
    } else {
        None
    }
}

/// Accepts `1`, `0.6`, `.6`, `0.60`; rejects signs, exponents, `nan`, `inf`.
fn parse_decimal(text: &str) -> Option<f64> {
    let mut digits = 0usize;
    let mut dots = 0usize;
    for c in text.chars() {
        match c {
            '0'..='9' => digits += 1,
            '.' => dots += 1,
            _ => return None,
        }
    }
    if digits == 0 || dots > 1 {
        return None;
    }
    text.parse::<f64>().ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Verdict,
    Probability,
    For,
    Against,
}

impl Field {
    const ORDER: [Field; 4] = [Field::Verdict, Field::Probability, Field::For, Field::Against];

    fn from_key(key: &str) -> Option<Field> {
        Self::ORDER
            .into_iter()
            .find(|field| field.key().eq_ignore_ascii_case(key))
    }

    fn key(self) -> &'static str {
        match self {
            Field::Verdict => "VERDICT",
            Field::Probability => "PROBABILITY",
            Field::For => "FOR",
            Field::Against => "AGAINST",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Parses raw bytes; invalid UTF-8 fails with [`ParseFailure::NonTextContent`].
pub fn parse_guidance_bytes(raw: &[u8]) -> ParseOutcome {
    match std::str::from_utf8(raw) {
        Ok(text) => parse_guidance(text),
        Err(_) => Err(ParseFailure::NonTextContent),
    }
}

/// Parses canonical guidance text. Never panics.
pub fn parse_guidance(raw: &str) -> ParseOutcome {
    if raw
        .chars()
        .any(|c| (c.is_control() && !matches!(c, '\n' | '\r' | '\t')) || c == '\u{FFFD}')
    {
        return Err(ParseFailure::NonTextContent);
    }

    let mut values: [Option<&str>; 4] = [None; 4];
    let mut seen = Vec::with_capacity(4);
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or(ParseFailure::NonConformantLayout)?;
        let field = Field::from_key(key.trim()).ok_or(ParseFailure::NonConformantLayout)?;
        let slot = &mut values[field.index()];
        if slot.is_some() {
            return Err(ParseFailure::NonConformantLayout);
        }
        *slot = Some(value.trim());
        seen.push(field);
    }

    let [Some(verdict), Some(probability), Some(reason_for), Some(reason_against)] = values else {
        return Err(ParseFailure::MissingField);
    };
    if seen != Field::ORDER {
        return Err(ParseFailure::NonConformantLayout);
    }
    if verdict.is_empty() || probability.is_empty() {
        return Err(ParseFailure::MissingField);
    }
    let verdict = parse_verdict(verdict).ok_or(ParseFailure::NonConformantLayout)?;
    let probability = parse_decimal(probability).ok_or(ParseFailure::BadProbability)?;
    GuidanceDocument::new(verdict, probability, reason_for, reason_against)
}

/// Canonical serializer; `parse_guidance(&emit_guidance(doc)) == Ok(doc)`.
pub fn emit_guidance(doc: &GuidanceDocument) -> String {
    format!(
        "VERDICT: {}\nPROBABILITY: {}.{:02}\nFOR: {}\nAGAINST: {}\n",
        verdict_word(doc.verdict),
        doc.hundredths / 100,
        doc.hundredths % 100,
        doc.reason_for,
        doc.reason_against,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("error rate needs at least one outcome")]
pub struct EmptyOutcomes;

/// Fraction of failed generations among all attempts.
pub fn error_rate(outcomes: &[ParseOutcome]) -> Result<f64, EmptyOutcomes> {
    if outcomes.is_empty() {
        return Err(EmptyOutcomes);
    }
    let failures = outcomes.iter().filter(|o| o.is_err()).count();
    Ok((failures as f64 / outcomes.len() as f64).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EXAMPLE: &str = "VERDICT: present\n\
        PROBABILITY: 0.6\n\
        FOR: Broad-based disc bulge narrowing the exit foramen at L4/5.\n\
        AGAINST: No explicit mention of nerve root compression.\n";

    #[test]
    fn extracts_the_verbalised_probability() {
        let doc = parse_guidance(EXAMPLE).unwrap();
        assert_eq!(doc.probability().value(), 0.6);
        assert_eq!(doc.verdict(), BinaryLabel::Positive);
        assert!(doc.reason_for().starts_with("Broad-based"));
    }

    #[test]
    fn keys_are_case_insensitive_and_whitespace_tolerant() {
        let text = "\n  verdict:Absent \r\n\nprobability :  .2\n For: a\n against: b  \n\n";
        let doc = parse_guidance(text).unwrap();
        assert_eq!(doc.verdict(), BinaryLabel::Negative);
        assert_eq!(doc.probability().value(), 0.2);
        assert_eq!(doc.reason_against(), "b");
    }

    #[test]
    fn missing_probability_line() {
        let text = "VERDICT: present\nFOR: a\nAGAINST: b\n";
        assert_eq!(parse_guidance(text), Err(ParseFailure::MissingField));
    }

    #[test]
    fn empty_input_is_missing_fields() {
        assert_eq!(parse_guidance(""), Err(ParseFailure::MissingField));
    }

    #[test]
    fn verdict_must_agree_with_probability() {
        let text = "VERDICT: present\nPROBABILITY: 0.2\nFOR: a\nAGAINST: b\n";
        assert_eq!(parse_guidance(text), Err(ParseFailure::VerdictMismatch));
        let text = "VERDICT: absent\nPROBABILITY: 0.5\nFOR: a\nAGAINST: b\n";
        assert_eq!(parse_guidance(text), Err(ParseFailure::VerdictMismatch));
    }

    #[test]
    fn layout_violations() {
        let swapped = "PROBABILITY: 0.6\nVERDICT: present\nFOR: a\nAGAINST: b\n";
        assert_eq!(parse_guidance(swapped), Err(ParseFailure::NonConformantLayout));
        let duplicated = "VERDICT: present\nVERDICT: present\nPROBABILITY: 0.6\nFOR: a\nAGAINST: b";
        assert_eq!(parse_guidance(duplicated), Err(ParseFailure::NonConformantLayout));
        let extra = "VERDICT: present\nPROBABILITY: 0.6\nFOR: a\ncontinued\nAGAINST: b";
        assert_eq!(parse_guidance(extra), Err(ParseFailure::NonConformantLayout));
        let unknown_verdict = "VERDICT: maybe\nPROBABILITY: 0.6\nFOR: a\nAGAINST: b";
        assert_eq!(parse_guidance(unknown_verdict), Err(ParseFailure::NonConformantLayout));
    }

    #[test]
    fn bad_probabilities() {
        for p in ["1.5", "-0.2", "nan", "inf", "6e-1", "0.6.1", ".", "sixty"] {
            let text = format!("VERDICT: present\nPROBABILITY: {p}\nFOR: a\nAGAINST: b\n");
            assert_eq!(parse_guidance(&text), Err(ParseFailure::BadProbability), "{p}");
        }
    }

    #[test]
    fn reason_checks() {
        let empty = "VERDICT: present\nPROBABILITY: 0.6\nFOR:   \nAGAINST: b\n";
        assert_eq!(parse_guidance(empty), Err(ParseFailure::EmptyReason));
        let long = format!(
            "VERDICT: present\nPROBABILITY: 0.6\nFOR: {}\nAGAINST: b\n",
            "x".repeat(MAX_REASON_CHARS + 1)
        );
        assert_eq!(parse_guidance(&long), Err(ParseFailure::OverlongReason));
        let exactly = format!(
            "VERDICT: present\nPROBABILITY: 0.6\nFOR: {}\nAGAINST: b\n",
            "é".repeat(MAX_REASON_CHARS)
        );
        assert!(parse_guidance(&exactly).is_ok());
    }

    #[test]
    fn non_text_content() {
        assert_eq!(parse_guidance_bytes(&[0xff, 0xfe, 0x00]), Err(ParseFailure::NonTextContent));
        let nul = "VERDICT: present\0\nPROBABILITY: 0.6\nFOR: a\nAGAINST: b\n";
        assert_eq!(parse_guidance(nul), Err(ParseFailure::NonTextContent));
    }

    #[test]
    fn emit_uses_two_decimals_and_is_stable() {
        let doc = GuidanceDocument::new(BinaryLabel::Positive, 0.6, "a", "b").unwrap();
        let first = emit_guidance(&doc);
        assert!(first.contains("PROBABILITY: 0.60"));
        assert_eq!(first, emit_guidance(&doc));
        let one = GuidanceDocument::new(BinaryLabel::Positive, 1.0, "a", "b").unwrap();
        assert!(emit_guidance(&one).contains("PROBABILITY: 1.00"));
    }

    #[test]
    fn finer_probabilities_are_rounded() {
        let text = "VERDICT: present\nPROBABILITY: 0.625\nFOR: a\nAGAINST: b\n";
        let doc = parse_guidance(text).unwrap();
        assert_eq!(doc.probability().value(), 0.63);
    }

    #[test]
    fn error_rate_counts_failures_over_attempts() {
        let ok = parse_guidance(EXAMPLE);
        let bad: ParseOutcome = Err(ParseFailure::MissingField);
        assert_eq!(error_rate(&[ok.clone(), ok.clone()]).unwrap(), 0.0);
        assert_eq!(
            error_rate(&[bad.clone(), ok.clone(), ok.clone(), ok.clone()]).unwrap(),
            0.25
        );
        assert_eq!(error_rate(&[bad.clone(), bad]).unwrap(), 1.0);
        assert_eq!(error_rate(&[]), Err(EmptyOutcomes));
    }

    #[test]
    fn json_form_carries_four_fields() {
        let doc = parse_guidance(EXAMPLE).unwrap();
        let json = serde_json::to_value(&doc).unwrap();
        assert_eq!(json["verdict"], "present");
        assert_eq!(json["probability"], 0.6);
        let back: GuidanceDocument = serde_json::from_value(json).unwrap();
        assert_eq!(back, doc);
    }

    fn reason() -> impl Strategy<Value = String> {
        "[A-Za-z0-9 ,.;:()/'-]{0,80}".prop_filter("non-blank", |s| !s.trim().is_empty())
    }

    proptest! {
        #[test]
        fn parse_is_total_on_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = parse_guidance_bytes(&bytes);
        }

        #[test]
        fn parse_is_total_on_near_miss_text(text in "(?i)(verdict|probability|for|against|:|present|absent|[0-9.]|\\s|x){0,64}") {
            if let Ok(doc) = parse_guidance(&text) {
                let p = doc.probability().value();
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }

        #[test]
        fn emit_then_parse_is_identity(h in 0u8..=100, f in reason(), a in reason()) {
            let verdict = BinaryLabel::from_bool(h >= 50);
            let doc = GuidanceDocument::new(verdict, f64::from(h) / 100.0, &f, &a).unwrap();
            prop_assert_eq!(parse_guidance(&emit_guidance(&doc)), Ok(doc));
        }
    }
}
