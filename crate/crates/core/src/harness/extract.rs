use std::sync::OnceLock;

use regex::Regex;

use super::{EvalRecord, ExtractionRule};

fn number_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d[\d,]*(?:\.\d+)?").expect("valid pattern"))
}

fn numeric_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^-?[\d,]+(?:\.\d+)?$").expect("valid pattern"))
}

/// Trims, lowercases and drops thousands separators from numeric answers.
pub fn normalize_answer(text: &str) -> String {
    let s = text.trim().to_lowercase();
    if numeric_pattern().is_match(&s) {
        s.replace(',', "")
    } else {
        s
    }
}

/// Applies `rule` to `text`. `None` means nothing matched.
pub fn extract_answer(text: &str, rule: &ExtractionRule) -> Option<String> {
    let raw = match rule {
        ExtractionRule::LastNumber => number_pattern().find_iter(text).last()?.as_str().to_string(),
        ExtractionRule::Exact => text.to_string(),
        ExtractionRule::Regex(re) => {
            let caps = re.captures(text)?;
            caps.get(1).or_else(|| caps.get(0))?.as_str().to_string()
        }
    };
    let answer = normalize_answer(&raw);
    (!answer.is_empty()).then_some(answer)
}

/// The reference answer under the record's rule; if the rule does not match
/// the reference text, the normalized text itself.
pub fn reference_answer(record: &EvalRecord) -> String {
    extract_answer(&record.reference, &record.extraction).unwrap_or_else(|| normalize_answer(&record.reference))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(s: &str) -> ExtractionRule {
        s.parse().unwrap()
    }

    #[test]
    fn last_number() {
        let r = rule("last-number");
        assert_eq!(extract_answer("... the answer is 42.", &r).as_deref(), Some("42"));
        assert_eq!(
            extract_answer("3 apples, then 1,250.5 total", &r).as_deref(),
            Some("1250.5")
        );
        assert_eq!(extract_answer("owes -7 dollars", &r).as_deref(), Some("-7"));
        assert_eq!(extract_answer("no digits here", &r), None);
    }

    #[test]
    fn gsm8k_reference_format() {
        let r = rule(r"regex:####\s*([\d,]+)");
        assert_eq!(extract_answer("so 1000 + 234\n#### 1,234", &r).as_deref(), Some("1234"));
        assert_eq!(extract_answer("missing marker", &r), None);
        assert_eq!(
            extract_answer("#### 1,234", &rule("last-number")).as_deref(),
            Some("1234")
        );
    }

    #[test]
    fn exact_and_whole_match() {
        assert_eq!(extract_answer("  Paris \n", &rule("exact")).as_deref(), Some("paris"));
        assert_eq!(extract_answer("   ", &rule("exact")), None);
        assert_eq!(
            extract_answer("answer: B.", &rule("regex:[A-D]\\.")).as_deref(),
            Some("b.")
        );
    }

    #[test]
    fn reference_falls_back_to_text() {
        let rec = EvalRecord {
            id: "x".into(),
            prompt: "p".into(),
            reference: "Blue".into(),
            extraction: rule("last-number"),
        };
        assert_eq!(reference_answer(&rec), "blue");
    }
}
