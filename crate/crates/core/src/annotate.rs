//! Domain conditioning encodings for source sentences: a prepended tag token
//! (`__<label> tokens...`) or a per-token factor (`token|label ...`).
//!
//! Both are applied to already segmented text, so the tag stays one atomic
//! symbol and every subword of a split word carries the factor.

use std::fmt;

use crate::corpus::{DomainLabel, Sentence, TAG_SIGIL};
use crate::error::{Error, Result};

pub const FACTOR_DELIMITER: char = '|';

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSentence {
    pub label: DomainLabel,
    pub tokens: Sentence,
}

impl TaggedSentence {
    pub fn tag_token(&self) -> String {
        tag_token(&self.label)
    }

    /// Token sequence with the tag first.
    pub fn to_sentence(&self) -> Sentence {
        Sentence::from_tokens(std::iter::once(self.tag_token()).chain(self.tokens.tokens().iter().cloned()))
            .expect("tag and tokens are valid")
    }
}

impl fmt::Display for TaggedSentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.tokens.is_empty() {
            write!(f, "{}", self.tag_token())
        } else {
            write!(f, "{} {}", self.tag_token(), self.tokens)
        }
    }
}

pub fn tag_token(label: &DomainLabel) -> String {
    format!("{TAG_SIGIL}{label}")
}

pub fn inject_tag(sentence: &Sentence, label: &DomainLabel) -> Result<TaggedSentence> {
    if let Some(tok) = sentence.tokens().iter().find(|t| t.starts_with(TAG_SIGIL)) {
        return Err(Error::Format(format!(
            "token {tok:?} collides with the reserved tag sigil {TAG_SIGIL:?}"
        )));
    }
    Ok(TaggedSentence {
        label: label.clone(),
        tokens: sentence.clone(),
    })
}

pub fn strip_tag(line: &str) -> Result<(DomainLabel, Sentence)> {
    let mut tokens = line.split_whitespace();
    let head = tokens.next().unwrap_or("");
    let id = head
        .strip_prefix(TAG_SIGIL)
        .ok_or_else(|| Error::Format(format!("line does not begin with a {TAG_SIGIL}<label> tag: {line:?}")))?;
    let label = DomainLabel::new(id).map_err(|e| Error::Format(e.to_string()))?;
    let rest = Sentence::from_tokens(tokens)?;
    if let Some(tok) = rest.tokens().iter().find(|t| t.starts_with(TAG_SIGIL)) {
        return Err(Error::Format(format!("second tag-like token {tok:?} in {line:?}")));
    }
    Ok((label, rest))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactoredSentence {
    pub tokens: Vec<(String, DomainLabel)>,
}

impl FactoredSentence {
    pub fn factor(&self) -> Option<&DomainLabel> {
        self.tokens.first().map(|(_, f)| f)
    }

    pub fn surfaces(&self) -> Sentence {
        Sentence::from_tokens(self.tokens.iter().map(|(s, _)| s.clone())).expect("valid surfaces")
    }
}

impl fmt::Display for FactoredSentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (surface, factor)) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{surface}{FACTOR_DELIMITER}{factor}")?;
        }
        Ok(())
    }
}

pub fn inject_feature(sentence: &Sentence, label: &DomainLabel) -> Result<FactoredSentence> {
    if let Some(tok) = sentence.tokens().iter().find(|t| t.contains(FACTOR_DELIMITER)) {
        return Err(Error::Format(format!(
            "token {tok:?} contains the factor delimiter {FACTOR_DELIMITER:?}"
        )));
    }
    Ok(FactoredSentence {
        tokens: sentence.tokens().iter().map(|t| (t.clone(), label.clone())).collect(),
    })
}

pub fn parse_factored(line: &str) -> Result<FactoredSentence> {
    let mut tokens = Vec::new();
    for raw in line.split_whitespace() {
        let mut parts = raw.split(FACTOR_DELIMITER);
        let (Some(surface), Some(factor), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Format(format!(
                "token {raw:?} must contain exactly one {FACTOR_DELIMITER:?}"
            )));
        };
        if surface.is_empty() {
            return Err(Error::Format(format!("token {raw:?} has an empty surface")));
        }
        let factor = DomainLabel::new(factor).map_err(|e| Error::Format(e.to_string()))?;
        tokens.push((surface.to_owned(), factor));
    }
    if let Some(first) = tokens.first().map(|(_, f)| f.clone()) {
        if let Some((s, f)) = tokens.iter().find(|(_, f)| *f != first) {
            return Err(Error::Consistency(format!(
                "mixed factors in one sentence: {first} and {f} (at {s:?})"
            )));
        }
    }
    Ok(FactoredSentence { tokens })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn l(s: &str) -> DomainLabel {
        DomainLabel::new(s).unwrap()
    }

    #[test]
    fn tag_examples() {
        let t = inject_tag(&Sentence::parse("How you doin' ?"), &l("OpenSubs")).unwrap();
        assert_eq!(t.to_string(), "__OpenSubs How you doin' ?");
        assert_eq!(inject_tag(&Sentence::parse("a"), &DomainLabel::other()).unwrap().to_string(), "__other a");
        let err = inject_tag(&Sentence::parse("a __x"), &l("A")).unwrap_err();
        assert!(matches!(err, Error::Format(ref m) if m.contains("__x")));
    }

    #[test]
    fn strip_examples() {
        let (label, s) = strip_tag("__OpenSubs How you doin' ?").unwrap();
        assert_eq!(label, l("OpenSubs"));
        assert_eq!(s.to_string(), "How you doin' ?");
        assert!(matches!(strip_tag("no tag here"), Err(Error::Format(_))));
        assert!(strip_tag("__A").unwrap().1.is_empty());
    }

    #[test]
    fn feature_examples() {
        let f = inject_feature(&Sentence::parse("This is a sentence ."), &l("2wi")).unwrap();
        let line = "This|2wi is|2wi a|2wi sentence|2wi .|2wi";
        assert_eq!(f.to_string(), line);
        assert_eq!(parse_factored(line).unwrap(), f);
        assert!(DomainLabel::new("").is_err());
        assert!(matches!(inject_feature(&Sentence::parse("a|b"), &l("x")), Err(Error::Format(_))));
    }

    #[test]
    fn factored_parse_errors() {
        assert!(matches!(parse_factored("a|x b|y"), Err(Error::Consistency(_))));
        assert!(matches!(parse_factored("a b|x"), Err(Error::Format(_))));
        assert!(matches!(parse_factored("a|x|y"), Err(Error::Format(_))));
    }

    #[test]
    fn factor_replicated_over_subwords() {
        let f = inject_feature(&Sentence::parse("lo@@ w"), &l("A")).unwrap();
        assert_eq!(f.to_string(), "lo@@|A w|A");
    }

    fn sentence() -> impl Strategy<Value = Sentence> {
        proptest::collection::vec("[a-z.?'@]{1,6}", 0..8).prop_map(|t| Sentence::from_tokens(t).unwrap())
    }

    proptest! {
        #[test]
        fn tag_round_trip(s in sentence(), label in "[A-Za-z0-9][A-Za-z0-9_]{0,6}") {
            let label = l(&label);
            let tagged = inject_tag(&s, &label).unwrap();
            prop_assert_eq!(tagged.to_sentence().len(), s.len() + 1);
            let line = tagged.to_string();
            prop_assert_eq!(strip_tag(&line).unwrap(), (label, s));
        }

        #[test]
        fn feature_round_trip(s in sentence(), label in "[A-Za-z0-9_]{1,6}") {
            prop_assume!(!label.starts_with("__"));
            let f = inject_feature(&s, &l(&label)).unwrap();
            prop_assert_eq!(f.tokens.len(), s.len());
            let line = f.to_string();
            prop_assert_eq!(parse_factored(&line).unwrap().to_string(), line.clone());
            prop_assert_eq!(parse_factored(&line).unwrap(), f);
        }
    }
}
