//! Prompt templates. The template text lives in `assets/` and is versioned
//! by file name; placeholders are `{name}`.

use crate::domain::Criterion;

use super::GatewayError;

pub const PAIRWISE_TEMPLATE: &str = include_str!("../../assets/pairwise_v1.txt");
pub const SCORING_TEMPLATE: &str = include_str!("../../assets/scoring_v1.txt");
pub const TEMPLATE_VERSION: &str = "v1";

/// Substitute `{name}` placeholders in a single pass over the template, so
/// braces inside substituted text are never re-expanded.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + values.iter().map(|v| v.1.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let matched = after.find('}').and_then(|close| {
            let name = &after[..close];
            values
                .iter()
                .find(|(key, _)| *key == name)
                .map(|(_, value)| (close, *value))
        });
        match matched {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn require(field: &'static str, text: &str) -> Result<(), GatewayError> {
    if text.trim().is_empty() {
        Err(GatewayError::EmptyInput(field))
    } else {
        Ok(())
    }
}

pub fn render_pairwise_prompt(
    document: &str,
    output_a: &str,
    output_b: &str,
    criterion: Criterion,
) -> Result<String, GatewayError> {
    require("document", document)?;
    require("output_a", output_a)?;
    require("output_b", output_b)?;
    Ok(fill(
        PAIRWISE_TEMPLATE,
        &[
            ("criterion", criterion.as_str()),
            ("document", document),
            ("system_a", output_a),
            ("system_b", output_b),
        ],
    ))
}

pub fn render_scoring_prompt(
    document: &str,
    output: &str,
    criterion: Criterion,
) -> Result<String, GatewayError> {
    require("document", document)?;
    require("output", output)?;
    Ok(fill(
        SCORING_TEMPLATE,
        &[
            ("criterion", criterion.as_str()),
            ("document", document),
            ("system_output", output),
        ],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_template_text() {
        let p = render_pairwise_prompt("Doc D.", "Sum A.", "Sum B.", Criterion::Coherence).unwrap();
        let expected = "You are evaluating the coherence of two summaries\n\
of the following article.\n\
\n\
Article: Doc D.\n\
\n\
Summary A: Sum A.\n\
Summary B: Sum B.\n\
\n\
Which summary is better in terms of coherence?\n\
Answer with exactly \"A\" or \"B\". No explanation.";
        assert_eq!(p, expected);
        assert!(p.contains("Which summary is better in terms of coherence?"));
    }

    #[test]
    fn pairwise_substitutes_both_criterion_slots() {
        let p = render_pairwise_prompt("d", "a", "b", Criterion::Fluency).unwrap();
        assert_eq!(p.matches("fluency").count(), 2);
        assert!(!p.contains('{'));
    }

    #[test]
    fn scoring_template_text() {
        let p = render_scoring_prompt("Doc.", "Sum.", Criterion::Relevance).unwrap();
        assert!(p.contains("Rate the relevance on a scale of 1--5"));
        assert!(p.contains("1 = Very Poor,  2 = Poor,  3 = Fair,\n4 = Good,  5 = Excellent"));
        assert!(p.starts_with("You are evaluating the relevance of the following\nsummary of an article."));
        assert!(p.ends_with("Respond with a single integer between 1 and 5.\nNo explanation needed."));
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(matches!(
            render_pairwise_prompt("d", "", "b", Criterion::Coherence),
            Err(GatewayError::EmptyInput("output_a"))
        ));
        assert!(matches!(
            render_scoring_prompt("  ", "s", Criterion::Coherence),
            Err(GatewayError::EmptyInput("document"))
        ));
    }

    #[test]
    fn braces_in_inputs_are_not_expanded() {
        let p = render_pairwise_prompt("{system_b}", "{criterion}", "x", Criterion::Coherence).unwrap();
        assert!(p.contains("Article: {system_b}"));
        assert!(p.contains("Summary A: {criterion}"));
    }
}
