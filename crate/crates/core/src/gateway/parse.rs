//! Verdict and score extraction from raw judge replies. Both parsers try a
//! strict reading first and then a lenient one.

use thiserror::Error;

use crate::domain::{Likert, Side};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no verdict found in reply")]
    NoVerdict,
    #[error("reply contains only out-of-range digits")]
    OutOfRange,
}

fn side_of(token: &str) -> Option<Side> {
    if token.eq_ignore_ascii_case("a") {
        Some(Side::A)
    } else if token.eq_ignore_ascii_case("b") {
        Some(Side::B)
    } else {
        None
    }
}

pub fn parse_pairwise_response(text: &str) -> Result<Side, ParseError> {
    if let Some(side) = side_of(text.trim()) {
        return Ok(side);
    }
    text.split_whitespace()
        .map(|tok| tok.trim_matches(|c: char| !c.is_alphanumeric()))
        .find_map(side_of)
        .ok_or(ParseError::NoVerdict)
}

pub fn parse_likert_response(text: &str) -> Result<Likert, ParseError> {
    let trimmed = text.trim();
    if trimmed.len() == 1 {
        if let Some(d) = trimmed.chars().next().and_then(|c| c.to_digit(10)) {
            return Likert::new(d as u8).map_err(|_| ParseError::OutOfRange);
        }
    }
    let mut saw_digit = false;
    for c in text.chars() {
        if let Some(d) = c.to_digit(10) {
            saw_digit = true;
            if (1..=5).contains(&d) {
                return Ok(Likert::new(d as u8).expect("checked range"));
            }
        }
    }
    if saw_digit {
        Err(ParseError::OutOfRange)
    } else {
        Err(ParseError::NoVerdict)
    }
}
