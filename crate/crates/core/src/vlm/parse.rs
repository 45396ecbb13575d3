//! Extraction of labels, confidences and rankings from free-text replies.

use std::sync::LazyLock;

use regex::Regex;

static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b\d+\b").unwrap());
static QUOTED_LETTER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"["'`\u{2018}\u{201C}]([A-Za-z])["'`\u{2019}\u{201D}]"#).unwrap()
});
static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+(?:\.\d+)?").unwrap());
static SCALE_ECHO: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b1\s*(?:to|-|\u{2013})\s*100\b").unwrap());
static RANKING_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)^\W*ranking\W*:(.*)$").unwrap());
static PAIR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\d+)\s*[-/.:]\s*(\d+)").unwrap());
static PROSE_PAIR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)batch\s*#?\s*(\d+)\D{0,24}?image\s*#?\s*(\d+)").unwrap());

/// The first standalone integer; failing that, a quoted single letter or a
/// reply that is just one letter. `None` when nothing qualifies.
pub fn parse_label(text: &str) -> Option<String> {
    if let Some(m) = INTEGER.find(text) {
        return Some(m.as_str().to_string());
    }
    if let Some(c) = QUOTED_LETTER.captures(text) {
        return Some(c[1].to_string());
    }
    let bare = text.trim().trim_end_matches(['.', '!']);
    if bare.len() == 1 && bare.chars().all(|c| c.is_ascii_alphabetic()) {
        return Some(bare.to_string());
    }
    None
}

/// The first number in `[1, 100]`, ignoring an echoed "1 to 100" scale.
pub fn parse_confidence(text: &str) -> Option<f64> {
    let cleaned = SCALE_ECHO.replace_all(text, " ");
    NUMBER
        .find_iter(&cleaned)
        .filter_map(|m| m.as_str().parse::<f64>().ok())
        .find(|v| (1.0..=100.0).contains(v))
}

/// `(batch, image)` pairs, 1-based, in the order the reply ranks them.
///
/// A `RANKING:` line is preferred; otherwise "batch N ... image M" mentions
/// are collected from the text before the first mention of "worst".
/// Pairs outside `batch_sizes` and repeats are dropped.
pub fn parse_ranking(text: &str, batch_sizes: &[usize]) -> Vec<(usize, usize)> {
    let valid =
        |b: usize, i: usize| b >= 1 && b <= batch_sizes.len() && i >= 1 && i <= batch_sizes[b - 1];
    let mut raw: Vec<(usize, usize)> = Vec::new();
    if let Some(line) = RANKING_LINE.captures_iter(text).last() {
        raw.extend(
            PAIR.captures_iter(&line[1])
                .filter_map(|c| Some((c[1].parse().ok()?, c[2].parse().ok()?))),
        );
    }
    if raw.is_empty() {
        let lower = text.to_lowercase();
        let cut = lower.find("worst").unwrap_or(text.len());
        let head = text.get(..cut).unwrap_or(text);
        raw.extend(
            PROSE_PAIR
                .captures_iter(head)
                .filter_map(|c| Some((c[1].parse().ok()?, c[2].parse().ok()?))),
        );
    }
    let mut out = Vec::new();
    for (b, i) in raw {
        if valid(b, i) && !out.contains(&(b, i)) {
            out.push((b, i));
        }
    }
    out
}
