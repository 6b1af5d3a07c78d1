use std::collections::{BTreeMap, HashSet};
use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use super::{PlanOrder, PriorityPlan, Provenance};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("response names none of the known pools")]
    NoLabels,
    #[error("response only repeats {0}")]
    DuplicateOnly(String),
}

const RATIONALE_MAX: usize = 300;

fn label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:pool[\s#:]*p?|p)(\d{1,4})\b").expect("label regex"))
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)(?:^|[\s(*])(\d{1,2})[.)]\s").expect("marker regex"))
}

fn cue_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)(?:^|\s)\d{1,2}[.)]\s|\b(?:first|then|next|after|followed|last|finally|priority|prioritize|order|sequence|before|start)\b|->|→|,|>")
            .expect("cue regex")
    })
}

fn tail_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:last|finally|final|lowest priority|end with)\b").expect("tail regex"))
}

fn list_start_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:\d{1,2}[.)]|[-*•])\s").expect("list regex"))
}

fn paragraph_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\n[ \t]*\n").expect("paragraph regex"))
}

/// Known-label mentions in `text`, as (byte offset, canonical label).
fn mentions(text: &str, known: &HashSet<String>) -> Vec<(usize, String)> {
    label_re()
        .captures_iter(text)
        .filter_map(|c| {
            let n: u32 = c.get(1)?.as_str().parse().ok()?;
            let label = format!("P{n}");
            known.contains(&label).then(|| (c.get(0).map_or(0, |m| m.start()), label))
        })
        .collect()
}

/// Paragraph ranges; adjacent paragraphs that all open with list markers are
/// merged so a spaced-out list stays one segment.
fn segments(text: &str) -> Vec<Range<usize>> {
    let mut paras = Vec::new();
    let mut start = 0;
    for m in paragraph_re().find_iter(text) {
        paras.push(start..m.start());
        start = m.end();
    }
    paras.push(start..text.len());

    let mut out: Vec<Range<usize>> = Vec::new();
    let mut prev_list = false;
    for p in paras {
        let is_list = list_start_re().is_match(&text[p.clone()]);
        match out.last_mut() {
            Some(last) if is_list && prev_list => last.end = p.end,
            _ => out.push(p),
        }
        prev_list = is_list;
    }
    out
}

fn push_unique(order: &mut Vec<String>, label: &str) {
    if !order.iter().any(|l| l == label) {
        order.push(label.to_string());
    }
}

fn clip(s: &str) -> String {
    let s = s.trim();
    if s.chars().count() <= RATIONALE_MAX {
        return s.to_string();
    }
    s.chars().take(RATIONALE_MAX).collect::<String>() + "…"
}

/// Ordering from a numbered list: items sorted by their number.
fn numbered_order(
    seg: &str,
    known: &HashSet<String>,
    rationales: &mut BTreeMap<String, String>,
) -> Option<Vec<String>> {
    let markers: Vec<(usize, usize, u32)> = marker_re()
        .captures_iter(seg)
        .filter_map(|c| {
            let whole = c.get(0)?;
            Some((whole.start(), whole.end(), c.get(1)?.as_str().parse().ok()?))
        })
        .collect();
    if markers.len() < 2 {
        return None;
    }
    let mut items: Vec<(u32, usize, &str)> = markers
        .iter()
        .enumerate()
        .map(|(k, &(_, body, n))| {
            let end = markers.get(k + 1).map_or(seg.len(), |m| m.0);
            (n, k, &seg[body..end])
        })
        .collect();
    items.sort_by_key(|&(n, k, _)| (n, k));
    let mut order = Vec::new();
    for (_, _, item) in items {
        let found = mentions(item, known);
        if let Some((_, first)) = found.first() {
            if !order.contains(first) {
                rationales.entry(first.clone()).or_insert_with(|| clip(item));
            }
        }
        for (_, l) in found {
            push_unique(&mut order, &l);
        }
    }
    (!order.is_empty()).then_some(order)
}

/// Ordering from prose: first mention wins, except labels in clauses that
/// say "last"/"finally" go to the end.
fn prose_order(seg: &str, known: &HashSet<String>) -> Vec<String> {
    let mut head = Vec::new();
    let mut tail = Vec::new();
    for clause in seg.split(['.', ';', ',', '\n']) {
        let target = if tail_re().is_match(clause) { &mut tail } else { &mut head };
        for (_, l) in mentions(clause, known) {
            push_unique(target, &l);
        }
    }
    let mut order = Vec::new();
    for l in head.iter().filter(|l| !tail.contains(l)).chain(tail.iter()) {
        push_unique(&mut order, l);
    }
    order
}

/// Extracts an ordered label list from free text.
///
/// The concluding ordering statement is the segment naming the most distinct
/// known labels among those carrying an ordering cue; later segments win ties.
pub fn parse_plan(response: &str, known_labels: &[String]) -> Result<PriorityPlan, ParseError> {
    let known: HashSet<String> = known_labels.iter().cloned().collect();
    let all = mentions(response, &known);
    if all.is_empty() {
        return Err(ParseError::NoLabels);
    }
    let distinct: HashSet<&str> = all.iter().map(|(_, l)| l.as_str()).collect();
    if distinct.len() == 1 && all.len() >= 2 && known.len() > 1 {
        return Err(ParseError::DuplicateOnly(all[0].1.clone()));
    }

    let segs = segments(response);
    let score = |r: &Range<usize>| {
        let s = &response[r.clone()];
        let d: HashSet<String> = mentions(s, &known).into_iter().map(|(_, l)| l).collect();
        (cue_re().is_match(s), d.len())
    };
    let best = segs
        .iter()
        .map(|r| (score(r), r))
        .filter(|((_, n), _)| *n > 0)
        .max_by(|a, b| a.0.cmp(&b.0).then(a.1.start.cmp(&b.1.start)))
        .map(|(_, r)| r.clone())
        .unwrap_or(0..response.len());
    let seg = &response[best];

    let mut rationales = BTreeMap::new();
    let order = match numbered_order(seg, &known, &mut rationales) {
        Some(o) => o,
        None => prose_order(seg, &known),
    };
    if order.is_empty() {
        return Err(ParseError::NoLabels);
    }
    for sentence in response.split(['.', '!', '?', '\n']) {
        for (_, l) in mentions(sentence, &known) {
            if order.contains(&l) && !rationales.contains_key(&l) && !sentence.trim().is_empty() {
                rationales.insert(l, clip(sentence));
            }
        }
    }
    Ok(PriorityPlan {
        order: PlanOrder::Ranked(order),
        rationales,
        provenance: Provenance::LlmWoc,
        raw_response: Some(response.to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn known(n: u32) -> Vec<String> {
        (1..=n).map(|i| format!("P{i}")).collect()
    }

    fn order(text: &str, n: u32) -> Vec<String> {
        parse_plan(text, &known(n)).unwrap().labels().to_vec()
    }

    #[test]
    fn inline_numbered_list() {
        assert_eq!(order("1. P2 (active bleeding) 2. P1 3. P3 4. P4", 4), ["P2", "P1", "P3", "P4"]);
    }

    #[test]
    fn first_then_phrasing() {
        assert_eq!(order("Suction P3 first, then P1, then P2.", 3), ["P3", "P1", "P2"]);
    }

    #[test]
    fn no_pools_is_error() {
        assert_eq!(parse_plan("no pools need suction", &known(3)), Err(ParseError::NoLabels));
    }

    #[test]
    fn duplicate_only_is_error() {
        assert!(matches!(parse_plan("P2. Definitely P2.", &known(3)), Err(ParseError::DuplicateOnly(_))));
    }

    #[test]
    fn conclusion_beats_discussion() {
        let text = "P1 is the largest pool, P4 contains a clot, P3 is medium and P2 is bleeding.\n\nRecommended order: P2, P1, P3, P4.";
        assert_eq!(order(text, 4), ["P2", "P1", "P3", "P4"]);
    }

    #[test]
    fn spaced_list_with_rationales() {
        let text = "Here is my plan.\n\n1. Pool 2: active bleeding, stop the source.\n\n2. Pool 1: largest remaining.\n\n3. P3: medium.\n\n4. P4 has a clot, so it can wait.";
        let plan = parse_plan(text, &known(4)).unwrap();
        assert_eq!(plan.labels(), ["P2", "P1", "P3", "P4"]);
        assert!(plan.rationales["P2"].contains("active bleeding"));
        assert!(plan.rationales["P4"].contains("clot"));
    }

    #[test]
    fn last_clause_moves_to_tail() {
        assert_eq!(order("Leave P4 for last; start with P2, then P1 and P3.", 4), ["P2", "P1", "P3", "P4"]);
    }

    #[test]
    fn unknown_labels_ignored() {
        assert_eq!(order("Order: P9, P2, P1", 2), ["P2", "P1"]);
        assert_eq!(order("Order: P02, P1", 2), ["P2", "P1"]);
    }

    #[test]
    fn partial_plan_allowed() {
        assert_eq!(order("Begin with P3.", 4), ["P3"]);
    }
}
