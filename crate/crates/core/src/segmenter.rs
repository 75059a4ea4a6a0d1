//! Rule-based sentence/paragraph segmentation and the sliding windows used
//! for claim extraction.
//!
//! Paragraphs are separated by blank lines. Inside a paragraph every line
//! break ends a sentence, list-item lines (`- `, `* `, `• `, `N. `) are
//! single sentences, and other lines are split on terminal punctuation
//! unless the period closes a known abbreviation or an initial.

use serde::{Deserialize, Serialize};

use crate::corpus::{Prompt, PromptKind, Response};

pub const START_MARKER: &str = "<SOS>";
pub const END_MARKER: &str = "<EOS>";

/// Maximum number of sentences of left context.
pub const LEFT_CONTEXT: usize = 3;
/// Maximum number of sentences of right context.
pub const RIGHT_CONTEXT: usize = 1;
/// NonQA paragraphs longer than this get their lead sentence as anchor.
pub const ANCHOR_MIN_PARAGRAPH: usize = 5;

/// Byte span `[start, end)` into the response text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn slice(self, text: &str) -> &str {
        &text[self.start..self.end]
    }
}

/// Half-open range of sentence indices forming one paragraph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRange {
    pub start: usize,
    pub end: usize,
}

impl SentenceRange {
    pub fn len(self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(self) -> bool {
        self.end == self.start
    }

    pub fn contains(self, index: usize) -> bool {
        (self.start..self.end).contains(&index)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Segmentation {
    pub sentences: Vec<Span>,
    pub paragraphs: Vec<SentenceRange>,
}

// Abbreviations whose period never ends a sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "mt", "ft", "fr", "rev", "gen", "gov", "sen", "rep", "capt", "lt",
    "col", "sgt", "cmdr", "adm", "pres", "vs", "no", "nos", "fig", "figs", "approx", "dept", "est", "ave", "blvd",
    "cf", "ca", "vol", "vols", "pp", "ed", "eds", "al", "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep",
    "sept", "oct", "nov", "dec", "e.g", "i.e", "u.s", "u.k", "u.n", "a.m", "p.m", "ph.d", "b.c", "a.d",
];

// Abbreviations that may also close a sentence; they only end one when the
// next word is capitalised.
const FINAL_ABBREVIATIONS: &[&str] = &["etc", "inc", "ltd", "co", "corp", "jr", "sr", "bros"];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201D}', '\u{2019}', '\u{00BB}'];

pub fn segment(text: &str) -> Segmentation {
    let mut seg = Segmentation::default();
    let mut para_start: Option<usize> = None;

    let mut offset = 0;
    for raw_line in text.split_inclusive('\n') {
        let line_start = offset;
        offset += raw_line.len();
        let line = raw_line.trim_end_matches(['\n', '\r']);

        if line.trim().is_empty() {
            if let Some(start) = para_start.take() {
                close_paragraph(&mut seg, start);
            }
            continue;
        }
        if para_start.is_none() {
            para_start = Some(seg.sentences.len());
        }

        let lead = line.len() - line.trim_start().len();
        let body = line.trim();
        let body_start = line_start + lead;
        if is_list_item(body) {
            seg.sentences.push(Span {
                start: body_start,
                end: body_start + body.len(),
            });
        } else {
            split_line(body, body_start, &mut seg.sentences);
        }
    }
    if let Some(start) = para_start {
        close_paragraph(&mut seg, start);
    }
    seg
}

fn close_paragraph(seg: &mut Segmentation, start: usize) {
    if seg.sentences.len() > start {
        seg.paragraphs.push(SentenceRange {
            start,
            end: seg.sentences.len(),
        });
    }
}

fn is_list_item(line: &str) -> bool {
    for bullet in ["- ", "* ", "\u{2022} "] {
        if line.starts_with(bullet) || line == bullet.trim_end() {
            return true;
        }
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 || digits > 3 {
        return false;
    }
    let rest = &line[digits..];
    rest == "." || rest.starts_with(". ")
}

/// Splits one trimmed line into sentence spans, appending them to `out`.
fn split_line(line: &str, base: usize, out: &mut Vec<Span>) {
    let chars: Vec<(usize, char)> = line.char_indices().collect();
    let mut sent_start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (_, c) = chars[i];
        if !matches!(c, '.' | '!' | '?') {
            i += 1;
            continue;
        }
        // absorb runs like "?!" or "..." and trailing closers
        let mut j = i;
        let mut only_period = true;
        while j < chars.len() && matches!(chars[j].1, '.' | '!' | '?') {
            only_period &= chars[j].1 == '.';
            j += 1;
        }
        let run_len = j - i;
        while j < chars.len() && CLOSERS.contains(&chars[j].1) {
            j += 1;
        }
        let end_byte = chars.get(j).map_or(line.len(), |&(b, _)| b);
        let at_end = j == chars.len();
        if !at_end && !chars[j].1.is_whitespace() {
            i = j;
            continue;
        }
        let next_word = line[end_byte..].trim_start();
        if !at_end && only_period && run_len == 1 && !period_ends_sentence(&line[sent_start..chars[i].0], next_word) {
            i = j;
            continue;
        }
        push_trimmed(line, base, sent_start, end_byte, out);
        sent_start = end_byte;
        i = j;
    }
    if sent_start < line.len() {
        push_trimmed(line, base, sent_start, line.len(), out);
    }
}

fn push_trimmed(line: &str, base: usize, start: usize, end: usize, out: &mut Vec<Span>) {
    let piece = &line[start..end];
    let trimmed = piece.trim();
    if trimmed.is_empty() {
        return;
    }
    let s = start + (piece.len() - piece.trim_start().len());
    out.push(Span {
        start: base + s,
        end: base + s + trimmed.len(),
    });
}

/// `before` is the sentence text up to (not including) the period.
fn period_ends_sentence(before: &str, next_word: &str) -> bool {
    let token = before
        .rsplit(char::is_whitespace)
        .next()
        .unwrap_or("")
        .trim_start_matches(|c: char| !c.is_alphanumeric());
    if token.is_empty() {
        return true;
    }
    let lower = token.to_lowercase();
    let next_upper = next_word.chars().next().is_some_and(|c| c.is_uppercase());
    let next_lower = next_word.chars().next().is_some_and(|c| c.is_lowercase());

    if next_lower {
        return false;
    }
    // initials such as "J." in "J. K. Rowling", but not a bare "A. B."
    if is_initial(token) && initials_lead_to_name(next_word) {
        return false;
    }
    if ABBREVIATIONS.contains(&lower.as_str()) {
        return false;
    }
    if FINAL_ABBREVIATIONS.contains(&lower.as_str()) {
        return next_upper;
    }
    true
}

fn is_initial(token: &str) -> bool {
    let mut cs = token.chars();
    matches!((cs.next(), cs.next()), (Some(c), None) if c.is_alphabetic() && c.is_uppercase())
}

/// True when `rest` is zero or more further initials followed by a
/// capitalized word of at least two letters.
fn initials_lead_to_name(rest: &str) -> bool {
    for word in rest.split_whitespace() {
        if let Some(letter) = word.strip_suffix('.') {
            if is_initial(letter) {
                continue;
            }
        }
        let letters: Vec<char> = word.chars().take_while(|c| c.is_alphabetic()).collect();
        return letters.len() >= 2 && letters[0].is_uppercase();
    }
    false
}

/// A focused sentence with its bounded context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceWindow {
    pub sentence_index: usize,
    pub anchor: Option<String>,
    pub left_context: Vec<String>,
    pub focus: String,
    pub right_context: Vec<String>,
}

/// Builds one window per sentence. Context never crosses a paragraph.
pub fn build_windows(response: &Response, prompt: &Prompt) -> Vec<SentenceWindow> {
    let sentences = response.sentence_texts();
    let mut windows = Vec::with_capacity(sentences.len());
    for para in &response.paragraphs {
        for idx in para.start..para.end {
            let left_from = idx.saturating_sub(LEFT_CONTEXT).max(para.start);
            let right_to = (idx + 1 + RIGHT_CONTEXT).min(para.end);
            let anchor = match prompt.kind {
                PromptKind::Qa => Some(prompt.text.clone()),
                PromptKind::NonQa if para.len() > ANCHOR_MIN_PARAGRAPH && idx != para.start => {
                    Some(sentences[para.start].to_string())
                }
                PromptKind::NonQa => None,
            };
            windows.push(SentenceWindow {
                sentence_index: idx,
                anchor,
                left_context: sentences[left_from..idx].iter().map(|s| s.to_string()).collect(),
                focus: sentences[idx].to_string(),
                right_context: sentences[idx + 1..right_to].iter().map(|s| s.to_string()).collect(),
            });
        }
    }
    windows
}

pub fn render_window(window: &SentenceWindow) -> String {
    let focus = format!("{START_MARKER}{}{END_MARKER}", window.focus);
    window
        .anchor
        .iter()
        .map(String::as_str)
        .chain(window.left_context.iter().map(String::as_str))
        .chain(std::iter::once(focus.as_str()))
        .chain(window.right_context.iter().map(String::as_str))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(text: &str) -> Vec<&str> {
        segment(text).sentences.iter().map(|s| s.slice(text)).collect()
    }

    fn prompt(kind: PromptKind, text: &str) -> Prompt {
        Prompt {
            id: "p".into(),
            domain: "d".into(),
            kind,
            text: text.into(),
        }
    }

    #[test]
    fn two_paragraphs() {
        let text = "A. B.\n\nC.";
        let seg = segment(text);
        assert_eq!(texts(text), vec!["A.", "B.", "C."]);
        let paras: Vec<Vec<usize>> = seg.paragraphs.iter().map(|p| (p.start..p.end).collect()).collect();
        assert_eq!(paras, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn empty_text() {
        assert_eq!(segment(""), Segmentation::default());
        assert_eq!(segment("  \n\n \n"), Segmentation::default());
    }

    #[test]
    fn abbreviations_and_initials() {
        assert_eq!(texts("Dr. Smith arrived. He left."), vec!["Dr. Smith arrived.", "He left."]);
        assert_eq!(
            texts("J. K. Rowling wrote it in 1997. It sold well."),
            vec!["J. K. Rowling wrote it in 1997.", "It sold well."]
        );
        assert_eq!(
            texts("Apples, pears, etc. are fruit. Kale is not."),
            vec!["Apples, pears, etc. are fruit.", "Kale is not."]
        );
        assert_eq!(texts("It grew 3.5 percent. Then it fell."), vec!["It grew 3.5 percent.", "Then it fell."]);
        assert_eq!(texts("Acme Inc. Sales rose."), vec!["Acme Inc.", "Sales rose."]);
        assert_eq!(texts("John F. Kennedy spoke. He left."), vec!["John F. Kennedy spoke.", "He left."]);
    }

    #[test]
    fn punctuation_runs_and_quotes() {
        assert_eq!(
            texts("Really?! Yes. He said \"stop.\" Then went."),
            vec!["Really?!", "Yes.", "He said \"stop.\"", "Then went."]
        );
        assert_eq!(texts("No terminal punctuation"), vec!["No terminal punctuation"]);
    }

    #[test]
    fn list_items_are_single_sentences() {
        let text = "Here are some:\n1. First thing. It is big.\n2. Second.\n- Bullet. Still one.\n* Star";
        assert_eq!(
            texts(text),
            vec!["Here are some:", "1. First thing. It is big.", "2. Second.", "- Bullet. Still one.", "* Star"]
        );
        assert_eq!(segment(text).paragraphs.len(), 1);
    }

    #[test]
    fn one_sentence_nonqa_window() {
        let r = Response::new("p", "m", "Only one.");
        let w = build_windows(&r, &prompt(PromptKind::NonQa, "seed"));
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].anchor, None);
        assert!(w[0].left_context.is_empty() && w[0].right_context.is_empty());
        assert_eq!(w[0].focus, "Only one.");
        assert_eq!(render_window(&w[0]), "<SOS>Only one.<EOS>");
    }

    #[test]
    fn qa_window_last_sentence() {
        let r = Response::new("p", "m", "S0. S1. S2. S3. S4.");
        let w = build_windows(&r, &prompt(PromptKind::Qa, "Q?"));
        assert_eq!(w.len(), 5);
        assert_eq!(w[4].anchor.as_deref(), Some("Q?"));
        assert_eq!(w[4].left_context, vec!["S1.", "S2.", "S3."]);
        assert!(w[4].right_context.is_empty());
        assert_eq!(w[0].anchor.as_deref(), Some("Q?"));
        assert_eq!(render_window(&w[0]), "Q? <SOS>S0.<EOS> S1.");
    }

    #[test]
    fn nonqa_long_paragraph_anchor() {
        let r = Response::new("p", "m", "S0. S1. S2. S3. S4. S5. S6.");
        let w = build_windows(&r, &prompt(PromptKind::NonQa, "seed"));
        assert_eq!(w[6].anchor.as_deref(), Some("S0."));
        assert_eq!(w[6].left_context, vec!["S3.", "S4.", "S5."]);
        assert!(w[6].right_context.is_empty());
        assert_eq!(w[0].anchor, None);
        assert_eq!(render_window(&w[6]), "S0. S3. S4. S5. <SOS>S6.<EOS>");
    }

    #[test]
    fn short_paragraph_has_no_anchor_and_context_stops_at_boundary() {
        let r = Response::new("p", "m", "A0. A1. A2. A3. A4.\n\nB0. B1.");
        let w = build_windows(&r, &prompt(PromptKind::NonQa, "seed"));
        assert!(w.iter().all(|w| w.anchor.is_none()));
        assert_eq!(w[4].right_context, Vec::<String>::new());
        assert_eq!(w[5].left_context, Vec::<String>::new());
        assert_eq!(w[5].right_context, vec!["B1."]);
    }

    #[test]
    fn render_with_both_contexts() {
        let w = SentenceWindow {
            sentence_index: 1,
            anchor: None,
            left_context: vec!["A.".into()],
            focus: "B.".into(),
            right_context: vec!["C.".into()],
        };
        assert_eq!(render_window(&w), "A. <SOS>B.<EOS> C.");
    }

    fn prose() -> impl Strategy<Value = String> {
        let word = prop::sample::select(vec![
            "Dr.", "Smith", "went", "home.", "It", "rained!", "Why?", "e.g.", "3.5", "U.S.", "Paris", "etc.", "the",
            "- item", "1. step", "\n", "\n\n", "J.", "ok", "\"quoted.\"",
        ]);
        prop::collection::vec(word, 0..40).prop_map(|ws| ws.join(" "))
    }

    proptest! {
        #[test]
        fn spans_ordered_and_cover_prose(text in prose()) {
            let seg = segment(&text);
            let mut prev_end = 0;
            for s in &seg.sentences {
                prop_assert!(s.start >= prev_end && s.end > s.start);
                prop_assert_eq!(s.slice(&text).trim(), s.slice(&text));
                prev_end = s.end;
            }
            let covered: usize = seg.sentences.iter()
                .map(|s| s.slice(&text).chars().filter(|c| !c.is_whitespace()).count()).sum();
            prop_assert_eq!(covered, text.chars().filter(|c| !c.is_whitespace()).count());
            // paragraphs partition the sentence list
            let mut next = 0;
            for p in &seg.paragraphs {
                prop_assert!(!p.is_empty());
                prop_assert_eq!(p.start, next);
                next = p.end;
            }
            prop_assert_eq!(next, seg.sentences.len());
        }

        #[test]
        fn window_properties(text in prose(), qa in any::<bool>()) {
            let kind = if qa { PromptKind::Qa } else { PromptKind::NonQa };
            let p = prompt(kind, "What happened?");
            let r = Response::new("p", "m", &text);
            let ws = build_windows(&r, &p);
            prop_assert_eq!(ws.len(), r.sentences.len());
            let foci: Vec<&str> = ws.iter().map(|w| w.focus.as_str()).collect();
            prop_assert_eq!(foci, r.sentence_texts());
            for w in &ws {
                prop_assert!(w.left_context.len() <= LEFT_CONTEXT);
                prop_assert!(w.right_context.len() <= RIGHT_CONTEXT);
                let para = r.paragraphs.iter().find(|pp| pp.contains(w.sentence_index)).unwrap();
                if !qa && para.len() <= ANCHOR_MIN_PARAGRAPH {
                    prop_assert!(w.anchor.is_none());
                }
                // unmarked render is an ordered subsequence of anchor + text
                let rendered = render_window(w).replace(START_MARKER, "").replace(END_MARKER, "");
                let haystack = format!("{} {}", w.anchor.clone().unwrap_or_default(), r.text);
                let mut pos = 0;
                let pieces: Vec<&str> = w.anchor.iter().map(String::as_str)
                    .chain(w.left_context.iter().map(String::as_str))
                    .chain(std::iter::once(w.focus.as_str()))
                    .chain(w.right_context.iter().map(String::as_str)).collect();
                for piece in pieces {
                    prop_assert!(rendered.contains(piece));
                    let found = haystack[pos..].find(piece);
                    prop_assert!(found.is_some(), "{piece:?} out of order");
                    pos += found.unwrap() + piece.len();
                }
            }
        }
    }
}
