//! Parser for the generator output-block grammar:
//!
//! ```text
//! <<ITEM>>
//! Q: patient question, may continue on following lines
//! A: answer, may continue on following lines
//! <<END>>
//! ```
//!
//! Text outside blocks is ignored. Malformed blocks are dropped with a
//! diagnostic; parsing never fails.

use serde::{Deserialize, Serialize};

use crate::corpus::TaskLabel;

pub const ITEM_OPEN: &str = "<<ITEM>>";
pub const ITEM_CLOSE: &str = "<<END>>";

/// A generated (query, answer) pair awaiting filtering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub query: String,
    pub answer: String,
    pub task: Option<TaskLabel>,
}

impl Candidate {
    pub fn new(query: impl Into<String>, answer: impl Into<String>, task: Option<TaskLabel>) -> Self {
        Self {
            query: query.into(),
            answer: answer.into(),
            task,
        }
    }

    pub(crate) fn text(&self) -> String {
        format!("{}\n{}", self.query, self.answer)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub candidates: Vec<Candidate>,
    pub diagnostics: Vec<String>,
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Query,
    Answer,
}

struct Block {
    opened_at: usize,
    query: Option<String>,
    answer: Option<String>,
    current: Option<Field>,
    errors: Vec<String>,
}

impl Block {
    fn new(line: usize) -> Self {
        Self {
            opened_at: line,
            query: None,
            answer: None,
            current: None,
            errors: Vec::new(),
        }
    }

    fn set(&mut self, field: Field, value: &str, line: usize) {
        let slot = match field {
            Field::Query => &mut self.query,
            Field::Answer => &mut self.answer,
        };
        if slot.is_some() {
            let name = if field == Field::Query { "Q:" } else { "A:" };
            self.errors.push(format!("line {line}: repeated {name} field"));
        }
        *slot = Some(value.trim().to_owned());
        self.current = Some(field);
    }

    fn append(&mut self, text: &str, line: usize) {
        let slot = match self.current {
            Some(Field::Query) => &mut self.query,
            Some(Field::Answer) => &mut self.answer,
            None => {
                self.errors.push(format!("line {line}: text before any Q:/A: field"));
                return;
            }
        };
        let s = slot.get_or_insert_with(String::new);
        if !s.is_empty() {
            s.push(' ');
        }
        s.push_str(text.trim());
    }

    fn finish(self) -> Result<Candidate, String> {
        let at = self.opened_at;
        if let Some(first) = self.errors.into_iter().next() {
            return Err(format!("block at line {at}: {first}"));
        }
        let query = match self.query {
            None => return Err(format!("block at line {at}: missing Q: field")),
            Some(q) if q.is_empty() => return Err(format!("block at line {at}: empty query")),
            Some(q) => q,
        };
        let answer = match self.answer {
            None => return Err(format!("block at line {at}: missing A: field")),
            Some(a) if a.is_empty() => return Err(format!("block at line {at}: empty answer")),
            Some(a) => a,
        };
        Ok(Candidate::new(query, answer, None))
    }
}

pub fn parse_generation(raw: &str) -> ParseOutcome {
    let mut out = ParseOutcome::default();
    let mut block: Option<Block> = None;
    let mut saw_marker = false;

    for (i, raw_line) in raw.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim();
        if line == ITEM_OPEN {
            saw_marker = true;
            if let Some(b) = block.take() {
                out.diagnostics
                    .push(format!("block at line {}: not closed before next {ITEM_OPEN}", b.opened_at));
            }
            block = Some(Block::new(line_no));
            continue;
        }
        if line == ITEM_CLOSE {
            match block.take() {
                Some(b) => match b.finish() {
                    Ok(c) => out.candidates.push(c),
                    Err(d) => out.diagnostics.push(d),
                },
                None => out.diagnostics.push(format!("line {line_no}: {ITEM_CLOSE} without open block")),
            }
            continue;
        }
        let Some(b) = block.as_mut() else { continue };
        if let Some(rest) = line.strip_prefix("Q:") {
            b.set(Field::Query, rest, line_no);
        } else if let Some(rest) = line.strip_prefix("A:") {
            b.set(Field::Answer, rest, line_no);
        } else if !line.is_empty() {
            b.append(line, line_no);
        }
    }
    if let Some(b) = block {
        out.diagnostics
            .push(format!("block at line {}: not closed before end of output", b.opened_at));
    }
    if !saw_marker {
        out.diagnostics.push(format!("no {ITEM_OPEN} block found in output"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_well_formed_blocks() {
        let raw = "Here you go.\n<<ITEM>>\nQ: first q\nA: first a\n<<END>>\n<<ITEM>>\nQ: second\nA: two\n<<END>>\n";
        let out = parse_generation(raw);
        assert_eq!(out.candidates.len(), 2);
        assert!(out.diagnostics.is_empty());
        assert_eq!(out.candidates[1], Candidate::new("second", "two", None));
    }

    #[test]
    fn no_marker_gives_diagnostic_only() {
        let out = parse_generation("Sure! Q: what A: nothing");
        assert!(out.candidates.is_empty());
        assert_eq!(out.diagnostics.len(), 1);
    }

    #[test]
    fn empty_answer_block_is_dropped_with_one_diagnostic() {
        // Block 1 is complete. Block 2 has `A:` with nothing after it and no
        // continuation line, so its answer is empty.
        let raw = "<<ITEM>>\nQ: Why do my palms drip?\nA: Likely primary focal hyperhidrosis.\n<<END>>\n\
                   <<ITEM>>\nQ: What should I try?\nA:\n<<END>>\n";
        let out = parse_generation(raw);
        assert_eq!(out.candidates.len(), 1);
        assert_eq!(out.diagnostics.len(), 1);
        assert!(out.diagnostics[0].contains("empty answer"), "{:?}", out.diagnostics);
    }

    #[test]
    fn continuation_lines_join_with_spaces() {
        let out = parse_generation("<<ITEM>>\nQ: line one\n  line two\nA: a1\na2\n<<END>>");
        assert_eq!(out.candidates, vec![Candidate::new("line one line two", "a1 a2", None)]);
    }

    #[test]
    fn malformed_blocks_never_panic() {
        for raw in [
            "<<END>>",
            "<<ITEM>>\nQ: a\n",
            "<<ITEM>>\n<<ITEM>>\nQ: x\nA: y\n<<END>>",
            "<<ITEM>>\nstray\nQ: x\nA: y\n<<END>>",
            "<<ITEM>>\nQ: x\nQ: again\nA: y\n<<END>>",
            "",
        ] {
            let out = parse_generation(raw);
            assert!(!out.diagnostics.is_empty(), "{raw:?}");
        }
        let out = parse_generation("<<ITEM>>\n<<ITEM>>\nQ: x\nA: y\n<<END>>");
        assert_eq!(out.candidates.len(), 1);
    }
}
