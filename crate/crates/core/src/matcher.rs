//! Exhaustive lexeme matching.
//!
//! An Aho-Corasick automaton over `char`s. Every occurrence of every lexeme is
//! reported, overlapping and nested ones included. Masking filters matches at
//! query time; the automaton itself never changes after [`LexemeMatcher::new`].

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::gazetteer::Gazetteer;

#[derive(Debug, thiserror::Error)]
pub enum MatcherError {
    #[error("cannot build a matcher from an empty gazetteer")]
    EmptyGazetteer,
}

const ROOT: u32 = 0;
const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    /// Sorted by char.
    children: Vec<(char, u32)>,
    fail: u32,
    /// Lexeme ending exactly at this node.
    output: u32,
    /// Nearest proper suffix node (via fail links) that has an output.
    dict: u32,
}

impl Node {
    fn new() -> Self {
        Node {
            children: Vec::new(),
            fail: ROOT,
            output: NONE,
            dict: NONE,
        }
    }

    fn child(&self, c: char) -> Option<u32> {
        self.children
            .binary_search_by_key(&c, |&(k, _)| k)
            .ok()
            .map(|i| self.children[i].1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MatchSpan {
    pub start: usize,
    pub end: usize,
    pub lexeme_id: u32,
    pub surface: String,
}

impl MatchSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Lexemes hidden from [`LexemeMatcher::match_all`], by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexemeMask {
    masked: Vec<bool>,
    count: usize,
}

impl LexemeMask {
    pub fn is_masked(&self, id: u32) -> bool {
        self.masked.get(id as usize).copied().unwrap_or(false)
    }

    /// Number of matcher lexemes covered by the mask.
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

#[derive(Debug, Clone)]
pub struct LexemeMatcher {
    nodes: Vec<Node>,
    lexemes: Vec<String>,
    lengths: Vec<usize>,
}

impl LexemeMatcher {
    /// Builds the automaton. Lexeme ids are the gazetteer's ids.
    pub fn new(gazetteer: &Gazetteer) -> Result<Self, MatcherError> {
        Self::from_lexemes(gazetteer.lexemes())
    }

    pub fn from_lexemes<S: AsRef<str>>(lexemes: &[S]) -> Result<Self, MatcherError> {
        if lexemes.is_empty() {
            return Err(MatcherError::EmptyGazetteer);
        }
        let mut nodes = vec![Node::new()];
        let mut lengths = Vec::with_capacity(lexemes.len());
        for (id, lex) in lexemes.iter().enumerate() {
            let mut cur = ROOT;
            let mut len = 0;
            for c in lex.as_ref().chars() {
                len += 1;
                cur = match nodes[cur as usize].child(c) {
                    Some(next) => next,
                    None => {
                        let next = nodes.len() as u32;
                        nodes.push(Node::new());
                        let children = &mut nodes[cur as usize].children;
                        let pos = children.partition_point(|&(k, _)| k < c);
                        children.insert(pos, (c, next));
                        next
                    }
                };
            }
            // Lexeme ids are unique strings, so a node holds at most one; keep
            // the first if a caller passes duplicates.
            if nodes[cur as usize].output == NONE {
                nodes[cur as usize].output = id as u32;
            }
            lengths.push(len);
        }

        // Breadth-first failure links.
        let mut queue = VecDeque::new();
        for i in 0..nodes[ROOT as usize].children.len() {
            let child = nodes[ROOT as usize].children[i].1;
            nodes[child as usize].fail = ROOT;
            queue.push_back(child);
        }
        while let Some(u) = queue.pop_front() {
            for i in 0..nodes[u as usize].children.len() {
                let (c, v) = nodes[u as usize].children[i];
                let mut f = nodes[u as usize].fail;
                let fail = loop {
                    if let Some(next) = nodes[f as usize].child(c) {
                        break next;
                    }
                    if f == ROOT {
                        break ROOT;
                    }
                    f = nodes[f as usize].fail;
                };
                nodes[v as usize].fail = fail;
                nodes[v as usize].dict = if nodes[fail as usize].output != NONE {
                    fail
                } else {
                    nodes[fail as usize].dict
                };
                queue.push_back(v);
            }
        }

        Ok(LexemeMatcher {
            nodes,
            lexemes: lexemes.iter().map(|l| l.as_ref().to_string()).collect(),
            lengths,
        })
    }

    pub fn num_lexemes(&self) -> usize {
        self.lexemes.len()
    }

    pub fn lexeme(&self, id: u32) -> &str {
        &self.lexemes[id as usize]
    }

    pub fn lexemes(&self) -> &[String] {
        &self.lexemes
    }

    /// Hash of the lexeme list, in id order.
    pub fn fingerprint(&self) -> String {
        crate::seed::fingerprint(&self.lexemes)
    }

    /// Builds a mask from lexeme strings. Strings that are not lexemes of this
    /// matcher are ignored.
    pub fn mask<I, S>(&self, lexemes: I) -> LexemeMask
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let wanted: std::collections::HashSet<String> = lexemes
            .into_iter()
            .map(|s| s.as_ref().to_string())
            .collect();
        let masked: Vec<bool> = self.lexemes.iter().map(|l| wanted.contains(l)).collect();
        let count = masked.iter().filter(|&&m| m).count();
        LexemeMask { masked, count }
    }

    /// All occurrences of all unmasked lexemes, sorted by `(start, end, id)`.
    pub fn match_all(&self, chars: &[char], mask: Option<&LexemeMask>) -> Vec<MatchSpan> {
        let mut out = Vec::new();
        let mut state = ROOT;
        for (i, &c) in chars.iter().enumerate() {
            state = loop {
                if let Some(next) = self.nodes[state as usize].child(c) {
                    break next;
                }
                if state == ROOT {
                    break ROOT;
                }
                state = self.nodes[state as usize].fail;
            };
            let mut hit = if self.nodes[state as usize].output != NONE {
                state
            } else {
                self.nodes[state as usize].dict
            };
            while hit != NONE {
                let id = self.nodes[hit as usize].output;
                if !mask.is_some_and(|m| m.is_masked(id)) {
                    let end = i + 1;
                    let start = end - self.lengths[id as usize];
                    out.push(MatchSpan {
                        start,
                        end,
                        lexeme_id: id,
                        surface: self.lexemes[id as usize].clone(),
                    });
                }
                hit = self.nodes[hit as usize].dict;
            }
        }
        out.sort_unstable_by_key(|m| (m.start, m.end, m.lexeme_id));
        out
    }
}
