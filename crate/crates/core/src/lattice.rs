//! Contiguous fragments of a tokenized text and their inclusion lattice.
//!
//! The lattice is drawn as a triangle: row `k` holds the `n - k + 1`
//! fragments of length `k`, the whole text sits on top and the single
//! tokens at the bottom.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Instance, Token};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LatticeError {
    #[error("fragments belong to different instances ({0:?} vs {1:?})")]
    CrossInstance(String, String),
    #[error("span [{start},{end}) out of range for {len} tokens")]
    OutOfRange { start: usize, end: usize, len: usize },
}

/// Half-open token range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start < end, "empty span [{start},{end})");
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Strict containment: `self` covers `other` and differs from it.
    pub fn includes(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end && self != other
    }

    pub fn comparable(&self, other: &Span) -> bool {
        self.includes(other) || other.includes(self)
    }

    /// Comparable and one token longer or shorter: an edge of the triangle.
    pub fn adjacent(&self, other: &Span) -> bool {
        self.comparable(other) && self.len().abs_diff(other.len()) == 1
    }

    /// Shares at least one token.
    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn union(&self, other: &Span) -> Span {
        Span::new(self.start.min(other.start), self.end.max(other.end))
    }

    pub fn tokens<'a>(&self, tokens: &'a [Token]) -> Result<&'a [Token], LatticeError> {
        tokens.get(self.start..self.end).filter(|_| !self.is_empty()).ok_or(LatticeError::OutOfRange {
            start: self.start,
            end: self.end,
            len: tokens.len(),
        })
    }
}

/// A span tied to the instance it was cut from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Fragment<'a> {
    pub instance_id: &'a str,
    pub span: Span,
}

impl<'a> Fragment<'a> {
    pub fn new(instance_id: &'a str, start: usize, end: usize) -> Self {
        Fragment { instance_id, span: Span::new(start, end) }
    }
}

/// Whether `b` strictly includes `a`. Both must come from the same instance.
pub fn includes(b: &Fragment<'_>, a: &Fragment<'_>) -> Result<bool, LatticeError> {
    if b.instance_id != a.instance_id {
        return Err(LatticeError::CrossInstance(b.instance_id.to_string(), a.instance_id.to_string()));
    }
    Ok(b.span.includes(&a.span))
}

/// Which fragments count as neighbours when testing for maxima.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Neighbourhood {
    /// Every fragment comparable under inclusion.
    #[default]
    Comparable,
    /// Only fragments one token longer or shorter that are comparable.
    Immediate,
}

impl Neighbourhood {
    pub fn related(self, a: &Span, b: &Span) -> bool {
        match self {
            Neighbourhood::Comparable => a.comparable(b),
            Neighbourhood::Immediate => a.adjacent(b),
        }
    }
}

/// Dense numbering of the `n(n+1)/2` spans over `n` tokens, row by row
/// (length 1 first), left to right within a row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TriangleIndex {
    n: usize,
}

impl TriangleIndex {
    pub fn new(n: usize) -> Self {
        TriangleIndex { n }
    }

    pub fn tokens(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn row_offset(&self, length: usize) -> usize {
        let k = length - 1;
        k * (self.n + 1) - k * (k + 1) / 2
    }

    pub fn index(&self, span: Span) -> usize {
        debug_assert!(span.end <= self.n && !span.is_empty());
        self.row_offset(span.len()) + span.start
    }

    pub fn span(&self, mut index: usize) -> Span {
        for length in 1..=self.n {
            let row = self.n - length + 1;
            if index < row {
                return Span::new(index, index + length);
            }
            index -= row;
        }
        panic!("triangle index out of range");
    }

    /// Spans of one row, left to right.
    pub fn row(&self, length: usize) -> impl Iterator<Item = Span> {
        let n = self.n;
        (0..=n.saturating_sub(length)).filter(move |_| length >= 1 && length <= n).map(move |s| Span::new(s, s + length))
    }

    /// All spans in index order.
    pub fn spans(&self) -> impl Iterator<Item = Span> {
        let this = *self;
        (1..=self.n).flat_map(move |length| this.row(length))
    }
}

/// All fragments of one instance.
#[derive(Clone, Copy, Debug)]
pub struct FragmentTriangle<'a> {
    instance: &'a Instance,
    index: TriangleIndex,
}

impl<'a> FragmentTriangle<'a> {
    pub fn instance(&self) -> &'a Instance {
        self.instance
    }

    pub fn index(&self) -> TriangleIndex {
        self.index
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Fragments of length `length` (1-based), left to right.
    pub fn row(&self, length: usize) -> impl Iterator<Item = Fragment<'a>> {
        let id = self.instance.id.as_str();
        self.index.row(length).map(move |span| Fragment { instance_id: id, span })
    }

    pub fn fragments(&self) -> impl Iterator<Item = Fragment<'a>> {
        let id = self.instance.id.as_str();
        self.index.spans().map(move |span| Fragment { instance_id: id, span })
    }

    pub fn contains(&self, fragment: &Fragment<'_>) -> bool {
        fragment.instance_id == self.instance.id && fragment.span.end <= self.index.n && !fragment.span.is_empty()
    }
}

pub fn enumerate_fragments(instance: &Instance) -> FragmentTriangle<'_> {
    FragmentTriangle { instance, index: TriangleIndex::new(instance.tokens.len()) }
}

pub fn neighbours<'a>(w: &Fragment<'_>, triangle: &FragmentTriangle<'a>, mode: Neighbourhood) -> Vec<Fragment<'a>> {
    triangle.fragments().filter(|other| mode.related(&w.span, &other.span)).collect()
}

/// The fragment's tokens joined by single spaces.
pub fn surface(w: &Fragment<'_>, instance: &Instance) -> Result<String, LatticeError> {
    if w.instance_id != instance.id {
        return Err(LatticeError::CrossInstance(w.instance_id.to_string(), instance.id.clone()));
    }
    Ok(crate::corpus::join_tokens(w.span.tokens(&instance.tokens)?))
}
