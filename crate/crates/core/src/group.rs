//! Finitely generated groups used by the experiments: free groups (the
//! integers are the rank-one case), free products of free groups, finite
//! groups given by a multiplication table, and direct products.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{structural, validation, Result};

/// A generator or its formal inverse.
///
/// Letters order as `a, a^-1, b, b^-1, ...`, which fixes the order of
/// elements inside a ball.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Letter {
    pub generator: u16,
    pub inverse: bool,
}

impl Letter {
    pub fn new(generator: usize, inverse: bool) -> Self {
        Letter {
            generator: generator as u16,
            inverse,
        }
    }

    pub fn gen(generator: usize) -> Self {
        Self::new(generator, false)
    }

    pub fn inv(self) -> Self {
        Letter {
            generator: self.generator,
            inverse: !self.inverse,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupSpec {
    /// Free group on `rank` generators; rank 1 is the integers.
    Free {
        rank: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<Vec<String>>,
    },
    /// Free product of free groups of the given ranks. Generators are
    /// numbered consecutively across factors.
    FreeProduct {
        factors: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<Vec<String>>,
    },
    /// Finite group from its multiplication table; element 0 is the identity
    /// and `table[a][b]` is the index of `ab`.
    Finite {
        table: Vec<Vec<usize>>,
        generators: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<Vec<String>>,
    },
    Product {
        left: Box<GroupSpec>,
        right: Box<GroupSpec>,
    },
}

/// Canonical element of a [`GroupSpec`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroupElement {
    /// Freely reduced word, for free groups and free products.
    Word(Vec<Letter>),
    /// Index into a finite group's table.
    Finite(usize),
    Pair(Box<GroupElement>, Box<GroupElement>),
}

impl GroupElement {
    pub fn pair(left: GroupElement, right: GroupElement) -> Self {
        GroupElement::Pair(Box::new(left), Box::new(right))
    }

    pub fn as_word(&self) -> Option<&[Letter]> {
        match self {
            GroupElement::Word(w) => Some(w),
            _ => None,
        }
    }
}

/// Free reduction: cancels adjacent letter/inverse pairs until none remain.
pub fn reduce(word: &[Letter]) -> Vec<Letter> {
    let mut out: Vec<Letter> = Vec::with_capacity(word.len());
    for &l in word {
        if out.last() == Some(&l.inv()) {
            out.pop();
        } else {
            out.push(l);
        }
    }
    out
}

/// Canonical key of the right coset `Hg` for a free factor `H`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CosetKey(pub Vec<Letter>);

impl GroupSpec {
    pub fn free(rank: usize) -> Self {
        GroupSpec::Free { rank, labels: None }
    }

    pub fn integers() -> Self {
        Self::free(1)
    }

    pub fn free_product(factors: Vec<usize>) -> Self {
        GroupSpec::FreeProduct {
            factors,
            labels: None,
        }
    }

    /// Cyclic group Z/n as a table with generator 1.
    pub fn cyclic(n: usize) -> Self {
        let table = (0..n).map(|a| (0..n).map(|b| (a + b) % n).collect()).collect();
        GroupSpec::Finite {
            table,
            generators: vec![1 % n.max(1)],
            labels: None,
        }
    }

    pub fn product(left: GroupSpec, right: GroupSpec) -> Self {
        GroupSpec::Product {
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Checks labels and, for finite tables, the group axioms exhaustively.
    pub fn validate(&self) -> Result<()> {
        match self {
            GroupSpec::Free { rank, labels } => {
                if *rank == 0 {
                    return Err(validation("free group needs rank >= 1"));
                }
                check_labels(labels.as_deref(), *rank)
            }
            GroupSpec::FreeProduct { factors, labels } => {
                if factors.is_empty() || factors.iter().any(|&r| r == 0) {
                    return Err(validation("free product factors must have rank >= 1"));
                }
                check_labels(labels.as_deref(), factors.iter().sum())
            }
            GroupSpec::Finite {
                table,
                generators,
                labels,
            } => {
                validate_table(table)?;
                if generators.iter().any(|&g| g >= table.len()) {
                    return Err(validation("generator index outside the table"));
                }
                check_labels(labels.as_deref(), generators.len())?;
                // Generators must reach every element for balls to exhaust the group.
                let reached = finite_bfs(table, generators).len();
                if reached != table.len() {
                    return Err(validation(format!(
                        "generators reach {reached} of {} elements",
                        table.len()
                    )));
                }
                Ok(())
            }
            GroupSpec::Product { left, right } => {
                left.validate()?;
                right.validate()
            }
        }
    }

    /// Number of declared generators (each with a formal inverse). For a
    /// product this is the sum over both sides.
    pub fn num_generators(&self) -> usize {
        match self {
            GroupSpec::Free { rank, .. } => *rank,
            GroupSpec::FreeProduct { factors, .. } => factors.iter().sum(),
            GroupSpec::Finite { generators, .. } => generators.len(),
            GroupSpec::Product { left, right } => left.num_generators() + right.num_generators(),
        }
    }

    pub fn is_word_group(&self) -> bool {
        matches!(self, GroupSpec::Free { .. } | GroupSpec::FreeProduct { .. })
    }

    pub fn labels(&self) -> Vec<String> {
        match self {
            GroupSpec::Free { rank, labels } => labels.clone().unwrap_or_else(|| default_labels(&[*rank])),
            GroupSpec::FreeProduct { factors, labels } => {
                labels.clone().unwrap_or_else(|| default_labels(factors))
            }
            GroupSpec::Finite {
                generators, labels, ..
            } => labels
                .clone()
                .unwrap_or_else(|| default_labels(&[generators.len()])),
            GroupSpec::Product { left, right } => {
                let mut l = left.labels();
                l.extend(right.labels());
                l
            }
        }
    }

    /// All letters (generators and inverses) in ball order.
    pub fn letters(&self) -> Vec<Letter> {
        (0..self.num_generators())
            .flat_map(|g| [Letter::new(g, false), Letter::new(g, true)])
            .collect()
    }

    pub fn identity(&self) -> GroupElement {
        match self {
            GroupSpec::Free { .. } | GroupSpec::FreeProduct { .. } => GroupElement::Word(vec![]),
            GroupSpec::Finite { .. } => GroupElement::Finite(0),
            GroupSpec::Product { left, right } => GroupElement::pair(left.identity(), right.identity()),
        }
    }

    pub fn is_identity(&self, g: &GroupElement) -> bool {
        *g == self.identity()
    }

    /// The element represented by a single letter. Not defined for products,
    /// whose generators live on one side.
    pub fn letter_element(&self, l: Letter) -> Result<GroupElement> {
        if usize::from(l.generator) >= self.num_generators() {
            return Err(structural(format!("generator {} not declared", l.generator)));
        }
        match self {
            GroupSpec::Free { .. } | GroupSpec::FreeProduct { .. } => Ok(GroupElement::Word(vec![l])),
            GroupSpec::Finite {
                table, generators, ..
            } => {
                let g = generators[usize::from(l.generator)];
                Ok(GroupElement::Finite(if l.inverse {
                    finite_inverse(table, g)
                } else {
                    g
                }))
            }
            GroupSpec::Product { .. } => Err(structural("product groups have no single-letter elements")),
        }
    }

    /// Checks that `g` has the shape of an element of this group.
    pub fn contains(&self, g: &GroupElement) -> bool {
        match (self, g) {
            (GroupSpec::Free { .. } | GroupSpec::FreeProduct { .. }, GroupElement::Word(w)) => {
                let k = self.num_generators();
                w.iter().all(|l| usize::from(l.generator) < k) && w.windows(2).all(|p| p[0] != p[1].inv())
            }
            (GroupSpec::Finite { table, .. }, GroupElement::Finite(i)) => *i < table.len(),
            (GroupSpec::Product { left, right }, GroupElement::Pair(a, b)) => {
                left.contains(a) && right.contains(b)
            }
            _ => false,
        }
    }

    fn check(&self, g: &GroupElement) -> Result<()> {
        if self.contains(g) {
            Ok(())
        } else {
            Err(structural(format!("element {g:?} does not belong to this group")))
        }
    }

    pub fn multiply(&self, a: &GroupElement, b: &GroupElement) -> Result<GroupElement> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.multiply_unchecked(a, b))
    }

    fn multiply_unchecked(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        match (self, a, b) {
            (_, GroupElement::Word(x), GroupElement::Word(y)) => {
                let mut w = x.clone();
                for &l in y {
                    if w.last() == Some(&l.inv()) {
                        w.pop();
                    } else {
                        w.push(l);
                    }
                }
                GroupElement::Word(w)
            }
            (GroupSpec::Finite { table, .. }, GroupElement::Finite(x), GroupElement::Finite(y)) => {
                GroupElement::Finite(table[*x][*y])
            }
            (GroupSpec::Product { left, right }, GroupElement::Pair(a1, a2), GroupElement::Pair(b1, b2)) => {
                GroupElement::pair(left.multiply_unchecked(a1, b1), right.multiply_unchecked(a2, b2))
            }
            _ => unreachable!("shapes checked by caller"),
        }
    }

    pub fn inverse(&self, g: &GroupElement) -> Result<GroupElement> {
        self.check(g)?;
        Ok(self.inverse_unchecked(g))
    }

    fn inverse_unchecked(&self, g: &GroupElement) -> GroupElement {
        match (self, g) {
            (_, GroupElement::Word(w)) => GroupElement::Word(w.iter().rev().map(|l| l.inv()).collect()),
            (GroupSpec::Finite { table, .. }, GroupElement::Finite(x)) => {
                GroupElement::Finite(finite_inverse(table, *x))
            }
            (GroupSpec::Product { left, right }, GroupElement::Pair(a, b)) => {
                GroupElement::pair(left.inverse_unchecked(a), right.inverse_unchecked(b))
            }
            _ => unreachable!("shapes checked by caller"),
        }
    }

    /// A word in the generators representing `g`. Free kinds return the
    /// reduced word; finite groups return the shortlex-first geodesic.
    pub fn word_of(&self, g: &GroupElement) -> Result<Vec<Letter>> {
        self.check(g)?;
        match (self, g) {
            (_, GroupElement::Word(w)) => Ok(w.clone()),
            (GroupSpec::Finite { table, generators, .. }, GroupElement::Finite(x)) => {
                let words = finite_bfs(table, generators);
                Ok(words
                    .into_iter()
                    .find(|(e, _)| e == x)
                    .map(|(_, w)| w)
                    .expect("validated generating set"))
            }
            _ => Err(structural("product elements have no single word; evaluate componentwise")),
        }
    }

    /// Word length with respect to the declared generators; for direct
    /// products the maximum of the two component lengths.
    pub fn word_length(&self, g: &GroupElement) -> Result<usize> {
        match (self, g) {
            (GroupSpec::Product { left, right }, GroupElement::Pair(a, b)) => {
                Ok(left.word_length(a)?.max(right.word_length(b)?))
            }
            _ => Ok(self.word_of(g)?.len()),
        }
    }

    /// All elements of word length at most `radius`, identity first, ordered
    /// by length and then lexicographically by letters.
    pub fn ball(&self, radius: usize) -> Window {
        let elements = self.ball_elements(radius);
        Window { elements }
    }

    fn ball_elements(&self, radius: usize) -> Vec<GroupElement> {
        match self {
            GroupSpec::Free { .. } | GroupSpec::FreeProduct { .. } => {
                let letters = self.letters();
                let mut layer: Vec<Vec<Letter>> = vec![vec![]];
                let mut out = vec![GroupElement::Word(vec![])];
                for _ in 0..radius {
                    let mut next = Vec::new();
                    for w in &layer {
                        for &l in &letters {
                            if w.last() != Some(&l.inv()) {
                                let mut x = w.clone();
                                x.push(l);
                                next.push(x);
                            }
                        }
                    }
                    out.extend(next.iter().cloned().map(GroupElement::Word));
                    layer = next;
                }
                out
            }
            GroupSpec::Finite { table, generators, .. } => finite_bfs(table, generators)
                .into_iter()
                .filter(|(_, w)| w.len() <= radius)
                .map(|(e, _)| GroupElement::Finite(e))
                .collect(),
            GroupSpec::Product { left, right } => {
                let lb = left.ball_elements(radius);
                let rb = right.ball_elements(radius);
                let ll: Vec<usize> = lb.iter().map(|g| left.word_length(g).unwrap()).collect();
                let rl: Vec<usize> = rb.iter().map(|g| right.word_length(g).unwrap()).collect();
                let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
                for i in 0..lb.len() {
                    for j in 0..rb.len() {
                        pairs.push((ll[i].max(rl[j]), i, j));
                    }
                }
                pairs.sort_unstable();
                pairs
                    .into_iter()
                    .map(|(_, i, j)| GroupElement::pair(lb[i].clone(), rb[j].clone()))
                    .collect()
            }
        }
    }

    /// For free products: index of the factor a generator belongs to.
    pub fn factor_of(&self, l: Letter) -> Result<usize> {
        match self {
            GroupSpec::FreeProduct { factors, .. } => {
                let mut start = 0;
                for (i, &r) in factors.iter().enumerate() {
                    if usize::from(l.generator) < start + r {
                        return Ok(i);
                    }
                    start += r;
                }
                Err(structural(format!("generator {} not declared", l.generator)))
            }
            _ => Err(structural("factor_of needs a free-product group")),
        }
    }

    /// Key of the right coset `Hg` where `H` is the free factor `factor`.
    ///
    /// Two elements get equal keys iff `g g'^-1` lies in `H`: the key is the
    /// reduced word with its maximal leading `H`-syllable removed.
    pub fn right_coset_key(&self, g: &GroupElement, factor: usize) -> Result<CosetKey> {
        let GroupSpec::FreeProduct { factors, .. } = self else {
            return Err(structural("right_coset_key needs a free-product group"));
        };
        if factor >= factors.len() {
            return Err(structural(format!("factor {factor} not declared")));
        }
        self.check(g)?;
        let w = g.as_word().expect("free product elements are words");
        let mut start = 0;
        while start < w.len() && self.factor_of(w[start])? == factor {
            start += 1;
        }
        Ok(CosetKey(w[start..].to_vec()))
    }

    pub fn format_element(&self, g: &GroupElement) -> String {
        match (self, g) {
            (GroupSpec::Product { left, right }, GroupElement::Pair(a, b)) => {
                format!("({},{})", left.format_element(a), right.format_element(b))
            }
            _ => match self.word_of(g) {
                Ok(w) if w.is_empty() => "e".to_string(),
                Ok(w) => self.format_word(&w),
                Err(_) => format!("{g:?}"),
            },
        }
    }

    pub fn format_word(&self, w: &[Letter]) -> String {
        let labels = self.labels();
        let plain = labels.iter().all(|l| l.chars().count() == 1 || l.ends_with('\''));
        let parts: Vec<String> = w
            .iter()
            .map(|l| {
                let base = &labels[usize::from(l.generator)];
                if l.inverse {
                    format!("{base}^-1")
                } else {
                    base.clone()
                }
            })
            .collect();
        if plain {
            parts.concat()
        } else {
            parts.join(" ")
        }
    }

    /// Parses a word such as `"a b^-1 a'"` or `"ab^-1a'"`; `"e"` or the empty
    /// string is the identity. Label tokens are matched longest-first.
    pub fn parse_element(&self, s: &str) -> Result<GroupElement> {
        if let GroupSpec::Product { left, right } = self {
            let inner = s
                .trim()
                .strip_prefix('(')
                .and_then(|t| t.strip_suffix(')'))
                .ok_or_else(|| structural("product elements are written (g,h)"))?;
            let (a, b) = split_top_comma(inner).ok_or_else(|| structural("expected (g,h)"))?;
            return Ok(GroupElement::pair(left.parse_element(a)?, right.parse_element(b)?));
        }
        let labels = self.labels();
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(labels[i].len()));
        let mut letters = Vec::new();
        let mut rest = s.trim();
        if rest == "e" && !labels.iter().any(|l| l == "e") {
            rest = "";
        }
        while !rest.is_empty() {
            rest = rest.trim_start();
            if rest.is_empty() {
                break;
            }
            let i = order
                .iter()
                .copied()
                .find(|&i| rest.starts_with(labels[i].as_str()) && !rest[labels[i].len()..].starts_with('\''))
                .ok_or_else(|| structural(format!("cannot parse generator at '{rest}'")))?;
            rest = &rest[labels[i].len()..];
            let inverse = if let Some(r) = rest.strip_prefix("^-1") {
                rest = r;
                true
            } else {
                false
            };
            letters.push(Letter::new(i, inverse));
        }
        match self {
            GroupSpec::Finite { .. } => {
                let mut acc = self.identity();
                for l in letters {
                    let x = self.letter_element(l)?;
                    acc = self.multiply(&acc, &x)?;
                }
                Ok(acc)
            }
            _ => Ok(GroupElement::Word(reduce(&letters))),
        }
    }
}

fn split_top_comma(s: &str) -> Option<(&str, &str)> {
    let mut depth = 0i32;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => return Some((&s[..i], &s[i + 1..])),
            _ => {}
        }
    }
    None
}

fn default_labels(factors: &[usize]) -> Vec<String> {
    const BASE: &[char] = &[
        'a', 'b', 'c', 'd', 'f', 'g', 'h', 'i', 'j', 'k', 'l', 'm', 'n', 'o', 'p', 'q', 'r', 's', 't', 'u', 'v',
        'w', 'x', 'y', 'z',
    ];
    let mut out = Vec::new();
    for (fi, &rank) in factors.iter().enumerate() {
        for i in 0..rank {
            let mut s = String::new();
            s.push(BASE[i % BASE.len()]);
            // Beyond the alphabet, and for later free factors, add primes.
            for _ in 0..(fi + i / BASE.len()) {
                s.push('\'');
            }
            out.push(s);
        }
    }
    out
}

fn check_labels(labels: Option<&[String]>, expected: usize) -> Result<()> {
    let Some(labels) = labels else { return Ok(()) };
    if labels.len() != expected {
        return Err(validation(format!("expected {expected} labels, got {}", labels.len())));
    }
    let mut seen = std::collections::HashSet::new();
    for l in labels {
        if l.is_empty() || !l.is_ascii() || l.contains(char::is_whitespace) || l.contains("^-1") {
            return Err(validation(format!("invalid generator label '{l}'")));
        }
        if !seen.insert(l) {
            return Err(validation(format!("duplicate generator label '{l}'")));
        }
    }
    Ok(())
}

fn validate_table(table: &[Vec<usize>]) -> Result<()> {
    let n = table.len();
    if n == 0 {
        return Err(validation("empty multiplication table"));
    }
    if table.iter().any(|row| row.len() != n || row.iter().any(|&x| x >= n)) {
        return Err(validation("table must be square with entries < order"));
    }
    for a in 0..n {
        if table[0][a] != a || table[a][0] != a {
            return Err(validation("element 0 must be the identity"));
        }
        if !(0..n).any(|b| table[a][b] == 0 && table[b][a] == 0) {
            return Err(validation(format!("element {a} has no inverse")));
        }
    }
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                if table[table[a][b]][c] != table[a][table[b][c]] {
                    return Err(validation(format!("associativity fails at ({a},{b},{c})")));
                }
            }
        }
    }
    Ok(())
}

fn finite_inverse(table: &[Vec<usize>], a: usize) -> usize {
    (0..table.len()).find(|&b| table[a][b] == 0).expect("validated table")
}

/// Breadth-first search of the Cayley graph from the identity, expanding
/// letters in ball order; returns each reached element with its first word.
fn finite_bfs(table: &[Vec<usize>], generators: &[usize]) -> Vec<(usize, Vec<Letter>)> {
    let steps: Vec<(Letter, usize)> = (0..generators.len())
        .flat_map(|i| {
            let g = generators[i];
            [(Letter::new(i, false), g), (Letter::new(i, true), finite_inverse(table, g))]
        })
        .collect();
    let mut words: HashMap<usize, Vec<Letter>> = HashMap::new();
    let mut order = vec![];
    let mut queue = VecDeque::from([0usize]);
    words.insert(0, vec![]);
    while let Some(x) = queue.pop_front() {
        order.push(x);
        for &(l, s) in &steps {
            // Words read left to right act as products x * s.
            let y = table[x][s];
            if !words.contains_key(&y) {
                let mut w = words[&x].clone();
                w.push(l);
                words.insert(y, w);
                queue.push_back(y);
            }
        }
    }
    order.into_iter().map(|x| (x, words[&x].clone())).collect()
}

/// A finite set of group elements with the identity at index 0.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Window {
    elements: Vec<GroupElement>,
}

impl Window {
    pub fn new(spec: &GroupSpec, elements: Vec<GroupElement>) -> Result<Self> {
        if elements.first() != Some(&spec.identity()) {
            return Err(structural("window must start with the identity"));
        }
        for (i, g) in elements.iter().enumerate() {
            spec.check(g)?;
            if elements[..i].contains(g) {
                return Err(structural(format!("window repeats {}", spec.format_element(g))));
            }
        }
        Ok(Window { elements })
    }

    pub fn identity(spec: &GroupSpec) -> Self {
        Window {
            elements: vec![spec.identity()],
        }
    }

    pub fn elements(&self) -> &[GroupElement] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn index_of(&self, g: &GroupElement) -> Option<usize> {
        self.elements.iter().position(|x| x == g)
    }

    /// The set `{d f : d in self, f in other}` in first-appearance order,
    /// iterating `f` in the outer loop.
    pub fn product_set(&self, other: &Window, spec: &GroupSpec) -> Result<Window> {
        let mut out: Vec<GroupElement> = Vec::new();
        for f in &other.elements {
            for d in &self.elements {
                let x = spec.multiply(d, f)?;
                if !out.contains(&x) {
                    out.push(x);
                }
            }
        }
        Ok(Window { elements: out })
    }

    pub fn describe(&self, spec: &GroupSpec) -> String {
        let parts: Vec<String> = self.elements.iter().map(|g| spec.format_element(g)).collect();
        format!("{{{}}}", parts.join(","))
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}{}", self.generator, if self.inverse { "^-1" } else { "" })
    }
}
