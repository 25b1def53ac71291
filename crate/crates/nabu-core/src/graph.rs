//! RDF triple parsing and graph reification.
//!
//! Reification rewrites each triple `(s, p, o)` so the predicate becomes a
//! node of its own, joined by two binary relations: `s --A0--> p` and
//! `p --A1--> o`. A single language node is added and connected by a `LANG`
//! edge to every distinct subject entity; it selects the output language of
//! the shared decoder.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

/// Target language selector. The set matches the vocabulary's language
/// specials; adding a language means adding a variant here and a special
/// token there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LanguageTag {
    Eng,
    Ger,
    Rus,
}

impl LanguageTag {
    pub const ALL: [LanguageTag; 3] = [LanguageTag::Eng, LanguageTag::Ger, LanguageTag::Rus];

    pub fn code(self) -> &'static str {
        match self {
            LanguageTag::Eng => "ENG",
            LanguageTag::Ger => "GER",
            LanguageTag::Rus => "RUS",
        }
    }

    /// The decoder-side control token, e.g. `⟨ENG⟩`.
    pub fn token(self) -> &'static str {
        match self {
            LanguageTag::Eng => "⟨ENG⟩",
            LanguageTag::Ger => "⟨GER⟩",
            LanguageTag::Rus => "⟨RUS⟩",
        }
    }

    pub fn parse(code: &str) -> Option<Self> {
        match code {
            "ENG" => Some(LanguageTag::Eng),
            "GER" => Some(LanguageTag::Ger),
            "RUS" => Some(LanguageTag::Rus),
            _ => None,
        }
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// One RDF fact. All fields are non-empty after trimming; the predicate
/// carries no tab or newline characters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphError {
    /// A triple record line did not have exactly three non-empty fields.
    /// Carries the 1-based line number.
    MalformedTriple(usize),
    /// `reify` was called with no triples.
    EmptyGraph,
}

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphError::MalformedTriple(line) => {
                write!(f, "malformed triple record at line {line}")
            }
            GraphError::EmptyGraph => f.write_str("cannot reify an empty triple set"),
        }
    }
}

impl core::error::Error for GraphError {}

/// Relation kinds of the reified graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    A0,
    A1,
    Lang,
}

impl Relation {
    pub fn name(self) -> &'static str {
        match self {
            Relation::A0 => "A0",
            Relation::A1 => "A1",
            Relation::Lang => "LANG",
        }
    }

    /// Index into the label-embedding table.
    pub fn index(self) -> usize {
        match self {
            Relation::A0 => 0,
            Relation::A1 => 1,
            Relation::Lang => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    Language(LanguageTag),
    Entity,
    /// Predicate occurrence; `occurrence` disambiguates repeated predicates
    /// unless shared-predicate mode is on.
    Predicate { occurrence: usize },
}

/// How repeated predicates map to nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PredicateNodes {
    /// Each triple gets its own predicate node (`birthPlace#0`,
    /// `birthPlace#1`, ...). Removes the subject/object ambiguity that
    /// shared predicate nodes cause.
    #[default]
    OccurrenceIndexed,
    /// One node per predicate label, shared across triples. Reproduces the
    /// ambiguity failure mode; kept for comparison runs.
    Shared,
}

impl PredicateNodes {
    pub fn name(self) -> &'static str {
        match self {
            PredicateNodes::OccurrenceIndexed => "occurrence-indexed",
            PredicateNodes::Shared => "shared",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "occurrence-indexed" => Some(PredicateNodes::OccurrenceIndexed),
            "shared" => Some(PredicateNodes::Shared),
            _ => None,
        }
    }
}

/// A reified graph: ordered node labels plus `(source, relation, destination)`
/// edges by node index. Node 0 is always the language node; entity and
/// predicate nodes follow in first-appearance order. Edges are listed per
/// triple (A0 then A1), then one LANG edge per distinct subject.
#[derive(Debug, Clone, PartialEq)]
pub struct ReifiedGraph {
    pub nodes: Vec<String>,
    pub kinds: Vec<NodeKind>,
    pub edges: Vec<(usize, Relation, usize)>,
    pub lang: LanguageTag,
    /// The original triples, kept for linearization and copy-mechanism
    /// surface lookups.
    pub triples: Vec<Triple>,
}

/// Parses the line-based triple record format: one triple per line, three
/// fields separated by `" | "`. Blank lines are skipped; line numbers in
/// errors are 1-based over all lines.
pub fn parse_triples(text: &str) -> Result<Vec<Triple>, GraphError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(GraphError::MalformedTriple(idx + 1));
        }
        if fields[1].contains('\t') {
            return Err(GraphError::MalformedTriple(idx + 1));
        }
        out.push(Triple {
            subject: fields[0].to_string(),
            predicate: fields[1].to_string(),
            object: fields[2].to_string(),
        });
    }
    Ok(out)
}

/// Builds the reified graph for a triple set.
///
/// `|edges| = 2·|triples| + (distinct subjects)`: each triple contributes an
/// A0 and an A1 edge through its predicate node, and the language node sends
/// one LANG edge to every distinct subject entity.
pub fn reify(
    triples: &[Triple],
    lang: LanguageTag,
    mode: PredicateNodes,
) -> Result<ReifiedGraph, GraphError> {
    if triples.is_empty() {
        return Err(GraphError::EmptyGraph);
    }

    let mut nodes: Vec<String> = Vec::new();
    let mut kinds: Vec<NodeKind> = Vec::new();
    let mut edges: Vec<(usize, Relation, usize)> = Vec::new();

    nodes.push(lang.code().to_string());
    kinds.push(NodeKind::Language(lang));

    let entity_index = |nodes: &mut Vec<String>, kinds: &mut Vec<NodeKind>, label: &str| {
        match nodes.iter().position(|n| n == label) {
            Some(i) => i,
            None => {
                nodes.push(label.to_string());
                kinds.push(NodeKind::Entity);
                nodes.len() - 1
            }
        }
    };

    let mut predicate_count: Vec<(String, usize)> = Vec::new();
    let mut subjects_in_order: Vec<usize> = Vec::new();

    for triple in triples {
        let s = entity_index(&mut nodes, &mut kinds, &triple.subject);
        if !subjects_in_order.contains(&s) {
            subjects_in_order.push(s);
        }

        let p = match mode {
            PredicateNodes::OccurrenceIndexed => {
                let occurrence = match predicate_count
                    .iter_mut()
                    .find(|(name, _)| name == &triple.predicate)
                {
                    Some((_, count)) => {
                        *count += 1;
                        *count - 1
                    }
                    None => {
                        predicate_count.push((triple.predicate.clone(), 1));
                        0
                    }
                };
                nodes.push(format!("{}#{}", triple.predicate, occurrence));
                kinds.push(NodeKind::Predicate { occurrence });
                nodes.len() - 1
            }
            PredicateNodes::Shared => {
                match nodes
                    .iter()
                    .zip(kinds.iter())
                    .position(|(n, k)| n == &triple.predicate && matches!(k, NodeKind::Predicate { .. }))
                {
                    Some(i) => i,
                    None => {
                        nodes.push(triple.predicate.clone());
                        kinds.push(NodeKind::Predicate { occurrence: 0 });
                        nodes.len() - 1
                    }
                }
            }
        };

        let o = entity_index(&mut nodes, &mut kinds, &triple.object);
        edges.push((s, Relation::A0, p));
        edges.push((p, Relation::A1, o));
    }

    for s in subjects_in_order {
        edges.push((0, Relation::Lang, s));
    }

    Ok(ReifiedGraph {
        nodes,
        kinds,
        edges,
        lang,
        triples: triples.to_vec(),
    })
}

impl ReifiedGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// In-neighbor lists including a leading self-loop, indexed by node.
    /// Neighbor order follows edge-list order, which keeps encoding exactly
    /// equivariant under node permutations.
    pub fn in_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj: Vec<Vec<usize>> = (0..self.nodes.len()).map(|i| alloc::vec![i]).collect();
        for &(src, _, dst) in &self.edges {
            adj[dst].push(src);
        }
        adj
    }

    /// Deterministic debug dump, one `node --REL--> node` line per edge,
    /// sorted by (source label, relation, destination label).
    pub fn dump(&self) -> String {
        let mut lines: Vec<String> = self
            .edges
            .iter()
            .map(|&(s, rel, d)| format!("{} --{}--> {}", self.nodes[s], rel.name(), self.nodes[d]))
            .collect();
        lines.sort();
        let mut out = String::new();
        for line in lines {
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

/// Linearized baseline input: language token, then `subject predicate object`
/// per triple in input order, with a separator sentinel between triples.
/// Predicate labels are the raw triple predicates (no occurrence suffix).
pub const TRIPLE_SEPARATOR: &str = "⟨SEP⟩";

pub fn linearize(graph: &ReifiedGraph) -> Vec<String> {
    let mut out = Vec::with_capacity(1 + graph.triples.len() * 4);
    out.push(graph.lang.token().to_string());
    for (i, triple) in graph.triples.iter().enumerate() {
        if i > 0 {
            out.push(TRIPLE_SEPARATOR.to_string());
        }
        out.push(triple.subject.clone());
        out.push(triple.predicate.clone());
        out.push(triple.object.clone());
    }
    out
}

/// Splits a node label into embeddable feature tokens: entities split on
/// underscores, predicates on camelCase boundaries (occurrence suffix
/// stripped first); everything lowercased. The language node yields its
/// lowercased code.
pub fn node_feature_labels(graph: &ReifiedGraph) -> Vec<Vec<String>> {
    graph
        .nodes
        .iter()
        .zip(graph.kinds.iter())
        .map(|(label, kind)| match kind {
            NodeKind::Language(tag) => alloc::vec![tag.code().to_lowercase()],
            NodeKind::Entity => split_entity_label(label),
            NodeKind::Predicate { .. } => {
                let base = label.split('#').next().unwrap_or(label);
                split_camel_case(base)
            }
        })
        .collect()
}

pub fn split_entity_label(label: &str) -> Vec<String> {
    label
        .split('_')
        .filter(|part| !part.is_empty())
        .map(|part| part.to_lowercase())
        .collect()
}

pub fn split_camel_case(label: &str) -> Vec<String> {
    let mut parts: Vec<String> = Vec::new();
    let mut current = String::new();
    for ch in label.chars() {
        if ch.is_uppercase() && !current.is_empty() {
            parts.push(current.to_lowercase());
            current = String::new();
        }
        current.push(ch);
    }
    if !current.is_empty() {
        parts.push(current.to_lowercase());
    }
    parts
}
