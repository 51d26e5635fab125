//! Triple store with symbol interning, embedding-slot layout, frequency
//! counts, and a surface-string index used by candidate filtering.
//!
//! Symbols are entities (`name.e`) and relationships (`name.r`). Each entity
//! owns two embedding slots, one per side it can appear on; each relationship
//! owns one. The slot layout is fixed by the interning order, so two loads of
//! the same file agree bit for bit.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use crate::error::{Error, Result};

/// Dense symbol identifier, assigned in first-appearance order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymbolId(pub u32);

impl SymbolId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SymbolKind {
    Entity,
    Relation,
}

#[derive(Debug, Clone)]
struct Symbol {
    /// Raw name including its `.e` / `.r` suffix.
    name: String,
    kind: SymbolKind,
    /// Dense index among symbols of the same kind.
    kind_index: u32,
}

/// One `(left entity, relationship, right entity)` record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub left: SymbolId,
    pub rel: SymbolId,
    pub right: SymbolId,
}

impl Triple {
    pub fn slots(&self) -> [SymbolId; 3] {
        [self.left, self.rel, self.right]
    }
}

#[derive(Debug, Default, Clone)]
struct SurfaceEntry {
    /// Sorted, deduplicated indices of triples containing a symbol that
    /// renders to this surface.
    triples: Vec<u32>,
    /// Total symbol occurrences rendering to this surface, counting every
    /// triple position separately.
    occurrences: u32,
}

#[derive(Debug)]
pub struct KnowledgeBase {
    triples: Vec<Triple>,
    symbols: Vec<Symbol>,
    by_name: HashMap<String, SymbolId>,
    entity_count: u32,
    relation_count: u32,
    /// Occurrence count per symbol; every triple contributes three counts.
    freq: Vec<u32>,
    surface_index: HashMap<String, SurfaceEntry>,
    /// Longest surface form measured in whitespace-separated tokens.
    max_surface_tokens: usize,
}

/// Turns a raw symbol name into its question-text form: the kind suffix is
/// dropped and dashes become spaces ("winston-churchill.e" -> "winston
/// churchill").
pub fn render_name(raw: &str) -> String {
    let stem = &raw[..raw.len().saturating_sub(2)];
    stem.replace('-', " ")
}

fn classify(name: &str) -> Option<SymbolKind> {
    if let Some(stem) = name.strip_suffix(".e") {
        if !stem.is_empty() {
            return Some(SymbolKind::Entity);
        }
    }
    if let Some(stem) = name.strip_suffix(".r") {
        if !stem.is_empty() {
            return Some(SymbolKind::Relation);
        }
    }
    None
}

impl KnowledgeBase {
    /// Loads a tab-separated triple file: one `left<TAB>rel<TAB>right` per
    /// line. Duplicate lines are kept as distinct triples. Errors name the
    /// offending line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(std::io::BufReader::new(file), path)
    }

    /// Parses triple lines from any reader; `origin` is used in error
    /// messages only.
    pub fn parse(reader: impl BufRead, origin: impl AsRef<Path>) -> Result<Self> {
        let origin = origin.as_ref();
        let mut builder = Builder::default();
        let mut saw_line = false;
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(origin, e))?;
            let lineno = idx + 1;
            if line.is_empty() {
                return Err(Error::parse(origin, lineno, "blank line"));
            }
            saw_line = true;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("expected 3 tab-separated fields, got {}", fields.len()),
                ));
            }
            builder
                .push(fields[0], fields[1], fields[2])
                .map_err(|msg| Error::parse(origin, lineno, msg))?;
        }
        if !saw_line {
            return Err(Error::EmptyInput(format!(
                "no triples in {}",
                origin.display()
            )));
        }
        Ok(builder.finish())
    }

    /// Builds a knowledge base directly from name triples. Used by tests and
    /// synthetic task construction; validation matches `parse`.
    pub fn from_names<'a>(
        triples: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    ) -> Result<Self> {
        let mut builder = Builder::default();
        let mut n = 0usize;
        for (left, rel, right) in triples {
            n += 1;
            builder
                .push(left, rel, right)
                .map_err(|msg| Error::InvalidConfig(format!("triple {}: {}", n, msg)))?;
        }
        if n == 0 {
            return Err(Error::EmptyInput("no triples given".into()));
        }
        Ok(builder.finish())
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn triple(&self, idx: u32) -> &Triple {
        &self.triples[idx as usize]
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn symbol_count(&self) -> usize {
        self.symbols.len()
    }

    pub fn entity_count(&self) -> u32 {
        self.entity_count
    }

    pub fn relation_count(&self) -> u32 {
        self.relation_count
    }

    /// Number of embedding slots: two per entity plus one per relationship.
    pub fn slot_count(&self) -> usize {
        2 * self.entity_count as usize + self.relation_count as usize
    }

    pub fn symbol_id(&self, name: &str) -> Option<SymbolId> {
        self.by_name.get(name).copied()
    }

    pub fn symbol_name(&self, id: SymbolId) -> &str {
        &self.symbols[id.index()].name
    }

    pub fn symbol_kind(&self, id: SymbolId) -> SymbolKind {
        self.symbols[id.index()].kind
    }

    /// Raw symbol names in id order.
    pub fn symbol_names(&self) -> impl Iterator<Item = &str> {
        self.symbols.iter().map(|s| s.name.as_str())
    }

    pub fn rendered_name(&self, id: SymbolId) -> String {
        render_name(&self.symbols[id.index()].name)
    }

    /// How many triple positions this symbol fills across the whole store.
    pub fn freq(&self, id: SymbolId) -> u32 {
        self.freq[id.index()]
    }

    /// Embedding slot of an entity on the left side of a triple.
    pub fn left_slot(&self, id: SymbolId) -> u32 {
        let sym = &self.symbols[id.index()];
        assert!(sym.kind == SymbolKind::Entity, "left slot of non-entity {}", sym.name);
        2 * sym.kind_index
    }

    /// Embedding slot of an entity on the right side of a triple.
    pub fn right_slot(&self, id: SymbolId) -> u32 {
        let sym = &self.symbols[id.index()];
        assert!(sym.kind == SymbolKind::Entity, "right slot of non-entity {}", sym.name);
        2 * sym.kind_index + 1
    }

    /// Embedding slot of a relationship.
    pub fn relation_slot(&self, id: SymbolId) -> u32 {
        let sym = &self.symbols[id.index()];
        assert!(sym.kind == SymbolKind::Relation, "relation slot of non-relation {}", sym.name);
        2 * self.entity_count + sym.kind_index
    }

    /// The three embedding slots of a triple, in left/rel/right order.
    pub fn triple_slots(&self, t: &Triple) -> [u32; 3] {
        [
            self.left_slot(t.left),
            self.relation_slot(t.rel),
            self.right_slot(t.right),
        ]
    }

    /// Human-readable label of an embedding slot: entities carry an `L:` or
    /// `R:` side marker, relationships are shown bare.
    pub fn slot_label(&self, slot: u32) -> String {
        let e2 = 2 * self.entity_count;
        if slot < e2 {
            let sym = self
                .symbols
                .iter()
                .find(|s| s.kind == SymbolKind::Entity && s.kind_index == slot / 2)
                .expect("slot within entity range");
            let side = if slot % 2 == 0 { "L" } else { "R" };
            format!("{}:{}", side, sym.name)
        } else {
            let ri = slot - e2;
            self.symbols
                .iter()
                .find(|s| s.kind == SymbolKind::Relation && s.kind_index == ri)
                .expect("slot within relation range")
                .name
                .clone()
        }
    }

    /// Triple indices whose symbols render to `surface`. Empty for unknown
    /// surfaces.
    pub fn triples_containing_string(&self, surface: &str) -> &[u32] {
        self.surface_index
            .get(surface)
            .map(|e| e.triples.as_slice())
            .unwrap_or(&[])
    }

    /// Total occurrences backing a surface form, or None if no symbol
    /// renders to it.
    pub fn surface_occurrences(&self, surface: &str) -> Option<u32> {
        self.surface_index.get(surface).map(|e| e.occurrences)
    }

    pub fn max_surface_tokens(&self) -> usize {
        self.max_surface_tokens
    }
}

#[derive(Default)]
struct Builder {
    triples: Vec<Triple>,
    symbols: Vec<Symbol>,
    by_name: HashMap<String, SymbolId>,
    entity_count: u32,
    relation_count: u32,
    freq: Vec<u32>,
}

impl Builder {
    fn intern(&mut self, name: &str, want: SymbolKind, field: &str) -> std::result::Result<SymbolId, String> {
        if let Some(&id) = self.by_name.get(name) {
            let sym = &self.symbols[id.index()];
            if sym.kind != want {
                return Err(format!("{} field {:?} previously seen as the other kind", field, name));
            }
            return Ok(id);
        }
        let kind = classify(name)
            .ok_or_else(|| format!("{} field {:?} lacks a .e/.r suffix on a non-empty stem", field, name))?;
        if kind != want {
            let need = if want == SymbolKind::Entity { ".e" } else { ".r" };
            return Err(format!("{} field {:?} must end in {}", field, name, need));
        }
        if name.chars().any(|c| c.is_uppercase() || c.is_whitespace()) {
            return Err(format!(
                "{} field {:?} must be lowercase with no whitespace",
                field, name
            ));
        }
        // Rendering turns dashes into spaces; an empty dash component would
        // produce an empty word.
        if name[..name.len() - 2].split('-').any(str::is_empty) {
            return Err(format!("{} field {:?} has an empty dash component", field, name));
        }
        let kind_index = match kind {
            SymbolKind::Entity => {
                let i = self.entity_count;
                self.entity_count += 1;
                i
            }
            SymbolKind::Relation => {
                let i = self.relation_count;
                self.relation_count += 1;
                i
            }
        };
        let id = SymbolId(self.symbols.len() as u32);
        self.symbols.push(Symbol { name: name.to_string(), kind, kind_index });
        self.by_name.insert(name.to_string(), id);
        self.freq.push(0);
        Ok(id)
    }

    fn push(&mut self, left: &str, rel: &str, right: &str) -> std::result::Result<(), String> {
        let left = self.intern(left, SymbolKind::Entity, "left")?;
        let rel = self.intern(rel, SymbolKind::Relation, "relationship")?;
        let right = self.intern(right, SymbolKind::Entity, "right")?;
        for id in [left, rel, right] {
            self.freq[id.index()] += 1;
        }
        self.triples.push(Triple { left, rel, right });
        Ok(())
    }

    fn finish(self) -> KnowledgeBase {
        let mut surface_index: HashMap<String, SurfaceEntry> = HashMap::new();
        let mut max_surface_tokens = 1;
        for (idx, t) in self.triples.iter().enumerate() {
            for id in t.slots() {
                let surface = render_name(&self.symbols[id.index()].name);
                max_surface_tokens = max_surface_tokens.max(surface.split(' ').count());
                let entry = surface_index.entry(surface).or_default();
                entry.occurrences += 1;
                if entry.triples.last() != Some(&(idx as u32)) {
                    entry.triples.push(idx as u32);
                }
            }
        }
        KnowledgeBase {
            triples: self.triples,
            symbols: self.symbols,
            by_name: self.by_name,
            entity_count: self.entity_count,
            relation_count: self.relation_count,
            freq: self.freq,
            surface_index,
            max_surface_tokens,
        }
    }
}
