//! Knowledge graph data model: interned identifiers, the immutable triple
//! store and the sensitive-attribute records attached to human entities.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};

/// Dense index of an interned entity (a `Q...` identifier).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId(pub u32);

/// Dense index of an interned relation (a `P...` identifier).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// A triple as read from disk, before interning.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    /// 1-based source line, or 0 when the triple was built in memory.
    pub line: usize,
}

impl RawTriple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        RawTriple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
            line: 0,
        }
    }
}

/// Bijective string <-> dense index table.
#[derive(Debug, Clone, Default)]
pub struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), i);
        i
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: u32) -> &str {
        &self.names[i as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Immutable triple store with per-entity outgoing and per-relation indexes.
///
/// Entity and relation tables are shared (`Arc`) so that subgraphs which keep
/// the same identifier space are cheap to derive.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Arc<Interner>,
    relations: Arc<Interner>,
    triples: Vec<Triple>,
    out_index: Vec<Vec<u32>>,
    relation_index: Vec<Vec<u32>>,
}

impl KnowledgeGraph {
    fn assemble(entities: Arc<Interner>, relations: Arc<Interner>, triples: Vec<Triple>) -> Self {
        let mut out_index = vec![Vec::new(); entities.len()];
        let mut relation_index = vec![Vec::new(); relations.len()];
        for (pos, t) in triples.iter().enumerate() {
            out_index[t.head.index()].push(pos as u32);
            relation_index[t.relation.index()].push(pos as u32);
        }
        KnowledgeGraph {
            entities,
            relations,
            triples,
            out_index,
            relation_index,
        }
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn entity(&self, raw: &str) -> Option<EntityId> {
        self.entities.get(raw).map(EntityId)
    }

    pub fn relation(&self, raw: &str) -> Option<RelationId> {
        self.relations.get(raw).map(RelationId)
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        self.entities.name(id.0)
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        self.relations.name(id.0)
    }

    pub fn entity_names(&self) -> &[String] {
        self.entities.names()
    }

    pub fn relation_names(&self) -> &[String] {
        self.relations.names()
    }

    /// Positions of the triples whose head is `entity`.
    pub fn out_positions(&self, entity: EntityId) -> &[u32] {
        &self.out_index[entity.index()]
    }

    pub fn relation_positions(&self, relation: RelationId) -> &[u32] {
        &self.relation_index[relation.index()]
    }

    pub fn outgoing(&self, entity: EntityId) -> impl Iterator<Item = &Triple> + '_ {
        self.out_positions(entity)
            .iter()
            .map(move |&p| &self.triples[p as usize])
    }

    /// Tails of `(entity, relation, ·)` in triple order.
    pub fn objects(&self, entity: EntityId, relation: RelationId) -> impl Iterator<Item = EntityId> + '_ {
        self.outgoing(entity)
            .filter(move |t| t.relation == relation)
            .map(|t| t.tail)
    }

    pub fn contains(&self, head: EntityId, relation: RelationId, tail: EntityId) -> bool {
        self.outgoing(head)
            .any(|t| t.relation == relation && t.tail == tail)
    }

    pub fn raw_triples(&self) -> Vec<RawTriple> {
        self.triples
            .iter()
            .map(|t| {
                RawTriple::new(
                    self.entity_name(t.head),
                    self.relation_name(t.relation),
                    self.entity_name(t.tail),
                )
            })
            .collect()
    }

    /// Subgraph over the same identifier space, keeping triples for which
    /// `keep` returns true.
    pub fn retain(&self, mut keep: impl FnMut(&Triple) -> bool) -> KnowledgeGraph {
        let triples = self.triples.iter().copied().filter(|t| keep(t)).collect();
        Self::assemble(self.entities.clone(), self.relations.clone(), triples)
    }

    /// Subgraph with freshly interned (compacted) identifiers.
    pub fn reintern(&self, mut keep: impl FnMut(&Triple) -> bool) -> KnowledgeGraph {
        let raw: Vec<RawTriple> = self
            .triples
            .iter()
            .filter(|t| keep(t))
            .map(|t| {
                RawTriple::new(
                    self.entity_name(t.head),
                    self.relation_name(t.relation),
                    self.entity_name(t.tail),
                )
            })
            .collect();
        // Inputs come from an already validated graph.
        intern_triples(&raw).expect("triples of a built graph are well-formed")
    }
}

/// Interns raw triples into a graph, deduplicating while keeping
/// first-occurrence order.
pub fn intern_triples(raw: &[RawTriple]) -> Result<KnowledgeGraph> {
    let mut entities = Interner::default();
    let mut relations = Interner::default();
    let mut seen = HashSet::with_capacity(raw.len());
    let mut triples = Vec::with_capacity(raw.len());
    for (pos, r) in raw.iter().enumerate() {
        let line = if r.line > 0 { r.line } else { pos + 1 };
        for (field, value) in [("head", &r.head), ("relation", &r.relation), ("tail", &r.tail)] {
            if value.is_empty() {
                return Err(AuditError::MalformedTriple {
                    line,
                    reason: format!("empty {field}"),
                });
            }
        }
        let t = Triple {
            head: EntityId(entities.intern(&r.head)),
            relation: RelationId(relations.intern(&r.relation)),
            tail: EntityId(entities.intern(&r.tail)),
        };
        if seen.insert(t) {
            triples.push(t);
        }
    }
    Ok(KnowledgeGraph::assemble(
        Arc::new(entities),
        Arc::new(relations),
        triples,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgeGroup {
    Young,
    Old,
    Excluded,
}

pub const YOUNG_AGES: std::ops::RangeInclusive<i32> = 19..=45;
pub const OLD_AGES: std::ops::RangeInclusive<i32> = 60..=90;

pub fn age_group_for_age(age: i32) -> AgeGroup {
    if YOUNG_AGES.contains(&age) {
        AgeGroup::Young
    } else if OLD_AGES.contains(&age) {
        AgeGroup::Old
    } else {
        AgeGroup::Excluded
    }
}

/// Age band at the reference year. Ages are year-granular.
pub fn derive_age_group(birth_year: i32, reference_year: i32) -> Result<AgeGroup> {
    if birth_year > reference_year {
        return Err(AuditError::FutureBirthDate {
            birth_year,
            reference_year,
        });
    }
    Ok(age_group_for_age(reference_year - birth_year))
}

/// Protected attribute under audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Gender,
    Age,
}

impl Attribute {
    pub fn groups(self) -> [Group; 2] {
        match self {
            Attribute::Gender => [Group::Male, Group::Female],
            Attribute::Age => [Group::Young, Group::Old],
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Attribute::Gender => "gender",
            Attribute::Age => "age",
        })
    }
}

impl std::str::FromStr for Attribute {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gender" => Ok(Attribute::Gender),
            "age" => Ok(Attribute::Age),
            other => Err(AuditError::Parse(format!("unknown attribute `{other}`"))),
        }
    }
}

/// Protected group. Group A is Male/Young, group B is Female/Old.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Male,
    Female,
    Young,
    Old,
}

impl Group {
    /// 0 for group A, 1 for group B.
    pub fn slot(self) -> usize {
        match self {
            Group::Male | Group::Young => 0,
            Group::Female | Group::Old => 1,
        }
    }

    pub fn attribute(self) -> Attribute {
        match self {
            Group::Male | Group::Female => Attribute::Gender,
            Group::Young | Group::Old => Attribute::Age,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Male => "male",
            Group::Female => "female",
            Group::Young => "young",
            Group::Old => "old",
        }
    }
}

impl std::str::FromStr for Group {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "male" => Ok(Group::Male),
            "female" => Ok(Group::Female),
            "young" => Ok(Group::Young),
            "old" => Ok(Group::Old),
            other => Err(AuditError::Parse(format!("unknown group `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMeta {
    pub entity: EntityId,
    pub gender: Gender,
    pub birth_year: Option<i32>,
    pub age_years: Option<i32>,
    pub age_group: AgeGroup,
    pub geography: String,
}

impl EntityMeta {
    pub fn new(entity: EntityId, gender: Gender, birth_year: Option<i32>, reference_year: i32, geography: &str) -> Self {
        let (age_years, age_group) = match birth_year {
            Some(y) if y <= reference_year => {
                let age = reference_year - y;
                (Some(age), age_group_for_age(age))
            }
            _ => (None, AgeGroup::Excluded),
        };
        EntityMeta {
            entity,
            gender,
            birth_year,
            age_years,
            age_group,
            geography: geography.to_owned(),
        }
    }

    /// Group under `attribute`, or `None` when the entity is excluded from
    /// that audit.
    pub fn group(&self, attribute: Attribute) -> Option<Group> {
        match attribute {
            Attribute::Gender => match self.gender {
                Gender::Male => Some(Group::Male),
                Gender::Female => Some(Group::Female),
                Gender::Unknown => None,
            },
            Attribute::Age => match self.age_group {
                AgeGroup::Young => Some(Group::Young),
                AgeGroup::Old => Some(Group::Old),
                AgeGroup::Excluded => None,
            },
        }
    }
}

/// Human entities of one geography with their outgoing edges and attributes.
#[derive(Debug, Clone)]
pub struct GeoDataset {
    pub geography: String,
    pub graph: KnowledgeGraph,
    /// Sorted by entity index.
    pub humans: Vec<EntityId>,
    pub meta: BTreeMap<EntityId, EntityMeta>,
    pub occupation_relation: RelationId,
    pub reference_year: i32,
    pub warnings: Vec<String>,
}

impl GeoDataset {
    pub fn group_of(&self, entity: EntityId, attribute: Attribute) -> Option<Group> {
        self.meta.get(&entity).and_then(|m| m.group(attribute))
    }

    /// Occupations of `human`, in triple order.
    pub fn occupations_of(&self, human: EntityId) -> impl Iterator<Item = EntityId> + '_ {
        self.graph.objects(human, self.occupation_relation)
    }

    /// Humans holding `occupation`, sorted by index.
    pub fn holders(&self, occupation: EntityId) -> Vec<EntityId> {
        let mut out: Vec<EntityId> = self
            .graph
            .relation_positions(self.occupation_relation)
            .iter()
            .map(|&p| self.graph.triples()[p as usize])
            .filter(|t| t.tail == occupation && self.meta.contains_key(&t.head))
            .map(|t| t.head)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Distinct occupation entities held by at least one human, sorted.
    pub fn occupations(&self) -> Vec<EntityId> {
        let mut out: Vec<EntityId> = self
            .graph
            .relation_positions(self.occupation_relation)
            .iter()
            .map(|&p| self.graph.triples()[p as usize])
            .filter(|t| self.meta.contains_key(&t.head))
            .map(|t| t.tail)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}
