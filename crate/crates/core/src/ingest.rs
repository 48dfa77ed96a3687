//! Triple file parsing and construction of per-geography datasets.
//!
//! A human entity belongs to a geography when it is an instance of the human
//! class and a citizen of one of the geography's target entities. The dataset
//! keeps every outgoing edge of those humans.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::kg::{intern_triples, EntityId, EntityMeta, GeoDataset, Gender, KnowledgeGraph, RawTriple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripleFormat {
    /// `head<TAB>relation<TAB>tail`, no header.
    Tsv3,
    /// KGTK edge file: header with at least `node1`, `label`, `node2`.
    Kgtk,
}

impl std::str::FromStr for TripleFormat {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv3" => Ok(TripleFormat::Tsv3),
            "kgtk" | "tsv-kgtk" => Ok(TripleFormat::Kgtk),
            other => Err(AuditError::UnknownFormat(other.to_owned())),
        }
    }
}

/// Vocabulary used to recognise humans and their attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterRules {
    pub instance_of_relation: String,
    pub human_class: String,
    pub citizenship_relation: String,
    pub gender_relation: String,
    pub birth_relation: String,
    pub occupation_relation: String,
    pub male_class: String,
    pub female_class: String,
    pub geography_targets: Vec<String>,
}

impl Default for FilterRules {
    fn default() -> Self {
        FilterRules {
            instance_of_relation: "P31".into(),
            human_class: "Q5".into(),
            citizenship_relation: "P27".into(),
            gender_relation: "P21".into(),
            birth_relation: "P569".into(),
            occupation_relation: "P106".into(),
            male_class: "Q6581097".into(),
            female_class: "Q6581072".into(),
            geography_targets: Vec::new(),
        }
    }
}

impl FilterRules {
    pub fn with_targets(targets: impl IntoIterator<Item = impl Into<String>>) -> Self {
        FilterRules {
            geography_targets: targets.into_iter().map(Into::into).collect(),
            ..FilterRules::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("instance_of_relation", &self.instance_of_relation),
            ("human_class", &self.human_class),
            ("citizenship_relation", &self.citizenship_relation),
            ("gender_relation", &self.gender_relation),
            ("birth_relation", &self.birth_relation),
            ("occupation_relation", &self.occupation_relation),
            ("male_class", &self.male_class),
            ("female_class", &self.female_class),
        ];
        for (name, value) in fields {
            if value.is_empty() {
                return Err(AuditError::InvalidConfig(format!("{name} is empty")));
            }
        }
        if self.geography_targets.is_empty() || self.geography_targets.iter().any(|t| t.is_empty()) {
            return Err(AuditError::InvalidConfig(
                "geography_targets must list at least one non-empty identifier".into(),
            ));
        }
        Ok(())
    }
}

pub fn parse_triple_file(path: &Path, format: TripleFormat) -> Result<Vec<RawTriple>> {
    let file = File::open(path).map_err(|e| AuditError::io(path, e))?;
    parse_triples(BufReader::new(file), format).map_err(|e| match e {
        AuditError::Io { source, .. } => AuditError::io(path, source),
        other => other,
    })
}

/// Streams triples out of `reader`. Blank lines and lines starting with `#`
/// are skipped.
pub fn parse_triples<R: Read>(reader: R, format: TripleFormat) -> Result<Vec<RawTriple>> {
    let mut out = Vec::new();
    let mut columns: Option<(usize, usize, usize, usize)> = None;
    let mut reader = BufReader::new(reader);
    let mut buf = String::new();
    let mut line_no = 0usize;
    loop {
        buf.clear();
        let n = reader
            .read_line(&mut buf)
            .map_err(|e| AuditError::io("<input>", e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let line = buf.trim_end_matches(['\n', '\r']);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match format {
            TripleFormat::Tsv3 => {
                if fields.len() != 3 {
                    return Err(AuditError::MalformedTriple {
                        line: line_no,
                        reason: format!("expected 3 tab-separated columns, found {}", fields.len()),
                    });
                }
                out.push(RawTriple {
                    head: fields[0].to_owned(),
                    relation: fields[1].to_owned(),
                    tail: fields[2].to_owned(),
                    line: line_no,
                });
            }
            TripleFormat::Kgtk => match columns {
                None => columns = Some(kgtk_header(&fields, line_no)?),
                Some((width, h, r, t)) => {
                    if fields.len() != width {
                        return Err(AuditError::MalformedTriple {
                            line: line_no,
                            reason: format!("expected {width} columns, found {}", fields.len()),
                        });
                    }
                    out.push(RawTriple {
                        head: fields[h].to_owned(),
                        relation: fields[r].to_owned(),
                        tail: fields[t].to_owned(),
                        line: line_no,
                    });
                }
            },
        }
    }
    Ok(out)
}

fn kgtk_header(fields: &[&str], line: usize) -> Result<(usize, usize, usize, usize)> {
    let find = |name: &str| {
        fields.iter().position(|f| *f == name).ok_or_else(|| AuditError::MalformedTriple {
            line,
            reason: format!("KGTK header lacks `{name}` column"),
        })
    };
    if fields.len() < 4 {
        return Err(AuditError::MalformedTriple {
            line,
            reason: format!("KGTK header needs at least 4 columns, found {}", fields.len()),
        });
    }
    Ok((fields.len(), find("node1")?, find("label")?, find("node2")?))
}

pub fn write_tsv3<W: Write>(mut w: W, triples: &[RawTriple]) -> std::io::Result<()> {
    for t in triples {
        writeln!(w, "{}\t{}\t{}", t.head, t.relation, t.tail)?;
    }
    Ok(())
}

/// Humans with an instance-of-human edge and a citizenship edge to one of the
/// geography targets.
pub fn extract_humans(graph: &KnowledgeGraph, rules: &FilterRules) -> BTreeSet<EntityId> {
    let (Some(instance_of), Some(human), Some(citizen)) = (
        graph.relation(&rules.instance_of_relation),
        graph.entity(&rules.human_class),
        graph.relation(&rules.citizenship_relation),
    ) else {
        return BTreeSet::new();
    };
    let targets: BTreeSet<EntityId> = rules
        .geography_targets
        .iter()
        .filter_map(|t| graph.entity(t))
        .collect();
    if targets.is_empty() {
        return BTreeSet::new();
    }
    graph
        .relation_positions(instance_of)
        .iter()
        .map(|&p| graph.triples()[p as usize])
        .filter(|t| t.tail == human)
        .map(|t| t.head)
        .filter(|&e| graph.objects(e, citizen).any(|g| targets.contains(&g)))
        .collect()
}

/// Leading four-digit year of a date literal: `1990`, `1990-05-01`,
/// `+1990-05-01T00:00:00Z`, KGTK's `^1990-05-01T00:00:00Z/11`, optionally
/// quoted.
pub fn parse_birth_year(literal: &str) -> Option<i32> {
    let s = literal.trim_matches('"');
    let s = s.strip_prefix(['+', '^']).unwrap_or(s);
    let digits = s.get(..4)?;
    if !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if s.len() > 4 && s.as_bytes()[4].is_ascii_digit() {
        return None;
    }
    digits.parse().ok()
}

/// Gender and birth year for each human. Conflicts and unusable values are
/// reported in the returned warnings.
pub fn extract_attributes(
    graph: &KnowledgeGraph,
    humans: &BTreeSet<EntityId>,
    rules: &FilterRules,
    reference_year: i32,
    geography: &str,
) -> (BTreeMap<EntityId, EntityMeta>, Vec<String>) {
    let gender_rel = graph.relation(&rules.gender_relation);
    let birth_rel = graph.relation(&rules.birth_relation);
    let male = graph.entity(&rules.male_class);
    let female = graph.entity(&rules.female_class);
    let mut warnings = Vec::new();
    let mut meta = BTreeMap::new();

    for &h in humans {
        let mut gender = Gender::Unknown;
        if let Some(rel) = gender_rel {
            let mut seen = BTreeSet::new();
            for g in graph.objects(h, rel) {
                if Some(g) == male {
                    seen.insert(Gender::Male);
                } else if Some(g) == female {
                    seen.insert(Gender::Female);
                } else {
                    seen.insert(Gender::Unknown);
                }
            }
            if seen.len() == 1 {
                gender = *seen.iter().next().unwrap();
            } else if seen.len() > 1 {
                warnings.push(format!(
                    "{}: conflicting gender statements, marked unknown",
                    graph.entity_name(h)
                ));
            }
        }

        let mut birth_year = None;
        if let Some(rel) = birth_rel {
            let years: Vec<i32> = graph
                .objects(h, rel)
                .filter_map(|d| parse_birth_year(graph.entity_name(d)))
                .collect();
            if years.len() > 1 {
                warnings.push(format!(
                    "{}: {} birth dates, using the first",
                    graph.entity_name(h),
                    years.len()
                ));
            }
            birth_year = years.first().copied();
        }
        if let Some(y) = birth_year {
            if y > reference_year {
                warnings.push(format!(
                    "{}: future birth date {y}, age excluded",
                    graph.entity_name(h)
                ));
            }
        }
        meta.insert(h, EntityMeta::new(h, gender, birth_year, reference_year, geography));
    }
    (meta, warnings)
}

/// Restricts `graph` to the outgoing edges of the geography's humans.
pub fn build_geo_dataset(
    graph: &KnowledgeGraph,
    rules: &FilterRules,
    geography: &str,
    reference_year: i32,
) -> Result<GeoDataset> {
    rules.validate()?;
    let humans = extract_humans(graph, rules);
    if humans.is_empty() {
        return Err(AuditError::EmptyGeography(geography.to_owned()));
    }
    let sub = graph.reintern(|t| humans.contains(&t.head));
    let humans: BTreeSet<EntityId> = humans
        .iter()
        .map(|&h| sub.entity(graph.entity_name(h)).expect("human heads survive the filter"))
        .collect();
    let (meta, warnings) = extract_attributes(&sub, &humans, rules, reference_year, geography);
    // The occupation relation may be absent from a tiny graph; intern it by
    // adding nothing but the name.
    let sub = if sub.relation(&rules.occupation_relation).is_none() {
        with_relation(&sub, &rules.occupation_relation)
    } else {
        sub
    };
    let occupation_relation = sub.relation(&rules.occupation_relation).unwrap();
    Ok(GeoDataset {
        geography: geography.to_owned(),
        graph: sub,
        humans: humans.into_iter().collect(),
        meta,
        occupation_relation,
        reference_year,
        warnings,
    })
}

fn with_relation(graph: &KnowledgeGraph, relation: &str) -> KnowledgeGraph {
    // Rebuild with a sentinel triple to intern the relation, then drop it.
    let mut raw = graph.raw_triples();
    let anchor = graph.entity_names()[0].clone();
    raw.insert(0, RawTriple::new(anchor.clone(), relation, anchor));
    let g = intern_triples(&raw).expect("well-formed");
    let rel = g.relation(relation).unwrap();
    g.retain(|t| t.relation != rel)
}

#[derive(Debug, Clone, Deserialize)]
struct OverrideRow {
    entity: String,
    #[serde(default)]
    gender: String,
    #[serde(default)]
    birth_year: Option<i32>,
}

/// Applies an `entity,gender,birth_year` CSV on top of graph-derived
/// attributes. Rows naming entities outside the dataset are ignored; returns
/// the number of rows applied.
pub fn apply_attribute_overrides<R: Read>(dataset: &mut GeoDataset, reader: R) -> Result<usize> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut applied = 0;
    for row in rdr.deserialize::<OverrideRow>() {
        let row = row?;
        let Some(id) = dataset.graph.entity(&row.entity) else {
            continue;
        };
        let Some(current) = dataset.meta.get(&id) else {
            continue;
        };
        let gender = match row.gender.to_ascii_lowercase().as_str() {
            "male" | "m" => Gender::Male,
            "female" | "f" => Gender::Female,
            "" => current.gender,
            _ => Gender::Unknown,
        };
        let birth_year = row.birth_year.or(current.birth_year);
        let updated = EntityMeta::new(id, gender, birth_year, dataset.reference_year, &dataset.geography);
        dataset.meta.insert(id, updated);
        applied += 1;
    }
    Ok(applied)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{AgeGroup, Gender};
    use proptest::prelude::*;

    fn graph(list: &[(&str, &str, &str)]) -> KnowledgeGraph {
        let raw: Vec<RawTriple> = list.iter().map(|(h, r, t)| RawTriple::new(*h, *r, *t)).collect();
        intern_triples(&raw).unwrap()
    }

    fn names(g: &KnowledgeGraph, set: &BTreeSet<EntityId>) -> Vec<String> {
        set.iter().map(|&e| g.entity_name(e).to_owned()).collect()
    }

    #[test]
    fn parses_tsv3() {
        let t = parse_triples("Q1\tP31\tQ5\n".as_bytes(), TripleFormat::Tsv3).unwrap();
        assert_eq!(t, vec![RawTriple { line: 1, ..RawTriple::new("Q1", "P31", "Q5") }]);
        assert!(parse_triples("".as_bytes(), TripleFormat::Tsv3).unwrap().is_empty());
        let t = parse_triples("# comment\n\nQ1\tP31\tQ5\r\n".as_bytes(), TripleFormat::Tsv3).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].line, 3);
        assert_eq!(t[0].tail, "Q5");
    }

    #[test]
    fn tsv3_column_count_error_names_line() {
        let err = parse_triples("Q1\tP31\tQ5\nQ2\tP31\n".as_bytes(), TripleFormat::Tsv3).unwrap_err();
        assert!(matches!(err, AuditError::MalformedTriple { line: 2, .. }));
    }

    #[test]
    fn parses_kgtk() {
        let text = "id\tnode1\tlabel\tnode2\nE1\tQ42\tP106\tQ36180\n";
        let t = parse_triples(text.as_bytes(), TripleFormat::Kgtk).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].head.as_str(), t[0].relation.as_str(), t[0].tail.as_str()), ("Q42", "P106", "Q36180"));
        let err = parse_triples("id\tnode1\tlabel\tnode2\nE1\tQ42\tP106\n".as_bytes(), TripleFormat::Kgtk).unwrap_err();
        assert!(matches!(err, AuditError::MalformedTriple { line: 2, .. }));
    }

    #[test]
    fn unknown_format_tag() {
        assert!(matches!("nt".parse::<TripleFormat>(), Err(AuditError::UnknownFormat(_))));
    }

    #[test]
    fn birth_year_literals() {
        assert_eq!(parse_birth_year("1990"), Some(1990));
        assert_eq!(parse_birth_year("1990-05-01"), Some(1990));
        assert_eq!(parse_birth_year("+1990-05-01T00:00:00Z"), Some(1990));
        assert_eq!(parse_birth_year("^1990-05-01T00:00:00Z/11"), Some(1990));
        assert_eq!(parse_birth_year("\"1990-05-01\""), Some(1990));
        assert_eq!(parse_birth_year("Q5"), None);
        assert_eq!(parse_birth_year("19901"), None);
    }

    #[test]
    fn humans_need_both_conditions() {
        let g = graph(&[("Q1", "P31", "Q5"), ("Q1", "P27", "Q30")]);
        let rules = FilterRules::with_targets(["Q30"]);
        assert_eq!(names(&g, &extract_humans(&g, &rules)), vec!["Q1"]);

        let g = graph(&[("Q1", "P31", "Q5")]);
        assert!(extract_humans(&g, &rules).is_empty());

        let g = graph(&[
            ("Q1", "P31", "Q5"),
            ("Q1", "P27", "Q30"),
            ("Q2", "P31", "Q5"),
            ("Q2", "P27", "Q16"),
            ("Q3", "P27", "Q16"),
        ]);
        let rules = FilterRules::with_targets(["Q30", "Q16"]);
        assert_eq!(names(&g, &extract_humans(&g, &rules)), vec!["Q1", "Q2"]);
    }

    #[test]
    fn attributes_from_graph() {
        let g = graph(&[
            ("Q1", "P31", "Q5"),
            ("Q1", "P27", "Q30"),
            ("Q1", "P21", "Q6581097"),
            ("Q1", "P569", "1990-05-01"),
            ("Q2", "P31", "Q5"),
            ("Q2", "P27", "Q30"),
            ("Q2", "P569", "2010"),
            ("Q3", "P31", "Q5"),
            ("Q3", "P27", "Q30"),
            ("Q3", "P21", "Q6581097"),
            ("Q3", "P21", "Q6581072"),
        ]);
        let rules = FilterRules::with_targets(["Q30"]);
        let humans = extract_humans(&g, &rules);
        let (meta, warnings) = extract_attributes(&g, &humans, &rules, 2024, "USA");
        let q1 = &meta[&g.entity("Q1").unwrap()];
        assert_eq!((q1.gender, q1.age_group, q1.age_years), (Gender::Male, AgeGroup::Young, Some(34)));
        let q2 = &meta[&g.entity("Q2").unwrap()];
        assert_eq!((q2.gender, q2.age_years, q2.age_group), (Gender::Unknown, Some(14), AgeGroup::Excluded));
        let q3 = &meta[&g.entity("Q3").unwrap()];
        assert_eq!(q3.gender, Gender::Unknown);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn multiple_birth_dates_take_first() {
        let g = graph(&[
            ("Q1", "P31", "Q5"),
            ("Q1", "P27", "Q30"),
            ("Q1", "P569", "1950"),
            ("Q1", "P569", "1990"),
        ]);
        let rules = FilterRules::with_targets(["Q30"]);
        let (meta, warnings) = extract_attributes(&g, &extract_humans(&g, &rules), &rules, 2024, "USA");
        assert_eq!(meta.values().next().unwrap().birth_year, Some(1950));
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn geo_dataset_keeps_human_edges_only() {
        let g = graph(&[
            ("Q1", "P31", "Q5"),
            ("Q1", "P27", "Q30"),
            ("Q1", "P106", "Q82955"),
            ("Q9", "P31", "Q515"),
            ("Q9", "P17", "Q30"),
            ("Q9", "P1", "Q2"),
            ("Q9", "P2", "Q3"),
            ("Q9", "P3", "Q4"),
        ]);
        let ds = build_geo_dataset(&g, &FilterRules::with_targets(["Q30"]), "USA", 2024).unwrap();
        assert_eq!(ds.graph.len(), 3);
        assert_eq!(ds.humans.len(), 1);
        assert_eq!(ds.meta.len(), 1);
    }

    #[test]
    fn minimal_human_dataset() {
        let g = graph(&[("Q1", "P31", "Q5"), ("Q1", "P27", "Q30"), ("Q7", "P31", "Q5")]);
        let ds = build_geo_dataset(&g, &FilterRules::with_targets(["Q30"]), "USA", 2024).unwrap();
        assert_eq!(ds.graph.len(), 2);
        assert_eq!(ds.graph.relation_name(ds.occupation_relation), "P106");
    }

    #[test]
    fn shared_occupation_interned_once() {
        let g = graph(&[
            ("Q1", "P31", "Q5"),
            ("Q1", "P27", "Q30"),
            ("Q1", "P106", "Q82955"),
            ("Q2", "P31", "Q5"),
            ("Q2", "P27", "Q30"),
            ("Q2", "P106", "Q82955"),
        ]);
        let ds = build_geo_dataset(&g, &FilterRules::with_targets(["Q30"]), "USA", 2024).unwrap();
        let occ = ds.graph.entity("Q82955").unwrap();
        let as_tail = ds.graph.triples().iter().filter(|t| t.tail == occ).count();
        assert_eq!(as_tail, 2);
        assert_eq!(ds.graph.entity_names().iter().filter(|n| *n == "Q82955").count(), 1);
        assert_eq!(ds.holders(occ).len(), 2);
    }

    #[test]
    fn empty_geography_is_an_error() {
        let g = graph(&[("Q1", "P31", "Q5"), ("Q1", "P27", "Q30")]);
        let err = build_geo_dataset(&g, &FilterRules::with_targets(["Q16"]), "CAN", 2024).unwrap_err();
        assert!(matches!(err, AuditError::EmptyGeography(_)));
    }

    #[test]
    fn overrides_supersede_graph_attributes() {
        let g = graph(&[
            ("Q1", "P31", "Q5"),
            ("Q1", "P27", "Q30"),
            ("Q1", "P21", "Q6581097"),
        ]);
        let mut ds = build_geo_dataset(&g, &FilterRules::with_targets(["Q30"]), "USA", 2024).unwrap();
        let csv = "entity,gender,birth_year\nQ1,female,1950\nQ99,male,1990\n";
        assert_eq!(apply_attribute_overrides(&mut ds, csv.as_bytes()).unwrap(), 1);
        let m = ds.meta.values().next().unwrap();
        assert_eq!((m.gender, m.age_group), (Gender::Female, AgeGroup::Old));
    }

    fn small_graph() -> impl Strategy<Value = Vec<(u8, u8, u8)>> {
        // entities 0..8 are candidates, 10..13 are countries, 20 is the human class
        proptest::collection::vec((0u8..8, 0u8..3, 0u8..14), 0..40).prop_map(|v| {
            v.into_iter()
                .map(|(h, r, t)| match r {
                    0 => (h, 0, 20),
                    1 => (h, 1, 10 + t % 4),
                    _ => (h, 2, t),
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn extract_humans_matches_brute_force(edges in small_graph(), mask in 1u8..16) {
            let rel = ["P31", "P27", "P9"];
            let raw: Vec<RawTriple> = edges
                .iter()
                .map(|&(h, r, t)| {
                    let tail = if t == 20 { "Q5".to_string() } else { format!("Q{}", 100 + t as u32) };
                    RawTriple::new(format!("Q{}", 100 + h as u32), rel[r as usize], tail)
                })
                .collect();
            prop_assume!(!raw.is_empty());
            let targets: Vec<String> = (0..4).filter(|i| mask & (1 << i) != 0).map(|i| format!("Q{}", 110 + i)).collect();
            let g = intern_triples(&raw).unwrap();
            let rules = FilterRules::with_targets(targets.clone());
            let got: BTreeSet<String> = extract_humans(&g, &rules).into_iter().map(|e| g.entity_name(e).to_owned()).collect();

            let set: BTreeSet<(String, String, String)> = raw.iter().map(|t| (t.head.clone(), t.relation.clone(), t.tail.clone())).collect();
            let mut expected = BTreeSet::new();
            for e in g.entity_names() {
                let human = set.contains(&(e.clone(), "P31".into(), "Q5".into()));
                let citizen = targets.iter().any(|c| set.contains(&(e.clone(), "P27".into(), c.clone())));
                if human && citizen {
                    expected.insert(e.clone());
                }
            }
            prop_assert_eq!(&got, &expected);

            if let Ok(ds) = build_geo_dataset(&g, &rules, "X", 2024) {
                for t in ds.graph.raw_triples() {
                    prop_assert!(set.contains(&(t.head.clone(), t.relation.clone(), t.tail.clone())));
                    prop_assert!(expected.contains(&t.head));
                }
            } else {
                prop_assert!(expected.is_empty());
            }
        }

        #[test]
        fn tsv3_round_trip(rows in proptest::collection::vec(("[A-Z][0-9]{1,4}", "P[0-9]{1,3}", "[^\t\r\n#]{1,12}"), 0..20)) {
            let triples: Vec<RawTriple> = rows.into_iter().map(|(h, r, t)| RawTriple::new(h, r, t)).collect();
            prop_assume!(triples.iter().all(|t| !t.tail.trim_end_matches(['\r', '\n']).is_empty()));
            let mut buf = Vec::new();
            write_tsv3(&mut buf, &triples).unwrap();
            let parsed = parse_triples(buf.as_slice(), TripleFormat::Tsv3).unwrap();
            let mut again = Vec::new();
            write_tsv3(&mut again, &parsed).unwrap();
            prop_assert_eq!(&buf, &again);
            let stripped: Vec<(String, String, String)> = parsed.into_iter().map(|t| (t.head, t.relation, t.tail)).collect();
            let orig: Vec<(String, String, String)> = triples.into_iter().map(|t| (t.head, t.relation, t.tail)).collect();
            prop_assert_eq!(stripped, orig);
        }
    }
}
