//! Synthetic geographies with planted group-occupation associations.
//!
//! Every human gets citizenship, gender and a birth year. Each occupation
//! draws its holders so that a holder belongs to group A with probability
//! `(1 + β) / 2`. Holders also link to occupation-specific "club" entities
//! through background relations; members of the group an occupation
//! disfavours link less often, in proportion to `|β|`, so the embedding
//! carries the association as structure rather than only as counts.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::ingest::{build_geo_dataset, write_tsv3, FilterRules};
use crate::kg::{intern_triples, Attribute, GeoDataset, RawTriple, OLD_AGES, YOUNG_AGES};
use crate::rng::{label, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub geographies: usize,
    pub humans_per_geography: usize,
    pub occupations: usize,
    /// Share of group A among all humans.
    pub group_ratio: f64,
    /// β per occupation; cycled when shorter than `occupations`.
    pub bias_profile: Vec<f64>,
    /// Attribute the association is planted on.
    pub attribute: Attribute,
    /// Expected occupations per human; sets the holder count per occupation.
    pub occupations_per_human: f64,
    pub background_relations: usize,
    /// Probability that a holder from the favoured group links to the
    /// occupation's club on each background relation.
    pub link_probability: f64,
    /// Random club links per human, independent of occupation.
    pub noise_links: usize,
    /// Per-geography sign applied to every β (cycled); `-1` inverts the
    /// profile for that geography.
    pub regime_signs: Vec<f64>,
    pub reference_year: i32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            geographies: 4,
            humans_per_geography: 2000,
            occupations: 20,
            group_ratio: 0.5,
            bias_profile: vec![0.8, 0.0, -0.8],
            attribute: Attribute::Gender,
            occupations_per_human: 2.0,
            background_relations: 2,
            link_probability: 0.8,
            noise_links: 1,
            regime_signs: vec![1.0],
            reference_year: 2024,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AuditError::InvalidConfig(m));
        if self.geographies == 0 || self.humans_per_geography < 8 || self.occupations == 0 {
            return bad("need at least 1 geography, 8 humans and 1 occupation".into());
        }
        if !(self.group_ratio > 0.0 && self.group_ratio < 1.0) {
            return bad(format!("group_ratio {} outside (0, 1)", self.group_ratio));
        }
        if self.bias_profile.is_empty() || self.bias_profile.iter().any(|b| !(-1.0..=1.0).contains(b)) {
            return bad("bias_profile needs values in [-1, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.link_probability) {
            return bad(format!("link_probability {} outside [0, 1]", self.link_probability));
        }
        if !(self.occupations_per_human > 0.0) {
            return bad("occupations_per_human must be positive".into());
        }
        if self.regime_signs.is_empty() || self.regime_signs.iter().any(|s| s.abs() != 1.0) {
            return bad("regime_signs must be a non-empty list of +1/-1".into());
        }
        if self.holders_per_occupation() > self.humans_per_geography {
            return bad("occupations_per_human implies more holders than humans".into());
        }
        Ok(())
    }

    pub fn beta(&self, occupation: usize) -> f64 {
        self.bias_profile[occupation % self.bias_profile.len()]
    }

    pub fn sign(&self, geography: usize) -> f64 {
        self.regime_signs[geography % self.regime_signs.len()]
    }

    pub fn holders_per_occupation(&self) -> usize {
        (self.humans_per_geography as f64 * self.occupations_per_human / self.occupations as f64).round() as usize
    }

    pub fn geography_code(&self, g: usize) -> String {
        format!("G{g}")
    }

    pub fn country(&self, g: usize) -> String {
        format!("Q{}", 900_000 + g)
    }

    pub fn occupation(&self, j: usize) -> String {
        format!("Q{}", 500_000 + j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    ABiased,
    BBiased,
    Neutral,
    Unconstrained,
}

impl Expected {
    pub fn from_beta(beta: f64) -> Expected {
        if beta >= 0.5 {
            Expected::ABiased
        } else if beta <= -0.5 {
            Expected::BBiased
        } else if beta == 0.0 {
            Expected::Neutral
        } else {
            Expected::Unconstrained
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeographyTruth {
    pub code: String,
    pub country: String,
    pub sign: f64,
    /// Effective β per occupation identifier.
    pub betas: BTreeMap<String, f64>,
    pub expected: BTreeMap<String, Expected>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub schema: String,
    pub attribute: Attribute,
    pub seed: u64,
    pub geographies: Vec<GeographyTruth>,
}

/// Triples and attribute rows for one generated geography.
#[derive(Debug, Clone)]
pub struct SynthGeography {
    pub code: String,
    pub rules: FilterRules,
    pub triples: Vec<RawTriple>,
    /// `(entity, gender, birth_year)`.
    pub attributes: Vec<(String, String, i32)>,
}

impl SynthGeography {
    pub fn dataset(&self, reference_year: i32) -> Result<GeoDataset> {
        let g = intern_triples(&self.triples)?;
        build_geo_dataset(&g, &self.rules, &self.code, reference_year)
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub geographies: Vec<SynthGeography>,
    pub truth: GroundTruth,
}

impl SynthCorpus {
    pub fn datasets(&self) -> Result<Vec<GeoDataset>> {
        self.geographies.iter().map(|g| g.dataset(self.config.reference_year)).collect()
    }

    /// Writes `<code>.tsv`, `<code>.attributes.csv`, `<code>.rules.json`
    /// per geography plus `ground_truth.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| AuditError::io(dir, e))?;
        for g in &self.geographies {
            let p = dir.join(format!("{}.tsv", g.code));
            let f = std::fs::File::create(&p).map_err(|e| AuditError::io(&p, e))?;
            let mut w = std::io::BufWriter::new(f);
            write_tsv3(&mut w, &g.triples).map_err(|e| AuditError::io(&p, e))?;
            w.flush().map_err(|e| AuditError::io(&p, e))?;

            let p = dir.join(format!("{}.attributes.csv", g.code));
            let mut w = csv::Writer::from_path(&p)?;
            w.write_record(["entity", "gender", "birth_year"])?;
            for (e, gender, year) in &g.attributes {
                w.write_record([e.as_str(), gender.as_str(), &year.to_string()])?;
            }
            w.flush().map_err(|e| AuditError::io(&p, e))?;

            let p = dir.join(format!("{}.rules.json", g.code));
            std::fs::write(&p, serde_json::to_string_pretty(&g.rules)? + "\n").map_err(|e| AuditError::io(&p, e))?;
        }
        let p = dir.join("ground_truth.json");
        std::fs::write(&p, serde_json::to_string_pretty(&self.truth)? + "\n").map_err(|e| AuditError::io(&p, e))?;
        Ok(())
    }
}

fn valid_ages() -> Vec<i32> {
    YOUNG_AGES.chain(OLD_AGES).collect()
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut geographies = Vec::with_capacity(config.geographies);
    let mut truths = Vec::with_capacity(config.geographies);
    for g in 0..config.geographies {
        let (geo, truth) = generate_geography(config, g)?;
        geographies.push(geo);
        truths.push(truth);
    }
    Ok(SynthCorpus {
        config: config.clone(),
        geographies,
        truth: GroundTruth {
            schema: crate::REPORT_SCHEMA.to_string(),
            attribute: config.attribute,
            seed: config.seed,
            geographies: truths,
        },
    })
}

fn generate_geography(config: &SynthConfig, g: usize) -> Result<(SynthGeography, GeographyTruth)> {
    let rules = FilterRules::with_targets([config.country(g)]);
    let code = config.geography_code(g);
    let country = config.country(g);
    let mut rng = stream(config.seed, &[label("synth"), g as u64]);
    let n = config.humans_per_geography;
    let humans: Vec<String> = (0..n).map(|i| format!("Q{}", 1_000_000 * (g + 1) + i)).collect();

    let mut triples = Vec::new();
    let mut attributes = Vec::with_capacity(n);
    // in_a[i]: whether human i is in group A of the planted attribute
    let mut in_a = Vec::with_capacity(n);
    let ages = valid_ages();
    for h in &humans {
        let male = rng.gen::<f64>() < config.group_ratio;
        let age = ages[rng.gen_range(0..ages.len())];
        let year = config.reference_year - age;
        let gender_class = if male { &rules.male_class } else { &rules.female_class };
        triples.push(RawTriple::new(h.as_str(), rules.instance_of_relation.as_str(), rules.human_class.as_str()));
        triples.push(RawTriple::new(h.as_str(), rules.citizenship_relation.as_str(), country.as_str()));
        triples.push(RawTriple::new(h.as_str(), rules.gender_relation.as_str(), gender_class.as_str()));
        triples.push(RawTriple::new(h.as_str(), rules.birth_relation.as_str(), year.to_string()));
        attributes.push((h.clone(), if male { "male" } else { "female" }.to_string(), year));
        in_a.push(match config.attribute {
            Attribute::Gender => male,
            Attribute::Age => YOUNG_AGES.contains(&age),
        });
    }
    let group_a: Vec<usize> = (0..n).filter(|&i| in_a[i]).collect();
    let group_b: Vec<usize> = (0..n).filter(|&i| !in_a[i]).collect();

    let clubs = |r: usize, j: usize| format!("Q{}", 600_000 + r * 10_000 + j);
    let relation = |r: usize| format!("P{}", 9001 + r);
    let holders_wanted = config.holders_per_occupation();
    let mut betas = BTreeMap::new();
    let mut expected = BTreeMap::new();
    for j in 0..config.occupations {
        let beta = config.beta(j) * config.sign(g);
        let occ = config.occupation(j);
        betas.insert(occ.clone(), beta);
        expected.insert(occ.clone(), Expected::from_beta(beta));
        let holders = loop {
            let h = draw_holders(&mut rng, &group_a, &group_b, holders_wanted, beta);
            let a = h.iter().filter(|&&i| in_a[i]).count();
            let b = h.len() - a;
            if beta != 0.0 || (a >= 2 && b >= 2) || group_a.len() < 2 || group_b.len() < 2 {
                break h;
            }
        };
        let favoured_a = beta >= 0.0;
        for &i in &holders {
            triples.push(RawTriple::new(humans[i].as_str(), rules.occupation_relation.as_str(), occ.as_str()));
            let p = if in_a[i] == favoured_a {
                config.link_probability
            } else {
                config.link_probability * (1.0 - beta.abs())
            };
            for r in 0..config.background_relations {
                if rng.gen::<f64>() < p {
                    triples.push(RawTriple::new(humans[i].as_str(), relation(r), clubs(r, j)));
                }
            }
        }
    }
    if config.background_relations > 0 {
        for h in &humans {
            for _ in 0..config.noise_links {
                let r = rng.gen_range(0..config.background_relations);
                let j = rng.gen_range(0..config.occupations);
                triples.push(RawTriple::new(h.as_str(), relation(r), clubs(r, j)));
            }
        }
    }
    dedup_in_order(&mut triples);
    Ok((
        SynthGeography {
            code: code.clone(),
            rules,
            triples,
            attributes,
        },
        GeographyTruth {
            code,
            country,
            sign: config.sign(g),
            betas,
            expected,
        },
    ))
}

/// Draws `count` distinct holders; each is from group A with probability
/// `(1 + beta) / 2` while that group has people left.
fn draw_holders(rng: &mut ChaCha8Rng, group_a: &[usize], group_b: &[usize], count: usize, beta: f64) -> Vec<usize> {
    let mut a = group_a.to_vec();
    let mut b = group_b.to_vec();
    a.shuffle(rng);
    b.shuffle(rng);
    let p_a = (1.0 + beta) / 2.0;
    let mut out = Vec::with_capacity(count);
    while out.len() < count && !(a.is_empty() && b.is_empty()) {
        let take_a = if a.is_empty() {
            false
        } else if b.is_empty() {
            true
        } else {
            rng.gen::<f64>() < p_a
        };
        out.push(if take_a { a.pop().unwrap() } else { b.pop().unwrap() });
    }
    out.sort_unstable();
    out
}

fn dedup_in_order(triples: &mut Vec<RawTriple>) {
    let mut seen = BTreeSet::new();
    triples.retain(|t| seen.insert((t.head.clone(), t.relation.clone(), t.tail.clone())));
}
