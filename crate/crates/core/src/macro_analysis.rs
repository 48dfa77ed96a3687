//! Geography-level analysis: bias-profile vectors, spectral clustering,
//! country attribute summaries and opposite-bias occupation tables.

use std::collections::BTreeMap;
use std::io::Read;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::fairness::{direction, pool_rates, BiasLabel, Direction, GroupRates};
use crate::kg::Attribute;

/// Per-condition occupation counts for one geography, in `Condition::ALL`
/// order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeographyVector {
    pub geography: String,
    pub counts: [u32; 5],
}

impl GeographyVector {
    pub fn categorized(&self) -> u32 {
        self.counts.iter().sum()
    }

    fn as_f64(&self) -> [f64; 5] {
        self.counts.map(f64::from)
    }
}

pub fn geography_vector<'a>(geography: &str, labels: impl IntoIterator<Item = &'a BiasLabel>) -> GeographyVector {
    let mut counts = [0u32; 5];
    for l in labels {
        if let Some(c) = l.condition {
            counts[c.index()] += 1;
        }
    }
    GeographyVector {
        geography: geography.to_string(),
        counts,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k_max: usize,
    pub seed: u64,
    pub restarts: usize,
    /// Centroids closer than this fraction of the median inter-centroid
    /// distance are merged.
    pub merge_fraction: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k_max: 5,
            seed: 0,
            restarts: 32,
            merge_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub geographies: Vec<String>,
    pub k: usize,
    /// Cluster id per geography, aligned with `geographies`. Ids are
    /// numbered by first appearance.
    pub assignment: Vec<usize>,
    /// Row-normalized spectral coordinates per geography.
    pub embedding: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Within-cluster sum of squares per candidate k.
    pub inertia_curve: BTreeMap<usize, f64>,
    /// k picked by the elbow rule before the merge pass.
    pub spectral_k: usize,
    pub spectral_assignment: Vec<usize>,
}

impl ClusterModel {
    pub fn members(&self) -> Vec<Vec<String>> {
        let mut out = vec![Vec::new(); self.k];
        for (g, &c) in self.geographies.iter().zip(&self.assignment) {
            out[c].push(g.clone());
        }
        out
    }

    pub fn cluster_of(&self, geography: &str) -> Option<usize> {
        self.geographies.iter().position(|g| g == geography).map(|i| self.assignment[i])
    }

    pub fn centroids(&self) -> Vec<Vec<f64>> {
        centroids(&self.embedding, &self.assignment, self.k)
    }
}

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0).then(|| v.iter().map(|x| x / n).collect())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cosine affinity of the count vectors, clipped at zero, unit diagonal.
pub fn affinity(vectors: &[GeographyVector]) -> DMatrix<f64> {
    let unit: Vec<Option<Vec<f64>>> = vectors.iter().map(|v| normalized(&v.as_f64())).collect();
    let n = vectors.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            return 1.0;
        }
        match (&unit[i], &unit[j]) {
            (Some(a), Some(b)) => a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().max(0.0),
            _ => 0.0,
        }
    })
}

/// Eigenvectors of the symmetric normalized Laplacian for the `dim`
/// smallest eigenvalues, one row per point, rows scaled to unit length.
///
/// Each coordinate is weighted by `max(0, 1 - λ)`, the matching eigenvalue
/// of the normalized affinity, before the rows are scaled. Directions with
/// λ near 1 carry no cluster structure and would otherwise dominate the
/// unit rows when `dim` exceeds the number of clusters.
pub fn spectral_embedding(affinity: &DMatrix<f64>, dim: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = affinity.nrows();
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / affinity.row(i).sum().sqrt()).collect();
    let lap = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - inv_sqrt[i] * affinity[(i, j)] * inv_sqrt[j]
    });
    let eig = SymmetricEigen::new(lap);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    order.truncate(dim.min(n));
    let rows = (0..n)
        .map(|i| {
            let row: Vec<f64> = order
                .iter()
                .map(|&c| eig.eigenvectors[(i, c)] * (1.0 - eig.eigenvalues[c]).max(0.0))
                .collect();
            normalized(&row).unwrap_or(row)
        })
        .collect();
    (rows, order.iter().map(|&c| eig.eigenvalues[c]).collect())
}

fn centroids(points: &[Vec<f64>], assignment: &[usize], k: usize) -> Vec<Vec<f64>> {
    let d = points.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignment) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|x| *x /= n as f64);
        }
    }
    sums
}

/// Within-cluster sum of squared distances to cluster means.
pub fn wcss(points: &[Vec<f64>], assignment: &[usize]) -> f64 {
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    let cs = centroids(points, assignment, k);
    points.iter().zip(assignment).map(|(p, &c)| sq_dist(p, &cs[c])).sum()
}

fn nearest(p: &[f64], centres: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centres.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

fn kmeans_once(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = points.len();
    let mut centres = vec![points[rng.gen_range(0..n)].clone()];
    while centres.len() < k {
        let d: Vec<f64> = points.iter().map(|p| sq_dist(p, &centres[nearest(p, &centres)])).collect();
        let total: f64 = d.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut x = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, di) in d.iter().enumerate() {
                if x < *di {
                    pick = i;
                    break;
                }
                x -= di;
            }
            pick
        };
        centres.push(points[next].clone());
    }
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centres)).collect();
    for _ in 0..100 {
        let cs = centroids(points, &assignment, k);
        for (c, new) in cs.into_iter().enumerate() {
            // an emptied cluster keeps its previous centre
            if assignment.contains(&c) {
                centres[c] = new;
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centres)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    hartigan(points, &mut assignment, k);
    assignment
}

/// Moves single points between clusters while that strictly lowers the
/// within-cluster sum of squares.
fn hartigan(points: &[Vec<f64>], assignment: &mut [usize], k: usize) {
    let mut counts = vec![0usize; k];
    for &c in assignment.iter() {
        counts[c] += 1;
    }
    let mut cs = centroids(points, assignment, k);
    for _ in 0..100 {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let a = assignment[i];
            if counts[a] < 2 {
                continue;
            }
            let na = counts[a] as f64;
            let remove = na / (na - 1.0) * sq_dist(p, &cs[a]);
            let mut best = (a, 0.0);
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let gain = remove - nb / (nb + 1.0) * sq_dist(p, &cs[b]);
                if gain > best.1 + 1e-12 {
                    best = (b, gain);
                }
            }
            let b = best.0;
            if b != a {
                assignment[i] = b;
                counts[a] -= 1;
                counts[b] += 1;
                cs = centroids(points, assignment, k);
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
}

/// Seeded k-means with k-means++ starts; the lowest-inertia restart wins.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, rng: &mut impl Rng) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let a = canonical_labels(&kmeans_once(points, k, rng));
        let w = wcss(points, &a);
        if best.as_ref().is_none_or(|(_, bw)| w < *bw - 1e-12) {
            best = Some((a, w));
        }
    }
    best.unwrap()
}

/// Renumbers cluster ids by first appearance.
pub fn canonical_labels(assignment: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    assignment
        .iter()
        .map(|&c| {
            let next = map.len();
            *map.entry(c).or_insert(next)
        })
        .collect()
}

/// k with the largest second difference of the inertia curve; ties go to
/// the smaller k.
pub fn elbow(curve: &BTreeMap<usize, f64>) -> usize {
    let k_max = curve.keys().copied().max().unwrap_or(1);
    if k_max <= 2 {
        return k_max;
    }
    let mut best = (2, f64::NEG_INFINITY);
    for k in 2..k_max {
        let d2 = curve[&(k - 1)] - 2.0 * curve[&k] + curve[&(k + 1)];
        if d2 > best.1 {
            best = (k, d2);
        }
    }
    best.0
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    parent[x] = r;
    r
}

/// One agglomerative pass: clusters whose centroids are closer than
/// `fraction` times the median centroid distance are united.
pub fn merge_close_clusters(points: &[Vec<f64>], assignment: &[usize], fraction: f64) -> Vec<usize> {
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    if k < 3 {
        return assignment.to_vec();
    }
    let cs = centroids(points, assignment, k);
    let mut pairs = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            pairs.push((i, j, sq_dist(&cs[i], &cs[j]).sqrt()));
        }
    }
    let mut ds: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    ds.sort_by(f64::total_cmp);
    let m = ds.len();
    let median = if m % 2 == 1 { ds[m / 2] } else { (ds[m / 2 - 1] + ds[m / 2]) / 2.0 };
    let mut parent: Vec<usize> = (0..k).collect();
    for (i, j, d) in pairs {
        if d < fraction * median {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            parent[a.max(b)] = a.min(b);
        }
    }
    let merged: Vec<usize> = assignment.iter().map(|&c| find(&mut parent, c)).collect();
    canonical_labels(&merged)
}

pub fn spectral_cluster(vectors: &[GeographyVector], config: &ClusterConfig) -> Result<ClusterModel> {
    let n = vectors.len();
    if n < 2 {
        return Err(AuditError::InsufficientData("clustering needs at least 2 geographies".into()));
    }
    if config.k_max < 1 || config.k_max > n {
        return Err(AuditError::InvalidConfig(format!("k_max {} must lie in 1..={n}", config.k_max)));
    }
    let geographies: Vec<String> = vectors.iter().map(|v| v.geography.clone()).collect();
    let a = affinity(vectors);
    let (embedding, eigenvalues) = spectral_embedding(&a, config.k_max);
    let mut rng = crate::rng::stream(config.seed, &[crate::rng::label("spectral")]);
    let mut curve = BTreeMap::new();
    let mut fits = BTreeMap::new();
    for k in 1..=config.k_max {
        let (assign, w) = kmeans(&embedding, k, config.restarts, &mut rng);
        curve.insert(k, w);
        fits.insert(k, assign);
    }
    let first = &vectors[0].counts;
    let identical = vectors.iter().all(|v| {
        match (normalized(&v.as_f64()), normalized(&first.map(f64::from))) {
            (Some(a), Some(b)) => sq_dist(&a, &b) < 1e-18,
            (None, None) => true,
            _ => false,
        }
    });
    let spectral_k = if identical { 1 } else { elbow(&curve) };
    let spectral_assignment = fits[&spectral_k].clone();
    let assignment = merge_close_clusters(&embedding, &spectral_assignment, config.merge_fraction);
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    Ok(ClusterModel {
        geographies,
        k,
        assignment,
        embedding,
        eigenvalues,
        inertia_curve: curve,
        spectral_k,
        spectral_assignment,
    })
}

/// Repeatedly unites the two clusters with the closest centroids until
/// `target` clusters remain.
pub fn merge_to(model: &ClusterModel, target: usize) -> ClusterModel {
    let mut assignment = model.assignment.clone();
    let mut k = model.k;
    while k > target.max(1) {
        let cs = centroids(&model.embedding, &assignment, k);
        let mut best = (0, 1, f64::INFINITY);
        for i in 0..k {
            for j in i + 1..k {
                let d = sq_dist(&cs[i], &cs[j]);
                if d < best.2 {
                    best = (i, j, d);
                }
            }
        }
        for c in assignment.iter_mut() {
            if *c == best.1 {
                *c = best.0;
            }
        }
        assignment = canonical_labels(&assignment);
        k -= 1;
    }
    ClusterModel { k, assignment, ..model.clone() }
}

/// True when two assignments induce the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && canonical_labels(a) == canonical_labels(b)
}

pub const ATTRIBUTE_NAMES: [&str; 6] = ["acd", "gdp", "gini", "hdi", "gendergap", "individualism"];

/// Country-level indicators: American cultural distance, GDP per capita
/// (USD), Gini coefficient, Human Development Index, gender gap index,
/// individualism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeRow {
    pub acd: f64,
    pub gdp: f64,
    pub gini: f64,
    pub hdi: f64,
    pub gendergap: f64,
    pub individualism: f64,
}

impl AttributeRow {
    pub fn values(&self) -> [f64; 6] {
        [self.acd, self.gdp, self.gini, self.hdi, self.gendergap, self.individualism]
    }

    pub fn from_values(v: [f64; 6]) -> Self {
        AttributeRow {
            acd: v[0],
            gdp: v[1],
            gini: v[2],
            hdi: v[3],
            gendergap: v[4],
            individualism: v[5],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CountryAttributes {
    pub rows: BTreeMap<String, AttributeRow>,
}

const BUNDLED_ATTRIBUTES: &str = include_str!("../data/country_attributes.csv");

#[derive(Deserialize)]
struct CsvRow {
    geography: String,
    acd: f64,
    gdp: f64,
    gini: f64,
    hdi: f64,
    gendergap: f64,
    individualism: f64,
}

impl CountryAttributes {
    /// Reads `geography,acd,gdp,gini,hdi,gendergap,individualism`.
    pub fn from_csv(reader: impl Read) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
        let mut rows = BTreeMap::new();
        for rec in rd.deserialize() {
            let r: CsvRow = rec?;
            rows.insert(
                r.geography,
                AttributeRow {
                    acd: r.acd,
                    gdp: r.gdp,
                    gini: r.gini,
                    hdi: r.hdi,
                    gendergap: r.gendergap,
                    individualism: r.individualism,
                },
            );
        }
        Ok(CountryAttributes { rows })
    }

    /// The table shipped with the crate (21 geographies).
    pub fn bundled() -> Self {
        Self::from_csv(BUNDLED_ATTRIBUTES.as_bytes()).expect("bundled attribute table parses")
    }

    pub fn get(&self, geography: &str) -> Result<&AttributeRow> {
        self.rows
            .get(geography)
            .ok_or_else(|| AuditError::MissingAttributes(geography.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub members: Vec<String>,
    pub means: AttributeRow,
    pub intra_similarity: f64,
    /// Similarity of a one-member cluster is 1.0 by convention.
    pub singleton: bool,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    match (normalized(a), normalized(b)) {
        (Some(x), Some(y)) => x.iter().zip(&y).map(|(p, q)| p * q).sum(),
        (None, None) => 1.0,
        _ => 0.0,
    }
}

/// Per-cluster attribute means and mean pairwise cosine similarity of
/// min-max normalized attribute vectors. Normalization ranges are taken over
/// every listed geography.
pub fn summarize_partition(clusters: &[Vec<String>], attrs: &CountryAttributes) -> Result<Vec<ClusterSummary>> {
    let mut lo = [f64::INFINITY; 6];
    let mut hi = [f64::NEG_INFINITY; 6];
    for g in clusters.iter().flatten() {
        for (i, v) in attrs.get(g)?.values().into_iter().enumerate() {
            lo[i] = lo[i].min(v);
            hi[i] = hi[i].max(v);
        }
    }
    let scaled = |row: &AttributeRow| -> Vec<f64> {
        row.values()
            .iter()
            .enumerate()
            .map(|(i, v)| if hi[i] > lo[i] { (v - lo[i]) / (hi[i] - lo[i]) } else { 0.0 })
            .collect()
    };
    let mut out = Vec::with_capacity(clusters.len());
    for (c, members) in clusters.iter().enumerate() {
        let rows: Vec<&AttributeRow> = members.iter().map(|g| attrs.get(g)).collect::<Result<_>>()?;
        let mut sums = [0.0; 6];
        for r in &rows {
            for (s, v) in sums.iter_mut().zip(r.values()) {
                *s += v;
            }
        }
        let n = rows.len().max(1) as f64;
        let means = AttributeRow::from_values(sums.map(|s| s / n));
        let vecs: Vec<Vec<f64>> = rows.iter().map(|r| scaled(r)).collect();
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..vecs.len() {
            for j in i + 1..vecs.len() {
                total += cosine(&vecs[i], &vecs[j]);
                pairs += 1;
            }
        }
        out.push(ClusterSummary {
            cluster: c,
            members: members.clone(),
            means,
            intra_similarity: if pairs == 0 { 1.0 } else { total / pairs as f64 },
            singleton: members.len() == 1,
        });
    }
    Ok(out)
}

pub fn cluster_attribute_summary(model: &ClusterModel, attrs: &CountryAttributes) -> Result<Vec<ClusterSummary>> {
    summarize_partition(&model.members(), attrs)
}

/// Occupation rates pooled over a cluster's member geographies by summing
/// confusion counts.
pub fn pool_cluster_rates<'a>(
    attribute: Attribute,
    members: impl IntoIterator<Item = &'a BTreeMap<String, GroupRates>>,
) -> BTreeMap<String, GroupRates> {
    let mut by_occ: BTreeMap<String, Vec<&GroupRates>> = BTreeMap::new();
    for geo in members {
        for (occ, r) in geo {
            by_occ.entry(occ.clone()).or_default().push(r);
        }
    }
    by_occ
        .into_iter()
        .map(|(occ, rs)| (occ, pool_rates(attribute, rs)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OppositeBiasTable {
    pub clusters: (usize, usize),
    /// Rows: TPR favours A in the first cluster and B in the second; the
    /// reverse; FPR favours A then B under equal TPR; the reverse.
    pub rows: [Vec<String>; 4],
}

pub const OPPOSITE_ROWS: [(Direction, Direction); 4] = [
    (Direction::TprA, Direction::TprB),
    (Direction::TprB, Direction::TprA),
    (Direction::FprA, Direction::FprB),
    (Direction::FprB, Direction::FprA),
];

pub fn opposite_bias(
    c1: &BTreeMap<String, GroupRates>,
    c2: &BTreeMap<String, GroupRates>,
    clusters: (usize, usize),
) -> OppositeBiasTable {
    let mut rows: [Vec<String>; 4] = Default::default();
    for (occ, r1) in c1 {
        let Some(r2) = c2.get(occ) else { continue };
        let (Some(d1), Some(d2)) = (direction(r1), direction(r2)) else { continue };
        for (row, (x, y)) in rows.iter_mut().zip(OPPOSITE_ROWS) {
            if d1 == x && d2 == y {
                row.push(occ.clone());
            }
        }
    }
    OppositeBiasTable { clusters, rows }
}
