//! Matching and localization stage: cosine nearest-neighbour ranking over a
//! geo-tagged gallery, threshold matching, multi-image query fusion, and the
//! Recall@K / AP metrics. A synthetic embedding generator stands in for trained
//! view-specific extractors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("vector has (near) zero norm")]
    ZeroVector,
    #[error("unknown location '{0}'")]
    UnknownLocation(String),
    #[error("true match '{0}' does not appear in the ranking")]
    MissingTruth(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum View {
    Satellite,
    Uav,
    Ground,
}

impl View {
    pub fn as_str(self) -> &'static str {
        match self {
            View::Satellite => "satellite",
            View::Uav => "uav",
            View::Ground => "ground",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "satellite" => Some(View::Satellite),
            "uav" => Some(View::Uav),
            "ground" => Some(View::Ground),
            _ => None,
        }
    }
}

/// Unit-norm feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `v` to unit length.
    pub fn new(v: Vec<f64>) -> Result<Self, RetrievalError> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm >= 1e-12) {
            return Err(RetrievalError::ZeroVector);
        }
        Ok(Self(v.into_iter().map(|x| x / norm).collect()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Neg for &Embedding {
    type Output = Embedding;
    fn neg(self) -> Embedding {
        Embedding(self.0.iter().map(|x| -x).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryRecord {
    pub location_id: String,
    pub view: View,
    pub geo: GeoPoint,
    pub embedding: Embedding,
}

impl GalleryRecord {
    pub fn new(
        location_id: impl Into<String>,
        view: View,
        geo: GeoPoint,
        embedding: Embedding,
    ) -> Result<Self, RetrievalError> {
        let location_id = location_id.into();
        if location_id.is_empty() || location_id.contains([',', '\n', '\r']) {
            return Err(RetrievalError::Invalid(format!("bad location id '{location_id}'")));
        }
        if !(-90.0..=90.0).contains(&geo.lat) || !(-180.0..=180.0).contains(&geo.lon) {
            return Err(RetrievalError::Invalid(format!(
                "coordinates ({}, {}) out of range",
                geo.lat, geo.lon
            )));
        }
        Ok(Self {
            location_id,
            view,
            geo,
            embedding,
        })
    }
}

/// Several images of one place, used together as one query.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    true_location_id: String,
    embeddings: Vec<Embedding>,
}

impl QuerySet {
    pub fn new(true_location_id: impl Into<String>, embeddings: Vec<Embedding>) -> Result<Self, RetrievalError> {
        let Some(first) = embeddings.first() else {
            return Err(RetrievalError::Invalid("query set is empty".into()));
        };
        let d = first.dim();
        if let Some(e) = embeddings.iter().find(|e| e.dim() != d) {
            return Err(RetrievalError::DimensionMismatch(d, e.dim()));
        }
        Ok(Self {
            true_location_id: true_location_id.into(),
            embeddings,
        })
    }

    pub fn true_location_id(&self) -> &str {
        &self.true_location_id
    }

    pub fn embeddings(&self) -> &[Embedding] {
        &self.embeddings
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub location_id: String,
    pub score: f64,
    /// Index of the record in the gallery that was ranked.
    pub record: usize,
}

/// Gallery records by descending score; ties by ascending location id, then
/// gallery position.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult(pub Vec<RankedEntry>);

impl RankedResult {
    pub fn entries(&self) -> &[RankedEntry] {
        &self.0
    }

    /// 1-based rank of the first entry for `location_id`.
    pub fn first_rank_of(&self, location_id: &str) -> Option<usize> {
        self.0.iter().position(|e| e.location_id == location_id).map(|p| p + 1)
    }
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, RetrievalError> {
    if a.dim() != b.dim() {
        return Err(RetrievalError::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum())
}

/// Mean of the query's vectors, renormalized.
pub fn fuse_queries(qs: &QuerySet) -> Result<Embedding, RetrievalError> {
    let d = qs.embeddings[0].dim();
    let mut acc = vec![0.0; d];
    for e in &qs.embeddings {
        for (a, x) in acc.iter_mut().zip(&e.0) {
            *a += x;
        }
    }
    let n = qs.embeddings.len() as f64;
    Embedding::new(acc.into_iter().map(|x| x / n).collect())
}

fn sort_ranked(mut entries: Vec<RankedEntry>) -> RankedResult {
    entries.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.location_id.cmp(&b.location_id))
            .then_with(|| a.record.cmp(&b.record))
    });
    RankedResult(entries)
}

pub fn rank_gallery(query: &Embedding, gallery: &[GalleryRecord]) -> Result<RankedResult, RetrievalError> {
    if gallery.is_empty() {
        return Err(RetrievalError::Invalid("gallery is empty".into()));
    }
    let entries = gallery
        .iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(RankedEntry {
                location_id: r.location_id.clone(),
                score: cosine_similarity(query, &r.embedding)?,
                record: i,
            })
        })
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    Ok(sort_ranked(entries))
}

/// How the images of a [`QuerySet`] are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fusion {
    /// Average the embeddings, then rank once.
    #[default]
    Mean,
    /// Rank every image separately; each record keeps its best score.
    MaxScore,
}

impl Fusion {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mean" => Some(Fusion::Mean),
            "max_score" => Some(Fusion::MaxScore),
            _ => None,
        }
    }
}

pub fn rank_query_set(
    qs: &QuerySet,
    gallery: &[GalleryRecord],
    fusion: Fusion,
) -> Result<RankedResult, RetrievalError> {
    match fusion {
        Fusion::Mean => rank_gallery(&fuse_queries(qs)?, gallery),
        Fusion::MaxScore => {
            if gallery.is_empty() {
                return Err(RetrievalError::Invalid("gallery is empty".into()));
            }
            let mut entries = Vec::with_capacity(gallery.len());
            for (i, r) in gallery.iter().enumerate() {
                let mut best = f64::NEG_INFINITY;
                for q in &qs.embeddings {
                    best = best.max(cosine_similarity(q, &r.embedding)?);
                }
                entries.push(RankedEntry {
                    location_id: r.location_id.clone(),
                    score: best,
                    record: i,
                });
            }
            Ok(sort_ranked(entries))
        }
    }
}

/// The top entry's location, if its score strictly exceeds `tau`.
pub fn match_with_threshold(ranked: &RankedResult, tau: f64) -> Option<&str> {
    ranked
        .0
        .first()
        .filter(|e| e.score > tau)
        .map(|e| e.location_id.as_str())
}

/// Coordinates of the best-ranked gallery record tagged `location_id`.
pub fn localize(
    location_id: &str,
    ranked: &RankedResult,
    gallery: &[GalleryRecord],
) -> Result<GeoPoint, RetrievalError> {
    ranked
        .0
        .iter()
        .find(|e| e.location_id == location_id)
        .and_then(|e| gallery.get(e.record))
        .filter(|r| r.location_id == location_id)
        .map(|r| r.geo)
        .ok_or_else(|| RetrievalError::UnknownLocation(location_id.to_string()))
}

/// 1 if any of the top `k` entries belongs to `true_id`, else 0.
pub fn recall_at_k(ranked: &RankedResult, true_id: &str, k: usize) -> u8 {
    u8::from(ranked.0.iter().take(k).any(|e| e.location_id == true_id))
}

/// Mean, over all true-match entries, of the precision at that entry's rank.
/// Every record of a true location counts as a true match.
pub fn average_precision(ranked: &RankedResult, true_ids: &BTreeSet<String>) -> Result<f64, RetrievalError> {
    if true_ids.is_empty() {
        return Err(RetrievalError::Invalid("no true matches given".into()));
    }
    let present: BTreeSet<&str> = ranked.0.iter().map(|e| e.location_id.as_str()).collect();
    if let Some(missing) = true_ids.iter().find(|t| !present.contains(t.as_str())) {
        return Err(RetrievalError::MissingTruth(missing.clone()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, e) in ranked.0.iter().enumerate() {
        if true_ids.contains(&e.location_id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / hits as f64)
}

/// K for "Recall@top1%": one percent of the gallery, rounded up, at least 1.
pub fn top_percent_k(gallery_len: usize, percent: f64) -> usize {
    ((gallery_len as f64 * percent / 100.0).ceil() as usize).max(1)
}

/// Query images available for one location, per view.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationQueries {
    pub location_id: String,
    pub uav: Vec<Embedding>,
    pub ground: Vec<Embedding>,
}

impl LocationQueries {
    /// Query made of the first `uav` UAV images and first `ground` ground images.
    pub fn query_set(&self, uav: usize, ground: usize) -> Result<QuerySet, RetrievalError> {
        if uav > self.uav.len() || ground > self.ground.len() {
            return Err(RetrievalError::Invalid(format!(
                "location '{}' has {} uav / {} ground images, asked for {uav} / {ground}",
                self.location_id,
                self.uav.len(),
                self.ground.len()
            )));
        }
        let embeddings = self.uav[..uav].iter().chain(&self.ground[..ground]).cloned().collect();
        QuerySet::new(self.location_id.clone(), embeddings)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewNoise {
    pub satellite: f64,
    pub uav: f64,
    pub ground: f64,
}

impl ViewNoise {
    pub fn uniform(std: f64) -> Self {
        Self {
            satellite: 0.0,
            uav: std,
            ground: std,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub locations: usize,
    pub dim: usize,
    /// Expected norm of the Gaussian noise added to each view's vectors; the
    /// per-component standard deviation is `noise / sqrt(dim)`.
    pub noise: ViewNoise,
    pub images_per_view: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub gallery: Vec<GalleryRecord>,
    pub queries: Vec<LocationQueries>,
}

/// One unit-norm prototype per location; the gallery holds one satellite
/// record per location and each query image is a noisy, renormalized copy of
/// its prototype.
pub fn synth_gallery(cfg: &SynthConfig) -> Result<SynthData, RetrievalError> {
    if cfg.locations < 2 || cfg.dim < 2 {
        return Err(RetrievalError::Invalid("need at least 2 locations and 2 dimensions".into()));
    }
    for n in [cfg.noise.satellite, cfg.noise.uav, cfg.noise.ground] {
        if !(n.is_finite() && n >= 0.0) {
            return Err(RetrievalError::Invalid(format!("noise must be >= 0, got {n}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let lat = Uniform::new_inclusive(-90.0, 90.0).expect("valid range");
    let lon = Uniform::new_inclusive(-180.0, 180.0).expect("valid range");
    let noisy = |proto: &[f64], std: f64, rng: &mut ChaCha8Rng| {
        // an all-zero draw is astronomically unlikely; retry keeps the contract
        loop {
            let v: Vec<f64> = proto.iter().map(|p| p + std * unit.sample(rng)).collect();
            if let Ok(e) = Embedding::new(v) {
                return e;
            }
        }
    };
    let mut gallery = Vec::with_capacity(cfg.locations);
    let mut queries = Vec::with_capacity(cfg.locations);
    let width = (cfg.locations - 1).to_string().len();
    let scale = 1.0 / (cfg.dim as f64).sqrt();
    for i in 0..cfg.locations {
        let id = format!("loc{i:0width$}");
        let proto = noisy(&vec![0.0; cfg.dim], 1.0, &mut rng);
        let geo = GeoPoint {
            lat: lat.sample(&mut rng),
            lon: lon.sample(&mut rng),
        };
        let sat = noisy(proto.as_slice(), cfg.noise.satellite * scale, &mut rng);
        gallery.push(GalleryRecord::new(id.clone(), View::Satellite, geo, sat)?);
        let uav = (0..cfg.images_per_view)
            .map(|_| noisy(proto.as_slice(), cfg.noise.uav * scale, &mut rng))
            .collect();
        let ground = (0..cfg.images_per_view)
            .map(|_| noisy(proto.as_slice(), cfg.noise.ground * scale, &mut rng))
            .collect();
        queries.push(LocationQueries {
            location_id: id,
            uav,
            ground,
        });
    }
    Ok(SynthData { gallery, queries })
}

/// Mean retrieval metrics for one (UAV images, ground images) query size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub uav: usize,
    pub ground: usize,
    pub recall_1: f64,
    pub recall_5: f64,
    pub recall_10: f64,
    pub recall_top1pct: f64,
    pub ap: f64,
}

/// Evaluates every query size in `1..=max_uav` x `1..=max_ground`, ground
/// count varying slowest.
pub fn evaluate_grid(
    gallery: &[GalleryRecord],
    queries: &[LocationQueries],
    max_uav: usize,
    max_ground: usize,
    fusion: Fusion,
) -> Result<Vec<GridCell>, RetrievalError> {
    if queries.is_empty() {
        return Err(RetrievalError::Invalid("no queries".into()));
    }
    let k_top = top_percent_k(gallery.len(), 1.0);
    let mut cells = Vec::with_capacity(max_uav * max_ground);
    for g in 1..=max_ground {
        for u in 1..=max_uav {
            cells.push(evaluate_cell(gallery, queries, u, g, k_top, fusion)?);
        }
    }
    Ok(cells)
}

pub fn evaluate_cell(
    gallery: &[GalleryRecord],
    queries: &[LocationQueries],
    uav: usize,
    ground: usize,
    k_top: usize,
    fusion: Fusion,
) -> Result<GridCell, RetrievalError> {
    let mut cell = GridCell {
        uav,
        ground,
        recall_1: 0.0,
        recall_5: 0.0,
        recall_10: 0.0,
        recall_top1pct: 0.0,
        ap: 0.0,
    };
    for q in queries {
        let qs = q.query_set(uav, ground)?;
        let ranked = rank_query_set(&qs, gallery, fusion)?;
        let id = q.location_id.as_str();
        cell.recall_1 += f64::from(recall_at_k(&ranked, id, 1));
        cell.recall_5 += f64::from(recall_at_k(&ranked, id, 5));
        cell.recall_10 += f64::from(recall_at_k(&ranked, id, 10));
        cell.recall_top1pct += f64::from(recall_at_k(&ranked, id, k_top));
        cell.ap += average_precision(&ranked, &BTreeSet::from([id.to_string()]))?;
    }
    let n = queries.len() as f64;
    cell.recall_1 /= n;
    cell.recall_5 /= n;
    cell.recall_10 /= n;
    cell.recall_top1pct /= n;
    cell.ap /= n;
    Ok(cell)
}

/// Element-wise mean of equally shaped grids.
pub fn average_grids(grids: &[Vec<GridCell>]) -> Vec<GridCell> {
    let Some(first) = grids.first() else {
        return Vec::new();
    };
    let n = grids.len() as f64;
    first
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let sum = |f: fn(&GridCell) -> f64| grids.iter().map(|g| f(&g[i])).sum::<f64>() / n;
            GridCell {
                uav: c.uav,
                ground: c.ground,
                recall_1: sum(|c| c.recall_1),
                recall_5: sum(|c| c.recall_5),
                recall_10: sum(|c| c.recall_10),
                recall_top1pct: sum(|c| c.recall_top1pct),
                ap: sum(|c| c.ap),
            }
        })
        .collect()
}

pub const GRID_HEADER: &str = "ground,uav,recall_1,recall_5,recall_10,recall_top1pct,ap";

/// One row per cell; rows are UAV counts within panels of ground counts.
pub fn grid_to_csv(cells: &[GridCell]) -> String {
    let mut out = String::from(GRID_HEADER);
    out.push('\n');
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.ground, c.uav, c.recall_1, c.recall_5, c.recall_10, c.recall_top1pct, c.ap
        );
    }
    out
}

fn record_header(dim: usize) -> String {
    let mut h = String::from("location_id,view,lat,lon");
    for i in 0..dim {
        let _ = write!(h, ",e{i}");
    }
    h
}

/// Comma-separated records; the header lists `e0..e{dim-1}` and so fixes the
/// embedding dimension.
pub fn write_records(records: &[GalleryRecord]) -> String {
    let dim = records.first().map_or(0, |r| r.embedding.dim());
    let mut s = record_header(dim);
    s.push('\n');
    for r in records {
        let _ = write!(s, "{},{},{},{}", r.location_id, r.view.as_str(), r.geo.lat, r.geo.lon);
        for x in r.embedding.as_slice() {
            let _ = write!(s, ",{x}");
        }
        s.push('\n');
    }
    s
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<GalleryRecord>, RetrievalError> {
    let parse_err = |line: usize, reason: String| RetrievalError::Parse { line, reason };
    let mut lines = input.lines().enumerate();
    let header = match lines.next() {
        Some((_, Ok(h))) => h,
        Some((_, Err(e))) => return Err(parse_err(1, e.to_string())),
        None => return Err(parse_err(1, "empty file".into())),
    };
    let dim = header.split(',').count().saturating_sub(4);
    if dim == 0 || header.trim_end() != record_header(dim) {
        return Err(parse_err(
            1,
            "header must be location_id,view,lat,lon,e0,...,e{dim-1}".into(),
        ));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != dim + 4 {
            return Err(parse_err(lineno, format!("expected {} fields, found {}", dim + 4, f.len())));
        }
        let view = View::parse(f[1]).ok_or_else(|| parse_err(lineno, format!("unknown view '{}'", f[1])))?;
        let num = |s: &str| s.parse::<f64>().map_err(|_| parse_err(lineno, format!("invalid number '{s}'")));
        let geo = GeoPoint {
            lat: num(f[2])?,
            lon: num(f[3])?,
        };
        let v = f[4..].iter().map(|s| num(s)).collect::<Result<Vec<_>, _>>()?;
        let emb = Embedding::new(v).map_err(|e| parse_err(lineno, e.to_string()))?;
        out.push(GalleryRecord::new(f[0], view, geo, emb).map_err(|e| parse_err(lineno, e.to_string()))?);
    }
    Ok(out)
}

/// Groups UAV and ground records by location, preserving file order.
pub fn group_queries(records: &[GalleryRecord]) -> Vec<LocationQueries> {
    let mut by_id: BTreeMap<&str, LocationQueries> = BTreeMap::new();
    for r in records {
        let entry = by_id.entry(&r.location_id).or_insert_with(|| LocationQueries {
            location_id: r.location_id.clone(),
            uav: Vec::new(),
            ground: Vec::new(),
        });
        match r.view {
            View::Uav => entry.uav.push(r.embedding.clone()),
            View::Ground => entry.ground.push(r.embedding.clone()),
            View::Satellite => {}
        }
    }
    by_id.into_values().collect()
}
