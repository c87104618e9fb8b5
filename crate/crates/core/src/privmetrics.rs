//! Privacy leakage of exposed intermediate features, measured on images
//! reconstructed by inversion attacks.
//!
//! SSIM compares structure between an original and its reconstruction (higher
//! means more leakage). KL divergence compares smoothed pixel-intensity
//! histograms, always in the direction KL(original || reconstruction); larger
//! values mean stronger confidentiality.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use thiserror::Error;

use crate::trico::{ConfEntry, ConfidentialityTable, TriCoError};

pub const DYNAMIC_RANGE: f64 = 255.0;
pub const DEFAULT_HISTOGRAM_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PrivacyError {
    #[error("image dimensions differ: {0}")]
    DimensionMismatch(String),
    #[error("window {window} exceeds image size {width}x{height}")]
    WindowTooLarge {
        window: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("histogram is not normalized: {0}")]
    NotNormalized(String),
    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),
    #[error("cut '{0}' has no reconstruction triples")]
    EmptyCut(String),
    #[error("{path}: {reason}")]
    Corpus { path: String, reason: String },
    #[error(transparent)]
    Table(#[from] TriCoError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// 8-bit image, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self, PrivacyError> {
        if !matches!(channels, 1 | 3) {
            return Err(PrivacyError::InvalidImage(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(PrivacyError::InvalidImage("empty image".into()));
        }
        if pixels.len() != width * height * channels {
            return Err(PrivacyError::InvalidImage(format!(
                "expected {} samples, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self, PrivacyError> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        f64::from(self.pixels[(y * self.width + x) * self.channels + c])
    }

    /// Binary PGM (P5) or PPM (P6) with maxval 255.
    pub fn read_pnm(bytes: &[u8]) -> Result<Self, PrivacyError> {
        let bad = |m: &str| PrivacyError::InvalidImage(m.to_string());
        let mut pos = 0;
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated PNM header"));
            }
            tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let channels = match tokens[0] {
            "P5" => 1,
            "P6" => 3,
            other => return Err(bad(&format!("unsupported PNM magic '{other}'"))),
        };
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("invalid header field '{s}'")));
        let (width, height, maxval) = (num(tokens[1])?, num(tokens[2])?, num(tokens[3])?);
        if maxval != 255 {
            return Err(bad(&format!("maxval must be 255, got {maxval}")));
        }
        let n = width * height * channels;
        if bytes.len() < pos + n {
            return Err(bad("truncated PNM raster"));
        }
        Self::new(width, height, channels, bytes[pos..pos + n].to_vec())
    }

    pub fn to_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Grayscale matrix: one image row per line, comma-separated 0..=255.
    pub fn read_csv_matrix<R: BufRead>(input: R) -> Result<Self, PrivacyError> {
        let mut pixels = Vec::new();
        let mut width = None;
        let mut height = 0;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<u8> = line
                .split(',')
                .map(|v| v.trim().parse::<u8>())
                .collect::<Result<_, _>>()
                .map_err(|_| PrivacyError::InvalidImage(format!("line {}: expected integers 0..=255", i + 1)))?;
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(PrivacyError::InvalidImage(format!(
                        "line {}: expected {w} columns, found {}",
                        i + 1,
                        row.len()
                    )))
                }
                _ => {}
            }
            pixels.extend(row);
            height += 1;
        }
        Self::new(width.unwrap_or(0), height, 1, pixels)
    }

    pub fn to_csv_matrix(&self) -> String {
        assert_eq!(self.channels, 1, "matrix format is grayscale only");
        let mut s = String::new();
        for row in self.pixels.chunks(self.width) {
            let line: Vec<String> = row.iter().map(u8::to_string).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    /// Loads `.pgm`/`.ppm`/`.pnm` or `.csv` files.
    pub fn load(path: &Path) -> Result<Self, PrivacyError> {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let wrap = |e: PrivacyError| PrivacyError::Corpus {
            path: path.display().to_string(),
            reason: e.to_string(),
        };
        match ext {
            "csv" => Self::read_csv_matrix(io::BufReader::new(fs::File::open(path)?)).map_err(wrap),
            _ => Self::read_pnm(&fs::read(path)?).map_err(wrap),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SsimWindow {
    /// Disjoint `window x window` tiles; partial tiles at the border are skipped.
    NonOverlapping,
    /// Every `window x window` position, weighted by a Gaussian of the given
    /// standard deviation.
    Gaussian { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimOptions {
    pub window: usize,
    pub c1: f64,
    pub c2: f64,
    pub mode: SsimWindow,
}

impl Default for SsimOptions {
    fn default() -> Self {
        Self {
            window: 8,
            c1: (0.01 * DYNAMIC_RANGE).powi(2),
            c2: (0.03 * DYNAMIC_RANGE).powi(2),
            mode: SsimWindow::NonOverlapping,
        }
    }
}

impl SsimOptions {
    pub fn gaussian() -> Self {
        Self {
            window: 11,
            mode: SsimWindow::Gaussian { sigma: 1.5 },
            ..Self::default()
        }
    }
}

/// SSIM of one window given weights summing to one.
#[allow(clippy::too_many_arguments)]
fn window_ssim(a: &Image, b: &Image, x0: usize, y0: usize, c: usize, weights: &[f64], n: usize, opts: &SsimOptions) -> f64 {
    let (mut ma, mut mb) = (0.0, 0.0);
    for dy in 0..n {
        for dx in 0..n {
            let w = weights[dy * n + dx];
            ma += w * a.at(x0 + dx, y0 + dy, c);
            mb += w * b.at(x0 + dx, y0 + dy, c);
        }
    }
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for dy in 0..n {
        for dx in 0..n {
            let w = weights[dy * n + dx];
            let da = a.at(x0 + dx, y0 + dy, c) - ma;
            let db = b.at(x0 + dx, y0 + dy, c) - mb;
            va += w * (da * da);
            vb += w * (db * db);
            cov += w * (da * db);
        }
    }
    ((2.0 * (ma * mb) + opts.c1) * (2.0 * cov + opts.c2))
        / ((ma * ma + mb * mb + opts.c1) * (va + vb + opts.c2))
}

/// Mean windowed SSIM over all windows and channels, clamped to [0, 1].
pub fn ssim(a: &Image, b: &Image, opts: &SsimOptions) -> Result<f64, PrivacyError> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(PrivacyError::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    let n = opts.window;
    if n == 0 || n > a.width.min(a.height) {
        return Err(PrivacyError::WindowTooLarge {
            window: n,
            width: a.width,
            height: a.height,
        });
    }
    let (weights, step) = match opts.mode {
        SsimWindow::NonOverlapping => (vec![1.0 / (n * n) as f64; n * n], n),
        SsimWindow::Gaussian { sigma } => {
            let half = (n as f64 - 1.0) / 2.0;
            let g: Vec<f64> = (0..n)
                .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
                .collect();
            let mut w: Vec<f64> = (0..n * n).map(|k| g[k / n] * g[k % n]).collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            (w, 1)
        }
    };
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in 0..a.channels {
        let mut y = 0;
        while y + n <= a.height {
            let mut x = 0;
            while x + n <= a.width {
                sum += window_ssim(a, b, x, y, c, &weights, n, opts);
                count += 1;
                x += step;
            }
            y += step;
        }
    }
    Ok((sum / count as f64).clamp(0.0, 1.0))
}

/// Per-channel probability histograms.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    channels: Vec<Vec<f64>>,
}

impl Histogram {
    /// Adds `epsilon` to every bin and normalizes each channel.
    pub fn from_counts(counts: Vec<Vec<f64>>, epsilon: f64) -> Result<Self, PrivacyError> {
        if counts.is_empty() {
            return Err(PrivacyError::InvalidHistogram("no channels".into()));
        }
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(PrivacyError::InvalidHistogram(format!("epsilon must be >= 0, got {epsilon}")));
        }
        let bins = counts[0].len();
        let mut channels = Vec::with_capacity(counts.len());
        for ch in counts {
            if ch.len() != bins || bins == 0 {
                return Err(PrivacyError::InvalidHistogram("channels must share a nonzero bin count".into()));
            }
            if ch.iter().any(|&c| !(c.is_finite() && c >= 0.0)) {
                return Err(PrivacyError::InvalidHistogram("counts must be finite and >= 0".into()));
            }
            if !ch.iter().any(|&c| c > 0.0) {
                return Err(PrivacyError::InvalidHistogram("channel has no positive count".into()));
            }
            let total: f64 = ch.iter().map(|c| c + epsilon).sum();
            channels.push(ch.into_iter().map(|c| (c + epsilon) / total).collect());
        }
        Ok(Self { channels })
    }

    /// 256-bin intensity histogram of every channel.
    pub fn from_image(img: &Image, epsilon: f64) -> Result<Self, PrivacyError> {
        let mut counts = vec![vec![0.0; 256]; img.channels];
        for px in img.pixels.chunks(img.channels) {
            for (c, &v) in px.iter().enumerate() {
                counts[c][usize::from(v)] += 1.0;
            }
        }
        Self::from_counts(counts, epsilon)
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }
}

/// `sum p_i ln(p_i / q_i)`, averaged over channels.
pub fn kl_divergence(p: &Histogram, q: &Histogram) -> Result<f64, PrivacyError> {
    if p.channels.len() != q.channels.len() {
        return Err(PrivacyError::DimensionMismatch(format!(
            "{} vs {} channels",
            p.channels.len(),
            q.channels.len()
        )));
    }
    let mut total = 0.0;
    for (pc, qc) in p.channels.iter().zip(&q.channels) {
        if pc.len() != qc.len() {
            return Err(PrivacyError::DimensionMismatch(format!("{} vs {} bins", pc.len(), qc.len())));
        }
        for h in [pc, qc] {
            let s: f64 = h.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(PrivacyError::NotNormalized(format!("channel sums to {s}")));
            }
        }
        let mut kl = 0.0;
        for (&pi, &qi) in pc.iter().zip(qc) {
            if pi > 0.0 {
                if qi <= 0.0 {
                    return Ok(f64::INFINITY);
                }
                kl += pi * (pi / qi).ln();
            }
        }
        total += kl.max(0.0);
    }
    Ok(total / p.channels.len() as f64)
}

/// One original image with its open-box and closed-box reconstructions.
#[derive(Debug, Clone)]
pub struct AttackTriple {
    pub original: Image,
    pub open_box: Image,
    pub closed_box: Image,
}

#[derive(Debug, Clone)]
pub struct CutCorpus {
    pub name: String,
    pub triples: Vec<AttackTriple>,
}

fn sorted_mean(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean KL(original || reconstruction) and mean SSIM per cut and attack type.
pub fn build_conf_table(
    corpus: &[CutCorpus],
    epsilon: f64,
    ssim_opts: &SsimOptions,
) -> Result<ConfidentialityTable, PrivacyError> {
    let mut entries = Vec::with_capacity(corpus.len());
    for cut in corpus {
        if cut.triples.is_empty() {
            return Err(PrivacyError::EmptyCut(cut.name.clone()));
        }
        let mut kl_o = Vec::new();
        let mut kl_c = Vec::new();
        let mut ss_o = Vec::new();
        let mut ss_c = Vec::new();
        for t in &cut.triples {
            let h = Histogram::from_image(&t.original, epsilon)?;
            kl_o.push(kl_divergence(&h, &Histogram::from_image(&t.open_box, epsilon)?)?);
            kl_c.push(kl_divergence(&h, &Histogram::from_image(&t.closed_box, epsilon)?)?);
            ss_o.push(ssim(&t.original, &t.open_box, ssim_opts)?);
            ss_c.push(ssim(&t.original, &t.closed_box, ssim_opts)?);
        }
        entries.push(ConfEntry {
            name: cut.name.clone(),
            kl_open: sorted_mean(kl_o),
            kl_closed: sorted_mean(kl_c),
            ssim_open: Some(sorted_mean(ss_o)),
            ssim_closed: Some(sorted_mean(ss_c)),
        });
    }
    Ok(ConfidentialityTable::new(entries)?)
}

const ROLES: [&str; 3] = ["original", "open", "closed"];

/// Strips an ordering prefix such as `2_` from a cut directory name.
fn cut_name_from_dir(dir: &str) -> &str {
    match dir.split_once('_') {
        Some((prefix, rest)) if !prefix.is_empty() && prefix.bytes().all(|b| b.is_ascii_digit()) => rest,
        _ => dir,
    }
}

/// Reads a corpus laid out as `<root>/<NN_cut>/<stem>.{original,open,closed}.<ext>`.
/// Cut directories are taken in lexicographic order.
pub fn load_corpus(root: &Path) -> Result<Vec<CutCorpus>, PrivacyError> {
    let corpus_err = |p: &Path, r: &str| PrivacyError::Corpus {
        path: p.display().to_string(),
        reason: r.to_string(),
    };
    let mut dirs: Vec<_> = fs::read_dir(root)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|e| e.path().is_dir())
        .collect();
    dirs.sort_by_key(|e| e.file_name());
    if dirs.is_empty() {
        return Err(corpus_err(root, "no cut directories"));
    }
    let mut out = Vec::with_capacity(dirs.len());
    for d in dirs {
        let dir_name = d.file_name().to_string_lossy().into_owned();
        let mut groups: BTreeMap<String, [Option<Image>; 3]> = BTreeMap::new();
        let mut files: Vec<_> = fs::read_dir(d.path())?.collect::<Result<Vec<_>, _>>()?;
        files.sort_by_key(|e| e.file_name());
        for f in files {
            let path = f.path();
            if !path.is_file() {
                continue;
            }
            let file_name = f.file_name().to_string_lossy().into_owned();
            let mut parts = file_name.rsplitn(3, '.');
            let (_ext, role, stem) = match (parts.next(), parts.next(), parts.next()) {
                (Some(e), Some(r), Some(s)) => (e, r, s),
                _ => return Err(corpus_err(&path, "expected <stem>.<role>.<ext>")),
            };
            let Some(slot) = ROLES.iter().position(|r| *r == role) else {
                return Err(corpus_err(&path, "role must be original, open or closed"));
            };
            groups.entry(stem.to_string()).or_default()[slot] = Some(Image::load(&path)?);
        }
        let mut triples = Vec::with_capacity(groups.len());
        for (stem, [o, ob, cb]) in groups {
            match (o, ob, cb) {
                (Some(original), Some(open_box), Some(closed_box)) => triples.push(AttackTriple {
                    original,
                    open_box,
                    closed_box,
                }),
                _ => {
                    return Err(corpus_err(
                        &d.path(),
                        &format!("triple '{stem}' is missing an original, open or closed image"),
                    ))
                }
            }
        }
        let name = cut_name_from_dir(&dir_name).to_string();
        if triples.is_empty() {
            return Err(PrivacyError::EmptyCut(name));
        }
        out.push(CutCorpus { name, triples });
    }
    Ok(out)
}

/// Writes a corpus in the layout read by [`load_corpus`], as binary PNM files.
pub fn write_corpus(root: &Path, corpus: &[CutCorpus]) -> Result<(), PrivacyError> {
    for (i, cut) in corpus.iter().enumerate() {
        let dir = root.join(format!("{i}_{}", cut.name));
        fs::create_dir_all(&dir)?;
        for (j, t) in cut.triples.iter().enumerate() {
            for (role, img) in ROLES.iter().zip([&t.original, &t.open_box, &t.closed_box]) {
                let ext = if img.channels == 1 { "pgm" } else { "ppm" };
                let mut f = fs::File::create(dir.join(format!("img{j:03}.{role}.{ext}")))?;
                f.write_all(&img.to_pnm())?;
            }
        }
    }
    Ok(())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. NaN when either
/// input is constant.
pub fn rank_correlation(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Deterministic stand-in for attack outputs: structured originals blended
/// with uniform noise at a per-cut strength, deeper cuts noisier.
pub mod fixture {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::{AttackTriple, CutCorpus, Image};

    pub const GRAY_FIELD_STD: f64 = 10.0;

    /// Cut names and (open-box, closed-box) degradation strengths.
    pub const LEVELS: [(&str, f64, f64); 5] = [
        ("stem.conv", 0.24, 0.16),
        ("usam1", 0.35, 0.25),
        ("stage2.block3", 0.85, 0.75),
        ("stage3.block5", 0.985, 0.975),
        ("stage4.block2", 1.0, 1.0),
    ];

    /// Smooth blobs and bars over a gradient background.
    pub fn original(rng: &mut ChaCha8Rng, size: usize) -> Image {
        let s = size as f64;
        let blobs: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    rng.random_range(0.0..s),
                    rng.random_range(0.0..s),
                    rng.random_range(s / 10.0..s / 4.0),
                    rng.random_range(-110.0..110.0),
                )
            })
            .collect();
        let freq = rng.random_range(2.0..6.0) * std::f64::consts::TAU / s;
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let tilt = rng.random_range(-60.0..60.0);
        let mut px = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let (fx, fy) = (x as f64, y as f64);
                let mut v = 128.0 + tilt * (fx / s - 0.5) + 40.0 * (freq * fy + phase).sin();
                for &(cx, cy, r, amp) in &blobs {
                    let d2 = (fx - cx).powi(2) + (fy - cy).powi(2);
                    v += amp * (-d2 / (2.0 * r * r)).exp();
                }
                px.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
        Image::new(size, size, 1, px).expect("square grayscale image")
    }

    /// Blends `img` toward a noisy mid-gray field; `strength` 0 keeps the
    /// image, 1 discards it entirely.
    pub fn degrade(rng: &mut ChaCha8Rng, img: &Image, strength: f64) -> Image {
        let field = Normal::new(128.0, GRAY_FIELD_STD).expect("valid normal");
        let px = img
            .pixels()
            .iter()
            .map(|&p| {
                let n = field.sample(rng);
                ((1.0 - strength) * f64::from(p) + strength * n).round().clamp(0.0, 255.0) as u8
            })
            .collect();
        Image::new(img.width(), img.height(), img.channels(), px).expect("same shape")
    }

    pub fn attack_corpus(seed: u64, size: usize, triples_per_cut: usize) -> Vec<CutCorpus> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let originals: Vec<Image> = (0..triples_per_cut).map(|_| original(&mut rng, size)).collect();
        LEVELS
            .iter()
            .map(|&(name, open, closed)| CutCorpus {
                name: name.to_string(),
                triples: originals
                    .iter()
                    .map(|o| AttackTriple {
                        original: o.clone(),
                        open_box: degrade(&mut rng, o, open),
                        closed_box: degrade(&mut rng, o, closed),
                    })
                    .collect(),
            })
            .collect()
    }

    /// Every reconstruction equals its original.
    pub fn identity_corpus(seed: u64, size: usize, triples_per_cut: usize) -> Vec<CutCorpus> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let originals: Vec<Image> = (0..triples_per_cut).map(|_| original(&mut rng, size)).collect();
        LEVELS
            .iter()
            .map(|&(name, _, _)| CutCorpus {
                name: name.to_string(),
                triples: originals
                    .iter()
                    .map(|o| AttackTriple {
                        original: o.clone(),
                        open_box: o.clone(),
                        closed_box: o.clone(),
                    })
                    .collect(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnprofile::PartitionPoint;
    use crate::trico::conf_cost;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Image {
        Image::new(w, h, c, (0..w * h * c).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn ssim_identity_is_exactly_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for c in [1, 3] {
            let a = random_image(&mut rng, 37, 29, c);
            assert_eq!(ssim(&a, &a, &SsimOptions::default()).unwrap(), 1.0);
            assert_eq!(ssim(&a, &a, &SsimOptions::gaussian()).unwrap(), 1.0);
        }
    }

    #[test]
    fn ssim_constant_black_vs_white() {
        let a = Image::filled(16, 16, 1, 0).unwrap();
        let b = Image::filled(16, 16, 1, 255).unwrap();
        let c1 = (0.01f64 * 255.0).powi(2);
        let expected = c1 / (255.0f64.powi(2) + c1);
        let got = ssim(&a, &b, &SsimOptions::default()).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 1.0e-4).abs() < 1e-6);
    }

    #[test]
    fn ssim_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = random_image(&mut rng, 24, 16, 3);
            let b = random_image(&mut rng, 24, 16, 3);
            for opts in [SsimOptions::default(), SsimOptions::gaussian()] {
                let ab = ssim(&a, &b, &opts).unwrap();
                let ba = ssim(&b, &a, &opts).unwrap();
                assert!((ab - ba).abs() <= 1e-12);
                assert!((0.0..=1.0).contains(&ab));
            }
        }
    }

    #[test]
    fn ssim_errors() {
        let a = Image::filled(8, 8, 1, 0).unwrap();
        let b = Image::filled(9, 8, 1, 0).unwrap();
        assert!(matches!(ssim(&a, &b, &SsimOptions::default()), Err(PrivacyError::DimensionMismatch(_))));
        let opts = SsimOptions {
            window: 9,
            ..Default::default()
        };
        assert!(matches!(ssim(&a, &a, &opts), Err(PrivacyError::WindowTooLarge { .. })));
    }

    #[test]
    fn kl_basic_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let img = random_image(&mut rng, 16, 16, 3);
        let h = Histogram::from_image(&img, DEFAULT_HISTOGRAM_EPSILON).unwrap();
        assert_eq!(kl_divergence(&h, &h).unwrap(), 0.0);
        for ch in h.channels() {
            assert!((ch.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_two_bin_limit() {
        // hand evaluation with smoothing eps: p = ((1+e)/(1+2e), e/(1+2e)), q = (1/2, 1/2)
        let closed_form = |e: f64| {
            let p0 = (1.0 + e) / (1.0 + 2.0 * e);
            let p1 = e / (1.0 + 2.0 * e);
            p0 * (2.0 * p0).ln() + p1 * (2.0 * p1).ln()
        };
        let mut prev_err = f64::INFINITY;
        for e in [1e-2, 1e-4, 1e-6, 1e-9] {
            let p = Histogram::from_counts(vec![vec![1.0, 0.0]], e).unwrap();
            let q = Histogram::from_counts(vec![vec![1.0, 1.0]], e).unwrap();
            let kl = kl_divergence(&p, &q).unwrap();
            assert!((kl - closed_form(e)).abs() < 1e-12);
            let err = (kl - std::f64::consts::LN_2).abs();
            assert!(err < prev_err);
            prev_err = err;
        }
        assert!(prev_err < 1e-7);
    }

    #[test]
    fn kl_rejects_unnormalized_and_empty() {
        assert!(Histogram::from_counts(vec![vec![0.0, 0.0]], 1e-6).is_err());
        let p = Histogram::from_counts(vec![vec![1.0, 1.0]], 0.0).unwrap();
        let bad = Histogram {
            channels: vec![vec![0.7, 0.7]],
        };
        assert!(matches!(kl_divergence(&p, &bad), Err(PrivacyError::NotNormalized(_))));
    }

    #[test]
    fn pnm_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for c in [1, 3] {
            let img = random_image(&mut rng, 13, 7, c);
            let back = Image::read_pnm(&img.to_pnm()).unwrap();
            assert_eq!(back, img);
        }
        let commented = b"P5\n# made by hand\n2 1\n255\n\x01\x02";
        let img = Image::read_pnm(commented).unwrap();
        assert_eq!(img.pixels(), &[1, 2]);
        assert!(Image::read_pnm(b"P5\n2 1\n65535\n\x00\x01\x00\x02").is_err());
        assert!(Image::read_pnm(b"P2\n1 1\n255\n0").is_err());
        assert!(Image::read_pnm(b"P5\n4 4\n255\n\x00").is_err());
    }

    #[test]
    fn csv_matrix_round_trip() {
        let text = "0,1,2\n253,254,255\n";
        let img = Image::read_csv_matrix(text.as_bytes()).unwrap();
        assert_eq!((img.width(), img.height()), (3, 2));
        assert_eq!(img.to_csv_matrix(), text);
        assert!(Image::read_csv_matrix("1,2\n3\n".as_bytes()).is_err());
        assert!(Image::read_csv_matrix("1,256\n".as_bytes()).is_err());
    }

    #[test]
    fn identical_reconstructions_give_zero_kl() {
        let corpus = fixture::identity_corpus(4, 32, 3);
        let t = build_conf_table(&corpus, DEFAULT_HISTOGRAM_EPSILON, &SsimOptions::default()).unwrap();
        for (i, e) in t.entries().iter().enumerate() {
            assert_eq!((e.kl_open, e.kl_closed), (0.0, 0.0));
            assert_eq!(e.ssim_open, Some(1.0));
            assert_eq!(conf_cost(&t, PartitionPoint(i), 0.5).unwrap(), 1.0);
        }
    }

    #[test]
    fn noise_cut_is_kl_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let orig = fixture::original(&mut rng, 32);
        let mild = fixture::degrade(&mut rng, &orig, 0.05);
        let noise = fixture::degrade(&mut rng, &orig, 1.0);
        let corpus = vec![
            CutCorpus {
                name: "shallow".into(),
                triples: vec![AttackTriple {
                    original: orig.clone(),
                    open_box: mild.clone(),
                    closed_box: mild,
                }],
            },
            CutCorpus {
                name: "deep".into(),
                triples: vec![AttackTriple {
                    original: orig,
                    open_box: noise.clone(),
                    closed_box: noise,
                }],
            },
        ];
        let t = build_conf_table(&corpus, DEFAULT_HISTOGRAM_EPSILON, &SsimOptions::default()).unwrap();
        assert_eq!(t.entries()[1].kl_open, t.kl_max());
        assert_eq!(conf_cost(&t, PartitionPoint(1), 0.5).unwrap(), 0.0);
    }

    #[test]
    fn empty_cut_is_an_error() {
        let corpus = vec![CutCorpus {
            name: "x".into(),
            triples: vec![],
        }];
        assert!(matches!(
            build_conf_table(&corpus, 1e-6, &SsimOptions::default()),
            Err(PrivacyError::EmptyCut(_))
        ));
    }

    #[test]
    fn table_is_permutation_invariant() {
        let mut corpus = fixture::attack_corpus(2, 32, 5);
        let before = build_conf_table(&corpus, 1e-6, &SsimOptions::default()).unwrap();
        for cut in &mut corpus {
            cut.triples.reverse();
            cut.triples.swap(0, 2);
        }
        let after = build_conf_table(&corpus, 1e-6, &SsimOptions::default()).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn corpus_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = fixture::attack_corpus(6, 16, 2);
        write_corpus(dir.path(), &corpus).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        assert_eq!(back.len(), corpus.len());
        for (a, b) in back.iter().zip(&corpus) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.triples.len(), b.triples.len());
            assert_eq!(a.triples[1].closed_box, b.triples[1].closed_box);
        }
        fs::create_dir(dir.path().join("9_empty")).unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(PrivacyError::EmptyCut(n)) if n == "empty"));
    }

    #[test]
    fn spearman_examples() {
        assert!((rank_correlation(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((rank_correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((rank_correlation(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]) - 0.8).abs() < 1e-12);
    }
}
