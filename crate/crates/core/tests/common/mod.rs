//! Test support: per-pixel reference implementations, random masks and a
//! synthetic on-disk dataset.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use fss_sam::mask::{save_mask, MaskFormat};
use fss_sam::pipeline::{self, PartialConfig, RunConfig};
use fss_sam::prompt::PromptMode;
use fss_sam::BinaryMask;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn below(rng: &mut Rng, n: u64) -> u64 {
    rng.next_u64() % n
}

pub fn range(rng: &mut Rng, lo: i64, hi: i64) -> i64 {
    lo + below(rng, (hi - lo + 1) as u64) as i64
}

pub fn chance(rng: &mut Rng, p: f64) -> bool {
    ((rng.next_u64() >> 11) as f64) < p * (1u64 << 53) as f64
}

/// Row-major pixel grid, the oracle's own representation.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub w: usize,
    pub h: usize,
    pub px: Vec<bool>,
}

impl Grid {
    pub fn empty(w: usize, h: usize) -> Self {
        Self { w, h, px: vec![false; w * h] }
    }

    pub fn at(&self, x: usize, y: usize) -> bool {
        self.px[y * self.w + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.px[y * self.w + x] = v;
    }

    pub fn mask(&self) -> BinaryMask {
        BinaryMask::from_bools(self.w as u32, self.h as u32, &self.px).unwrap()
    }

    pub fn of(mask: &BinaryMask) -> Self {
        let (w, h) = (mask.width() as usize, mask.height() as usize);
        let mut g = Self::empty(w, h);
        for y in 0..h {
            for x in 0..w {
                g.set(x, y, mask.get(x as u32, y as u32));
            }
        }
        g
    }

    pub fn count(&self) -> u64 {
        self.px.iter().filter(|&&b| b).count() as u64
    }

    pub fn shifted(&self, dx: i64, dy: i64) -> Self {
        let mut out = Self::empty(self.w, self.h);
        for y in 0..self.h as i64 {
            for x in 0..self.w as i64 {
                let (sx, sy) = (x - dx, y - dy);
                if sx >= 0 && sy >= 0 && (sx as usize) < self.w && (sy as usize) < self.h {
                    out.set(x as usize, y as usize, self.at(sx as usize, sy as usize));
                }
            }
        }
        out
    }

    pub fn with_noise(&self, rng: &mut Rng, flips: u64) -> Self {
        let mut out = self.clone();
        for _ in 0..flips {
            let x = below(rng, self.w as u64) as usize;
            let y = below(rng, self.h as u64) as usize;
            let v = out.at(x, y);
            out.set(x, y, !v);
        }
        out
    }

    /// Flips up to `max_flips - 1` random pixels.
    pub fn noisy(&self, rng: &mut Rng, max_flips: u64) -> Self {
        let n = below(rng, max_flips);
        self.with_noise(rng, n)
    }
}

/// A random mask in one of several styles: sparse/dense noise, rectangles,
/// blobs, empty or full.
pub fn random_grid(rng: &mut Rng, w: usize, h: usize) -> Grid {
    let mut g = Grid::empty(w, h);
    match below(rng, 8) {
        0 => {}
        1 => g.px.iter_mut().for_each(|p| *p = true),
        2 | 3 => {
            let p = [0.02, 0.3, 0.5, 0.9][below(rng, 4) as usize];
            g.px.iter_mut().for_each(|b| *b = chance(rng, p));
        }
        4 => {
            let (x, y) = (below(rng, w as u64) as usize, below(rng, h as u64) as usize);
            g.set(x, y, true);
        }
        _ => {
            for _ in 0..=below(rng, 3) {
                let (x0, y0) = (below(rng, w as u64) as usize, below(rng, h as u64) as usize);
                let (x1, y1) = (
                    x0 + below(rng, (w - x0) as u64) as usize,
                    y0 + below(rng, (h - y0) as u64) as usize,
                );
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        g.set(x, y, true);
                    }
                }
            }
        }
    }
    g
}

/// Random dimensions that straddle the 64-bit word boundary.
pub fn random_dims(rng: &mut Rng) -> (usize, usize) {
    let pick = |rng: &mut Rng| match below(rng, 4) {
        0 => 1 + below(rng, 8) as usize,
        1 => 62 + below(rng, 5) as usize,
        2 => 127 + below(rng, 3) as usize,
        _ => 1 + below(rng, 100) as usize,
    };
    (pick(rng), pick(rng))
}

pub fn blob(rng: &mut Rng, w: usize, h: usize) -> Grid {
    let mut g = Grid::empty(w, h);
    let cx = range(rng, 8, w as i64 - 8) as f64;
    let cy = range(rng, 8, h as i64 - 8) as f64;
    let rx = range(rng, 3, (w / 4) as i64) as f64;
    let ry = range(rng, 3, (h / 4) as i64) as f64;
    let ellipse = chance(rng, 0.5);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
            let inside = if ellipse { u * u + v * v <= 1.0 } else { u.abs() <= 1.0 && v.abs() <= 1.0 };
            g.set(x, y, inside);
        }
    }
    g
}

// ------------------------------------------------------------------ oracle

/// `(intersection, union)` by enumerating pixels.
pub fn overlap(a: &Grid, b: &Grid) -> (u64, u64) {
    let mut i = 0;
    let mut u = 0;
    for k in 0..a.px.len() {
        if a.px[k] && b.px[k] {
            i += 1;
        }
        if a.px[k] || b.px[k] {
            u += 1;
        }
    }
    (i, u)
}

pub fn ratio((i, u): (u64, u64)) -> f64 {
    if u == 0 {
        1.0
    } else {
        i as f64 / u as f64
    }
}

pub fn complement(a: &Grid) -> Grid {
    Grid { w: a.w, h: a.h, px: a.px.iter().map(|b| !b).collect() }
}

/// `(m00, m10, m01)`
pub fn moments(a: &Grid) -> (u64, u64, u64) {
    let mut m = (0, 0, 0);
    for y in 0..a.h {
        for x in 0..a.w {
            if a.at(x, y) {
                m.0 += 1;
                m.1 += x as u64;
                m.2 += y as u64;
            }
        }
    }
    m
}

/// Inclusive `(x_min, y_min, x_max, y_max)`.
pub fn bbox(a: &Grid) -> Option<(u32, u32, u32, u32)> {
    let mut b: Option<(u32, u32, u32, u32)> = None;
    for y in 0..a.h as u32 {
        for x in 0..a.w as u32 {
            if a.at(x as usize, y as usize) {
                b = Some(match b {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    b
}

/// `a/b > c/d` for `b, d > 0`, with empty unions meaning 1.
pub fn iou_greater(a: (u64, u64), b: (u64, u64)) -> bool {
    let n = |(i, u): (u64, u64)| if u == 0 { (1u128, 1u128) } else { (i as u128, u as u128) };
    let ((ai, au), (bi, bu)) = (n(a), n(b));
    ai * bu > bi * au
}

// --------------------------------------------------------- synthetic data

pub const SYN_W: usize = 48;
pub const SYN_H: usize = 40;

pub struct Synthetic {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub fss_dir: PathBuf,
    pub sam_dir: PathBuf,
    pub seed: u64,
    pub episodes: usize,
}

fn write(path: &Path, g: &Grid) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, save_mask(&g.mask(), MaskFormat::Png)).unwrap();
}

/// Writes a fold-0 dataset (classes 1..=3 of 12) with `episodes` sampled
/// episodes, FSS predictions and a flat precomputed segmenter directory.
/// One in about fifteen FSS masks is empty.
pub fn synthetic(root: &Path, episodes: usize, seed: u64) -> Synthetic {
    let mut rng = rng(seed ^ 0x5EED);
    let mut entries = Vec::new();
    for i in 0..36 {
        let class = 1 + (i % 3) as u32;
        let gt = blob(&mut rng, SYN_W, SYN_H);
        write(&root.join(format!("gt/q{i:02}.png")), &gt);
        write(&root.join(format!("images/q{i:02}.png")), &gt);
        entries.push(serde_json::json!({
            "image_ref": format!("images/q{i:02}.png"),
            "gt_mask_ref": format!("gt/q{i:02}.png"),
            "class_id": class,
        }));
    }
    let manifest = root.join("manifest.json");
    let body = serde_json::json!({
        "name": "custom",
        "class_count": 12,
        "split_scheme": "contiguous",
        "entries": entries,
    });
    std::fs::write(&manifest, serde_json::to_string_pretty(&body).unwrap()).unwrap();

    let syn = Synthetic {
        root: root.to_path_buf(),
        manifest,
        fss_dir: root.join("fss"),
        sam_dir: root.join("sam"),
        seed,
        episodes,
    };
    let cfg = syn.config("mock:identity", PromptMode::Box, 0.75);
    let sampled = pipeline::episodes_for(&cfg).unwrap().remove(&0).unwrap();
    let mut shapes = serde_json::Map::new();
    for e in &sampled {
        let gt_bytes = std::fs::read(root.join(&e.query.gt_mask_ref)).unwrap();
        let gt = Grid::of(&fss_sam::mask::load_mask(&gt_bytes, MaskFormat::Png).unwrap());
        let fss = if below(&mut rng, 15) == 0 {
            Grid::empty(SYN_W, SYN_H)
        } else {
            gt.shifted(range(&mut rng, -5, 5), range(&mut rng, -5, 5))
                .noisy(&mut rng, 60)
        };
        let sam = match below(&mut rng, 4) {
            0 => gt.noisy(&mut rng, 20),
            1 => fss.noisy(&mut rng, 80),
            2 => blob(&mut rng, SYN_W, SYN_H),
            _ => gt.shifted(range(&mut rng, -3, 3), range(&mut rng, -3, 3)),
        };
        write(&syn.fss_dir.join(&e.fss_mask_ref), &fss);
        write(&syn.sam_dir.join(format!("{}.png", e.id)), &sam);
        shapes.insert(e.id.clone(), serde_json::json!({"width": SYN_W, "height": SYN_H}));
    }
    std::fs::write(
        syn.sam_dir.join("manifest.json"),
        serde_json::to_string(&shapes).unwrap(),
    )
    .unwrap();
    syn
}

impl Synthetic {
    pub fn config(&self, backend: &str, mode: PromptMode, threshold: f64) -> RunConfig {
        PartialConfig {
            manifest: Some(self.manifest.clone()),
            seed: Some(self.seed),
            num_episodes: Some(self.episodes),
            fss_dir: Some(self.fss_dir.clone()),
            backend: Some(backend.to_string()),
            prompt_mode: Some(mode),
            threshold: Some(threshold),
            out: Some(self.root.join("out")),
            ..PartialConfig::default()
        }
        .resolve()
        .unwrap()
    }

    pub fn precomputed(&self) -> String {
        format!("precomputed:{}", self.sam_dir.display())
    }
}

// ----------------------------------------------------------------- golden

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Config for the checked-in golden set, writing into `out`.
pub fn golden_config(out: &Path, mode: PromptMode, threshold: f64) -> RunConfig {
    let g = fixtures().join("golden");
    PartialConfig {
        manifest: Some(g.join("manifest.json")),
        episodes: Some(g.join("episodes.jsonl")),
        fss_dir: Some(g.join("fss")),
        backend: Some(format!("precomputed:{}", g.join("sam").display())),
        prompt_mode: Some(mode),
        threshold: Some(threshold),
        out: Some(out.to_path_buf()),
        ..PartialConfig::default()
    }
    .resolve()
    .unwrap()
}

pub fn golden() -> serde_json::Value {
    let text = std::fs::read_to_string(fixtures().join("golden/golden.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn close(what: &str, expected: &serde_json::Value, actual: f64) -> Result<(), String> {
    let e = expected.as_f64().ok_or(format!("{what}: golden value missing"))?;
    if (e - actual).abs() <= 1e-9 {
        Ok(())
    } else {
        Err(format!("{what}: expected {e}, got {actual}"))
    }
}

fn exact(what: &str, expected: &serde_json::Value, actual: u64) -> Result<(), String> {
    match expected.as_u64() {
        Some(e) if e == actual => Ok(()),
        _ => Err(format!("{what}: expected {expected}, got {actual}")),
    }
}

fn check_set(what: &str, expected: &serde_json::Value, m: &fss_sam::pipeline::MetricSet) -> Result<(), String> {
    close(&format!("{what}.miou"), &expected["miou"], m.miou)?;
    close(&format!("{what}.fb_miou"), &expected["fb_miou"], m.fb_miou)?;
    let t = &expected["totals"];
    let totals = [
        m.totals.fg_intersection,
        m.totals.fg_union,
        m.totals.bg_intersection,
        m.totals.bg_union,
    ];
    for (k, v) in totals.into_iter().enumerate() {
        exact(&format!("{what}.totals[{k}]"), &t[k], v)?;
    }
    let per_class = expected["per_class"].as_object().unwrap();
    if per_class.len() != m.per_class.len() {
        return Err(format!("{what}: {} classes, golden has {}", m.per_class.len(), per_class.len()));
    }
    for row in &m.per_class {
        let g = &per_class[&row.class_id.to_string()];
        exact(&format!("{what}.class{}.I", row.class_id), &g[0], row.intersection)?;
        exact(&format!("{what}.class{}.U", row.class_id), &g[1], row.union)?;
    }
    Ok(())
}

/// Compares one fold evaluation with a golden block (`base`,
/// `without_selection` and the per-threshold entry).
pub fn check_golden(
    block: &serde_json::Value,
    e: &fss_sam::pipeline::FoldEvaluation,
) -> Result<(), String> {
    let key = format!("{:?}", e.threshold.value());
    let row = &block["thresholds"][&key];
    if row.is_null() {
        return Err(format!("golden has no threshold {key}"));
    }
    let tag = format!("{}@{key}", e.prompt_mode);
    check_set(&format!("{tag} base"), &block["base"], &e.base)?;
    check_set(&format!("{tag} without_selection"), &block["without_selection"], &e.without_selection)?;
    check_set(&format!("{tag} selected"), &row["selected"], &e.selected)?;
    let s = &row["sources"];
    exact(&format!("{tag} sam"), &s["sam"], e.sources.sam)?;
    exact(&format!("{tag} fss"), &s["fss"], e.sources.fss)?;
    exact(&format!("{tag} fallback_empty"), &s["fallback_empty"], e.sources.fallback_empty)?;
    exact(&format!("{tag} fallback_error"), &s["fallback_error"], e.sources.fallback_error)?;
    for (name, g) in [
        ("improved", e.situations.improved),
        ("degraded", e.situations.degraded),
        ("unchanged", e.situations.unchanged),
    ] {
        let x = &row["situations"][name];
        exact(&format!("{tag} {name}.n"), &x[0], g.samples)?;
        exact(&format!("{tag} {name}.I"), &x[1], g.intersection)?;
        exact(&format!("{tag} {name}.U"), &x[2], g.union)?;
    }
    close(&format!("{tag} fb_miou_s"), &row["fb_miou_s"], e.fb_miou_s.unwrap_or(f64::NAN))
}

// ------------------------------------------------------------ stub server

/// A loopback HTTP server replaying scripted `/segment` replies and
/// recording every request body it receives.
pub struct Stub {
    pub url: String,
    pub received: std::sync::Arc<std::sync::Mutex<Vec<(String, String)>>>,
    server: std::sync::Arc<tiny_http::Server>,
    thread: Option<std::thread::JoinHandle<()>>,
}

pub fn stub(replies: Vec<(u16, String)>, health: String) -> Stub {
    let replies = std::sync::Mutex::new(std::collections::VecDeque::from(replies));
    stub_with(move |path, _| {
        if path == "/health" {
            (200, health.clone())
        } else {
            replies.lock().unwrap().pop_front().unwrap_or((500, "exhausted".into()))
        }
    })
}

/// A stub answering every request through `handler(path, body)`.
pub fn stub_with<F>(handler: F) -> Stub
where
    F: Fn(&str, &str) -> (u16, String) + Send + Sync + 'static,
{
    use std::sync::{Arc, Mutex};
    let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
    let port = server.server_addr().to_ip().unwrap().port();
    let received = Arc::new(Mutex::new(Vec::new()));
    let (srv, log) = (server.clone(), received.clone());
    let thread = std::thread::spawn(move || {
        for mut req in srv.incoming_requests() {
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            let path = req.url().to_string();
            let (status, text) = handler(&path, &body);
            log.lock().unwrap().push((path, body));
            let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
            let _ = req.respond(tiny_http::Response::from_string(text).with_status_code(status).with_header(header));
        }
    });
    Stub {
        url: format!("http://127.0.0.1:{port}"),
        received,
        server,
        thread: Some(thread),
    }
}

impl Drop for Stub {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// A local address with nothing listening on it.
pub fn dead_url() -> String {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = l.local_addr().unwrap().port();
    drop(l);
    format!("http://127.0.0.1:{port}")
}

pub fn wire_fixture(name: &str) -> String {
    let text = std::fs::read_to_string(fixtures().join("wire").join(name)).unwrap();
    text.trim_end_matches('\n').to_string()
}

pub fn ascii_mask(text: &str) -> BinaryMask {
    let rows: Vec<&str> = text.lines().collect();
    let (w, h) = (rows[0].len() as u32, rows.len() as u32);
    let bits: Vec<bool> = rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect();
    BinaryMask::from_bools(w, h, &bits).unwrap()
}
