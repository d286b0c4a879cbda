//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

/// Integer box `(x, y, w, h)` on a unit grid.
pub type GridBox = (i64, i64, i64, i64);

/// IoU by counting covered unit cells.
pub fn raster_iou(a: GridBox, b: GridBox) -> f64 {
    let (x0, y0) = (a.0.min(b.0), a.1.min(b.1));
    let (x1, y1) = ((a.0 + a.2).max(b.0 + b.2), (a.1 + a.3).max(b.1 + b.3));
    let inside = |r: GridBox, x: i64, y: i64| x >= r.0 && x < r.0 + r.2 && y >= r.1 && y < r.1 + r.3;
    let (mut both, mut either) = (0u64, 0u64);
    for y in y0..y1 {
        for x in x0..x1 {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            both += u64::from(ia && ib);
            either += u64::from(ia || ib);
        }
    }
    if either == 0 {
        0.0
    } else {
        both as f64 / either as f64
    }
}

/// Exact IoU of integer boxes.
fn grid_iou(a: GridBox, b: GridBox) -> f64 {
    let iw = (a.0 + a.2).min(b.0 + b.2) - a.0.max(b.0);
    let ih = (a.1 + a.3).min(b.1 + b.3) - a.1.max(b.1);
    if iw <= 0 || ih <= 0 {
        return 0.0;
    }
    let inter = iw * ih;
    (inter as f64) / ((a.2 * a.3 + b.2 * b.3 - inter) as f64)
}

#[derive(Debug, Clone)]
pub struct OracleGt {
    pub image: usize,
    pub class: usize,
    pub bbox: GridBox,
}

#[derive(Debug, Clone)]
pub struct OracleDet {
    pub image: usize,
    pub class: usize,
    pub bbox: GridBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OracleRow {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap50: f64,
    pub ap50_95: f64,
}

/// Per-class rows (`None` for classes without GT) and the mean row.
pub fn brute_force_eval(
    n_classes: usize,
    gt: &[OracleGt],
    dets: &[OracleDet],
    score_thr: f64,
) -> (Vec<Option<OracleRow>>, OracleRow) {
    let mut rows = Vec::new();
    for c in 0..n_classes {
        let g: Vec<&OracleGt> = gt.iter().filter(|g| g.class == c).collect();
        if g.is_empty() {
            rows.push(None);
            continue;
        }
        // score descending, then image, then input position
        let mut d: Vec<(usize, &OracleDet)> = dets.iter().enumerate().filter(|(_, d)| d.class == c).collect();
        d.sort_by(|a, b| {
            b.1.score.partial_cmp(&a.1.score).unwrap().then(a.1.image.cmp(&b.1.image)).then(a.0.cmp(&b.0))
        });
        let mut aps = Vec::new();
        let mut pr_at_50 = (0.0, 0.0);
        for k in 0..10 {
            let thr = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95][k];
            let mut used = vec![false; g.len()];
            let mut flags = Vec::new();
            for (_, det) in &d {
                let mut best: Option<(usize, f64)> = None;
                for (gi, gt) in g.iter().enumerate() {
                    if used[gi] || gt.image != det.image {
                        continue;
                    }
                    let v = grid_iou(det.bbox, gt.bbox);
                    if v >= thr && best.is_none_or(|(_, b)| v > b) {
                        best = Some((gi, v));
                    }
                }
                if let Some((gi, _)) = best {
                    used[gi] = true;
                }
                flags.push((det.score, best.is_some()));
            }
            let mut tp = 0usize;
            let mut curve = Vec::new();
            for (i, (_, hit)) in flags.iter().enumerate() {
                tp += usize::from(*hit);
                curve.push((tp as f64 / g.len() as f64, tp as f64 / (i + 1) as f64));
            }
            let mut sum = 0.0;
            for r in 0..=100 {
                let level = r as f64 / 100.0;
                sum += curve.iter().filter(|(rec, _)| *rec >= level).map(|(_, p)| *p).fold(0.0, f64::max);
            }
            aps.push(sum / 101.0);
            if k == 0 {
                let kept: Vec<bool> = flags.iter().filter(|(s, _)| *s >= score_thr).map(|(_, h)| *h).collect();
                let hits = kept.iter().filter(|h| **h).count() as f64;
                let p = if kept.is_empty() { 0.0 } else { hits / kept.len() as f64 };
                pr_at_50 = (p, hits / g.len() as f64);
            }
        }
        let (p, r) = pr_at_50;
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        rows.push(Some(OracleRow {
            precision: p,
            recall: r,
            f1,
            ap50: aps[0],
            ap50_95: aps.iter().sum::<f64>() / 10.0,
        }));
    }
    let present: Vec<OracleRow> = rows.iter().flatten().copied().collect();
    let n = present.len().max(1) as f64;
    let mean = |f: fn(&OracleRow) -> f64| present.iter().map(f).sum::<f64>() / n;
    let all = OracleRow {
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        f1: mean(|r| r.f1),
        ap50: mean(|r| r.ap50),
        ap50_95: mean(|r| r.ap50_95),
    };
    (rows, all)
}

pub fn copy_dir(from: &Path, to: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(to)?;
    for entry in std::fs::read_dir(from)? {
        let entry = entry?;
        let target = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_dir(&entry.path(), &target)?;
        } else {
            std::fs::copy(entry.path(), target)?;
        }
    }
    Ok(())
}

pub fn fixture_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny")
}
