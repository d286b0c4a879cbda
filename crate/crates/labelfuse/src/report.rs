//! Plain-text renderings of reports.

use std::collections::BTreeMap;
use std::fmt::Write;

use labelfuse_core::bench::BenchmarkReport;
use labelfuse_core::fuse::FusionReport;
use labelfuse_core::metrics::MetricsReport;
use labelfuse_core::model::LabelSpace;

/// Class | GT | Dets | Precision | Recall | F1 | mAP50 | mAP50-95.
pub fn metrics_table(r: &MetricsReport) -> String {
    let width = r.classes.iter().map(|c| c.name.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$} {:>6} {:>6} {:>9} {:>7} {:>7} {:>7} {:>9}",
        "Class", "GT", "Dets", "Precision", "Recall", "F1", "mAP50", "mAP50-95"
    );
    let gt: usize = r.classes.iter().map(|c| c.gt_count).sum();
    let dets: usize = r.classes.iter().map(|c| c.det_count).sum();
    let a = &r.all;
    let _ = writeln!(
        out,
        "{:<width$} {:>6} {:>6} {:>9.3} {:>7.3} {:>7.3} {:>7.3} {:>9.3}",
        "all", gt, dets, a.precision, a.recall, a.f1, a.ap50, a.ap50_95
    );
    for c in &r.classes {
        let _ = write!(
            out,
            "{:<width$} {:>6} {:>6} {:>9.3} {:>7.3} {:>7.3} {:>7.3} {:>9.3}",
            c.name, c.gt_count, c.det_count, c.precision, c.recall, c.f1, c.ap50, c.ap50_95
        );
        out.push_str(if c.has_gt() { "\n" } else { "  (no GT, excluded from all)\n" });
    }
    let _ = writeln!(out, "F1 at score >= {}", r.score_threshold);
    out
}

fn routes_line(name: &str, f: &FusionReport, width: usize) -> String {
    format!(
        "{:<width$} {:>10} {:>8} {:>8} {:>8} {:>9} {:>10}\n",
        name,
        f.detections,
        f.clusters,
        f.routes.accepted,
        f.routes.needs_review,
        f.routes.discarded,
        f.routes.suppressed_by_gt
    )
}

pub fn fusion_text(total: &FusionReport, per_dataset: &BTreeMap<String, FusionReport>, space: &LabelSpace) -> String {
    let width = per_dataset
        .keys()
        .map(String::len)
        .chain(space.categories().iter().map(|c| c.canonical_name.len()))
        .max()
        .unwrap_or(0)
        .max(7);
    let mut out = String::new();
    let header = format!(
        "{:<width$} {:>10} {:>8} {:>8} {:>8} {:>9} {:>10}\n",
        "dataset", "detections", "clusters", "accepted", "review", "discarded", "suppressed"
    );
    out.push_str(&header);
    for (id, r) in per_dataset {
        out.push_str(&routes_line(id, r, width));
    }
    out.push_str(&routes_line("total", total, width));
    let _ = writeln!(out, "out of frame: {}", total.out_of_frame);
    out.push('\n');
    let _ =
        writeln!(out, "{:<width$} {:>8} {:>8} {:>9} {:>10}", "class", "accepted", "review", "discarded", "suppressed");
    for (class, c) in &total.per_class {
        let name = space.name(*class).unwrap_or("?");
        let _ = writeln!(
            out,
            "{:<width$} {:>8} {:>8} {:>9} {:>10}",
            name, c.accepted, c.needs_review, c.discarded, c.suppressed_by_gt
        );
    }
    out
}

pub fn bench_table(r: &BenchmarkReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} classes, {} images, {} boxes in unlabelled cells", r.classes, r.images, r.gap_boxes);
    let _ = writeln!(out, "{:<24} {:>7}", "labels", "mAP50");
    for s in &r.single {
        let v = s.map50.map_or("-".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(out, "{:<24} {:>7}", format!("single {}", s.model_id), v);
    }
    let _ = writeln!(out, "{:<24} {:>7.4}", "fused", r.fused_map50);
    if let Some(v) = r.reviewed_map50 {
        let _ = writeln!(out, "{:<24} {:>7.4}", "fused + oracle review", v);
    }
    let _ = writeln!(
        out,
        "accepted {}, sent to review {}, oracle accepted {}",
        r.accepted, r.needs_review, r.oracle_accepted
    );
    out
}
