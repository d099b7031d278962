//! Distribution data for plotting: a per-track scatter table, velocity
//! histograms and an optional SVG of box height against depth.

use std::fmt::Write as _;

use anyhow::{Context, Result};
use bbvel::dataset::{self, TrackRecord};
use bbvel::geometry::{back_project, bbox_reference_point, Camera};

use crate::ExportStatsArgs;

pub const SCATTER_HEADER: &str = "id,x_px,y_px,w_px,h_px,x_m,z_m,w_m,h_m,vx,vz";
pub const HIST_HEADER: &str = "component,bin_lo,bin_hi,count";

struct Row {
    id: String,
    x_px: f64,
    y_px: f64,
    w_px: f64,
    h_px: f64,
    x_m: f64,
    z_m: f64,
    w_m: f64,
    h_m: f64,
    velocity: Option<[f64; 2]>,
}

fn row(cam: &Camera, r: &TrackRecord) -> bbvel::Result<Row> {
    let track = r.to_track()?;
    let b = *track.last();
    let ground = back_project(cam, bbox_reference_point(cam, &b)?)?;
    let scale = ground.z / cam.focal();
    Ok(Row {
        id: r.id.clone(),
        x_px: b.x + b.w / 2.0,
        y_px: b.y + b.h,
        w_px: b.w,
        h_px: b.h,
        x_m: ground.x,
        z_m: ground.z,
        w_m: b.w * scale,
        h_m: b.h * scale,
        velocity: r.velocity,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if values.is_empty() {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
        .collect()
}

fn svg(rows: &[Row]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 40.0;
    let z_max = rows.iter().map(|r| r.z_m).fold(1.0, f64::max);
    let h_max = rows.iter().map(|r| r.h_px).fold(1.0, f64::max);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>"#,
        H - M,
        W - M,
        H - M,
        H - M
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12">Z (m), 0 to {z_max:.0}</text>"#,
        W / 2.0 - 40.0,
        H - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="4" y="{}" font-size="12">h (px), 0 to {h_max:.0}</text>"#,
        M - 10.0
    );
    for r in rows {
        let cx = M + r.z_m / z_max * (W - 2.0 * M);
        let cy = H - M - r.h_px / h_max * (H - 2.0 * M);
        let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="1.5" fill="steelblue"/>"#);
    }
    s.push_str("</svg>\n");
    s
}

pub fn cmd_export_stats(a: &ExportStatsArgs) -> Result<()> {
    let cam = a.camera.load()?;
    let records: Vec<TrackRecord> = dataset::read_jsonl(&a.data)?;
    let rows = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            row(&cam, r).map_err(|e| bbvel::Error::Parse {
                context: a.data.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect::<bbvel::Result<Vec<_>>>()?;

    let mut out = String::from(SCATTER_HEADER);
    out.push('\n');
    for r in &rows {
        let (vx, vz) = r
            .velocity
            .map_or((String::new(), String::new()), |v| (v[0].to_string(), v[1].to_string()));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{vx},{vz}",
            csv_field(&r.id),
            r.x_px,
            r.y_px,
            r.w_px,
            r.h_px,
            r.x_m,
            r.z_m,
            r.w_m,
            r.h_m
        );
    }
    std::fs::write(&a.out, out).with_context(|| a.out.display().to_string())?;

    if let Some(p) = &a.hist {
        let mut h = String::from(HIST_HEADER);
        h.push('\n');
        for (name, k) in [("vx", 0), ("vz", 1)] {
            let vals: Vec<f64> = rows.iter().filter_map(|r| r.velocity.map(|v| v[k])).collect();
            for (lo, hi, c) in histogram(&vals, a.bins as usize) {
                let _ = writeln!(h, "{name},{lo},{hi},{c}");
            }
        }
        std::fs::write(p, h).with_context(|| p.display().to_string())?;
    }
    if let Some(p) = &a.svg {
        std::fs::write(p, svg(&rows)).with_context(|| p.display().to_string())?;
    }
    eprintln!("exported {} tracks to {}", rows.len(), a.out.display());
    Ok(())
}
