//! File formats: TUM trajectories, the comparison CSV, elevation profiles and SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::eval::{ComparisonReport, ProfilePoint};
use crate::geometry::Pose3;
use crate::lanes::OdometrySample;

pub const COMPARISON_HEADER: [&str; 11] = [
    "scenario",
    "variant",
    "seed",
    "delta_z_m",
    "delta_xy_m",
    "rmse_z_m",
    "rmse_xyz_m",
    "iterations",
    "final_cost",
    "wall_time_s",
    "diverged",
];

/// C-style `%.9g`.
pub fn format_g9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exponent) = sci.split_once('e').expect("scientific format");
    let exponent: i32 = exponent.parse().expect("integer exponent");
    if !(-4..9).contains(&exponent) {
        let m = trim_zeros(mantissa);
        let sign = if exponent < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exponent.abs())
    } else {
        let decimals = (8 - exponent).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Serializes a trajectory as `timestamp tx ty tz qx qy qz qw` lines.
pub fn format_tum(samples: &[OdometrySample], comments: &[&str]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("# timestamp tx ty tz qx qy qz qw\n");
    for s in samples {
        let t = s.pose.translation();
        let [qw, qx, qy, qz] = s.pose.quaternion_wxyz();
        let fields = [s.t, t.x, t.y, t.z, qx, qy, qz, qw].map(format_g9);
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_tum(path: &Path, samples: &[OdometrySample], comments: &[&str]) -> Result<()> {
    fs::write(path, format_tum(samples, comments))?;
    Ok(())
}

pub fn parse_tum(text: &str) -> Result<Vec<OdometrySample>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        if fields.len() != 8 {
            return Err(Error::Parse(format!(
                "line {}: expected 8 fields, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        let pose = Pose3::from_parts(
            fields[7],
            fields[4],
            fields[5],
            fields[6],
            Vector3::new(fields[1], fields[2], fields[3]),
        );
        out.push(OdometrySample::new(fields[0], pose));
    }
    Ok(out)
}

pub fn read_tum(path: &Path) -> Result<Vec<OdometrySample>> {
    parse_tum(&fs::read_to_string(path)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// One parsed row of `comparison.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub scenario: String,
    pub variant: String,
    /// Seed number, or `mean` / `std` on aggregate rows.
    pub seed: String,
    pub delta_z_m: Option<f64>,
    pub delta_xy_m: Option<f64>,
    pub rmse_z_m: Option<f64>,
    pub rmse_xyz_m: Option<f64>,
    pub iterations: Option<f64>,
    pub final_cost: Option<f64>,
    pub wall_time_s: Option<f64>,
    pub diverged: bool,
}

impl ComparisonRow {
    fn fields(&self) -> Vec<String> {
        vec![
            self.scenario.clone(),
            self.variant.clone(),
            self.seed.clone(),
            opt(self.delta_z_m),
            opt(self.delta_xy_m),
            opt(self.rmse_z_m),
            opt(self.rmse_xyz_m),
            opt(self.iterations),
            opt(self.final_cost),
            opt(self.wall_time_s),
            self.diverged.to_string(),
        ]
    }
}

/// Data rows then `mean`/`std` rows per report. Wall time is written as 0 when
/// `timing` is off so that repeated runs give identical bytes.
pub fn comparison_rows(reports: &[ComparisonReport], timing: bool) -> Vec<ComparisonRow> {
    let mut rows = Vec::new();
    for report in reports {
        for cell in &report.cells {
            let converged = !cell.loop_closure.diverged;
            rows.push(ComparisonRow {
                scenario: cell.scenario.clone(),
                variant: cell.variant.to_string(),
                seed: cell.seed.to_string(),
                delta_z_m: cell.loop_closure.delta_z,
                delta_xy_m: cell.loop_closure.delta_xy,
                rmse_z_m: cell.error.as_ref().filter(|_| converged).map(|e| e.rmse_z),
                rmse_xyz_m: cell.error.as_ref().filter(|_| converged).map(|e| e.rmse_xyz),
                iterations: cell.stats.as_ref().map(|s| s.iterations as f64),
                final_cost: cell.stats.as_ref().map(|s| s.final_cost),
                wall_time_s: cell
                    .stats
                    .as_ref()
                    .map(|s| if timing { s.wall_time.as_secs_f64() } else { 0.0 }),
                diverged: cell.loop_closure.diverged,
            });
        }
        for agg in &report.aggregates {
            for (label, m) in [("mean", &agg.mean), ("std", &agg.std)] {
                let some = |x: f64| (agg.count > 0).then_some(x);
                rows.push(ComparisonRow {
                    scenario: agg.scenario.clone(),
                    variant: agg.variant.to_string(),
                    seed: label.to_string(),
                    delta_z_m: some(m.delta_z),
                    delta_xy_m: some(m.delta_xy),
                    rmse_z_m: some(m.rmse_z),
                    rmse_xyz_m: some(m.rmse_xyz),
                    iterations: some(m.iterations),
                    final_cost: some(m.final_cost),
                    wall_time_s: some(if timing { m.wall_time_s } else { 0.0 }),
                    diverged: agg.count == 0,
                });
            }
        }
    }
    rows
}

pub fn format_comparison_csv(rows: &[ComparisonRow]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::Parse(e.to_string());
    writer.write_record(COMPARISON_HEADER).map_err(to_err)?;
    for row in rows {
        writer.write_record(row.fields()).map_err(to_err)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

pub fn parse_comparison_csv(text: &str) -> Result<Vec<ComparisonRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    if header.iter().ne(COMPARISON_HEADER.iter().copied()) {
        return Err(Error::Parse(format!("unexpected header {header:?}")));
    }
    let num = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse::<f64>()
                .map(Some)
                .map_err(|e| Error::Parse(format!("`{s}`: {e}")))
        }
    };
    let mut rows = Vec::new();
    for record in reader.records() {
        let r = record.map_err(|e| Error::Parse(e.to_string()))?;
        rows.push(ComparisonRow {
            scenario: r[0].to_string(),
            variant: r[1].to_string(),
            seed: r[2].to_string(),
            delta_z_m: num(&r[3])?,
            delta_xy_m: num(&r[4])?,
            rmse_z_m: num(&r[5])?,
            rmse_xyz_m: num(&r[6])?,
            iterations: num(&r[7])?,
            final_cost: num(&r[8])?,
            wall_time_s: num(&r[9])?,
            diverged: r[10]
                .parse()
                .map_err(|e| Error::Parse(format!("diverged `{}`: {e}", &r[10])))?,
        });
    }
    Ok(rows)
}

pub fn format_profile_csv(profile: &[ProfilePoint]) -> String {
    let mut out = String::from("index,t,z_est,z_true,z_error\n");
    for p in profile {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.index,
            p.t,
            p.z_est,
            p.z_true,
            p.z_est - p.z_true
        );
    }
    out
}

/// Two-curve line chart of estimated and true elevation against keyframe index.
pub fn profile_svg(title: &str, profile: &[ProfilePoint]) -> String {
    const W: f64 = 800.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    let n = profile.len().max(2) as f64 - 1.0;
    let (mut lo, mut hi) = profile
        .iter()
        .flat_map(|p| [p.z_est, p.z_true])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), z| (a.min(z), b.max(z)));
    if !(hi > lo) {
        lo -= 1.0;
        hi += 1.0;
    }
    let px = |i: usize| M + (W - 2.0 * M) * i as f64 / n;
    let py = |z: f64| H - M - (H - 2.0 * M) * (z - lo) / (hi - lo);
    let line = |get: &dyn Fn(&ProfilePoint) -> f64| {
        profile
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.index), py(get(p))))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{M}" y="25" font-family="sans-serif" font-size="14">{}</text>"#,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{M}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{M}" y1="{M}" x2="{M}" y2="{b}" stroke="black"/>"#,
        b = H - M,
        r = W - M
    );
    for (z, label) in [(lo, lo), (hi, hi)] {
        let _ = writeln!(
            svg,
            r#"<text x="5" y="{:.2}" font-family="sans-serif" font-size="11">{:.2} m</text>"#,
            py(z) + 4.0,
            label
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">keyframe</text>"#,
        W / 2.0,
        H - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="gray" stroke-width="1.5" points="{}"/>"#,
        line(&|p| p.z_true)
    );
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="crimson" stroke-width="1.5" points="{}"/>"#,
        line(&|p| p.z_est)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="40" font-family="sans-serif" font-size="11" fill="gray">true z</text><text x="{:.2}" y="55" font-family="sans-serif" font-size="11" fill="crimson">estimated z</text>"#,
        W - M - 80.0,
        W - M - 80.0
    );
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(contents)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g9_matches_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (123456789.0, "123456789"),
            (1234567891.0, "1.23456789e+09"),
            (0.0001, "0.0001"),
            (0.00001, "1e-05"),
            (1.0 / 3.0, "0.333333333"),
            (699.999999999, "700"),
            (35.00000000001, "35"),
        ];
        for (x, want) in cases {
            assert_eq!(format_g9(x), want, "{x}");
        }
    }

    #[test]
    fn tum_round_trip_within_nine_digits() {
        let pose = Pose3::from_parts(0.9, 0.1, -0.2, 0.3, Vector3::new(12.5, -3.25, 0.125));
        let samples = vec![OdometrySample::new(0.0, Pose3::identity()), OdometrySample::new(2.0, pose)];
        let text = format_tum(&samples, &["test"]);
        assert!(text.starts_with("# test\n# timestamp"));
        let back = parse_tum(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert!(back[1].pose.max_abs_diff(&pose) < 1e-8);
        assert_eq!(text.lines().nth(2), Some("0 0 0 0 0 0 0 1"));
    }

    #[test]
    fn tum_rejects_short_lines() {
        assert!(matches!(parse_tum("1 2 3\n"), Err(Error::Parse(_))));
    }
}
