//! Static heatmaps drawn from the landscape CSVs.

use std::fmt::Write as _;

use crate::error::{AppError, AppResult};
use crate::export::{StateRow, TrajectoryRow};

const CELL: u32 = 48;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Field {
    Occupancy,
    G,
}

impl Field {
    fn title(self) -> &'static str {
        match self {
            Field::Occupancy => "action-averaged occupancy",
            Field::G => "action-averaged G",
        }
    }
}

fn parse<R: for<'de> serde::Deserialize<'de>>(text: &str) -> AppResult<Vec<R>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<Vec<R>, _>>()
        .map_err(AppError::from)
}

/// Blue (low) to yellow (high).
fn color(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(40.0, 250.0), lerp(40.0, 220.0), lerp(130.0, 40.0))
}

pub fn heatmap(states_csv: &str, trajectory_csv: Option<&str>, field: Field) -> AppResult<String> {
    let states: Vec<StateRow> = parse(states_csv)?;
    if states.is_empty() {
        return Err(AppError::Runtime("landscape CSV has no rows".into()));
    }
    let width = states.iter().map(|r| r.x).max().unwrap_or(0) + 1;
    let height = states.iter().map(|r| r.y).max().unwrap_or(0) + 1;
    let value = |r: &StateRow| match field {
        Field::Occupancy => r.occupancy,
        Field::G => r.g_value,
    };
    let open: Vec<f64> = states.iter().filter(|r| r.kind != "wall").map(value).collect();
    let lo = open.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = open.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };

    let (w, h) = (width * CELL, height * CELL + 24);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<text x="4" y="16" font-family="monospace" font-size="12">{}</text>"#, field.title());
    for r in &states {
        let (x, y) = (r.x * CELL, r.y * CELL + 24);
        let fill = if r.kind == "wall" { "#444444".to_string() } else { color((value(r) - lo) / span) };
        let stroke = match r.kind.as_str() {
            "hazard" => "#d62728",
            "goal" => "#2ca02c",
            _ => "#ffffff",
        };
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="{stroke}" stroke-width="3"/>"#
        );
        let mark = match r.region.as_str() {
            "roa" => "R",
            "invalid" => "X",
            _ => "",
        };
        if !mark.is_empty() {
            let _ = writeln!(
                s,
                r##"<text x="{}" y="{}" font-family="monospace" font-size="14" fill="#ffffff">{mark}</text>"##,
                x + 4,
                y + 16
            );
        }
    }
    if let Some(text) = trajectory_csv {
        let traj: Vec<TrajectoryRow> = parse(text)?;
        let points: Vec<String> = traj
            .iter()
            .map(|p| format!("{},{}", p.x * CELL + CELL / 2, p.y * CELL + 24 + CELL / 2))
            .collect();
        if !points.is_empty() {
            let _ = writeln!(
                s,
                r##"<polyline points="{}" fill="none" stroke="#ffffff" stroke-width="3" stroke-opacity="0.85"/>"##,
                points.join(" ")
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}
