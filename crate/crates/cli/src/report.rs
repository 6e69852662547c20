//! GeoJSON map export and the static HTML report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use clep_core::severity::Level;
use clep_core::{CountyId, Horizon};
use geojson::{Feature, FeatureCollection, GeoJson, JsonObject, JsonValue, Value};

use crate::artifacts::{ForecastDoc, SeverityDoc};
use crate::diag::{CliError, EXIT_NO_GEOMETRY, EXIT_SCHEMA};

/// County geometry keyed by FIPS. Features carry the code in a `fips` or
/// `GEOID` property, as a string or number.
pub fn load_geometry(path: &Path) -> Result<BTreeMap<CountyId, geojson::Geometry>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::new(EXIT_NO_GEOMETRY, "GeometryMissing", format!("{}: {e}", path.display())))?;
    let gj: GeoJson =
        text.parse().map_err(|e| CliError::new(EXIT_SCHEMA, "GeometryInvalid", format!("{}: {e}", path.display())))?;
    let GeoJson::FeatureCollection(fc) = gj else {
        return Err(CliError::new(EXIT_SCHEMA, "GeometryInvalid", "geometry file is not a FeatureCollection"));
    };
    let mut out = BTreeMap::new();
    for f in fc.features {
        let code = f.property("fips").or_else(|| f.property("GEOID")).and_then(|v| match v {
            JsonValue::String(s) => Some(s.clone()),
            JsonValue::Number(n) => n.as_u64().map(|n| format!("{n:05}")),
            _ => None,
        });
        if let (Some(code), Some(g)) = (code, f.geometry) {
            if let Ok(c) = CountyId::new(&code) {
                out.insert(c, g);
            }
        }
    }
    Ok(out)
}

/// Horizon shown on the map: 5 days when available, else the shortest.
pub fn map_horizon(doc: &ForecastDoc) -> Option<Horizon> {
    doc.horizons.iter().copied().find(|h| h.days() == 5).or_else(|| doc.horizons.iter().copied().min())
}

/// One feature per county that has both a forecast and geometry. Returns
/// the collection and the counties skipped for lack of geometry.
pub fn build_map(
    doc: &ForecastDoc,
    horizon: Horizon,
    levels: Option<&BTreeMap<CountyId, Level>>,
    geometry: &BTreeMap<CountyId, geojson::Geometry>,
) -> (FeatureCollection, Vec<CountyId>) {
    let mut features = Vec::new();
    let mut skipped = Vec::new();
    for row in doc.rows.iter().filter(|r| r.horizon == horizon) {
        let Some(g) = geometry.get(&row.fips) else {
            skipped.push(row.fips.clone());
            continue;
        };
        let mut props = JsonObject::new();
        props.insert("fips".into(), row.fips.as_str().into());
        props.insert("clep".into(), row.clep.into());
        props.insert("lower".into(), row.lower.into());
        props.insert("upper".into(), row.upper.into());
        let level = levels.and_then(|l| l.get(&row.fips)).map(|l| JsonValue::from(l.as_str()));
        props.insert("level".into(), level.unwrap_or(JsonValue::Null));
        features.push(Feature {
            bbox: None,
            geometry: Some(g.clone()),
            id: None,
            properties: Some(props),
            foreign_members: None,
        });
    }
    (FeatureCollection { bbox: None, features, foreign_members: None }, skipped)
}

fn rings(v: &Value) -> Vec<&Vec<Vec<f64>>> {
    match v {
        Value::Polygon(p) => p.first().into_iter().collect(),
        Value::MultiPolygon(mp) => mp.iter().filter_map(|p| p.first()).collect(),
        Value::GeometryCollection(gs) => gs.iter().flat_map(|g| rings(&g.value)).collect(),
        _ => Vec::new(),
    }
}

fn points(v: &Value) -> Vec<&Vec<f64>> {
    match v {
        Value::Point(p) => vec![p],
        Value::MultiPoint(ps) => ps.iter().collect(),
        Value::GeometryCollection(gs) => gs.iter().flat_map(|g| points(&g.value)).collect(),
        _ => Vec::new(),
    }
}

fn level_color(level: Option<&str>) -> &'static str {
    match level {
        Some("low") => "#7fbf7b",
        Some("medium") => "#f1a340",
        Some("high") => "#d7301f",
        _ => "#cccccc",
    }
}

/// Equirectangular SVG of the map features, coloured by severity level.
fn svg_map(map: &FeatureCollection) -> String {
    let all: Vec<&Vec<f64>> = map
        .features
        .iter()
        .filter_map(|f| f.geometry.as_ref())
        .flat_map(|g| rings(&g.value).into_iter().flatten().chain(points(&g.value)))
        .collect();
    if all.is_empty() {
        return "<p>No geometry to draw.</p>".into();
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &all {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let kx = ((y0 + y1) / 2.0).to_radians().cos().max(0.1);
    let (w, pad) = (720.0, 10.0);
    let span_x = ((x1 - x0) * kx).max(1e-9);
    let scale = (w - 2.0 * pad) / span_x;
    let h = ((y1 - y0) * scale + 2.0 * pad).max(2.0 * pad + 1.0);
    let px = |p: &Vec<f64>| ((p[0] - x0) * kx * scale + pad, (y1 - p[1]) * scale + pad);

    let mut s = String::new();
    let _ =
        write!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w} {h:.1}" width="{w}" height="{h:.0}">"#);
    for f in &map.features {
        let Some(g) = &f.geometry else { continue };
        let fips = f.property("fips").and_then(JsonValue::as_str).unwrap_or("");
        let level = f.property("level").and_then(JsonValue::as_str);
        let clep = f.property("clep").and_then(JsonValue::as_f64).unwrap_or(0.0);
        let title = format!("{fips}: {clep:.1} ({})", level.unwrap_or("n/a"));
        let fill = level_color(level);
        let mut d = String::new();
        for ring in rings(&g.value) {
            for (i, p) in ring.iter().enumerate() {
                let (x, y) = px(p);
                let _ = write!(d, "{}{x:.1},{y:.1}", if i == 0 { "M" } else { "L" });
            }
            d.push('Z');
        }
        if !d.is_empty() {
            let _ = write!(
                s,
                r##"<path d="{d}" fill="{fill}" stroke="#555" stroke-width="0.5"><title>{title}</title></path>"##
            );
        }
        for p in points(&g.value) {
            let (x, y) = px(p);
            let _ = write!(
                s,
                r##"<circle cx="{x:.1}" cy="{y:.1}" r="4" fill="{fill}" stroke="#555"><title>{title}</title></circle>"##
            );
        }
    }
    s.push_str("</svg>");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Self-contained report: inline SVG map, weight and interval summaries,
/// severity counts and the map data embedded as JSON.
pub fn render_html(
    doc: &ForecastDoc,
    map: &FeatureCollection,
    horizon: Horizon,
    severity: Option<&SeverityDoc>,
) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "<!DOCTYPE html>\n<html lang=\"en\"><head><meta charset=\"utf-8\"><title>County forecasts as of {}</title>\n\
         <style>body{{font-family:sans-serif;margin:2em;color:#222}}table{{border-collapse:collapse;margin:1em 0}}\
         td,th{{border:1px solid #bbb;padding:3px 8px;text-align:right}}th{{background:#eee}}\
         .key span{{display:inline-block;width:1em;height:1em;margin:0 4px 0 12px;vertical-align:middle}}</style></head><body>\n",
        doc.as_of
    );
    let _ = writeln!(
        s,
        "<h1>County death forecasts</h1><p>As of {}, {} counties, horizons {}.</p>",
        doc.as_of,
        doc.rows.iter().filter(|r| r.horizon == horizon).count(),
        doc.horizons.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(", ")
    );

    let _ = writeln!(s, "<h2>Severity map ({horizon}-day forecast)</h2>{}", svg_map(map));
    s.push_str("<p class=\"key\">");
    for l in ["low", "medium", "high"] {
        let _ = write!(s, "<span style=\"background:{}\"></span>{l}", level_color(Some(l)));
    }
    let _ = writeln!(s, "<span style=\"background:{}\"></span>no hospitals</p>", level_color(None));

    s.push_str("<h2>Ensemble weights and intervals</h2><table><tr><th>horizon</th>");
    let tags: Vec<String> = doc.rows.first().map(|r| r.weights.keys().cloned().collect()).unwrap_or_default();
    for t in &tags {
        let _ = write!(s, "<th>mean weight {t}</th>");
    }
    s.push_str("<th>mean relative half-width</th><th>provisional</th></tr>\n");
    for &h in &doc.horizons {
        let rows: Vec<_> = doc.rows.iter().filter(|r| r.horizon == h).collect();
        let n = rows.len().max(1) as f64;
        let _ = write!(s, "<tr><td>{h}</td>");
        for t in &tags {
            let m: f64 = rows.iter().map(|r| r.weights[t]).sum::<f64>() / n;
            let _ = write!(s, "<td>{m:.3}</td>");
        }
        let width: f64 = rows.iter().map(|r| r.delta).sum::<f64>() / n;
        let prov = rows.iter().filter(|r| r.provisional).count();
        let _ = writeln!(s, "<td>{width:.3}</td><td>{prov}</td></tr>");
    }
    s.push_str("</table>\n");

    if let Some(sev) = severity {
        let mut counts = BTreeMap::new();
        for r in &sev.hospitals {
            *counts.entry(r.level).or_insert(0usize) += 1;
        }
        s.push_str("<h2>Hospital severity</h2><table><tr><th>level</th><th>hospitals</th></tr>");
        for l in [Level::Low, Level::Medium, Level::High] {
            let _ = write!(s, "<tr><td>{}</td><td>{}</td></tr>", l.as_str(), counts.get(&l).unwrap_or(&0));
        }
        s.push_str("</table>\n");
    }

    let mut top: Vec<_> = doc.rows.iter().filter(|r| r.horizon == horizon).collect();
    top.sort_by(|a, b| b.clep.total_cmp(&a.clep).then(a.fips.cmp(&b.fips)));
    s.push_str("<h2>Highest forecasts</h2><table><tr><th>fips</th><th>last observed</th><th>forecast</th><th>lower</th><th>upper</th></tr>\n");
    for r in top.iter().take(15) {
        let _ = writeln!(
            s,
            "<tr><td>{}</td><td>{}</td><td>{:.1}</td><td>{:.1}</td><td>{:.1}</td></tr>",
            escape(r.fips.as_str()),
            r.last_obs,
            r.clep,
            r.lower,
            r.upper
        );
    }
    s.push_str("</table>\n");

    let data = GeoJson::FeatureCollection(map.clone()).to_string().replace("</", "<\\/");
    let _ = writeln!(s, "<script type=\"application/json\" id=\"map-data\">{data}</script>\n</body></html>");
    s
}
