//! Artifact writers. All outputs are UTF-8 and byte-deterministic: floats use
//! shortest round-trip formatting and nothing records paths or clock time.

use std::io;
use std::path::Path;

use serde::Serialize;
use tempfile::NamedTempFile;
use viewcast::boosted_trees::FeatureGain;
use viewcast::forecast_protocols::ForecastSeries;
use viewcast::shap_explain::ShapSummary;
use viewcast::similarity::NeighborList;

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = NamedTempFile::new_in(dir)?;
    io::Write::write_all(&mut tmp, bytes)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("report serializes");
    out.push(b'\n');
    out
}

pub fn forecast_csv(series: &ForecastSeries) -> Vec<u8> {
    csv_bytes(
        &["show_id", "protocol", "season", "episode", "air_date", "predicted", "actual"],
        series.points.iter().map(|p| {
            vec![
                series.show_id.clone(),
                series.protocol.to_string(),
                p.key.season.to_string(),
                p.key.episode.to_string(),
                p.air_date.to_string(),
                p.predicted.to_string(),
                p.actual.to_string(),
            ]
        }),
    )
}

/// One metrics row per series; an undefined R² is left empty.
pub fn metrics_csv<'a>(series: impl IntoIterator<Item = &'a ForecastSeries>) -> Vec<u8> {
    csv_bytes(
        &["show_id", "protocol", "rmse", "r2", "n"],
        series.into_iter().map(|s| {
            vec![
                s.show_id.clone(),
                s.protocol.to_string(),
                s.metrics.rmse.to_string(),
                s.metrics.r2.map(|r| r.to_string()).unwrap_or_default(),
                s.metrics.n.to_string(),
            ]
        }),
    )
}

/// Gain ranking with a log10 column for log-scale plots; zero gain leaves it empty.
pub fn importance_csv(gains: &[FeatureGain]) -> Vec<u8> {
    csv_bytes(
        &["rank", "feature", "gain", "log10_gain"],
        gains.iter().enumerate().map(|(i, g)| {
            vec![
                (i + 1).to_string(),
                g.feature.clone(),
                g.gain.to_string(),
                if g.gain > 0.0 { g.gain.log10().to_string() } else { String::new() },
            ]
        }),
    )
}

pub fn shap_summary_csv(summary: &ShapSummary) -> Vec<u8> {
    csv_bytes(
        &["feature", "mean_abs_shap", "rank"],
        summary
            .features
            .iter()
            .enumerate()
            .map(|(i, f)| vec![f.feature.clone(), f.mean_abs.to_string(), (i + 1).to_string()]),
    )
}

/// Long form, one line per (row, feature), features in model column order.
pub fn shap_values_csv(summary: &ShapSummary) -> Vec<u8> {
    let mut by_column: Vec<_> = summary.features.iter().collect();
    by_column.sort_by_key(|f| f.column);
    let n_rows = summary.attributions.len();
    csv_bytes(
        &["row_id", "feature", "feature_value", "shap_value"],
        (0..n_rows).flat_map(|r| {
            by_column.iter().map(move |f| {
                let (value, phi) = f.points[r];
                vec![r.to_string(), f.feature.clone(), value.to_string(), phi.to_string()]
            })
        }),
    )
}

pub fn neighbors_csv(list: &NeighborList) -> Vec<u8> {
    csv_bytes(
        &["query_show", "rank", "neighbor_show", "distance"],
        list.neighbors.iter().enumerate().map(|(i, n)| {
            vec![
                list.query.clone(),
                (i + 1).to_string(),
                n.show_id.clone(),
                n.distance.to_string(),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn importance_log_column() {
        let gains = vec![
            FeatureGain { feature: "prev_viewership".into(), column: 0, gain: 100.0 },
            FeatureGain { feature: "act1_Joy".into(), column: 1, gain: 0.0 },
        ];
        let text = String::from_utf8(importance_csv(&gains)).unwrap();
        assert_eq!(text, "rank,feature,gain,log10_gain\n1,prev_viewership,100,2\n2,act1_Joy,0,\n");
    }
}
