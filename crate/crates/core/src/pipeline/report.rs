//! Sweep tables and plot series.

use std::fs;
use std::path::Path;

use crate::dp::NoiseFamily;
use crate::error::{Error, Result};

use super::ExperimentMetrics;

pub const METRICS_FILE: &str = "metrics.csv";

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            line: 0,
            message: format!("{}: {other:?}", path.display()),
        },
    }
}

/// One header row plus one row per point; `timestamp` is the last column.
pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[ExperimentMetrics]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<ExperimentMetrics>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<ExperimentMetrics>, _>>()
        .map_err(|e| csv_err(path, e))?;
    if rows.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    Ok(rows)
}

/// The CSV text with its last column removed, for run-to-run comparison.
pub fn strip_timestamp(csv_text: &str) -> Result<String> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(csv_text.as_bytes());
    let mut w = csv::Writer::from_writer(Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let keep = rec.len().saturating_sub(1);
        w.write_record(rec.iter().take(keep))
            .map_err(|e| Error::Pipeline(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Pipeline(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |x| x.to_string())
}

/// Successful rows of one family, ordered by variance.
fn series(rows: &[ExperimentMetrics], family: NoiseFamily) -> Vec<&ExperimentMetrics> {
    let mut s: Vec<_> = rows.iter().filter(|r| r.is_ok() && r.family == family).collect();
    s.sort_by(|a, b| {
        a.variance
            .unwrap_or(f64::INFINITY)
            .total_cmp(&b.variance.unwrap_or(f64::INFINITY))
            .then_with(|| a.point.cmp(&b.point))
    });
    s
}

/// Accuracy-vs-noise and AUC-vs-noise series: `series_<family>.csv` per
/// family, a gnuplot data file `series.dat` (one indexed block per family)
/// and a script `plot.gp` rendering both panels to `sweep.png`.
pub fn write_plot_data(dir: impl AsRef<Path>, rows: &[ExperimentMetrics]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut dat = String::new();
    let families = [NoiseFamily::Gaussian, NoiseFamily::Laplace];
    for (block, family) in families.iter().enumerate() {
        let s = series(rows, *family);
        let mut csv = String::from("variance,epsilon,ic_accuracy,mia_auc\n");
        if block > 0 {
            dat.push_str("\n\n");
        }
        dat.push_str(&format!("# {family}: variance epsilon ic_accuracy mia_auc\n"));
        for r in s {
            let fields = [r.variance, r.epsilon, r.ic_accuracy, r.mia_auc].map(fmt_opt);
            csv.push_str(&fields.join(","));
            csv.push('\n');
            dat.push_str(&fields.join(" "));
            dat.push('\n');
        }
        let p = dir.join(format!("series_{family}.csv"));
        fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
    }
    let p = dir.join("series.dat");
    fs::write(&p, dat).map_err(|e| Error::io(&p, e))?;
    let script = "\
set terminal pngcairo size 1000,400
set output 'sweep.png'
set datafile missing 'nan'
set multiplot layout 1,2
set xlabel 'noise variance'
set key bottom left
set ylabel 'intent accuracy'
plot 'series.dat' index 0 using 1:3 with linespoints title 'gaussian', \\
     'series.dat' index 1 using 1:3 with linespoints title 'laplace'
set ylabel 'attack AUC'
plot 'series.dat' index 0 using 1:4 with linespoints title 'gaussian', \\
     'series.dat' index 1 using 1:4 with linespoints title 'laplace'
unset multiplot
";
    let p = dir.join("plot.gp");
    fs::write(&p, script).map_err(|e| Error::io(&p, e))
}
