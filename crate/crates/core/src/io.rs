//! CSV and JSON file formats.
//!
//! | file        | columns / fields                          |
//! |-------------|-------------------------------------------|
//! | counts      | `signal,idler,count[,seconds]`            |
//! | background  | `wavelength_nm,flux_density`              |
//! | CAR data    | `singles_hz,car[,car_err]`                |
//! | key grid    | `mu,eta,S,E,R`                            |
//! | state       | `{dim, re, im, basis[, diagnostics]}`     |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::car::{CarFit, CarPoint};
use crate::error::{Error, Result};
use crate::keyrate::KeyRateGrid;
use crate::quantum::{DensityMatrix, DensityMatrixJson, Label, StateVector4};
use crate::tomography::{CoincidenceDataset, CountRecord, MeasurementSetting, ReconstructionResult};

/// Integration time assumed when the counts file has no `seconds` column.
pub const DEFAULT_ACQUISITION_SECONDS: f64 = 1.0;

struct Table {
    columns: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.column(name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column `{name}` (header: {})", self.columns.join(",")),
        })
    }
}

fn read_table<R: Read>(reader: R, what: &str) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let columns: Vec<String> = rdr
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    if columns.iter().all(|c| c.is_empty()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("empty {what} file"),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: format!("{what} file has a header but no data rows"),
        });
    }
    Ok(Table { columns, rows })
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, line: u64, name: &str) -> Result<&'a str> {
    match rec.get(idx) {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(Error::Parse {
            line,
            message: format!("missing value for `{name}`"),
        }),
    }
}

fn parse_f64(rec: &csv::StringRecord, idx: usize, line: u64, name: &str) -> Result<f64> {
    let s = field(rec, idx, line, name)?;
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            line,
            message: format!("`{name}` is not a finite number: `{s}`"),
        }),
    }
}

fn optional_f64(rec: &csv::StringRecord, idx: Option<usize>, line: u64, name: &str) -> Result<Option<f64>> {
    match idx {
        Some(i) if rec.get(i).is_some_and(|s| !s.is_empty()) => parse_f64(rec, i, line, name).map(Some),
        _ => Ok(None),
    }
}

/// Reads a counts table and checks that it covers all 36 settings once.
pub fn read_counts<R: Read>(reader: R) -> Result<CoincidenceDataset> {
    let table = read_table(reader, "counts")?;
    let (si, ii, ci) = (table.require("signal")?, table.require("idler")?, table.require("count")?);
    let ti = table.column("seconds");
    let mut records = Vec::with_capacity(table.rows.len());
    for (line, rec) in &table.rows {
        let line = *line;
        let label = |idx: usize, name: &str| -> Result<Label> {
            field(rec, idx, line, name)?.parse().map_err(|e: Error| Error::Parse {
                line,
                message: e.to_string(),
            })
        };
        let setting = MeasurementSetting::new(label(si, "signal")?, label(ii, "idler")?);
        let raw = field(rec, ci, line, "count")?;
        let count = raw.parse::<u64>().map_err(|_| Error::Parse {
            line,
            message: format!("`count` must be a non-negative integer, got `{raw}`"),
        })?;
        let seconds = optional_f64(rec, ti, line, "seconds")?;
        if let Some(s) = seconds {
            if !(s > 0.0) {
                return Err(Error::Parse {
                    line,
                    message: format!("`seconds` must be positive, got {s}"),
                });
            }
        }
        records.push(CountRecord { setting, count, seconds });
    }
    let dataset = CoincidenceDataset::new(records, DEFAULT_ACQUISITION_SECONDS)?;
    dataset.check_complete()?;
    Ok(dataset)
}

pub fn write_counts<W: Write>(writer: W, dataset: &CoincidenceDataset) -> Result<()> {
    let timed = dataset.records().iter().any(|r| r.seconds.is_some());
    let mut w = BufWriter::new(writer);
    if timed {
        writeln!(w, "signal,idler,count,seconds")?;
    } else {
        writeln!(w, "signal,idler,count")?;
    }
    for r in dataset.records() {
        write!(w, "{},{},{}", r.setting.signal, r.setting.idler, r.count)?;
        if timed {
            let s = r.seconds.unwrap_or(dataset.acquisition_seconds());
            write!(w, ",{s}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BackgroundRow {
    pub wavelength_nm: f64,
    /// Photons / (s m^2 sr nm).
    pub flux_density: f64,
}

pub fn read_background<R: Read>(reader: R) -> Result<Vec<BackgroundRow>> {
    let table = read_table(reader, "background")?;
    let (wi, fi) = (table.require("wavelength_nm")?, table.require("flux_density")?);
    table
        .rows
        .iter()
        .map(|(line, rec)| {
            let row = BackgroundRow {
                wavelength_nm: parse_f64(rec, wi, *line, "wavelength_nm")?,
                flux_density: parse_f64(rec, fi, *line, "flux_density")?,
            };
            if !(row.wavelength_nm > 0.0) || row.flux_density < 0.0 {
                return Err(Error::Parse {
                    line: *line,
                    message: "wavelength must be positive and flux non-negative".into(),
                });
            }
            Ok(row)
        })
        .collect()
}

pub fn read_car_points<R: Read>(reader: R) -> Result<Vec<CarPoint>> {
    let table = read_table(reader, "CAR")?;
    let (si, ci) = (table.require("singles_hz")?, table.require("car")?);
    let ei = table.column("car_err");
    table
        .rows
        .iter()
        .map(|(line, rec)| {
            let pt = CarPoint {
                singles_avg_hz: parse_f64(rec, si, *line, "singles_hz")?,
                car: parse_f64(rec, ci, *line, "car")?,
                car_err: optional_f64(rec, ei, *line, "car_err")?,
            };
            if pt.car < 1.0 {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("car = {} violates car >= 1", pt.car),
                });
            }
            Ok(pt)
        })
        .collect()
}

pub fn write_car_points<W: Write>(writer: W, points: &[CarPoint]) -> Result<()> {
    let with_err = points.iter().any(|p| p.car_err.is_some());
    let mut w = BufWriter::new(writer);
    writeln!(w, "{}", if with_err { "singles_hz,car,car_err" } else { "singles_hz,car" })?;
    for p in points {
        write!(w, "{},{}", p.singles_avg_hz, p.car)?;
        if with_err {
            write!(w, ",{}", p.car_err.unwrap_or(0.0))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per grid point, `mu` outer and `eta` inner; `R` is the raw rate in bits/pair.
pub fn write_grid<W: Write>(writer: W, grid: &KeyRateGrid) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "mu,eta,S,E,R")?;
    for (i, mu) in grid.mu_axis.iter().enumerate() {
        for (j, eta) in grid.eta_axis.iter().enumerate() {
            writeln!(
                w,
                "{mu},{eta},{},{},{}",
                grid.s_values[i][j], grid.e_values[i][j], grid.rates[i][j]
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominantState {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub fidelity_with_rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub neg_log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub estimated_total_flux: f64,
    pub fidelity_psi_minus: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dominant_state: Option<DominantState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateFile {
    #[serde(flatten)]
    pub rho: DensityMatrixJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
}

impl StateFile {
    pub fn from_reconstruction(res: &ReconstructionResult) -> Self {
        let dominant_state = crate::quantum::dominant_eigenstate(&res.rho).ok().map(|d| DominantState {
            re: d.state.amplitudes().iter().map(|a| a.re).collect(),
            im: d.state.amplitudes().iter().map(|a| a.im).collect(),
            fidelity_with_rho: d.fidelity_with_rho,
        });
        Self {
            rho: res.rho.to_json(),
            diagnostics: Some(Diagnostics {
                neg_log_likelihood: res.neg_log_likelihood,
                iterations: res.iterations,
                converged: res.converged,
                estimated_total_flux: res.estimated_total_flux,
                fidelity_psi_minus: crate::quantum::fidelity_pure(&res.rho, &StateVector4::singlet()),
                dominant_state,
            }),
        }
    }
}

/// Parses a state file and validates physicality; extra fields are ignored.
pub fn read_density_matrix<R: Read>(reader: R) -> Result<DensityMatrix> {
    let file: StateFile = serde_json::from_reader(reader)?;
    file.rho.to_density_matrix()
}

pub fn write_json<W: Write, T: Serialize + ?Sized>(writer: W, value: &T) -> Result<()> {
    let mut w = BufWriter::new(writer);
    crate::json::to_writer(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CarFitReport {
    pub eta: f64,
    pub eta_err: f64,
    pub mu: Vec<f64>,
    pub residuals: Vec<f64>,
    pub eta1: f64,
    pub eta2: f64,
    pub chi2: f64,
}

impl From<&CarFit> for CarFitReport {
    fn from(fit: &CarFit) -> Self {
        Self {
            eta: fit.eta(),
            eta_err: 0.5 * fit.eta() * (fit.eta1_err / fit.eta1 + fit.eta2_err / fit.eta2),
            mu: fit.mu.clone(),
            residuals: fit.residuals.clone(),
            eta1: fit.eta1,
            eta2: fit.eta2,
            chi2: fit.chi2,
        }
    }
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

pub fn create(path: &Path) -> Result<File> {
    Ok(File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tomography::noiseless_dataset;

    fn singlet_csv() -> String {
        let ds = noiseless_dataset(&DensityMatrix::singlet(), 1000.0, &MeasurementSetting::all(), 0.0).unwrap();
        let mut buf = Vec::new();
        write_counts(&mut buf, &ds).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn counts_round_trip() {
        let text = singlet_csv();
        assert_eq!(text.lines().count(), 37);
        let ds = read_counts(text.as_bytes()).unwrap();
        assert_eq!(ds.records().len(), 36);
        assert_eq!(ds.count(MeasurementSetting::new(Label::H, Label::V)), Some(500));
    }

    #[test]
    fn missing_row_is_named() {
        let text: String = singlet_csv().lines().filter(|l| !l.starts_with("L,R")).map(|l| format!("{l}\n")).collect();
        let err = read_counts(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("(L,R)"), "{err}");
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let mut text = singlet_csv();
        text = text.replacen("H,H,0", "H,Q,0", 1);
        match read_counts(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert!(line >= 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_counts("".as_bytes()), Err(Error::Parse { .. })));
        assert!(read_counts("signal,idler,count\nH,H,-3\n".as_bytes()).is_err());
    }

    #[test]
    fn car_rows_below_one_are_rejected() {
        let text = "singles_hz,car\n1000,5\n2000,0.5\n3000,2\n";
        let err = read_car_points(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("car >= 1"));
        let ok = read_car_points("singles_hz,car,car_err\n1000,5,0.1\n".as_bytes()).unwrap();
        assert_eq!(ok[0].car_err, Some(0.1));
    }

    #[test]
    fn state_file_ignores_diagnostics() {
        let res = ReconstructionResult {
            rho: DensityMatrix::singlet(),
            neg_log_likelihood: 1.0,
            iterations: 3,
            converged: true,
            estimated_total_flux: 10.0,
        };
        let mut buf = Vec::new();
        write_json(&mut buf, &StateFile::from_reconstruction(&res)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\"diagnostics\""));
        let rho = read_density_matrix(text.as_bytes()).unwrap();
        assert!((rho.matrix() - DensityMatrix::singlet().matrix()).norm() < 1e-15);
    }

    #[test]
    fn background_table() {
        let rows = read_background("wavelength_nm,flux_density\n1550,3e17\n2100,1e17\n".as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].flux_density, 1e17);
    }
}
