//! Long-format panel data: one count series per spatial unit.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate};

use crate::basis::natural_cubic_eval;
use crate::error::{Error, Result};

/// Degrees of freedom of the day-of-year seasonal spline derived from dates.
pub const SEASONAL_DF: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct UnitSeries {
    pub unit_id: String,
    /// `t_index` of the first observation; later ones follow contiguously.
    pub t_start: i64,
    pub y: Vec<f64>,
    pub exposure: Vec<f64>,
    pub population: Vec<f64>,
    /// One vector per covariate, aligned with `y`.
    pub covariates: Vec<Vec<f64>>,
    pub dates: Option<Vec<NaiveDate>>,
}

impl UnitSeries {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PanelData {
    pub units: Vec<UnitSeries>,
    pub covariate_names: Vec<String>,
}

impl PanelData {
    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_rows(&self) -> usize {
        self.units.iter().map(UnitSeries::len).sum()
    }

    pub fn exposure_range(&self) -> Option<(f64, f64)> {
        let mut it = self.units.iter().flat_map(|u| u.exposure.iter().copied());
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x))))
    }

    pub fn has_dates(&self) -> bool {
        self.units.iter().all(|u| u.dates.is_some()) && !self.units.is_empty()
    }

    /// Short human-readable description used in logs.
    pub fn summary(&self) -> String {
        let lens: Vec<usize> = self.units.iter().map(UnitSeries::len).collect();
        let (lo, hi) = self.exposure_range().unwrap_or((f64::NAN, f64::NAN));
        format!(
            "{} units, series lengths {}..{}, exposure range [{lo}, {hi}]",
            self.n_units(),
            lens.iter().min().unwrap_or(&0),
            lens.iter().max().unwrap_or(&0)
        )
    }
}

const REQUIRED: [&str; 4] = ["unit_id", "t_index", "y", "exposure"];
const POPULATION: &str = "offset_population";
const DATE: &str = "date";

pub fn ingest_panel(path: impl AsRef<Path>) -> Result<PanelData> {
    let file = std::fs::File::open(path)?;
    ingest_panel_reader(file)
}

/// Parses a panel CSV. Row numbers in errors count data rows from 1.
pub fn ingest_panel_reader<R: Read>(reader: R) -> Result<PanelData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(REQUIRED) {
        *slot = col(name).ok_or_else(|| Error::Data {
            row: 0,
            message: format!("missing column '{name}'"),
        })?;
    }
    let [c_unit, c_t, c_y, c_x] = idx;
    let c_pop = col(POPULATION);
    let c_date = col(DATE);
    let cov_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !REQUIRED.contains(h) && *h != POPULATION && *h != DATE)
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    let mut units: Vec<UnitSeries> = Vec::new();
    let mut seen_units: HashSet<String> = HashSet::new();
    let mut last_t = 0i64;

    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let num = |c: usize, what: &str| -> Result<f64> {
            field(c).parse::<f64>().map_err(|_| Error::Data {
                row,
                message: format!("cannot parse {what} '{}'", field(c)),
            })
        };

        let unit = field(c_unit).to_string();
        if unit.is_empty() {
            return Err(Error::Data { row, message: "empty unit_id".into() });
        }
        let t: i64 = field(c_t).parse().map_err(|_| Error::Data {
            row,
            message: format!("cannot parse t_index '{}'", field(c_t)),
        })?;
        let y = num(c_y, "count")?;
        if y < 0.0 {
            return Err(Error::Data { row, message: format!("negative count at row {row}") });
        }
        if !y.is_finite() || y.fract() != 0.0 {
            return Err(Error::Data { row, message: format!("count {y} is not a nonnegative integer") });
        }
        let x = num(c_x, "exposure")?;
        if !x.is_finite() {
            return Err(Error::Data { row, message: format!("NaN exposure at row {row}") });
        }
        let pop = match c_pop {
            Some(c) => num(c, "population")?,
            None => 1.0,
        };
        if !(pop > 0.0) || !pop.is_finite() {
            return Err(Error::Data { row, message: format!("population must be positive, got {pop}") });
        }
        let date = match c_date {
            Some(c) => Some(NaiveDate::parse_from_str(field(c), "%Y-%m-%d").map_err(|_| Error::Data {
                row,
                message: format!("cannot parse date '{}' (expected YYYY-MM-DD)", field(c)),
            })?),
            None => None,
        };
        let mut covs = Vec::with_capacity(cov_cols.len());
        for (c, name) in &cov_cols {
            let v = num(*c, name)?;
            if !v.is_finite() {
                return Err(Error::Data { row, message: format!("non-finite covariate '{name}'") });
            }
            covs.push(v);
        }

        let same_unit = units.last().is_some_and(|u| u.unit_id == unit);
        if same_unit {
            if t == last_t {
                return Err(Error::Data {
                    row,
                    message: format!("duplicate row for unit {unit} at t_index {t}"),
                });
            }
            if t != last_t + 1 {
                return Err(Error::Data {
                    row,
                    message: format!("non-contiguous t_index for unit {unit}: {last_t} followed by {t}"),
                });
            }
        } else {
            if !seen_units.insert(unit.clone()) {
                return Err(Error::Data {
                    row,
                    message: format!("rows for unit {unit} are not grouped together (sort by unit_id, t_index)"),
                });
            }
            units.push(UnitSeries {
                unit_id: unit,
                t_start: t,
                y: Vec::new(),
                exposure: Vec::new(),
                population: Vec::new(),
                covariates: vec![Vec::new(); cov_cols.len()],
                dates: c_date.map(|_| Vec::new()),
            });
        }
        last_t = t;
        let u = units.last_mut().expect("unit pushed above");
        u.y.push(y);
        u.exposure.push(x);
        u.population.push(pop);
        for (dst, v) in u.covariates.iter_mut().zip(covs) {
            dst.push(v);
        }
        if let (Some(ds), Some(d)) = (u.dates.as_mut(), date) {
            ds.push(d);
        }
    }

    if units.is_empty() {
        return Err(Error::Data { row: 0, message: "panel has no rows".into() });
    }
    let mut panel = PanelData {
        units,
        covariate_names: cov_cols.into_iter().map(|(_, n)| n).collect(),
    };
    if c_date.is_some() {
        add_calendar_covariates(&mut panel)?;
    }
    Ok(panel)
}

/// Appends day-of-week indicators (Monday is the reference), a natural
/// cubic spline of day of year and, with several years, year indicators
/// interacting with that spline.
pub fn add_calendar_covariates(panel: &mut PanelData) -> Result<()> {
    let dates: Vec<NaiveDate> = panel
        .units
        .iter()
        .flat_map(|u| u.dates.iter().flatten().copied())
        .collect();
    if dates.len() != panel.n_rows() {
        return Err(Error::Invalid("every unit needs dates to derive calendar covariates".into()));
    }

    for d in 1..7 {
        panel.covariate_names.push(format!("dow_{d}"));
        for u in &mut panel.units {
            let col = u.dates.as_ref().unwrap().iter()
                .map(|x| f64::from(x.weekday().num_days_from_monday() == d))
                .collect();
            u.covariates.push(col);
        }
    }

    let doy: Vec<f64> = dates.iter().map(|d| d.ordinal() as f64).collect();
    let (lo, hi) = doy.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if lo == hi {
        return Ok(());
    }
    let ns = natural_cubic_eval(&doy, SEASONAL_DF, (lo, hi))?;
    let mut years: Vec<i32> = dates.iter().map(|d| d.year()).collect();
    years.sort_unstable();
    years.dedup();

    let mut offset = 0;
    let n_units = panel.units.len();
    let mut spline_cols: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); SEASONAL_DF]; n_units];
    for (ui, u) in panel.units.iter().enumerate() {
        for r in 0..u.len() {
            for c in 0..SEASONAL_DF {
                spline_cols[ui][c].push(ns.values[(offset + r, c)]);
            }
        }
        offset += u.len();
    }
    for c in 0..SEASONAL_DF {
        panel.covariate_names.push(format!("season_{}", c + 1));
    }
    for (u, cols) in panel.units.iter_mut().zip(&spline_cols) {
        u.covariates.extend(cols.iter().cloned());
    }

    for &year in years.iter().skip(1) {
        panel.covariate_names.push(format!("year_{year}"));
        for c in 0..SEASONAL_DF {
            panel.covariate_names.push(format!("season_{}_x_year_{year}", c + 1));
        }
        for (u, cols) in panel.units.iter_mut().zip(&spline_cols) {
            let ind: Vec<f64> = u.dates.as_ref().unwrap().iter()
                .map(|d| f64::from(d.year() == year))
                .collect();
            for col in cols {
                u.covariates.push(ind.iter().zip(col).map(|(a, b)| a * b).collect());
            }
            u.covariates.insert(u.covariates.len() - SEASONAL_DF, ind);
        }
    }
    Ok(())
}

/// Writes a panel in the ingest schema. Derived calendar covariates are not
/// written when dates are present, since ingest regenerates them.
pub fn write_panel_csv<W: Write>(panel: &PanelData, writer: W) -> Result<()> {
    let with_dates = panel.has_dates();
    let n_raw = if with_dates {
        panel
            .covariate_names
            .iter()
            .position(|n| n == "dow_1")
            .unwrap_or(panel.covariate_names.len())
    } else {
        panel.covariate_names.len()
    };
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = REQUIRED.iter().map(|s| s.to_string()).collect();
    header.push(POPULATION.into());
    if with_dates {
        header.push(DATE.into());
    }
    header.extend(panel.covariate_names[..n_raw].iter().cloned());
    w.write_record(&header)?;
    for u in &panel.units {
        for r in 0..u.len() {
            let mut rec = vec![
                u.unit_id.clone(),
                (u.t_start + r as i64).to_string(),
                format!("{}", u.y[r]),
                format!("{}", u.exposure[r]),
                format!("{}", u.population[r]),
            ];
            if with_dates {
                rec.push(u.dates.as_ref().unwrap()[r].format("%Y-%m-%d").to_string());
            }
            rec.extend(u.covariates[..n_raw].iter().map(|c| format!("{}", c[r])));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
