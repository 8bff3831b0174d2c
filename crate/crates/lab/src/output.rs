//! CSV and JSON emission. Floats in CSV use 17 significant digits, the
//! `%.17g` convention, so every double round-trips.

use serde::Serialize;

use issl_core::objectives::TraceRow;

/// `%.17g`: fixed notation for exponents in `[-5, 17)`, scientific otherwise,
/// trailing zeros trimmed.
pub fn g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa.to_string()), exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// An empty cell for `None`.
pub fn opt(x: Option<f64>) -> String {
    x.map(g17).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for line in std::iter::once(&self.header).chain(&self.rows) {
            let cells: Vec<String> = line.iter().map(|c| escape(c)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

fn escape(cell: &str) -> String {
    if cell.contains([',', '"', '\n']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

/// Monitor rows with leading key columns, e.g. the grid cell they belong to.
pub fn trace_table<'a, S: AsRef<str>>(keys: &[S], rows: impl IntoIterator<Item = (Vec<String>, &'a TraceRow)>) -> Table {
    let header: Vec<&str> = keys.iter().map(AsRef::as_ref).chain(TraceRow::COLUMNS).collect();
    let mut t = Table::new(&header);
    for (mut cells, row) in rows {
        cells.push(row.step.to_string());
        cells.extend(row.values().into_iter().map(opt));
        t.push(cells);
    }
    t
}

/// Pretty JSON with a trailing newline.
pub fn json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("lab outputs serialize");
    s.push('\n');
    s
}

/// One file a scenario produces, before it is named and written.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    /// Appended to `<scenario>_<run id>`; empty for the main output.
    pub suffix: &'static str,
    pub extension: &'static str,
    pub contents: String,
}

impl Artifact {
    pub fn csv(suffix: &'static str, table: &Table) -> Self {
        Self {
            suffix,
            extension: "csv",
            contents: table.to_csv(),
        }
    }

    pub fn json<T: Serialize + ?Sized>(suffix: &'static str, value: &T) -> Self {
        Self {
            suffix,
            extension: "json",
            contents: json(value),
        }
    }

    pub fn file_name(&self, scenario: &str, run_id: &str) -> String {
        if self.suffix.is_empty() {
            format!("{scenario}_{run_id}.{}", self.extension)
        } else {
            format!("{scenario}_{run_id}_{}.{}", self.suffix, self.extension)
        }
    }
}
