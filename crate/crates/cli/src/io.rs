//! CSV/TSV/JSON input and output.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use icens_core::sample::Record;
use icens_core::{CensoredSample, Delta};
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Core(#[from] icens_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use icens_core::Error as E;
        match self {
            CliError::Core(E::Singular(_) | E::Degenerate { .. } | E::ZeroMass) => 2,
            _ => 1,
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Rounds to 12 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// Number formatting for delimited files.
pub fn fmt_num(x: f64) -> String {
    format!("{}", round_sig(x))
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if let Some(x) = n.as_f64().filter(|_| n.is_f64()) {
                if let Some(r) = serde_json::Number::from_f64(round_sig(x)) {
                    *n = r;
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Serializes with every float rounded to 12 significant digits; writes to
/// stdout when `path` is `None`.
pub fn write_json<S: Serialize>(value: &S, path: Option<&Path>) -> CliResult<()> {
    let mut v = serde_json::to_value(value).map_err(|e| CliError::Input(e.to_string()))?;
    round_value(&mut v);
    let text = serde_json::to_string_pretty(&v).map_err(|e| CliError::Input(e.to_string()))? + "\n";
    write_text(path, &text)
}

/// Writes `text` to `path`, or to stdout when `path` is `None`.
pub fn write_text(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => {
            let mut w = File::create(p).map(BufWriter::new).map_err(|e| CliError::io(p, e))?;
            w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| CliError::io(p, e))
        }
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

/// Writes a header line and rows with the given delimiter.
pub fn write_table(
    path: Option<&Path>,
    delimiter: char,
    header: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> CliResult<()> {
    let sep = delimiter.to_string();
    let mut out = header.join(&sep);
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(&sep));
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn write_sample(path: Option<&Path>, sample: &CensoredSample<f64>) -> CliResult<()> {
    let rows = sample
        .records()
        .iter()
        .map(|r| vec![fmt_num(r.t), fmt_num(r.u), r.delta.code().to_string()]);
    write_table(path, ',', &["t", "u", "delta"], rows)
}

fn open(path: &Path) -> CliResult<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn parse_field(path: &Path, line: u64, name: &str, raw: Option<&str>) -> CliResult<f64> {
    let raw = raw.ok_or_else(|| CliError::Input(format!("{}:{line}: missing field `{name}`", path.display())))?;
    raw.parse()
        .map_err(|_| CliError::Input(format!("{}:{line}: cannot parse `{name}` = {raw:?}", path.display())))
}

fn header_index(path: &Path, headers: &csv::StringRecord, name: &str) -> CliResult<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Input(format!("{}: header has no `{name}` column", path.display())))
}

/// Reads a `t,u,delta` file. Without `epsilon` the smallest observed
/// `u - t` is used as separation gap.
pub fn read_sample(path: &Path, upper: f64, epsilon: Option<f64>) -> CliResult<CensoredSample<f64>> {
    let mut rdr = open(path)?;
    let headers = rdr.headers().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?.clone();
    let (it, iu, id) = (
        header_index(path, &headers, "t")?,
        header_index(path, &headers, "u")?,
        header_index(path, &headers, "delta")?,
    );
    let mut recs = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let line = row.position().map_or(0, |p| p.line());
        let t = parse_field(path, line, "t", row.get(it))?;
        let u = parse_field(path, line, "u", row.get(iu))?;
        let code = parse_field(path, line, "delta", row.get(id))?;
        let delta = Some(code)
            .filter(|c| c.fract() == 0.0)
            .and_then(|c| Delta::from_code(c as u8))
            .ok_or_else(|| CliError::Input(format!("{}:{line}: delta must be 1, 2 or 3", path.display())))?;
        recs.push(Record::new(t, u, delta));
    }
    if recs.is_empty() {
        return Err(CliError::Input(format!("{}: no observations", path.display())));
    }
    let sample = match epsilon {
        Some(eps) => CensoredSample::new(recs, upper, eps),
        None => CensoredSample::with_observed_gap(recs, upper),
    };
    sample.map_err(|e| match e {
        // records are 0-based, the header is line 1
        icens_core::Error::InvalidRecord { index, reason } => {
            CliError::Input(format!("{}:{}: {reason}", path.display(), index + 2))
        }
        other => other.into(),
    })
}
