//! CSV and JSON writers.
//!
//! Every CSV starts with a `#schema=<name>/<version>` comment line followed
//! by a header row. Floats use Rust's shortest round-trip formatting, so
//! identical runs produce identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context};
use dqbrm_core::adp::{AuxQuantileTable, ValueTable};
use dqbrm_core::trace::TraceRecord;
use dqbrm_core::StateActionSpace;

pub const TRACE_SCHEMA: &str = "dqbrm-trace/1";
pub const TABLES_SCHEMA: &str = "dqbrm-tables/1";
pub const BENCHMARK_SCHEMA: &str = "dqbrm-benchmark/1";
pub const COMPARISON_SCHEMA: &str = "dqbrm-comparison/1";
pub const PAIRS_SCHEMA: &str = "dqbrm-pairs/1";
pub const DENSITY_SCHEMA: &str = "dqbrm-density/1";

pub fn fmt(x: f64) -> String {
    format!("{x}")
}

/// Opens `path` for CSV output, writing the schema line first.
pub fn csv_writer(path: &Path, schema: &str) -> anyhow::Result<csv::Writer<BufWriter<File>>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "#schema={schema}")?;
    Ok(csv::Writer::from_writer(out))
}

pub fn csv_reader(path: &Path) -> anyhow::Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Header of a trace file. `watch` holds `(t, state, action)` labels.
pub fn trace_header(has_reference: bool, watch: &[[usize; 3]], m: usize) -> Vec<String> {
    let mut h = vec!["n".to_string(), "visited_pair".to_string()];
    if has_reference {
        h.push("err_inf".into());
        h.push("err_l2".into());
    }
    for [t, s, a] in watch {
        h.push(format!("q_t{t}_s{s}_a{a}"));
        for i in 0..m {
            h.push(format!("u{i}_t{t}_s{s}_a{a}"));
        }
    }
    h.push("lr_cap_hits".into());
    h
}

pub fn write_trace(
    path: &Path,
    records: &[TraceRecord],
    has_reference: bool,
    watch: &[[usize; 3]],
    m: usize,
) -> anyhow::Result<()> {
    let mut w = csv_writer(path, TRACE_SCHEMA)?;
    w.write_record(trace_header(has_reference, watch, m))?;
    for r in records {
        let mut row = vec![r.n.to_string(), r.visited_pair.to_string()];
        if has_reference {
            row.push(fmt(r.err_inf.unwrap_or(f64::NAN)));
            row.push(fmt(r.err_l2.unwrap_or(f64::NAN)));
        }
        for (q, u) in &r.watched {
            row.push(fmt(*q));
            row.extend(u.iter().map(|x| fmt(*x)));
        }
        row.push(r.lr_cap_hits.to_string());
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn tables_header(m: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "state", "action", "q"].iter().map(|s| s.to_string()).collect();
    h.extend((0..m).map(|i| format!("u{i}")));
    h
}

/// Writes `Q̄_t(s, a)` (and `ū` when given) for `t < T` in internal cost
/// units. The terminal slice is zero and omitted.
pub fn write_tables(
    path: &Path,
    space: &StateActionSpace,
    q: &ValueTable,
    u: Option<&AuxQuantileTable>,
) -> anyhow::Result<()> {
    let m = u.map_or(0, |u| u.m());
    let mut w = csv_writer(path, TABLES_SCHEMA)?;
    w.write_record(tables_header(m))?;
    for t in 0..q.horizon() {
        for (p, &(s, a)) in space.pairs().iter().enumerate() {
            let mut row = vec![t.to_string(), s.to_string(), a.to_string(), fmt(q.get(t, p))];
            if let Some(u) = u {
                row.extend((0..m).map(|i| fmt(u.get(i, t, p))));
            }
            w.write_record(row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the `q` column of a tables file back into a full table.
pub fn read_q_table(path: &Path, space: &StateActionSpace, horizon: usize) -> anyhow::Result<ValueTable> {
    let mut r = csv_reader(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| -> anyhow::Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{}: missing column {name}", path.display()))
    };
    let (ct, cs, ca, cq) = (col("t")?, col("state")?, col("action")?, col("q")?);
    let d = space.len();
    let mut entries = vec![0.0; (horizon + 1) * d];
    let mut seen = vec![false; horizon * d];
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse_idx = |c: usize| -> anyhow::Result<usize> {
            rec[c]
                .parse()
                .with_context(|| format!("{}: row {}: bad index", path.display(), line + 1))
        };
        let (t, s, a) = (parse_idx(ct)?, parse_idx(cs)?, parse_idx(ca)?);
        let q: f64 = rec[cq]
            .parse()
            .with_context(|| format!("{}: row {}: bad q", path.display(), line + 1))?;
        let Some(p) = space.index(s, a).filter(|_| t < horizon) else {
            bail!("{}: row {}: ({t}, {s}, {a}) is not a state-action pair of the model", path.display(), line + 1);
        };
        entries[t * d + p] = q;
        seen[t * d + p] = true;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        let (s, a) = space.pair(k % d);
        bail!("{}: no entry for t={}, state={s}, action={a}", path.display(), k / d);
    }
    Ok(ValueTable::from_entries(horizon, d, entries)?)
}
