//! On-disk formats: trajectory, dataset, model, training history, report and
//! figure CSVs. Every number is written in its shortest round-trip form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use bdc_estim::bfgs::TrainHistory;
use bdc_estim::cfnn::{Activation, Topology};
use bdc_estim::dataset::{ColumnRange, Dataset};
use bdc_estim::estimator::{Check, Estimates, EvalReport, Model, OutputMetrics};
use bdc_estim::rad_s_to_rpm;
use bdc_estim::simulate::Trajectory;

use crate::config::fmt_num;
use crate::error::CliError;

pub const MODEL_MAGIC: &str = "bdc-estim model v1";
pub const HISTORY_COLUMNS: [&str; 6] = ["iteration", "loss", "grad_norm", "alpha", "curvature", "updated_flag"];
pub const REPORT_COLUMNS: [&str; 7] = [
    "quantity",
    "unit",
    "rmse",
    "max_abs_error",
    "steady_state_error",
    "percent_of_final",
    "final_value",
];
pub const FIGURE_COLUMNS: [&str; 4] = ["time", "simulated", "estimated", "error"];
pub const ERROR_FIGURE_COLUMNS: [&str; 7] = [
    "time",
    "speed_error_rpm",
    "temperature_error",
    "resistance_error",
    "speed_error_percent",
    "temperature_error_percent",
    "resistance_error_percent",
];

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn csv_text(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// Splits leading `#` lines from the CSV body.
fn split_comments(text: &str) -> (Vec<&str>, &str) {
    let mut comments = Vec::new();
    let mut rest = text;
    while let Some(line) = rest.strip_prefix('#') {
        let (head, tail) = line.split_once('\n').unwrap_or((line, ""));
        comments.push(head.trim());
        rest = tail;
    }
    (comments, rest)
}

/// Parses a CSV body with the exact `header`, returning rows of numbers.
fn parse_numeric_csv(path: &Path, body: &str, header: &[String]) -> Result<Vec<Vec<f64>>, CliError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let found = reader.headers().map_err(|e| CliError::format(path, e.to_string()))?;
    if found.iter().ne(header.iter().map(String::as_str)) {
        return Err(CliError::format(
            path,
            format!(
                "header must be `{}`, found `{}`",
                header.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::format(path, e.to_string()))?;
        let row = record
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| CliError::format(path, format!("data row {}: not a number", idx + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let cols = traj.columns();
    csv_text(
        &Trajectory::COLUMNS,
        (0..traj.len()).map(|k| cols.iter().map(|c| fmt_num(c[k])).collect()),
    )
}

pub fn parse_trajectory(path: &Path, text: &str) -> Result<Trajectory, CliError> {
    let header: Vec<String> = Trajectory::COLUMNS.iter().map(|s| s.to_string()).collect();
    let rows = parse_numeric_csv(path, text, &header)?;
    let dt = if rows.len() > 1 { rows[1][0] - rows[0][0] } else { 0.0 };
    let mut t = Trajectory::with_capacity(dt, rows.len());
    for r in rows {
        t.time.push(r[0]);
        t.v_a.push(r[1]);
        t.t_l.push(r[2]);
        t.i_a.push(r[3]);
        t.omega.push(r[4]);
        t.theta.push(r[5]);
        t.r_a.push(r[6]);
    }
    Ok(t)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, CliError> {
    parse_trajectory(path, &read_text(path)?)
}

/// Normalized training matrix, preceded by the tap layout and the per-column
/// scaling as `#` lines.
pub fn dataset_csv(ds: &Dataset) -> String {
    let names = ds.column_names();
    let mut out = String::from("# values normalized to [-1, 1]\n");
    let _ = writeln!(out, "# delay_taps = {}", ds.delay_taps);
    let _ = writeln!(out, "# tap_stride = {}", ds.tap_stride);
    for (name, r) in names.iter().zip(ds.input_ranges.iter().chain(&ds.target_ranges)) {
        let _ = writeln!(out, "# range {name} = {}, {}", fmt_num(r.min), fmt_num(r.max));
    }
    let header: Vec<&str> = names.iter().map(String::as_str).collect();
    out.push_str(&csv_text(
        &header,
        (0..ds.len()).map(|row| {
            ds.input(row)
                .iter()
                .chain(ds.target(row))
                .map(|&x| fmt_num(x))
                .collect()
        }),
    ));
    out
}

fn comment_value<'a>(path: &Path, comments: &[&'a str], key: &str) -> Result<&'a str, CliError> {
    comments
        .iter()
        .find_map(|c| {
            c.split_once('=')
                .filter(|(k, _)| k.trim() == key)
                .map(|(_, v)| v.trim())
        })
        .ok_or_else(|| CliError::format(path, format!("missing `# {key} = ...` line")))
}

fn parse_range(path: &Path, s: &str) -> Result<ColumnRange, CliError> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| CliError::format(path, format!("bad range `{s}`")))?;
    let parse = |x: &str| {
        x.trim()
            .parse::<f64>()
            .map_err(|_| CliError::format(path, format!("bad range `{s}`")))
    };
    Ok(ColumnRange {
        min: parse(a)?,
        max: parse(b)?,
    })
}

fn parse_count(path: &Path, s: &str, what: &str) -> Result<usize, CliError> {
    s.parse()
        .map_err(|_| CliError::format(path, format!("{what}: `{s}` is not a count")))
}

pub fn parse_dataset(path: &Path, text: &str) -> Result<Dataset, CliError> {
    let (comments, body) = split_comments(text);
    let delay_taps = parse_count(path, comment_value(path, &comments, "delay_taps")?, "delay_taps")?;
    let tap_stride = parse_count(path, comment_value(path, &comments, "tap_stride")?, "tap_stride")?;
    let names = bdc_estim::dataset::input_column_names(delay_taps)
        .into_iter()
        .chain(["omega", "theta", "r_a"].map(String::from))
        .collect::<Vec<_>>();
    let ranges = names
        .iter()
        .map(|n| parse_range(path, comment_value(path, &comments, &format!("range {n}"))?))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = parse_numeric_csv(path, body, &names)?;
    let n_inputs = names.len() - 3;
    let mut inputs = Vec::with_capacity(rows.len() * n_inputs);
    let mut targets = Vec::with_capacity(rows.len() * 3);
    for r in &rows {
        inputs.extend_from_slice(&r[..n_inputs]);
        targets.extend_from_slice(&r[n_inputs..]);
    }
    let mut ds =
        Dataset::from_normalized(inputs, targets, n_inputs, 3).map_err(|e| CliError::format(path, e.to_string()))?;
    ds.input_ranges = ranges[..n_inputs].to_vec();
    ds.target_ranges = ranges[n_inputs..].to_vec();
    ds.delay_taps = delay_taps;
    ds.tap_stride = tap_stride;
    Ok(ds)
}

pub fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    parse_dataset(path, &read_text(path)?)
}

pub fn model_text(model: &Model) -> String {
    let t = &model.topology;
    let join = |v: Vec<String>| v.join(" ");
    let mut out = format!("{MODEL_MAGIC}\n");
    let _ = writeln!(
        out,
        "layers = {}",
        join(t.layer_sizes().iter().map(|s| s.to_string()).collect())
    );
    let _ = writeln!(
        out,
        "activations = {}",
        join(t.activations().iter().map(|a| a.name().to_owned()).collect())
    );
    let pairs = t.cascade_pairs();
    let cascade = if pairs.is_empty() {
        "none".to_owned()
    } else {
        join(pairs.iter().map(|(s, d)| format!("{s}-{d}")).collect())
    };
    let _ = writeln!(out, "cascade = {cascade}");
    let _ = writeln!(out, "delay_taps = {}", model.delay_taps);
    let _ = writeln!(out, "tap_stride = {}", model.tap_stride);
    for r in &model.input_ranges {
        let _ = writeln!(out, "input_range = {} {}", fmt_num(r.min), fmt_num(r.max));
    }
    for r in &model.target_ranges {
        let _ = writeln!(out, "target_range = {} {}", fmt_num(r.min), fmt_num(r.max));
    }
    let _ = writeln!(out, "param_count = {}", model.params.len());
    out.push_str("params\n");
    for p in &model.params {
        out.push_str(&fmt_num(*p));
        out.push('\n');
    }
    out
}

pub fn parse_model(path: &Path, text: &str) -> Result<Model, CliError> {
    let bad = |line: usize, msg: &str| CliError::format(path, format!("line {line}: {msg}"));
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, MODEL_MAGIC)) => {}
        _ => return Err(CliError::format(path, format!("first line must be `{MODEL_MAGIC}`"))),
    }
    let mut layers = None;
    let mut activations = None;
    let mut cascade: Option<Vec<(usize, usize)>> = None;
    let mut delay_taps = None;
    let mut tap_stride = None;
    let mut input_ranges = Vec::new();
    let mut target_ranges = Vec::new();
    let mut param_count = None;
    let mut header_done = false;
    for (line, content) in lines.by_ref() {
        if content.is_empty() {
            continue;
        }
        if content == "params" {
            header_done = true;
            break;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| bad(line, "expected `key = value`"))?;
        let value = value.trim();
        let nums = |v: &str| -> Result<Vec<f64>, CliError> {
            v.split_whitespace()
                .map(|x| x.parse::<f64>().map_err(|_| bad(line, "not a number")))
                .collect()
        };
        let counts = |v: &str| -> Result<Vec<usize>, CliError> {
            v.split_whitespace()
                .map(|x| x.parse::<usize>().map_err(|_| bad(line, "not a count")))
                .collect()
        };
        let range = |v: &str| -> Result<ColumnRange, CliError> {
            match nums(v)?[..] {
                [min, max] => Ok(ColumnRange { min, max }),
                _ => Err(bad(line, "range needs `min max`")),
            }
        };
        match key.trim() {
            "layers" => layers = Some(counts(value)?),
            "activations" => {
                activations = Some(
                    value
                        .split_whitespace()
                        .map(|a| Activation::from_name(a).ok_or_else(|| bad(line, "unknown activation")))
                        .collect::<Result<Vec<_>, _>>()?,
                )
            }
            "cascade" if value == "none" => cascade = Some(Vec::new()),
            "cascade" => {
                cascade = Some(
                    value
                        .split_whitespace()
                        .map(|p| {
                            let (s, d) = p
                                .split_once('-')
                                .ok_or_else(|| bad(line, "cascade pair must be `src-dst`"))?;
                            Ok((
                                s.parse().map_err(|_| bad(line, "bad cascade pair"))?,
                                d.parse().map_err(|_| bad(line, "bad cascade pair"))?,
                            ))
                        })
                        .collect::<Result<Vec<_>, CliError>>()?,
                )
            }
            "delay_taps" => delay_taps = Some(counts(value)?.first().copied().ok_or_else(|| bad(line, "empty"))?),
            "tap_stride" => tap_stride = Some(counts(value)?.first().copied().ok_or_else(|| bad(line, "empty"))?),
            "input_range" => input_ranges.push(range(value)?),
            "target_range" => target_ranges.push(range(value)?),
            "param_count" => param_count = Some(counts(value)?.first().copied().ok_or_else(|| bad(line, "empty"))?),
            other => return Err(bad(line, &format!("unknown key `{other}`"))),
        }
    }
    if !header_done {
        return Err(CliError::format(path, "missing `params` line"));
    }
    let missing = |what: &str| CliError::format(path, format!("missing `{what}`"));
    let layers = layers.ok_or_else(|| missing("layers"))?;
    let activations = activations.ok_or_else(|| missing("activations"))?;
    let cascade = cascade.ok_or_else(|| missing("cascade"))?;
    let param_count = param_count.ok_or_else(|| missing("param_count"))?;
    let topology = Topology::new(layers, activations, |s, d| cascade.contains(&(s, d)))
        .map_err(|e| CliError::format(path, e.to_string()))?;
    if topology.cascade_pairs() != cascade {
        return Err(CliError::format(path, "cascade pairs do not fit the layer sizes"));
    }
    if topology.param_count() != param_count {
        return Err(CliError::format(
            path,
            format!(
                "param_count {param_count} does not match topology ({})",
                topology.param_count()
            ),
        ));
    }
    let mut params = Vec::with_capacity(param_count);
    for (line, content) in lines {
        if content.is_empty() {
            continue;
        }
        params.push(content.parse::<f64>().map_err(|_| bad(line, "not a number"))?);
    }
    if params.len() != param_count {
        return Err(CliError::format(
            path,
            format!("expected {param_count} parameters, found {}", params.len()),
        ));
    }
    let model = Model {
        topology,
        params,
        input_ranges,
        target_ranges,
        delay_taps: delay_taps.ok_or_else(|| missing("delay_taps"))?,
        tap_stride: tap_stride.ok_or_else(|| missing("tap_stride"))?,
    };
    model.check().map_err(|e| CliError::format(path, e.to_string()))?;
    Ok(model)
}

pub fn read_model(path: &Path) -> Result<Model, CliError> {
    parse_model(path, &read_text(path)?)
}

/// Iteration 0 is the starting point. A `# warning` line flags a run that hit
/// the iteration cap.
pub fn history_csv(h: &TrainHistory) -> String {
    let mut out = String::new();
    let stop = h.stop.map_or("none", |s| s.name());
    let _ = writeln!(out, "# stop = {stop}");
    if h.warning() {
        out.push_str("# warning = max_iterations reached before convergence\n");
    }
    let first = vec![
        "0".to_owned(),
        fmt_num(h.initial_loss),
        fmt_num(h.initial_grad_norm),
        "0.0".to_owned(),
        "0.0".to_owned(),
        "0".to_owned(),
    ];
    out.push_str(&csv_text(
        &HISTORY_COLUMNS,
        std::iter::once(first).chain(h.records.iter().map(|r| {
            vec![
                r.iteration.to_string(),
                fmt_num(r.loss),
                fmt_num(r.grad_norm),
                fmt_num(r.alpha),
                fmt_num(r.curvature),
                u8::from(r.updated).to_string(),
            ]
        })),
    ));
    out
}

fn metrics_row(name: &str, unit: &str, m: &OutputMetrics) -> Vec<String> {
    vec![
        name.to_owned(),
        unit.to_owned(),
        fmt_num(m.rmse),
        fmt_num(m.max_abs_error),
        fmt_num(m.steady_state_error),
        m.percent_of_final.map(fmt_num).unwrap_or_default(),
        fmt_num(m.final_value),
    ]
}

pub fn report_csv(r: &EvalReport) -> String {
    let rows = vec![
        metrics_row("speed", "rad/s", &r.speed),
        metrics_row("speed", "rpm", &r.speed_rpm),
        metrics_row("temperature", "degC", &r.temperature),
        metrics_row("resistance", "ohm", &r.resistance),
        vec![
            "resistance_consistency".to_owned(),
            "ohm".to_owned(),
            String::new(),
            fmt_num(r.resistance_consistency),
            String::new(),
            String::new(),
            String::new(),
        ],
    ];
    csv_text(&REPORT_COLUMNS, rows.into_iter())
}

pub fn report_text(r: &EvalReport, checks: &[Check], ambient: f64) -> String {
    let mut out = String::from("Estimation report\n\n");
    let _ = writeln!(
        out,
        "samples evaluated: {}  (steady-state window: last {})\n",
        r.samples, r.window_samples
    );
    let pct = |m: &OutputMetrics| m.percent_of_final.map_or("n/a".to_owned(), |p| format!("{p:.3}%"));
    let _ = writeln!(
        out,
        "{:<12} {:>12} {:>12} {:>14} {:>10} {:>12}",
        "output", "rmse", "max |err|", "steady-state", "of final", "final"
    );
    for (name, m, unit, offset) in [
        ("speed", &r.speed_rpm, "rpm", 0.0),
        ("temperature", &r.temperature, "degC", ambient),
        ("resistance", &r.resistance, "ohm", 0.0),
    ] {
        let _ = writeln!(
            out,
            "{:<12} {:>12.4e} {:>12.4e} {:>+14.4e} {:>10} {:>8.4} {unit}",
            name,
            m.rmse,
            m.max_abs_error,
            m.steady_state_error,
            pct(m),
            m.final_value + offset
        );
    }
    let _ = writeln!(
        out,
        "\nresistance consistency max |r_hat - R(theta_hat)|: {:.4e} ohm",
        r.resistance_consistency
    );
    if !checks.is_empty() {
        out.push_str("\nthresholds\n");
        for c in checks {
            let _ = writeln!(
                out,
                "  {:<20} {:>12.4e} <= {:<10.4e} {}",
                c.name,
                c.value,
                c.limit,
                if c.pass { "PASS" } else { "FAIL" }
            );
        }
    }
    out
}

/// `fig2_speed.csv` (rpm), `fig3_temperature.csv`, `fig4_resistance.csv` and
/// `fig5_errors.csv`, keyed by file name.
pub fn figure_csvs(clean: &Trajectory, est: &Estimates, ambient: f64) -> Vec<(&'static str, String)> {
    let s = est.start;
    let time = &clean.time[s..];
    let rpm = rad_s_to_rpm(1.0);
    let figure = |sim: &[f64], estimated: &[f64], scale: f64, offset: f64| {
        csv_text(
            &FIGURE_COLUMNS,
            (0..estimated.len()).map(|k| {
                let a = sim[k] * scale + offset;
                let b = estimated[k] * scale + offset;
                vec![
                    fmt_num(time[k]),
                    fmt_num(a),
                    fmt_num(b),
                    fmt_num(estimated[k] * scale - sim[k] * scale),
                ]
            }),
        )
    };
    let finals = [
        clean.omega.last().copied().unwrap_or(0.0),
        clean.theta.last().copied().unwrap_or(0.0),
        clean.r_a.last().copied().unwrap_or(0.0),
    ];
    let percent = |err: f64, fin: f64| {
        if fin != 0.0 {
            fmt_num(err / fin.abs() * 100.0)
        } else {
            String::new()
        }
    };
    let errors = csv_text(
        &ERROR_FIGURE_COLUMNS,
        (0..est.len()).map(|k| {
            let e = [
                est.omega[k] - clean.omega[s + k],
                est.theta[k] - clean.theta[s + k],
                est.r_a[k] - clean.r_a[s + k],
            ];
            vec![
                fmt_num(time[k]),
                fmt_num(e[0] * rpm),
                fmt_num(e[1]),
                fmt_num(e[2]),
                percent(e[0], finals[0]),
                percent(e[1], finals[1]),
                percent(e[2], finals[2]),
            ]
        }),
    );
    vec![
        ("fig2_speed.csv", figure(&clean.omega[s..], &est.omega, rpm, 0.0)),
        (
            "fig3_temperature.csv",
            figure(&clean.theta[s..], &est.theta, 1.0, ambient),
        ),
        ("fig4_resistance.csv", figure(&clean.r_a[s..], &est.r_a, 1.0, 0.0)),
        ("fig5_errors.csv", errors),
    ]
}
