//! Network data model and the `.case` text format.
//!
//! A case file is UTF-8 text made of four mandatory sections and one optional
//! one. `#` starts a comment; blank lines are ignored. Rows are
//! comma-separated with a fixed field order:
//!
//! ```text
//! [meta]
//! name = desk3                  # optional
//! horizon = 3
//! reference_bus = b1
//! initial_dispatch = 10, 0      # optional, one value per generator (MW)
//!
//! [buses]
//! # id, theta_min, theta_max, shed_penalty, curtail_penalty, demand_1, …, demand_T
//! b1, -0.5, 0.5, 1500, 1500, 40, 55, 50
//!
//! [generators]
//! # id, bus, p_min, p_max, ramp_up, ramp_down, cost_quad, cost_lin, cost_const
//! g1, b1, 0, 120, 40, 40, 0.02, 12, 0
//!
//! [lines]
//! # from_bus, to_bus, reactance, capacity
//! b1, b2, 0.1, 80
//!
//! [renewables]
//! # bus, std_dev, mean_1, …, mean_T
//! b3, 8, 20, 25, 30
//! ```
//!
//! Angles are radians, powers MW, costs $. Renewable rows describe the
//! default sampling model (mean profile and standard deviation per bus).

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub theta_min: f64,
    pub theta_max: f64,
    /// Load per stage, MW.
    pub demand: Vec<f64>,
    /// $/MW of unserved load.
    pub shed_penalty: f64,
    /// $/MW of curtailed renewable output.
    pub curtail_penalty: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: String,
    pub bus: String,
    pub p_min: f64,
    pub p_max: f64,
    pub ramp_up: f64,
    pub ramp_down: f64,
    pub cost_quad: f64,
    pub cost_lin: f64,
    pub cost_const: f64,
}

impl Generator {
    /// Fuel cost `a·x² + b·x + c`.
    pub fn fuel_cost(&self, x: f64) -> f64 {
        (self.cost_quad * x + self.cost_lin) * x + self.cost_const
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from_bus: String,
    pub to_bus: String,
    pub reactance: f64,
    pub capacity: f64,
}

/// Sampling parameters of the renewable output injected at one bus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Renewable {
    pub bus: String,
    pub std_dev: f64,
    pub mean: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    pub name: String,
    pub horizon: usize,
    pub reference_bus: String,
    /// Dispatch in force before stage 1; `None` means a cold start from 0 MW.
    pub initial_dispatch: Option<Vec<f64>>,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub lines: Vec<Line>,
    pub renewables: Vec<Renewable>,
}

/// Positional view of a validated case used by the stage builders.
#[derive(Clone, Debug)]
pub struct NetworkIndex {
    pub reference: usize,
    pub generator_bus: Vec<usize>,
    pub line_from: Vec<usize>,
    pub line_to: Vec<usize>,
    pub renewable_bus: Vec<usize>,
}

/// One broken invariant: which entity, which rule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub entity: String,
    pub rule: String,
}

impl Violation {
    fn new(entity: impl Into<String>, rule: impl Into<String>) -> Self {
        Violation {
            entity: entity.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.rule)
    }
}

impl GridCase {
    pub fn num_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn num_lines(&self) -> usize {
        self.lines.len()
    }

    /// Dispatch before stage 1 (zeros for a cold start).
    pub fn initial_state(&self) -> Vec<f64> {
        self.initial_dispatch
            .clone()
            .unwrap_or_else(|| vec![0.0; self.generators.len()])
    }

    pub fn bus_position(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn index(&self) -> Result<NetworkIndex> {
        let pos: HashMap<&str, usize> = self
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id.as_str(), i))
            .collect();
        let find = |id: &str, what: &str| {
            pos.get(id)
                .copied()
                .ok_or_else(|| Error::Validation(vec![Violation::new(what, format!("unknown bus `{id}`"))]))
        };
        Ok(NetworkIndex {
            reference: find(&self.reference_bus, "meta")?,
            generator_bus: self
                .generators
                .iter()
                .map(|g| find(&g.bus, &format!("generator {}", g.id)))
                .collect::<Result<_>>()?,
            line_from: self
                .lines
                .iter()
                .enumerate()
                .map(|(l, line)| find(&line.from_bus, &line_label(l, line)))
                .collect::<Result<_>>()?,
            line_to: self
                .lines
                .iter()
                .enumerate()
                .map(|(l, line)| find(&line.to_bus, &line_label(l, line)))
                .collect::<Result<_>>()?,
            renewable_bus: self
                .renewables
                .iter()
                .map(|r| find(&r.bus, &format!("renewable at {}", r.bus)))
                .collect::<Result<_>>()?,
        })
    }

    /// Returns a copy truncated to the first `horizon` stages.
    pub fn truncated(&self, horizon: usize) -> GridCase {
        let mut c = self.clone();
        let h = horizon.min(self.horizon);
        c.horizon = h;
        for b in &mut c.buses {
            b.demand.truncate(h);
        }
        for r in &mut c.renewables {
            r.mean.truncate(h);
        }
        c
    }
}

pub fn line_label(index: usize, line: &Line) -> String {
    format!("line #{} ({}-{})", index + 1, line.from_bus, line.to_bus)
}

/// Every invariant of the data model; empty iff the case is usable.
pub fn validate_case(case: &GridCase) -> Vec<Violation> {
    let mut out = Vec::new();
    let t = case.horizon;
    if t < 1 {
        out.push(Violation::new("meta", "horizon must be at least 1"));
    }

    let mut ids = HashSet::new();
    for b in &case.buses {
        let who = format!("bus {}", b.id);
        if !ids.insert(b.id.as_str()) {
            out.push(Violation::new(&who, "duplicate bus id"));
        }
        if !(b.theta_min.is_finite() && b.theta_max.is_finite()) {
            out.push(Violation::new(&who, "angle bounds must be finite"));
        } else if b.theta_min > b.theta_max {
            out.push(Violation::new(&who, "theta_min exceeds theta_max"));
        } else if b.theta_min > 0.0 || b.theta_max < 0.0 {
            out.push(Violation::new(&who, "angle bounds must contain 0"));
        }
        if b.demand.len() != t {
            out.push(Violation::new(
                &who,
                format!("demand has {} entries, horizon is {t}", b.demand.len()),
            ));
        }
        if b.demand.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            out.push(Violation::new(&who, "demand entries must be finite and nonnegative"));
        }
        if !(b.shed_penalty >= 0.0 && b.shed_penalty.is_finite()) {
            out.push(Violation::new(&who, "shed_penalty must be finite and nonnegative"));
        }
        if !(b.curtail_penalty >= 0.0 && b.curtail_penalty.is_finite()) {
            out.push(Violation::new(&who, "curtail_penalty must be finite and nonnegative"));
        }
    }

    if !ids.contains(case.reference_bus.as_str()) {
        out.push(Violation::new(
            "meta",
            format!("reference bus `{}` does not exist", case.reference_bus),
        ));
    }

    let mut gen_ids = HashSet::new();
    for g in &case.generators {
        let who = format!("generator {}", g.id);
        if !gen_ids.insert(g.id.as_str()) {
            out.push(Violation::new(&who, "duplicate generator id"));
        }
        if !ids.contains(g.bus.as_str()) {
            out.push(Violation::new(&who, format!("unknown bus `{}`", g.bus)));
        }
        let fields = [
            g.p_min, g.p_max, g.ramp_up, g.ramp_down, g.cost_quad, g.cost_lin, g.cost_const,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            out.push(Violation::new(&who, "parameters must be finite"));
            continue;
        }
        if g.p_min < 0.0 {
            out.push(Violation::new(&who, "p_min must be nonnegative"));
        }
        if g.p_min > g.p_max {
            out.push(Violation::new(&who, "p_min exceeds p_max"));
        }
        if g.ramp_up < 0.0 || g.ramp_down < 0.0 {
            out.push(Violation::new(&who, "ramp limits must be nonnegative"));
        }
        if g.cost_quad < 0.0 {
            out.push(Violation::new(&who, "cost_quad must be nonnegative (convex fuel cost)"));
        }
    }

    match &case.initial_dispatch {
        None => {
            for g in &case.generators {
                if g.p_min <= g.p_max && g.p_min > g.ramp_up {
                    out.push(Violation::new(
                        format!("generator {}", g.id),
                        "cold start cannot reach p_min within ramp_up",
                    ));
                }
            }
        }
        Some(x0) if x0.len() != case.generators.len() => out.push(Violation::new(
            "meta",
            format!(
                "initial_dispatch has {} entries for {} generators",
                x0.len(),
                case.generators.len()
            ),
        )),
        Some(x0) => {
            for (g, &x) in case.generators.iter().zip(x0) {
                let lo = g.p_min.max(x - g.ramp_down);
                let hi = g.p_max.min(x + g.ramp_up);
                if !x.is_finite() || lo > hi {
                    out.push(Violation::new(
                        format!("generator {}", g.id),
                        "initial dispatch leaves no feasible stage-1 output",
                    ));
                }
            }
        }
    }

    for (l, line) in case.lines.iter().enumerate() {
        let who = line_label(l, line);
        if !(line.reactance > 0.0 && line.reactance.is_finite()) {
            out.push(Violation::new(&who, "reactance must be positive"));
        }
        if !(line.capacity >= 0.0) {
            out.push(Violation::new(&who, "capacity must be nonnegative"));
        }
        if line.from_bus == line.to_bus {
            out.push(Violation::new(&who, "from_bus equals to_bus"));
        }
        for end in [&line.from_bus, &line.to_bus] {
            if !ids.contains(end.as_str()) {
                out.push(Violation::new(&who, format!("unknown bus `{end}`")));
            }
        }
    }

    for r in &case.renewables {
        let who = format!("renewable at {}", r.bus);
        if !ids.contains(r.bus.as_str()) {
            out.push(Violation::new(&who, format!("unknown bus `{}`", r.bus)));
        }
        if !(r.std_dev >= 0.0 && r.std_dev.is_finite()) {
            out.push(Violation::new(&who, "std_dev must be finite and nonnegative"));
        }
        if r.mean.len() != t {
            out.push(Violation::new(
                &who,
                format!("mean has {} entries, horizon is {t}", r.mean.len()),
            ));
        }
        if r.mean.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            out.push(Violation::new(&who, "mean entries must be finite and nonnegative"));
        }
    }

    if !case.buses.is_empty() && !is_connected(case) {
        out.push(Violation::new("network", "graph not connected"));
    }
    out
}

fn is_connected(case: &GridCase) -> bool {
    let pos: HashMap<&str, usize> = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id.as_str(), i))
        .collect();
    let mut adj = vec![Vec::new(); case.buses.len()];
    for line in &case.lines {
        if let (Some(&a), Some(&b)) = (pos.get(line.from_bus.as_str()), pos.get(line.to_bus.as_str())) {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut seen = vec![false; case.buses.len()];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Reads and validates a case file.
pub fn load_case(path: impl AsRef<Path>) -> Result<GridCase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let case = parse_case(&text)?;
    let violations = validate_case(&case);
    if violations.is_empty() {
        Ok(case)
    } else {
        Err(Error::Validation(violations))
    }
}

pub fn save_case(case: &GridCase, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_case(case)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Section {
    None,
    Meta,
    Buses,
    Generators,
    Lines,
    Renewables,
}

/// Parses case text without validating invariants beyond field syntax.
pub fn parse_case(text: &str) -> Result<GridCase> {
    let mut section = Section::None;
    let mut seen = HashSet::new();
    let mut name = String::new();
    let mut horizon = None;
    let mut reference_bus = None;
    let mut initial_dispatch = None;
    let mut buses = Vec::new();
    let mut generators = Vec::new();
    let mut lines = Vec::new();
    let mut renewables = Vec::new();

    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(header) = content.strip_prefix('[') {
            let header = header
                .strip_suffix(']')
                .ok_or_else(|| err(format!("unterminated section header `{content}`")))?;
            section = match header.trim() {
                "meta" => Section::Meta,
                "buses" => Section::Buses,
                "generators" => Section::Generators,
                "lines" => Section::Lines,
                "renewables" => Section::Renewables,
                other => return Err(err(format!("unknown section `[{other}]`"))),
            };
            if !seen.insert(header.trim().to_string()) {
                return Err(err(format!("section `[{}]` appears twice", header.trim())));
            }
            continue;
        }
        let fields: Vec<&str> = content.split(',').map(str::trim).collect();
        let num = |i: usize, what: &str| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|_| err(format!("field {what} = `{}` is not a number", fields[i])))
        };
        let nums_from = |start: usize, what: &str| -> Result<Vec<f64>> {
            (start..fields.len()).map(|i| num(i, what)).collect()
        };
        let need = |n: usize, what: &str| -> Result<()> {
            if fields.len() < n {
                Err(err(format!("{what} row needs at least {n} fields, found {}", fields.len())))
            } else {
                Ok(())
            }
        };

        match section {
            Section::None => return Err(err("content before the first section header".into())),
            Section::Meta => {
                let (key, value) = content
                    .split_once('=')
                    .ok_or_else(|| err(format!("expected `key = value`, found `{content}`")))?;
                let value = value.trim();
                match key.trim() {
                    "name" => name = value.to_string(),
                    "horizon" => {
                        horizon = Some(
                            value
                                .parse::<usize>()
                                .map_err(|_| err(format!("horizon `{value}` is not a count")))?,
                        )
                    }
                    "reference_bus" => reference_bus = Some(value.to_string()),
                    "initial_dispatch" => {
                        initial_dispatch = Some(
                            value
                                .split(',')
                                .map(|v| {
                                    v.trim().parse::<f64>().map_err(|_| {
                                        err(format!("initial_dispatch entry `{}` is not a number", v.trim()))
                                    })
                                })
                                .collect::<Result<Vec<_>>>()?,
                        )
                    }
                    other => return Err(err(format!("unknown meta key `{other}`"))),
                }
            }
            Section::Buses => {
                need(5, "bus")?;
                buses.push(Bus {
                    id: fields[0].to_string(),
                    theta_min: num(1, "theta_min")?,
                    theta_max: num(2, "theta_max")?,
                    shed_penalty: num(3, "shed_penalty")?,
                    curtail_penalty: num(4, "curtail_penalty")?,
                    demand: nums_from(5, "demand")?,
                });
            }
            Section::Generators => {
                if fields.len() != 9 {
                    return Err(err(format!("generator row needs 9 fields, found {}", fields.len())));
                }
                generators.push(Generator {
                    id: fields[0].to_string(),
                    bus: fields[1].to_string(),
                    p_min: num(2, "p_min")?,
                    p_max: num(3, "p_max")?,
                    ramp_up: num(4, "ramp_up")?,
                    ramp_down: num(5, "ramp_down")?,
                    cost_quad: num(6, "cost_quad")?,
                    cost_lin: num(7, "cost_lin")?,
                    cost_const: num(8, "cost_const")?,
                });
            }
            Section::Lines => {
                if fields.len() != 4 {
                    return Err(err(format!("line row needs 4 fields, found {}", fields.len())));
                }
                lines.push(Line {
                    from_bus: fields[0].to_string(),
                    to_bus: fields[1].to_string(),
                    reactance: num(2, "reactance")?,
                    capacity: num(3, "capacity")?,
                });
            }
            Section::Renewables => {
                need(2, "renewable")?;
                renewables.push(Renewable {
                    bus: fields[0].to_string(),
                    std_dev: num(1, "std_dev")?,
                    mean: nums_from(2, "mean")?,
                });
            }
        }
    }

    for required in ["meta", "buses", "generators", "lines"] {
        if !seen.contains(required) {
            return Err(Error::Parse {
                line: 0,
                message: format!("missing section `[{required}]`"),
            });
        }
    }
    let missing = |key: &str| Error::Parse {
        line: 0,
        message: format!("missing meta key `{key}`"),
    };
    Ok(GridCase {
        name,
        horizon: horizon.ok_or_else(|| missing("horizon"))?,
        reference_bus: reference_bus.ok_or_else(|| missing("reference_bus"))?,
        initial_dispatch,
        buses,
        generators,
        lines,
        renewables,
    })
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Canonical text form; `parse_case(&write_case(c)) == c` bit-for-bit.
pub fn write_case(case: &GridCase) -> String {
    let mut s = String::new();
    s.push_str("[meta]\n");
    if !case.name.is_empty() {
        let _ = writeln!(s, "name = {}", case.name);
    }
    let _ = writeln!(s, "horizon = {}", case.horizon);
    let _ = writeln!(s, "reference_bus = {}", case.reference_bus);
    if let Some(x0) = &case.initial_dispatch {
        let _ = writeln!(s, "initial_dispatch = {}", join(x0));
    }

    s.push_str("\n[buses]\n# id, theta_min, theta_max, shed_penalty, curtail_penalty, demand...\n");
    for b in &case.buses {
        let _ = write!(
            s,
            "{}, {}, {}, {}, {}",
            b.id, b.theta_min, b.theta_max, b.shed_penalty, b.curtail_penalty
        );
        if !b.demand.is_empty() {
            let _ = write!(s, ", {}", join(&b.demand));
        }
        s.push('\n');
    }

    s.push_str("\n[generators]\n# id, bus, p_min, p_max, ramp_up, ramp_down, cost_quad, cost_lin, cost_const\n");
    for g in &case.generators {
        let _ = writeln!(
            s,
            "{}, {}, {}, {}, {}, {}, {}, {}, {}",
            g.id, g.bus, g.p_min, g.p_max, g.ramp_up, g.ramp_down, g.cost_quad, g.cost_lin, g.cost_const
        );
    }

    s.push_str("\n[lines]\n# from_bus, to_bus, reactance, capacity\n");
    for l in &case.lines {
        let _ = writeln!(s, "{}, {}, {}, {}", l.from_bus, l.to_bus, l.reactance, l.capacity);
    }

    if !case.renewables.is_empty() {
        s.push_str("\n[renewables]\n# bus, std_dev, mean...\n");
        for r in &case.renewables {
            let _ = write!(s, "{}, {}", r.bus, r.std_dev);
            if !r.mean.is_empty() {
                let _ = write!(s, ", {}", join(&r.mean));
            }
            s.push('\n');
        }
    }
    s
}
