use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::Serialize;

use super::{CptTable, Parent, PhaseParams, PlotModel, TaskCpt, VertexRef, PHASE_VERTEX};
use crate::interventions::{self, AppliedTable};
use crate::{RENORMALIZE_TOLERANCE, ROW_TOLERANCE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    PhaseSpace,
    Naming,
    TransitionRow,
    TaskParent,
    MandatoryParent,
    TaskSet,
    ChannelParent,
    TableShape,
    TableRow,
    Catalogue,
    Horizon,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Vertex, edge or row coordinates, e.g. `transition[t=*, phase=training]`.
    pub location: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub(crate) fn push(&mut self, kind: ViolationKind, location: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation { kind, location: location.into(), message: message.into() });
    }

    pub fn of_kind(&self, kind: ViolationKind) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(move |v| v.kind == kind)
    }
}

/// One `location: message` line per violation.
impl core::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{}: {}", v.location, v.message)?;
        }
        Ok(())
    }
}

/// Checks a model against the plot-model template and the CPT invariants.
///
/// Pure: the same model always yields the same report.
pub fn validate_model(model: &PlotModel) -> ValidationReport {
    let mut report = ValidationReport::default();
    check_phases(model, &mut report);
    check_names(model, &mut report);
    check_transition(model, &mut report);
    check_tasks(model, &mut report);
    check_channels(model, &mut report);
    check_applied(model, &mut report);
    interventions::check_catalogue(model, &mut report);
    if model.horizon == 0 {
        report.push(ViolationKind::Horizon, "meta.horizon", "horizon must be positive");
    }
    report
}

fn check_phases(model: &PlotModel, report: &mut ValidationReport) {
    let space = &model.phases;
    if space.is_empty() {
        report.push(ViolationKind::PhaseSpace, "phases", "the inactive phase w_0 is missing");
        return;
    }
    let mut seen = BTreeSet::new();
    for label in space.labels() {
        if label.is_empty() || !seen.insert(label.as_str()) {
            report.push(
                ViolationKind::PhaseSpace,
                format!("phases[{label}]"),
                "phase labels must be unique and non-empty",
            );
        }
    }
    if !space.reach(0).is_empty() {
        report.push(
            ViolationKind::PhaseSpace,
            format!("phases.reach[{}]", space.label(0)),
            "the inactive phase is absorbing and cannot reach other phases",
        );
    }
    for i in 1..space.len() {
        let mut targets = BTreeSet::new();
        for &j in space.reach(i) {
            let ok = j >= 1 && j < space.len() && j != i && targets.insert(j);
            if !ok {
                report.push(
                    ViolationKind::PhaseSpace,
                    format!("phases.reach[{}]", space.label(i)),
                    format!("reach target index {j} must be a distinct active phase other than itself"),
                );
            }
        }
    }
}

fn check_names(model: &PlotModel, report: &mut ValidationReport) {
    let mut seen = BTreeSet::new();
    seen.insert(PHASE_VERTEX);
    let names =
        model.tasks.iter().map(|t| (&t.name, &t.states)).chain(model.channels.iter().map(|c| (&c.name, &c.states)));
    for (name, states) in names {
        if name.is_empty() || name.contains('@') || !seen.insert(name.as_str()) {
            report.push(
                ViolationKind::Naming,
                format!("vertex[{name}]"),
                "vertex names must be unique, non-empty and free of '@'",
            );
        }
        let distinct: BTreeSet<_> = states.iter().collect();
        if states.is_empty() || distinct.len() != states.len() {
            report.push(
                ViolationKind::Naming,
                format!("vertex[{name}].states"),
                "state labels must be unique and non-empty",
            );
        }
    }
}

fn transition_row_problem(model: &PlotModel, i: usize, p: &PhaseParams) -> Option<String> {
    let reach = model.phases.reach(i);
    let unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
    if !unit(p.abort) || !unit(p.stay) {
        return Some(format!("abort {} and stay {} must lie in [0, 1]", p.abort, p.stay));
    }
    if p.jump.len() != reach.len() {
        return Some(format!("jump distribution has {} entries for {} reachable phases", p.jump.len(), reach.len()));
    }
    if p.jump.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Some("jump probabilities must be non-negative".into());
    }
    if reach.len() == 1 && p.jump[0] != 1.0 {
        return Some(format!("a single reachable phase implies jump probability 1, found {}", p.jump[0]));
    }
    let jump_sum: f64 = p.jump.iter().sum();
    if !reach.is_empty() && (jump_sum - 1.0).abs() > ROW_TOLERANCE {
        let row = p.abort + (1.0 - p.abort) * p.stay + (1.0 - p.abort) * (1.0 - p.stay) * jump_sum;
        return Some(format!("jump probabilities sum to {jump_sum}, row sums to {row}"));
    }
    if reach.is_empty() && (1.0 - p.abort) * (1.0 - p.stay) > ROW_TOLERANCE {
        let row = p.abort + (1.0 - p.abort) * p.stay;
        return Some(format!("no reachable phases but leave probability is positive, row sums to {row}"));
    }
    None
}

fn check_transition(model: &PlotModel, report: &mut ValidationReport) {
    let space = &model.phases;
    let params = &model.transition;
    if params.phases.len() != space.active() {
        report.push(
            ViolationKind::TransitionRow,
            "transition",
            format!("parameters for {} active phases, expected {}", params.phases.len(), space.active()),
        );
        return;
    }
    for i in 1..space.len() {
        if let Some(problem) = transition_row_problem(model, i, &params.phases[i - 1]) {
            report.push(ViolationKind::TransitionRow, format!("transition[t=*, phase={}]", space.label(i)), problem);
        }
    }
    for (&(t, i), p) in &params.overrides {
        if i == 0 || i >= space.len() || t == 0 {
            report.push(
                ViolationKind::TransitionRow,
                format!("transition[t={t}, phase={i}]"),
                "override must target an active phase at t >= 1",
            );
        } else if let Some(problem) = transition_row_problem(model, i, p) {
            report.push(ViolationKind::TransitionRow, format!("transition[t={t}, phase={}]", space.label(i)), problem);
        }
    }
}

fn row_cards(model: &PlotModel, parents: impl Iterator<Item = Parent>) -> Option<usize> {
    parents
        .map(|p| match p.vertex {
            VertexRef::Task(k) => model.tasks.get(k).map(|t| t.states.len()),
            VertexRef::Channel(k) => model.channels.get(k).map(|c| c.states.len()),
            VertexRef::Phase => Some(model.phase_count()),
        })
        .try_fold(1usize, |acc, c| c.map(|c| acc.saturating_mul(c)))
}

pub(crate) fn check_table(
    location: &str,
    table: &CptTable,
    rows: usize,
    columns: usize,
    report: &mut ValidationReport,
) {
    if table.row_count() != rows || table.columns() != columns {
        report.push(
            ViolationKind::TableShape,
            location,
            format!("table is {}x{}, expected {rows}x{columns}", table.row_count(), table.columns()),
        );
        return;
    }
    for (r, row) in table.rows().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&x| !x.is_finite() || x < 0.0) || (sum - 1.0).abs() > ROW_TOLERANCE {
            report.push(
                ViolationKind::TableRow,
                format!("{location}[row={r}]"),
                format!("row sums to {sum} or has negative entries"),
            );
        }
    }
}

pub(crate) fn check_task_cpt(
    model: &PlotModel,
    i: usize,
    cpt: &TaskCpt,
    location: &str,
    report: &mut ValidationReport,
) {
    let task = &model.tasks[i];
    let Some(rows) = row_cards(model, task.row_parents()) else { return };
    let columns = task.states.len();
    check_table(&format!("{location}[phase={}]", model.phases.label(0)), &cpt.base, rows, columns, report);
    for (&j, table) in &cpt.phases {
        if j == 0 || j >= model.phase_count() {
            report.push(ViolationKind::TaskSet, location, format!("phase-specific table for invalid phase index {j}"));
            continue;
        }
        let label = model.phases.label(j);
        if !model.task_sets[j].contains(&i) {
            report.push(
                ViolationKind::TaskSet,
                format!("{location}[phase={label}]"),
                "task has its own table for a phase whose task set does not contain it",
            );
        }
        check_table(&format!("{location}[phase={label}]"), table, rows, columns, report);
    }
}

fn check_tasks(model: &PlotModel, report: &mut ValidationReport) {
    let n = model.tasks.len();
    if model.task_sets.len() != model.phase_count() {
        report.push(ViolationKind::TaskSet, "tasks.sets", "one task set per phase is required");
        return;
    }
    if !model.task_sets[0].is_empty() {
        report.push(
            ViolationKind::TaskSet,
            format!("tasks.sets[{}]", model.phases.label(0)),
            "the inactive phase has no task set",
        );
    }
    for (j, set) in model.task_sets.iter().enumerate() {
        if set.iter().any(|&i| i >= n) {
            report.push(ViolationKind::TaskSet, format!("tasks.sets[{}]", model.phases.label(j)), "unknown task index");
        }
    }

    for (i, task) in model.tasks.iter().enumerate() {
        let name = &task.name;
        let mut has_phase = false;
        let mut seen = BTreeSet::new();
        for &p in &task.parents {
            let edge = format!("{} -> {name}", model.parent_name(p));
            if !seen.insert(p) {
                report.push(ViolationKind::TaskParent, edge, "duplicate parent");
                continue;
            }
            match (p.vertex, p.lagged) {
                (VertexRef::Phase, false) => has_phase = true,
                (VertexRef::Phase, true) => {
                    report.push(ViolationKind::TaskParent, edge, "tasks cannot depend on the previous phase")
                }
                (VertexRef::Task(k), false) if k >= i => {
                    report.push(ViolationKind::TaskParent, edge, "same-slice task edges must follow the task order")
                }
                (VertexRef::Task(_), _) => {}
                (VertexRef::Channel(_), _) => {
                    report.push(ViolationKind::TaskParent, edge, "intensities cannot be parents of tasks")
                }
            }
        }
        if !has_phase {
            report.push(
                ViolationKind::TaskParent,
                format!("{PHASE_VERTEX} -> {name}"),
                "every task must have the current phase as a parent",
            );
        }
        for (j, set) in model.task_sets.iter().enumerate().skip(1) {
            if !set.contains(&i) {
                if task.cpt.phases.contains_key(&j) {
                    continue;
                }
            } else if !task.cpt.phases.contains_key(&j) {
                report.push(
                    ViolationKind::TaskSet,
                    format!("cpts[{name}][phase={}]", model.phases.label(j)),
                    "task is in the phase's task set but has no table for it",
                );
            }
            for &k in set.iter().filter(|&&k| k < i) {
                if set.contains(&i) && !task.parents.contains(&Parent::current(VertexRef::Task(k))) {
                    report.push(
                        ViolationKind::MandatoryParent,
                        format!("{} -> {name}", model.tasks[k].name),
                        format!("both tasks are in the task set of {}, so the edge is required", model.phases.label(j)),
                    );
                }
            }
        }
        check_task_cpt(model, i, &task.cpt, &format!("cpts[{name}]"), report);
    }
}

fn check_channels(model: &PlotModel, report: &mut ValidationReport) {
    for (c, channel) in model.channels.iter().enumerate() {
        let name = &channel.name;
        let mut owners = 0;
        let mut seen = BTreeSet::new();
        for &p in &channel.parents {
            let edge = format!("{} -> {name}", model.parent_name(p));
            if !seen.insert(p) {
                report.push(ViolationKind::ChannelParent, edge, "duplicate parent");
                continue;
            }
            match (p.vertex, p.lagged) {
                (VertexRef::Phase, _) => {
                    report.push(ViolationKind::ChannelParent, edge, "no edges from the phase into an intensity")
                }
                (VertexRef::Task(_), false) => owners += 1,
                (VertexRef::Task(_), true) => {
                    report.push(ViolationKind::ChannelParent, edge, "intensities depend only on the current task")
                }
                (VertexRef::Channel(k), true) if k < c => {}
                (VertexRef::Channel(_), true) => report.push(
                    ViolationKind::ChannelParent,
                    edge,
                    "lag edges must come from intensities indexed before",
                ),
                (VertexRef::Channel(_), false) => report.push(
                    ViolationKind::ChannelParent,
                    edge,
                    "intensities cannot depend on same-slice intensities",
                ),
            }
        }
        if owners != 1 {
            report.push(
                ViolationKind::ChannelParent,
                format!("intensities[{name}]"),
                format!("exactly one task parent is required, found {owners}"),
            );
        }
        if let Some(rows) = row_cards(model, channel.row_parents()) {
            check_table(&format!("cpts[{name}]"), &channel.cpt, rows, channel.states.len(), report);
        }
    }
}

pub(crate) fn check_applied(model: &PlotModel, report: &mut ValidationReport) {
    for sub in &model.applied {
        let location = format!(
            "interventions[{}].{}",
            sub.decision,
            match sub.target {
                VertexRef::Phase => PHASE_VERTEX,
                VertexRef::Task(i) => model.tasks.get(i).map_or("?", |t| t.name.as_str()),
                VertexRef::Channel(c) => model.channels.get(c).map_or("?", |ch| ch.name.as_str()),
            }
        );
        match (&sub.table, sub.target) {
            (AppliedTable::Transition(map), _) => {
                for (&i, p) in map {
                    if i == 0 || i >= model.phase_count() {
                        report.push(
                            ViolationKind::TransitionRow,
                            location.clone(),
                            "substitution for an invalid phase",
                        );
                    } else if let Some(problem) = transition_row_problem(model, i, p) {
                        report.push(
                            ViolationKind::TransitionRow,
                            format!("{location}[phase={}]", model.phases.label(i)),
                            problem,
                        );
                    }
                }
            }
            (AppliedTable::Task(cpt), VertexRef::Task(i)) if i < model.tasks.len() => {
                check_task_cpt(model, i, cpt, &location, report)
            }
            (AppliedTable::Channel(table), VertexRef::Channel(c)) if c < model.channels.len() => {
                let ch = &model.channels[c];
                if let Some(rows) = row_cards(model, ch.row_parents()) {
                    check_table(&location, table, rows, ch.states.len(), report);
                }
            }
            _ => report.push(ViolationKind::Catalogue, location, "substitution does not match its target vertex"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Renormalization {
    pub location: String,
    pub sum: f64,
}

/// Rescales probability vectors whose sum is off by more than the validation
/// tolerance but at most [`RENORMALIZE_TOLERANCE`]. Anything worse is left
/// for `validate_model` to report.
pub fn renormalize(model: &mut PlotModel) -> Vec<Renormalization> {
    let mut out = Vec::new();
    let mut fix = |location: String, v: &mut [f64]| {
        let sum: f64 = v.iter().sum();
        let off = (sum - 1.0).abs();
        if off > ROW_TOLERANCE && off <= RENORMALIZE_TOLERANCE && v.iter().all(|x| x.is_finite() && *x >= 0.0) {
            v.iter_mut().for_each(|x| *x /= sum);
            out.push(Renormalization { location, sum });
        }
    };
    let labels: Vec<String> = model.phases.labels().to_vec();
    for (k, p) in model.transition.phases.iter_mut().enumerate() {
        if p.jump.len() > 1 {
            fix(format!("transition[t=*, phase={}]", labels[k + 1]), &mut p.jump);
        }
    }
    for (&(t, i), p) in model.transition.overrides.iter_mut() {
        if p.jump.len() > 1 {
            let label = labels.get(i).map_or("?", String::as_str);
            fix(format!("transition[t={t}, phase={label}]"), &mut p.jump);
        }
    }
    for task in &mut model.tasks {
        for (phase, table) in task.cpt.tables_mut() {
            let label = labels.get(phase.unwrap_or(0)).map_or("?", String::as_str);
            for (r, row) in table.rows_mut().enumerate() {
                fix(format!("cpts[{}][phase={label}][row={r}]", task.name), row);
            }
        }
    }
    for channel in &mut model.channels {
        for (r, row) in channel.cpt.rows_mut().enumerate() {
            fix(format!("cpts[{}][row={r}]", channel.name), row);
        }
    }
    out
}
