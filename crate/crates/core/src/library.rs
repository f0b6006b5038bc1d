//! Ordered model libraries kept in parallel by an academic side (A) and an
//! in-house side (B), with the shared structure across entries, novelty
//! sets, sanitized exports and diffs.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::interventions::{resolve_replacement, AppliedTable, AttributeKind, Replacement};
use crate::model::{CategoryProfile, Partition, PlotModel, ValidationReport, VertexRef, LAG_SUFFIX, PHASE_VERTEX};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    /// Academic team, outside the firewall.
    A,
    /// In-house team, inside the firewall.
    B,
}

/// Tables an entry introduced, per partition tag.
pub type Novelty = BTreeMap<Partition, BTreeSet<String>>;

/// Partition tags to set on an entry's tables before it is added.
pub type NoveltyDeclaration = BTreeMap<String, Partition>;

#[derive(Clone, Debug, PartialEq)]
pub struct LibraryEntry {
    pub model: PlotModel,
    pub novelty: Novelty,
}

/// Category-specific variants of some of an entry's tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryOverlay {
    pub entry: String,
    pub category: CategoryProfile,
    pub tables: BTreeMap<String, Replacement>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Library {
    pub side: Side,
    pub iteration: u32,
    pub entries: Vec<LibraryEntry>,
    pub overlays: Vec<CategoryOverlay>,
    /// Stand-ins for secure tables, keyed `entry/vertex`, or
    /// `entry/decision/vertex` for a decision's substitution.
    pub dummies: BTreeMap<String, Replacement>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LibraryError {
    #[error("entry `{0}` already exists")]
    DuplicateId(String),
    #[error("entry `{id}` is invalid: {} violation(s)", report.violations.len())]
    InvalidModel { id: String, report: ValidationReport },
    #[error("`{vertex}` in `{entry}` clashes with the vertex of that name in `{other}`")]
    NameClash { vertex: String, entry: String, other: String },
    #[error("declaration for `{vertex}`: {message}")]
    InvalidDeclaration { vertex: String, message: String },
    #[error("unknown entry `{0}`")]
    UnknownEntry(String),
    #[error("category `{0}` is declared with two different profiles")]
    CategoryConflict(String),
    #[error("overlay for `{entry}`/`{category}`: {message}")]
    InvalidOverlay { entry: String, category: String, message: String },
    #[error("rename map is not a bijection: {0}")]
    NotBijective(String),
    #[error("renaming makes two vertices of `{entry}` share the name `{name}`")]
    RenameCollision { entry: String, name: String },
    #[error("secure table `{0}` has no registered dummy")]
    MissingDummy(String),
    #[error("dummy `{table}`: {message}")]
    InvalidDummy { table: String, message: String },
    #[error("only the in-house library can be sanitized for export")]
    NotInHouse,
}

/// Identity of a table across entries: everything but its partition tag,
/// with values rounded to 12 decimal places.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TableFingerprint {
    pub name: String,
    pub parents: Vec<String>,
    pub states: Vec<String>,
    /// Phase labels the table is laid out over.
    pub layout: Vec<String>,
    pub values: Vec<i64>,
}

fn quantize(x: f64) -> i64 {
    libm::round(x * 1e12) as i64
}

/// Ordered parent names and states of a vertex.
fn signature(model: &PlotModel, v: VertexRef) -> (Vec<String>, Vec<String>) {
    let parents = match v {
        VertexRef::Phase => alloc::vec![format!("{PHASE_VERTEX}{LAG_SUFFIX}")],
        VertexRef::Task(i) => model.tasks[i].parents.iter().map(|&p| model.parent_name(p)).collect(),
        VertexRef::Channel(c) => model.channels[c].parents.iter().map(|&p| model.parent_name(p)).collect(),
    };
    (parents, model.vertex_states(v).to_vec())
}

fn vertices(model: &PlotModel) -> Vec<VertexRef> {
    let mut out = alloc::vec![VertexRef::Phase];
    out.extend((0..model.tasks.len()).map(VertexRef::Task));
    out.extend((0..model.channels.len()).map(VertexRef::Channel));
    out
}

fn partition_of(model: &PlotModel, v: VertexRef) -> Partition {
    match v {
        VertexRef::Phase => model.transition_partition,
        VertexRef::Task(i) => model.tasks[i].partition,
        VertexRef::Channel(c) => model.channels[c].partition,
    }
}

fn phase_layout(model: &PlotModel) -> Vec<String> {
    (0..model.phase_count())
        .map(|i| {
            let targets: Vec<&str> = model.phases.reach(i).iter().map(|&j| model.phases.label(j)).collect();
            format!("{}>{}", model.phases.label(i), targets.join(","))
        })
        .collect()
}

pub fn table_fingerprint(model: &PlotModel, v: VertexRef) -> TableFingerprint {
    let (parents, states) = signature(model, v);
    let mut layout = Vec::new();
    let mut values = Vec::new();
    match v {
        VertexRef::Phase => {
            layout = phase_layout(model);
            let mut push = |p: &crate::model::PhaseParams| {
                values.push(quantize(p.abort));
                values.push(quantize(p.stay));
                values.extend(p.jump.iter().map(|&x| quantize(x)));
            };
            model.transition.phases.iter().for_each(&mut push);
            for (&(t, i), p) in &model.transition.overrides {
                layout.push(format!("t={t}:{}", model.phases.label(i)));
                push(p);
            }
        }
        VertexRef::Task(i) => {
            for (phase, table) in model.tasks[i].cpt.tables() {
                if let Some(j) = phase {
                    layout.push(model.phases.label(j).into());
                }
                values.extend(table.values().iter().map(|&x| quantize(x)));
            }
        }
        VertexRef::Channel(c) => values.extend(model.channels[c].cpt.values().iter().map(|&x| quantize(x))),
    }
    TableFingerprint { name: model.vertex_name(v).into(), parents, states, layout, values }
}

/// Every table of a model with its partition tag, `W` first.
pub fn model_tables(model: &PlotModel) -> Vec<(Partition, TableFingerprint)> {
    vertices(model).into_iter().map(|v| (partition_of(model, v), table_fingerprint(model, v))).collect()
}

/// Vertices, edges and tables common to every entry.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedStructure {
    /// Vertex names present in every entry with identical ordered parents
    /// and states.
    pub vertices: BTreeSet<String>,
    /// `(parent, child)` edges between shared vertices found in any entry;
    /// lagged parents carry the `@t-1` suffix.
    pub edges: BTreeSet<(String, String)>,
    /// Shared vertices whose tables are identical in every entry.
    pub tables: BTreeSet<String>,
}

fn base_name(name: &str) -> &str {
    name.strip_suffix(LAG_SUFFIX).unwrap_or(name)
}

pub fn shared_structure(models: &[&PlotModel]) -> SharedStructure {
    let Some((first, rest)) = models.split_first() else {
        return SharedStructure::default();
    };
    let mut vertices = BTreeSet::new();
    let mut tables = BTreeSet::new();
    for v in self::vertices(first) {
        let name = first.vertex_name(v);
        let sig = signature(first, v);
        let fp = table_fingerprint(first, v);
        let mut same_table = true;
        let everywhere = rest.iter().all(|m| match m.vertex_by_name(name) {
            Some(u) if signature(m, u) == sig => {
                same_table &= table_fingerprint(m, u) == fp;
                true
            }
            _ => false,
        });
        if everywhere {
            vertices.insert(String::from(name));
            if same_table {
                tables.insert(String::from(name));
            }
        }
    }
    let mut edges = BTreeSet::new();
    for m in models {
        for v in self::vertices(m) {
            let child = m.vertex_name(v);
            if !vertices.contains(child) {
                continue;
            }
            for parent in signature(m, v).0 {
                if vertices.contains(base_name(&parent)) {
                    edges.insert((parent, String::from(child)));
                }
            }
        }
    }
    SharedStructure { vertices, edges, tables }
}

/// A new entry with tables copied from the shared set where they fit.
#[derive(Clone, Debug, PartialEq)]
pub struct SeededDraft {
    pub model: PlotModel,
    pub prefilled: BTreeSet<String>,
    /// Tables still to be elicited, by declared partition tag.
    pub pending: BTreeMap<Partition, BTreeSet<String>>,
}

/// Kind of a vertex, for cross-entry consistency checks.
fn kind(v: VertexRef) -> u8 {
    match v {
        VertexRef::Phase => 0,
        VertexRef::Task(_) => 1,
        VertexRef::Channel(_) => 2,
    }
}

/// Writes a resolved table into the model's own CPTs.
fn install(model: &mut PlotModel, target: VertexRef, table: AppliedTable) {
    match (target, table) {
        (_, AppliedTable::Transition(map)) => {
            for (i, p) in map {
                *model.transition.params_mut(i) = p;
            }
        }
        (VertexRef::Task(i), AppliedTable::Task(cpt)) => model.tasks[i].cpt = cpt,
        (VertexRef::Channel(c), AppliedTable::Channel(cpt)) => model.channels[c].cpt = cpt,
        _ => unreachable!("resolution matches table kind to vertex kind"),
    }
}

/// What a sanitized export did to one secure table.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifestAction {
    /// Replaced by its registered dummy.
    Replaced,
    /// Left out of the export altogether.
    Withheld,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ManifestLine {
    pub entry: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub table: String,
    pub action: ManifestAction,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SanitizedExport {
    pub library: Library,
    pub manifest: Vec<ManifestLine>,
}

/// Differences between two libraries entry by entry; side and iteration
/// are not compared.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryDiff {
    pub entries_added: Vec<String>,
    pub entries_removed: Vec<String>,
    /// Entries whose position in the order differs.
    pub reordered: bool,
    pub entries: Vec<EntryDiff>,
    /// Overlays added, removed or changed, as `entry/category`.
    pub overlays: Vec<String>,
    /// Dummy keys added, removed or changed.
    pub dummies: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryDiff {
    pub id: String,
    pub vertices_added: Vec<String>,
    pub vertices_removed: Vec<String>,
    pub edges_added: Vec<(String, String)>,
    pub edges_removed: Vec<(String, String)>,
    /// Tables of added vertices, by partition tag on the right-hand side.
    pub tables_added: BTreeMap<Partition, Vec<String>>,
    /// Tables of common vertices whose content differs, by partition tag on
    /// the right-hand side.
    pub tables_changed: BTreeMap<Partition, Vec<String>>,
    pub partitions_changed: Vec<String>,
    /// Per tag, `(added, removed)` novelty-set members.
    pub novelty: BTreeMap<Partition, (Vec<String>, Vec<String>)>,
    /// Other model fields that differ: category, horizon, notes, decisions,
    /// utilities.
    pub fields: Vec<String>,
}

impl EntryDiff {
    pub fn is_empty(&self) -> bool {
        *self == EntryDiff { id: self.id.clone(), ..Default::default() }
    }
}

impl LibraryDiff {
    pub fn is_empty(&self) -> bool {
        *self == LibraryDiff::default()
    }
}

fn edges(model: &PlotModel) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    for v in vertices(model) {
        for p in signature(model, v).0 {
            out.insert((p, model.vertex_name(v).into()));
        }
    }
    out
}

fn set_diff<T: Ord + Clone>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> (Vec<T>, Vec<T>) {
    (b.difference(a).cloned().collect(), a.difference(b).cloned().collect())
}

fn diff_entry(a: &LibraryEntry, b: &LibraryEntry) -> EntryDiff {
    let (ma, mb) = (&a.model, &b.model);
    let mut d = EntryDiff { id: mb.id.clone(), ..Default::default() };
    let names =
        |m: &PlotModel| -> BTreeSet<String> { vertices(m).into_iter().map(|v| m.vertex_name(v).into()).collect() };
    let (na, nb) = (names(ma), names(mb));
    (d.vertices_added, d.vertices_removed) = set_diff(&na, &nb);
    (d.edges_added, d.edges_removed) = set_diff(&edges(ma), &edges(mb));
    for name in &nb {
        let v = mb.vertex_by_name(name).expect("listed vertex");
        let tag = partition_of(mb, v);
        match ma.vertex_by_name(name) {
            None => d.tables_added.entry(tag).or_default().push(name.clone()),
            Some(u) => {
                if table_fingerprint(ma, u) != table_fingerprint(mb, v) {
                    d.tables_changed.entry(tag).or_default().push(name.clone());
                }
                if partition_of(ma, u) != tag {
                    d.partitions_changed.push(name.clone());
                }
            }
        }
    }
    let tags: BTreeSet<Partition> = a.novelty.keys().chain(b.novelty.keys()).copied().collect();
    let empty = BTreeSet::new();
    for tag in tags {
        let delta = set_diff(a.novelty.get(&tag).unwrap_or(&empty), b.novelty.get(&tag).unwrap_or(&empty));
        if !delta.0.is_empty() || !delta.1.is_empty() {
            d.novelty.insert(tag, delta);
        }
    }
    let fields = [
        ("category", ma.category != mb.category),
        ("horizon", ma.horizon != mb.horizon),
        ("notes", ma.notes != mb.notes),
        ("decisions", ma.decisions != mb.decisions),
        ("utilities", ma.utilities != mb.utilities),
        ("applied", ma.applied != mb.applied),
    ];
    d.fields = fields.iter().filter(|f| f.1).map(|f| f.0.to_string()).collect();
    d
}

pub fn diff(a: &Library, b: &Library) -> LibraryDiff {
    let ids = |l: &Library| -> Vec<String> { l.entries.iter().map(|e| e.model.id.clone()).collect() };
    let (ia, ib) = (ids(a), ids(b));
    let (sa, sb): (BTreeSet<String>, BTreeSet<String>) = (ia.iter().cloned().collect(), ib.iter().cloned().collect());
    let mut out = LibraryDiff::default();
    (out.entries_added, out.entries_removed) = set_diff(&sa, &sb);
    let common_a: Vec<&String> = ia.iter().filter(|i| sb.contains(*i)).collect();
    let common_b: Vec<&String> = ib.iter().filter(|i| sa.contains(*i)).collect();
    out.reordered = common_a != common_b;
    for id in common_b {
        let d = diff_entry(a.entry(id).expect("common"), b.entry(id).expect("common"));
        if !d.is_empty() {
            out.entries.push(d);
        }
    }
    fn overlays(l: &Library) -> BTreeMap<String, &CategoryOverlay> {
        l.overlays.iter().map(|o| (format!("{}/{}", o.entry, o.category.key), o)).collect()
    }
    let (oa, ob) = (overlays(a), overlays(b));
    let keys: BTreeSet<&String> = oa.keys().chain(ob.keys()).collect();
    out.overlays = keys.into_iter().filter(|k| oa.get(*k) != ob.get(*k)).cloned().collect();
    let keys: BTreeSet<&String> = a.dummies.keys().chain(b.dummies.keys()).collect();
    out.dummies = keys.into_iter().filter(|k| a.dummies.get(*k) != b.dummies.get(*k)).cloned().collect();
    out
}

/// Renames vertices of one model; `map` must already be checked.
fn rename_model(model: &mut PlotModel, map: &BTreeMap<String, String>) {
    let get = |s: &str| map.get(s).cloned();
    for t in &mut model.tasks {
        if let Some(n) = get(&t.name) {
            t.name = n;
        }
    }
    for c in &mut model.channels {
        if let Some(n) = get(&c.name) {
            c.name = n;
        }
    }
    for d in &mut model.decisions {
        for s in &mut d.substitutions {
            if let Some(n) = get(&s.vertex) {
                s.vertex = n;
            }
        }
    }
    for u in &mut model.utilities {
        for a in &mut u.attributes {
            if let AttributeKind::TaskSteps { task, .. } = &mut a.kind {
                if let Some(n) = get(task) {
                    *task = n;
                }
            }
        }
    }
}

fn rename_key(key: &str, map: &BTreeMap<String, String>) -> String {
    match key.rsplit_once('/') {
        Some((head, last)) => format!("{head}/{}", map.get(last).map_or(last, String::as_str)),
        None => key.into(),
    }
}

impl Library {
    pub fn new(side: Side) -> Self {
        Library { side, iteration: 0, entries: Vec::new(), overlays: Vec::new(), dummies: BTreeMap::new() }
    }

    pub fn entry(&self, id: &str) -> Option<&LibraryEntry> {
        self.entries.iter().find(|e| e.model.id == id)
    }

    pub fn models(&self) -> Vec<&PlotModel> {
        self.entries.iter().map(|e| &e.model).collect()
    }

    pub fn shared_structure(&self) -> SharedStructure {
        shared_structure(&self.models())
    }

    fn check_category(&self, profile: &CategoryProfile) -> Result<(), LibraryError> {
        let known = self
            .entries
            .iter()
            .map(|e| &e.model.category)
            .chain(self.overlays.iter().map(|o| &o.category))
            .filter(|c| !c.key.is_empty());
        for c in known {
            if c.key == profile.key && c != profile {
                return Err(LibraryError::CategoryConflict(profile.key.clone()));
            }
        }
        Ok(())
    }

    /// A vertex name already used in another entry must keep its kind and
    /// states.
    fn check_names(&self, model: &PlotModel, skip: Option<&str>) -> Result<(), LibraryError> {
        for v in vertices(model) {
            let name = model.vertex_name(v);
            for other in self.entries.iter().map(|e| &e.model).filter(|m| Some(m.id.as_str()) != skip) {
                if let Some(u) = other.vertex_by_name(name) {
                    if kind(u) != kind(v) || (v != VertexRef::Phase && other.vertex_states(u) != model.vertex_states(v))
                    {
                        return Err(LibraryError::NameClash {
                            vertex: name.into(),
                            entry: model.id.clone(),
                            other: other.id.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Appends `model` after applying the declared partition tags and
    /// returns its novelty sets: its tables not already introduced by an
    /// earlier entry.
    pub fn add_entry(
        &mut self,
        mut model: PlotModel,
        declaration: &NoveltyDeclaration,
    ) -> Result<Novelty, LibraryError> {
        if self.entry(&model.id).is_some() {
            return Err(LibraryError::DuplicateId(model.id));
        }
        for (vertex, &tag) in declaration {
            let bad =
                |message: &str| LibraryError::InvalidDeclaration { vertex: vertex.clone(), message: message.into() };
            if tag == Partition::Dummy {
                return Err(bad("dummy tags are assigned by sanitization only"));
            }
            match model.vertex_by_name(vertex).ok_or_else(|| bad("no such vertex"))? {
                VertexRef::Phase => model.transition_partition = tag,
                VertexRef::Task(i) => model.tasks[i].partition = tag,
                VertexRef::Channel(c) => model.channels[c].partition = tag,
            }
        }
        let report = model.validate();
        if !report.is_valid() {
            return Err(LibraryError::InvalidModel { id: model.id, report });
        }
        self.check_names(&model, None)?;
        self.check_category(&model.category)?;

        let seen: BTreeSet<TableFingerprint> =
            self.entries.iter().flat_map(|e| model_tables(&e.model)).map(|(_, fp)| fp).collect();
        let mut novelty = Novelty::new();
        for tag in [Partition::Open, Partition::Partial, Partition::Secure] {
            novelty.insert(tag, BTreeSet::new());
        }
        for (tag, fp) in model_tables(&model) {
            if !seen.contains(&fp) {
                novelty.entry(tag).or_default().insert(fp.name);
            }
        }
        self.entries.push(LibraryEntry { model, novelty: novelty.clone() });
        Ok(novelty)
    }

    pub fn add_overlay(&mut self, overlay: CategoryOverlay) -> Result<(), LibraryError> {
        let entry = self.entry(&overlay.entry).ok_or_else(|| LibraryError::UnknownEntry(overlay.entry.clone()))?;
        let bad = |message: String| LibraryError::InvalidOverlay {
            entry: overlay.entry.clone(),
            category: overlay.category.key.clone(),
            message,
        };
        if self.overlays.iter().any(|o| o.entry == overlay.entry && o.category.key == overlay.category.key) {
            return Err(bad("duplicate overlay".into()));
        }
        for (vertex, table) in &overlay.tables {
            resolve_replacement(&entry.model, "overlay", vertex, table).map_err(|e| bad(format!("{e}")))?;
        }
        self.check_category(&overlay.category)?;
        self.overlays.push(overlay);
        Ok(())
    }

    /// The entry's model with the overlay for `category` applied, if any.
    pub fn model_for(&self, entry: &str, category: Option<&str>) -> Result<PlotModel, LibraryError> {
        let base = self.entry(entry).ok_or_else(|| LibraryError::UnknownEntry(entry.into()))?;
        let mut model = base.model.clone();
        let Some(key) = category.filter(|k| *k != base.model.category.key) else {
            return Ok(model);
        };
        let overlay = self.overlays.iter().find(|o| o.entry == entry && o.category.key == key).ok_or_else(|| {
            LibraryError::InvalidOverlay {
                entry: entry.into(),
                category: key.into(),
                message: "no such overlay".into(),
            }
        })?;
        for (vertex, table) in &overlay.tables {
            let (target, resolved) = resolve_replacement(&base.model, "overlay", vertex, table).map_err(|e| {
                LibraryError::InvalidOverlay { entry: entry.into(), category: key.into(), message: format!("{e}") }
            })?;
            install(&mut model, target, resolved);
        }
        model.category = overlay.category.clone();
        Ok(model)
    }

    /// Registers a stand-in for a secure table; see [`Library::dummies`].
    pub fn register_dummy(&mut self, key: impl Into<String>, table: Replacement) -> Result<(), LibraryError> {
        let key = key.into();
        let parts: Vec<&str> = key.split('/').collect();
        let (entry, vertex) = match parts[..] {
            [e, v] | [e, _, v] => (e, v),
            _ => return Err(LibraryError::InvalidDummy { table: key, message: "expected entry/vertex".into() }),
        };
        let model = &self.entry(entry).ok_or_else(|| LibraryError::UnknownEntry(entry.into()))?.model;
        resolve_replacement(model, "dummy", vertex, &table)
            .map_err(|e| LibraryError::InvalidDummy { table: key.clone(), message: format!("{e}") })?;
        self.dummies.insert(key, table);
        Ok(())
    }

    /// Rewrites vertex names across every entry, overlay and dummy.
    pub fn harmonise(&self, map: &BTreeMap<String, String>) -> Result<Library, LibraryError> {
        let map: BTreeMap<String, String> =
            map.iter().filter(|(k, v)| k != v).map(|(k, v)| (k.clone(), v.clone())).collect();
        if map.is_empty() {
            return Ok(self.clone());
        }
        let targets: BTreeSet<&String> = map.values().collect();
        if targets.len() != map.len() {
            return Err(LibraryError::NotBijective("two names map to the same target".into()));
        }
        if map.contains_key(PHASE_VERTEX) || targets.contains(&String::from(PHASE_VERTEX)) {
            return Err(LibraryError::NotBijective(format!("`{PHASE_VERTEX}` cannot be renamed")));
        }
        if let Some(bad) = map.keys().chain(map.values()).find(|n| n.contains('/') || n.ends_with(LAG_SUFFIX)) {
            return Err(LibraryError::NotBijective(format!("`{bad}` is not a vertex name")));
        }
        let mut out = self.clone();
        for entry in &mut out.entries {
            rename_model(&mut entry.model, &map);
            let mut names = BTreeSet::new();
            for v in vertices(&entry.model) {
                let name = entry.model.vertex_name(v);
                if !names.insert(String::from(name)) {
                    return Err(LibraryError::RenameCollision { entry: entry.model.id.clone(), name: name.into() });
                }
            }
            for set in entry.novelty.values_mut() {
                *set = set.iter().map(|n| map.get(n).unwrap_or(n).clone()).collect();
            }
        }
        for entry in &out.entries {
            out.check_names(&entry.model, Some(&entry.model.id))?;
        }
        for o in &mut out.overlays {
            o.tables = core::mem::take(&mut o.tables)
                .into_iter()
                .map(|(k, v)| (map.get(&k).cloned().unwrap_or(k), v))
                .collect();
        }
        out.dummies = core::mem::take(&mut out.dummies).into_iter().map(|(k, v)| (rename_key(&k, &map), v)).collect();
        Ok(out)
    }

    /// Drafts a new entry from `graph`, copying each shared table whose
    /// name, parents, states and phase layout fit.
    pub fn seed_entry(&self, graph: &PlotModel) -> SeededDraft {
        let shared = self.shared_structure();
        let mut model = graph.clone();
        let mut prefilled = BTreeSet::new();
        let mut pending: BTreeMap<Partition, BTreeSet<String>> = BTreeMap::new();
        let source = self.entries.first().map(|e| &e.model);
        for v in vertices(graph) {
            let name = graph.vertex_name(v);
            let copied = match source {
                Some(src) if shared.tables.contains(name) => copy_table(src, &mut model, v),
                _ => false,
            };
            if copied {
                prefilled.insert(String::from(name));
            } else {
                pending.entry(partition_of(graph, v)).or_default().insert(name.into());
            }
        }
        SeededDraft { model, prefilled, pending }
    }

    /// A copy safe to hand across the firewall: every secure table is
    /// replaced by its dummy and tagged as such, secure decision tables
    /// likewise, and secure overlay tables are withheld.
    pub fn sanitize_export(&self) -> Result<SanitizedExport, LibraryError> {
        if self.side != Side::B {
            return Err(LibraryError::NotInHouse);
        }
        let mut out = self.clone();
        let mut manifest = Vec::new();
        for entry in &mut out.entries {
            let original = entry.model.clone();
            let id = original.id.clone();
            for v in vertices(&original) {
                if partition_of(&original, v) != Partition::Secure {
                    continue;
                }
                let name = original.vertex_name(v);
                let key = format!("{id}/{name}");
                let table = self.dummies.get(&key).ok_or_else(|| LibraryError::MissingDummy(key.clone()))?;
                let invalid = |message: String| LibraryError::InvalidDummy { table: key.clone(), message };
                let (target, resolved) =
                    resolve_replacement(&original, "dummy", name, table).map_err(|e| invalid(format!("{e}")))?;
                let m = &mut entry.model;
                match (&resolved, target) {
                    (AppliedTable::Transition(map), _) => {
                        if map.len() + 1 != original.phase_count() {
                            return Err(invalid("must cover every active phase".into()));
                        }
                        m.transition.overrides.clear();
                        m.transition_partition = Partition::Dummy;
                    }
                    (AppliedTable::Task(cpt), VertexRef::Task(i)) => {
                        if cpt.phases.keys().ne(original.tasks[i].cpt.phases.keys()) {
                            return Err(invalid("phase layout differs from the secure table".into()));
                        }
                        m.tasks[i].partition = Partition::Dummy;
                    }
                    (_, VertexRef::Channel(c)) => m.channels[c].partition = Partition::Dummy,
                    _ => {}
                }
                install(m, target, resolved);
                manifest.push(ManifestLine {
                    entry: id.clone(),
                    decision: None,
                    category: None,
                    table: name.into(),
                    action: ManifestAction::Replaced,
                });
            }
            for d in &mut entry.model.decisions {
                for s in &mut d.substitutions {
                    let secure = original
                        .vertex_by_name(&s.vertex)
                        .is_some_and(|v| partition_of(&original, v) == Partition::Secure);
                    if !secure || matches!(s.replacement, Replacement::Force { .. }) {
                        continue;
                    }
                    let key = format!("{id}/{}/{}", d.id, s.vertex);
                    let table = self.dummies.get(&key).ok_or_else(|| LibraryError::MissingDummy(key.clone()))?;
                    s.replacement = table.clone();
                    manifest.push(ManifestLine {
                        entry: id.clone(),
                        decision: Some(d.id.clone()),
                        category: None,
                        table: s.vertex.clone(),
                        action: ManifestAction::Replaced,
                    });
                }
            }
            let report = entry.model.validate();
            if !report.is_valid() {
                return Err(LibraryError::InvalidModel { id, report });
            }
            if let Some(secure) = entry.novelty.remove(&Partition::Secure) {
                if !secure.is_empty() {
                    entry.novelty.entry(Partition::Dummy).or_default().extend(secure);
                }
            }
        }
        for o in &mut out.overlays {
            let Some(base) = self.entry(&o.entry) else { continue };
            o.tables.retain(|vertex, _| {
                let secure = base
                    .model
                    .vertex_by_name(vertex)
                    .is_some_and(|v| partition_of(&base.model, v) == Partition::Secure);
                if secure {
                    manifest.push(ManifestLine {
                        entry: o.entry.clone(),
                        decision: None,
                        category: Some(o.category.key.clone()),
                        table: vertex.clone(),
                        action: ManifestAction::Withheld,
                    });
                }
                !secure
            });
        }
        Ok(SanitizedExport { library: out, manifest })
    }
}

/// Copies the table of `v` from `src` into `dst` when both lay it out the
/// same way; phase-indexed parts are matched by label.
fn copy_table(src: &PlotModel, dst: &mut PlotModel, v: VertexRef) -> bool {
    let name = dst.vertex_name(v).to_string();
    let Some(u) = src.vertex_by_name(&name) else { return false };
    if signature(src, u) != signature(dst, v) {
        return false;
    }
    match (u, v) {
        (VertexRef::Phase, VertexRef::Phase) => {
            if phase_layout(src) != phase_layout(dst) {
                return false;
            }
            dst.transition = src.transition.clone();
        }
        (VertexRef::Task(i), VertexRef::Task(k)) => {
            let from = &src.tasks[i].cpt;
            let labels = |m: &PlotModel, keys: &mut dyn Iterator<Item = &usize>| -> Vec<String> {
                keys.map(|&j| m.phases.label(j).to_string()).collect()
            };
            if labels(src, &mut from.phases.keys()) != labels(dst, &mut dst.tasks[k].cpt.phases.keys()) {
                return false;
            }
            let mut cpt = crate::model::TaskCpt::new(from.base.clone());
            for (&j, table) in &from.phases {
                let Some(jj) = dst.phases.index_of(src.phases.label(j)) else { return false };
                cpt.phases.insert(jj, table.clone());
            }
            dst.tasks[k].cpt = cpt;
        }
        (VertexRef::Channel(c), VertexRef::Channel(k)) => dst.channels[k].cpt = src.channels[c].cpt.clone(),
        _ => return false,
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelBuilder;

    fn model(id: &str, p: f64) -> PlotModel {
        ModelBuilder::new(id, &["w0", "w1"])
            .phase("w1", 0.1, 1.0, &[])
            .task("a", 2, &["W"], vec![vec![0.9, 0.1]])
            .task_phase("a", "w1", vec![vec![p, 1.0 - p]])
            .channel("z", 2, &["a"], vec![vec![0.8, 0.2], vec![0.3, 0.7]])
            .build()
            .unwrap()
    }

    #[test]
    fn novelty_subtracts_earlier_tables() {
        let mut lib = Library::new(Side::A);
        let first = lib.add_entry(model("m1", 0.4), &BTreeMap::new()).unwrap();
        assert_eq!(first[&Partition::Open].len(), 3);
        let second = lib.add_entry(model("m2", 0.5), &BTreeMap::new()).unwrap();
        assert_eq!(second[&Partition::Open], ["a".to_string()].into());
        let err = lib.add_entry(model("m2", 0.5), &BTreeMap::new()).unwrap_err();
        assert_eq!(err, LibraryError::DuplicateId("m2".into()));
    }

    #[test]
    fn shared_tables_need_identical_values() {
        let mut lib = Library::new(Side::A);
        lib.add_entry(model("m1", 0.4), &BTreeMap::new()).unwrap();
        lib.add_entry(model("m2", 0.5), &BTreeMap::new()).unwrap();
        let s = lib.shared_structure();
        assert_eq!(s.vertices.len(), 3);
        assert!(!s.tables.contains("a"));
        assert!(s.tables.contains("z"));
        assert!(s.edges.contains(&("a".into(), "z".into())));
    }

    #[test]
    fn rename_collision_is_refused() {
        let mut lib = Library::new(Side::A);
        lib.add_entry(model("m1", 0.4), &BTreeMap::new()).unwrap();
        let map = [("a".to_string(), "z".to_string())].into();
        assert!(matches!(lib.harmonise(&map), Err(LibraryError::RenameCollision { .. })));
    }
}
