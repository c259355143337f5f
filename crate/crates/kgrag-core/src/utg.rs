//! UI Transition Graph model: screens, widgets, actions, transitions, app
//! metadata. Includes the canonical JSON file format, total validation with
//! stable violation codes, breadth-first graph helpers, and a deterministic
//! synthetic benchmark generator that substitutes for device crawling.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::pathfinder::{Trajectory, TrajectoryStep};
use crate::simulator::Task;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppMeta {
    pub product_id: String,
    pub app_name: String,
    pub package_name: String,
}

/// A user action a widget supports. Payloads carry a swipe direction or the
/// text to type; clicks have none.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionKind {
    Click,
    Swipe {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        payload: Option<String>,
    },
    TextInput {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        payload: Option<String>,
    },
}

impl ActionKind {
    pub fn verb(&self) -> &'static str {
        match self {
            ActionKind::Click => "click",
            ActionKind::Swipe { .. } => "swipe",
            ActionKind::TextInput { .. } => "text_input",
        }
    }

    pub fn payload(&self) -> Option<&str> {
        match self {
            ActionKind::Click => None,
            ActionKind::Swipe { payload } | ActionKind::TextInput { payload } => payload.as_deref(),
        }
    }

    pub fn same_verb(&self, other: &ActionKind) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widget {
    pub widget_id: String,
    pub description: String,
    /// Pixel rectangle `[x1, y1, x2, y2]` with `x1 < x2` and `y1 < y2`.
    pub bounds: [i64; 4],
    #[serde(rename = "actions")]
    pub supported_actions: Vec<ActionKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Screen {
    pub screen_id: String,
    pub description: String,
    pub widgets: Vec<Widget>,
}

impl Screen {
    pub fn widget(&self, widget_id: &str) -> Option<&Widget> {
        self.widgets.iter().find(|w| w.widget_id == widget_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: String,
    pub widget_id: String,
    pub action: ActionKind,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utg {
    #[serde(rename = "app")]
    pub meta: AppMeta,
    pub entry_screen: String,
    pub screens: Vec<Screen>,
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    EmptyMetaField,
    PackageNameWhitespace,
    DuplicateScreenId,
    DuplicateWidgetId,
    BoundsInverted,
    EmptyActions,
    EmptyTextPayload,
    UnknownEntryScreen,
    UnknownTransitionScreen,
    UnknownTransitionWidget,
    UnsupportedTransitionAction,
    DuplicateTransition,
    MultiActionWidget,
}

impl ViolationCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ViolationCode::EmptyMetaField => "empty_meta_field",
            ViolationCode::PackageNameWhitespace => "package_name_whitespace",
            ViolationCode::DuplicateScreenId => "duplicate_screen_id",
            ViolationCode::DuplicateWidgetId => "duplicate_widget_id",
            ViolationCode::BoundsInverted => "bounds_inverted",
            ViolationCode::EmptyActions => "empty_actions",
            ViolationCode::EmptyTextPayload => "empty_text_payload",
            ViolationCode::UnknownEntryScreen => "unknown_entry_screen",
            ViolationCode::UnknownTransitionScreen => "unknown_transition_screen",
            ViolationCode::UnknownTransitionWidget => "unknown_transition_widget",
            ViolationCode::UnsupportedTransitionAction => "unsupported_transition_action",
            ViolationCode::DuplicateTransition => "duplicate_transition",
            ViolationCode::MultiActionWidget => "multi_action_widget",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub location: String,
    pub message: String,
}

impl Violation {
    fn new(code: ViolationCode, location: impl Into<String>, message: impl Into<String>) -> Self {
        Self { code, location: location.into(), message: message.into() }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} at {}: {}", self.code.as_str(), self.location, self.message)
    }
}

#[derive(Debug, Error)]
pub enum UtgError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed UTG document: {0}")]
    Parse(String),
    #[error("invalid UTG: {0}")]
    Validation(Violation),
    #[error("benchmark generation failed: {0}")]
    Generation(String),
}

impl Utg {
    pub fn screen(&self, screen_id: &str) -> Option<&Screen> {
        self.screens.iter().find(|s| s.screen_id == screen_id)
    }

    /// Transitions leaving `from`, in document order.
    pub fn outgoing(&self, from: &str) -> Vec<&Transition> {
        self.transitions.iter().filter(|t| t.from == from).collect()
    }

    /// Collects every invariant violation; empty iff the graph is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();

        for (field, value) in [
            ("product_id", &self.meta.product_id),
            ("app_name", &self.meta.app_name),
            ("package_name", &self.meta.package_name),
        ] {
            if value.is_empty() {
                out.push(Violation::new(
                    ViolationCode::EmptyMetaField,
                    format!("app.{field}"),
                    format!("{field} must be non-empty"),
                ));
            }
        }
        if self.meta.package_name.chars().any(char::is_whitespace) {
            out.push(Violation::new(
                ViolationCode::PackageNameWhitespace,
                "app.package_name",
                format!("package name {:?} contains whitespace", self.meta.package_name),
            ));
        }

        let mut screen_ids = BTreeSet::new();
        for (i, screen) in self.screens.iter().enumerate() {
            let loc = format!("screens[{i}]");
            if !screen_ids.insert(screen.screen_id.as_str()) {
                out.push(Violation::new(
                    ViolationCode::DuplicateScreenId,
                    loc.clone(),
                    format!("screen id {:?} already defined", screen.screen_id),
                ));
            }
            let mut widget_ids = BTreeSet::new();
            for (j, widget) in screen.widgets.iter().enumerate() {
                let wloc = format!("{loc}.widgets[{j}]");
                if !widget_ids.insert(widget.widget_id.as_str()) {
                    out.push(Violation::new(
                        ViolationCode::DuplicateWidgetId,
                        wloc.clone(),
                        format!(
                            "widget id {:?} already defined on screen {:?}",
                            widget.widget_id, screen.screen_id
                        ),
                    ));
                }
                let [x1, y1, x2, y2] = widget.bounds;
                if x1 >= x2 || y1 >= y2 {
                    out.push(Violation::new(
                        ViolationCode::BoundsInverted,
                        wloc.clone(),
                        format!("bounds [{x1},{y1},{x2},{y2}] must satisfy x1<x2 and y1<y2"),
                    ));
                }
                if widget.supported_actions.is_empty() {
                    out.push(Violation::new(
                        ViolationCode::EmptyActions,
                        wloc.clone(),
                        "widget supports no actions".to_string(),
                    ));
                }
                for action in &widget.supported_actions {
                    if let ActionKind::TextInput { payload: Some(text) } = action {
                        if text.is_empty() {
                            out.push(Violation::new(
                                ViolationCode::EmptyTextPayload,
                                wloc.clone(),
                                "text_input payload present but empty".to_string(),
                            ));
                        }
                    }
                }
            }
        }

        if !screen_ids.contains(self.entry_screen.as_str()) {
            out.push(Violation::new(
                ViolationCode::UnknownEntryScreen,
                "entry_screen",
                format!("entry screen {:?} is not defined", self.entry_screen),
            ));
        }

        let mut seen_triples = BTreeSet::new();
        for (i, t) in self.transitions.iter().enumerate() {
            let loc = format!("transitions[{i}]");
            if let ActionKind::TextInput { payload: Some(text) } = &t.action {
                if text.is_empty() {
                    out.push(Violation::new(
                        ViolationCode::EmptyTextPayload,
                        loc.clone(),
                        "text_input payload present but empty".to_string(),
                    ));
                }
            }
            for endpoint in [&t.from, &t.to] {
                if !screen_ids.contains(endpoint.as_str()) {
                    out.push(Violation::new(
                        ViolationCode::UnknownTransitionScreen,
                        loc.clone(),
                        format!("references unknown screen {endpoint:?}"),
                    ));
                }
            }
            match self.screen(&t.from).and_then(|s| s.widget(&t.widget_id)) {
                None => {
                    if screen_ids.contains(t.from.as_str()) {
                        out.push(Violation::new(
                            ViolationCode::UnknownTransitionWidget,
                            loc.clone(),
                            format!("widget {:?} not found on screen {:?}", t.widget_id, t.from),
                        ));
                    }
                }
                Some(widget) => {
                    // Support is matched by verb: a widget declaring a generic
                    // text_input capability accepts any concrete payload.
                    if !widget.supported_actions.iter().any(|a| a.same_verb(&t.action)) {
                        out.push(Violation::new(
                            ViolationCode::UnsupportedTransitionAction,
                            loc.clone(),
                            format!(
                                "widget {:?} does not support action {:?}",
                                t.widget_id,
                                t.action.verb()
                            ),
                        ));
                    }
                }
            }
            let triple = format!("{}\u{1}{}\u{1}{:?}", t.from, t.widget_id, t.action);
            if !seen_triples.insert(triple) {
                out.push(Violation::new(
                    ViolationCode::DuplicateTransition,
                    loc,
                    format!(
                        "duplicate transition ({:?}, {:?}, {:?})",
                        t.from,
                        t.widget_id,
                        t.action.verb()
                    ),
                ));
            }
        }

        out
    }

    /// Non-fatal findings: currently, widgets carrying several distinct
    /// actions from the same screen (legal, but worth surfacing).
    pub fn warnings(&self) -> Vec<Violation> {
        let mut actions_per_widget: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
        for t in &self.transitions {
            actions_per_widget
                .entry((t.from.clone(), t.widget_id.clone()))
                .or_default()
                .insert(format!("{:?}", t.action));
        }
        actions_per_widget
            .into_iter()
            .filter(|(_, actions)| actions.len() > 1)
            .map(|((from, widget_id), actions)| {
                Violation::new(
                    ViolationCode::MultiActionWidget,
                    format!("screen {from:?} widget {widget_id:?}"),
                    format!("widget carries {} distinct transition actions", actions.len()),
                )
            })
            .collect()
    }

    fn adjacency(&self) -> BTreeMap<&str, Vec<&Transition>> {
        let mut adj: BTreeMap<&str, Vec<&Transition>> = BTreeMap::new();
        for t in &self.transitions {
            adj.entry(t.from.as_str()).or_default().push(t);
        }
        adj
    }

    /// Shortest transition counts from `start` to every reachable screen.
    pub fn distances_from(&self, start: &str) -> BTreeMap<String, usize> {
        let adj = self.adjacency();
        let mut dist = BTreeMap::new();
        let mut queue = VecDeque::new();
        dist.insert(start.to_string(), 0);
        queue.push_back(start.to_string());
        while let Some(cur) = queue.pop_front() {
            let d = dist[&cur];
            for t in adj.get(cur.as_str()).into_iter().flatten() {
                if !dist.contains_key(&t.to) {
                    dist.insert(t.to.clone(), d + 1);
                    queue.push_back(t.to.clone());
                }
            }
        }
        dist
    }

    /// Shortest transition counts from every screen to `goal`.
    pub fn distances_to(&self, goal: &str) -> BTreeMap<String, usize> {
        let mut reverse: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for t in &self.transitions {
            reverse.entry(t.to.as_str()).or_default().push(t.from.as_str());
        }
        let mut dist = BTreeMap::new();
        let mut queue = VecDeque::new();
        dist.insert(goal.to_string(), 0);
        queue.push_back(goal.to_string());
        while let Some(cur) = queue.pop_front() {
            let d = dist[&cur];
            for &from in reverse.get(cur.as_str()).into_iter().flatten() {
                if !dist.contains_key(from) {
                    dist.insert(from.to_string(), d + 1);
                    queue.push_back(from.to_string());
                }
            }
        }
        dist
    }

    /// One shortest path `from → to`, breaking ties by document order.
    pub fn shortest_path(&self, from: &str, to: &str) -> Option<Vec<&Transition>> {
        if from == to {
            return Some(Vec::new());
        }
        let adj = self.adjacency();
        let mut parent: BTreeMap<&str, &Transition> = BTreeMap::new();
        let mut visited = BTreeSet::new();
        let mut queue = VecDeque::new();
        visited.insert(from);
        queue.push_back(from);
        while let Some(cur) = queue.pop_front() {
            for t in adj.get(cur).into_iter().flatten() {
                if visited.insert(t.to.as_str()) {
                    parent.insert(t.to.as_str(), t);
                    if t.to == to {
                        let mut path = Vec::new();
                        let mut node = to;
                        while node != from {
                            let step = parent[node];
                            path.push(step);
                            node = step.from.as_str();
                        }
                        path.reverse();
                        return Some(path);
                    }
                    queue.push_back(t.to.as_str());
                }
            }
        }
        None
    }
}

fn check_keys(
    obj: &serde_json::Map<String, Value>,
    allowed: &[&str],
    path: &str,
    out: &mut Vec<String>,
) {
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            out.push(format!("{path}.{key}"));
        }
    }
}

/// Paths of keys outside the canonical schema, e.g. `screens[0].colour`.
pub fn unknown_keys(root: &Value) -> Vec<String> {
    let mut out = Vec::new();
    let Value::Object(doc) = root else { return out };
    check_keys(doc, &["app", "entry_screen", "screens", "transitions"], "$", &mut out);
    if let Some(Value::Object(app)) = doc.get("app") {
        check_keys(app, &["product_id", "app_name", "package_name"], "$.app", &mut out);
    }
    if let Some(Value::Array(screens)) = doc.get("screens") {
        for (i, screen) in screens.iter().enumerate() {
            let Value::Object(screen) = screen else { continue };
            let sp = format!("$.screens[{i}]");
            check_keys(screen, &["screen_id", "description", "widgets"], &sp, &mut out);
            if let Some(Value::Array(widgets)) = screen.get("widgets") {
                for (j, widget) in widgets.iter().enumerate() {
                    let Value::Object(widget) = widget else { continue };
                    let wp = format!("{sp}.widgets[{j}]");
                    check_keys(
                        widget,
                        &["widget_id", "description", "bounds", "actions"],
                        &wp,
                        &mut out,
                    );
                    if let Some(Value::Array(actions)) = widget.get("actions") {
                        for (k, action) in actions.iter().enumerate() {
                            if let Value::Object(action) = action {
                                check_keys(
                                    action,
                                    &["kind", "payload"],
                                    &format!("{wp}.actions[{k}]"),
                                    &mut out,
                                );
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(Value::Array(transitions)) = doc.get("transitions") {
        for (i, t) in transitions.iter().enumerate() {
            let Value::Object(t) = t else { continue };
            let tp = format!("$.transitions[{i}]");
            check_keys(t, &["from", "widget_id", "action", "to"], &tp, &mut out);
            if let Some(Value::Object(action)) = t.get("action") {
                check_keys(action, &["kind", "payload"], &format!("{tp}.action"), &mut out);
            }
        }
    }
    out
}

/// Parses and validates a UTG document. In strict mode unknown keys are
/// parse errors; otherwise they are returned as warnings.
pub fn parse_utg(text: &str, strict: bool) -> Result<(Utg, Vec<String>), UtgError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| UtgError::Parse(e.to_string()))?;
    let unknown = unknown_keys(&value);
    if strict {
        if let Some(first) = unknown.first() {
            return Err(UtgError::Parse(format!("unknown key {first}")));
        }
    }
    let warnings = unknown.into_iter().map(|k| format!("ignoring unknown key {k}")).collect();
    let utg: Utg = serde_json::from_value(value).map_err(|e| UtgError::Parse(e.to_string()))?;
    if let Some(first) = utg.validate().into_iter().next() {
        return Err(UtgError::Validation(first));
    }
    Ok((utg, warnings))
}

pub fn load_utg_with(path: &Path, strict: bool) -> Result<(Utg, Vec<String>), UtgError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| UtgError::Io { path: path.display().to_string(), source })?;
    parse_utg(&text, strict)
}

pub fn load_utg(path: &Path) -> Result<Utg, UtgError> {
    load_utg_with(path, false).map(|(utg, _)| utg)
}

pub fn utg_to_json(utg: &Utg) -> String {
    let mut text = serde_json::to_string_pretty(utg).expect("UTG serializes");
    text.push('\n');
    text
}

pub fn save_utg(utg: &Utg, path: &Path) -> Result<(), UtgError> {
    std::fs::write(path, utg_to_json(utg))
        .map_err(|source| UtgError::Io { path: path.display().to_string(), source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub seed: u64,
    pub screen_count: usize,
    pub max_out_degree: usize,
    pub goal_depth: usize,
    /// Share of transitions deleted after generation, always sparing
    /// designated solution paths.
    pub fragmentation_ratio: f64,
    pub task_count: usize,
}

impl BenchSpec {
    fn check(&self) -> Result<(), UtgError> {
        if self.screen_count == 0 || self.max_out_degree == 0 || self.goal_depth == 0 {
            return Err(UtgError::Generation(
                "screen_count, max_out_degree, and goal_depth must be positive".into(),
            ));
        }
        if self.task_count == 0 {
            return Err(UtgError::Generation("task_count must be positive".into()));
        }
        if self.goal_depth >= self.screen_count {
            return Err(UtgError::Generation(format!(
                "goal_depth {} must be below screen_count {}",
                self.goal_depth, self.screen_count
            )));
        }
        if !(0.0..1.0).contains(&self.fragmentation_ratio) {
            return Err(UtgError::Generation(format!(
                "fragmentation_ratio {} must lie in [0, 1)",
                self.fragmentation_ratio
            )));
        }
        Ok(())
    }
}

const SCREEN_SYLLABLES: [&str; 20] = [
    "ba", "ce", "di", "fo", "gu", "ha", "ki", "lo", "mu", "ne", "pa", "qo", "ri", "su", "ta",
    "ve", "wi", "xe", "yo", "zu",
];
const WIDGET_WORDS: [&str; 20] = [
    "bren", "clim", "dorf", "fent", "gask", "hilm", "jort", "kasp", "lund", "morv", "nelt",
    "plos", "quim", "rast", "stid", "tulm", "vosk", "wurn", "yelt", "zarn",
];

/// Probability of granting a screen one sideways/backward edge. These edges
/// never shorten entry→goal distances (they never climb a layer) but give
/// wandering agents a way back.
const RECOVERY_EDGE_RATE: f64 = 0.35;
/// Probability that a designated-path widget gets a goal-word hint appended.
const HINT_RATE: f64 = 0.5;

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let a = SCREEN_SYLLABLES.choose(rng).unwrap();
    let b = SCREEN_SYLLABLES.choose(rng).unwrap();
    let c = SCREEN_SYLLABLES.choose(rng).unwrap();
    format!("{a}{b}{c}")
}

fn screen_name(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>) -> String {
    loop {
        let name = format!("{} {}", pseudo_word(rng), pseudo_word(rng));
        if used.insert(name.clone()) {
            return name;
        }
    }
}

struct BenchBuilder {
    screens: Vec<Screen>,
    names: Vec<String>,
    layers: Vec<usize>,
    transitions: Vec<Transition>,
    targets_per_source: Vec<BTreeSet<usize>>,
    widget_counter: Vec<usize>,
}

impl BenchBuilder {
    fn out_degree(&self, from: usize) -> usize {
        self.targets_per_source[from].len()
    }

    fn add_edge(&mut self, rng: &mut ChaCha8Rng, from: usize, to: usize) {
        let widget_id = format!("w{:02}", self.widget_counter[from]);
        self.widget_counter[from] += 1;
        let slot = self.screens[from].widgets.len() as i64;
        let w1 = WIDGET_WORDS.choose(rng).unwrap();
        let w2 = WIDGET_WORDS.choose(rng).unwrap();
        self.screens[from].widgets.push(Widget {
            widget_id: widget_id.clone(),
            description: format!("{w1} {w2} button"),
            bounds: [16, 16 + 96 * slot, 400, 96 + 96 * slot],
            supported_actions: vec![ActionKind::Click],
        });
        self.transitions.push(Transition {
            from: self.screens[from].screen_id.clone(),
            widget_id,
            action: ActionKind::Click,
            to: self.screens[to].screen_id.clone(),
        });
        self.targets_per_source[from].insert(to);
    }
}

/// Generates a layered synthetic UTG plus tasks, all derived from the seed.
///
/// Screens sit on layers `0..=goal_depth` with the entry alone on layer 0.
/// Construction edges climb exactly one layer, so the shortest path from the
/// entry to any layer-`d` screen has length exactly `d`; recovery edges stay
/// level or descend and therefore never shorten that distance. Each task's
/// designated path is a layer-climbing walk of length `goal_depth`, making
/// `reference_path` a shortest path by construction.
pub fn generate_bench(spec: &BenchSpec) -> Result<(Utg, Vec<Task>), UtgError> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.screen_count;
    let depth = spec.goal_depth;

    let mut layers = vec![0usize; n];
    for (i, layer) in layers.iter_mut().enumerate().take(depth + 1) {
        *layer = i;
    }
    for layer in layers.iter_mut().skip(depth + 1) {
        *layer = rng.random_range(1..=depth);
    }
    // Goal pool: move spare screens to the top layer until every task can
    // target a distinct goal. Spine screens stay put, so no layer empties.
    let mut movable: Vec<usize> = (depth + 1..n).filter(|&i| layers[i] != depth).collect();
    movable.shuffle(&mut rng);
    while layers.iter().filter(|&&l| l == depth).count() < spec.task_count {
        let Some(i) = movable.pop() else { break };
        layers[i] = depth;
    }
    let mut by_layer: Vec<Vec<usize>> = vec![Vec::new(); depth + 1];
    for (i, &layer) in layers.iter().enumerate() {
        by_layer[layer].push(i);
    }

    let mut used_names = BTreeSet::new();
    let mut screens = Vec::with_capacity(n);
    let mut names = Vec::with_capacity(n);
    for i in 0..n {
        let name = screen_name(&mut rng, &mut used_names);
        screens.push(Screen {
            screen_id: format!("s{i:03}"),
            description: format!("The {name} screen."),
            widgets: Vec::new(),
        });
        names.push(name);
    }

    let mut b = BenchBuilder {
        screens,
        names,
        layers,
        transitions: Vec::new(),
        targets_per_source: vec![BTreeSet::new(); n],
        widget_counter: vec![0; n],
    };

    // Coverage: every screen above layer 0 gets an incoming climb edge.
    for k in 0..depth {
        let sources = by_layer[k].clone();
        for &target in &by_layer[k + 1] {
            let &parent = sources.choose(&mut rng).expect("layer is non-empty");
            b.add_edge(&mut rng, parent, target);
        }
        // Top-up: every layer-k screen climbs somewhere, plus random extras.
        for &source in &sources {
            let desired = rng.random_range(1..=spec.max_out_degree);
            while b.out_degree(source) < desired {
                let candidates: Vec<usize> = by_layer[k + 1]
                    .iter()
                    .copied()
                    .filter(|t| !b.targets_per_source[source].contains(t))
                    .collect();
                let Some(&target) = candidates.choose(&mut rng) else { break };
                b.add_edge(&mut rng, source, target);
            }
        }
    }

    // Recovery edges: sideways or backward, capped by max_out_degree and
    // absent from minimal (max_out_degree = 1) graphs, which stay chains.
    for source in 0..n {
        if spec.max_out_degree < 2
            || b.layers[source] == 0
            || b.out_degree(source) >= spec.max_out_degree
        {
            continue;
        }
        if !rng.random_bool(RECOVERY_EDGE_RATE) {
            continue;
        }
        let candidates: Vec<usize> = (0..n)
            .filter(|&t| {
                t != source
                    && b.layers[t] <= b.layers[source]
                    && !b.targets_per_source[source].contains(&t)
            })
            .collect();
        if let Some(&target) = candidates.choose(&mut rng) {
            b.add_edge(&mut rng, source, target);
        }
    }

    // Designated paths: one per task, built backward from a top-layer goal
    // along climb edges, so each has length exactly goal_depth. Goals repeat
    // only when the pool is smaller than the task count.
    let entry_id = b.screens[0].screen_id.clone();
    let mut goal_pool = by_layer[depth].clone();
    goal_pool.shuffle(&mut rng);
    let mut tasks = Vec::with_capacity(spec.task_count);
    let mut walks = Vec::with_capacity(spec.task_count);
    for t in 0..spec.task_count {
        let goal = goal_pool[t % goal_pool.len()];
        let mut walk = Vec::with_capacity(depth);
        let mut cur = goal;
        while b.layers[cur] > 0 {
            let climbs: Vec<usize> = b
                .transitions
                .iter()
                .enumerate()
                .filter(|(_, e)| {
                    e.to == b.screens[cur].screen_id
                        && b.layers[screen_index(&b.screens, &e.from)] + 1 == b.layers[cur]
                })
                .map(|(i, _)| i)
                .collect();
            let &edge = climbs.choose(&mut rng).expect("coverage gives every screen a climb parent");
            walk.push(edge);
            cur = screen_index(&b.screens, &b.transitions[edge].from);
        }
        walk.reverse();
        let steps: Vec<TrajectoryStep> = walk
            .iter()
            .map(|&i| {
                let e = &b.transitions[i];
                TrajectoryStep {
                    screen_id: e.from.clone(),
                    widget_id: e.widget_id.clone(),
                    action: e.action.clone(),
                    to: e.to.clone(),
                }
            })
            .collect();
        tasks.push(Task {
            task_id: format!("t{t:02}"),
            instruction: format!("Open the {} screen.", b.names[goal]),
            start: entry_id.clone(),
            goal: b.screens[goal].screen_id.clone(),
            reference_path: Trajectory { start: entry_id.clone(), steps },
            step_budget: depth + 2,
        });
        walks.push((walk, goal));
    }

    // Hints: append a goal word to some designated-path widget descriptions
    // so a text-overlap baseline is better than blind but still fallible.
    for (walk, goal) in &walks {
        let goal_words: Vec<&str> = b.names[*goal].split(' ').collect();
        for &edge in walk {
            if !rng.random_bool(HINT_RATE) {
                continue;
            }
            let word = *goal_words.choose(&mut rng).unwrap();
            let from = screen_index(&b.screens, &b.transitions[edge].from.clone());
            let widget_id = b.transitions[edge].widget_id.clone();
            let widget = b.screens[from]
                .widgets
                .iter_mut()
                .find(|w| w.widget_id == widget_id)
                .expect("edge widget exists");
            if !widget.description.split(' ').any(|t| t == word) {
                widget.description.push(' ');
                widget.description.push_str(word);
            }
        }
    }

    // Fragmentation: delete non-designated edges uniformly at random.
    let protected: BTreeSet<usize> =
        walks.iter().flat_map(|(walk, _)| walk.iter().copied()).collect();
    let delete_count =
        (spec.fragmentation_ratio * b.transitions.len() as f64).floor() as usize;
    let pool: Vec<usize> =
        (0..b.transitions.len()).filter(|i| !protected.contains(i)).collect();
    if delete_count > pool.len() {
        return Err(UtgError::Generation(format!(
            "fragmentation needs {delete_count} deletable transitions, only {} exist",
            pool.len()
        )));
    }
    let doomed: BTreeSet<usize> = index::sample(&mut rng, pool.len(), delete_count)
        .iter()
        .map(|i| pool[i])
        .collect();
    let transitions: Vec<Transition> = b
        .transitions
        .into_iter()
        .enumerate()
        .filter(|(i, _)| !doomed.contains(i))
        .map(|(_, t)| t)
        .collect();

    let utg = Utg {
        meta: AppMeta {
            product_id: format!("bench-{}", spec.seed),
            app_name: "Synthetic Bench".to_string(),
            package_name: format!("com.kgrag.bench{}", spec.seed),
        },
        entry_screen: entry_id,
        screens: b.screens,
        transitions,
    };
    debug_assert!(utg.validate().is_empty());
    Ok((utg, tasks))
}

fn screen_index(screens: &[Screen], screen_id: &str) -> usize {
    screens
        .iter()
        .position(|s| s.screen_id == screen_id)
        .expect("generated ids resolve")
}

/// Unions several generated benches into one graph by prefixing every
/// screen and task id. Episodes start from each task's own `start`, so the
/// merged entry screen is nominal.
pub fn merge_benches(parts: Vec<(String, Utg, Vec<Task>)>) -> Result<(Utg, Vec<Task>), UtgError> {
    let Some(first_entry) = parts.first().map(|(p, u, _)| format!("{p}{}", u.entry_screen))
    else {
        return Err(UtgError::Generation("nothing to merge".into()));
    };
    let mut screens = Vec::new();
    let mut transitions = Vec::new();
    let mut tasks = Vec::new();
    for (prefix, utg, part_tasks) in parts {
        for mut screen in utg.screens {
            screen.screen_id = format!("{prefix}{}", screen.screen_id);
            screens.push(screen);
        }
        for mut t in utg.transitions {
            t.from = format!("{prefix}{}", t.from);
            t.to = format!("{prefix}{}", t.to);
            transitions.push(t);
        }
        for mut task in part_tasks {
            task.task_id = format!("{prefix}{}", task.task_id);
            task.start = format!("{prefix}{}", task.start);
            task.goal = format!("{prefix}{}", task.goal);
            task.reference_path.start = format!("{prefix}{}", task.reference_path.start);
            for step in &mut task.reference_path.steps {
                step.screen_id = format!("{prefix}{}", step.screen_id);
                step.to = format!("{prefix}{}", step.to);
            }
            tasks.push(task);
        }
    }
    let utg = Utg {
        meta: AppMeta {
            product_id: "bench-merged".to_string(),
            app_name: "Synthetic Bench Suite".to_string(),
            package_name: "com.kgrag.bench.merged".to_string(),
        },
        entry_screen: first_entry,
        screens,
        transitions,
    };
    if let Some(first) = utg.validate().into_iter().next() {
        return Err(UtgError::Generation(format!("merged graph is invalid: {first}")));
    }
    Ok((utg, tasks))
}
