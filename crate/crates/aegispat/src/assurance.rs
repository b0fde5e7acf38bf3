//! Assurance-level allocation: the DAL lattice, validation of allocations
//! against per-pattern rules, the credit-once check over decomposition
//! trees, and weighted trade-off scoring.
//!
//! Validation is advisory: it returns findings rather than failing, and a
//! finding carries a stable rule id so tooling can key off it. The rules
//! are deliberately monotone — raising any element's level never turns an
//! accepted allocation into a rejected one — so "must be at level X" is
//! everywhere enforced as "at least X".

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patterns::{PatternInstance, PatternKind};

// ── DAL lattice ─────────────────────────────────────────────────────

/// Development assurance level, `A` most demanding. The `Ord` instance
/// follows demand, not alphabet: `A > B > C > D > E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DalLevel {
    A,
    B,
    C,
    D,
    E,
}

impl DalLevel {
    pub fn rank(self) -> u8 {
        match self {
            DalLevel::A => 4,
            DalLevel::B => 3,
            DalLevel::C => 2,
            DalLevel::D => 1,
            DalLevel::E => 0,
        }
    }

    pub fn from_rank(rank: u8) -> DalLevel {
        match rank {
            4.. => DalLevel::A,
            3 => DalLevel::B,
            2 => DalLevel::C,
            1 => DalLevel::D,
            0 => DalLevel::E,
        }
    }

    /// The level `steps` below this one, saturating at `E`.
    pub fn lowered(self, steps: u8) -> DalLevel {
        DalLevel::from_rank(self.rank().saturating_sub(steps))
    }

    /// `self` satisfies a requirement for `required`.
    pub fn meets(self, required: DalLevel) -> bool {
        self.rank() >= required.rank()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DalLevel::A => "A",
            DalLevel::B => "B",
            DalLevel::C => "C",
            DalLevel::D => "D",
            DalLevel::E => "E",
        }
    }
}

impl PartialOrd for DalLevel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DalLevel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.rank().cmp(&other.rank())
    }
}

impl std::fmt::Display for DalLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

// ── Allocation trees ────────────────────────────────────────────────

/// One architectural element inside a decomposition, with its role label
/// and the level it is developed to. Role labels follow the pattern
/// constructors: `complex`, `primary`, `backup`, `monitor0`, `alt0`,
/// `switch`, `channel0`, `selector`, `replica0`, `voter`, ...
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementAllocation {
    pub name: String,
    pub role: String,
    pub dal: DalLevel,
}

/// How a function is decomposed: the pattern realizing it, the per-element
/// levels, and the claim flags the rules inspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub kind: PatternKind,
    /// Assurance credit (reduced element levels justified by the pattern)
    /// is claimed at this node.
    #[serde(default)]
    pub credit_taken: bool,
    /// Redundant channels are claimed independent (declared, not proven).
    #[serde(default)]
    pub independence: bool,
    /// Monitor placed inside the relieved component's boundary.
    #[serde(default)]
    pub monitor_inside: bool,
    /// Override threshold varies with operational risk.
    #[serde(default)]
    pub adaptive_override: bool,
    pub elements: Vec<ElementAllocation>,
    /// Sub-functions, each with its own allocation and (optionally) its
    /// own decomposition.
    #[serde(default)]
    pub children: Vec<AllocationNode>,
}

/// A function with its allocated level and optional decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationNode {
    pub function: String,
    pub allocated: DalLevel,
    #[serde(default)]
    pub decomposition: Option<Decomposition>,
}

// ── Findings ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Violation,
    Warning,
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub rule: String,
    pub message: String,
    /// `function/role` path of the offending element or node.
    pub location: String,
}

impl Finding {
    fn violation(rule: &str, location: String, message: String) -> Finding {
        Finding {
            severity: Severity::Violation,
            rule: rule.into(),
            message,
            location,
        }
    }

    fn warning(rule: &str, location: String, message: String) -> Finding {
        Finding {
            severity: Severity::Warning,
            rule: rule.into(),
            message,
            location,
        }
    }
}

#[derive(Debug, Error)]
pub enum AssuranceError {
    #[error("allocation describes a {declared} pattern but the instance is {actual}")]
    KindMismatch {
        declared: &'static str,
        actual: &'static str,
    },
    #[error("{0}")]
    BadMatrix(String),
}

/// Tunable rule parameters.
#[derive(Debug, Clone, Copy)]
pub struct RuleConfig {
    /// Maximum levels a relieved complex element may sit below the
    /// allocation (R3).
    pub relief_levels: u8,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig { relief_levels: 2 }
    }
}

// ── Role classification ─────────────────────────────────────────────

fn is_complex_role(role: &str) -> bool {
    role == "complex" || role == "primary" || role.starts_with("model") || role.starts_with("replica")
}

fn is_monitor_role(role: &str) -> bool {
    role.starts_with("monitor") || role == "consistency"
}

/// Elements R2 requires at the allocated level: everything the scheme
/// leans on once the complex part is relieved.
fn is_assured_role(role: &str) -> bool {
    is_monitor_role(role)
        || role == "switch"
        || role == "gate"
        || role == "backup"
        || role == "voter"
        || role == "selector"
        || role.starts_with("alt")
        || role == "pre"
        || role == "post"
        || role == "override"
}

// ── Rule table ──────────────────────────────────────────────────────

fn loc(function: &str, role: &str) -> String {
    format!("{function}/{role}")
}

/// Applies the published rule table to one node. Children are validated
/// recursively; credit accounting is [`check_credit_once`]'s job.
pub fn validate_node(node: &AllocationNode, config: &RuleConfig) -> Vec<Finding> {
    let mut findings = Vec::new();
    validate_node_into(node, config, &mut findings);
    findings
}

fn validate_node_into(node: &AllocationNode, config: &RuleConfig, findings: &mut Vec<Finding>) {
    if let Some(dec) = &node.decomposition {
        apply_rules(node, dec, config, findings);
        for child in &dec.children {
            validate_node_into(child, config, findings);
        }
    }
}

fn apply_rules(
    node: &AllocationNode,
    dec: &Decomposition,
    config: &RuleConfig,
    findings: &mut Vec<Finding>,
) {
    let allocated = node.allocated;
    let function = &node.function;
    let complexes: Vec<&ElementAllocation> = dec
        .elements
        .iter()
        .filter(|e| is_complex_role(&e.role))
        .collect();

    match dec.kind {
        // R1: the sole implementing element carries the whole allocation.
        PatternKind::SingleChannel => {
            for e in &complexes {
                if !e.dal.meets(allocated) {
                    findings.push(Finding::violation(
                        "R1",
                        loc(function, &e.role),
                        format!(
                            "single channel inherits the full allocation: {} is {}, allocated {}",
                            e.name, e.dal, allocated
                        ),
                    ));
                }
            }
        }

        // R2 + R3 kinds: assured elements at the allocation, complex
        // relieved within bounds, monitors never below the complex.
        // Monitors ≥ allocated also keeps every monitor at or above a
        // *relieved* complex (which sits below the allocation by
        // definition), so no separate monitor-vs-complex comparison is
        // needed — and comparing against an over-developed complex would
        // break monotonicity.
        PatternKind::ActiveMonitor | PatternKind::Combined | PatternKind::Rta => {
            rule_assured_elements(function, allocated, dec, findings);
            rule_relief_bound(function, allocated, &complexes, config, findings);
            if dec.kind == PatternKind::Rta && dec.monitor_inside {
                findings.push(Finding::violation(
                    "R5",
                    loc(function, "monitor"),
                    "monitor sits inside the relieved component's boundary; \
                     a monitor developed with the thing it watches cannot \
                     justify relieving it"
                        .into(),
                ));
            }
        }

        // R4: one channel at the allocation; relieving the other requires
        // declared independence. R3 bounds the relieved complex side.
        PatternKind::BackupParallel => {
            let primary = dec.elements.iter().find(|e| e.role == "primary");
            let backup = dec.elements.iter().find(|e| e.role == "backup");
            if let (Some(p), Some(b)) = (primary, backup) {
                let best = p.dal.max(b.dal);
                if !best.meets(allocated) {
                    findings.push(Finding::violation(
                        "R4",
                        loc(function, "primary"),
                        format!(
                            "neither channel reaches the allocation: primary {}, backup {}, allocated {}",
                            p.dal, b.dal, allocated
                        ),
                    ));
                }
                let worst = p.dal.min(b.dal);
                if !worst.meets(allocated) && !dec.independence {
                    let relieved = if p.dal < b.dal { p } else { b };
                    findings.push(Finding::violation(
                        "R4",
                        loc(function, &relieved.role),
                        format!(
                            "{} is relieved to {} without declared channel independence",
                            relieved.name, relieved.dal
                        ),
                    ));
                }
            }
            rule_relief_bound(function, allocated, &complexes, config, findings);
        }

        // R6: decomposition by region reduces scope, not assurance —
        // every channel and the selector carry the full allocation.
        PatternKind::InputPartitioning => {
            for e in &dec.elements {
                let constrained = e.role.starts_with("channel") || e.role == "selector";
                if constrained && !e.dal.meets(allocated) {
                    findings.push(Finding::violation(
                        "R6",
                        loc(function, &e.role),
                        format!(
                            "every region channel and the selector inherit the full allocation: {} is {}, allocated {}",
                            e.name, e.dal, allocated
                        ),
                    ));
                }
            }
        }

        PatternKind::ValueOverride | PatternKind::FunctionModification | PatternKind::Tmr => {
            rule_assured_elements(function, allocated, dec, findings);
        }
    }

    // R7: adaptive overriding at the highest allocations trades away the
    // fixed margin that makes the override reviewable.
    if dec.adaptive_override && matches!(allocated, DalLevel::A | DalLevel::B) {
        findings.push(Finding::warning(
            "R7",
            loc(function, "override"),
            format!(
                "risk-adaptive override threshold at allocation {allocated}: \
                 fail-safe design principle 10 (margins or factors of safety) \
                 expects a fixed, reviewable margin"
            ),
        ));
    }
}

fn rule_assured_elements(
    function: &str,
    allocated: DalLevel,
    dec: &Decomposition,
    findings: &mut Vec<Finding>,
) {
    for e in dec.elements.iter().filter(|e| is_assured_role(&e.role)) {
        if !e.dal.meets(allocated) {
            findings.push(Finding::violation(
                "R2",
                loc(function, &e.role),
                format!(
                    "assured element {} is {}, below the allocation {}",
                    e.name, e.dal, allocated
                ),
            ));
        }
    }
}

fn rule_relief_bound(
    function: &str,
    allocated: DalLevel,
    complexes: &[&ElementAllocation],
    config: &RuleConfig,
    findings: &mut Vec<Finding>,
) {
    let floor = allocated.lowered(config.relief_levels);
    for e in complexes {
        if !e.dal.meets(floor) {
            findings.push(Finding::violation(
                "R3",
                loc(function, &e.role),
                format!(
                    "{} is relieved to {}, more than {} levels below the allocation {}",
                    e.name, e.dal, config.relief_levels, allocated
                ),
            ));
        }
    }
}

/// Validates an allocation against a concrete pattern instance: the
/// declared kind must match, then the rule table applies.
pub fn validate_allocation(
    instance: &PatternInstance,
    node: &AllocationNode,
) -> Result<Vec<Finding>, AssuranceError> {
    if let Some(dec) = &node.decomposition {
        if dec.kind != instance.kind {
            return Err(AssuranceError::KindMismatch {
                declared: dec.kind.name(),
                actual: instance.kind.name(),
            });
        }
    }
    Ok(validate_node(node, &RuleConfig::default()))
}

// ── Credit accounting ───────────────────────────────────────────────

/// Assurance credit may be claimed at most once along any root-to-leaf
/// path: a nested claim under an ancestor claim is a violation (reported
/// at the nested node; recursion continues underneath).
pub fn check_credit_once(root: &AllocationNode) -> Vec<Finding> {
    let mut findings = Vec::new();
    walk_credit(root, false, &mut findings);
    findings
}

fn walk_credit(node: &AllocationNode, ancestor_credit: bool, findings: &mut Vec<Finding>) {
    let mut here = ancestor_credit;
    if let Some(dec) = &node.decomposition {
        if dec.credit_taken {
            if ancestor_credit {
                findings.push(Finding::violation(
                    "credit-once",
                    node.function.clone(),
                    format!(
                        "`{}` claims assurance credit under an ancestor that already claimed it",
                        node.function
                    ),
                ));
            }
            here = true;
        }
        for child in &dec.children {
            walk_credit(child, here, findings);
        }
    }
}

/// Full validation as the CLI runs it: rule table plus credit accounting.
pub fn validate_tree(root: &AllocationNode, config: &RuleConfig) -> Vec<Finding> {
    let mut findings = validate_node(root, config);
    findings.extend(check_credit_once(root));
    findings
}

pub fn has_violations(findings: &[Finding]) -> bool {
    findings.iter().any(|f| f.severity == Severity::Violation)
}

// ── Trade-off scoring ───────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub weight: f64,
}

/// Options scored against weighted attributes; `scores[i][j]` is option
/// `i` on attribute `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeMatrix {
    pub options: Vec<String>,
    pub attributes: Vec<Attribute>,
    pub scores: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedOption {
    pub option: String,
    pub total: f64,
}

/// Weighted totals, ranked descending; ties break by option name so the
/// ranking is a deterministic function of the matrix.
pub fn score_tradeoffs(matrix: &TradeMatrix) -> Result<Vec<RankedOption>, AssuranceError> {
    if matrix.attributes.iter().any(|a| a.weight < 0.0) {
        return Err(AssuranceError::BadMatrix(
            "attribute weights must be non-negative".into(),
        ));
    }
    if matrix.attributes.iter().all(|a| a.weight == 0.0) {
        return Err(AssuranceError::BadMatrix(
            "at least one attribute weight must be positive".into(),
        ));
    }
    if matrix.scores.len() != matrix.options.len()
        || matrix
            .scores
            .iter()
            .any(|row| row.len() != matrix.attributes.len())
    {
        return Err(AssuranceError::BadMatrix(format!(
            "score matrix must be {} options x {} attributes",
            matrix.options.len(),
            matrix.attributes.len()
        )));
    }
    let mut ranked: Vec<RankedOption> = matrix
        .options
        .iter()
        .zip(&matrix.scores)
        .map(|(option, row)| RankedOption {
            option: option.clone(),
            total: row
                .iter()
                .zip(&matrix.attributes)
                .map(|(s, a)| s * a.weight)
                .sum(),
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.total
            .total_cmp(&a.total)
            .then_with(|| a.option.cmp(&b.option))
    });
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn element(name: &str, role: &str, dal: DalLevel) -> ElementAllocation {
        ElementAllocation {
            name: name.into(),
            role: role.into(),
            dal,
        }
    }

    fn node(
        function: &str,
        allocated: DalLevel,
        kind: PatternKind,
        elements: Vec<ElementAllocation>,
    ) -> AllocationNode {
        AllocationNode {
            function: function.into(),
            allocated,
            decomposition: Some(Decomposition {
                kind,
                credit_taken: false,
                independence: false,
                monitor_inside: false,
                adaptive_override: false,
                elements,
                children: vec![],
            }),
        }
    }

    fn violations(findings: &[Finding]) -> Vec<&str> {
        findings
            .iter()
            .filter(|f| f.severity == Severity::Violation)
            .map(|f| f.rule.as_str())
            .collect()
    }

    fn check(n: &AllocationNode) -> Vec<Finding> {
        validate_node(n, &RuleConfig::default())
    }

    #[test]
    fn dal_order_is_by_demand() {
        use DalLevel::*;
        assert!(A > B && B > C && C > D && D > E);
        assert!(A.meets(C) && !C.meets(A) && C.meets(C));
        assert_eq!(A.lowered(2), C);
        assert_eq!(D.lowered(3), E, "lowering saturates");
        assert_eq!(serde_json::to_string(&A).unwrap(), "\"A\"");
        assert_eq!(serde_json::from_str::<DalLevel>("\"E\"").unwrap(), E);
    }

    #[test]
    fn r1_single_channel_inherits_everything() {
        use DalLevel::*;
        let ok = node(
            "f",
            A,
            PatternKind::SingleChannel,
            vec![element("impl", "complex", A)],
        );
        assert!(check(&ok).is_empty());
        let bad = node(
            "f",
            A,
            PatternKind::SingleChannel,
            vec![element("impl", "complex", C)],
        );
        assert_eq!(violations(&check(&bad)), vec!["R1"]);
    }

    #[test]
    fn r2_monitor_levels() {
        use DalLevel::*;
        // Monitor at the allocation, complex relieved: accepted.
        let ok = node(
            "f",
            A,
            PatternKind::ActiveMonitor,
            vec![
                element("net", "complex", C),
                element("mon", "monitor", A),
                element("gate", "gate", A),
            ],
        );
        assert!(check(&ok).is_empty());
        // Monitor below the allocation (and below the complex): rejected.
        let bad = node(
            "f",
            A,
            PatternKind::ActiveMonitor,
            vec![
                element("net", "complex", A),
                element("mon", "monitor", C),
                element("gate", "gate", A),
            ],
        );
        let findings = check(&bad);
        let v = violations(&findings);
        assert!(v.iter().all(|r| *r == "R2") && !v.is_empty());
    }

    #[test]
    fn r3_relief_is_bounded() {
        use DalLevel::*;
        let at_bound = node(
            "f",
            A,
            PatternKind::Rta,
            vec![
                element("net", "complex", C),
                element("mon", "monitor0", A),
                element("alt", "alt0", A),
                element("sw", "switch", A),
            ],
        );
        assert!(check(&at_bound).is_empty(), "two levels of relief is the bound");
        let beyond = node(
            "f",
            A,
            PatternKind::Rta,
            vec![
                element("net", "complex", D),
                element("mon", "monitor0", A),
                element("alt", "alt0", A),
                element("sw", "switch", A),
            ],
        );
        assert_eq!(violations(&check(&beyond)), vec!["R3"]);
    }

    #[test]
    fn r4_backup_parallel_needs_one_full_channel_and_independence() {
        use DalLevel::*;
        let mk = |p: DalLevel, b: DalLevel, independence: bool| {
            let mut n = node(
                "f",
                A,
                PatternKind::BackupParallel,
                vec![element("p", "primary", p), element("b", "backup", b)],
            );
            n.decomposition.as_mut().unwrap().independence = independence;
            n
        };
        // Conventional: primary at the allocation, relieved backup, with
        // independence declared.
        assert!(check(&mk(A, C, true)).is_empty());
        // Reversed: relieved complex primary, assured backup.
        assert!(check(&mk(C, A, true)).is_empty());
        // Same reversal without independence: rejected.
        assert_eq!(violations(&check(&mk(C, A, false))), vec!["R4"]);
        // Neither channel at the allocation: rejected regardless.
        assert_eq!(violations(&check(&mk(C, C, true))), vec!["R4"]);
    }

    #[test]
    fn r5_monitor_inside_boundary() {
        use DalLevel::*;
        let mut n = node(
            "f",
            A,
            PatternKind::Rta,
            vec![
                element("net", "complex", C),
                element("mon", "monitor0", A),
                element("alt", "alt0", A),
                element("sw", "switch", A),
            ],
        );
        n.decomposition.as_mut().unwrap().monitor_inside = true;
        assert_eq!(violations(&check(&n)), vec!["R5"]);
    }

    #[test]
    fn r6_partitioning_gives_no_relief() {
        use DalLevel::*;
        let ok = node(
            "f",
            A,
            PatternKind::InputPartitioning,
            vec![
                element("c0", "channel0", A),
                element("c1", "channel1", A),
                element("sel", "selector", A),
            ],
        );
        assert!(check(&ok).is_empty());
        let bad = node(
            "f",
            A,
            PatternKind::InputPartitioning,
            vec![
                element("c0", "channel0", A),
                element("c1", "channel1", C),
                element("sel", "selector", A),
            ],
        );
        assert_eq!(violations(&check(&bad)), vec!["R6"]);
    }

    #[test]
    fn r7_adaptive_override_is_a_warning_not_a_violation() {
        use DalLevel::*;
        let mut n = node(
            "f",
            A,
            PatternKind::ValueOverride,
            vec![
                element("net", "complex", A),
                element("ovr", "override", A),
            ],
        );
        n.decomposition.as_mut().unwrap().adaptive_override = true;
        let findings = check(&n);
        assert!(violations(&findings).is_empty());
        assert!(findings
            .iter()
            .any(|f| f.severity == Severity::Warning && f.rule == "R7"));
        // At a low allocation the warning disappears.
        let mut low = n.clone();
        low.allocated = DalLevel::C;
        assert!(check(&low).is_empty());
    }

    #[test]
    fn credit_once_along_paths() {
        use DalLevel::*;
        let leaf = |credit| AllocationNode {
            function: "leaf".into(),
            allocated: C,
            decomposition: Some(Decomposition {
                kind: PatternKind::Rta,
                credit_taken: credit,
                independence: false,
                monitor_inside: false,
                adaptive_override: false,
                elements: vec![
                    element("net", "complex", C),
                    element("mon", "monitor0", C),
                    element("alt", "alt0", C),
                    element("sw", "switch", C),
                ],
                children: vec![],
            }),
        };
        let root = |credit, children: Vec<AllocationNode>| AllocationNode {
            function: "sys".into(),
            allocated: A,
            decomposition: Some(Decomposition {
                kind: PatternKind::Combined,
                credit_taken: credit,
                independence: false,
                monitor_inside: false,
                adaptive_override: false,
                elements: vec![
                    element("net", "complex", C),
                    element("mon", "monitor", A),
                    element("bak", "backup", A),
                    element("sw", "switch", A),
                ],
                children,
            }),
        };
        // Single claim: fine.
        assert!(check_credit_once(&root(true, vec![leaf(false)])).is_empty());
        // Nested claim on one path: violation.
        let nested = check_credit_once(&root(true, vec![leaf(true)]));
        assert_eq!(violations(&nested), vec!["credit-once"]);
        // Claims on disjoint sibling subtrees: fine.
        let siblings = root(false, vec![leaf(true), leaf(true)]);
        assert!(check_credit_once(&siblings).is_empty());
    }

    #[test]
    fn kind_mismatch_is_an_error() {
        use DalLevel::*;
        let profile = crate::surrogate::SurrogateProfile {
            reference: crate::surrogate::ReferenceFn::Linear {
                weights: vec![1.0],
                bias: 0.0,
            },
            regions: vec![],
            ood: Default::default(),
            p_selftest: 0.0,
        };
        let instance = crate::patterns::make_single_channel(&profile).unwrap();
        let n = node(
            "f",
            A,
            PatternKind::Tmr,
            vec![element("r0", "replica0", A)],
        );
        assert!(matches!(
            validate_allocation(&instance, &n),
            Err(AssuranceError::KindMismatch { .. })
        ));
        let matching = node(
            "f",
            A,
            PatternKind::SingleChannel,
            vec![element("impl", "complex", A)],
        );
        assert!(validate_allocation(&instance, &matching).unwrap().is_empty());
    }

    /// Exhaustive monotonicity over the active-monitor rule set: raising
    /// any single element of an accepted allocation keeps it accepted.
    #[test]
    fn raising_levels_never_creates_violations() {
        let levels = [
            DalLevel::A,
            DalLevel::B,
            DalLevel::C,
            DalLevel::D,
            DalLevel::E,
        ];
        for allocated in levels {
            for complex in levels {
                for monitor in levels {
                    for gate in levels {
                        let n = node(
                            "f",
                            allocated,
                            PatternKind::ActiveMonitor,
                            vec![
                                element("net", "complex", complex),
                                element("mon", "monitor", monitor),
                                element("g", "gate", gate),
                            ],
                        );
                        if !violations(&check(&n)).is_empty() {
                            continue;
                        }
                        for raise in 0..3 {
                            let mut m = n.clone();
                            let e = &mut m.decomposition.as_mut().unwrap().elements[raise];
                            e.dal = DalLevel::from_rank((e.dal.rank() + 1).min(4));
                            assert!(
                                violations(&check(&m)).is_empty(),
                                "raising element {raise} of a clean allocation \
                                 (alloc {allocated}) created a violation"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn tradeoff_ranking_is_weighted_and_deterministic() {
        let matrix = TradeMatrix {
            options: vec!["rta".into(), "tmr".into(), "combined".into()],
            attributes: vec![
                Attribute {
                    name: "availability".into(),
                    weight: 2.0,
                },
                Attribute {
                    name: "cost".into(),
                    weight: 1.0,
                },
            ],
            scores: vec![vec![0.9, 0.5], vec![0.7, 0.9], vec![0.9, 0.5]],
        };
        let ranked = score_tradeoffs(&matrix).unwrap();
        // rta and combined tie at 2.3; name order breaks the tie.
        assert_eq!(ranked[0].option, "combined");
        assert_eq!(ranked[1].option, "rta");
        assert_eq!(ranked[2].option, "tmr");
        assert!((ranked[0].total - 2.3).abs() < 1e-12);

        // Scaling all weights preserves the ranking.
        let mut scaled = matrix.clone();
        for a in &mut scaled.attributes {
            a.weight *= 7.5;
        }
        let ranked2 = score_tradeoffs(&scaled).unwrap();
        let names: Vec<_> = ranked.iter().map(|r| &r.option).collect();
        let names2: Vec<_> = ranked2.iter().map(|r| &r.option).collect();
        assert_eq!(names, names2);
    }

    #[test]
    fn tradeoff_rejects_bad_matrices() {
        let base = TradeMatrix {
            options: vec!["a".into()],
            attributes: vec![Attribute {
                name: "x".into(),
                weight: 0.0,
            }],
            scores: vec![vec![1.0]],
        };
        assert!(score_tradeoffs(&base).is_err(), "all-zero weights");
        let mut negative = base.clone();
        negative.attributes[0].weight = -1.0;
        assert!(score_tradeoffs(&negative).is_err());
        let mut ragged = base;
        ragged.attributes[0].weight = 1.0;
        ragged.scores = vec![vec![1.0, 2.0]];
        assert!(score_tradeoffs(&ragged).is_err());
    }
}
