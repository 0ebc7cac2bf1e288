//! Which interaction entries must vanish for an exact `S -> s` reduction, and
//! a search over species orderings for a model that satisfies them.
//!
//! Positions `0..s` of an ordering hold retained species, positions `s..S`
//! hold eliminated ones. Species are eliminated from the last position down
//! to position `s`; the species at position `m` is solved out of the row at
//! position `m - 1` (the pivot chain). The row at position `i` must then have
//! zeros in every column `j > i + 1`, for rows `s-1 ..= S-3` (0-based).

use std::fmt;

use itertools::Itertools;
use num_rational::Ratio;
use serde::ser::{SerializeStruct, Serializer};
use serde::Serialize;
use thiserror::Error;

use crate::model::GlvModel;

/// Largest number of eliminated species searched exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReducibilityError {
    #[error("species counts out of range: S = {total}, s = {retained}")]
    Counts { total: usize, retained: usize },
    #[error("alpha = {0} outside [0, 1]")]
    AlphaRange(f64),
    #[error("rho curve needs at least 2 points, got {0}")]
    CurvePoints(usize),
    #[error("invalid retained set: {0}")]
    Retained(String),
    #[error(
        "{eliminated} eliminated species exceeds the exhaustive search limit of {EXHAUSTIVE_LIMIT}; \
         use the greedy heuristic explicitly"
    )]
    Budget { eliminated: usize },
}

/// A matrix entry, 0-based. Displays 1-based as `(i,j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Entry {
    pub row: usize,
    pub col: usize,
}

impl Entry {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for Entry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row + 1, self.col + 1)
    }
}

impl Serialize for Entry {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.row + 1, self.col + 1].serialize(s)
    }
}

fn check_counts(total: usize, retained: usize) -> Result<(), ReducibilityError> {
    if retained == 0 || retained > total {
        return Err(ReducibilityError::Counts { total, retained });
    }
    Ok(())
}

/// Entries (in position coordinates) that must be zero to reduce `total`
/// species to `retained`.
pub fn zero_set(total: usize, retained: usize) -> Result<Vec<Entry>, ReducibilityError> {
    check_counts(total, retained)?;
    let mut out = Vec::new();
    // rows s..=S-2 in 1-based terms
    for i in (retained - 1)..total.saturating_sub(2) {
        for j in (i + 2)..total {
            out.push(Entry::new(i, j));
        }
    }
    Ok(out)
}

/// Fraction of interaction entries that must vanish.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rho {
    pub exact: Ratio<u64>,
    pub value: f64,
}

impl fmt::Display for Rho {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} ≈ {:.6}", self.exact.numer(), self.exact.denom(), self.value)
    }
}

/// `(k-1) k / (2 S^2)` with `k = S - s`, as an exact reduced fraction.
/// Accepts `s = 0`, where the count is still defined.
pub fn rho(total: usize, retained: usize) -> Result<Rho, ReducibilityError> {
    if total == 0 || retained > total {
        return Err(ReducibilityError::Counts { total, retained });
    }
    let k = (total - retained) as u64;
    let count = k * k.saturating_sub(1) / 2;
    let exact = Ratio::new(count, (total as u64) * (total as u64));
    let value = *exact.numer() as f64 / *exact.denom() as f64;
    Ok(Rho { exact, value })
}

/// Large-`S` limit of `rho` at retention ratio `alpha = s / S`: `(1 - alpha)^2 / 2`.
pub fn rho_limit(alpha: f64) -> Result<f64, ReducibilityError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ReducibilityError::AlphaRange(alpha));
    }
    let r = 1.0 - alpha;
    Ok(0.5 * r * r)
}

/// `n_points` rows `(alpha, rho_limit(alpha))` on a uniform grid over `[0, 1]`.
pub fn rho_curve(n_points: usize) -> Result<Vec<(f64, f64)>, ReducibilityError> {
    if n_points < 2 {
        return Err(ReducibilityError::CurvePoints(n_points));
    }
    let last = (n_points - 1) as f64;
    (0..n_points)
        .map(|i| {
            let alpha = if i == n_points - 1 { 1.0 } else { i as f64 / last };
            rho_limit(alpha).map(|r| (alpha, r))
        })
        .collect()
}

/// CSV rendering of a rho curve with header `alpha,rho_limit`.
pub fn rho_curve_csv(rows: &[(f64, f64)]) -> String {
    let mut out = String::from("alpha,rho_limit\n");
    for (a, r) in rows {
        out.push_str(&format!("{a:?},{r:?}\n"));
    }
    out
}

/// Why a plan fails on a particular model. Entries are in position coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum PlanViolation {
    NonzeroRequired {
        at: Entry,
        species: Entry,
        value: f64,
    },
    ZeroPivot {
        at: Entry,
        species: Entry,
    },
}

impl PlanViolation {
    /// The offending entry in original species coordinates.
    pub fn species_entry(&self) -> Entry {
        match self {
            Self::NonzeroRequired { species, .. } | Self::ZeroPivot { species, .. } => *species,
        }
    }
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonzeroRequired { species, value, .. } => {
                write!(f, "a{species} = {value} must be zero")
            }
            Self::ZeroPivot { species, .. } => write!(f, "pivot a{species} is zero"),
        }
    }
}

impl Serialize for PlanViolation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("PlanViolation", 4)?;
        match self {
            Self::NonzeroRequired { at, species, value } => {
                st.serialize_field("kind", "nonzero_required")?;
                st.serialize_field("entry", species)?;
                st.serialize_field("position", at)?;
                st.serialize_field("value", value)?;
            }
            Self::ZeroPivot { at, species } => {
                st.serialize_field("kind", "zero_pivot")?;
                st.serialize_field("entry", species)?;
                st.serialize_field("position", at)?;
                st.serialize_field("value", &0.0)?;
            }
        }
        st.end()
    }
}

/// One link of the pivot chain, in position coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pivot {
    pub eliminated: usize,
    pub row: usize,
}

/// Species ordering plus the zero requirements of the canonical pivot chain.
#[derive(Debug, Clone, PartialEq)]
pub struct EliminationPlan {
    /// `ordering[position] = species`.
    pub ordering: Vec<usize>,
    pub retained: usize,
    pub required_zeros: Vec<Entry>,
    /// `None` until assessed against a model.
    pub feasible: Option<bool>,
    pub violations: Vec<PlanViolation>,
}

/// Identity-ordered plan for reducing `total` species to the first `retained`.
pub fn build_plan_canonical(total: usize, retained: usize) -> Result<EliminationPlan, ReducibilityError> {
    Ok(EliminationPlan {
        ordering: (0..total).collect(),
        retained,
        required_zeros: zero_set(total, retained)?,
        feasible: None,
        violations: Vec::new(),
    })
}

impl EliminationPlan {
    /// Plan with an explicit ordering. `ordering` must be a permutation of `0..S`.
    pub fn with_ordering(ordering: Vec<usize>, retained: usize) -> Result<Self, ReducibilityError> {
        let total = ordering.len();
        let mut seen = vec![false; total];
        for &sp in &ordering {
            if sp >= total || std::mem::replace(&mut seen[sp], true) {
                return Err(ReducibilityError::Retained(format!(
                    "ordering {ordering:?} is not a permutation"
                )));
            }
        }
        Ok(Self {
            ordering,
            retained,
            required_zeros: zero_set(total, retained)?,
            feasible: None,
            violations: Vec::new(),
        })
    }

    pub fn total(&self) -> usize {
        self.ordering.len()
    }

    pub fn eliminated_count(&self) -> usize {
        self.total() - self.retained
    }

    /// Retained species in position order.
    pub fn retained_species(&self) -> &[usize] {
        &self.ordering[..self.retained]
    }

    /// Pivot links in elimination order (last position first).
    pub fn pivots(&self) -> Vec<Pivot> {
        (self.retained..self.total())
            .rev()
            .map(|m| Pivot { eliminated: m, row: m - 1 })
            .collect()
    }

    fn species_entry(&self, at: Entry) -> Entry {
        Entry::new(self.ordering[at.row], self.ordering[at.col])
    }

    /// Checks the plan against `model` with exact-zero semantics.
    pub fn assess(mut self, model: &GlvModel) -> Self {
        let mut violations = Vec::new();
        for p in self.pivots().into_iter().rev() {
            let at = Entry::new(p.row, p.eliminated);
            let species = self.species_entry(at);
            if model.a(species.row, species.col) == 0.0 {
                violations.push(PlanViolation::ZeroPivot { at, species });
            }
        }
        for &at in &self.required_zeros {
            let species = self.species_entry(at);
            let value = model.a(species.row, species.col);
            if value != 0.0 {
                violations.push(PlanViolation::NonzeroRequired { at, species, value });
            }
        }
        self.feasible = Some(violations.is_empty());
        self.violations = violations;
        self
    }
}

impl Serialize for EliminationPlan {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let one_based = |v: &[usize]| v.iter().map(|i| i + 1).collect::<Vec<_>>();
        let eliminated: Vec<usize> = self.pivots().iter().map(|p| self.ordering[p.eliminated] + 1).collect();
        let pivots: Vec<Entry> = self
            .pivots()
            .iter()
            .map(|p| self.species_entry(Entry::new(p.row, p.eliminated)))
            .collect();
        let zeros: Vec<Entry> = self.required_zeros.iter().map(|e| self.species_entry(*e)).collect();
        let mut st = s.serialize_struct("EliminationPlan", 7)?;
        st.serialize_field("ordering", &one_based(&self.ordering))?;
        st.serialize_field("retained", &one_based(self.retained_species()))?;
        st.serialize_field("elimination_order", &eliminated)?;
        st.serialize_field("pivots", &pivots)?;
        st.serialize_field("required_zeros", &zeros)?;
        st.serialize_field("feasible", &self.feasible)?;
        st.serialize_field("violations", &self.violations)?;
        st.end()
    }
}

/// How orderings are searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchStrategy {
    /// Every ordering; refused above [`EXHAUSTIVE_LIMIT`] eliminated species.
    Exhaustive,
    /// One ordering of the eliminated species, sorted by how many nonzero
    /// entries each has towards the other eliminated species.
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducibilityReport {
    #[serde(rename = "S")]
    pub total: usize,
    #[serde(rename = "s")]
    pub retained: usize,
    pub k: usize,
    pub alpha: f64,
    pub zero_set_size: usize,
    pub rho_exact: String,
    pub rho: f64,
    pub rho_limit: f64,
    pub feasible: bool,
    /// Feasible plan, or the plan with the fewest violations.
    pub plan: EliminationPlan,
    pub orderings_examined: u64,
    pub exhaustive: bool,
}

/// Searches orderings compatible with the pivot chain for one that `model`
/// satisfies exactly.
///
/// The retained species other than the one at position `s-1` keep ascending
/// order (their rows carry no requirements). Eliminated permutations are
/// visited in lexicographic order; for each, the candidates for position
/// `s-1` are tried by decreasing `|pivot|`, then by index. The first feasible
/// ordering wins; otherwise the first ordering with the fewest violations is
/// returned as witness.
pub fn check_reducible(
    model: &GlvModel,
    retained: &[usize],
    strategy: SearchStrategy,
) -> Result<ReducibilityReport, ReducibilityError> {
    let total = model.dim();
    let mut kept = retained.to_vec();
    kept.sort_unstable();
    if kept.windows(2).any(|w| w[0] == w[1]) {
        return Err(ReducibilityError::Retained(format!("duplicate species in {retained:?}")));
    }
    if let Some(&bad) = kept.iter().find(|&&i| i >= total) {
        return Err(ReducibilityError::Retained(format!(
            "species {} does not exist in a {total}-species model",
            bad + 1
        )));
    }
    let s = kept.len();
    check_counts(total, s)?;
    let k = total - s;
    if k > EXHAUSTIVE_LIMIT && strategy == SearchStrategy::Exhaustive {
        return Err(ReducibilityError::Budget { eliminated: k });
    }
    let eliminated: Vec<usize> = (0..total).filter(|i| kept.binary_search(i).is_err()).collect();

    let rho_v = rho(total, s)?;
    let mut report = ReducibilityReport {
        total,
        retained: s,
        k,
        alpha: s as f64 / total as f64,
        zero_set_size: k * k.saturating_sub(1) / 2,
        rho_exact: format!("{}/{}", rho_v.exact.numer(), rho_v.exact.denom()),
        rho: rho_v.value,
        rho_limit: rho_limit(s as f64 / total as f64)?,
        feasible: false,
        plan: build_plan_canonical(total, s)?,
        orderings_examined: 0,
        exhaustive: strategy == SearchStrategy::Exhaustive,
    };

    if k == 0 {
        report.plan = EliminationPlan::with_ordering(kept, s)?.assess(model);
        report.feasible = true;
        report.orderings_examined = 1;
        return Ok(report);
    }

    let a = |i: usize, j: usize| model.a(i, j);
    // violations inside the eliminated block, independent of the position-(s-1) choice
    let block_violations = |perm: &[usize]| -> usize {
        let mut n = 0;
        for t in 0..perm.len().saturating_sub(1) {
            if a(perm[t], perm[t + 1]) == 0.0 {
                n += 1;
            }
            for u in (t + 2)..perm.len() {
                if a(perm[t], perm[u]) != 0.0 {
                    n += 1;
                }
            }
        }
        n
    };
    let head_violations = |c: usize, perm: &[usize]| -> usize {
        usize::from(a(c, perm[0]) == 0.0) + perm[1..].iter().filter(|&&e| a(c, e) != 0.0).count()
    };

    let perms: Box<dyn Iterator<Item = Vec<usize>>> = match strategy {
        SearchStrategy::Exhaustive => Box::new(eliminated.iter().copied().permutations(k)),
        SearchStrategy::Greedy => Box::new(std::iter::once(greedy_order(model, &eliminated))),
    };

    let mut best: Option<(usize, usize, Vec<usize>)> = None;
    let mut examined = 0u64;
    let mut found = None;
    'search: for perm in perms {
        let block = block_violations(&perm);
        let mut candidates = kept.clone();
        candidates.sort_by(|&x, &y| {
            a(y, perm[0]).abs().total_cmp(&a(x, perm[0]).abs()).then(x.cmp(&y))
        });
        for c in candidates {
            examined += 1;
            let n = block + head_violations(c, &perm);
            if n == 0 {
                found = Some((c, perm));
                break 'search;
            }
            if best.as_ref().map_or(true, |(bn, _, _)| n < *bn) {
                best = Some((n, c, perm.clone()));
            }
        }
    }

    let (head, perm) = match found {
        Some(f) => f,
        None => {
            let (_, c, p) = best.expect("at least one ordering examined");
            (c, p)
        }
    };
    let mut ordering: Vec<usize> = kept.iter().copied().filter(|&i| i != head).collect();
    ordering.push(head);
    ordering.extend(perm);
    report.plan = EliminationPlan::with_ordering(ordering, s)?.assess(model);
    report.feasible = report.plan.feasible == Some(true);
    report.orderings_examined = examined;
    Ok(report)
}

/// Places eliminated species one position at a time, each time taking the
/// unplaced species with the fewest nonzero entries towards the other unplaced
/// species. Ties prefer a species the previous one has a nonzero entry for
/// (its pivot), then the lower index.
fn greedy_order(model: &GlvModel, eliminated: &[usize]) -> Vec<usize> {
    let mut left = eliminated.to_vec();
    let mut order: Vec<usize> = Vec::with_capacity(left.len());
    while !left.is_empty() {
        let key = |e: usize| {
            let forward = left.iter().filter(|&&f| f != e && model.a(e, f) != 0.0).count();
            let not_pivot = order.last().map_or(false, |&p| model.a(p, e) == 0.0);
            (forward, not_pivot, e)
        };
        let (idx, _) = left
            .iter()
            .enumerate()
            .min_by_key(|(_, &e)| key(e))
            .expect("non-empty");
        order.push(left.remove(idx));
    }
    order
}
