use serde::{Deserialize, Serialize};

use super::edit::{edit_contextual, insert_sanction, ConstantLabel, ContextLabeler};
use super::report::{CertificationReport, GridPoint, Inequality, InequalityStatus, Verdict};
use super::{ActionFrame, CertifyError, FrameClasses, Result};
use crate::actor::{Actor, Slot};
use crate::backend::Estimate;
use crate::rng;
use crate::seq::{ActorId, Sequence, Valence};

pub(crate) fn resolve(actor: &Actor, frame: &ActionFrame) -> Result<FrameClasses> {
    let backend = actor.backend.read().unwrap_or_else(|e| e.into_inner());
    frame.resolve(Some(&**backend))
}

/// Frame-normalized policy probability summed per ε-class. `pin` is placed
/// in front of the policy context as the actor's context label.
pub fn action_class_prob(
    actor: &Actor,
    frame: &ActionFrame,
    classes: &FrameClasses,
    pin: Option<&Sequence>,
    seed: u64,
) -> Result<Vec<Estimate>> {
    let mut pinned;
    let actor = match pin {
        Some(c) => {
            pinned = actor.clone();
            pinned.pinned.insert(0, c.clone());
            &pinned
        }
        None => actor,
    };
    let ws = actor.run_summary_chain(&frame.observation, seed)?;
    let slot = match &frame.preceding_action {
        Some(rec) => Slot::Reaction(rec.clone()),
        None => Slot::Action,
    };
    let per = actor.candidate_probabilities(&ws, &frame.candidates, &slot, seed)?;
    let mut value = vec![0.0; classes.count];
    let mut var = vec![0.0; classes.count];
    let mut exact = true;
    for (i, e) in per.iter().enumerate() {
        value[classes.class_of[i]] += e.value;
        if let Some(se) = e.std_error {
            exact = false;
            var[classes.class_of[i]] += se * se;
        }
    }
    Ok(value
        .into_iter()
        .zip(var)
        .map(|(v, s)| Estimate { value: v, std_error: (!exact).then(|| s.sqrt()) })
        .collect())
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(CertifyError::Config("empty f grid".into()));
    }
    if grid.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(CertifyError::Config("grid fractions must lie in (0, 1]".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CertifyError::Config("grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Settings shared by the convention and reproduction procedures.
#[derive(Clone, Copy)]
pub struct ConventionOptions<'a> {
    pub f_grid: &'a [f64],
    /// Labels stored observations; records whose label differs from the
    /// frame's context label are never edited. Defaults to labeling every
    /// record with the frame's label.
    pub labeler: Option<&'a dyn ContextLabeler>,
    pub seed: u64,
}

impl<'a> ConventionOptions<'a> {
    pub fn new(f_grid: &'a [f64], seed: u64) -> Self {
        Self { f_grid, labeler: None, seed }
    }
}

struct Sweep {
    classes: FrameClasses,
    baseline: Vec<Estimate>,
    grid: Vec<GridPoint>,
    full: GridPoint,
}

fn sweep(actor: &Actor, frame: &ActionFrame, opts: &ConventionOptions) -> Result<Sweep> {
    validate_grid(opts.f_grid)?;
    let classes = resolve(actor, frame)?;
    let label = frame.context_label.clone().unwrap_or_else(Sequence::empty);
    let fallback = ConstantLabel(label.clone());
    let labeler = opts.labeler.unwrap_or(&fallback);
    let pin = frame.context_label.as_ref();
    let baseline = action_class_prob(actor, frame, &classes, pin, rng::derive(opts.seed, &[&"baseline"]))?;
    let point = |f: f64, k: usize| -> Result<GridPoint> {
        let (memory, edits) = edit_contextual(
            &actor.memory,
            frame,
            &classes,
            labeler,
            &label,
            f,
            rng::derive(opts.seed, &[&"edit", &k]),
        )?;
        let p = action_class_prob(&actor.with_memory(memory), frame, &classes, pin, rng::derive(opts.seed, &[&"grid", &k]))?;
        Ok(GridPoint { f, edits, p_action: p[classes.action_class], p_alternative: p[classes.alternative_class] })
    };
    let grid = opts.f_grid.iter().enumerate().map(|(k, &f)| point(f, k)).collect::<Result<Vec<_>>>()?;
    let full = match grid.last() {
        Some(g) if g.f == 1.0 => g.clone(),
        _ => point(1.0, opts.f_grid.len())?,
    };
    Ok(Sweep { classes, baseline, grid, full })
}

/// Grid points with distinct edit counts; points that edit the same number
/// of records are the same counterfactual and cannot differ in weight.
fn distinct(grid: &[GridPoint]) -> Vec<&GridPoint> {
    let mut out: Vec<&GridPoint> = Vec::new();
    for g in grid {
        if out.last().map_or(true, |l| l.edits != g.edits) {
            out.push(g);
        }
    }
    out
}

fn min_gain(grid: &[GridPoint]) -> Option<f64> {
    distinct(grid).windows(2).map(|w| w[1].p_alternative.value - w[0].p_alternative.value).reduce(f64::min)
}

fn monotone_checks(grid: &[GridPoint]) -> Vec<Inequality> {
    let points = distinct(grid);
    let mut out: Vec<Inequality> = points
        .windows(2)
        .map(|w| {
            Inequality::less_than(
                format!("p_alternative(f={}) < p_alternative(f={})", w[0].f, w[1].f),
                w[0].p_alternative,
                w[1].p_alternative,
                true,
            )
        })
        .collect();
    if let (Some(first), Some(last)) = (points.first(), points.last()) {
        if points.len() > 1 {
            out.push(Inequality::less_than("overall increase of p_alternative", first.p_alternative, last.p_alternative, false));
        }
    }
    out
}

/// Context-free sensitivity when the frame has no context label,
/// contextual sensitivity otherwise.
pub fn certify_convention_sensitivity(
    actor: &Actor,
    frame: &ActionFrame,
    opts: &ConventionOptions,
) -> Result<CertificationReport> {
    let kind = "convention";
    let s = match sweep(actor, frame, opts) {
        Err(CertifyError::NoMatchingRecords) => {
            return Ok(CertificationReport::inconclusive(kind, "memory holds no record matching the frame"))
        }
        other => other?,
    };
    let mut checks = vec![
        Inequality::less_than("p_action(edited) < p_action(original)", s.full.p_action, s.baseline[s.classes.action_class], true),
        Inequality::less_than("p_action(edited) < p_alternative(edited)", s.full.p_action, s.full.p_alternative, true),
    ];
    checks.extend(monotone_checks(&s.grid));
    let mut report = CertificationReport::from_inequalities(kind, checks);
    report.delta = min_gain(&s.grid);
    if s.full.edits == 0 {
        report.notes.push("no record carried the frame's context label; nothing was edited".into());
    }
    report.grid = s.grid;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproductionReport {
    pub reproduced: bool,
    pub f_min: Option<f64>,
    pub report: CertificationReport,
}

/// Whether the action is reproduced due to the weight of precedent at
/// threshold `r`, with the smallest grid fraction that lets the alternative
/// cross `r`. Fails with `NotReproduced` when no grid point crosses.
pub fn certify_reproduction(
    actor: &Actor,
    frame: &ActionFrame,
    r: f64,
    opts: &ConventionOptions,
) -> Result<ReproductionReport> {
    if !(r > 0.0 && r < 1.0) {
        return Err(CertifyError::Config(format!("threshold {r} outside (0, 1)")));
    }
    let s = sweep(actor, frame, opts)?;
    let threshold = Estimate::exact(r);
    let crossing = s
        .grid
        .iter()
        .position(|g| Inequality::less_than("", threshold, g.p_alternative, true).holds());
    let Some(k) = crossing else {
        let best = s.grid.iter().map(|g| g.p_alternative.value).fold(f64::NEG_INFINITY, f64::max);
        return Err(CertifyError::NotReproduced { best });
    };
    let mut checks = vec![
        Inequality::less_than("r < p_action(original)", threshold, s.baseline[s.classes.action_class], true),
        Inequality::less_than(
            format!("r < p_alternative(f={})", s.grid[k].f),
            threshold,
            s.grid[k].p_alternative,
            true,
        ),
    ];
    checks.extend(monotone_checks(&s.grid));
    let mut report = CertificationReport::from_inequalities("reproduction", checks);
    report.threshold = Some(r);
    report.f_min = Some(s.grid[k].f);
    report.delta = min_gain(&s.grid);
    report.grid = s.grid;
    Ok(ReproductionReport { reproduced: report.verdict == Verdict::Certified, f_min: report.f_min, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanctionOptions {
    pub sanctioner: ActorId,
    pub signal: Sequence,
    pub valence: Valence,
    /// Number of matching records that receive the sanction.
    #[serde(default = "one")]
    pub count: usize,
    /// Pin the frame's context label while measuring.
    #[serde(default)]
    pub contextual: bool,
}

fn one() -> usize {
    1
}

/// Compares p(a-class) before and after sanctioning matching records:
/// negative sanctions must lower it, positive ones raise it.
pub fn certify_sanction_sensitivity(
    actor: &Actor,
    frame: &ActionFrame,
    opts: &SanctionOptions,
    seed: u64,
) -> Result<CertificationReport> {
    let kind = "sanction";
    let classes = resolve(actor, frame)?;
    let pin = if opts.contextual {
        Some(frame.context_label.as_ref().ok_or_else(|| CertifyError::Config("contextual check needs a context label".into()))?)
    } else {
        None
    };
    let edited = match insert_sanction(&actor.memory, frame, &classes, &opts.sanctioner, &opts.signal, opts.count, rng::derive(seed, &[&"sanction"])) {
        Err(CertifyError::InsufficientMatches { found: 0, .. }) => {
            return Ok(CertificationReport::inconclusive(kind, "memory holds no record matching the frame"))
        }
        other => other?,
    };
    let before = action_class_prob(actor, frame, &classes, pin, rng::derive(seed, &[&"before"]))?[classes.action_class];
    let after =
        action_class_prob(&actor.with_memory(edited), frame, &classes, pin, rng::derive(seed, &[&"after"]))?[classes.action_class];
    let check = match opts.valence {
        Valence::Negative => Inequality::less_than("p_action(sanctioned) < p_action(original)", after, before, true),
        Valence::Positive => Inequality::less_than("p_action(original) < p_action(sanctioned)", before, after, true),
    };
    let mut report = CertificationReport::from_inequalities(kind, vec![check]);
    if report.inequalities[0].status == InequalityStatus::Undecided {
        report.notes.push("Monte-Carlo margin below two standard errors".into());
    }
    Ok(report)
}
