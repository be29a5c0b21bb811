use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::weights::{coordinate_pair, WeightVector};
use super::AttackError;
use crate::loss::AttackGoal;
use crate::nn::Model;
use crate::oracle::{is_success, LabelMode, Oracle};
use crate::pm::{pm_run, PmConfig};
use crate::rng;
use crate::tensor::Tensor;

/// How the next coordinate is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CoordinateOrder {
    Cyclic,
    /// Cycle through a seeded permutation of the surrogates.
    Random {
        seed: u64,
    },
}

/// Which states compete when accepting a new weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectRule {
    /// Best of `w⁺` and `w⁻`.
    PaperTwoWay,
    /// Best of the incumbent, `w⁺` and `w⁻`; accepted loss never increases.
    MonotoneThreeWay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub max_queries: usize,
    pub eta: f64,
    pub order: CoordinateOrder,
    pub select_rule: SelectRule,
    pub pm: PmConfig,
}

impl SearchConfig {
    /// Q = 50, η = 1/(10N), cyclic order, monotone selection.
    pub fn new(num_surrogates: usize, pm: PmConfig) -> Self {
        Self {
            max_queries: 50,
            eta: default_eta(num_surrogates),
            order: CoordinateOrder::Cyclic,
            select_rule: SelectRule::MonotoneThreeWay,
            pm,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if self.max_queries == 0 {
            return Err(AttackError::Config("max_queries must be at least 1".into()));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(AttackError::Config(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        self.pm.validate()?;
        Ok(())
    }
}

/// One tenth of the average weight.
pub fn default_eta(num_surrogates: usize) -> f64 {
    1.0 / (10.0 * num_surrogates as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateTag {
    Init,
    Plus,
    Minus,
}

impl CandidateTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            CandidateTag::Init => "init",
            CandidateTag::Plus => "plus",
            CandidateTag::Minus => "minus",
        }
    }
}

/// One victim query made by an attack.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    /// 1-based position in the attack's query sequence.
    pub index: usize,
    pub coordinate: Option<usize>,
    pub tag: CandidateTag,
    pub weights: Vec<f64>,
    /// Absent for hard-label victims.
    pub victim_loss: Option<f64>,
    pub success: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Incumbent,
    Plus,
    Minus,
}

/// One outer iteration of the weight search.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub coordinate: usize,
    /// The perturbation both candidate PM runs were warm-started from.
    pub delta_init: Tensor,
    pub choice: Choice,
    pub accepted_weights: Vec<f64>,
    pub accepted_delta: Tensor,
    pub accepted_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub success: bool,
    /// The successful perturbation, or the last accepted one on failure.
    pub delta: Tensor,
    pub queries: usize,
    pub weights: Option<WeightVector>,
    pub records: Vec<QueryRecord>,
    pub iterations: Vec<IterationRecord>,
}

impl AttackOutcome {
    /// CSV with columns `query_index,coordinate,candidate_tag,victim_loss,success_flag`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "query_index",
            "coordinate",
            "candidate_tag",
            "victim_loss",
            "success_flag",
        ])?;
        for r in &self.records {
            w.write_record([
                r.index.to_string(),
                r.coordinate.map(|c| c.to_string()).unwrap_or_default(),
                r.tag.as_str().to_string(),
                r.victim_loss.map(|l| format!("{l}")).unwrap_or_default(),
                u8::from(r.success).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Coordinate schedule for the outer loop.
pub(crate) struct Schedule {
    order: Vec<usize>,
    next: usize,
}

impl Schedule {
    pub(crate) fn new(n: usize, order: CoordinateOrder) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        if let CoordinateOrder::Random { seed } = order {
            idx.shuffle(&mut rng::stream(seed, "coordinate-order"));
        }
        Self {
            order: idx,
            next: 0,
        }
    }

    pub(crate) fn next(&mut self) -> usize {
        let n = self.order[self.next % self.order.len()];
        self.next += 1;
        n
    }
}

/// Options for the shared search loop.
pub(crate) struct LoopOptions {
    pub stop_on_success: bool,
}

struct Candidate {
    weights: WeightVector,
    delta: Tensor,
    loss: f64,
}

/// The outer weight search. `on_query` sees every queried perturbation.
pub(crate) fn search_loop<F>(
    x: &Tensor,
    goal: &AttackGoal,
    oracle: &mut Oracle,
    surrogates: &[Model],
    cfg: &SearchConfig,
    opts: LoopOptions,
    mut on_query: F,
) -> Result<AttackOutcome, AttackError>
where
    F: FnMut(&Tensor, &WeightVector, Option<usize>, CandidateTag),
{
    cfg.validate()?;
    if surrogates.is_empty() {
        return Err(AttackError::Config("empty surrogate ensemble".into()));
    }
    if oracle.meta().mode != LabelMode::Soft {
        return Err(AttackError::Config(
            "weight search needs a soft-label oracle".into(),
        ));
    }
    if goal.label >= oracle.meta().num_classes {
        return Err(AttackError::Config(format!(
            "goal label {} out of range for a {}-class victim",
            goal.label,
            oracle.meta().num_classes
        )));
    }

    let n = surrogates.len();
    let mut outcome = AttackOutcome {
        success: false,
        delta: Tensor::zeros(x.shape()),
        queries: 0,
        weights: Some(WeightVector::uniform(n)),
        records: Vec::new(),
        iterations: Vec::new(),
    };

    // Evaluates one candidate: PM run, one query, bookkeeping.
    let mut evaluate = |outcome: &mut AttackOutcome,
                        weights: WeightVector,
                        delta_init: &Tensor,
                        coordinate: Option<usize>,
                        tag: CandidateTag|
     -> Result<(Candidate, bool), AttackError> {
        let pm = pm_run(x, goal, surrogates, weights.as_slice(), delta_init, &cfg.pm)?;
        let resp = match oracle.query(&pm.x_star, Some(goal)) {
            Ok(r) => r,
            Err(e) => {
                return Err(AttackError::Oracle {
                    source: e,
                    partial: Box::new(outcome.clone()),
                })
            }
        };
        let logits = resp.logits().ok_or_else(|| {
            AttackError::Config("oracle returned a hard label to a soft-label attack".into())
        })?;
        let loss = cfg.pm.loss.value(logits, goal)?;
        let success = is_success(&resp, goal);
        outcome.queries += 1;
        outcome.records.push(QueryRecord {
            index: outcome.queries,
            coordinate,
            tag,
            weights: weights.as_slice().to_vec(),
            victim_loss: Some(loss),
            success,
        });
        on_query(&pm.delta, &weights, coordinate, tag);
        Ok((
            Candidate {
                weights,
                delta: pm.delta,
                loss,
            },
            success,
        ))
    };

    let zero = Tensor::zeros(x.shape());
    let (mut current, ok) = evaluate(
        &mut outcome,
        WeightVector::uniform(n),
        &zero,
        None,
        CandidateTag::Init,
    )?;
    let finish = |mut outcome: AttackOutcome, c: &Candidate, success: bool| {
        outcome.success = outcome.success || success;
        outcome.delta = c.delta.clone();
        outcome.weights = Some(c.weights.clone());
        outcome
    };
    if ok {
        outcome.success = true;
        if opts.stop_on_success {
            return Ok(finish(outcome, &current, true));
        }
    }

    let mut schedule = Schedule::new(n, cfg.order);
    while outcome.queries < cfg.max_queries {
        let coord = schedule.next();
        let (w_plus, w_minus) = coordinate_pair(&current.weights, coord, cfg.eta);
        let delta_init = current.delta.clone();

        let (plus, ok) = evaluate(
            &mut outcome,
            w_plus,
            &delta_init,
            Some(coord),
            CandidateTag::Plus,
        )?;
        if ok {
            outcome.success = true;
            if opts.stop_on_success {
                return Ok(finish(outcome, &plus, true));
            }
        }
        let minus = if outcome.queries < cfg.max_queries {
            let (minus, ok) = evaluate(
                &mut outcome,
                w_minus,
                &delta_init,
                Some(coord),
                CandidateTag::Minus,
            )?;
            if ok {
                outcome.success = true;
                if opts.stop_on_success {
                    return Ok(finish(outcome, &minus, true));
                }
            }
            Some(minus)
        } else {
            None
        };

        // Ties prefer the incumbent, then w⁺, then w⁻.
        let mut choice = match cfg.select_rule {
            SelectRule::MonotoneThreeWay => Choice::Incumbent,
            SelectRule::PaperTwoWay => Choice::Plus,
        };
        let mut best = match choice {
            Choice::Incumbent => current.loss,
            _ => plus.loss,
        };
        if choice == Choice::Incumbent && plus.loss < best {
            choice = Choice::Plus;
            best = plus.loss;
        }
        if let Some(m) = &minus {
            if m.loss < best {
                choice = Choice::Minus;
            }
        }
        current = match choice {
            Choice::Incumbent => current,
            Choice::Plus => plus,
            Choice::Minus => minus.expect("minus chosen only when evaluated"),
        };
        outcome.iterations.push(IterationRecord {
            coordinate: coord,
            delta_init,
            choice,
            accepted_weights: current.weights.as_slice().to_vec(),
            accepted_delta: current.delta.clone(),
            accepted_loss: current.loss,
        });
    }
    let success = outcome.success;
    Ok(finish(outcome, &current, success))
}

/// Blackbox attack by coordinate-wise search over surrogate-ensemble weights.
///
/// Starts from equal weights and `δ = 0`; every later PM run is warm-started
/// from the accepted perturbation. Stops at the first successful query or
/// once `max_queries` queries have been issued.
pub fn bases_attack(
    x: &Tensor,
    goal: &AttackGoal,
    oracle: &mut Oracle,
    surrogates: &[Model],
    cfg: &SearchConfig,
) -> Result<AttackOutcome, AttackError> {
    search_loop(
        x,
        goal,
        oracle,
        surrogates,
        cfg,
        LoopOptions {
            stop_on_success: true,
        },
        |_, _, _, _| {},
    )
}
