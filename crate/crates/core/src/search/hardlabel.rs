use super::bases::{
    search_loop, AttackOutcome, CandidateTag, LoopOptions, QueryRecord, SearchConfig,
};
use super::weights::WeightVector;
use super::AttackError;
use crate::loss::AttackGoal;
use crate::nn::Model;
use crate::oracle::{is_success, LabelMode, Oracle};
use crate::tensor::Tensor;

/// A stored query for a hard-label victim, with the weights that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySetEntry {
    pub delta: Tensor,
    pub weights: WeightVector,
    pub coordinate: Option<usize>,
    pub tag: CandidateTag,
}

/// Runs the score-based search against a whitebox stand-in victim for
/// exactly `max_queries` queries without stopping on success, keeping every
/// queried perturbation in order.
pub fn hardlabel_queryset(
    x: &Tensor,
    goal: &AttackGoal,
    surrogate_victim: &Model,
    surrogates: &[Model],
    cfg: &SearchConfig,
) -> Result<Vec<QuerySetEntry>, AttackError> {
    let mut oracle = Oracle::local(surrogate_victim.clone(), LabelMode::Soft);
    let mut set = Vec::with_capacity(cfg.max_queries);
    search_loop(
        x,
        goal,
        &mut oracle,
        surrogates,
        cfg,
        LoopOptions {
            stop_on_success: false,
        },
        |delta, weights, coordinate, tag| {
            set.push(QuerySetEntry {
                delta: delta.clone(),
                weights: weights.clone(),
                coordinate,
                tag,
            })
        },
    )?;
    Ok(set)
}

/// Replays a stored query set against a label-only oracle in order,
/// stopping at the first success.
pub fn hardlabel_attack(
    x: &Tensor,
    goal: &AttackGoal,
    queryset: &[QuerySetEntry],
    oracle: &mut Oracle,
) -> Result<AttackOutcome, AttackError> {
    if queryset.is_empty() {
        return Err(AttackError::Config("empty query set".into()));
    }
    let mut outcome = AttackOutcome {
        success: false,
        delta: queryset[0].delta.clone(),
        queries: 0,
        weights: None,
        records: Vec::new(),
        iterations: Vec::new(),
    };
    for entry in queryset {
        let image = x.add(&entry.delta)?;
        let resp = match oracle.query(&image, Some(goal)) {
            Ok(r) => r,
            Err(e) => {
                return Err(AttackError::Oracle {
                    source: e,
                    partial: Box::new(outcome),
                })
            }
        };
        let success = is_success(&resp, goal);
        outcome.queries += 1;
        outcome.records.push(QueryRecord {
            index: outcome.queries,
            coordinate: entry.coordinate,
            tag: entry.tag,
            weights: entry.weights.as_slice().to_vec(),
            victim_loss: None,
            success,
        });
        outcome.delta = entry.delta.clone();
        outcome.weights = Some(entry.weights.clone());
        if success {
            outcome.success = true;
            break;
        }
    }
    Ok(outcome)
}
