//! Accuracy change each client sees when its model is replaced by the
//! freshly aggregated global model.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::analysis::metrics::evaluate;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AggregationDeltas {
    /// `(client, acc(global_after) - acc(local))`.
    pub participants: Vec<(usize, f64)>,
    /// `(client, acc(global_after) - acc(global_before))`.
    pub nonparticipants: Vec<(usize, f64)>,
}

impl AggregationDeltas {
    pub fn mean_participants(&self) -> Option<f64> {
        mean(&self.participants)
    }

    pub fn mean_nonparticipants(&self) -> Option<f64> {
        mean(&self.nonparticipants)
    }
}

fn mean(v: &[(usize, f64)]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().map(|(_, d)| d).sum::<f64>() / v.len() as f64)
}

/// `locals` holds `(client id, trained local model)` for the participants;
/// every other client with an eval set counts as a non-participant.
pub fn pre_post_aggregation_delta(
    locals: &[(usize, &Model)],
    global_before: &Model,
    global_after: &Model,
    eval_sets: &[Dataset],
    temperature: f64,
) -> Result<AggregationDeltas> {
    let mut out = AggregationDeltas::default();
    for (id, eval) in eval_sets.iter().enumerate() {
        if eval.is_empty() {
            return Err(Error::invalid(format!("client {id} has an empty evaluation set")));
        }
        let after = evaluate(global_after, eval, temperature)?.0;
        match locals.iter().find(|(c, _)| *c == id) {
            Some((_, local)) => out.participants.push((id, after - evaluate(local, eval, temperature)?.0)),
            None => out
                .nonparticipants
                .push((id, after - evaluate(global_before, eval, temperature)?.0)),
        }
    }
    Ok(out)
}
