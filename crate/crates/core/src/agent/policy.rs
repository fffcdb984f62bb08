use rand::seq::SliceRandom;
use rand::Rng;

use super::{ActionId, AgentError, QTable, StateKey};

/// Epsilon-greedy over `available`; greedy ties are broken uniformly at random.
pub fn select_action<R: Rng + ?Sized>(
    q: &QTable,
    s: StateKey,
    available: &[ActionId],
    eps: f64,
    rng: &mut R,
) -> Result<ActionId, AgentError> {
    if available.is_empty() {
        return Err(AgentError::NoActions);
    }
    if eps > 0.0 && rng.gen::<f64>() < eps {
        return Ok(*available.choose(rng).expect("nonempty"));
    }
    let row = q.row(s);
    let best = available
        .iter()
        .map(|a| row[a.index()])
        .fold(f64::NEG_INFINITY, f64::max);
    let ties = available.iter().filter(|a| row[a.index()] == best).count();
    if ties == 1 {
        return Ok(*available.iter().find(|a| row[a.index()] == best).expect("max"));
    }
    let pick = rng.gen_range(0..ties);
    Ok(*available
        .iter()
        .filter(|a| row[a.index()] == best)
        .nth(pick)
        .expect("tie index"))
}
