use rand::Rng;

use super::{Dispatch, P2cMetric};
use crate::error::{Error, Result};
use crate::model::{ClusterState, Tokens};

fn free_slots(state: &ClusterState) -> Vec<usize> {
    state.workers.iter().map(|w| w.free_slots()).collect()
}

/// Uniform choice among workers with a free slot.
pub fn route_random<R: Rng + ?Sized>(state: &ClusterState, rng: &mut R) -> Dispatch {
    let mut dispatch = Dispatch::new(state.workers.len());
    let mut caps = free_slots(state);
    for request in &state.waiting {
        let open: Vec<usize> = (0..caps.len()).filter(|&g| caps[g] > 0).collect();
        if open.is_empty() {
            break;
        }
        let g = open[rng.random_range(0..open.len())];
        caps[g] -= 1;
        dispatch.admit(g, request.id);
    }
    dispatch
}

/// Next worker in cyclic order with a free slot; the cursor persists across
/// steps and moves past each assignment.
pub fn route_round_robin(state: &ClusterState, cursor: &mut usize) -> Dispatch {
    let workers = state.workers.len();
    let mut dispatch = Dispatch::new(workers);
    let mut caps = free_slots(state);
    for request in &state.waiting {
        let Some(g) = (0..workers)
            .map(|i| (*cursor + i) % workers)
            .find(|&g| caps[g] > 0)
        else {
            break;
        };
        caps[g] -= 1;
        dispatch.admit(g, request.id);
        *cursor = (g + 1) % workers;
    }
    dispatch
}

/// Two distinct uniform samples per request; the lighter one wins (lower
/// index on ties), the other one if the lighter is full, and the request
/// keeps waiting if both are full.
pub fn route_p2c<R: Rng + ?Sized>(
    state: &ClusterState,
    rng: &mut R,
    metric: P2cMetric,
) -> Result<Dispatch> {
    let workers = state.workers.len();
    if workers < 2 {
        return Err(Error::TooFewWorkers(workers));
    }
    let mut dispatch = Dispatch::new(workers);
    let mut caps = free_slots(state);
    let mut free: usize = caps.iter().sum();
    let mut loads: Vec<Tokens> = state.loads();
    let mut counts: Vec<usize> = state.workers.iter().map(|w| w.active.len()).collect();
    for request in &state.waiting {
        if free == 0 {
            break;
        }
        let a = rng.random_range(0..workers);
        let mut b = rng.random_range(0..workers - 1);
        if b >= a {
            b += 1;
        }
        let (first, second) = if a < b { (a, b) } else { (b, a) };
        let lighter = |x: usize, y: usize| match metric {
            P2cMetric::Load => loads[y] < loads[x],
            P2cMetric::Count => counts[y] < counts[x],
        };
        let g = match (caps[first] > 0, caps[second] > 0) {
            (true, true) => {
                if lighter(first, second) {
                    second
                } else {
                    first
                }
            }
            (true, false) => first,
            (false, true) => second,
            (false, false) => continue,
        };
        caps[g] -= 1;
        free -= 1;
        loads[g] += request.prefill_len;
        counts[g] += 1;
        dispatch.admit(g, request.id);
    }
    Ok(dispatch)
}

/// Fewest active requests among workers with a free slot, lowest index on
/// ties; counts include this step's earlier admissions.
pub fn route_jsq(state: &ClusterState) -> Dispatch {
    let mut dispatch = Dispatch::new(state.workers.len());
    let mut caps = free_slots(state);
    let mut counts: Vec<usize> = state.workers.iter().map(|w| w.active.len()).collect();
    for request in &state.waiting {
        let Some(g) = (0..caps.len())
            .filter(|&g| caps[g] > 0)
            .min_by_key(|&g| (counts[g], g))
        else {
            break;
        };
        caps[g] -= 1;
        counts[g] += 1;
        dispatch.admit(g, request.id);
    }
    dispatch
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ActiveEntry, WaitingRequest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn waiting(id: u64, s: Tokens) -> WaitingRequest {
        WaitingRequest {
            id,
            arrival_step: 0,
            prefill_len: s,
            prompt_key: None,
        }
    }

    fn fill(state: &mut ClusterState, g: usize, loads: &[Tokens]) {
        for (i, &s) in loads.iter().enumerate() {
            state.workers[g].active.push(ActiveEntry {
                request_id: 1000 + (g * 100 + i) as u64,
                prefill_len: s,
                prompt_key: None,
                assign_step: 0,
                age: 0,
                prediction: None,
            });
        }
    }

    #[test]
    fn random_with_no_capacity_is_empty() {
        let mut state = ClusterState::new(2, 1);
        fill(&mut state, 0, &[5]);
        fill(&mut state, 1, &[5]);
        state.enqueue(waiting(1, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(route_random(&state, &mut rng).is_empty());
    }

    #[test]
    fn random_forced_by_capacity() {
        let mut state = ClusterState::new(3, 1);
        fill(&mut state, 0, &[5]);
        fill(&mut state, 2, &[5]);
        for id in 1..=4 {
            state.enqueue(waiting(id, 3));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = route_random(&state, &mut rng);
        assert_eq!(d.total(), 1);
        assert_eq!(d.admissions[1], vec![1]);
    }

    #[test]
    fn random_is_deterministic_per_seed() {
        let mut state = ClusterState::new(8, 4);
        for id in 0..20 {
            state.enqueue(waiting(id, 3 + id));
        }
        let run = |seed| route_random(&state, &mut ChaCha8Rng::seed_from_u64(seed));
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn round_robin_cycles() {
        let mut state = ClusterState::new(2, 4);
        state.enqueue(waiting(1, 3));
        state.enqueue(waiting(2, 3));
        let mut cursor = 0;
        let d = route_round_robin(&state, &mut cursor);
        assert_eq!(d.admissions, vec![vec![1], vec![2]]);
        assert_eq!(cursor, 0);

        let mut full = ClusterState::new(2, 1);
        fill(&mut full, 0, &[1]);
        fill(&mut full, 1, &[1]);
        full.enqueue(waiting(1, 3));
        assert!(route_round_robin(&full, &mut cursor).is_empty());

        let mut single = ClusterState::new(1, 3);
        for id in 0..5 {
            single.enqueue(waiting(id, 3));
        }
        let d = route_round_robin(&single, &mut cursor);
        assert_eq!(d.admissions, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn p2c_prefers_lighter_sample() {
        let mut state = ClusterState::new(2, 4);
        fill(&mut state, 0, &[100]);
        fill(&mut state, 1, &[10]);
        state.enqueue(waiting(1, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = route_p2c(&state, &mut rng, P2cMetric::Load).unwrap();
        assert_eq!(d.admissions, vec![vec![], vec![1]]);

        // By count worker 0 and 1 tie, so the lower index wins.
        let d = route_p2c(&state, &mut rng, P2cMetric::Count).unwrap();
        assert_eq!(d.admissions, vec![vec![1], vec![]]);
    }

    #[test]
    fn p2c_equal_loads_pick_lower_index() {
        let mut state = ClusterState::new(2, 4);
        state.enqueue(waiting(1, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = route_p2c(&state, &mut rng, P2cMetric::Load).unwrap();
        assert_eq!(d.admissions, vec![vec![1], vec![]]);
    }

    #[test]
    fn p2c_both_full_keeps_waiting() {
        let mut state = ClusterState::new(2, 1);
        fill(&mut state, 0, &[1]);
        fill(&mut state, 1, &[1]);
        state.enqueue(waiting(1, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(route_p2c(&state, &mut rng, P2cMetric::Load)
            .unwrap()
            .is_empty());
        let one = ClusterState::new(1, 1);
        assert_eq!(
            route_p2c(&one, &mut rng, P2cMetric::Load),
            Err(Error::TooFewWorkers(1))
        );
    }

    #[test]
    fn jsq_examples() {
        let mut state = ClusterState::new(3, 4);
        fill(&mut state, 0, &[1, 1, 1]);
        fill(&mut state, 1, &[1]);
        fill(&mut state, 2, &[1, 1]);
        state.enqueue(waiting(1, 3));
        assert_eq!(route_jsq(&state).admissions, vec![vec![], vec![1], vec![]]);

        let mut even = ClusterState::new(3, 4);
        even.enqueue(waiting(1, 3));
        assert_eq!(route_jsq(&even).admissions, vec![vec![1], vec![], vec![]]);

        let mut full = ClusterState::new(2, 1);
        fill(&mut full, 0, &[1]);
        fill(&mut full, 1, &[1]);
        full.enqueue(waiting(1, 3));
        assert!(route_jsq(&full).is_empty());
    }

    #[test]
    fn jsq_updates_counts_within_step() {
        let mut state = ClusterState::new(2, 4);
        fill(&mut state, 0, &[1]);
        for id in 1..=3 {
            state.enqueue(waiting(id, 3));
        }
        assert_eq!(route_jsq(&state).admissions, vec![vec![2], vec![1, 3]]);
    }
}
