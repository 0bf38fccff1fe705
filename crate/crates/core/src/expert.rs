//! Centralized full-information expert: capture feasibility, maximum
//! matching of defenders to capturable intruders, and per-defender actions.

use crate::error::{Error, Result};
use crate::game::{arc_distance, ArcDirection, DefenderAction, Direction, GameState, CAPTURE_DISTANCE};
use crate::matching::{hopcroft_karp, Assignment, BoolMatrix};

/// `(r - 1) + ε - arc`: non-negative exactly when a defender heading straight
/// for the radial breach point gets there in time (with the capture disc as
/// slack) against a radially moving intruder.
pub fn capture_slack(defender_angle: f64, radius: f64, intruder_angle: f64) -> f64 {
    (radius - 1.0) + CAPTURE_DISTANCE - arc_distance(defender_angle, intruder_angle).0
}

pub fn can_capture(defender_angle: f64, radius: f64, intruder_angle: f64) -> Result<bool> {
    if !(radius > 1.0) {
        return Err(Error::usage(format!(
            "intruder radius must exceed 1, got {radius}"
        )));
    }
    Ok(capture_slack(defender_angle, radius, intruder_angle) >= 0.0)
}

/// Feasibility over the live agents: rows follow `state.live_defenders()`,
/// columns `state.live_intruders()`.
pub fn feasibility(state: &GameState) -> BoolMatrix {
    let ds: Vec<usize> = state.live_defenders().collect();
    let is: Vec<usize> = state.live_intruders().collect();
    let mut m = BoolMatrix::new(ds.len(), is.len());
    for (r, &d) in ds.iter().enumerate() {
        for (c, &i) in is.iter().enumerate() {
            let a = &state.intruders[i];
            let ok = a.radius > 1.0
                && capture_slack(state.defenders[d].angle, a.radius, a.angle) >= 0.0;
            m.set(r, c, ok);
        }
    }
    m
}

/// The expert's matching, in state indices.
///
/// Among maximum matchings the one returned depends only on geometry, never
/// on how agents happen to be numbered: defenders are scanned nearest-first
/// (by arc distance to their closest capturable intruder) and each
/// defender's candidates are tried nearest-first. Exact ties fall back to
/// index order.
pub fn expert_assignment(state: &GameState) -> Assignment {
    let ds: Vec<usize> = state.live_defenders().collect();
    let is: Vec<usize> = state.live_intruders().collect();
    let feas = feasibility(state);

    let arcs: Vec<Vec<f64>> = ds
        .iter()
        .map(|&d| {
            is.iter()
                .map(|&i| arc_distance(state.defenders[d].angle, state.intruders[i].angle).0)
                .collect()
        })
        .collect();

    let mut adjacency: Vec<Vec<usize>> = (0..ds.len())
        .map(|r| (0..is.len()).filter(|&c| feas.get(r, c)).collect())
        .collect();
    for (r, adj) in adjacency.iter_mut().enumerate() {
        adj.sort_by(|&a, &b| arcs[r][a].total_cmp(&arcs[r][b]).then(a.cmp(&b)));
    }
    let nearest = |r: usize| adjacency[r].first().map_or(f64::INFINITY, |&c| arcs[r][c]);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| nearest(a).total_cmp(&nearest(b)).then(a.cmp(&b)));

    let ordered_adj: Vec<Vec<usize>> = order.iter().map(|&r| adjacency[r].clone()).collect();
    let mates = hopcroft_karp(&ordered_adj, is.len());

    let mut row_mate = vec![None; ds.len()];
    for (pos, &r) in order.iter().enumerate() {
        row_mate[r] = mates[pos];
    }
    let local = Assignment::from_mates(&row_mate, is.len());
    Assignment {
        pairs: local.pairs.iter().map(|&(r, c)| (ds[r], is[c])).collect(),
        unmatched_defenders: local.unmatched_defenders.iter().map(|&r| ds[r]).collect(),
        unmatched_intruders: local.unmatched_intruders.iter().map(|&c| is[c]).collect(),
    }
}

/// Direction a defender at `from` takes to chase an intruder at `to`.
pub fn chase_direction(from: f64, to: f64) -> Direction {
    match arc_distance(from, to).1 {
        ArcDirection::Cw => Direction::Cw,
        ArcDirection::Ccw | ArcDirection::Tie => Direction::Ccw,
    }
}

/// One action per live defender, in index order. Unmatched defenders are
/// labelled don't-care.
pub fn expert_actions(state: &GameState) -> Vec<DefenderAction> {
    let assignment = expert_assignment(state);
    state
        .live_defenders()
        .map(|d| match assignment.partner_of_defender(d) {
            Some(i) => DefenderAction::go(chase_direction(
                state.defenders[d].angle,
                state.intruders[i].angle,
            )),
            None => DefenderAction::dont_care(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn feasibility_examples() {
        assert!(can_capture(0.0, 2.0, 0.0).unwrap());
        assert!(!can_capture(PI, 1.05, 0.0).unwrap());
        assert!(can_capture(0.3, 1.25, 0.0).unwrap());
        assert!(matches!(can_capture(0.0, 1.0, 0.0), Err(Error::Usage(_))));
    }

    #[test]
    fn single_chase_is_shortest_arc() {
        let s = GameState::new(&[0.0], &[(3.0, FRAC_PI_2)]);
        assert_eq!(expert_actions(&s), vec![DefenderAction::go(Direction::Ccw)]);
        let s = GameState::new(&[0.0], &[(3.0, -FRAC_PI_2)]);
        assert_eq!(expert_actions(&s), vec![DefenderAction::go(Direction::Cw)]);
    }

    #[test]
    fn no_intruders_means_all_dont_care() {
        let s = GameState::new(&[0.0, 1.0, 2.0], &[]);
        assert!(expert_actions(&s).iter().all(|a| a.dont_care));
    }

    #[test]
    fn coincident_intruder_ties_to_ccw() {
        let s = GameState::new(&[1.0], &[(2.0, 1.0)]);
        assert_eq!(expert_actions(&s), vec![DefenderAction::go(Direction::Ccw)]);
    }

    #[test]
    fn dead_agents_are_ignored() {
        let mut s = GameState::new(&[0.0, 0.5], &[(2.0, 0.4), (2.0, 0.1)]);
        s.defenders[0].alive = false;
        s.intruders[0].alive = false;
        let a = expert_assignment(&s);
        assert_eq!(a.pairs, vec![(1, 1)]);
        assert_eq!(expert_actions(&s), vec![DefenderAction::go(Direction::Cw)]);
    }

    #[test]
    fn nearest_candidates_are_preferred() {
        // both defenders can reach both intruders; each takes its neighbour
        let s = GameState::new(&[0.0, 1.0], &[(3.0, 1.1), (3.0, 0.1)]);
        let a = expert_assignment(&s);
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
    }
}
