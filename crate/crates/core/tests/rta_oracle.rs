//! Response-time analysis checked against the discrete-event simulator.

use impresched::rta::{analyze, blocking_time, subtask_wcrt, Demand};
use impresched::sim::{default_horizon, simulate};
use impresched::{assign_priorities, CompositeTask, Scheme, TaskSet};

fn stage(p: &str, m: f64, o: f64) -> (String, f64, f64, f64, f64) {
    (p.to_string(), m, o, 0.0, 0.0)
}

fn assert_bounded_by_analysis(mut ts: TaskSet, horizon: f64) {
    let ord = assign_priorities(&mut ts, Scheme::Global).unwrap();
    let rta = analyze(&ts, &ord);
    let trace = simulate(&ts, &ord, horizon).unwrap();
    let bound = rta.per_subtask(&ts);
    for (key, observed) in &trace.per_subtask_max_response {
        let r = bound[key].expect("bounded");
        assert!(*observed <= r + 1e-9, "{key:?}: observed {observed} > analysis {r}");
    }
    for (i, t) in ts.tasks.iter().enumerate() {
        let r = rta.e2e_wcrt[i].expect("bounded");
        assert!(trace.per_task_max_e2e_response[&t.id] <= r + 1e-9);
        assert!(r >= t.total_execution() - 1e-9);
    }
}

#[test]
fn higher_priority_preemption_matches_simulation() {
    let hp = [Demand::new(1.0, 4.0, 0.0)];
    let r = subtask_wcrt(Demand::new(2.0, 6.0, 0.0), &hp).unwrap();
    let mut ts = TaskSet::new(
        vec!["P1".into()],
        vec![CompositeTask::new("H", 4.0, 4.0, [stage("P1", 1.0, 0.0)]), CompositeTask::new("L", 6.0, 6.0, [stage("P1", 2.0, 0.0)])],
    );
    let ord = assign_priorities(&mut ts, Scheme::Global).unwrap();
    let trace = simulate(&ts, &ord, 24.0).unwrap();
    assert_eq!(trace.per_task_max_e2e_response["L"], r);
    assert_eq!(r, 3.0);
}

#[test]
fn two_tasks_sharing_two_processors() {
    let ts = TaskSet::new(
        vec!["P1".into(), "P2".into()],
        vec![
            CompositeTask::new("A", 10.0, 10.0, [stage("P1", 2.0, 1.0), stage("P2", 3.0, 0.0)]),
            CompositeTask::new("B", 15.0, 30.0, [stage("P2", 2.0, 2.0), stage("P1", 3.0, 1.0)]),
        ],
    );
    assert_bounded_by_analysis(ts.clone(), 3.0 * 30.0);
    assert_eq!(default_horizon(&ts), 90.0);
}

#[test]
fn three_tasks_two_processors_bounded_above_execution() {
    let ts = TaskSet::new(
        vec!["P1".into(), "P2".into()],
        vec![
            CompositeTask::new("A", 8.0, 8.0, [stage("P1", 1.0, 1.0)]),
            CompositeTask::new("B", 12.0, 24.0, [stage("P1", 2.0, 0.0), stage("P2", 2.0, 1.0)]),
            CompositeTask::new("C", 24.0, 48.0, [stage("P2", 3.0, 2.0), stage("P1", 2.0, 0.0)]),
        ],
    );
    assert_bounded_by_analysis(ts, 72.0);
}

#[test]
fn blocking_of_preempted_mandatory_only_task() {
    // H runs 4 units first; L (mandatory only, C = 2) waits for all of it.
    let mut ts = TaskSet::new(
        vec!["P1".into()],
        vec![CompositeTask::new("H", 10.0, 5.0, [stage("P1", 4.0, 0.0)]), CompositeTask::new("L", 20.0, 20.0, [stage("P1", 2.0, 0.0)])],
    );
    let ord = assign_priorities(&mut ts, Scheme::Global).unwrap();
    let rta = analyze(&ts, &ord);
    assert_eq!(blocking_time(&ts.tasks[1], rta.e2e_wcrt[1]).unwrap(), 4.0);
    let trace = simulate(&ts, &ord, 60.0).unwrap();
    assert_eq!(trace.per_task_max_e2e_response["L"] - 2.0, 4.0);
}

#[test]
fn full_load_fallback_stays_sound() {
    // Incommensurate periods at exactly full load: the analysis falls back to
    // its closed-form bound, which must still cover what the simulator sees.
    let p1 = 7.0 * std::f64::consts::SQRT_2;
    let c1 = 3.0;
    let p2 = 10.0;
    let c2 = p2 * (1.0 - c1 / p1);
    let ts = TaskSet::new(
        vec!["P1".into()],
        vec![CompositeTask::new("A", p1, p1, [stage("P1", c1, 0.0)]), CompositeTask::new("B", p2, 100.0, [stage("P1", c2, 0.0)])],
    );
    assert_bounded_by_analysis(ts, 5000.0);
}
