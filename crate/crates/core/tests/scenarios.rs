use std::collections::HashMap;
use std::f64::consts::PI;

use dtp_core::adminshell::TicketState;
use dtp_core::emulators::OptodeModel;
use dtp_core::medium::{peak_window_load, Distance, NS_PER_S};
use dtp_core::scenarios::appmsg::{Command, EventCode};
use dtp_core::scenarios::config::{PlatformSpec, ScenarioKind, ScenarioSpec, ScheduledCommand, ScheduledEvent, SimConfig};
use dtp_core::scenarios::{run_scenario_with_env, ScenarioOutput, Simulation, TimelineEvent};
use dtp_core::sweep::{converged_fraction, run_seeds, run_seeds_sequential};
use num_rational::Ratio;
use proptest::prelude::*;

fn no_env() -> HashMap<String, String> {
    HashMap::new()
}

fn platforms(n: u8, interval_s: u32) -> Vec<PlatformSpec> {
    (0..n)
        .map(|i| PlatformSpec::new(format!("bigo-{}", i + 1), i + 2, interval_s, OptodeModel::constant(280.0)))
        .collect()
}

fn config(kind: ScenarioKind, n: u8, interval_s: u32, duration_s: f64) -> SimConfig {
    let mut c = SimConfig::new(7, duration_s, 1, platforms(n, interval_s), ScenarioSpec::of(kind));
    c.medium.distances = (0..n).map(|i| Distance { a: 1, b: i + 2, m: 500.0 + 250.0 * i as f64 }).collect();
    c
}

fn run(c: SimConfig) -> ScenarioOutput {
    run_scenario_with_env(c, &no_env()).unwrap()
}

fn assert_conserved(out: &ScenarioOutput) {
    for link in &out.report.links {
        assert_eq!(link.in_flight, 0, "{link:?}");
        assert_eq!(link.sent, link.delivered + link.dropped, "{link:?}");
    }
}

#[test]
fn scenario_a_counts_samples_from_first_interval() {
    let out = run(config(ScenarioKind::A, 1, 600, 3600.0));
    assert_eq!(out.report.vessel.data_received["bigo-1"], 6);
    let p = out.report.platform("bigo-1").unwrap();
    assert_eq!((p.samples, p.data_uplinks), (6, 6));
    assert_conserved(&out);
}

#[test]
fn scenario_a_never_exceeds_the_link_rate() {
    let out = run(config(ScenarioKind::A, 4, 600, 3600.0));
    for txs in out.transmissions.values() {
        assert!(peak_window_load(txs, None, NS_PER_S) <= Ratio::from_integer(64));
    }
    assert_eq!(out.report.vessel.data_received.values().sum::<u64>(), 24);
    assert_conserved(&out);
}

fn scenario_b(loss_prob: f64, command: Command) -> ScenarioOutput {
    let mut c = config(ScenarioKind::B, 3, 600, 1800.0);
    c.medium.loss_prob = loss_prob;
    c.scenario.commands = c
        .platforms
        .iter()
        .enumerate()
        .map(|(i, p)| ScheduledCommand { at_s: 100.0 + i as f64, platform_id: p.platform_id.clone(), command })
        .collect();
    run(c)
}

#[test]
fn scenario_b_lossless_commands_are_acked_promptly() {
    let out = scenario_b(0.0, Command::SetSamplingInterval { interval_s: 300 });
    assert_eq!(out.report.commands.len(), 3);
    for (i, t) in out.report.commands.iter().enumerate() {
        assert_eq!(t.state, TicketState::Acked);
        assert_eq!(t.transmissions, 1);
        let distance = 500.0 + 250.0 * i as f64;
        let ack_tx_s = (3.0 + 7.0) / 64.0;
        let bound_ns = (2.0 * (ack_tx_s + distance / 1500.0) * 1e9).ceil() as i64;
        assert!(t.resolved_at_ns.unwrap() - t.submitted_at_ns <= bound_ns, "{t:?}");
    }
    for p in &out.report.platforms {
        assert_eq!(p.final_sampling_interval_s, 300);
    }
    assert_eq!(out.report.vessel.commands_acked, 3);
    assert_conserved(&out);
}

#[test]
fn scenario_b_total_loss_exhausts_retries() {
    let out = scenario_b(1.0, Command::ReportStatus);
    for t in &out.report.commands {
        assert_eq!((t.state, t.transmissions), (TicketState::Failed, 3));
    }
    assert_eq!(out.report.vessel.command_transmissions, 9);
    assert_eq!(out.report.vessel.commands_exhausted, 3);
    let attempts: Vec<u16> = out
        .report
        .timeline
        .iter()
        .filter_map(|e| match &e.event {
            TimelineEvent::CommandSent { platform_id, attempt, .. } if platform_id == "bigo-1" => Some(*attempt),
            _ => None,
        })
        .collect();
    assert_eq!(attempts, [1, 2, 3]);
    assert_conserved(&out);
}

#[test]
fn scenario_b_zero_interval_is_rejected() {
    let out = scenario_b(0.0, Command::SetSamplingInterval { interval_s: 0 });
    for t in &out.report.commands {
        assert_eq!(t.state, TicketState::Failed);
    }
    assert_eq!(out.report.vessel.commands_rejected, 3);
    assert!(out.report.platforms.iter().all(|p| p.final_sampling_interval_s == 600));
}

fn scenario_c(loss_prob: f64, duration_s: f64) -> SimConfig {
    let mut c = config(ScenarioKind::C, 3, 600, duration_s);
    c.medium.loss_prob = loss_prob;
    c.scenario.event = Some(ScheduledEvent { at_s: 100.0, code: EventCode::StormPredicted, new_sampling_interval_s: 300 });
    c
}

#[test]
fn scenario_c_event_reaches_every_platform() {
    let out = run(scenario_c(0.0, 3600.0));
    assert!(out.report.platforms.iter().all(|p| p.final_sampling_interval_s == 300));
    let bursts: Vec<_> = out.report.broadcast_bursts().collect();
    assert_eq!(bursts.len(), 1);
    assert!(matches!(bursts[0].event, TimelineEvent::EventBroadcast { copies: 3, .. }));
    assert_eq!(out.report.vessel.commands_acked, 0);
    assert_conserved(&out);
}

#[test]
fn scenario_c_convergence_matches_repeat_probability() {
    let p = 0.5f64;
    let r = 2;
    let seeds: Vec<u64> = (0..400).collect();
    let reports: Vec<_> = run_seeds(&scenario_c(p, 200.0), &seeds, &no_env()).into_iter().map(Result::unwrap).collect();
    let observed = converged_fraction(&reports, 300);
    let expected = 1.0 - p.powi(r + 1);
    let n = (reports.len() * 3) as f64;
    let sigma = (expected * (1.0 - expected) / n).sqrt();
    assert!((observed - expected).abs() < 4.0 * sigma, "observed {observed}, expected {expected}");
}

#[test]
fn seed_sweeps_match_between_parallel_and_sequential() {
    let seeds: Vec<u64> = (10..30).collect();
    let base = scenario_c(0.4, 200.0);
    let par: Vec<_> = run_seeds(&base, &seeds, &no_env()).into_iter().map(Result::unwrap).collect();
    let seq: Vec<_> = run_seeds_sequential(&base, &seeds, &no_env()).into_iter().map(Result::unwrap).collect();
    assert_eq!(par, seq);
}

/// First downward crossing of `b + A sin(2 pi t / P)` through `thr`, for `b - A < thr < b`.
fn downward_crossing_s(b: f64, a: f64, period: f64, thr: f64) -> f64 {
    period / (2.0 * PI) * (PI - ((thr - b) / a).asin())
}

#[test]
fn scenario_d_detection_halves_every_interval() {
    let (b, a, period, thr, interval) = (280.0, 10.0, 86_400.0, 276.0, 600u32);
    let crossing = downward_crossing_s(b, a, period, thr);
    let first_sample_below = ((crossing / interval as f64).floor() as i64 + 1) * interval as i64;
    let mut c = config(ScenarioKind::D, 4, interval, first_sample_below as f64 + 120.0);
    c.platforms[0].optode = dtp_core::scenarios::config::OptodeSpec::Model(OptodeModel {
        baseline_umol_per_l: b,
        amplitude_umol_per_l: a,
        period_s: period,
        noise_std_umol_per_l: 0.0,
        seed: 0,
    });
    c.platforms[0].o2_threshold_umol_per_l = thr;
    let out = run(c);
    let detected: Vec<i64> = out
        .report
        .timeline
        .iter()
        .filter(|e| matches!(e.event, TimelineEvent::LowOxygenDetected { .. }))
        .map(|e| e.t_ns)
        .collect();
    assert_eq!(detected, [first_sample_below * NS_PER_S]);
    for p in &out.report.platforms {
        assert_eq!(p.final_sampling_interval_s, interval / 2, "{}", p.platform_id);
    }
    assert_conserved(&out);
}

#[test]
fn equal_seeds_give_identical_logs_and_reports() {
    for kind in [ScenarioKind::A, ScenarioKind::B, ScenarioKind::C, ScenarioKind::D] {
        let mut c = scenario_c(0.3, 2400.0);
        c.scenario.kind = kind;
        c.scenario.commands =
            vec![ScheduledCommand { at_s: 50.0, platform_id: "bigo-2".into(), command: Command::TriggerMeasurement }];
        c.platforms[1].optode = dtp_core::scenarios::config::OptodeSpec::Model(OptodeModel {
            noise_std_umol_per_l: 2.0,
            seed: 3,
            ..OptodeModel::constant(280.0)
        });
        let a = run(c.clone());
        let b = run(c);
        assert_eq!(a.logs, b.logs);
        assert_eq!(a.report, b.report);
    }
}

#[test]
fn operator_commands_flow_through_twin_shells() {
    let mut sim = Simulation::new(config(ScenarioKind::A, 2, 600, 3600.0), &no_env(), None).unwrap();
    let shells = sim.twin_shells();
    sim.step_until(1000 * NS_PER_S).unwrap();
    let ticket = shells[1].submit_command(Command::SetSamplingInterval { interval_s: 120 }).unwrap();
    assert_eq!(ticket.state, TicketState::Pending);
    sim.step_until(1010 * NS_PER_S).unwrap();
    assert_eq!(shells[1].poll_command(&ticket.ticket_id).unwrap().state, TicketState::Acked);
    assert_eq!(shells[1].get_status().unwrap().sampling_interval_s, 120);
    assert!(shells[0].poll_command(&ticket.ticket_id).is_err());
    shells[0].inject_event(1, 900).unwrap();
    sim.run().unwrap();
    let report = sim.report();
    assert!(report.platforms.iter().all(|p| p.final_sampling_interval_s == 900));
    let o2 = shells[0].query_timeseries("o2", 0, i64::MAX, 1000).unwrap();
    assert_eq!(o2.len() as u64, report.vessel.data_received["bigo-1"]);
    assert!(o2.iter().all(|p| p.value == 280.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn links_conserve_frames(seed in any::<u64>(), loss in 0.0f64..=1.0, kind in 0usize..4) {
        let mut c = scenario_c(loss, 1500.0);
        c.seed = seed;
        c.scenario.kind = [ScenarioKind::A, ScenarioKind::B, ScenarioKind::C, ScenarioKind::D][kind];
        c.scenario.commands =
            vec![ScheduledCommand { at_s: 30.0, platform_id: "bigo-3".into(), command: Command::ReportStatus }];
        let out = run(c);
        for link in &out.report.links {
            prop_assert_eq!(link.sent, link.delivered + link.dropped);
        }
        for txs in out.transmissions.values() {
            prop_assert!(peak_window_load(txs, None, NS_PER_S) <= Ratio::from_integer(64));
        }
    }
}
