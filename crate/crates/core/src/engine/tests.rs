use std::collections::BTreeSet;
use std::time::Duration;

use chrono::{DateTime, Utc};
use num_rational::Ratio;
use proptest::prelude::*;

use super::*;

type Exact = Ratio<i64>;
type State = SessionState<Exact>;

fn t(secs: u64) -> Instant {
    Instant::from_epoch(DateTime::<Utc>::UNIX_EPOCH, Duration::from_secs(secs))
}

fn start() -> State {
    new_session(DosingConfig::default(), t(0)).0
}

fn drive(mut state: State, steps: &[(u64, Action)]) -> State {
    for (secs, action) in steps {
        let (next, events) = state.apply(&Command::new(action.clone(), t(*secs)));
        assert!(
            !events
                .iter()
                .any(|e| matches!(e.kind, EventKind::CommandRejected { .. })),
            "{action:?} at {secs}s rejected: {events:?}"
        );
        state = next;
    }
    state
}

fn kinds(events: &[Event<Exact>]) -> Vec<EventKind<Exact>> {
    events.iter().map(|e| e.kind.clone()).collect()
}

fn mg(n: i64) -> Exact {
    Exact::from_integer(n)
}

fn in_vfvt(defibs: u32) -> State {
    let mut steps = vec![(1, Action::AnalyzeRhythm), (2, Action::SelectVfVt)];
    steps.extend((0..defibs).map(|_| (3, Action::Defibrillate)));
    drive(start(), &steps)
}

#[test]
fn new_session_starts_in_analysis() {
    let (state, events) = new_session(DosingConfig::<Exact>::default(), t(0));
    assert_eq!(state.phase, Phase::Analysis);
    assert_eq!(state.defib_count, 0);
    assert!(state.adrenaline_doses.is_empty() && state.amiodarone_doses.is_empty());
    assert_eq!(
        events,
        vec![
            Event {
                seq: 1,
                at: t(0),
                kind: EventKind::SessionStarted
            },
            Event {
                seq: 2,
                at: t(0),
                kind: EventKind::AnalysisOpened
            },
        ]
    );
    assert_eq!(state.event_seq, 3);
}

#[test]
fn analyze_opens_rhythm_selection() {
    let (state, events) = start().apply(&Command::new(Action::AnalyzeRhythm, t(5)));
    assert_eq!(state.phase, Phase::RhythmSelection);
    assert_eq!(kinds(&events), vec![EventKind::RhythmSelectionOpened]);
}

#[test]
fn third_shock_makes_both_drugs_due() {
    let state = in_vfvt(2);
    let (state, events) = state.apply(&Command::new(Action::Defibrillate, t(10)));
    assert_eq!(state.defib_count, 3);
    assert_eq!(
        kinds(&events),
        vec![
            EventKind::DefibrillationDelivered { ordinal: 3 },
            EventKind::AdrenalineDue,
            EventKind::AmiodaroneDue,
        ]
    );
}

#[test]
fn selecting_asystole_announces_adrenaline() {
    let state = drive(start(), &[(1, Action::AnalyzeRhythm)]);
    let (_, events) = state.apply(&Command::new(Action::SelectAsystolePea, t(2)));
    assert_eq!(
        kinds(&events),
        vec![
            EventKind::RhythmSelected {
                rhythm: Rhythm::AsystolePea
            },
            EventKind::AdrenalineDue,
        ]
    );
}

#[test]
fn early_adrenaline_is_rejected_without_side_effects() {
    let state = drive(
        start(),
        &[
            (1, Action::AnalyzeRhythm),
            (2, Action::SelectAsystolePea),
            (100, Action::AdministerAdrenaline),
        ],
    );
    let (after, events) = state.apply(&Command::new(Action::AdministerAdrenaline, t(200)));
    assert_eq!(
        kinds(&events),
        vec![EventKind::CommandRejected {
            kind: CommandKind::AdministerAdrenaline,
            reason: RejectReason::NotEnabled,
        }]
    );
    assert_eq!(after.adrenaline_doses, state.adrenaline_doses);
    assert_eq!(after.event_seq, state.event_seq + 1);
    assert_eq!(after.head_at, Some(t(200)));
    let mut normalized = after.clone();
    normalized.event_seq = state.event_seq;
    normalized.head_at = state.head_at;
    assert_eq!(normalized, state);
}

#[test]
fn adrenaline_interval_is_inclusive() {
    let state = drive(
        start(),
        &[
            (1, Action::AnalyzeRhythm),
            (2, Action::SelectAsystolePea),
            (10, Action::AdministerAdrenaline),
        ],
    );
    assert!(!state.adrenaline_due(&t(249)));
    assert!(state.adrenaline_due(&t(250)));
    assert!(state.adrenaline_due(&t(10_000)));
    assert!(start().adrenaline_due(&t(0)));
}

#[test]
fn adrenaline_clock_is_global_across_rhythms() {
    let state = drive(
        in_vfvt(3),
        &[
            (270, Action::AdministerAdrenaline),
            (280, Action::ReturnToAnalysis),
            (290, Action::AnalyzeRhythm),
            (300, Action::SelectAsystolePea),
        ],
    );
    assert!(!state.adrenaline_due(&t(400)));
    assert!(!state
        .enabled_commands(&t(400))
        .contains(&CommandKind::AdministerAdrenaline));
    assert!(state
        .enabled_commands(&t(510))
        .contains(&CommandKind::AdministerAdrenaline));
}

#[test]
fn amiodarone_due_on_odd_counts_from_three() {
    assert!(!in_vfvt(0).amiodarone_due());
    assert!(!in_vfvt(2).amiodarone_due());
    assert!(in_vfvt(3).amiodarone_due());
    let given = drive(in_vfvt(3), &[(4, Action::AdministerAmiodarone)]);
    assert!(!given.amiodarone_due());
    let fourth = drive(given, &[(5, Action::Defibrillate)]);
    assert!(!fourth.amiodarone_due());
    let fifth = drive(fourth, &[(6, Action::Defibrillate)]);
    assert!(fifth.amiodarone_due());
    let fifth = drive(fifth, &[(7, Action::AdministerAmiodarone)]);
    let doses: Vec<_> = fifth
        .amiodarone_doses
        .iter()
        .map(|d| (d.defib_count, d.mg))
        .collect();
    assert_eq!(doses, vec![(3, mg(300)), (5, mg(150))]);
}

#[test]
fn skipped_amiodarone_is_not_due_on_even_count() {
    // Missing the dose at 3 does not carry it over to 4.
    let state = in_vfvt(4);
    assert!(!state.amiodarone_due());
    assert!(in_vfvt(5).amiodarone_due());
}

#[test]
fn vfvt_adrenaline_waits_for_third_shock() {
    let one = in_vfvt(1);
    assert!(one.adrenaline_due(&t(3)));
    assert!(!one
        .enabled_commands(&t(3))
        .contains(&CommandKind::AdministerAdrenaline));
    assert!(in_vfvt(3)
        .enabled_commands(&t(3))
        .contains(&CommandKind::AdministerAdrenaline));
}

#[test]
fn enabled_sets_examples() {
    let fresh = start().enabled_commands(&t(0));
    assert!(fresh.contains(&CommandKind::AnalyzeRhythm));
    assert!(fresh.contains(&CommandKind::StartCompression));

    let ended = drive(
        start(),
        &[(1, Action::AnalyzeRhythm), (2, Action::EndSession)],
    );
    assert!(ended.enabled_commands(&t(3)).is_empty());

    let idle = State::idle(DosingConfig::default());
    assert_eq!(
        idle.enabled_commands(&t(0)),
        BTreeSet::from([CommandKind::StartSession])
    );
}

/// Independent table of what each screen offers.
fn oracle_enabled(
    phase: Phase,
    defibs: u32,
    adrenaline_gap: Option<u64>,
    amiodarone_given_at: Option<u32>,
    compressing: bool,
) -> BTreeSet<CommandKind> {
    use CommandKind::*;
    let adrenaline_ok = adrenaline_gap.is_none_or(|g| g >= 240);
    let amiodarone_ok = [3, 5, 7, 9, 11].contains(&defibs) && amiodarone_given_at != Some(defibs);
    let mut set: BTreeSet<CommandKind> = match phase {
        Phase::Idle => [StartSession].into(),
        Phase::Analysis => [AnalyzeRhythm, AddNote, Tick].into(),
        Phase::RhythmSelection => [SelectAsystolePea, SelectVfVt, EndSession, AddNote, Tick].into(),
        Phase::AsystolePea => [ReturnToAnalysis, AddNote, Tick].into(),
        Phase::VfVt => [Defibrillate, ReturnToAnalysis, AddNote, Tick].into(),
        Phase::Ended => BTreeSet::new(),
    };
    if matches!(phase, Phase::Analysis | Phase::AsystolePea | Phase::VfVt) && !compressing {
        set.insert(StartCompression);
    }
    if phase == Phase::AsystolePea && adrenaline_ok {
        set.insert(AdministerAdrenaline);
    }
    if phase == Phase::VfVt && adrenaline_ok && defibs >= 3 {
        set.insert(AdministerAdrenaline);
    }
    if phase == Phase::VfVt && amiodarone_ok {
        set.insert(AdministerAmiodarone);
    }
    set
}

#[test]
fn enabled_sets_match_oracle_over_small_states() {
    let phases = [
        Phase::Idle,
        Phase::Analysis,
        Phase::RhythmSelection,
        Phase::AsystolePea,
        Phase::VfVt,
        Phase::Ended,
    ];
    let now = t(1_000);
    for phase in phases {
        for defibs in 0..=7 {
            for gap in [None, Some(0), Some(100), Some(239), Some(240), Some(500)] {
                for amio in [None, Some(3), Some(5)] {
                    for compressing in [false, true] {
                        let mut state = start();
                        state.phase = phase;
                        state.defib_count = defibs;
                        state.last_adrenaline_at = gap.map(|g| t(1_000 - g));
                        state.last_amiodarone_defib_count = amio;
                        state.active_countdown = compressing.then(|| {
                            Countdown::start(
                                t(990),
                                Duration::from_secs(120),
                                Duration::from_secs(10),
                            )
                        });
                        assert_eq!(
                            state.enabled_commands(&now),
                            oracle_enabled(phase, defibs, gap, amio, compressing),
                            "{phase:?} defibs={defibs} gap={gap:?} amio={amio:?} cd={compressing}"
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn ended_rejects_everything_as_terminal() {
    let ended = drive(
        start(),
        &[(1, Action::AnalyzeRhythm), (2, Action::EndSession)],
    );
    for kind in CommandKind::ALL {
        let (after, events) = ended.apply(&Command::new(Action::from_kind(kind, "x"), t(3)));
        assert_eq!(
            kinds(&events),
            vec![EventKind::CommandRejected {
                kind,
                reason: RejectReason::TerminalPhase
            }]
        );
        assert_eq!(after.phase, Phase::Ended);
    }
}

#[test]
fn end_session_only_from_rhythm_selection() {
    let (_, events) = start().apply(&Command::new(Action::EndSession, t(1)));
    assert!(matches!(
        events[0].kind,
        EventKind::CommandRejected {
            reason: RejectReason::NotEnabled,
            ..
        }
    ));
}

#[test]
fn time_regression_is_rejected_at_head() {
    let state = drive(start(), &[(50, Action::AnalyzeRhythm)]);
    let (after, events) = state.apply(&Command::new(Action::SelectVfVt, t(40)));
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].at, t(50));
    assert_eq!(
        events[0].kind,
        EventKind::CommandRejected {
            kind: CommandKind::SelectVfVt,
            reason: RejectReason::NonMonotonicTime
        }
    );
    assert_eq!(after.phase, Phase::RhythmSelection);
    assert!(state.enabled_commands(&t(40)).is_empty());
}

#[test]
fn silent_ticks_leave_state_untouched() {
    let state = drive(start(), &[(0, Action::StartCompression)]);
    let (after, events) = state.apply(&Command::new(Action::Tick, t(60)));
    assert!(events.is_empty());
    assert_eq!(after, state);
    let (_, events) = after.apply(&Command::new(Action::Tick, t(30)));
    assert!(events.is_empty());
}

#[test]
fn countdown_signals_become_events() {
    let mut state = drive(start(), &[(0, Action::StartCompression)]);
    assert!(!state
        .enabled_commands(&t(1))
        .contains(&CommandKind::StartCompression));
    let mut all = Vec::new();
    for s in 1..=125 {
        let (next, events) = state.apply(&Command::new(Action::Tick, t(s)));
        all.extend(kinds(&events));
        state = next;
    }
    let mut expected = vec![EventKind::CompressionWarning];
    expected.extend(
        (0..=10)
            .rev()
            .map(|second_mark| EventKind::CompressionBlink { second_mark }),
    );
    expected.push(EventKind::CompressionFinished);
    assert_eq!(all, expected);
    assert!(state.active_countdown.is_none());
    assert!(state
        .enabled_commands(&t(125))
        .contains(&CommandKind::StartCompression));
    assert_eq!(state.phase, Phase::Analysis);
}

#[test]
fn countdown_survives_navigation() {
    let state = drive(
        start(),
        &[
            (0, Action::StartCompression),
            (30, Action::AnalyzeRhythm),
            (40, Action::SelectVfVt),
        ],
    );
    assert_eq!(
        state.countdown_remaining(&t(100)),
        Some(Duration::from_secs(20))
    );
    let (_, events) = state.apply(&Command::new(Action::Tick, t(120)));
    assert_eq!(
        events.last().map(|e| &e.kind),
        Some(&EventKind::CompressionFinished)
    );
}

#[test]
fn reminders_fire_once_while_due() {
    let mut state = drive(
        start(),
        &[(1, Action::AnalyzeRhythm), (2, Action::SelectAsystolePea)],
    );
    for s in 3..20 {
        let (next, events) = state.apply(&Command::new(Action::Tick, t(s)));
        assert!(events.is_empty(), "unexpected {events:?}");
        state = next;
    }
    state = drive(state, &[(20, Action::AdministerAdrenaline)]);
    let mut due_at = Vec::new();
    for s in 21..=600 {
        let (next, events) = state.apply(&Command::new(Action::Tick, t(s)));
        if events.iter().any(|e| e.kind == EventKind::AdrenalineDue) {
            due_at.push(s);
        }
        state = next;
    }
    assert_eq!(due_at, vec![260]);
}

#[test]
fn elapsed_examples() {
    let state = start();
    assert_eq!(state.elapsed(&t(0)), Ok(Duration::ZERO));
    assert_eq!(state.elapsed(&t(750)), Ok(Duration::from_secs(750)));
    let late = new_session(DosingConfig::<Exact>::default(), t(10)).0;
    assert_eq!(late.elapsed(&t(5)), Err(EngineError::BeforeSessionStart));
    let idle = State::idle(DosingConfig::default());
    assert_eq!(idle.elapsed(&t(5)), Err(EngineError::NotStarted));
}

#[test]
fn float_scalars_drive_the_same_machine() {
    let (state, _) = new_session(DosingConfig::<f64>::default(), t(0));
    let steps = [
        Action::AnalyzeRhythm,
        Action::SelectVfVt,
        Action::Defibrillate,
        Action::Defibrillate,
        Action::Defibrillate,
        Action::AdministerAdrenaline,
        Action::AdministerAmiodarone,
    ];
    let state = steps
        .iter()
        .fold(state, |s, a| s.apply(&Command::new(a.clone(), t(1))).0);
    assert_eq!(state.adrenaline_total_mg(), 1.0);
    assert_eq!(state.amiodarone_total_mg(), 300.0);
}

fn any_action() -> impl Strategy<Value = Action> {
    prop_oneof![
        Just(Action::StartCompression),
        Just(Action::AnalyzeRhythm),
        Just(Action::SelectAsystolePea),
        Just(Action::SelectVfVt),
        Just(Action::Defibrillate),
        Just(Action::AdministerAdrenaline),
        Just(Action::AdministerAmiodarone),
        Just(Action::ReturnToAnalysis),
        Just(Action::EndSession),
        Just(Action::Tick),
        Just(Action::Tick),
        "[a-z ]{1,12}".prop_map(Action::AddNote),
    ]
}

proptest! {
    #[test]
    fn apply_agrees_with_enabled_set(steps in proptest::collection::vec((0u64..90, any_action()), 0..120)) {
        let mut state = start();
        let mut now = 0;
        let mut last_adrenaline: Option<u64> = None;
        for (gap, action) in steps {
            now += gap;
            let enabled = state.enabled_commands(&t(now));
            let (next, events) = state.apply(&Command::new(action.clone(), t(now)));
            let rejected = events.iter().any(|e| matches!(e.kind, EventKind::CommandRejected { .. }));
            prop_assert_eq!(rejected, !enabled.contains(&action.kind()));
            for e in &events {
                if matches!(e.kind, EventKind::AdrenalineGiven { .. }) {
                    if let Some(prev) = last_adrenaline {
                        prop_assert!(now - prev >= 240);
                    }
                    last_adrenaline = Some(now);
                }
            }
            prop_assert!(next.defib_count >= state.defib_count);
            let counts: Vec<u32> = next.amiodarone_doses.iter().map(|d| d.defib_count).collect();
            prop_assert!(counts.iter().all(|c| *c >= 3 && c % 2 == 1));
            prop_assert!(counts.windows(2).all(|w| w[0] < w[1]));
            state = next;
        }
    }
}
