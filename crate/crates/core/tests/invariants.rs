use std::collections::BTreeSet;

use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use studyhook_core::domain::{BlockKind, WakingWindow};
use studyhook_core::fbm::{FbmParams, TriggerDecision, TriggerType};
use studyhook_core::hook::{draw_reward, HookBook, HookEvent, HookPhase, RewardCatalog, TriggerSource};
use studyhook_core::notifier::{
    ChannelError, Delivery, DeliverySink, GateContext, GateInput, NotifierParams, TemplateCatalog, TriggerPurpose,
    TriggerQueue, TriggerRequest,
};
use studyhook_core::scheduler::{suggest_sessions, Preference, SchedulerParams, SessionState, StudySession, SuggestRequest};
use studyhook_core::{ClassId, HabitCategory, SessionId, StudentId, TimeBlock, WeekTag, WeekTimetable};

fn sid(s: &str) -> StudentId {
    StudentId::new(s).unwrap()
}

fn block_strategy() -> impl Strategy<Value = (u8, u16, u16, u8)> {
    (0u8..7, 0u16..1400, 15u16..300, 0u8..3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn suggestions_never_overlap_commitments_or_each_other(
        raw in prop::collection::vec(block_strategy(), 0..25),
        n_classes in 1usize..5,
        late in any::<bool>(),
        wake in 300u16..600,
    ) {
        let classes: Vec<ClassId> = (0..n_classes).map(|i| ClassId::new(format!("c{i}")).unwrap()).collect();
        let mut blocks: Vec<TimeBlock> = Vec::new();
        for (day, start, len, k) in raw {
            let kind = [BlockKind::Class, BlockKind::Work, BlockKind::Other][k as usize];
            let class = (kind == BlockKind::Class).then(|| classes[start as usize % n_classes].clone());
            let Ok(b) = TimeBlock::new(day, start, (start + len).min(1440), kind, class) else { continue };
            if blocks.iter().all(|o| !o.overlaps(&b)) {
                blocks.push(b);
            }
        }
        let windows = [WakingWindow { start: wake, end: 1380 }; 7];
        let tt = WeekTimetable::new(sid("p"), blocks).unwrap().with_windows(windows).unwrap();
        let pref = if late { Preference::Late } else { Preference::Early };
        let params = SchedulerParams::default();
        let out = suggest_sessions(&tt, SuggestRequest { classes: &classes, preference: pref, reserved: &[], rejected: &[] }, &params);
        prop_assert_eq!(out.len(), classes.len());
        let mut placed: Vec<TimeBlock> = Vec::new();
        for (class, o) in classes.iter().zip(&out) {
            prop_assert_eq!(o.class_id(), class);
            if let Some(s) = o.suggestion() {
                prop_assert!(s.block.start_min >= wake && s.block.end_min <= 1380);
                prop_assert!(tt.blocks.iter().all(|b| !b.overlaps(&s.block)));
                prop_assert!(placed.iter().all(|b| !b.overlaps(&s.block)));
                placed.push(s.block.clone());
            }
        }
    }

    #[test]
    fn hook_cycles_stay_ordered_and_unique(ops in prop::collection::vec((0u8..4, 0u8..3, 0u8..3, -30i64..900), 1..80)) {
        let students = [sid("a"), sid("b"), sid("c")];
        let mut book = HookBook::new(Duration::days(7));
        let mut now = Utc.with_ymd_and_hms(2026, 2, 1, 0, 0, 0).unwrap();
        for (op, s, c, step) in ops {
            now += Duration::minutes(step);
            let (student, category) = (&students[s as usize], HabitCategory::ALL[c as usize]);
            let _ = match op {
                0 => book.open(student, category, TriggerDecision::fire(TriggerType::Spark), TriggerSource::External, now).map(|_| ()),
                1 => book.advance(student, category, HookEvent::ActionCompleted, now).map(|_| ()),
                2 => book.advance(student, category, HookEvent::RewardDelivered { reward: None }, now).map(|_| ()),
                _ => book.advance(student, category, HookEvent::InvestmentRecorded, now).map(|_| ()),
            };
            let mut keys = BTreeSet::new();
            for cycle in book.open_cycles() {
                prop_assert!(keys.insert((cycle.student_id.clone(), cycle.category)));
            }
        }
        let canonical = [HookPhase::Triggered, HookPhase::Acted, HookPhase::Rewarded, HookPhase::Invested];
        for cycle in book.finished().iter().chain(book.open_cycles()) {
            let h = cycle.phase_history();
            prop_assert_eq!(&h[..], &canonical[..h.len()]);
            let times: Vec<_> = [Some(cycle.triggered_at), cycle.acted_at, cycle.rewarded_at, cycle.invested_at].into_iter().flatten().collect();
            prop_assert!(times.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn deferred_decisions_never_reach_a_channel(points in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..60)) {
        struct Gate(Vec<(f64, f64)>);
        impl GateContext for Gate {
            fn gate_input(&self, student: &StudentId, _: HabitCategory) -> GateInput {
                let i: usize = student.as_str()[1..].parse().unwrap();
                GateInput { motivation: self.0[i].0, ability: self.0[i].1, source: TriggerSource::External }
            }
        }
        struct Count(usize);
        impl DeliverySink for Count {
            fn deliver(&mut self, _: &Delivery) -> Result<(), ChannelError> {
                self.0 += 1;
                Ok(())
            }
        }
        let t0 = Utc.with_ymd_and_hms(2026, 3, 2, 9, 0, 0).unwrap();
        let mut queue = TriggerQueue::new();
        for i in 0..points.len() {
            let req = TriggerRequest::new(sid(&format!("s{i}")), TriggerPurpose::SessionStart, t0 + Duration::minutes(1))
                .with("class", "cs101")
                .with("time", "Mon 09:00");
            queue.enqueue(req, t0).unwrap();
        }
        let gate = Gate(points.clone());
        let mut sink = Count(0);
        let out = queue.dispatch_due(t0 + Duration::days(3), &FbmParams::default(), &NotifierParams::default(), &TemplateCatalog::default(), &gate, &mut sink);
        prop_assert!(out.iter().all(|d| d.decision != TriggerDecision::Defer));
        let low = points.iter().filter(|(m, a)| *m < 0.5 && *a < 0.5).count();
        prop_assert_eq!(sink.0, points.len() - low);
    }

    #[test]
    fn ratings_outside_scale_are_rejected(eff in 0u8..10, env in 0u8..10) {
        let week = WeekTag::containing(Utc.with_ymd_and_hms(2026, 3, 2, 12, 0, 0).unwrap(), "UTC").unwrap();
        let block = TimeBlock::new(1, 600, 660, BlockKind::Study, Some(ClassId::new("c0").unwrap())).unwrap();
        let mut s = StudySession::new(SessionId::new("ses-1").unwrap(), sid("a"), block, week, "UTC").unwrap();
        s.notify(s.starts_at - Duration::minutes(10)).unwrap();
        s.check_in(s.starts_at, Duration::minutes(30)).unwrap();
        let ok = s.check_out(eff, env, s.ends_at).is_ok();
        prop_assert_eq!(ok, (1..=5).contains(&eff) && (1..=5).contains(&env));
        prop_assert_eq!(s.state == SessionState::CheckedOut, ok);
    }

    #[test]
    fn drawn_rewards_come_from_the_catalog(seed in any::<u64>()) {
        let catalog = RewardCatalog::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let now = Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap();
        for _ in 0..50 {
            if let Some(r) = draw_reward(&catalog, &mut rng, now).unwrap() {
                prop_assert!(catalog.entries.iter().any(|e| e.kind == r.kind && e.weight > 0.0));
            }
        }
    }
}
