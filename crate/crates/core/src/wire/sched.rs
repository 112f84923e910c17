//! Deterministic scheduling of client threads for loopback tests.
//!
//! Each client runs on its own thread, but only one runs at a time. A
//! client parks at every yield point (the loopback transport yields before
//! each message), and the scheduler picks which parked client continues,
//! either from a seeded RNG or from an explicit choice script. Running
//! every script a depth-first [`explore`] produces enumerates every
//! message interleaving.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::sync::{Arc, Condvar, Mutex};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[derive(Clone, Debug)]
pub enum Policy {
    Seeded(u64),
    /// Choice indices per decision; decisions past the end take choice 0.
    Script(Vec<usize>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub chosen: usize,
    pub enabled: usize,
}

#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub decisions: Vec<Decision>,
    /// Client index run at each step.
    pub order: Vec<usize>,
}

enum Chooser {
    Seeded(StdRng),
    Script(Vec<usize>),
}

struct State {
    chooser: Chooser,
    n_clients: usize,
    waiting: BTreeSet<usize>,
    stalled: BTreeSet<usize>,
    finished: usize,
    running: Option<usize>,
    trace: Trace,
    max_steps: usize,
    aborted: bool,
}

pub struct Scheduler {
    state: Mutex<State>,
    cv: Condvar,
}

thread_local! {
    static CURRENT: RefCell<Option<(Arc<Scheduler>, usize)>> = const { RefCell::new(None) };
}

/// True on a thread driven by a scheduler.
pub fn active() -> bool {
    CURRENT.with(|c| c.borrow().is_some())
}

/// Park until the scheduler picks this client. No-op off scheduled threads.
pub fn yield_point() {
    park(false);
}

/// Like [`yield_point`], but the client is only picked again after some
/// other client has taken a step, or when nobody else can run.
pub fn stall_point() {
    park(true);
}

fn park(stall: bool) {
    let cur = CURRENT.with(|c| c.borrow().clone());
    if let Some((sched, me)) = cur {
        sched.park(me, stall);
    }
}

impl Scheduler {
    fn park(&self, me: usize, stall: bool) {
        let mut st = self.state.lock().unwrap();
        st.running = None;
        st.waiting.insert(me);
        if stall {
            st.stalled.insert(me);
        }
        self.cv.notify_all();
        while st.running != Some(me) {
            if st.aborted {
                st.waiting.remove(&me);
                drop(st);
                panic!("schedule aborted after too many steps");
            }
            st = self.cv.wait(st).unwrap();
        }
    }

    fn finish(&self) {
        let mut st = self.state.lock().unwrap();
        st.running = None;
        st.finished += 1;
        self.cv.notify_all();
    }

    fn choose(st: &mut State) -> usize {
        let fresh: Vec<usize> = st.waiting.difference(&st.stalled).copied().collect();
        let enabled: Vec<usize> = if fresh.is_empty() { st.waiting.iter().copied().collect() } else { fresh };
        let step = st.trace.decisions.len();
        let chosen = match &mut st.chooser {
            Chooser::Seeded(rng) => rng.random_range(0..enabled.len()),
            Chooser::Script(s) => s.get(step).copied().unwrap_or(0).min(enabled.len() - 1),
        };
        st.trace.decisions.push(Decision { chosen, enabled: enabled.len() });
        let client = enabled[chosen];
        st.trace.order.push(client);
        client
    }

    /// Run `clients` to completion under `policy` and return the schedule
    /// taken. Panics raised by a client are re-raised here.
    pub fn run<'a>(policy: Policy, clients: Vec<Box<dyn FnOnce() + Send + 'a>>) -> Trace {
        Scheduler::run_bounded(policy, clients, 10_000_000)
    }

    pub fn run_bounded<'a>(
        policy: Policy,
        clients: Vec<Box<dyn FnOnce() + Send + 'a>>,
        max_steps: usize,
    ) -> Trace {
        let chooser = match policy {
            Policy::Seeded(seed) => Chooser::Seeded(StdRng::seed_from_u64(seed)),
            Policy::Script(s) => Chooser::Script(s),
        };
        let n = clients.len();
        let sched = Arc::new(Scheduler {
            state: Mutex::new(State {
                chooser,
                n_clients: n,
                waiting: BTreeSet::new(),
                stalled: BTreeSet::new(),
                finished: 0,
                running: None,
                trace: Trace::default(),
                max_steps,
                aborted: false,
            }),
            cv: Condvar::new(),
        });
        let panics: Mutex<Vec<Box<dyn std::any::Any + Send>>> = Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for (idx, client) in clients.into_iter().enumerate() {
                let sched = sched.clone();
                let panics = &panics;
                scope.spawn(move || {
                    CURRENT.with(|c| *c.borrow_mut() = Some((sched.clone(), idx)));
                    sched.park(idx, false);
                    let result = panic::catch_unwind(AssertUnwindSafe(client));
                    CURRENT.with(|c| *c.borrow_mut() = None);
                    if let Err(p) = result {
                        panics.lock().unwrap().push(p);
                    }
                    sched.finish();
                });
            }
            let mut st = sched.state.lock().unwrap();
            loop {
                while st.running.is_some() || st.waiting.len() + st.finished < st.n_clients {
                    st = sched.cv.wait(st).unwrap();
                }
                if st.finished == st.n_clients {
                    break;
                }
                if st.trace.decisions.len() >= st.max_steps {
                    // parked clients unwind out of their yield points
                    st.aborted = true;
                    sched.cv.notify_all();
                    while st.finished < st.n_clients {
                        st = sched.cv.wait(st).unwrap();
                    }
                    break;
                }
                let client = Scheduler::choose(&mut st);
                st.waiting.remove(&client);
                // the chosen client's step may unblock anyone who stalled
                st.stalled.clear();
                st.running = Some(client);
                sched.cv.notify_all();
            }
        });
        if sched.state.lock().unwrap().aborted {
            panic!("schedule exceeded {max_steps} steps");
        }
        if let Some(p) = panics.into_inner().unwrap().pop() {
            panic::resume_unwind(p);
        }
        let trace = std::mem::take(&mut sched.state.lock().unwrap().trace);
        trace
    }
}

/// Depth-first enumeration of every schedule. `run_one` executes a fresh
/// copy of the scenario under `Policy::Script(prefix)` and returns its
/// trace. Returns the number of schedules executed; stops early at
/// `limit`.
pub fn explore(mut run_one: impl FnMut(Vec<usize>) -> Trace, limit: usize) -> usize {
    let mut prefix = Vec::new();
    let mut runs = 0;
    loop {
        let trace = run_one(prefix.clone());
        runs += 1;
        if runs >= limit {
            return runs;
        }
        let next = trace.decisions.iter().rposition(|d| d.chosen + 1 < d.enabled);
        match next {
            None => return runs,
            Some(i) => {
                prefix = trace.decisions[..i].iter().map(|d| d.chosen).collect();
                prefix.push(trace.decisions[i].chosen + 1);
            }
        }
    }
}
