//! Web server and client application models: the discrete file-size sampler
//! and the client request/think state machine.
//!
//! A client fetches documents in batches of five GETs over one persistent
//! connection: the first request is closed-loop (it fetches the small index
//! page), the remaining four are pipelined once the first response arrives,
//! and a constant think time separates batches.

use crate::engine::{RngStream, SimTime};

/// Long-run access frequency per file-size class.
pub const CLASS_WEIGHTS: [f64; 5] = [0.20, 0.28, 0.40, 0.112, 0.008];

/// Weights for pipelined requests, renormalized over classes 1-4 so the
/// aggregate stream reproduces the class table given that every fifth
/// request fetches an index page.
pub const PIPELINED_WEIGHTS: [f64; 4] = [0.35, 0.50, 0.14, 0.01];

/// Nine discrete sizes per class.
pub const SIZES_PER_CLASS: usize = 9;

/// GET requests per batch.
pub const REQUESTS_PER_BATCH: u8 = 5;

/// Application bytes per GET message.
pub const REQUEST_BYTES: u32 = 256;

/// Think time between batches.
pub const THINK_TIME: SimTime = SimTime::from_secs(10);

/// Long-run offered load per client in Mbps when the network does not
/// constrain transfers.
pub const PER_CLIENT_LOAD_MBPS: f64 = 0.48;

/// Smallest size of class `c`; the nine sizes are `1..=9` times this.
/// Sizes use decimal kilobytes so the class means stay round.
pub fn class_base_bytes(class: usize) -> u64 {
    debug_assert!(class < CLASS_WEIGHTS.len());
    match class {
        0 => 100,
        c => 10u64.pow(c as u32 + 2),
    }
}

/// File-size sampler over five classes with nine evenly likely discrete
/// sizes each.
#[derive(Clone, Copy, Debug, Default)]
pub struct FileSizeTable;

impl FileSizeTable {
    /// Draws a response size for the request at `position` (1-based) within
    /// its batch. Position 1 is always an index page (class 0); later
    /// positions draw from the renormalized class weights.
    pub fn sample(&self, rng: &mut RngStream, position: u8) -> u64 {
        debug_assert!((1..=REQUESTS_PER_BATCH).contains(&position));
        let class = if position == 1 {
            0
        } else {
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut class = PIPELINED_WEIGHTS.len(); // guards rounding at u ~ 1
            for (i, w) in PIPELINED_WEIGHTS.iter().enumerate() {
                acc += w;
                if u < acc {
                    class = i + 1;
                    break;
                }
            }
            class
        };
        let step = rng.uniform_index(SIZES_PER_CLASS) as u64 + 1;
        step * class_base_bytes(class)
    }

    /// Exact long-run mean of the sampled sizes, by enumeration.
    pub fn mean_bytes(&self) -> f64 {
        let mut mean = 0.0;
        for (c, w) in CLASS_WEIGHTS.iter().enumerate() {
            // Mean of {1..9} x base is 5 x base.
            mean += w * 5.0 * class_base_bytes(c) as f64;
        }
        mean
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ClientPhase {
    /// Not yet started.
    Idle,
    /// First (closed-loop) request outstanding.
    AwaitFirst,
    /// Pipelined requests outstanding.
    Pipeline,
    /// Between batches.
    Think,
}

#[derive(Clone, Copy, Debug)]
pub enum ClientEvent {
    Start,
    ResponseComplete,
    ThinkExpired,
}

#[derive(Clone, Copy, Debug)]
pub enum ClientAction {
    /// Send one GET carrying its batch position (1-based).
    Request { position: u8 },
    /// Arm the think timer for `THINK_TIME`.
    StartThink,
}

/// Client request state machine.
pub struct ClientFsm {
    phase: ClientPhase,
    responses_pending: u8,
    batches_completed: u64,
}

impl ClientFsm {
    pub fn new() -> Self {
        ClientFsm {
            phase: ClientPhase::Idle,
            responses_pending: 0,
            batches_completed: 0,
        }
    }

    pub fn phase(&self) -> ClientPhase {
        self.phase
    }

    pub fn batches_completed(&self) -> u64 {
        self.batches_completed
    }

    pub fn step(&mut self, event: ClientEvent) -> Vec<ClientAction> {
        match (self.phase, event) {
            (ClientPhase::Idle, ClientEvent::Start)
            | (ClientPhase::Think, ClientEvent::ThinkExpired) => {
                self.phase = ClientPhase::AwaitFirst;
                self.responses_pending = 1;
                vec![ClientAction::Request { position: 1 }]
            }
            (ClientPhase::AwaitFirst, ClientEvent::ResponseComplete) => {
                self.phase = ClientPhase::Pipeline;
                self.responses_pending = REQUESTS_PER_BATCH - 1;
                (2..=REQUESTS_PER_BATCH)
                    .map(|position| ClientAction::Request { position })
                    .collect()
            }
            (ClientPhase::Pipeline, ClientEvent::ResponseComplete) => {
                assert!(self.responses_pending > 0, "response with none pending");
                self.responses_pending -= 1;
                if self.responses_pending == 0 {
                    self.phase = ClientPhase::Think;
                    self.batches_completed += 1;
                    vec![ClientAction::StartThink]
                } else {
                    Vec::new()
                }
            }
            (phase, event) => panic!("client event {event:?} in phase {phase:?}"),
        }
    }
}

impl Default for ClientFsm {
    fn default() -> Self {
        Self::new()
    }
}
