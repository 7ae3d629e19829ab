//! ABR end-system behavior per virtual circuit: cell pacing at the allowed
//! cell rate, forward RM insertion every `nrm` cells, ACR decay after
//! idleness, rate updates from backward RM cells, and destination turnaround.

use std::collections::VecDeque;

use crate::engine::SimTime;
use crate::fabric::{CellBody, FrameInfo, RmInfo, CELL_PAYLOAD_BYTES};

/// Source end-system rate parameters, all in cells/s except as noted.
#[derive(Clone, Copy, Debug)]
pub struct SesParams {
    /// Peak cell rate: ACR never exceeds this.
    pub pcr: f64,
    /// Minimum cell rate: ACR never falls below this.
    pub mcr: f64,
    /// Initial cell rate, also the post-idle fallback rate.
    pub icr: f64,
    /// One forward RM cell per this many in-rate cells.
    pub nrm: u32,
    /// Idle spell after which ACR falls back to ICR.
    pub adtf: SimTime,
}

impl SesParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.pcr > 0.0) {
            return Err(format!("pcr must be positive (got {})", self.pcr));
        }
        if self.mcr < 0.0 {
            return Err(format!("mcr must be non-negative (got {})", self.mcr));
        }
        if !(self.mcr <= self.icr && self.icr <= self.pcr) {
            return Err(format!(
                "rate order violated: need mcr <= icr <= pcr (got {}, {}, {})",
                self.mcr, self.icr, self.pcr
            ));
        }
        if self.nrm < 2 {
            return Err(format!("nrm must be at least 2 (got {})", self.nrm));
        }
        Ok(())
    }
}

/// One AAL5 frame waiting to be cut into cells.
#[derive(Debug)]
struct PendingFrame {
    wire_bytes_left: u32,
    info: FrameInfo,
}

/// A frame handed down from the transport layer.
#[derive(Clone, Copy, Debug)]
pub struct Frame {
    /// Application payload length; encapsulation overhead is added here.
    pub payload: u32,
    pub info: FrameInfo,
}

/// Per-segment encapsulation overhead in bytes (transport, network,
/// LLC/SNAP, and AAL5 trailers together).
pub const FRAME_OVERHEAD_BYTES: u32 = 56;

/// ABR source state for one VC direction.
pub struct AbrSource {
    pub params: SesParams,
    acr: f64,
    cells_since_frm: u32,
    last_frm_sent: SimTime,
    last_cell_sent: Option<SimTime>,
    backlog: VecDeque<PendingFrame>,
    /// When set, the source always has a full data cell to send.
    infinite: bool,
}

impl AbrSource {
    pub fn new(params: SesParams) -> Self {
        AbrSource {
            params,
            acr: params.icr,
            // Primed so the very first cell sent is a forward RM cell and
            // the feedback loop starts immediately.
            cells_since_frm: params.nrm - 1,
            last_frm_sent: SimTime::ZERO,
            last_cell_sent: None,
            backlog: VecDeque::new(),
            infinite: false,
        }
    }

    pub fn new_infinite(params: SesParams) -> Self {
        AbrSource {
            infinite: true,
            ..AbrSource::new(params)
        }
    }

    pub fn acr(&self) -> f64 {
        self.acr
    }

    pub fn has_backlog(&self) -> bool {
        self.infinite || !self.backlog.is_empty()
    }

    pub fn backlog_frames(&self) -> usize {
        self.backlog.len()
    }

    fn set_acr(&mut self, acr: f64) {
        self.acr = acr.clamp(self.params.mcr, self.params.pcr);
        debug_assert!(self.acr >= self.params.mcr && self.acr <= self.params.pcr);
    }

    /// Queues one frame. The caller activates the source (ADTF check plus
    /// send scheduling) when it was idle.
    pub fn submit_frame(&mut self, frame: Frame) {
        self.backlog.push_back(PendingFrame {
            wire_bytes_left: frame.payload + FRAME_OVERHEAD_BYTES,
            info: frame.info,
        });
    }

    /// Idle-to-active transition: when the spell since the last forward RM
    /// cell exceeds `adtf` (strictly), ACR falls back to ICR; otherwise the
    /// VC retains its ACR.
    pub fn on_activate(&mut self, now: SimTime) {
        if now.saturating_sub(self.last_frm_sent) > self.params.adtf {
            self.set_acr(self.params.icr);
        }
    }

    /// Earliest instant the next in-rate cell may leave, honoring the
    /// `1/acr` pacing gap. `None` while the rate is zero.
    pub fn earliest_send(&self, now: SimTime) -> Option<SimTime> {
        let gap = SimTime::per(self.acr)?;
        Some(match self.last_cell_sent {
            Some(last) => now.max(last + gap),
            None => now,
        })
    }

    /// Emits the next in-rate cell: a forward RM cell once every `nrm`
    /// sends, otherwise the next data cell of the head frame. Returns the
    /// cell body and the earliest time of the following send (None when the
    /// backlog is exhausted).
    pub fn next_cell(&mut self, now: SimTime) -> (CellBody, Option<SimTime>) {
        debug_assert!(self.has_backlog());
        if let Some(last) = self.last_cell_sent {
            debug_assert!(
                now >= last,
                "send times must not regress: {now} < {last}"
            );
        }
        let body = if self.cells_since_frm == self.params.nrm - 1 {
            self.cells_since_frm = 0;
            self.last_frm_sent = now;
            CellBody::Frm(RmInfo {
                er: self.params.pcr,
                ccr: self.acr,
            })
        } else {
            self.cells_since_frm += 1;
            self.pop_data_cell()
        };
        self.last_cell_sent = Some(now);
        let next = if self.has_backlog() {
            // acr > 0 here: a cell was just transmittable.
            Some(now + SimTime::per(self.acr).expect("positive rate while sending"))
        } else {
            None
        };
        (body, next)
    }

    fn pop_data_cell(&mut self) -> CellBody {
        if self.infinite && self.backlog.is_empty() {
            return CellBody::Data {
                fill: CELL_PAYLOAD_BYTES as u8,
                end_of_frame: false,
                info: None,
            };
        }
        let head = self.backlog.front_mut().expect("data cell without backlog");
        let take = head.wire_bytes_left.min(CELL_PAYLOAD_BYTES);
        head.wire_bytes_left -= take;
        if head.wire_bytes_left == 0 {
            let frame = self.backlog.pop_front().unwrap();
            CellBody::Data {
                fill: take as u8,
                end_of_frame: true,
                info: Some(frame.info),
            }
        } else {
            CellBody::Data {
                fill: take as u8,
                end_of_frame: false,
                info: None,
            }
        }
    }

    /// Applies the explicit rate carried by a backward RM cell. The new ACR
    /// is the ER clamped into [mcr, pcr].
    pub fn on_brm(&mut self, rm: &RmInfo) {
        self.set_acr(rm.er);
    }
}

/// Destination end-system turnaround: a forward RM cell comes back as a
/// backward RM cell with the rate fields copied, sent immediately on the
/// reverse path without consuming the destination's in-rate budget.
pub fn turnaround(frm: &RmInfo) -> CellBody {
    CellBody::Brm(*frm)
}
