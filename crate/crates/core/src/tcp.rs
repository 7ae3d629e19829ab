//! Simplified TCP over AAL5: segmentation and encapsulation arithmetic,
//! cumulative per-segment ACKs, slow start and congestion avoidance with a
//! scaled window, smoothed RTT estimation with coarse timer granularity,
//! and slow-start restart after idleness.
//!
//! The fabric preserves order and never drops cells, so there is no
//! retransmission path: a retransmission timeout collapses the window back
//! to one segment (the in-flight data still arrives and is acked), and the
//! timer backs off.

use crate::abr::{Frame, FRAME_OVERHEAD_BYTES};
use crate::engine::SimTime;
use crate::fabric::{FrameInfo, CELL_PAYLOAD_BYTES};

/// Cells needed to carry one frame of `payload` application bytes once the
/// 56-byte encapsulation overhead and cell padding are added.
pub fn cells_for_frame(payload: u32) -> u32 {
    (payload + FRAME_OVERHEAD_BYTES).div_ceil(CELL_PAYLOAD_BYTES)
}

#[derive(Clone, Copy, Debug)]
pub struct TcpParams {
    /// Maximum segment size in bytes.
    pub mss: u32,
    /// Receiver window (window scaling assumed), also the cwnd cap.
    pub max_window: u64,
    /// Coarse timer tick; the RTO is rounded up to a multiple of this.
    pub timer_granularity: SimTime,
    /// Reset the congestion window to one segment after an idle spell
    /// longer than the RTO.
    pub idle_restart: bool,
}

impl Default for TcpParams {
    fn default() -> Self {
        TcpParams {
            mss: 512,
            max_window: 16 * 64 * 1024,
            timer_granularity: SimTime::from_millis(100),
            idle_restart: true,
        }
    }
}

impl TcpParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.mss == 0 {
            return Err("mss must be positive".into());
        }
        if self.max_window < self.mss as u64 {
            return Err(format!(
                "max_window {} is smaller than one segment ({})",
                self.max_window, self.mss
            ));
        }
        if self.timer_granularity == SimTime::ZERO {
            return Err("timer_granularity must be positive".into());
        }
        Ok(())
    }
}

const INITIAL_SSTHRESH: u64 = 64 * 1024;
const MAX_RTO: SimTime = SimTime::from_secs(64);

/// Sending side of one TCP direction.
pub struct TcpSender {
    pub params: TcpParams,
    cwnd: u64,
    ssthresh: u64,
    rwnd: u64,
    snd_nxt: u64,
    snd_una: u64,
    /// Application bytes accepted but not yet segmented.
    buffered: u64,
    srtt: Option<u64>,
    rttvar: u64,
    rto: SimTime,
    last_send: Option<SimTime>,
    /// Sequence number and send time of the segment currently being timed.
    timing: Option<(u64, SimTime)>,
    /// Retransmission-timer deadline while data is outstanding.
    deadline: Option<SimTime>,
    timeouts: u64,
    first_rtt_sample: Option<SimTime>,
}

impl TcpSender {
    pub fn new(params: TcpParams) -> Self {
        TcpSender {
            params,
            cwnd: params.mss as u64,
            ssthresh: INITIAL_SSTHRESH.max(2 * params.mss as u64),
            rwnd: params.max_window,
            snd_nxt: 0,
            snd_una: 0,
            buffered: 0,
            srtt: None,
            rttvar: 0,
            rto: params.timer_granularity,
            last_send: None,
            timing: None,
            deadline: None,
            timeouts: 0,
            first_rtt_sample: None,
        }
    }

    pub fn cwnd(&self) -> u64 {
        self.cwnd
    }

    pub fn ssthresh(&self) -> u64 {
        self.ssthresh
    }

    pub fn rto(&self) -> SimTime {
        self.rto
    }

    pub fn outstanding(&self) -> u64 {
        self.snd_nxt - self.snd_una
    }

    pub fn buffered(&self) -> u64 {
        self.buffered
    }

    pub fn deadline(&self) -> Option<SimTime> {
        self.deadline
    }

    pub fn timeouts(&self) -> u64 {
        self.timeouts
    }

    pub fn first_rtt_sample(&self) -> Option<SimTime> {
        self.first_rtt_sample
    }

    /// Accepts application bytes and emits whatever segments the window
    /// permits. The idle-restart check runs before anything is sent.
    pub fn submit(&mut self, bytes: u64, now: SimTime) -> Vec<Frame> {
        debug_assert!(bytes > 0);
        self.idle_restart(now);
        self.buffered += bytes;
        self.pump(now)
    }

    /// Jacobson slow-start restart: a fresh send after an idle spell longer
    /// than the RTO begins from one segment. Within-burst gaps ride the
    /// open window.
    fn idle_restart(&mut self, now: SimTime) {
        if !self.params.idle_restart || self.outstanding() > 0 || self.buffered > 0 {
            return;
        }
        if let Some(last) = self.last_send {
            if now.saturating_sub(last) > self.rto {
                self.ssthresh = (self.cwnd / 2).max(2 * self.params.mss as u64);
                self.cwnd = self.params.mss as u64;
            }
        }
    }

    fn window(&self) -> u64 {
        self.cwnd.min(self.rwnd)
    }

    /// Emits segments while the window permits.
    fn pump(&mut self, now: SimTime) -> Vec<Frame> {
        let mut out = Vec::new();
        while self.buffered > 0 {
            let seg = (self.params.mss as u64).min(self.buffered);
            if self.outstanding() + seg > self.window() {
                break;
            }
            out.push(Frame {
                payload: seg as u32,
                info: FrameInfo::Data {
                    seq: self.snd_nxt,
                    len: seg as u32,
                },
            });
            if self.timing.is_none() {
                self.timing = Some((self.snd_nxt + seg, now));
            }
            if self.deadline.is_none() {
                self.deadline = Some(now + self.rto);
            }
            self.snd_nxt += seg;
            self.buffered -= seg;
            self.last_send = Some(now);
            debug_assert!(self.outstanding() <= self.window());
        }
        out
    }

    /// Handles a cumulative acknowledgement: advances the window, grows
    /// cwnd (slow start below ssthresh, linear above), feeds the RTT
    /// estimator, and releases any newly permitted segments.
    pub fn on_ack(&mut self, ack: u64, now: SimTime) -> Vec<Frame> {
        assert!(ack > self.snd_una, "stale or duplicate ack {ack}");
        assert!(
            ack <= self.snd_nxt,
            "ack {ack} beyond highest sent byte {}",
            self.snd_nxt
        );
        self.snd_una = ack;

        let mss = self.params.mss as u64;
        let inc = if self.cwnd < self.ssthresh {
            mss
        } else {
            mss * mss / self.cwnd
        };
        self.cwnd = (self.cwnd + inc).min(self.params.max_window);

        if let Some((target, sent_at)) = self.timing {
            if ack >= target {
                let sample = now - sent_at;
                self.rto_update(sample);
                self.timing = None;
            }
        }

        self.deadline = if self.outstanding() == 0 {
            None
        } else {
            Some(now + self.rto)
        };

        self.pump(now)
    }

    /// Smoothed RTT estimation with gains 1/8 and 1/4; the RTO is
    /// `srtt + 4 x rttvar` rounded up to the timer granularity and never
    /// below one tick.
    fn rto_update(&mut self, sample: SimTime) {
        let s = sample.as_nanos();
        if self.first_rtt_sample.is_none() {
            self.first_rtt_sample = Some(sample);
        }
        match self.srtt {
            None => {
                self.srtt = Some(s);
                self.rttvar = s / 2;
            }
            Some(srtt) => {
                self.rttvar = (3 * self.rttvar + srtt.abs_diff(s)) / 4;
                self.srtt = Some((7 * srtt + s) / 8);
            }
        }
        let raw = self.srtt.unwrap() + 4 * self.rttvar;
        let g = self.params.timer_granularity.as_nanos();
        self.rto = SimTime::from_nanos(raw.div_ceil(g).max(1) * g);
    }

    /// Called when the armed deadline is reached. With data outstanding the
    /// timer has genuinely expired: the window collapses to one segment,
    /// slow start resumes, and the timer backs off. Nothing is ever sent
    /// twice; the in-flight data is merely late.
    pub fn on_timer_deadline(&mut self, now: SimTime) -> bool {
        match self.deadline {
            Some(d) if now >= d && self.outstanding() > 0 => {
                let mss = self.params.mss as u64;
                self.ssthresh = (self.outstanding() / 2).max(2 * mss);
                self.cwnd = mss;
                self.rto = SimTime::from_nanos((self.rto.as_nanos() * 2).min(MAX_RTO.as_nanos()));
                self.timing = None;
                self.deadline = Some(now + self.rto);
                self.timeouts += 1;
                true
            }
            _ => {
                if self.outstanding() == 0 {
                    self.deadline = None;
                }
                false
            }
        }
    }
}

/// Receiving side of one TCP direction: in-order, loss-free cumulative
/// acknowledgement of every segment (no delayed ACK).
pub struct TcpReceiver {
    rcv_nxt: u64,
}

impl TcpReceiver {
    pub fn new() -> Self {
        TcpReceiver { rcv_nxt: 0 }
    }

    pub fn received(&self) -> u64 {
        self.rcv_nxt
    }

    /// Accepts one segment and returns the cumulative ACK value to emit.
    pub fn on_segment(&mut self, seq: u64, len: u32) -> u64 {
        assert_eq!(
            seq, self.rcv_nxt,
            "out-of-order segment: got {seq}, expected {}",
            self.rcv_nxt
        );
        self.rcv_nxt += len as u64;
        self.rcv_nxt
    }
}

impl Default for TcpReceiver {
    fn default() -> Self {
        Self::new()
    }
}
