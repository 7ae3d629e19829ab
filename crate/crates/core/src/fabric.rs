//! ATM wire model: cells, point-to-point links with serialization and
//! propagation delay, and output-queued switch ports with unbounded FIFOs.

use std::collections::VecDeque;

use crate::engine::SimTime;

/// Bytes on the wire per cell, header included.
pub const CELL_BYTES: u64 = 53;
/// Data bytes carried per cell.
pub const CELL_PAYLOAD_BYTES: u32 = 48;
/// Bits per cell on a link.
pub const CELL_BITS: f64 = (CELL_BYTES * 8) as f64;
/// Fiber propagation figure used for all links.
pub const PROP_US_PER_KM: f64 = 5.0;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct VcId(pub u32);

impl VcId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct PortId(pub u32);

impl PortId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct LinkId(pub u32);

impl LinkId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

/// Explicit-rate fields carried by resource-management cells, in cells/s.
#[derive(Clone, Copy, Debug)]
pub struct RmInfo {
    /// Explicit rate: switches may lower this, never raise it.
    pub er: f64,
    /// Current cell rate of the source when the forward RM cell was stamped.
    pub ccr: f64,
}

/// Simulated contents of a reassembled AAL5 frame, attached to its last cell.
#[derive(Clone, Copy, Debug)]
pub enum FrameInfo {
    /// A data segment: `seq` is the first byte, `len` the payload length.
    Data { seq: u64, len: u32 },
    /// A cumulative acknowledgement for everything below `ack`.
    Ack { ack: u64 },
}

#[derive(Clone, Copy, Debug)]
pub enum CellBody {
    Data {
        /// Wire bytes of the frame carried by this cell (0-48).
        fill: u8,
        /// Marks the last cell of an AAL5 frame.
        end_of_frame: bool,
        /// Present only on the last cell of a frame.
        info: Option<FrameInfo>,
    },
    /// Forward resource-management cell (source to destination).
    Frm(RmInfo),
    /// Backward resource-management cell (destination to source).
    Brm(RmInfo),
}

/// The atomic transmission unit. Every cell occupies exactly 53 byte-times
/// on a link regardless of kind or payload fill.
#[derive(Clone, Copy, Debug)]
pub struct Cell {
    pub vc: VcId,
    pub body: CellBody,
}

impl Cell {
    pub fn is_brm(&self) -> bool {
        matches!(self.body, CellBody::Brm(_))
    }

    pub fn is_frm(&self) -> bool {
        matches!(self.body, CellBody::Frm(_))
    }
}

/// Per-link timing: one cell's serialization time and the propagation delay.
#[derive(Clone, Copy, Debug)]
pub struct LinkTiming {
    pub cell_time: SimTime,
    pub prop: SimTime,
}

impl LinkTiming {
    pub fn new(rate_bps: f64, length_km: f64) -> Self {
        LinkTiming {
            cell_time: SimTime::per(rate_bps / CELL_BITS).expect("link rate must be positive"),
            prop: SimTime::from_secs_f64(length_km * PROP_US_PER_KM * 1e-6),
        }
    }
}

/// A host NIC's transmit side. Cells handed over while the link is busy
/// serialize behind the in-flight cell, so FIFO order is preserved.
pub struct HostLink {
    pub timing: LinkTiming,
    busy_until: SimTime,
    pub cells_sent: u64,
}

impl HostLink {
    pub fn new(timing: LinkTiming) -> Self {
        HostLink {
            timing,
            busy_until: SimTime::ZERO,
            cells_sent: 0,
        }
    }

    /// Accepts one cell for transmission at `now`; returns its arrival time
    /// at the far end.
    pub fn transmit(&mut self, now: SimTime) -> SimTime {
        let start = now.max(self.busy_until);
        self.busy_until = start + self.timing.cell_time;
        self.cells_sent += 1;
        self.busy_until + self.timing.prop
    }
}

/// Switch output port: unbounded FIFO served at the outgoing link's rate.
///
/// The head cell counts as queued until its service completes, so
/// `cells_in == cells_out + len()` holds at every instant.
pub struct SwitchPort {
    pub timing: LinkTiming,
    fifo: VecDeque<(Cell, u8)>,
    busy: bool,
    pub cells_in: u64,
    pub cells_out: u64,
}

impl SwitchPort {
    pub fn new(timing: LinkTiming) -> Self {
        SwitchPort {
            timing,
            fifo: VecDeque::new(),
            busy: false,
            cells_in: 0,
            cells_out: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.fifo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fifo.is_empty()
    }

    /// Appends a cell (tagged with its next hop index). When the link was
    /// idle, service begins immediately and the completion time is returned.
    pub fn enqueue(&mut self, now: SimTime, cell: Cell, hop: u8) -> Option<SimTime> {
        self.cells_in += 1;
        self.fifo.push_back((cell, hop));
        if self.busy {
            None
        } else {
            self.busy = true;
            Some(now + self.timing.cell_time)
        }
    }

    /// Completes service of the head cell. Returns the cell, its hop tag,
    /// its arrival time at the far end of the link, and the completion time
    /// of the next cell if one is waiting.
    pub fn service_done(&mut self, now: SimTime) -> (Cell, u8, SimTime, Option<SimTime>) {
        debug_assert!(self.busy);
        let (cell, hop) = self.fifo.pop_front().expect("service on empty port");
        self.cells_out += 1;
        let arrival = now + self.timing.prop;
        let next = if self.fifo.is_empty() {
            self.busy = false;
            None
        } else {
            Some(now + self.timing.cell_time)
        };
        (cell, hop, arrival, next)
    }

    /// Conservation law: every cell that entered either left or is queued.
    pub fn conserved(&self) -> bool {
        self.cells_in == self.cells_out + self.fifo.len() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data_cell(vc: u32) -> Cell {
        Cell {
            vc: VcId(vc),
            body: CellBody::Data {
                fill: 48,
                end_of_frame: false,
                info: None,
            },
        }
    }

    #[test]
    fn cell_arrival_time_on_access_link() {
        // 155.52 Mbps, 1000 km: 424/155.52e6 + 5 ms ~ 5.0027 ms.
        let mut link = HostLink::new(LinkTiming::new(155.52e6, 1000.0));
        let arrival = link.transmit(SimTime::ZERO);
        assert_eq!(arrival.as_nanos(), 2_726 + 5_000_000);
    }

    #[test]
    fn cell_arrival_time_on_bottleneck_link() {
        // 45 Mbps, 1000 km: 424/45e6 + 5 ms ~ 5.0094 ms.
        let mut link = HostLink::new(LinkTiming::new(45e6, 1000.0));
        let arrival = link.transmit(SimTime::ZERO);
        assert_eq!(arrival.as_nanos(), 9_422 + 5_000_000);
    }

    #[test]
    fn zero_length_link_is_serialization_only() {
        let mut link = HostLink::new(LinkTiming::new(45e6, 0.0));
        assert_eq!(link.transmit(SimTime::ZERO).as_nanos(), 9_422);
    }

    #[test]
    fn back_to_back_cells_serialize_in_order() {
        let mut link = HostLink::new(LinkTiming::new(155.52e6, 1000.0));
        let a = link.transmit(SimTime::ZERO);
        let b = link.transmit(SimTime::ZERO);
        assert_eq!(b - a, SimTime::from_nanos(2_726));
    }

    #[test]
    fn port_serves_burst_at_link_rate() {
        let mut port = SwitchPort::new(LinkTiming::new(45e6, 1000.0));
        let first = port.enqueue(SimTime::ZERO, data_cell(0), 0).unwrap();
        for _ in 1..1000 {
            assert!(port.enqueue(SimTime::ZERO, data_cell(0), 0).is_none());
        }
        let mut now = first;
        let mut last_departure = SimTime::ZERO;
        let mut served = 0;
        loop {
            let (_, _, _, next) = port.service_done(now);
            served += 1;
            last_departure = now;
            match next {
                Some(t) => now = t,
                None => break,
            }
        }
        assert_eq!(served, 1000);
        // 1000 cells at 45 Mbps: last departs 1000 x 9422 ns after start.
        assert_eq!(last_departure.as_nanos(), 1000 * 9_422);
        assert!(port.conserved());
        assert_eq!(port.cells_out, 1000);
    }

    #[test]
    fn enqueue_while_busy_preserves_fifo() {
        let mut port = SwitchPort::new(LinkTiming::new(45e6, 0.0));
        let t1 = port.enqueue(SimTime::ZERO, data_cell(1), 0).unwrap();
        assert!(port.enqueue(SimTime::ZERO, data_cell(2), 0).is_none());
        assert_eq!(port.len(), 2);
        let (c, _, _, next) = port.service_done(t1);
        assert_eq!(c.vc, VcId(1));
        let (c, _, _, next2) = port.service_done(next.unwrap());
        assert_eq!(c.vc, VcId(2));
        assert!(next2.is_none());
        assert!(port.conserved());
    }
}
