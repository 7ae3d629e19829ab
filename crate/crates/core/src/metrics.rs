//! Measurement and reporting: queue maxima and time series, delivered-byte
//! accounting, the efficiency metric, and CSV formatting.

use crate::engine::SimTime;
use crate::fabric::PortId;

/// Cells in flight over one round trip at access-link speed; queue maxima
/// are normalized to this constant.
pub const RTT_CELLS: f64 = 11_040.0;

/// Fraction of ABR capacity reachable by TCP payload once cell padding and
/// the per-32-cells RM overhead are paid (with a 512-byte segment size).
pub const TCP_ABR_CEILING: f64 = 0.78;

/// Raw payload fraction of a segment carried over cells:
/// `mss / (cells x 53)`.
pub fn atm_payload_ceiling(mss: u32) -> f64 {
    mss as f64 / (crate::tcp::cells_for_frame(mss) as f64 * 53.0)
}

/// Payload ceiling after in-rate RM overhead: `(nrm-1)/nrm` of the cell
/// budget carries data.
pub fn abr_payload_ceiling(mss: u32, nrm: u32) -> f64 {
    (nrm - 1) as f64 / nrm as f64 * atm_payload_ceiling(mss)
}

/// Delivered TCP throughput over the ceiling imposed by encapsulation and
/// RM overhead.
pub fn compute_efficiency(throughput_mbps: f64, bottleneck_mbps: f64) -> f64 {
    assert!(bottleneck_mbps > 0.0);
    throughput_mbps / (TCP_ABR_CEILING * bottleneck_mbps)
}

/// One switch-algorithm interval snapshot, for the optional debug CSV.
#[derive(Clone, Copy, Debug)]
pub struct EricaIntervalRow {
    pub at: SimTime,
    pub port: PortId,
    pub queue_cells: u32,
    pub z: f64,
    pub fair_share: f64,
    pub target_capacity: f64,
}

/// Hooks fed by the fabric and end systems during a run.
pub struct MetricsCollector {
    warmup: SimTime,
    port_peak: Vec<u64>,
    bottleneck: PortId,
    queue_series: Vec<(SimTime, u32)>,
    delivered_per_conn: Vec<u64>,
    bottleneck_goodput_bytes: u64,
    erica_rows: Option<Vec<EricaIntervalRow>>,
    tcp_timeouts: u64,
    resettable_peak: u64,
}

impl MetricsCollector {
    pub fn new(ports: usize, conns: usize, bottleneck: PortId, warmup: SimTime, erica_debug: bool) -> Self {
        MetricsCollector {
            warmup,
            port_peak: vec![0; ports],
            bottleneck,
            queue_series: Vec::new(),
            delivered_per_conn: vec![0; conns],
            bottleneck_goodput_bytes: 0,
            erica_rows: erica_debug.then(Vec::new),
            tcp_timeouts: 0,
            resettable_peak: 0,
        }
    }

    /// Called on every enqueue at an instrumented port.
    pub fn record_queue(&mut self, port: PortId, len: usize) {
        let len = len as u64;
        let peak = &mut self.port_peak[port.idx()];
        if len > *peak {
            *peak = len;
        }
        if port == self.bottleneck && len > self.resettable_peak {
            self.resettable_peak = len;
        }
    }

    /// Periodic sample of the bottleneck queue for the time series.
    pub fn sample_queue(&mut self, now: SimTime, len: usize) {
        self.queue_series.push((now, len as u32));
    }

    /// Application bytes delivered to a client, counted after warmup.
    pub fn record_delivery(&mut self, conn: usize, bytes: u64, now: SimTime) {
        if now >= self.warmup {
            self.delivered_per_conn[conn] += bytes;
        }
    }

    /// Application payload crossing the bottleneck port, counted on the
    /// last cell of each data frame after warmup. Cross-checks the
    /// per-connection delivery accounting.
    pub fn record_bottleneck_goodput(&mut self, bytes: u64, now: SimTime) {
        if now >= self.warmup {
            self.bottleneck_goodput_bytes += bytes;
        }
    }

    pub fn record_erica_interval(&mut self, row: EricaIntervalRow) {
        if let Some(rows) = &mut self.erica_rows {
            rows.push(row);
        }
    }

    pub fn erica_debug_enabled(&self) -> bool {
        self.erica_rows.is_some()
    }

    pub fn record_tcp_timeout(&mut self) {
        self.tcp_timeouts += 1;
    }

    pub fn bottleneck_peak(&self) -> u64 {
        self.port_peak[self.bottleneck.idx()]
    }

    /// Peak since the last reset; lets callers measure post-transient
    /// behavior separately.
    pub fn take_resettable_peak(&mut self) -> u64 {
        std::mem::replace(&mut self.resettable_peak, 0)
    }

    pub fn finish(self, n_servers: u32, duration: SimTime, bottleneck_mbps: f64) -> RunMetrics {
        let window = duration - self.warmup;
        let secs = window.as_secs_f64();
        let per_conn_mbps: Vec<f64> = self
            .delivered_per_conn
            .iter()
            .map(|&b| b as f64 * 8.0 / secs / 1e6)
            .collect();
        let delivered_bytes: u64 = self.delivered_per_conn.iter().sum();
        let throughput_mbps = delivered_bytes as f64 * 8.0 / secs / 1e6;
        RunMetrics {
            n_servers,
            max_queue_cells: self.port_peak[self.bottleneck.idx()],
            port_peaks: self.port_peak,
            throughput_mbps,
            efficiency: compute_efficiency(throughput_mbps, bottleneck_mbps),
            delivered_bytes,
            per_conn_mbps,
            bottleneck_goodput_bytes: self.bottleneck_goodput_bytes,
            queue_series: self.queue_series,
            erica_rows: self.erica_rows,
            tcp_timeouts: self.tcp_timeouts,
            window,
        }
    }
}

/// Summary of one completed run.
pub struct RunMetrics {
    pub n_servers: u32,
    /// Peak of the bottleneck output queue over the whole run.
    pub max_queue_cells: u64,
    pub port_peaks: Vec<u64>,
    /// Server-to-client application throughput over the measurement window.
    pub throughput_mbps: f64,
    pub efficiency: f64,
    pub delivered_bytes: u64,
    pub per_conn_mbps: Vec<f64>,
    pub bottleneck_goodput_bytes: u64,
    pub queue_series: Vec<(SimTime, u32)>,
    pub erica_rows: Option<Vec<EricaIntervalRow>>,
    pub tcp_timeouts: u64,
    pub window: SimTime,
}

impl RunMetrics {
    pub fn max_queue_rtt(&self) -> f64 {
        self.max_queue_cells as f64 / RTT_CELLS
    }
}

pub const SUMMARY_HEADER: &str = "n_servers,max_queue_cells,max_queue_rtt,throughput_mbps,efficiency_pct";

pub fn summary_row(m: &RunMetrics) -> String {
    format!(
        "{},{},{:.2},{:.2},{:.1}",
        m.n_servers,
        m.max_queue_cells,
        m.max_queue_rtt(),
        m.throughput_mbps,
        m.efficiency * 100.0
    )
}

/// Summary CSV: header plus one row per run, in the given order.
pub fn summary_csv<'a>(runs: impl IntoIterator<Item = &'a RunMetrics>) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for m in runs {
        out.push_str(&summary_row(m));
        out.push('\n');
    }
    out
}

/// Bottleneck-queue time series CSV.
pub fn queue_csv(series: &[(SimTime, u32)]) -> String {
    let mut out = String::from("time_s,queue_cells\n");
    for (at, len) in series {
        out.push_str(&format!("{:.6},{}\n", at.as_secs_f64(), len));
    }
    out
}

/// Per-interval switch-algorithm debug CSV.
pub fn erica_csv(rows: &[EricaIntervalRow]) -> String {
    let mut out = String::from("time_s,port,queue_cells,z,fair_share_cps,target_capacity_cps\n");
    for r in rows {
        out.push_str(&format!(
            "{:.6},{},{},{:.6},{:.3},{:.3}\n",
            r.at.as_secs_f64(),
            r.port.0,
            r.queue_cells,
            r.z,
            r.fair_share,
            r.target_capacity
        ));
    }
    out
}
