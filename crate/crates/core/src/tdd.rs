//! Slot timing of the 7/2+S TDD pattern at 30 kHz subcarrier spacing.
//!
//! A tick is one 0.5 ms slot. Every 10-slot (5 ms) period holds seven downlink
//! slots, the special slot (counted as downlink-capable) and two uplink slots.

/// Duration of one slot in milliseconds.
pub const TICK_MS: f64 = 0.5;
pub const PERIOD_SLOTS: u64 = 10;
pub const DL_SLOTS_PER_PERIOD: u64 = 8;

/// Whether the slot at `tick` can carry PDSCH.
pub fn is_downlink(tick: u64) -> bool {
    tick % PERIOD_SLOTS < DL_SLOTS_PER_PERIOD
}

/// Downlink slots contained in `ms` milliseconds of whole TDD periods.
pub fn ms_to_dl_slots(ms: f64) -> usize {
    let periods = (ms / (TICK_MS * PERIOD_SLOTS as f64)).round() as usize;
    periods * DL_SLOTS_PER_PERIOD as usize
}

/// Tick of the `n`-th downlink slot when downlink slots are counted from tick 0.
pub fn dl_index_to_tick(n: u64) -> u64 {
    (n / DL_SLOTS_PER_PERIOD) * PERIOD_SLOTS + n % DL_SLOTS_PER_PERIOD
}

/// Converts a duration in milliseconds to whole ticks, if it is a positive
/// multiple of the slot length.
pub fn ms_to_ticks(ms: f64) -> Option<u64> {
    let ticks = ms / TICK_MS;
    let rounded = ticks.round();
    if rounded >= 1.0 && (ticks - rounded).abs() < 1e-9 {
        Some(rounded as u64)
    } else {
        None
    }
}
