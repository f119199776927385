//! The network pieces on their own: link delays, intermittent availability,
//! the offline queue and the discrete-event queue.
//!
//!     cargo run --example network_sim

use fedfarm::netsim::{
    sample_available, transmit_time, AvailabilityModel, Direction, EventQueue, LinkModel, OfflineQueue,
};

fn main() -> fedfarm::Result<()> {
    let lora = LinkModel { uplink_bps: 50e3, downlink_bps: 250e3, base_latency_s: 0.4 };
    for bytes in [1_000u64, 16_000, 400_000] {
        println!(
            "{bytes:>7} B: up {:>7.2} s, down {:>6.2} s",
            transmit_time(bytes, &lora, Direction::Up),
            transmit_time(bytes, &lora, Direction::Down)
        );
    }

    // one farm over 8 rounds at 40% availability; updates wait until online
    let model = AvailabilityModel { p_available: 0.4 };
    let mut queue = OfflineQueue::new();
    for round in 0..8u64 {
        let online = sample_available(3, round, &model, 11);
        let sent = queue.defer_or_send(round, online);
        let stale: Vec<u64> = sent.iter().map(|base| round - base).collect();
        println!("round {round}: online {online:<5} sent {sent:?} staleness {stale:?}");
    }

    enum Ev {
        Upload(usize),
        Tick,
    }
    let mut events = EventQueue::new();
    events.push(3.5, Ev::Upload(1))?;
    events.push(1.25, Ev::Upload(2))?;
    events.push(3.5, Ev::Tick)?;
    events.push(0.5, Ev::Upload(0))?;
    while let Some(e) = events.pop() {
        let what = match e.payload {
            Ev::Upload(c) => format!("upload from client {c}"),
            Ev::Tick => "round tick".to_string(),
        };
        println!("t={:<5} #{} {what}", e.time, e.seq);
    }
    Ok(())
}
