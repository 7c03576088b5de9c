use std::time::Duration;

use super::profile::NetProfile;
use super::shaper::LinkShaper;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduledSend {
    pub connection_index: usize,
    pub bytes: usize,
    pub send_time: Duration,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeliveryEvent {
    pub connection_index: usize,
    pub bytes: usize,
    pub send_time: Duration,
    pub deliver_time: Duration,
}

/// Virtual-time delivery of `schedule` over `profile.connections` links, in
/// schedule order. Uses the same per-connection shapers as the shaped
/// sockets' egress side.
pub fn oracle_simulate(schedule: &[ScheduledSend], profile: &NetProfile) -> Vec<DeliveryEvent> {
    let n = profile.connections.max(1 + schedule.iter().map(|s| s.connection_index).max().unwrap_or(0));
    let mut links: Vec<Option<LinkShaper>> = vec![None; n];
    schedule
        .iter()
        .map(|s| {
            let link = links[s.connection_index]
                .get_or_insert_with(|| LinkShaper::for_connection(profile, s.connection_index, n, 0));
            let (_, deliver) = link.send(s.send_time.as_secs_f64(), s.bytes);
            DeliveryEvent {
                connection_index: s.connection_index,
                bytes: s.bytes,
                send_time: s.send_time,
                deliver_time: Duration::from_secs_f64(deliver),
            }
        })
        .collect()
}
