use std::time::Duration;

#[derive(Clone, Debug)]
pub struct ClientConfig {
    pub endpoints: Vec<String>,
    pub io_workers: usize,
    pub connections_per_worker: usize,
    pub max_inflight_per_connection: usize,
    pub request_timeout: Duration,
    /// Re-sends on another connection before an item is failed.
    pub retry_limit: u32,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoints: vec!["127.0.0.1:9042".into()],
            io_workers: 8,
            connections_per_worker: 2,
            max_inflight_per_connection: 1024,
            request_timeout: Duration::from_secs(30),
            retry_limit: 1,
        }
    }
}

impl ClientConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self { endpoints: vec![endpoint.into()], ..Self::default() }
    }

    pub fn total_connections(&self) -> usize {
        self.io_workers * self.connections_per_worker
    }
}

/// Index of the least-loaded connection below `cap`, ties to the lowest
/// index. `usize::MAX` marks a connection as unusable.
pub fn least_loaded(outstanding: &[usize], cap: usize, exclude: Option<usize>) -> Option<usize> {
    outstanding
        .iter()
        .enumerate()
        .filter(|&(i, &n)| n < cap && Some(i) != exclude)
        .min_by_key(|&(i, &n)| (n, i))
        .map(|(i, _)| i)
}
