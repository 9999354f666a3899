use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Activation, CloudProvider, ConcreteInstanceRequest, InstanceState, ProviderError};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Latency {
    Fixed(Duration),
    /// Inclusive millisecond range.
    Uniform(Duration, Duration),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimProviderConfig {
    pub seed: u64,
    pub provision_latency: Latency,
    pub failure_rate: f64,
    pub capacity: Option<u32>,
    /// 1-based call numbers (creates and deletes share the counter) that fail
    /// regardless of `failure_rate`.
    pub forced_failures: BTreeSet<u64>,
}

impl Default for SimProviderConfig {
    fn default() -> Self {
        SimProviderConfig {
            seed: 0,
            provision_latency: Latency::Fixed(Duration::from_secs(30)),
            failure_rate: 0.0,
            capacity: None,
            forced_failures: BTreeSet::new(),
        }
    }
}

impl SimProviderConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(0.0..=1.0).contains(&self.failure_rate) {
            return Err("failure_rate must lie in [0, 1]");
        }
        if let Latency::Uniform(lo, hi) = self.provision_latency {
            if lo > hi {
                return Err("latency range is reversed");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct SimInstance {
    state: InstanceState,
    active_at: Timestamp,
}

/// Deterministic in-memory provider.
///
/// Every create/delete call draws exactly one uniform variate from a ChaCha
/// stream seeded by `config.seed`, so the same seed and call sequence yields
/// the same failures, latencies, and `sim-<n>` ids.
#[derive(Debug, Clone)]
pub struct SimProvider {
    config: SimProviderConfig,
    rng: ChaCha8Rng,
    calls: u64,
    next_id: u64,
    live: BTreeMap<u64, SimInstance>,
    deleted: BTreeSet<u64>,
}

impl SimProvider {
    pub fn new(config: SimProviderConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        SimProvider { config, rng, calls: 0, next_id: 1, live: BTreeMap::new(), deleted: BTreeSet::new() }
    }

    pub fn config(&self) -> &SimProviderConfig {
        &self.config
    }

    /// Every id this provider has handed out.
    pub fn issued_ids(&self) -> Vec<String> {
        (1..self.next_id).map(render_id).collect()
    }

    pub fn deleted_ids(&self) -> Vec<String> {
        self.deleted.iter().copied().map(render_id).collect()
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    fn draw_failure(&mut self) -> bool {
        self.calls += 1;
        let u: f64 = self.rng.gen();
        u < self.config.failure_rate || self.config.forced_failures.contains(&self.calls)
    }

    fn draw_latency(&mut self) -> Duration {
        match self.config.provision_latency {
            Latency::Fixed(d) => d,
            Latency::Uniform(lo, hi) => {
                let ms = self.rng.gen_range(crate::time::duration_millis(lo)..=crate::time::duration_millis(hi));
                Duration::from_millis(ms)
            }
        }
    }
}

fn render_id(n: u64) -> String {
    format!("sim-{n}")
}

fn parse_id(id: &str) -> Option<u64> {
    let n = id.strip_prefix("sim-")?;
    if n.is_empty() || !n.bytes().all(|b| b.is_ascii_digit()) || n.starts_with('0') {
        return None;
    }
    n.parse().ok()
}

impl CloudProvider for SimProvider {
    fn create_instance(&mut self, _req: &ConcreteInstanceRequest, now: Timestamp) -> Result<String, ProviderError> {
        let fail = self.draw_failure();
        if fail {
            return Err(ProviderError::Transient(format!("injected failure on call {}", self.calls)));
        }
        if let Some(cap) = self.config.capacity {
            if self.live.len() >= cap as usize {
                return Err(ProviderError::CapacityExceeded(cap));
            }
        }
        let latency = self.draw_latency();
        let n = self.next_id;
        self.next_id += 1;
        self.live.insert(n, SimInstance { state: InstanceState::Building, active_at: now + latency });
        Ok(render_id(n))
    }

    fn delete_instance(&mut self, instance_id: &str, _now: Timestamp) -> Result<(), ProviderError> {
        let fail = self.draw_failure();
        let n = parse_id(instance_id)
            .filter(|n| *n < self.next_id)
            .ok_or_else(|| ProviderError::UnknownInstance(instance_id.to_string()))?;
        if fail {
            return Err(ProviderError::Transient(format!("injected failure on call {}", self.calls)));
        }
        if self.live.remove(&n).is_some() {
            self.deleted.insert(n);
        }
        Ok(())
    }

    fn list_instances(&self) -> Vec<(String, InstanceState)> {
        self.live.iter().map(|(n, inst)| (render_id(*n), inst.state)).collect()
    }

    fn next_activation(&self) -> Option<Timestamp> {
        self.live.values().filter(|i| i.state == InstanceState::Building).map(|i| i.active_at).min()
    }

    fn take_activations(&mut self, now: Timestamp) -> Vec<Activation> {
        let mut due: Vec<(Timestamp, u64)> = self
            .live
            .iter()
            .filter(|(_, i)| i.state == InstanceState::Building && i.active_at <= now)
            .map(|(n, i)| (i.active_at, *n))
            .collect();
        due.sort();
        due.into_iter()
            .map(|(at, n)| {
                self.live.get_mut(&n).expect("due instance is live").state = InstanceState::Active;
                Activation { instance_id: render_id(n), at }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::test_support::config;
    use crate::provider::{resolve, CloudProfile};

    fn req() -> ConcreteInstanceRequest {
        resolve(&config(4), &CloudProfile::bundled("jetstream-like").unwrap()).unwrap()
    }

    #[test]
    fn fixed_latency_activation() {
        let mut p = SimProvider::new(SimProviderConfig::default());
        let id = p.create_instance(&req(), Timestamp::from_secs(100)).unwrap();
        assert_eq!(id, "sim-1");
        assert_eq!(p.next_activation(), Some(Timestamp::from_secs(130)));
        assert!(p.take_activations(Timestamp::from_secs(129)).is_empty());
        assert_eq!(
            p.take_activations(Timestamp::from_secs(130)),
            vec![Activation { instance_id: id, at: Timestamp::from_secs(130) }]
        );
        assert_eq!(p.next_activation(), None);
    }

    #[test]
    fn certain_failure() {
        let mut p = SimProvider::new(SimProviderConfig { failure_rate: 1.0, ..Default::default() });
        assert!(matches!(p.create_instance(&req(), Timestamp(0)), Err(ProviderError::Transient(_))));
    }

    #[test]
    fn capacity_cap() {
        let mut p = SimProvider::new(SimProviderConfig { capacity: Some(2), ..Default::default() });
        p.create_instance(&req(), Timestamp(0)).unwrap();
        p.create_instance(&req(), Timestamp(0)).unwrap();
        assert_eq!(p.create_instance(&req(), Timestamp(0)), Err(ProviderError::CapacityExceeded(2)));
    }

    #[test]
    fn delete_semantics() {
        let mut p = SimProvider::new(SimProviderConfig::default());
        let a = p.create_instance(&req(), Timestamp(0)).unwrap();
        let _b = p.create_instance(&req(), Timestamp(0)).unwrap();
        p.delete_instance(&a, Timestamp(1)).unwrap();
        assert_eq!(p.list_instances().len(), 1);
        p.delete_instance(&a, Timestamp(2)).unwrap();
        assert_eq!(
            p.delete_instance("never-issued", Timestamp(3)),
            Err(ProviderError::UnknownInstance("never-issued".into()))
        );
        assert_eq!(p.delete_instance("sim-99", Timestamp(3)), Err(ProviderError::UnknownInstance("sim-99".into())));
    }

    #[test]
    fn empty_provider_lists_nothing() {
        assert!(SimProvider::new(SimProviderConfig::default()).list_instances().is_empty());
    }

    #[test]
    fn forced_failures_hit_exact_calls() {
        let cfg = SimProviderConfig { forced_failures: [1, 2].into_iter().collect(), ..Default::default() };
        let mut p = SimProvider::new(cfg);
        assert!(p.create_instance(&req(), Timestamp(0)).is_err());
        assert!(p.create_instance(&req(), Timestamp(0)).is_err());
        assert_eq!(p.create_instance(&req(), Timestamp(0)).unwrap(), "sim-1");
    }

    #[test]
    fn same_seed_same_behavior() {
        let cfg = SimProviderConfig {
            seed: 42,
            provision_latency: Latency::Uniform(Duration::from_secs(10), Duration::from_secs(60)),
            failure_rate: 0.3,
            ..Default::default()
        };
        let run = |cfg: SimProviderConfig| {
            let mut p = SimProvider::new(cfg);
            let outcomes: Vec<_> = (0..50).map(|i| p.create_instance(&req(), Timestamp(i)).is_ok()).collect();
            let mut acts = Vec::new();
            while let Some(t) = p.next_activation() {
                acts.extend(p.take_activations(t));
            }
            (outcomes, acts)
        };
        assert_eq!(run(cfg.clone()), run(cfg.clone()));
        let other = run(SimProviderConfig { seed: 43, ..cfg.clone() });
        assert_ne!(run(cfg), other);
    }
}
