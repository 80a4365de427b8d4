//! The expedited track: round-robin fast placement and per-node worklets
//! that run single-use emergency instances outside the standard track's
//! bookkeeping.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::Cluster;
use crate::dist::DelayDist;
use crate::ids::{FunctionIdx, InstanceId, InvocationId, NodeId};
use crate::kernel::{Kernel, KernelError};
use crate::rng::SimRng;
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultConfig {
    #[serde(default)]
    pub enabled: bool,
    /// Probability that a spawn on a faulty node fails.
    #[serde(default)]
    pub prob: f64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: f64,
    /// Nodes subject to failures; all nodes when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<u32>>,
}

fn default_timeout_ms() -> f64 {
    1000.0
}

impl Default for FaultConfig {
    fn default() -> Self {
        FaultConfig { enabled: false, prob: 0.0, timeout_ms: default_timeout_ms(), nodes: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpeditedConfig {
    #[serde(default = "default_delay")]
    pub delay_ms: DelayDist,
    #[serde(default)]
    pub fault: FaultConfig,
    /// Function id → nodes holding its snapshot. Functions not listed can run anywhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_mask: Option<BTreeMap<String, Vec<u32>>>,
}

fn default_delay() -> DelayDist {
    DelayDist::constant_ms(150.0)
}

impl Default for ExpeditedConfig {
    fn default() -> Self {
        ExpeditedConfig { delay_ms: default_delay(), fault: FaultConfig::default(), snapshot_mask: None }
    }
}

impl ExpeditedConfig {
    pub fn validate(&self, node_count: usize) -> Result<(), String> {
        self.delay_ms.validate().map_err(|e| format!("expedited.delay_ms: {e}"))?;
        let f = &self.fault;
        if !(0.0..=1.0).contains(&f.prob) {
            return Err(format!("expedited.fault.prob must be in [0, 1], got {}", f.prob));
        }
        if !(f.timeout_ms.is_finite() && f.timeout_ms > 0.0) {
            return Err(format!("expedited.fault.timeout_ms must be > 0, got {}", f.timeout_ms));
        }
        let in_range = |ns: &[u32]| ns.iter().all(|&n| (n as usize) < node_count);
        if f.nodes.as_deref().is_some_and(|ns| !in_range(ns)) {
            return Err("expedited.fault.nodes references a node outside the cluster".into());
        }
        if let Some(mask) = &self.snapshot_mask {
            for (fid, ns) in mask {
                if ns.is_empty() || !in_range(ns) {
                    return Err(format!("expedited.snapshot_mask[{fid}] must list existing nodes"));
                }
            }
        }
        Ok(())
    }
}

/// Round-robin cursor over the ordered node list.
#[derive(Debug, Clone)]
pub struct FastPlacement {
    cursor: usize,
    placements: Vec<u64>,
}

impl FastPlacement {
    pub fn new(node_count: usize) -> Self {
        assert!(node_count > 0, "fast placement needs at least one node");
        FastPlacement { cursor: 0, placements: vec![0; node_count] }
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn placements(&self) -> &[u64] {
        &self.placements
    }

    /// Node at the cursor, then advance by one. With a snapshot mask the
    /// cursor skips ahead to the next node holding the snapshot.
    pub fn place(&mut self, allowed: Option<&BTreeSet<NodeId>>) -> NodeId {
        let n = self.placements.len();
        let mut pick = self.cursor;
        if let Some(allowed) = allowed {
            pick = (0..n).map(|k| (self.cursor + k) % n).find(|&i| allowed.contains(&NodeId::from(i))).unwrap_or(self.cursor);
        }
        self.cursor = (pick + 1) % n;
        self.placements[pick] += 1;
        NodeId::from(pick)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct WorkletState {
    pub live: BTreeSet<InstanceId>,
    pub created: u64,
    pub completed: u64,
    pub failed: u64,
    /// Memory of live emergency instances on this node.
    pub margin_mb: u64,
}

#[derive(Debug)]
pub struct ExpeditedTrack {
    pub placement: FastPlacement,
    pub worklets: Vec<WorkletState>,
    delay: DelayDist,
    fault: FaultConfig,
    faulty: Vec<bool>,
    masks: Vec<Option<BTreeSet<NodeId>>>,
    delay_rng: SimRng,
    fault_rng: SimRng,
}

impl ExpeditedTrack {
    pub fn new(
        node_count: usize,
        config: &ExpeditedConfig,
        function_ids: &[String],
        delay_rng: SimRng,
        fault_rng: SimRng,
    ) -> Self {
        let faulty = (0..node_count)
            .map(|i| config.fault.enabled && config.fault.nodes.as_ref().is_none_or(|ns| ns.contains(&(i as u32))))
            .collect();
        let masks = function_ids
            .iter()
            .map(|id| {
                config
                    .snapshot_mask
                    .as_ref()
                    .and_then(|m| m.get(id))
                    .map(|ns| ns.iter().map(|&n| NodeId(n)).collect())
            })
            .collect();
        ExpeditedTrack {
            placement: FastPlacement::new(node_count),
            worklets: vec![WorkletState::default(); node_count],
            delay: config.delay_ms.clone(),
            fault: config.fault.clone(),
            faulty,
            masks,
            delay_rng,
            fault_rng,
        }
    }

    /// Places and spawns an emergency instance bound to `invocation`.
    pub fn spawn_and_bind(
        &mut self,
        function: FunctionIdx,
        invocation: InvocationId,
        t: SimTime,
        cluster: &mut Cluster,
        kernel: &mut Kernel,
    ) -> Result<InstanceId, KernelError> {
        let node = self.placement.place(self.masks[function.index()].as_ref());
        let fails = self.faulty[node.index()] && self.fault.prob > 0.0 && self.fault_rng.gen_bool(self.fault.prob);
        let delay = self.delay.sample(&mut self.delay_rng);
        let fail_after = fails.then(|| SimDuration::from_millis_f64(self.fault.timeout_ms));
        let id = cluster.admit_emergency(function, node, invocation, t, delay, fail_after, kernel)?;
        let w = &mut self.worklets[node.index()];
        w.live.insert(id);
        w.created += 1;
        w.margin_mb += cluster.instance(id).memory_mb as u64;
        Ok(id)
    }

    /// Bookkeeping when an emergency instance leaves (teardown or failure).
    pub fn release(&mut self, id: InstanceId, node: NodeId, memory_mb: u32, failed: bool) {
        let w = &mut self.worklets[node.index()];
        if w.live.remove(&id) {
            w.margin_mb -= memory_mb as u64;
            if failed {
                w.failed += 1;
            } else {
                w.completed += 1;
            }
        }
    }

    pub fn check_invariants(&self, cluster: &Cluster) -> Result<(), String> {
        for (i, w) in self.worklets.iter().enumerate() {
            if w.live.len() as u64 != w.created - w.completed - w.failed {
                return Err(format!("worklet {i}: live set {} != created - finished", w.live.len()));
            }
            if w.margin_mb != cluster.nodes[i].margin_mb {
                return Err(format!("worklet {i}: margin {} != node meter {}", w.margin_mb, cluster.nodes[i].margin_mb));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_nodes_five_placements() {
        let mut p = FastPlacement::new(3);
        let got: Vec<u32> = (0..5).map(|_| p.place(None).0).collect();
        assert_eq!(got, vec![0, 1, 2, 0, 1]);
    }

    #[test]
    fn single_node() {
        let mut p = FastPlacement::new(1);
        assert!((0..10).all(|_| p.place(None) == NodeId(0)));
        assert_eq!(p.cursor(), 0);
    }

    #[test]
    fn exact_fairness_over_1000() {
        let mut p = FastPlacement::new(8);
        for _ in 0..1000 {
            p.place(None);
        }
        assert!(p.placements().iter().all(|&c| c == 125));
    }

    #[test]
    fn burst_of_50_over_8_nodes() {
        let mut p = FastPlacement::new(8);
        for _ in 0..50 {
            p.place(None);
        }
        // 50 = 6*8 + 2: the first two nodes take 7
        assert_eq!(p.placements(), &[7, 7, 6, 6, 6, 6, 6, 6]);
    }

    #[test]
    fn mask_skips_nodes_without_snapshot() {
        let mut p = FastPlacement::new(4);
        let allowed: BTreeSet<NodeId> = [NodeId(1), NodeId(3)].into_iter().collect();
        let got: Vec<u32> = (0..4).map(|_| p.place(Some(&allowed)).0).collect();
        assert_eq!(got, vec![1, 3, 1, 3]);
    }

    #[test]
    fn config_validation() {
        let mut c = ExpeditedConfig::default();
        c.validate(2).unwrap();
        c.fault.nodes = Some(vec![5]);
        assert!(c.validate(2).is_err());
        c.fault.nodes = None;
        c.fault.prob = 2.0;
        assert!(c.validate(2).is_err());
    }
}
