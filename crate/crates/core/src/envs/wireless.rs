//! Multi-user uplink with per-user packet queues.
//!
//! The joint state stores every queue length in base `buffer + 1`, user 0 in
//! the lowest digit. Action bit `i` means user `i` transmits. A lone
//! transmission from a nonempty queue succeeds with probability `alpha_good`
//! and otherwise the packet stays; idle slots and collisions deliver nothing.
//! Arrivals follow departures, one Bernoulli(`arrival_rate`) packet per user,
//! dropped when the buffer is full.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::GroupingFunction;
use crate::mdp::TabularMdp;

use super::check_unit;

pub const MAX_USERS: usize = 4;
pub const MAX_BUFFER: usize = 3;

fn default_alpha_good() -> f64 {
    0.9
}

fn default_gamma() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WirelessAccessConfig {
    pub n_users: usize,
    pub buffer: usize,
    pub arrival_rate: f64,
    #[serde(default = "default_alpha_good")]
    pub alpha_good: f64,
    /// Per-user throughput weights; `1 / N` each when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w1: Option<Vec<f64>>,
    /// Per-user queue weights; `1 / (N buffer)` each when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w2: Option<Vec<f64>>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

impl WirelessAccessConfig {
    pub fn new(n_users: usize, buffer: usize, arrival_rate: f64) -> Self {
        Self {
            n_users,
            buffer,
            arrival_rate,
            alpha_good: default_alpha_good(),
            w1: None,
            w2: None,
            gamma: default_gamma(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WirelessAccess {
    pub mdp: TabularMdp,
    /// Group 0: exactly one user transmits. Group 1: everything else.
    pub grouping: GroupingFunction,
}

/// Queue lengths encoded in state `s`.
pub fn decode_state(s: usize, n_users: usize, buffer: usize) -> Vec<usize> {
    let base = buffer + 1;
    let mut rest = s;
    (0..n_users)
        .map(|_| {
            let q = rest % base;
            rest /= base;
            q
        })
        .collect()
}

pub fn encode_state(queues: &[usize], buffer: usize) -> usize {
    queues.iter().rev().fold(0, |acc, &q| acc * (buffer + 1) + q)
}

fn weights(given: &Option<Vec<f64>>, n: usize, default: f64, name: &str) -> Result<Vec<f64>> {
    match given {
        None => Ok(vec![default; n]),
        Some(w) if w.len() != n => {
            Err(Error::InvalidArgument(format!("{name} has {} entries for {n} users", w.len())))
        }
        Some(w) => {
            for &x in w {
                check_unit(name, x)?;
            }
            Ok(w.clone())
        }
    }
}

pub fn build_wireless_access(cfg: &WirelessAccessConfig) -> Result<WirelessAccess> {
    let (n, b) = (cfg.n_users, cfg.buffer);
    if n == 0 || n > MAX_USERS || b == 0 || b > MAX_BUFFER {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= N <= {MAX_USERS} and 1 <= buffer <= {MAX_BUFFER}, got N = {n}, buffer = {b}"
        )));
    }
    check_unit("arrival_rate", cfg.arrival_rate)?;
    check_unit("alpha_good", cfg.alpha_good)?;
    let w1 = weights(&cfg.w1, n, 1.0 / n as f64, "w1")?;
    let w2 = weights(&cfg.w2, n, 1.0 / (n * b) as f64, "w2")?;

    let ns = (b + 1).pow(n as u32);
    let na = 1usize << n;
    let lam = cfg.arrival_rate;
    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na];
    for s in 0..ns {
        let queues = decode_state(s, n, b);
        let backlog: f64 = w2.iter().zip(&queues).map(|(w, &q)| w * q as f64).sum();
        for a in 0..na {
            let sender = (a.count_ones() == 1).then(|| a.trailing_zeros() as usize);
            // Post-departure states with their probabilities.
            let mut outcomes = vec![(queues.clone(), 1.0)];
            if let Some(i) = sender {
                reward[s * na + a] = (w1[i] - backlog).clamp(0.0, 1.0);
                if queues[i] > 0 {
                    let mut served = queues.clone();
                    served[i] -= 1;
                    outcomes = vec![(served, cfg.alpha_good), (queues.clone(), 1.0 - cfg.alpha_good)];
                }
            }
            for u in 0..n {
                outcomes = outcomes
                    .into_iter()
                    .flat_map(|(q, p)| {
                        if q[u] < b {
                            let mut grown = q.clone();
                            grown[u] += 1;
                            vec![(grown, p * lam), (q, p * (1.0 - lam))]
                        } else {
                            vec![(q, p)]
                        }
                    })
                    .collect();
            }
            let row = &mut transition[(s * na + a) * ns..(s * na + a + 1) * ns];
            for (q, p) in outcomes {
                row[encode_state(&q, b)] += p;
            }
        }
    }
    let mdp = TabularMdp::new(ns, na, cfg.gamma, transition, reward)?;
    let grouping = GroupingFunction::new((0..na).map(|a| usize::from(a.count_ones() != 1)).collect())?;
    Ok(WirelessAccess { mdp, grouping })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_codec_round_trips() {
        for s in 0..64 {
            assert_eq!(encode_state(&decode_state(s, 3, 3), 3), s);
        }
    }

    #[test]
    fn idle_and_collisions_share_rows() {
        let w = build_wireless_access(&WirelessAccessConfig::new(3, 2, 0.4)).unwrap();
        let m = &w.mdp;
        for s in 0..m.n_states() {
            let idle = m.row(s, 0);
            for a in [0b011, 0b101, 0b110, 0b111] {
                assert_eq!(m.row(s, a), idle);
                assert_eq!(m.r(s, a), 0.0);
            }
        }
    }

    #[test]
    fn idle_slot_only_adds_arrivals() {
        let w = build_wireless_access(&WirelessAccessConfig::new(2, 1, 0.5)).unwrap();
        // Both queues empty: each user independently gains a packet.
        assert_eq!(w.mdp.row(0, 0), &[0.25, 0.25, 0.25, 0.25]);
        // Both full: nothing changes.
        assert_eq!(w.mdp.row(3, 0), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn lone_transmission_serves_with_good_probability() {
        let mut cfg = WirelessAccessConfig::new(2, 1, 0.0);
        cfg.alpha_good = 0.8;
        let w = build_wireless_access(&cfg).unwrap();
        let full = encode_state(&[1, 1], 1);
        let after = encode_state(&[0, 1], 1);
        assert!((w.mdp.p(full, 0b01, after) - 0.8).abs() < 1e-15);
        assert!((w.mdp.p(full, 0b01, full) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn grouping_separates_single_senders() {
        let w = build_wireless_access(&WirelessAccessConfig::new(2, 1, 0.3)).unwrap();
        assert_eq!(w.grouping.assignment(), &[1, 0, 0, 1]);
    }

    #[test]
    fn caps_are_enforced() {
        assert!(build_wireless_access(&WirelessAccessConfig::new(5, 1, 0.3)).is_err());
        assert!(build_wireless_access(&WirelessAccessConfig::new(2, 4, 0.3)).is_err());
        assert!(build_wireless_access(&WirelessAccessConfig::new(4, 3, 0.3)).is_ok());
    }
}
