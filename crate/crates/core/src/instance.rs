//! A coupled case: the distribution network, the water network, and the
//! pump correspondence between them.

use thiserror::Error;

use crate::pdn::{build_voltage_map, PdnError, PdnNetwork, VoltageAffineMap};
use crate::wdn::{WdnError, WdnNetwork};

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("power network: {0}")]
    Pdn(#[from] PdnError),
    #[error("water network: {0}")]
    Wdn(#[from] WdnError),
    #[error("{0}")]
    Mismatch(String),
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub pdn: PdnNetwork,
    pub wdn: WdnNetwork,
    /// Water-network edge of each power-network pump attachment, in attachment order.
    pub pump_edges: Vec<usize>,
    pub map: VoltageAffineMap,
}

impl Instance {
    pub fn new(pdn: PdnNetwork, wdn: WdnNetwork) -> Result<Self, InstanceError> {
        wdn.check()?;
        let map = build_voltage_map(&pdn)?;
        if pdn.periods != wdn.periods {
            return Err(InstanceError::Mismatch(format!(
                "power network has {} periods, water network {}",
                pdn.periods, wdn.periods
            )));
        }
        if pdn.dt_hours != wdn.dt_hours {
            return Err(InstanceError::Mismatch(format!(
                "period length differs: {} h vs {} h",
                pdn.dt_hours, wdn.dt_hours
            )));
        }
        let mut pump_edges = Vec::with_capacity(pdn.pumps.len());
        for att in &pdn.pumps {
            let edge = wdn
                .edges
                .iter()
                .position(|e| e.id == att.pump && e.pump().is_some())
                .ok_or_else(|| InstanceError::Mismatch(format!("pump {:?} is not a pump of the water network", att.pump)))?;
            if pump_edges.contains(&edge) {
                return Err(InstanceError::Mismatch(format!("pump {:?} is attached twice", att.pump)));
            }
            pump_edges.push(edge);
        }
        for e in wdn.pumps() {
            if !pump_edges.contains(&e) {
                return Err(InstanceError::Mismatch(format!(
                    "water pump {:?} has no electrical attachment",
                    wdn.edges[e].id
                )));
            }
        }
        Ok(Instance { pdn, wdn, pump_edges, map })
    }

    pub fn n_pumps(&self) -> usize {
        self.pump_edges.len()
    }

    pub fn periods(&self) -> usize {
        self.pdn.periods
    }

    pub fn dt_hours(&self) -> f64 {
        self.pdn.dt_hours
    }

    pub fn base_power(&self) -> f64 {
        self.pdn.base_power_va
    }

    /// Error coordinates per period.
    pub fn n_t(&self) -> usize {
        self.map.n_t()
    }

    pub fn n_errors(&self) -> usize {
        self.map.n_errors()
    }

    pub fn pump_ids(&self) -> Vec<String> {
        self.pump_edges.iter().map(|&e| self.wdn.edges[e].id.clone()).collect()
    }

    /// Voltage rows that carry limits (all but the substation's).
    pub fn limited_rows(&self) -> Vec<usize> {
        (0..self.map.n_rows()).filter(|&r| self.map.rows[r].bus != self.pdn.substation).collect()
    }

    /// Single-phase power limits of pump `e` (W) implied by its flow bounds.
    pub fn pump_power_limits(&self, e: usize) -> (f64, f64) {
        self.wdn.pump_power_range(self.pump_edges[e]).expect("pump edge")
    }

    /// Single-phase pump powers in W, `[pump][t]` in water-network pump order,
    /// from attachment-ordered values.
    pub fn to_water_order(&self, p: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.wdn
            .pumps()
            .iter()
            .map(|edge| {
                let k = self.pump_edges.iter().position(|e| e == edge).expect("attached pump");
                p[k].clone()
            })
            .collect()
    }
}
