//! File formats: versioned network JSON, multiplier and price CSVs.
//!
//! Networks are stored with nominal demands; per-period demands are the
//! nominal values scaled by the multiplier of the period. Power-network
//! demands are given in W/var per phase and converted to per-unit on load.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{Instance, InstanceError};
use crate::pdn::{Bus, Line, PdnNetwork, PumpAttachment};
use crate::wdn::{Edge, EdgeKind, Node, NodeKind, PumpCurve, WdnNetwork};

pub const SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum InputError {
    #[error("{path}: cannot read: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

fn parse_err(path: &Path, msg: impl Into<String>) -> InputError {
    InputError::Parse { path: path.to_path_buf(), msg: msg.into() }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, InputError> {
    std::fs::read(path).map_err(|source| InputError::Read { path: path.to_path_buf(), source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusRecord {
    pub id: String,
    /// Present phases, e.g. `"abc"` or `"ac"`.
    pub phases: String,
    /// Nominal real demand per phase (W).
    pub p_demand_w: [f64; 3],
    /// Nominal reactive demand per phase (var).
    pub q_demand_var: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineRecord {
    pub from: String,
    pub to: String,
    /// Real-power coefficient matrix (per-unit).
    pub m: [[f64; 3]; 3],
    /// Reactive-power coefficient matrix (per-unit).
    pub n: [[f64; 3]; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpAttachmentRecord {
    pub pump: String,
    pub bus: String,
    /// Reactive-to-real power ratio of the pump.
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdnFile {
    pub schema: u32,
    pub base_power_va: f64,
    pub substation: String,
    pub substation_voltage_sq: [f64; 3],
    pub v_min: f64,
    pub v_max: f64,
    pub buses: Vec<BusRecord>,
    pub lines: Vec<LineRecord>,
    pub pumps: Vec<PumpAttachmentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservoirRecord {
    pub id: String,
    pub head: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JunctionRecord {
    pub id: String,
    pub elevation: f64,
    pub head_min: f64,
    pub head_max: f64,
    /// Nominal injection (m³/s); consumption is negative.
    pub demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TankRecord {
    pub id: String,
    pub area: f64,
    pub level_min: f64,
    pub level_max: f64,
    pub level_init: f64,
    pub head_min: f64,
    pub head_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipeRecord {
    pub id: String,
    pub from: String,
    pub to: String,
    pub resistance: f64,
    pub flow_min: f64,
    pub flow_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpRecord {
    pub id: String,
    pub from: String,
    pub to: String,
    pub flow_min: f64,
    pub flow_max: f64,
    pub head_slope: f64,
    pub head_offset: f64,
    pub power_slope: f64,
    pub power_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WdnFile {
    pub schema: u32,
    pub reservoirs: Vec<ReservoirRecord>,
    pub junctions: Vec<JunctionRecord>,
    pub tanks: Vec<TankRecord>,
    pub pipes: Vec<PipeRecord>,
    pub pumps: Vec<PumpRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub water: Vec<f64>,
    pub power: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prices {
    /// $/MWh.
    pub energy: Vec<f64>,
    /// $/MWh.
    pub support: Vec<f64>,
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, bytes: &[u8]) -> Result<T, InputError> {
    serde_json::from_slice(bytes).map_err(|e| parse_err(path, e.to_string()))
}

fn check_schema(path: &Path, schema: u32) -> Result<(), InputError> {
    if schema != SCHEMA {
        return Err(parse_err(path, format!("unsupported schema {schema} (expected {SCHEMA})")));
    }
    Ok(())
}

pub fn parse_pdn(path: &Path, bytes: &[u8]) -> Result<PdnFile, InputError> {
    let f: PdnFile = parse_json(path, bytes)?;
    check_schema(path, f.schema)?;
    Ok(f)
}

pub fn parse_wdn(path: &Path, bytes: &[u8]) -> Result<WdnFile, InputError> {
    let f: WdnFile = parse_json(path, bytes)?;
    check_schema(path, f.schema)?;
    Ok(f)
}

fn parse_periodic(path: &Path, bytes: &[u8], columns: [&str; 2], periods: usize) -> Result<[Vec<f64>; 2], InputError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(bytes);
    let headers = rdr.headers().map_err(|e| parse_err(path, e.to_string()))?.clone();
    let expected = ["period", columns[0], columns[1]];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(parse_err(path, format!("header must be {}", expected.join(","))));
    }
    let mut a = vec![f64::NAN; periods];
    let mut b = vec![f64::NAN; periods];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<&str, InputError> {
            rec.get(i).ok_or_else(|| parse_err(path, format!("line {line}: missing field {}", expected[i])))
        };
        let t: usize = field(0)?
            .parse()
            .map_err(|_| parse_err(path, format!("line {line}: field period is not a period index")))?;
        if t >= periods {
            return Err(parse_err(path, format!("line {line}: period {t} is outside the horizon of {periods}")));
        }
        if !a[t].is_nan() {
            return Err(parse_err(path, format!("line {line}: period {t} appears twice")));
        }
        let num = |i: usize| -> Result<f64, InputError> {
            let v: f64 = field(i)?
                .parse()
                .map_err(|_| parse_err(path, format!("line {line}: field {} is not a number", expected[i])))?;
            if !v.is_finite() {
                return Err(parse_err(path, format!("line {line}: field {} is not finite", expected[i])));
            }
            Ok(v)
        };
        a[t] = num(1)?;
        b[t] = num(2)?;
    }
    if let Some(t) = a.iter().position(|v| v.is_nan()) {
        return Err(parse_err(path, format!("period {t} is missing")));
    }
    Ok([a, b])
}

pub fn parse_multipliers(path: &Path, bytes: &[u8], periods: usize) -> Result<Multipliers, InputError> {
    let [water, power] = parse_periodic(path, bytes, ["water", "power"], periods)?;
    Ok(Multipliers { water, power })
}

pub fn parse_prices(path: &Path, bytes: &[u8], periods: usize) -> Result<Prices, InputError> {
    let [energy, support] = parse_periodic(path, bytes, ["energy_price", "support_price"], periods)?;
    Ok(Prices { energy, support })
}

pub fn multipliers_csv(m: &Multipliers) -> String {
    let mut s = String::from("period,water,power\n");
    for (t, (w, p)) in m.water.iter().zip(&m.power).enumerate() {
        s.push_str(&format!("{t},{w:?},{p:?}\n"));
    }
    s
}

pub fn prices_csv(p: &Prices) -> String {
    let mut s = String::from("period,energy_price,support_price\n");
    for (t, (e, v)) in p.energy.iter().zip(&p.support).enumerate() {
        s.push_str(&format!("{t},{e:?},{v:?}\n"));
    }
    s
}

fn parse_phases(id: &str, s: &str) -> Result<[bool; 3], InputError> {
    let mut out = [false; 3];
    for ch in s.chars() {
        let k = match ch {
            'a' => 0,
            'b' => 1,
            'c' => 2,
            _ => return Err(InputError::Invalid(format!("bus {id}: unknown phase {ch:?}"))),
        };
        if out[k] {
            return Err(InputError::Invalid(format!("bus {id}: phase {ch:?} listed twice")));
        }
        out[k] = true;
    }
    Ok(out)
}

impl PdnFile {
    pub fn to_network(&self, power_multipliers: &[f64], dt_hours: f64) -> Result<PdnNetwork, InputError> {
        let index = |id: &str| -> Result<usize, InputError> {
            self.buses
                .iter()
                .position(|b| b.id == id)
                .ok_or_else(|| InputError::Invalid(format!("unknown bus {id:?}")))
        };
        let base = self.base_power_va;
        let mut buses = Vec::with_capacity(self.buses.len());
        for b in &self.buses {
            let phases = parse_phases(&b.id, &b.phases)?;
            for k in 0..3 {
                if !phases[k] && (b.p_demand_w[k] != 0.0 || b.q_demand_var[k] != 0.0) {
                    return Err(InputError::Invalid(format!("bus {}: demand on absent phase", b.id)));
                }
            }
            let scale = |v: [f64; 3], m: f64| [v[0] * m / base, v[1] * m / base, v[2] * m / base];
            buses.push(Bus {
                id: b.id.clone(),
                phases,
                p_demand: power_multipliers.iter().map(|&m| scale(b.p_demand_w, m)).collect(),
                q_demand: power_multipliers.iter().map(|&m| scale(b.q_demand_var, m)).collect(),
            });
        }
        let lines = self
            .lines
            .iter()
            .map(|l| Ok(Line { from: index(&l.from)?, to: index(&l.to)?, m: l.m, n: l.n }))
            .collect::<Result<_, InputError>>()?;
        let pumps = self
            .pumps
            .iter()
            .map(|p| Ok(PumpAttachment { pump: p.pump.clone(), bus: index(&p.bus)?, eta: p.eta }))
            .collect::<Result<_, InputError>>()?;
        Ok(PdnNetwork {
            buses,
            lines,
            substation: index(&self.substation)?,
            substation_voltage_sq: self.substation_voltage_sq,
            pumps,
            v_min: self.v_min,
            v_max: self.v_max,
            base_power_va: base,
            periods: power_multipliers.len(),
            dt_hours,
        })
    }
}

impl WdnFile {
    /// Node order: reservoirs, junctions, tanks. Edge order: pipes, pumps.
    pub fn to_network(&self, water_multipliers: &[f64], dt_hours: f64) -> Result<WdnNetwork, InputError> {
        let periods = water_multipliers.len();
        let mut nodes = Vec::new();
        let mut demands = Vec::new();
        for r in &self.reservoirs {
            nodes.push(Node { id: r.id.clone(), kind: NodeKind::Reservoir { head: r.head } });
            demands.push(vec![0.0; periods]);
        }
        for j in &self.junctions {
            nodes.push(Node {
                id: j.id.clone(),
                kind: NodeKind::Junction { elevation: j.elevation, head_min: j.head_min, head_max: j.head_max },
            });
            demands.push(water_multipliers.iter().map(|m| j.demand * m).collect());
        }
        for t in &self.tanks {
            nodes.push(Node {
                id: t.id.clone(),
                kind: NodeKind::Tank {
                    area: t.area,
                    level_min: t.level_min,
                    level_max: t.level_max,
                    level_init: t.level_init,
                    head_min: t.head_min,
                    head_max: t.head_max,
                },
            });
            demands.push(vec![0.0; periods]);
        }
        let index = |id: &str| -> Result<usize, InputError> {
            nodes.iter().position(|n| n.id == id).ok_or_else(|| InputError::Invalid(format!("unknown node {id:?}")))
        };
        let mut edges = Vec::new();
        for p in &self.pipes {
            edges.push(Edge {
                id: p.id.clone(),
                from: index(&p.from)?,
                to: index(&p.to)?,
                flow_min: p.flow_min,
                flow_max: p.flow_max,
                kind: EdgeKind::Pipe { resistance: p.resistance },
            });
        }
        for p in &self.pumps {
            edges.push(Edge {
                id: p.id.clone(),
                from: index(&p.from)?,
                to: index(&p.to)?,
                flow_min: p.flow_min,
                flow_max: p.flow_max,
                kind: EdgeKind::Pump(PumpCurve {
                    head_slope: p.head_slope,
                    head_offset: p.head_offset,
                    power_slope: p.power_slope,
                    power_offset: p.power_offset,
                }),
            });
        }
        let mut ids: Vec<&str> = edges.iter().map(|e| e.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(InputError::Invalid(format!("duplicate link id {:?}", w[0])));
        }
        Ok(WdnNetwork { nodes, edges, demands, periods, dt_hours })
    }
}

/// Everything read for one case.
#[derive(Debug, Clone)]
pub struct CaseData {
    pub pdn: PdnFile,
    pub wdn: WdnFile,
    pub multipliers: Multipliers,
    pub prices: Prices,
}

impl CaseData {
    pub fn instance(&self, dt_hours: f64) -> Result<Instance, InputError> {
        let pdn = self.pdn.to_network(&self.multipliers.power, dt_hours)?;
        let wdn = self.wdn.to_network(&self.multipliers.water, dt_hours)?;
        Ok(Instance::new(pdn, wdn)?)
    }
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_csv_round_trip() {
        let m = Multipliers { water: vec![0.5, 1.25], power: vec![1.0, 0.1] };
        let text = multipliers_csv(&m);
        assert_eq!(parse_multipliers(Path::new("m.csv"), text.as_bytes(), 2).unwrap(), m);
    }

    #[test]
    fn periodic_csv_errors_name_line_and_field() {
        let p = Path::new("prices.csv");
        let e = parse_prices(p, b"period,energy_price,support_price\n0,1,2\n1,x,2\n", 2).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("prices.csv") && msg.contains("line 3") && msg.contains("energy_price"), "{msg}");
        let e = parse_prices(p, b"period,energy_price,support_price\n0,1,2\n", 2).unwrap_err();
        assert!(e.to_string().contains("period 1 is missing"));
        let e = parse_prices(p, b"period,energy,support_price\n0,1,2\n", 1).unwrap_err();
        assert!(e.to_string().contains("header"));
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = br#"{"schema":1,"reservoirs":[],"junctions":[],"tanks":[],"pipes":[],"pumps":[],"extra":1}"#;
        let e = parse_wdn(Path::new("w.json"), text).unwrap_err();
        assert!(e.to_string().contains("extra"));
        let text = br#"{"schema":2,"reservoirs":[],"junctions":[],"tanks":[],"pipes":[],"pumps":[]}"#;
        assert!(parse_wdn(Path::new("w.json"), text).unwrap_err().to_string().contains("schema"));
    }

    #[test]
    fn phases_parse() {
        assert_eq!(parse_phases("x", "ac").unwrap(), [true, false, true]);
        assert!(parse_phases("x", "ad").is_err());
        assert!(parse_phases("x", "aa").is_err());
    }
}
