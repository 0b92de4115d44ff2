//! The shipped analog case: a 13-bus unbalanced feeder with one pump at bus
//! 675, and a looped nine-junction water network fed from a reservoir through
//! that pump with one tank.
//!
//! Feeder topology, line configurations and spot loads follow the standard
//! 13-bus test feeder; the regulator is replaced by a fixed substation voltage
//! and the transformer by a series impedance. Water topology follows the
//! EPANET Net1 layout in SI units with demands scaled up so the pump is a
//! sizeable load.

use std::path::Path;

use crate::io::{
    self, BusRecord, CaseData, JunctionRecord, LineRecord, Multipliers, PdnFile, PipeRecord, Prices,
    PumpAttachmentRecord, PumpRecord, ReservoirRecord, TankRecord, WdnFile, SCHEMA,
};

pub const BASE_POWER_VA: f64 = 5e6;
pub const BASE_VOLTAGE_V: f64 = 4160.0;
const FEET_PER_MILE: f64 = 5280.0;

type C = (f64, f64);

/// Phase-impedance matrices in Ω/mile (upper triangle, zeros for absent phases).
fn config(id: u32) -> [[C; 3]; 3] {
    let z = (0.0, 0.0);
    let sym = |a: C, b: C, c: C, ab: C, ac: C, bc: C| [[a, ab, ac], [ab, b, bc], [ac, bc, c]];
    match id {
        601 => sym((0.3465, 1.0179), (0.3375, 1.0478), (0.3414, 1.0348), (0.1560, 0.5017), (0.1580, 0.4236), (0.1535, 0.3849)),
        602 => sym((0.7526, 1.1814), (0.7475, 1.1983), (0.7436, 1.2112), (0.1580, 0.4236), (0.1560, 0.5017), (0.1535, 0.3849)),
        603 => sym(z, (1.3294, 1.3471), (1.3238, 1.3569), z, z, (0.2066, 0.4591)),
        604 => sym((1.3238, 1.3569), z, (1.3294, 1.3471), z, (0.2066, 0.4591), z),
        605 => sym(z, z, (1.3292, 1.3475), z, z, z),
        606 => sym((0.7982, 0.4463), (0.7891, 0.4041), (0.7982, 0.4463), (0.3192, 0.0328), (0.2849, -0.0143), (0.3192, 0.0328)),
        607 => sym((1.3425, 0.5124), z, z, z, z, z),
        _ => unreachable!("unknown line configuration"),
    }
}

/// `M = 2 Re(Γ∘Z)`, `N = 2 Im(Γ∘Z)` for a per-unit phase impedance `z`, with
/// `Γ[φ][ψ] = α^(ψ−φ)` and `α = exp(−j2π/3)`.
pub fn sensitivity_matrices(z: &[[C; 3]; 3]) -> ([[f64; 3]; 3], [[f64; 3]; 3]) {
    let mut m = [[0.0; 3]; 3];
    let mut n = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let k = (b as i32 - a as i32).rem_euclid(3) as f64;
            let ang = -2.0 * std::f64::consts::PI / 3.0 * k;
            let (g_re, g_im) = (ang.cos(), ang.sin());
            let (r, x) = z[a][b];
            m[a][b] = 2.0 * (g_re * r - g_im * x);
            n[a][b] = 2.0 * (g_re * x + g_im * r);
        }
    }
    (m, n)
}

fn line(from: &str, to: &str, z: [[C; 3]; 3]) -> LineRecord {
    let (m, n) = sensitivity_matrices(&z);
    LineRecord { from: from.into(), to: to.into(), m, n }
}

fn overhead(from: &str, to: &str, cfg: u32, feet: f64) -> LineRecord {
    let z_base = BASE_VOLTAGE_V * BASE_VOLTAGE_V / BASE_POWER_VA;
    let s = feet / FEET_PER_MILE / z_base;
    let z = config(cfg).map(|row| row.map(|(r, x)| (r * s, x * s)));
    line(from, to, z)
}

fn series(from: &str, to: &str, phases: [bool; 3], r: f64, x: f64) -> LineRecord {
    let mut z = [[(0.0, 0.0); 3]; 3];
    for k in 0..3 {
        if phases[k] {
            z[k][k] = (r, x);
        }
    }
    line(from, to, z)
}

fn bus(id: &str, phases: &str, p_kw: [f64; 3], q_kvar: [f64; 3]) -> BusRecord {
    BusRecord {
        id: id.into(),
        phases: phases.into(),
        p_demand_w: p_kw.map(|v| v * 1e3),
        q_demand_var: q_kvar.map(|v| v * 1e3),
    }
}

/// Tunable parameters of the analog.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalogParams {
    pub substation_voltage: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub support_price: f64,
}

impl Default for AnalogParams {
    fn default() -> Self {
        AnalogParams { substation_voltage: 0.995, v_min: 0.95, v_max: 1.05, support_price: 5.0 }
    }
}

pub const PERIODS: usize = 12;

pub fn analog_pdn(params: &AnalogParams) -> PdnFile {
    let abc = [true; 3];
    let buses = vec![
        bus("650", "abc", [0.0; 3], [0.0; 3]),
        // distributed 632-671 load lumped here
        bus("632", "abc", [17.0, 66.0, 117.0], [10.0, 38.0, 68.0]),
        bus("633", "abc", [0.0; 3], [0.0; 3]),
        bus("634", "abc", [160.0, 120.0, 120.0], [110.0, 90.0, 90.0]),
        bus("645", "bc", [0.0, 170.0, 0.0], [0.0, 125.0, 0.0]),
        bus("646", "bc", [0.0, 230.0, 0.0], [0.0, 132.0, 0.0]),
        bus("671", "abc", [385.0, 385.0, 385.0], [220.0, 220.0, 220.0]),
        bus("680", "abc", [0.0; 3], [0.0; 3]),
        bus("684", "ac", [0.0; 3], [0.0; 3]),
        // capacitor banks netted into reactive demand
        bus("611", "c", [0.0, 0.0, 170.0], [0.0, 0.0, -20.0]),
        bus("652", "a", [128.0, 0.0, 0.0], [86.0, 0.0, 0.0]),
        bus("692", "abc", [0.0, 0.0, 170.0], [0.0, 0.0, 151.0]),
        bus("675", "abc", [485.0, 68.0, 290.0], [-10.0, -140.0, 12.0]),
    ];
    let lines = vec![
        overhead("650", "632", 601, 2000.0),
        overhead("632", "633", 602, 500.0),
        // 500 kVA transformer, 1.1 % + j2 % on its own base
        series("633", "634", abc, 0.011 * BASE_POWER_VA / 500e3, 0.02 * BASE_POWER_VA / 500e3),
        overhead("632", "645", 603, 500.0),
        overhead("645", "646", 603, 300.0),
        overhead("632", "671", 601, 2000.0),
        overhead("671", "684", 604, 300.0),
        overhead("684", "611", 605, 300.0),
        overhead("684", "652", 607, 800.0),
        overhead("671", "680", 601, 1000.0),
        // closed switch
        series("671", "692", abc, 1e-5, 1e-5),
        overhead("692", "675", 606, 500.0),
    ];
    let y0 = params.substation_voltage * params.substation_voltage;
    PdnFile {
        schema: SCHEMA,
        base_power_va: BASE_POWER_VA,
        substation: "650".into(),
        substation_voltage_sq: [y0; 3],
        v_min: params.v_min,
        v_max: params.v_max,
        buses,
        lines,
        pumps: vec![PumpAttachmentRecord { pump: "9".into(), bus: "675".into(), eta: 0.4 }],
    }
}

pub fn analog_wdn() -> WdnFile {
    const GPM: f64 = 6.309e-5;
    const SCALE: f64 = 4.0;
    const PRESSURE_MIN: f64 = 10.0;
    const PRESSURE_MAX: f64 = 150.0;
    let junction = |id: &str, elevation: f64, gpm: f64| JunctionRecord {
        id: id.into(),
        elevation,
        head_min: elevation + PRESSURE_MIN,
        head_max: elevation + PRESSURE_MAX,
        demand: -gpm * GPM * SCALE,
    };
    let junctions = vec![
        junction("10", 0.0, 0.0),
        junction("11", 0.0, 150.0),
        junction("12", -3.0, 150.0),
        junction("13", -4.5, 100.0),
        junction("21", -3.0, 150.0),
        junction("22", -4.5, 200.0),
        junction("23", -6.0, 150.0),
        junction("31", -3.0, 100.0),
        junction("32", 0.0, 100.0),
    ];
    let pipe = |id: &str, from: &str, to: &str, k: f64| PipeRecord {
        id: id.into(),
        from: from.into(),
        to: to.into(),
        resistance: k,
        flow_min: -0.8,
        flow_max: 0.8,
    };
    let pipes = vec![
        pipe("10", "10", "11", 30.0),
        pipe("11", "11", "12", 150.0),
        pipe("12", "12", "13", 300.0),
        pipe("21", "21", "22", 300.0),
        pipe("22", "22", "23", 300.0),
        pipe("31", "31", "32", 400.0),
        pipe("110", "2", "12", 20.0),
        pipe("111", "11", "21", 150.0),
        pipe("112", "12", "22", 300.0),
        pipe("113", "13", "23", 400.0),
        pipe("121", "21", "31", 300.0),
        pipe("122", "22", "32", 400.0),
    ];
    WdnFile {
        schema: SCHEMA,
        reservoirs: vec![ReservoirRecord { id: "9".into(), head: 0.0 }],
        junctions,
        tanks: vec![TankRecord {
            id: "2".into(),
            area: 600.0,
            level_min: 1.0,
            level_max: 9.0,
            level_init: 4.0,
            head_min: 0.0,
            head_max: 200.0,
        }],
        pipes,
        pumps: vec![PumpRecord {
            id: "9".into(),
            from: "9".into(),
            to: "10".into(),
            flow_min: 0.1,
            flow_max: 0.6,
            head_slope: -40.0,
            head_offset: 80.0,
            power_slope: 6.6e5,
            power_offset: 4.5e4,
        }],
    }
}

/// Periods are the hours 7:00 to 18:00.
pub fn analog_multipliers() -> Multipliers {
    Multipliers {
        water: vec![1.1, 1.2, 1.15, 1.05, 1.0, 0.95, 0.95, 0.9, 0.9, 0.95, 1.0, 1.05],
        power: vec![1.0, 1.05, 0.95, 0.85, 0.8, 0.8, 0.85, 0.9, 0.95, 1.0, 1.0, 0.95],
    }
}

pub fn analog_prices(params: &AnalogParams) -> Prices {
    Prices {
        energy: vec![22.0, 25.0, 28.0, 32.0, 36.0, 40.0, 45.0, 52.0, 60.0, 66.0, 62.0, 50.0],
        support: vec![params.support_price; PERIODS],
    }
}

pub fn analog_case(params: &AnalogParams) -> CaseData {
    CaseData {
        pdn: analog_pdn(params),
        wdn: analog_wdn(),
        multipliers: analog_multipliers(),
        prices: analog_prices(params),
    }
}

/// A two-bus feeder and a reservoir-pump-junction water network, optionally
/// with a tank hanging off the junction.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyParams {
    /// Junction consumption per period (m³/s, nonnegative).
    pub demand: Vec<f64>,
    pub energy_price: Vec<f64>,
    pub support_price: f64,
    /// Per-phase real load at the pump bus (W).
    pub load_w: f64,
    pub flow_min: f64,
    pub flow_max: f64,
    pub power_slope: f64,
    pub power_offset: f64,
    pub tank: bool,
}

impl Default for ToyParams {
    fn default() -> Self {
        ToyParams {
            demand: vec![0.1, 0.2],
            energy_price: vec![30.0, 60.0],
            support_price: 5.0,
            load_w: 50e3,
            flow_min: 0.0,
            flow_max: 0.5,
            power_slope: 2e5,
            power_offset: 1e4,
            tank: false,
        }
    }
}

pub fn toy_case(p: &ToyParams) -> CaseData {
    let periods = p.demand.len();
    let diag = |v: f64| [[v, 0.0, 0.0], [0.0, v, 0.0], [0.0, 0.0, v]];
    let pdn = PdnFile {
        schema: SCHEMA,
        base_power_va: 1e6,
        substation: "s".into(),
        substation_voltage_sq: [1.0; 3],
        v_min: 0.9,
        v_max: 1.1,
        buses: vec![bus("s", "abc", [0.0; 3], [0.0; 3]), bus("b", "abc", [p.load_w / 1e3; 3], [0.0; 3])],
        lines: vec![LineRecord { from: "s".into(), to: "b".into(), m: diag(0.02), n: diag(0.02) }],
        pumps: vec![PumpAttachmentRecord { pump: "P".into(), bus: "b".into(), eta: 0.0 }],
    };
    let mut pipes = Vec::new();
    let mut tanks = Vec::new();
    if p.tank {
        tanks.push(TankRecord {
            id: "T".into(),
            area: 1000.0,
            level_min: 0.0,
            level_max: 10.0,
            level_init: 5.0,
            head_min: -100.0,
            head_max: 200.0,
        });
        pipes.push(PipeRecord {
            id: "L".into(),
            from: "J".into(),
            to: "T".into(),
            resistance: 1.0,
            flow_min: -1.0,
            flow_max: 1.0,
        });
    }
    let wdn = WdnFile {
        schema: SCHEMA,
        reservoirs: vec![ReservoirRecord { id: "R".into(), head: 0.0 }],
        junctions: vec![JunctionRecord { id: "J".into(), elevation: 0.0, head_min: -100.0, head_max: 200.0, demand: -1.0 }],
        tanks,
        pipes,
        pumps: vec![PumpRecord {
            id: "P".into(),
            from: "R".into(),
            to: "J".into(),
            flow_min: p.flow_min,
            flow_max: p.flow_max,
            head_slope: -10.0,
            head_offset: 50.0,
            power_slope: p.power_slope,
            power_offset: p.power_offset,
        }],
    };
    CaseData {
        pdn,
        wdn,
        multipliers: Multipliers { water: p.demand.clone(), power: vec![1.0; periods] },
        prices: Prices { energy: p.energy_price.clone(), support: vec![p.support_price; periods] },
    }
}

/// The three shipped experiment configurations: heavy-tailed errors at two
/// scales and a global-plus-nodal normal model.
pub fn analog_configs() -> Vec<(&'static str, String)> {
    let dist = [
        ("case_a", "variant = \"truncated-mv-t\"\ndof = 3.0\ncorrelation = 0.2\nalpha = 0.08\n", "1e-4"),
        ("case_b", "variant = \"truncated-mv-t\"\ndof = 3.0\ncorrelation = 0.2\nalpha = 0.015\n", "1e-4"),
        ("case_c", "variant = \"truncated-mv-normal\"\nsigma_global = 0.0101\nsigma_node = 0.0398\n", "1e-4"),
    ];
    dist.iter()
        .map(|(name, d, eps)| {
            let text = format!(
                "output_dir = \"out/{name}\"\n\n[case]\npdn = \"pdn.json\"\nwdn = \"wdn.json\"\nmultipliers = \"multipliers.csv\"\nprices = \"prices.csv\"\n\
                 periods = {PERIODS}\ndt_hours = 1.0\n\n\
                 [formulation]\nmode = \"probabilistic\"\neps_p = {eps}\neps_w = {eps}\nfinal_tank = true\nbox_scale = 1.0\n\n\
                 [distribution]\n{d}\n\
                 [samples]\nfit = 500\nrobust = 2000\nevaluation = 50000\n\n\
                 [seeds]\nfit = 1\nrobust = 2\nevaluation = 3\n\n\
                 [sweep]\neps = [[0.1, 0.1], [0.05, 0.05], [0.01, 0.01], [0.001, 0.001], [0.0001, 0.0001]]\n"
            );
            (*name, text)
        })
        .collect()
}

/// Every shipped file of the analog case as `(file name, contents)`.
pub fn analog_files(params: &AnalogParams) -> Vec<(String, String)> {
    let case = analog_case(params);
    let mut files = vec![
        ("pdn.json".to_string(), serde_json::to_string_pretty(&case.pdn).unwrap() + "\n"),
        ("wdn.json".to_string(), serde_json::to_string_pretty(&case.wdn).unwrap() + "\n"),
        ("multipliers.csv".to_string(), io::multipliers_csv(&case.multipliers)),
        ("prices.csv".to_string(), io::prices_csv(&case.prices)),
    ];
    for (name, text) in analog_configs() {
        files.push((format!("{name}.toml"), text));
    }
    files
}

pub fn write_analog(dir: &Path, params: &AnalogParams) -> std::io::Result<()> {
    for (name, text) in analog_files(params) {
        io::write_atomic(&dir.join(name), text.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_sensitivities_are_twice_the_impedance() {
        let mut z = [[(0.0, 0.0); 3]; 3];
        z[1][1] = (0.3, 0.7);
        let (m, n) = sensitivity_matrices(&z);
        assert!((m[1][1] - 0.6).abs() < 1e-15 && (n[1][1] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn mutual_coupling_rotates_by_phase_angle() {
        // Z_ab = j1: Γ_ab = α, so Γ_ab Z_ab = j·(−1/2 − j√3/2) = √3/2 − j/2
        let mut z = [[(0.0, 0.0); 3]; 3];
        z[0][1] = (0.0, 1.0);
        let (m, n) = sensitivity_matrices(&z);
        assert!((m[0][1] - 3f64.sqrt()).abs() < 1e-12);
        assert!((n[0][1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn analog_builds() {
        let case = analog_case(&AnalogParams::default());
        let inst = case.instance(1.0).unwrap();
        assert_eq!(inst.periods(), PERIODS);
        assert_eq!(inst.n_pumps(), 1);
        assert_eq!(inst.pdn.buses.len(), 13);
    }
}
